"""Pareto-smoothed importance-sampling leave-one-out model comparison.

Works from the pointwise log-likelihood matrix persisted per retained
draw: raw importance ratios 1/p(y_i | draw) are tail-smoothed by a fitted
generalized Pareto distribution, giving the LOO expected log predictive
density, its standard error, and per-unit Pareto shape diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import logsumexp


def _gpd_fit(x):
    """Method-of-profile-likelihood generalized Pareto fit (shape k,
    scale sigma) for exceedances x sorted ascending, with the weak shape
    prior used for importance-weight tails."""
    n = x.shape[0]
    prior_bs = 3.0
    m = 30 + int(math.sqrt(n))
    jj = np.arange(1, m + 1, dtype=float)
    xstar = x[int(n / 4 + 0.5) - 1] if n >= 4 else x[0]
    bs = 1.0 / x[-1] + (1.0 - np.sqrt(m / (jj - 0.5))) / (prior_bs * xstar)
    ks = np.mean(np.log1p(np.outer(-bs, x)), axis=1)  # shape per candidate
    L = n * (np.log(-bs / ks) - ks - 1.0)
    w = np.exp(L - L.max())
    b = float(np.sum(bs * w) / np.sum(w))
    k = float(np.mean(np.log1p(-b * x)))
    sigma = -k / b
    # weakly informative shape regularization toward 1/2
    k = (n * k + 5.0) / (n + 10.0)
    return k, sigma


def psis_smooth(log_ratios):
    """Smooth one unit's log importance ratios in place-free fashion.

    Returns (smoothed log weights, pareto k); weights are unnormalized.
    """
    lw = np.asarray(log_ratios, dtype=float).copy()
    B = lw.shape[0]
    lw -= lw.max()
    n_tail = min(int(0.2 * B), int(3.0 * math.sqrt(B)))
    if n_tail < 5:
        return lw, float("-inf")
    order = np.argsort(lw)
    tail_idx = order[-n_tail:]
    cutoff = lw[order[-n_tail - 1]]
    exceed = np.exp(lw[tail_idx]) - math.exp(cutoff)
    eps = np.finfo(float).eps
    if exceed.max() <= eps or np.unique(exceed).size < 5:
        return lw, float("-inf")
    exceed = np.maximum(exceed, eps)
    k, sigma = _gpd_fit(np.sort(exceed))
    if not math.isfinite(k):
        return lw, float("inf")
    # replace the tail by expected order statistics of the fitted GPD
    probs = (np.arange(1, n_tail + 1) - 0.5) / n_tail
    if abs(k) < 1e-12:
        quant = -sigma * np.log1p(-probs)
    else:
        quant = sigma / k * (np.power(1.0 - probs, -k) - 1.0)
    smoothed = np.log(quant + math.exp(cutoff))
    rank = np.argsort(lw[tail_idx])
    lw[tail_idx[rank]] = np.minimum(smoothed, 0.0)
    return lw, k


@dataclass
class LooResult:
    elpd: float
    se: float
    p_loo: float
    looic: float
    looic_se: float
    pointwise: np.ndarray
    pareto_k: np.ndarray
    n_units: int
    n_draws: int

    def summary(self):
        return {
            "elpd_loo": self.elpd,
            "se": self.se,
            "p_loo": self.p_loo,
            "looic": self.looic,
            "looic_se": self.looic_se,
            "max_pareto_k": float(np.max(self.pareto_k)),
        }


def psis_loo(pointwise_loglik):
    """PSIS-LOO from a (draws, units) pointwise log-likelihood matrix."""
    ll = np.asarray(pointwise_loglik, dtype=float)
    if ll.ndim != 2:
        raise ValueError("pointwise log likelihood must be (draws, units)")
    B, n = ll.shape
    elpd_i = np.empty(n)
    k_i = np.empty(n)
    for i in range(n):
        lw, k = psis_smooth(-ll[:, i])
        lw -= logsumexp(lw)
        elpd_i[i] = logsumexp(lw + ll[:, i])
        k_i[i] = k
    lpd_i = logsumexp(ll, axis=0) - math.log(B)
    elpd = float(elpd_i.sum())
    se = float(math.sqrt(n * np.var(elpd_i, ddof=1)))
    p_loo = float((lpd_i - elpd_i).sum())
    return LooResult(
        elpd=elpd,
        se=se,
        p_loo=p_loo,
        looic=-2.0 * elpd,
        looic_se=2.0 * se,
        pointwise=elpd_i,
        pareto_k=k_i,
        n_units=n,
        n_draws=B,
    )


def loo_compare(results):
    """LOOIC comparison table for named models on identical unit sets."""
    sizes = {name: r.n_units for name, r in results.items()}
    if len(set(sizes.values())) > 1:
        raise ValueError(f"models were scored on different unit sets: {sizes}")
    rows = []
    best = max(results.values(), key=lambda r: r.elpd)
    for name, r in results.items():
        diff = r.elpd - best.elpd
        diff_se = 0.0
        if r is not best:
            d = r.pointwise - best.pointwise
            diff_se = float(math.sqrt(len(d) * np.var(d, ddof=1)))
        rows.append(
            {
                "model": name,
                "looic": r.looic,
                "looic_se": r.looic_se,
                "elpd_loo": r.elpd,
                "p_loo": r.p_loo,
                "elpd_diff": diff,
                "diff_se": diff_se,
                "max_pareto_k": float(np.max(r.pareto_k)),
            }
        )
    return pd.DataFrame(rows).sort_values("looic").reset_index(drop=True)
