"""Benchmark the coarsened-likelihood kernel backends.

Builds a synthetic compiled dataset of the usual shape (binary covariate,
30 domains, scenario-style heaping) and times likelihood / gradient /
pointwise evaluations under every available backend.
"""

from __future__ import annotations

import time

import numpy as np
import pandas as pd
from scipy.special import expit

from ._backend import available_backends, load_backend
from .coarsening import HeapingParams, coarsen_values, heaping_probs_discrete
from .likelihood import IntensityData, lam_tables
from .sampler import chain_rng


def _synthetic_data(n_units, seed):
    rng = chain_rng(seed, 77)
    D = 30
    dom = rng.integers(0, D, n_units)
    x = rng.binomial(1, 0.4, n_units).astype(float)
    comp = rng.uniform(size=n_units) < expit(0.4 + 0.2 * x)
    mu = np.where(comp, 1.7, 2.7) + 0.05 * x + rng.normal(0, 0.25, D)[dom]
    z = np.exp(rng.normal(mu, np.where(comp, 0.5, 0.25)))
    gamma = HeapingParams.full(7.0, 9.7, -3.4)
    probs = heaping_probs_discrete(z, gamma)
    levels = np.array([1, 5, 10])[(rng.uniform(size=n_units)[:, None] > np.cumsum(probs, axis=1)[:, :-1]).sum(axis=1)]
    zstar = coarsen_values(z, levels)
    data = IntensityData.build(dom, x[:, None], zstar, "full", D)
    return data, gamma


def run_benchmark(n_units=900, repeats=200, seed=0):
    """Time each backend; returns a table with microseconds per call."""
    data, gamma = _synthetic_data(n_units, seed)
    P = data.n_patterns
    rng = chain_rng(seed, 78)
    mu1 = rng.normal(1.8, 0.2, P)
    mu2 = mu1 + 1.0
    pi = expit(rng.normal(0.4, 0.2, P))
    lam, dlam = lam_tables(gamma, want_grad=True)

    rows = []
    reference = None
    for name in available_backends():
        kern = load_backend(name)
        variants = {
            "loglik": dict(dlam=None, want_pointwise=False),
            "loglik+grad": dict(dlam=dlam, want_pointwise=False),
            "loglik+pointwise": dict(dlam=None, want_pointwise=True),
        }
        for variant, kw in variants.items():
            kern.coarsened_eval(data, mu1, mu2, pi, 0.5, 0.25, lam, **kw)  # warm up
            t0 = time.perf_counter()
            for _ in range(repeats):
                out = kern.coarsened_eval(data, mu1, mu2, pi, 0.5, 0.25, lam, **kw)
            per_call = (time.perf_counter() - t0) / repeats * 1e6
            rows.append(
                {
                    "backend": name,
                    "variant": variant,
                    "n_units": n_units,
                    "patterns": P,
                    "terms": int(data.term_q0.shape[0]),
                    "us_per_call": round(per_call, 1),
                    "total": out[0],
                }
            )
            if variant == "loglik+grad":
                if reference is None:
                    reference = out[0]
                elif abs(out[0] - reference) > 1e-8 * abs(reference):
                    raise AssertionError(f"backends disagree: {out[0]} vs {reference}")
    table = pd.DataFrame(rows)
    base = table.groupby("variant")["us_per_call"].transform("max")
    table["speedup_vs_slowest"] = (base / table["us_per_call"]).round(2)
    return table
