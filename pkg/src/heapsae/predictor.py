"""Posterior predictive generation and hierarchical-Bayes domain
estimators for the three target indicators.

Domain indicators combine observed sample values with predictive draws
for the rest of the population: participation enters through observed w
for sampled units and Bernoulli predictions for unsampled ones, while the
intensity always uses fresh latent draws (reported values are coarsened,
so sampled units get predictive intensities too).  Generation streams
over covariate patterns within a domain and never materializes the
(population x draws) matrix; each domain owns a counter-based RNG stream
keyed by (seed, purpose, domain), making results independent of how
domains are scheduled across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .coarsening import CENSORED_VALUE, FULL, REDUCED, TOP_CODE, coarsen_values
from .sampler import chain_rng

#: heavy-smoker threshold on the latent intensity scale
HS_THRESHOLD = 20.0

_REALM_W, _REALM_Z, _REALM_PPC = 101, 102, 103

WBAR, ZBAR, HSBAR = "wbar", "zbar", "hsbar"


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    sd: float
    q05: float
    q95: float


def summarize(draws):
    """Posterior mean, sd and central 90% interval of a draw vector.

    Quantiles use linear interpolation between order statistics.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.size == 0:
        raise ValueError("no draws to summarize")
    if draws.size < 2:
        raise ValueError("need at least two draws")
    q05, q95 = np.quantile(draws, [0.05, 0.95])
    return PosteriorSummary(
        mean=float(draws.mean()),
        sd=float(draws.std(ddof=1)),
        q05=float(q05),
        q95=float(q95),
    )


@dataclass
class DomainEstimate:
    """Per-domain posterior draws and summaries for one indicator."""

    domain: int
    indicator: str
    draws: np.ndarray
    point: float
    sd: float
    ci90: tuple

    @classmethod
    def from_draws(cls, domain, indicator, draws):
        s = summarize(draws)
        return cls(
            domain=domain,
            indicator=indicator,
            draws=np.asarray(draws, dtype=float),
            point=s.mean,
            sd=s.sd,
            ci90=(s.q05, s.q95),
        )


@dataclass
class PopulationFrame:
    """Population covariates by domain, possibly compressed to
    (domain, covariate pattern, count) rows."""

    domain: np.ndarray
    X: np.ndarray
    count: np.ndarray
    n_domains: int

    def __post_init__(self):
        self.domain = np.asarray(self.domain, dtype=np.int64)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.count = np.asarray(self.count, dtype=np.int64)
        if np.any((self.domain < 0) | (self.domain >= self.n_domains)):
            raise ValueError("frame domain outside the declared range")
        if np.any(self.count < 0):
            raise ValueError("negative frame count")

    @classmethod
    def from_units(cls, domain, X, n_domains):
        domain = np.asarray(domain)
        return cls(domain=domain, X=X, count=np.ones(domain.shape[0], dtype=np.int64), n_domains=n_domains)

    def sizes(self):
        return np.bincount(self.domain, weights=self.count, minlength=self.n_domains).astype(np.int64)

    def compress(self):
        key = np.column_stack([self.domain.astype(float), self.X])
        rows, inv = np.unique(key, axis=0, return_inverse=True)
        counts = np.bincount(inv.ravel(), weights=self.count).astype(np.int64)
        return PopulationFrame(
            domain=rows[:, 0].astype(np.int64), X=rows[:, 1:], count=counts, n_domains=self.n_domains
        )


def frame_remainder(frame: PopulationFrame, sample_domain, sample_X):
    """Frame minus the sampled units, matched on (domain, pattern).

    Raises ValueError when a sampled pattern exceeds its frame count
    (frame/sample inconsistency).
    """
    comp = frame.compress()
    key_frame = np.column_stack([comp.domain.astype(float), comp.X])
    key_sample = np.column_stack([np.asarray(sample_domain, dtype=float), np.atleast_2d(np.asarray(sample_X, dtype=float))])
    all_rows, inv = np.unique(np.vstack([key_frame, key_sample]), axis=0, return_inverse=True)
    inv = inv.ravel()
    nf = key_frame.shape[0]
    counts = np.zeros(all_rows.shape[0], dtype=np.int64)
    np.add.at(counts, inv[:nf], comp.count)
    np.subtract.at(counts, inv[nf:], 1)
    if np.any(counts < 0):
        bad = all_rows[counts < 0][0]
        raise ValueError(
            f"sample is inconsistent with the frame: pattern {bad.tolist()} oversampled"
        )
    keep = counts > 0
    return PopulationFrame(
        domain=all_rows[keep, 0].astype(np.int64),
        X=all_rows[keep, 1:],
        count=counts[keep],
        n_domains=frame.n_domains,
    )


# ---------------------------------------------------------------------------
# unit-level predictive draws
# ---------------------------------------------------------------------------


def _eta(x, d, intercept, beta, u):
    """Per-draw linear predictor for one unit: beta is (draws, p)."""
    return intercept + beta @ np.asarray(x, dtype=float) + u[:, d]


def _participation_nu(x, d, pd):
    return expit(_eta(x, d, pd["beta0_nu"], pd["beta_nu"], pd["u_nu"]))


def predict_w(x, d, delta_draws, rng):
    """Binary participation draws for one unit, one per posterior draw."""
    nu = _participation_nu(x, d, delta_draws)
    return (rng.uniform(size=nu.shape[0]) < nu).astype(np.int8)


def _z_block(x, d, pd, m, rng):
    """(B, m) latent intensity draws for m units sharing covariates x."""
    mu1 = _eta(x, d, pd["beta0_mu1"], pd["beta_mu"], pd["u_mu"])
    B = mu1.shape[0]
    normals = rng.standard_normal((B, m))
    if "beta0_mu2" in pd:
        mu2 = _eta(x, d, pd["beta0_mu2"], pd["beta_mu"], pd["u_mu"])
        pi = expit(_eta(x, d, pd["beta0_pi"], pd["beta_pi"], pd["u_pi"]))
        first = rng.uniform(size=(B, m)) < pi[:, None]
        mu = np.where(first, mu1[:, None], mu2[:, None])
        sd = np.where(first, pd["sigma1"][:, None], pd["sigma2"][:, None])
    else:
        mu = mu1[:, None]
        sd = pd["sigma1"][:, None]
    return np.exp(mu + sd * normals)


def predict_z(x, d, theta_draws, rng):
    """Latent intensity draws for one unit, one per posterior draw."""
    return _z_block(x, d, theta_draws, 1, rng)[:, 0]


def predict_g(ztilde, gamma_draws, mode, rng):
    """Heaping-level draws for latent intensities, one per posterior draw.

    Uses the piecewise-constant level probabilities (evaluated at the
    integer representative of each z), matching the fitted likelihood.
    """
    z = np.asarray(ztilde, dtype=float)
    gam = np.asarray(gamma_draws, dtype=float)
    if gam.ndim == 1:
        gam = np.tile(gam, (z.shape[0], 1))
    if gam.shape[0] != z.shape[0]:
        raise ValueError("draw-index mismatch between intensities and heaping parameters")
    logq = np.log(np.maximum(1, np.floor(z + 0.5)))
    u = rng.uniform(size=z.shape[0])
    if mode == FULL:
        e1 = expit(gam[:, 0] + gam[:, 2] * logq)
        e2 = expit(gam[:, 1] + gam[:, 2] * logq)
        return np.where(u < e1, 1, np.where(u < e2, 5, 10)).astype(np.int64)
    e1 = expit(gam[:, 0] + gam[:, 1] * logq)
    return np.where(u < e1, 1, 5).astype(np.int64)


def predict_zstar(ztilde, gtilde, mode=FULL):
    """Coarsened reports from latent intensity and heaping-level draws."""
    z = np.asarray(ztilde, dtype=float)
    g = np.asarray(gtilde)
    if z.shape != g.shape:
        raise ValueError("draw-index mismatch between intensities and heaping levels")
    return coarsen_values(z, g, mode)


# ---------------------------------------------------------------------------
# hierarchical-Bayes domain estimators
# ---------------------------------------------------------------------------


def _domain_rows(frame: PopulationFrame, d):
    idx = np.flatnonzero(frame.domain == d)
    return idx


def hb_wbar(sample_domain, sample_w, frame: PopulationFrame, delta_draws, seed):
    """Participation-share draws per domain: observed sample w plus
    Bernoulli predictions for the unsampled remainder."""
    sample_domain = np.asarray(sample_domain)
    sample_w = np.asarray(sample_w)
    sizes = frame.sizes()
    B = delta_draws["beta0_nu"].shape[0]
    out = []
    for d in range(frame.n_domains):
        n_d = int(np.sum(sample_domain == d))
        obs = float(sample_w[sample_domain == d].sum())
        total = np.full(B, obs)
        rng = chain_rng(seed, _REALM_W, d)
        for i in _domain_rows(frame, d):
            nu = _participation_nu(frame.X[i], d, delta_draws)
            total += rng.binomial(int(frame.count[i]), nu)
        if sizes[d] + n_d == 0:
            continue
        out.append(DomainEstimate.from_draws(d, WBAR, total / (sizes[d] + n_d)))
    return out


def hb_intensity_survey(
    sample_domain,
    sample_X,
    sample_w,
    frame_rest: PopulationFrame,
    delta_draws,
    theta_draws,
    seed,
):
    """z-mean and heavy-share draws per domain in survey mode.

    ``frame_rest`` holds the unsampled remainder of the population;
    sampled daily smokers contribute fresh intensity draws, unsampled
    units contribute (participation draw) x (intensity draw).
    """
    sample_domain = np.asarray(sample_domain)
    sample_X = np.atleast_2d(np.asarray(sample_X, dtype=float))
    sample_w = np.asarray(sample_w)
    B = theta_draws["beta0_mu1"].shape[0]
    zbar, hsbar = [], []
    for d in range(frame_rest.n_domains):
        in_d = sample_domain == d
        smokers = in_d & (sample_w == 1)
        if in_d.any() and not smokers.any():
            raise ValueError(f"domain {d}: no daily smokers in the sample")
        num_z = np.zeros(B)
        num_hs = np.zeros(B)
        den = np.full(B, float(smokers.sum()))
        rng = chain_rng(seed, _REALM_Z, d)
        for x in sample_X[smokers]:
            z = _z_block(x, d, theta_draws, 1, rng)[:, 0]
            num_z += z
            num_hs += z >= HS_THRESHOLD
        for i in _domain_rows(frame_rest, d):
            m = int(frame_rest.count[i])
            nu = _participation_nu(frame_rest.X[i], d, delta_draws)
            w = rng.uniform(size=(B, m)) < nu[:, None]
            z = _z_block(frame_rest.X[i], d, theta_draws, m, rng)
            num_z += np.sum(w * z, axis=1)
            num_hs += np.sum(w & (z >= HS_THRESHOLD), axis=1)
            den += w.sum(axis=1)
        if not in_d.any() and not _domain_rows(frame_rest, d).size:
            continue
        zbar.append(DomainEstimate.from_draws(d, ZBAR, num_z / den))
        hsbar.append(DomainEstimate.from_draws(d, HSBAR, num_hs / den))
    return zbar, hsbar


def hb_intensity_simulation(frame: PopulationFrame, theta_draws, seed):
    """z-mean and heavy-share draws per domain when every unit
    participates (the intensity-only study design): plain means of fresh
    intensity draws over all frame units."""
    sizes = frame.sizes()
    B = theta_draws["beta0_mu1"].shape[0]
    zbar, hsbar = [], []
    for d in range(frame.n_domains):
        if sizes[d] == 0:
            continue
        num_z = np.zeros(B)
        num_hs = np.zeros(B)
        rng = chain_rng(seed, _REALM_Z, d)
        for i in _domain_rows(frame, d):
            z = _z_block(frame.X[i], d, theta_draws, int(frame.count[i]), rng)
            num_z += z.sum(axis=1)
            num_hs += np.sum(z >= HS_THRESHOLD, axis=1)
        zbar.append(DomainEstimate.from_draws(d, ZBAR, num_z / sizes[d]))
        hsbar.append(DomainEstimate.from_draws(d, HSBAR, num_hs / sizes[d]))
    return zbar, hsbar


def estimates_frame(estimates, sizes=None, sample_domain=None, labels=None):
    """Tidy table of domain estimates (one row per domain and indicator)."""
    import pandas as pd

    rows = []
    for e in estimates:
        rows.append(
            {
                "domain": labels[e.domain] if labels is not None else e.domain,
                "indicator": e.indicator,
                "point": e.point,
                "sd": e.sd,
                "q05": e.ci90[0],
                "q95": e.ci90[1],
                "n_d": int(np.sum(np.asarray(sample_domain) == e.domain)) if sample_domain is not None else None,
                "N_d": int(sizes[e.domain]) if sizes is not None else None,
            }
        )
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# posterior predictive checks
# ---------------------------------------------------------------------------


def ppc_stats(
    sample_domain,
    sample_X,
    sample_w=None,
    sample_zstar=None,
    delta_draws=None,
    theta_draws=None,
    gamma_draws=None,
    mode=FULL,
    seed=0,
):
    """Posterior predictive checks against the observed sample.

    Returns a dict with up to three tidy tables: the replicated
    participation share versus the observed one, predictive CDF bands of
    the latent intensity versus the empirical CDF of the reports, and
    per-value predictive report counts versus observed counts.  Fits
    without a heaping block replicate reports by plain integer rounding.
    """
    sample_domain = np.asarray(sample_domain)
    sample_X = np.atleast_2d(np.asarray(sample_X, dtype=float))
    out = {}
    rng = chain_rng(seed, _REALM_PPC, 0)

    if sample_w is not None and delta_draws is not None:
        w = np.asarray(sample_w)
        B = delta_draws["beta0_nu"].shape[0]
        rep = np.zeros(B)
        for i in range(sample_domain.shape[0]):
            nu = _participation_nu(sample_X[i], int(sample_domain[i]), delta_draws)
            rep += rng.uniform(size=B) < nu
        rep /= sample_domain.shape[0]
        s = summarize(rep)
        observed = float(w.mean())
        out["participation"] = {
            "observed": observed,
            "lo": s.q05,
            "hi": s.q95,
            "inside": bool(s.q05 <= observed <= s.q95),
        }

    if sample_zstar is not None and theta_draws is not None:
        import pandas as pd

        zstar = np.asarray(sample_zstar, dtype=np.int64)
        smoker_idx = np.flatnonzero(zstar > 0)
        n = smoker_idx.shape[0]
        B = theta_draws["beta0_mu1"].shape[0]
        ztilde = np.empty((B, n))
        for j, i in enumerate(smoker_idx):
            ztilde[:, j] = _z_block(sample_X[i], int(sample_domain[i]), theta_draws, 1, rng)[:, 0]

        grid = np.arange(1, 31, dtype=float)
        pred_cdf = (ztilde[:, :, None] <= grid[None, None, :]).mean(axis=1)
        emp = (zstar[smoker_idx, None] <= grid[None, :]).mean(axis=0)
        lo, hi = np.quantile(pred_cdf, [0.05, 0.95], axis=0)
        out["cdf"] = pd.DataFrame(
            {"z": grid, "empirical": emp, "predictive": pred_cdf.mean(axis=0), "lo": lo, "hi": hi}
        )

        if gamma_draws is not None:
            counts = np.zeros((B, CENSORED_VALUE))
            for b in range(B):
                g = predict_g(ztilde[b], gamma_draws[b], mode, rng)
                rep_zs = predict_zstar(ztilde[b], g, mode)
                counts[b] = np.bincount(rep_zs, minlength=CENSORED_VALUE + 1)[1:]
        else:
            counts = np.zeros((B, CENSORED_VALUE))
            for b in range(B):
                rep_zs = coarsen_values(ztilde[b], np.ones(n, dtype=np.int64), FULL)
                counts[b] = np.bincount(rep_zs, minlength=CENSORED_VALUE + 1)[1:]
        observed = np.bincount(zstar[smoker_idx], minlength=CENSORED_VALUE + 1)[1:]
        lo, hi = np.quantile(counts, [0.05, 0.95], axis=0)
        out["counts"] = pd.DataFrame(
            {
                "value": np.arange(1, CENSORED_VALUE + 1),
                "observed": observed,
                "predictive": counts.mean(axis=0),
                "lo": np.floor(lo).astype(np.int64),
                "hi": np.ceil(hi).astype(np.int64),
            }
        )
    return out


# ---------------------------------------------------------------------------
# design-based (direct) estimators
# ---------------------------------------------------------------------------


def direct_estimates(sample_domain, sample_values, n_domains, sizes=None, sample_w=None):
    """Design-based per-domain estimates under stratified SRS.

    ``sample_values`` are reported (or latent, in simulation checks)
    intensities for daily smokers; non-smokers carry w = 0.  Returns a
    tidy table with the participation share, the mean intensity among
    smokers, the heavy-smoker share (values >= 20 count as heavy, the
    top-code included), and variance-based standard errors.  Domains with
    no sampled smokers get missing intensity entries, not zeros.
    """
    import pandas as pd

    sample_domain = np.asarray(sample_domain)
    values = np.asarray(sample_values, dtype=float)
    w = np.ones_like(values) if sample_w is None else np.asarray(sample_w, dtype=float)
    rows = []
    for d in range(n_domains):
        in_d = sample_domain == d
        n_d = int(in_d.sum())
        if n_d == 0:
            continue
        fpc = 1.0 - n_d / float(sizes[d]) if sizes is not None else 1.0
        w_d = w[in_d]
        wbar = float(w_d.mean())
        se_w = math.sqrt(max(fpc, 0.0) * w_d.var(ddof=1) / n_d) if n_d > 1 else float("nan")
        smokers = in_d & (w == 1)
        m = int(smokers.sum())
        if m == 0:
            rows.append(
                {
                    "domain": d, "n_d": n_d, "n_smokers": 0,
                    "wbar": wbar, "wbar_se": se_w,
                    "zbar": np.nan, "zbar_se": np.nan,
                    "hsbar": np.nan, "hsbar_se": np.nan,
                    "missing_intensity": True,
                }
            )
            continue
        zv = values[smokers]
        heavy = (zv >= HS_THRESHOLD).astype(float)
        rows.append(
            {
                "domain": d, "n_d": n_d, "n_smokers": m,
                "wbar": wbar, "wbar_se": se_w,
                "zbar": float(zv.mean()),
                "zbar_se": math.sqrt(zv.var(ddof=1) / m) if m > 1 else np.nan,
                "hsbar": float(heavy.mean()),
                "hsbar_se": math.sqrt(heavy.mean() * (1 - heavy.mean()) / m),
                "missing_intensity": False,
            }
        )
    return pd.DataFrame(rows)
