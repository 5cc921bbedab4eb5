"""Coarsening-aware marginal likelihood and its validation surface.

The observed data for one daily smoker is the pair (reported value,
feasible regime set).  Its probability marginalizes the latent regime and
the latent intensity cell:

    P[z*, H] = sum_{g in H} sum_{q in C_g(z*)} lam_g(q) * mass(q)

with mass(q) the lognormal(-mixture) probability of the unit cell around
q, and a regime-independent censored term for reports of 21.  Bulk
evaluation (with analytic gradients) runs on compiled term arrays through
the selected kernel backend; reference per-unit functions implement the
same sums directly for validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from . import coarsening, model
from ._backend import kernels as _default_kernels
from .coarsening import (
    CENSORED_VALUE,
    FULL,
    TOP_CODE,
    HeapingParams,
    ObservedAnswer,
    candidate_integers,
    feasible_levels,
    levels_for_mode,
)

N_BOUNDS = 24
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

#: Censored-term structure per mode: cell terms (level index, q) plus the
#: boundary k of the analytic tail P[Z > k + 1/2].  With regimes {1,5,10},
#: a report of 21 means z >= 20.5 / 22.5 / 24.5 respectively; dropping
#: regime 10 moves the common tail boundary down to 22.5.
CENSORED_TERMS = {
    FULL: (tuple((0, q) for q in (21, 22, 23, 24)) + ((1, 23), (1, 24)), 24),
    coarsening.REDUCED: (((0, 21), (0, 22)), 22),
}


_LOGQ = np.log(np.arange(1, N_BOUNDS + 1, dtype=float))


def lam_tables_from_values(values, mode, want_grad=False):
    """Heaping-level probabilities at the integers 1..24 from raw parameter
    values (full: [g01, g02, g1]; reduced: [g0, g1]).

    Returns (lam, dlam): lam has one column per level in the mode's order;
    dlam stacks derivatives w.r.t. the parameters (cutpoints then slope)
    and is None unless requested.
    """
    lq = _LOGQ
    if mode == FULL:
        g01, g02, g1 = values
        e1 = expit(g01 + g1 * lq)
        e2 = expit(g02 + g1 * lq)
        lam = np.stack([e1, e2 - e1, 1.0 - e2], axis=1)
        if not want_grad:
            return lam, None
        v1 = e1 * (1.0 - e1)
        v2 = e2 * (1.0 - e2)
        dlam = np.zeros((N_BOUNDS, 3, 3))
        dlam[:, 0, 0] = v1
        dlam[:, 0, 2] = v1 * lq
        dlam[:, 1, 0] = -v1
        dlam[:, 1, 1] = v2
        dlam[:, 1, 2] = (v2 - v1) * lq
        dlam[:, 2, 1] = -v2
        dlam[:, 2, 2] = -v2 * lq
        return lam, dlam
    g0, g1 = values
    e1 = expit(g0 + g1 * lq)
    lam = np.stack([e1, 1.0 - e1], axis=1)
    if not want_grad:
        return lam, None
    v1 = e1 * (1.0 - e1)
    dlam = np.zeros((N_BOUNDS, 2, 2))
    dlam[:, 0, 0] = v1
    dlam[:, 0, 1] = v1 * lq
    dlam[:, 1, 0] = -v1
    dlam[:, 1, 1] = -v1 * lq
    return lam, dlam


def lam_tables(gamma: HeapingParams, want_grad=False):
    """Heaping-level probability tables for a parameter container."""
    return lam_tables_from_values(gamma.as_array(), gamma.mode, want_grad=want_grad)


def _terms_for_answer(zstar, mode):
    """(terms, tail_k) for one reported value: terms are (level index, q)."""
    if zstar == CENSORED_VALUE:
        return CENSORED_TERMS[mode]
    levels = levels_for_mode(mode)
    terms = []
    for g in sorted(feasible_levels(zstar, mode)):
        lvl = levels.index(g)
        for q in sorted(candidate_integers(g, zstar)):
            terms.append((lvl, q))
    assert terms, f"empty candidate set for z*={zstar}"
    return tuple(terms), 0


@dataclass
class IntensityData:
    """Answers compiled to flat term arrays for kernel evaluation.

    Units sharing (domain, covariates) collapse to a pattern; units
    sharing (pattern, reported value) collapse to a weighted answer type.
    ``unit_type`` maps original units to their type for pointwise export.
    """

    mode: str
    n_units: int
    n_domains: int
    pattern_domain: np.ndarray  # (P,)
    pattern_X: np.ndarray  # (P, p)
    unit_type: np.ndarray  # (n,)
    type_pattern: np.ndarray  # (T,)
    type_weight: np.ndarray  # (T,)
    type_zstar: np.ndarray  # (T,)
    type_tail_k: np.ndarray  # (T,) 0 = not censored
    type_term_ptr: np.ndarray  # (T+1,)
    term_level: np.ndarray
    term_q0: np.ndarray  # 0-based cell columns (q - 1)
    term_pattern: np.ndarray
    term_type: np.ndarray
    pattern_type_ptr: np.ndarray  # (P+1,) types grouped by pattern
    pattern_bnd_ptr: np.ndarray  # boundary indices needed per pattern
    pattern_bnd_idx: np.ndarray

    @property
    def n_patterns(self):
        return self.pattern_domain.shape[0]

    @property
    def n_types(self):
        return self.type_pattern.shape[0]

    @classmethod
    def build(cls, domain, X, zstar, mode, n_domains):
        domain = np.asarray(domain, dtype=np.int64)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] != domain.shape[0]:
            X = X.T
        zstar = np.asarray(zstar, dtype=np.int64)
        n = domain.shape[0]
        if X.shape[0] != n or zstar.shape[0] != n:
            raise ValueError("domain, X and zstar must have matching lengths")
        if np.any((zstar < 1) | (zstar > CENSORED_VALUE)):
            raise ValueError(f"reported values must lie in 1..{CENSORED_VALUE}")
        if np.any((domain < 0) | (domain >= n_domains)):
            raise ValueError("domain index outside the declared range")

        key = np.column_stack([domain.astype(float), X])
        pat_rows, unit_pattern = np.unique(key, axis=0, return_inverse=True)
        unit_pattern = unit_pattern.ravel()
        pattern_domain = pat_rows[:, 0].astype(np.int64)
        pattern_X = pat_rows[:, 1:]
        P = pat_rows.shape[0]

        tkey = np.column_stack([unit_pattern, zstar])
        type_rows, unit_type = np.unique(tkey, axis=0, return_inverse=True)
        unit_type = unit_type.ravel()
        type_pattern = type_rows[:, 0].astype(np.int64)
        type_zstar = type_rows[:, 1].astype(np.int64)
        T = type_rows.shape[0]
        type_weight = np.bincount(unit_type, minlength=T).astype(float)

        term_level, term_q, term_type = [], [], []
        type_tail_k = np.zeros(T, dtype=np.int64)
        type_term_ptr = np.zeros(T + 1, dtype=np.int64)
        need = [set() for _ in range(P)]
        for t in range(T):
            terms, tail = _terms_for_answer(int(type_zstar[t]), mode)
            type_tail_k[t] = tail
            p = type_pattern[t]
            for lvl, q in terms:
                term_level.append(lvl)
                term_q.append(q)
                term_type.append(t)
                need[p].add(q)
                if q > 1:
                    need[p].add(q - 1)
            if tail:
                need[p].add(tail)
            type_term_ptr[t + 1] = type_term_ptr[t] + len(terms)

        term_level = np.asarray(term_level, dtype=np.int64)
        term_q = np.asarray(term_q, dtype=np.int64)
        term_type = np.asarray(term_type, dtype=np.int64)
        term_pattern = type_pattern[term_type]

        # types come out of np.unique sorted by pattern first
        pattern_type_ptr = np.zeros(P + 1, dtype=np.int64)
        np.cumsum(np.bincount(type_pattern, minlength=P), out=pattern_type_ptr[1:])

        bnd_idx = []
        pattern_bnd_ptr = np.zeros(P + 1, dtype=np.int64)
        for p in range(P):
            ks = sorted(need[p])
            bnd_idx.extend(ks)
            pattern_bnd_ptr[p + 1] = pattern_bnd_ptr[p] + len(ks)
        pattern_bnd_idx = np.asarray(bnd_idx, dtype=np.int64)

        return cls(
            mode=mode,
            n_units=n,
            n_domains=n_domains,
            pattern_domain=pattern_domain,
            pattern_X=pattern_X,
            unit_type=unit_type,
            type_pattern=type_pattern,
            type_weight=type_weight,
            type_zstar=type_zstar,
            type_tail_k=type_tail_k,
            type_term_ptr=type_term_ptr,
            term_level=term_level,
            term_q0=term_q - 1,
            term_pattern=term_pattern,
            term_type=term_type,
            pattern_type_ptr=pattern_type_ptr,
            pattern_bnd_ptr=pattern_bnd_ptr,
            pattern_bnd_idx=pattern_bnd_idx,
        )


def coarsened_loglik(
    data: IntensityData,
    mu1,
    mu2,
    pi,
    sigma1,
    sigma2,
    gamma: HeapingParams,
    want_grad=False,
    want_pointwise=False,
    kernel=None,
):
    """Total coarsened log likelihood on compiled data via the kernel.

    Gradient components are with respect to per-pattern (mu1, mu2, pi),
    the scales, and the heaping parameters in ``gamma.as_array()`` order.
    """
    if gamma.mode != data.mode:
        raise ValueError("heaping mode of parameters and data disagree")
    lam, dlam = lam_tables(gamma, want_grad=want_grad)
    kern = kernel if kernel is not None else _default_kernels
    return kern.coarsened_eval(
        data,
        np.ascontiguousarray(mu1, dtype=float),
        None if mu2 is None else np.ascontiguousarray(mu2, dtype=float),
        None if pi is None else np.ascontiguousarray(pi, dtype=float),
        float(sigma1),
        float(sigma2) if sigma2 is not None else float(sigma1),
        lam,
        dlam,
        want_pointwise=want_pointwise,
    )


_CENSOR_BOUND = TOP_CODE + 0.5


def plain_loglik(
    data: IntensityData,
    mu1,
    mu2,
    pi,
    sigma1,
    sigma2,
    want_grad=False,
    want_pointwise=False,
    censored_at_face_value=False,
):
    """Face-value log likelihood ignoring the coarsening mechanism.

    Reports of 1..20 enter as exact lognormal(-mixture) observations;
    the top-coded category is a right tail beyond 20.5 unless
    ``censored_at_face_value`` forces a density evaluation at 21.
    """
    mixture = pi is not None
    tp = data.type_pattern
    z = data.type_zstar.astype(float)
    cens = data.type_zstar == CENSORED_VALUE
    if censored_at_face_value:
        cens = np.zeros_like(cens)
    logz = np.log(z)
    logz[cens] = math.log(_CENSOR_BOUND)

    def comp(mu, sigma):
        u = (logz - mu[tp]) / sigma
        dens = _INV_SQRT_2PI * np.exp(-0.5 * u * u) / (z * sigma)
        surv = ndtr(-u)
        val = np.where(cens, surv, dens)
        # d/dmu and d/dsigma of the type's contribution
        dmu = np.where(cens, _INV_SQRT_2PI * np.exp(-0.5 * u * u) / sigma, dens * u / sigma)
        dsig = np.where(
            cens,
            u * _INV_SQRT_2PI * np.exp(-0.5 * u * u) / sigma,
            dens * (u * u - 1.0) / sigma,
        )
        return val, dmu, dsig

    f1, dmu1_t, dsig1_t = comp(np.asarray(mu1, dtype=float), sigma1)
    if mixture:
        f2, dmu2_t, dsig2_t = comp(np.asarray(mu2, dtype=float), sigma2)
        pi_t = np.asarray(pi, dtype=float)[tp]
        L = pi_t * f1 + (1.0 - pi_t) * f2
    else:
        L = f1

    if np.any(L <= 0.0) or not np.all(np.isfinite(L)):
        return -np.inf, None, None

    logL = np.log(L)
    total = float(np.dot(data.type_weight, logL))
    pointwise = logL if want_pointwise else None
    if not want_grad:
        return total, pointwise, None

    P = data.n_patterns
    coef = data.type_weight / L
    if mixture:
        dmu1 = np.bincount(tp, weights=coef * pi_t * dmu1_t, minlength=P)
        dmu2 = np.bincount(tp, weights=coef * (1.0 - pi_t) * dmu2_t, minlength=P)
        dpi = np.bincount(tp, weights=coef * (f1 - f2), minlength=P)
        ds1 = float(np.sum(coef * pi_t * dsig1_t))
        ds2 = float(np.sum(coef * (1.0 - pi_t) * dsig2_t))
    else:
        dmu1 = np.bincount(tp, weights=coef * dmu1_t, minlength=P)
        dmu2 = np.zeros(P)
        dpi = np.zeros(P)
        ds1 = float(np.sum(coef * dsig1_t))
        ds2 = 0.0
    return total, pointwise, (dmu1, dmu2, dpi, ds1, ds2, np.zeros(0))


# ---------------------------------------------------------------------------
# reference (per-unit) implementations
# ---------------------------------------------------------------------------


def _normal_cell(mu, sigma, lo, hi):
    """P[lo < exp(N(mu, sigma^2)) <= hi], survival-difference form in the
    upper tail to avoid cancellation."""
    uhi = (math.log(hi) - mu) / sigma
    if lo is None or lo <= 0.0:
        return float(ndtr(uhi))
    ulo = (math.log(lo) - mu) / sigma
    if ulo + uhi > 0.0:
        return float(ndtr(-ulo) - ndtr(-uhi))
    return float(ndtr(uhi) - ndtr(ulo))


def _unit_cell_mass(q, x, d, theta):
    pi, mu1, mu2, s1, s2 = model._unit_mix(x, d, theta)
    lo = None if q == 1 else q - 0.5
    m = pi * _normal_cell(mu1, s1, lo, q + 0.5)
    if theta.family == model.LNM:
        m += (1.0 - pi) * _normal_cell(mu2, s2, lo, q + 0.5)
    return m


def _unit_survival(bound, x, d, theta):
    pi, mu1, mu2, s1, s2 = model._unit_mix(x, d, theta)
    s = pi * float(ndtr(-(math.log(bound) - mu1) / s1))
    if theta.family == model.LNM:
        s += (1.0 - pi) * float(ndtr(-(math.log(bound) - mu2) / s2))
    return s


def interval_mass(q, x, d, theta):
    """Latent-intensity probability of the unit cell of integer q >= 1
    (the q = 1 cell extends down to zero)."""
    if q < 1:
        raise ValueError("q must be a positive integer")
    return _unit_cell_mass(int(q), x, d, theta)


def _level_prob(q, level, gamma):
    probs = coarsening.heaping_probs(float(q), gamma)
    return float(probs[levels_for_mode(gamma.mode).index(level)])


def loglik_unit(answer: ObservedAnswer, x, d, theta, gamma: HeapingParams):
    """Log probability of one non-censored (reported value, feasible set)."""
    if answer.censored:
        raise ValueError("use loglik_censored for top-coded reports")
    total = 0.0
    for g in sorted(answer.feasible_set):
        cands = candidate_integers(g, answer.value)
        assert cands, "empty candidate set for a valid answer"
        for q in sorted(cands):
            total += _level_prob(q, g, gamma) * _unit_cell_mass(q, x, d, theta)
    return math.log(total)


def loglik_censored(x, d, theta, gamma: HeapingParams):
    """Log probability of a top-coded report (independent of the feasible
    set)."""
    terms, tail_k = CENSORED_TERMS[gamma.mode]
    levels = levels_for_mode(gamma.mode)
    total = _unit_survival(tail_k + 0.5, x, d, theta)
    for lvl, q in terms:
        total += _level_prob(q, levels[lvl], gamma) * _unit_cell_mass(q, x, d, theta)
    return math.log(total)


def loglik_intensity(records, theta, gamma):
    """(total, pointwise) coarsened log likelihood over unit records."""
    pointwise = np.empty(len(records))
    for i, rec in enumerate(records):
        if rec.answer is None:
            raise ValueError(f"record {i} carries no answer")
        if rec.answer.censored:
            pointwise[i] = loglik_censored(rec.covariates, rec.domain, theta, gamma)
        else:
            pointwise[i] = loglik_unit(rec.answer, rec.covariates, rec.domain, theta, gamma)
    return float(pointwise.sum()), pointwise


def loglik_participation(records, delta):
    """(total, pointwise) Bernoulli log likelihood of the participation
    indicators."""
    pointwise = np.empty(len(records))
    for i, rec in enumerate(records):
        if rec.participation is None:
            raise ValueError(f"record {i} carries no participation indicator")
        nu = model.participation_prob(rec.covariates, rec.domain, delta)
        pointwise[i] = math.log(nu) if rec.participation else math.log1p(-nu)
    return float(pointwise.sum()), pointwise


@dataclass
class OutcomeTable:
    """Exact distribution of (reported value, feasible set) for one unit.

    Enumerates the generative law of report = top-coded rounding of the
    latent intensity under the latent regime: the 20 uncensored values
    plus the censored outcome.  Regimes 5 and 10 clamp latent values below
    their smallest admissible cell upward, so on the bottom rows (5 and
    10) the table carries mass the fitted likelihood's literal candidate
    sets do not; everywhere else rows equal the likelihood terms.
    """

    entries: list

    def probabilities(self):
        return np.array([p for _, p in self.entries])

    def answers(self):
        return [a for a, _ in self.entries]

    def total(self):
        return float(self.probabilities().sum())


def outcome_distribution(x, d, theta, gamma: HeapingParams, mode=None):
    """Enumerate the exact outcome distribution for one unit's covariates."""
    mode = mode or gamma.mode
    levels = levels_for_mode(mode)
    lam, _ = lam_tables(gamma)
    masses = np.array([_unit_cell_mass(q, x, d, theta) for q in range(1, N_BOUNDS + 1)])
    probs = dict.fromkeys(range(1, TOP_CODE + 1), 0.0)
    censored = _unit_survival(N_BOUNDS + 0.5, x, d, theta)
    for lvl, g in enumerate(levels):
        for q in range(1, N_BOUNDS + 1):
            v = coarsening._round_level(q, g)
            if v > TOP_CODE:
                censored += lam[q - 1, lvl] * masses[q - 1]
            else:
                probs[v] += lam[q - 1, lvl] * masses[q - 1]
    entries = [
        (ObservedAnswer(v, False, feasible_levels(v, mode)), probs[v])
        for v in range(1, TOP_CODE + 1)
    ]
    entries.append((ObservedAnswer(CENSORED_VALUE, True, frozenset(levels)), censored))
    return OutcomeTable(entries)


def log_posterior_intensity(records, theta, gamma, config):
    """Unnormalized log posterior of the intensity part on unit records."""
    state = model.ParameterState(intensity=theta, heaping=gamma)
    lp = model.log_prior(state, config)
    if not np.isfinite(lp):
        return -np.inf
    return loglik_intensity(records, theta, gamma)[0] + lp


def log_posterior_participation(records, delta, config):
    """Unnormalized log posterior of the participation part."""
    state = model.ParameterState(participation=delta)
    lp = model.log_prior(state, config)
    if not np.isfinite(lp):
        return -np.inf
    return loglik_participation(records, delta)[0] + lp
