"""Vectorized numpy implementation of the coarsened-likelihood kernel.

This is the fallback backend; `_kernels.pyx` implements the same contract
in Cython.  Both evaluate, for every answer type t with pattern p,

    L_t = sum_j lam[q_j, g_j] * mass_p(q_j)  (+ upper-tail term if censored)

where mass_p(q) is the latent-intensity probability of the unit cell of q
for pattern p, and return sum_t w_t * log L_t together with analytic
derivatives with respect to the per-pattern locations/mixing probability,
the component scales, and the heaping parameters.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

BACKEND_NAME = "numpy"

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

#: log of the cell boundaries q + 1/2 for q = 1..24 (boundary 0 is z = 0).
N_BOUNDS = 24
LOG_BOUNDS = np.log(np.arange(1, N_BOUNDS + 1) + 0.5)


def _component_tables(mu, sigma):
    """Per-pattern boundary tables for one lognormal component.

    Returns (mass, dmass_dmu, dmass_dsigma, surv, dsurv_dmu, dsurv_dsigma):
    mass[:, q-1] is the probability of the unit cell of q; surv[:, k-1] the
    survival beyond boundary k.  Cell masses use the survival-difference
    form in the upper tail to avoid cancellation.
    """
    u = (LOG_BOUNDS[None, :] - mu[:, None]) / sigma
    cdf = ndtr(u)
    surv = ndtr(-u)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    updf = u * pdf

    P = mu.shape[0]
    zeros = np.zeros((P, 1))
    cfull = np.hstack([zeros, cdf])
    sfull = np.hstack([np.ones((P, 1)), surv])
    pfull = np.hstack([zeros, pdf])
    upfull = np.hstack([zeros, updf])

    lower_pos = np.hstack([np.full((P, 1), False), u[:, :-1] > 0])
    mass = np.where(lower_pos, sfull[:, :-1] - sfull[:, 1:], cfull[:, 1:] - cfull[:, :-1])
    dmass_dmu = (pfull[:, :-1] - pfull[:, 1:]) / sigma
    dmass_dsig = (upfull[:, :-1] - upfull[:, 1:]) / sigma
    return mass, dmass_dmu, dmass_dsig, surv, pdf / sigma, updf / sigma


def coarsened_eval(
    data,
    mu1,
    mu2,
    pi,
    sigma1,
    sigma2,
    lam,
    dlam=None,
    want_pointwise=False,
):
    """Evaluate the coarsened log likelihood (and gradient) on compiled data.

    Parameters
    ----------
    data : compiled term arrays (see likelihood.IntensityData)
    mu1, mu2 : per-pattern component locations (mu2 ignored if pi is None)
    pi : per-pattern first-component probability, or None for the
        single-component variant
    sigma1, sigma2 : component scales
    lam : (24, L) heaping-level probabilities at integers 1..24
    dlam : (24, L, G) derivatives of lam w.r.t. the heaping parameters;
        gradients are computed iff dlam is not None

    Returns
    -------
    (total, pointwise, grads); pointwise is per answer type (or None);
    grads is None or (dmu1, dmu2, dpi, dsigma1, dsigma2, dgamma).
    """
    mixture = pi is not None
    want_grad = dlam is not None
    P = mu1.shape[0]

    m1, dm1_mu, dm1_sig, s1_tab, ds1_mu, ds1_sig = _component_tables(mu1, sigma1)
    if mixture:
        m2, dm2_mu, dm2_sig, s2_tab, ds2_mu, ds2_sig = _component_tables(mu2, sigma2)
        pic = pi[:, None]
        mass = pic * m1 + (1.0 - pic) * m2
        surv = pic * s1_tab + (1.0 - pic) * s2_tab
    else:
        mass, surv = m1, s1_tab

    tq = data.term_q0
    tp = data.term_pattern
    lam_t = lam[tq, data.term_level]
    contrib = lam_t * mass[tp, tq]
    L = np.add.reduceat(contrib, data.type_term_ptr[:-1])

    cens = data.type_tail_k > 0
    tail_pattern = data.type_pattern[cens]
    tail_col = data.type_tail_k[cens] - 1
    L[cens] += surv[tail_pattern, tail_col]

    if np.any(L <= 0.0) or not np.all(np.isfinite(L)):
        return -np.inf, None, None

    logL = np.log(L)
    total = float(np.dot(data.type_weight, logL))
    pointwise = logL if want_pointwise else None
    if not want_grad:
        return total, pointwise, None

    coef_type = data.type_weight / L
    coef_term = coef_type[data.term_type]
    w_lam = coef_term * lam_t

    if mixture:
        pi_t = pi[tp]
        g_mu1 = w_lam * pi_t * dm1_mu[tp, tq]
        g_mu2 = w_lam * (1.0 - pi_t) * dm2_mu[tp, tq]
        g_pi = w_lam * (m1[tp, tq] - m2[tp, tq])
        dsigma1 = float(np.sum(w_lam * pi_t * dm1_sig[tp, tq]))
        dsigma2 = float(np.sum(w_lam * (1.0 - pi_t) * dm2_sig[tp, tq]))
    else:
        g_mu1 = w_lam * dm1_mu[tp, tq]
        g_mu2 = None
        g_pi = None
        dsigma1 = float(np.sum(w_lam * dm1_sig[tp, tq]))
        dsigma2 = 0.0

    dmu1 = np.bincount(tp, weights=g_mu1, minlength=P)
    dmu2 = np.bincount(tp, weights=g_mu2, minlength=P) if mixture else np.zeros(P)
    dpi = np.bincount(tp, weights=g_pi, minlength=P) if mixture else np.zeros(P)

    # upper-tail (censored) contributions
    if tail_pattern.size:
        coef_c = coef_type[cens]
        if mixture:
            pi_c = pi[tail_pattern]
            np.add.at(dmu1, tail_pattern, coef_c * pi_c * ds1_mu[tail_pattern, tail_col])
            np.add.at(dmu2, tail_pattern, coef_c * (1.0 - pi_c) * ds2_mu[tail_pattern, tail_col])
            np.add.at(dpi, tail_pattern, coef_c * (s1_tab[tail_pattern, tail_col] - s2_tab[tail_pattern, tail_col]))
            dsigma1 += float(np.sum(coef_c * pi_c * ds1_sig[tail_pattern, tail_col]))
            dsigma2 += float(np.sum(coef_c * (1.0 - pi_c) * ds2_sig[tail_pattern, tail_col]))
        else:
            np.add.at(dmu1, tail_pattern, coef_c * ds1_mu[tail_pattern, tail_col])
            dsigma1 += float(np.sum(coef_c * ds1_sig[tail_pattern, tail_col]))

    ng = dlam.shape[2]
    dgamma = np.empty(ng)
    mass_t = mass[tp, tq]
    for j in range(ng):
        dgamma[j] = float(np.sum(coef_term * dlam[tq, data.term_level, j] * mass_t))

    return total, pointwise, (dmu1, dmu2, dpi, dsigma1, dsigma2, dgamma)
