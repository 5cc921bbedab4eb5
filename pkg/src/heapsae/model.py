"""Model components: linear predictors, lognormal-mixture densities, priors.

The two-part model has a logistic participation part (who smokes daily)
and an intensity part for the positive amount: a two-component lognormal
mixture whose mixing probability depends on covariates, or a plain
lognormal as the single-component variant.  Both parts share the same
random-effect layout (one Gaussian effect per domain).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

from .coarsening import FULL, REDUCED, HeapingParams, ObservedAnswer

LN = "ln"
LNM = "lnm"


@dataclass(frozen=True)
class UnitRecord:
    """One survey or population unit.

    ``participation`` and ``answer`` are optional: frame units carry
    neither, sampled non-smokers carry participation only, and an answer
    implies participation (intensity is observed only for daily smokers).
    """

    domain: int
    covariates: np.ndarray
    participation: int | None = None
    answer: ObservedAnswer | None = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", np.asarray(self.covariates, dtype=float))
        if self.domain < 0:
            raise ValueError("domain index must be non-negative")
        if self.answer is not None and self.participation not in (None, 1):
            raise ValueError("an answer implies participation = 1")

_LOG_SQRT_2_OVER_PI = 0.5 * math.log(2.0 / math.pi)
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the weakly-informative prior layer.

    ``mu_center``/``mu_scale`` are the mean and sd of the log reported
    values; intensity intercepts get a Normal(mu_center, (2.5*mu_scale)^2)
    prior and intensity slopes Normal(0, (2.5*mu_scale)^2).
    """

    mu_center: float
    mu_scale: float
    intercept_sd: float = 2.5
    coef_sd: float = 2.5
    hn_scale: float = 2.0
    ghn_shape: float = 1.5
    ghn_scale: float = 2.788

    def __post_init__(self):
        for name in ("mu_scale", "intercept_sd", "coef_sd", "hn_scale", "ghn_shape", "ghn_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_answers(cls, values, **kwargs):
        """Center/scale the intensity priors on the observed log reports.

        Censored reports enter at face value (21).
        """
        logs = np.log(np.asarray(values, dtype=float))
        if logs.size < 2:
            raise ValueError("need at least two reported values")
        scale = float(np.std(logs, ddof=1))
        if scale <= 0:
            raise ValueError("reported values are constant; prior scale undefined")
        return cls(mu_center=float(np.mean(logs)), mu_scale=scale, **kwargs)


@dataclass(frozen=True)
class ParticipationParams:
    """Logistic participation block: intercept, slopes, domain effects."""

    beta0_nu: float
    beta_nu: np.ndarray
    u_nu: np.ndarray
    tau_nu: float

    def __post_init__(self):
        if self.tau_nu <= 0:
            raise ValueError("tau_nu must be positive")


@dataclass(frozen=True)
class IntensityParams:
    """Lognormal(-mixture) intensity block.

    ``family`` is "ln" or "lnm"; the mixture-only fields (second
    intercept/scale and the mixing block) are None in the "ln" variant.
    """

    family: str
    beta0_mu1: float
    beta_mu: np.ndarray
    u_mu: np.ndarray
    sigma1: float
    tau_mu: float
    beta0_mu2: float | None = None
    sigma2: float | None = None
    beta0_pi: float | None = None
    beta_pi: np.ndarray | None = None
    u_pi: np.ndarray | None = None
    tau_pi: float | None = None

    def __post_init__(self):
        if self.family not in (LN, LNM):
            raise ValueError(f"unknown family {self.family!r}")
        if self.sigma1 <= 0 or self.tau_mu <= 0:
            raise ValueError("scale parameters must be positive")
        if self.family == LNM:
            missing = [
                n
                for n in ("beta0_mu2", "sigma2", "beta0_pi", "beta_pi", "u_pi", "tau_pi")
                if getattr(self, n) is None
            ]
            if missing:
                raise ValueError(f"lnm variant requires {missing}")
            if not self.beta0_mu1 < self.beta0_mu2:
                raise ValueError(
                    f"ordering violated: beta0_mu1={self.beta0_mu1} >= beta0_mu2={self.beta0_mu2}"
                )
            if self.sigma2 <= 0 or self.tau_pi <= 0:
                raise ValueError("scale parameters must be positive")


@dataclass(frozen=True)
class ParameterState:
    """One full parameter state: participation, intensity, heaping blocks
    (each optional; a block absent from the model is simply None)."""

    participation: ParticipationParams | None = None
    intensity: IntensityParams | None = None
    heaping: HeapingParams | None = None


def _linear(beta0, beta, x, u, d):
    x = np.asarray(x, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if x.shape[-1] != beta.shape[0]:
        raise ValueError(f"covariate dimension {x.shape[-1]} != coefficient dimension {beta.shape[0]}")
    return beta0 + x @ beta + u[d]


def participation_prob(x, d, delta: ParticipationParams):
    """P[w = 1 | x, domain d] under the logistic participation model."""
    return expit(_linear(delta.beta0_nu, delta.beta_nu, x, delta.u_nu, d))


def mixing_prob(x, d, theta: IntensityParams):
    """P[component 1 | x, domain d] under the mixture-of-experts gate."""
    if theta.family != LNM:
        raise ValueError("mixing probability undefined for the single-component variant")
    return expit(_linear(theta.beta0_pi, theta.beta_pi, x, theta.u_pi, d))


def mixture_location(x, d, label, theta: IntensityParams):
    """Location of mixture component ``label`` (1 or 2): component intercept
    plus shared slopes and shared domain effect."""
    if label == 1:
        b0 = theta.beta0_mu1
    elif label == 2:
        if theta.family != LNM:
            raise ValueError("component 2 undefined for the single-component variant")
        b0 = theta.beta0_mu2
    else:
        raise ValueError(f"invalid component label {label}")
    return _linear(b0, theta.beta_mu, x, theta.u_mu, d)


def _unit_mix(x, d, theta):
    """(pi, mu1, mu2, sigma1, sigma2) for one unit; pi=1 in the LN variant."""
    mu1 = mixture_location(x, d, 1, theta)
    if theta.family == LN:
        return 1.0, mu1, mu1, theta.sigma1, theta.sigma1
    pi = mixing_prob(x, d, theta)
    mu2 = mixture_location(x, d, 2, theta)
    return pi, mu1, mu2, theta.sigma1, theta.sigma2


def lnm_cdf(z, x, d, theta: IntensityParams):
    """CDF of the latent intensity at z for a unit with covariates x in
    domain d."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("z must be strictly positive")
    pi, mu1, mu2, s1, s2 = _unit_mix(x, d, theta)
    logz = np.log(z)
    return pi * ndtr((logz - mu1) / s1) + (1.0 - pi) * ndtr((logz - mu2) / s2)


def lnm_pdf(z, x, d, theta: IntensityParams):
    """Density of the latent intensity at z (lognormal mixture)."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("z must be strictly positive")
    pi, mu1, mu2, s1, s2 = _unit_mix(x, d, theta)
    logz = np.log(z)

    def comp(mu, s):
        u = (logz - mu) / s
        return np.exp(-0.5 * u * u) / (z * s * math.sqrt(2.0 * math.pi))

    return pi * comp(mu1, s1) + (1.0 - pi) * comp(mu2, s2)


def normal_logpdf(x, mean, sd):
    u = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * u * u - math.log(sd) - 0.5 * math.log(2.0 * math.pi)


def hn_logpdf(x, scale):
    """Half-Normal(scale) log-density on x > 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or scale <= 0:
        raise ValueError("half-normal requires positive argument and scale")
    return _LOG_SQRT_2_OVER_PI - math.log(scale) - 0.5 * (x / scale) ** 2


def ghn_logpdf(x, shape, scale):
    """Generalized Half-Normal log-density on x > 0.

    Density sqrt(2/pi) * (a/x) * (x/b)^a * exp(-(x/b)^(2a)/2).  With
    shape a = 1 this is the Half-Normal with scale b; larger shapes give
    lighter tails (the reason it backs the priors of the scale parameters
    entering lognormal means).
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or shape <= 0 or scale <= 0:
        raise ValueError("generalized half-normal requires positive arguments")
    r = x / scale
    return _LOG_SQRT_2_OVER_PI + math.log(shape) - np.log(x) + shape * np.log(r) - 0.5 * r ** (2.0 * shape)


def ghn_sample(shape, scale, size, rng):
    """Draw from the Generalized Half-Normal: b * |N(0,1)|^(1/a)."""
    return scale * np.abs(rng.standard_normal(size)) ** (1.0 / shape)


def _finite_or_raise(*blocks):
    for b in blocks:
        arr = np.asarray(b, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite parameter value")


def log_prior(state: ParameterState, config: PriorConfig):
    """Joint log prior density of a parameter state.

    Returns -inf when an ordering/positivity invariant is violated (a
    rejected state); raises FloatingPointError on non-finite inputs, which
    is a numeric failure rather than a rejection.
    """
    lp = 0.0
    if state.participation is not None:
        delta = state.participation
        _finite_or_raise(delta.beta0_nu, delta.beta_nu, delta.u_nu, delta.tau_nu)
        if delta.tau_nu <= 0:
            return -np.inf
        lp += normal_logpdf(delta.beta0_nu, 0.0, config.intercept_sd)
        lp += normal_logpdf(delta.beta_nu, 0.0, config.coef_sd).sum()
        lp += hn_logpdf(delta.tau_nu, config.hn_scale)
        lp += normal_logpdf(delta.u_nu, 0.0, delta.tau_nu).sum()

    if state.intensity is not None:
        theta = state.intensity
        _finite_or_raise(theta.beta0_mu1, theta.beta_mu, theta.u_mu, theta.sigma1, theta.tau_mu)
        if theta.sigma1 <= 0 or theta.tau_mu <= 0:
            return -np.inf
        mu_sd = config.intercept_sd * config.mu_scale
        lp += normal_logpdf(theta.beta0_mu1, config.mu_center, mu_sd)
        lp += normal_logpdf(theta.beta_mu, 0.0, mu_sd).sum()
        lp += ghn_logpdf(theta.sigma1, config.ghn_shape, config.ghn_scale)
        lp += ghn_logpdf(theta.tau_mu, config.ghn_shape, config.ghn_scale)
        lp += normal_logpdf(theta.u_mu, 0.0, theta.tau_mu).sum()
        if theta.family == LNM:
            _finite_or_raise(theta.beta0_mu2, theta.sigma2, theta.beta0_pi, theta.beta_pi, theta.u_pi, theta.tau_pi)
            if not theta.beta0_mu1 < theta.beta0_mu2:
                return -np.inf
            if theta.sigma2 <= 0 or theta.tau_pi <= 0:
                return -np.inf
            lp += normal_logpdf(theta.beta0_mu2, config.mu_center, mu_sd)
            lp += ghn_logpdf(theta.sigma2, config.ghn_shape, config.ghn_scale)
            lp += normal_logpdf(theta.beta0_pi, 0.0, config.intercept_sd)
            lp += normal_logpdf(theta.beta_pi, 0.0, config.coef_sd).sum()
            lp += hn_logpdf(theta.tau_pi, config.hn_scale)
            lp += normal_logpdf(theta.u_pi, 0.0, theta.tau_pi).sum()

    if state.heaping is not None:
        gam = state.heaping
        _finite_or_raise(gam.as_array())
        if gam.mode == FULL:
            if not gam.gamma01 < gam.gamma02:
                return -np.inf
            lp += normal_logpdf(gam.gamma01, 0.0, config.intercept_sd)
            lp += normal_logpdf(gam.gamma02, 0.0, config.intercept_sd)
        else:
            lp += normal_logpdf(gam.gamma0, 0.0, config.intercept_sd)
        lp += normal_logpdf(gam.gamma1, 0.0, config.coef_sd)

    return float(lp)
