"""Deterministic algebra of the coarsening process.

A positive latent intensity z is reported through a rounding regime
g in {1, 5, 10}: round to the nearest integer, the nearest multiple of 5,
or the nearest multiple of 10 (with an asymmetric cell).  Reported values
above 20 are top-coded to 21.  The regime itself is latent; a reported
value only reveals the set of regimes that could have produced it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

FULL = "full"
REDUCED = "reduced"

#: Ordered heaping levels per mode.
LEVELS = {FULL: (1, 5, 10), REDUCED: (1, 5)}

#: Top-coding: any report above this value is recorded as CENSORED_VALUE.
TOP_CODE = 20
CENSORED_VALUE = 21

#: Largest integer that can round below the top-code under some regime
#: (24 under g=10: cell [14.5, 24.5) reports 20).
MAX_CANDIDATE = 24


def levels_for_mode(mode):
    """Return the admissible heaping levels for ``mode``."""
    try:
        return LEVELS[mode]
    except KeyError:
        raise ValueError(f"unknown heaping mode {mode!r}") from None


@dataclass(frozen=True)
class HeapingParams:
    """Proportional-odds parameters of the heaping-level distribution.

    Full mode uses cutpoints (gamma01 < gamma02) and slope gamma1 on log z;
    reduced mode collapses levels to {1, 5} with a single cutpoint gamma0.
    """

    mode: str
    gamma1: float
    gamma01: float | None = None
    gamma02: float | None = None
    gamma0: float | None = None

    def __post_init__(self):
        if self.mode == FULL:
            if self.gamma01 is None or self.gamma02 is None:
                raise ValueError("full mode requires gamma01 and gamma02")
            if not self.gamma01 < self.gamma02:
                raise ValueError(
                    f"ordering violated: gamma01={self.gamma01} >= gamma02={self.gamma02}"
                )
        elif self.mode == REDUCED:
            if self.gamma0 is None:
                raise ValueError("reduced mode requires gamma0")
        else:
            raise ValueError(f"unknown heaping mode {self.mode!r}")

    @classmethod
    def full(cls, gamma01, gamma02, gamma1):
        return cls(mode=FULL, gamma01=gamma01, gamma02=gamma02, gamma1=gamma1)

    @classmethod
    def reduced(cls, gamma0, gamma1):
        return cls(mode=REDUCED, gamma0=gamma0, gamma1=gamma1)

    def as_array(self):
        """Cutpoint/slope values as a flat array (full: [g01, g02, g1])."""
        if self.mode == FULL:
            return np.array([self.gamma01, self.gamma02, self.gamma1])
        return np.array([self.gamma0, self.gamma1])


def heaping_probs(z, params: HeapingParams):
    """Probability of each heaping level given the latent intensity z.

    Parameters
    ----------
    z : float or array
        Latent intensity, strictly positive.
    params : HeapingParams

    Returns
    -------
    ndarray with one trailing axis over levels (3 in full mode, 2 reduced),
    each row on the probability simplex.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("z must be strictly positive")
    logz = np.log(z)
    if params.mode == FULL:
        e1 = expit(params.gamma01 + params.gamma1 * logz)
        e2 = expit(params.gamma02 + params.gamma1 * logz)
        out = np.stack([e1, e2 - e1, 1.0 - e2], axis=-1)
    else:
        e1 = expit(params.gamma0 + params.gamma1 * logz)
        out = np.stack([e1, 1.0 - e1], axis=-1)
    return out


def representative_integer(z):
    """Integer representative of the unit cell containing z.

    Cells follow the g=1 rounding grid: (0, 1.5) maps to 1, then
    [q-0.5, q+0.5) maps to q.  Accepts scalars or arrays.
    """
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("z must be strictly positive")
    q = np.maximum(1, np.floor(z + 0.5).astype(np.int64))
    return q if q.ndim else int(q)


def heaping_probs_discrete(z, params: HeapingParams):
    """Piecewise-constant version of :func:`heaping_probs`.

    Evaluated at the integer representative of the unit cell containing z,
    which is the form entering the marginal likelihood.
    """
    return heaping_probs(representative_integer(z), params)


def _check_admissible(g, zstar):
    if g == 1:
        if zstar < 1:
            raise ValueError(f"z*={zstar} inadmissible for level 1")
    elif g == 5:
        if zstar % 5 != 0 or zstar < 5:
            raise ValueError(f"z*={zstar} inadmissible for level 5")
    elif g == 10:
        if zstar % 10 != 0 or zstar < 10:
            raise ValueError(f"z*={zstar} inadmissible for level 10")
    else:
        raise ValueError(f"unknown heaping level {g}")


def rounding_interval(g, zstar):
    """Half-open interval [lo, hi) of latent values reported as ``zstar``
    under regime ``g`` (the g=1 bottom cell is (0, 1.5))."""
    _check_admissible(g, zstar)
    if g == 1:
        return (0.0, 1.5) if zstar == 1 else (zstar - 0.5, zstar + 0.5)
    if g == 5:
        return (zstar - 2.5, zstar + 2.5)
    return (zstar - 5.5, zstar + 4.5)


def candidate_integers(g, zstar):
    """Positive integers inside :func:`rounding_interval` (never 0)."""
    lo, hi = rounding_interval(g, zstar)
    first = max(1, math.ceil(lo + 0.5))  # boundaries sit at half-integers
    return frozenset(range(first, math.ceil(hi)))


def feasible_levels(zstar, mode=FULL):
    """Set of heaping levels consistent with a reported value.

    Non-multiples of 5 can only come from g=1; 5 and 15 from g in {1,5};
    10 and 20 from any level (capped at {1,5} in reduced mode).
    """
    if not 1 <= zstar <= TOP_CODE:
        raise ValueError(f"z*={zstar} outside 1..{TOP_CODE}")
    if zstar % 10 == 0:
        levels = (1, 5, 10)
    elif zstar % 5 == 0:
        levels = (1, 5)
    else:
        levels = (1,)
    return frozenset(levels) & frozenset(levels_for_mode(mode))


@dataclass(frozen=True)
class ObservedAnswer:
    """A reported value with its censoring flag and feasible regime set."""

    value: int
    censored: bool
    feasible_set: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.value < 1:
            raise ValueError("reported value must be >= 1")
        if self.censored != (self.value == CENSORED_VALUE):
            raise ValueError("censored flag inconsistent with value")


def _round_level(z, g):
    """Rounded value under regime g, clamped to the smallest admissible
    report (regimes 5 and 10 cannot produce values below 5 and 10)."""
    if g == 1:
        return max(1, math.floor(z + 0.5))
    if g == 5:
        return 5 * max(1, math.floor((z + 2.5) / 5.0))
    if g == 10:
        return 10 * max(1, math.floor((z + 5.5) / 10.0))
    raise ValueError(f"unknown heaping level {g}")


def coarsen(z, g, mode=FULL):
    """Apply the coarsening transformation to a latent value.

    Rounds z under regime g, top-codes results above 20 to the censored
    value 21, and attaches the feasible regime set of the report.
    """
    if z <= 0:
        raise ValueError("z must be strictly positive")
    if g not in levels_for_mode(mode):
        raise ValueError(f"level {g} not available in {mode} mode")
    value = _round_level(z, g)
    if value > TOP_CODE:
        return ObservedAnswer(CENSORED_VALUE, True, frozenset(levels_for_mode(mode)))
    return ObservedAnswer(value, False, feasible_levels(value, mode))


def coarsen_values(z, g, mode=FULL):
    """Vectorized coarsening: arrays of z and g to reported integer values
    (censored reports appear as 21)."""
    z = np.asarray(z, dtype=float)
    g = np.asarray(g)
    if np.any(z <= 0):
        raise ValueError("z must be strictly positive")
    out = np.empty(z.shape, dtype=np.int64)
    for lev, width, shift in ((1, 1.0, 0.5), (5, 5.0, 2.5), (10, 10.0, 5.5)):
        m = g == lev
        if np.any(m):
            if lev not in levels_for_mode(mode):
                raise ValueError(f"level {lev} not available in {mode} mode")
            out[m] = width * np.maximum(1, np.floor((z[m] + shift) / width)).astype(np.int64)
    out[out > TOP_CODE] = CENSORED_VALUE
    return out
