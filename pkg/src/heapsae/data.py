"""Survey/frame file loading, validation, and covariate standardization.

Input tables are delimited text with a header: ``domain``, covariate
columns ``x1..xp``, and optionally ``w`` (binary participation), ``zstar``
(reported value, 1..21, daily smokers only) and ``count`` (frame files
compressed as covariate-pattern rows).  Covariates are centered and
scaled at load time and the transform is persisted alongside fit
artifacts so population predictions reuse the sample's scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .coarsening import CENSORED_VALUE


class DataError(ValueError):
    """Schema or value violation in an input table (exit code 2 at the CLI)."""


@dataclass(frozen=True)
class Standardizer:
    """Per-column affine transform persisted from the estimation sample."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        scale = X.std(axis=0, ddof=0)
        scale = np.where(scale > 0, scale, 1.0)  # constant columns pass through
        return cls(mean=mean, scale=scale)

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.mean.shape[0]:
            raise DataError(
                f"covariate dimension {X.shape[-1]} does not match the stored transform ({self.mean.shape[0]})"
            )
        return (X - self.mean) / self.scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"], dtype=float), scale=np.asarray(d["scale"], dtype=float))


@dataclass(frozen=True)
class DomainCodec:
    """Bidirectional map between external domain labels and 0-based codes."""

    labels: np.ndarray

    @classmethod
    def fit(cls, *label_arrays):
        labels = np.unique(np.concatenate([np.asarray(a) for a in label_arrays]))
        return cls(labels=labels)

    @property
    def n_domains(self):
        return self.labels.shape[0]

    def encode(self, labels):
        labels = np.asarray(labels)
        codes = np.searchsorted(self.labels, labels)
        bad = (codes >= self.n_domains) | (self.labels[np.minimum(codes, self.n_domains - 1)] != labels)
        if np.any(bad):
            missing = np.unique(labels[bad])[:5]
            raise DataError(f"domain labels not present in the frame/codec: {missing.tolist()}")
        return codes

    def decode(self, codes):
        return self.labels[np.asarray(codes)]

    def to_dict(self):
        return {"labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(labels=np.asarray(d["labels"]))


def covariate_columns(frame):
    cols = []
    k = 1
    while f"x{k}" in frame.columns:
        cols.append(f"x{k}")
        k += 1
    if not cols:
        raise DataError("no covariate columns found (expected x1, x2, ...)")
    return cols


@dataclass
class SampleTable:
    """Validated survey sample: domain labels, raw covariates, optional
    participation and reported values (reported values imply w = 1)."""

    domain: np.ndarray
    X: np.ndarray
    w: np.ndarray | None
    zstar: np.ndarray | None  # float array with NaN where no answer

    @property
    def n(self):
        return self.domain.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def smokers(self):
        """(domain, X, zstar int) restricted to units with an answer."""
        if self.zstar is None:
            raise DataError("the sample carries no reported values (zstar column missing)")
        m = ~np.isnan(self.zstar)
        return self.domain[m], self.X[m], self.zstar[m].astype(np.int64)


def _check_numeric(frame, cols, path):
    for c in cols:
        vals = pd.to_numeric(frame[c], errors="coerce")
        bad = vals.isna() & frame[c].notna()
        if bad.any():
            row = int(np.argmax(bad.to_numpy())) + 2  # header is line 1
            raise DataError(f"{path}: column {c!r} has a non-numeric value at line {row}")
        if frame[c].isna().any() and c not in ("zstar",):
            row = int(np.argmax(frame[c].isna().to_numpy())) + 2
            raise DataError(f"{path}: column {c!r} is missing a value at line {row}")


def load_sample(path):
    frame = pd.read_csv(path)
    if "domain" not in frame.columns:
        raise DataError(f"{path}: required column 'domain' is missing")
    xcols = covariate_columns(frame)
    _check_numeric(frame, ["domain", *xcols], path)

    domain = frame["domain"].to_numpy(dtype=np.int64)
    X = frame[xcols].to_numpy(dtype=float)

    w = None
    if "w" in frame.columns:
        _check_numeric(frame, ["w"], path)
        w = frame["w"].to_numpy(dtype=float)
        bad = ~np.isin(w, (0.0, 1.0))
        if bad.any():
            raise DataError(f"{path}: column 'w' must be 0/1 (line {int(np.argmax(bad)) + 2})")
        w = w.astype(np.int64)

    zstar = None
    if "zstar" in frame.columns:
        zs = pd.to_numeric(frame["zstar"], errors="coerce").to_numpy(dtype=float)
        present = ~np.isnan(zs)
        vals = zs[present]
        if np.any(vals != np.round(vals)):
            idx = np.flatnonzero(present)[np.argmax(vals != np.round(vals))]
            raise DataError(f"{path}: column 'zstar' must be integer (line {int(idx) + 2})")
        out_of_range = present & ((zs < 1) | (zs > CENSORED_VALUE))
        if out_of_range.any():
            row = int(np.argmax(out_of_range)) + 2
            raise DataError(
                f"{path}: reported value outside 1..{CENSORED_VALUE} at line {row}"
            )
        if w is not None:
            conflict = present & (w == 0)
            if conflict.any():
                row = int(np.argmax(conflict)) + 2
                raise DataError(f"{path}: zstar present for a unit with w=0 at line {row}")
        zstar = zs

    return SampleTable(domain=domain, X=X, w=w, zstar=zstar)


@dataclass
class FrameTable:
    """Population frame: unit rows, or (domain, pattern, count) rows."""

    domain: np.ndarray
    X: np.ndarray
    count: np.ndarray

    @property
    def p(self):
        return self.X.shape[1]

    def domain_sizes(self, codec: DomainCodec):
        codes = codec.encode(self.domain)
        return np.bincount(codes, weights=self.count, minlength=codec.n_domains).astype(np.int64)


def load_frame(path):
    frame = pd.read_csv(path)
    if "domain" not in frame.columns:
        raise DataError(f"{path}: required column 'domain' is missing")
    xcols = covariate_columns(frame)
    _check_numeric(frame, ["domain", *xcols], path)
    if "count" in frame.columns:
        _check_numeric(frame, ["count"], path)
        count = frame["count"].to_numpy(dtype=np.int64)
        if np.any(count < 0):
            raise DataError(f"{path}: negative count")
    else:
        count = np.ones(len(frame), dtype=np.int64)
    return FrameTable(
        domain=frame["domain"].to_numpy(dtype=np.int64),
        X=frame[xcols].to_numpy(dtype=float),
        count=count,
    )
