"""MCMC engine: No-U-Turn sampler with warm-up adaptation, plus
convergence diagnostics and the posterior-draw container.

The sampler works on an unconstrained parameterization supplied by a
target object exposing ``dim``, ``logp_and_grad(x)`` and
``initial_point(rng)``.  Chains use independent counter-based RNG streams
derived from (seed, chain index), so results are bit-identical whether
chains run serially or in parallel.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import ndtri
from scipy.stats import rankdata

_DIVERGENCE_THRESHOLD = 1000.0


class SamplerError(RuntimeError):
    """Raised when the target is unusable (non-finite density/gradient at
    initialization); carries a diagnostic state dump."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


@dataclass(frozen=True)
class ChainConfig:
    """Multi-chain run configuration; ``iterations`` includes warm-up."""

    chains: int = 4
    iterations: int = 2000
    warmup: int = 1000
    seed: int = 0
    target_acceptance: float = 0.8
    max_depth: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("need at least one chain")
        if not 0 <= self.warmup < self.iterations:
            raise ValueError("warmup must be smaller than iterations")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ValueError("target_acceptance must lie in (0, 1)")

    @property
    def kept(self):
        return self.iterations - self.warmup


def chain_rng(seed, *key):
    """Counter-based generator for a (seed, key...) stream."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# NUTS
# ---------------------------------------------------------------------------


class _Leaf:
    __slots__ = ("x", "p", "logp", "grad")

    def __init__(self, x, p, logp, grad):
        self.x = x
        self.p = p
        self.logp = logp
        self.grad = grad


def _leapfrog(target, leaf, eps, inv_mass):
    p_half = leaf.p + 0.5 * eps * leaf.grad
    x_new = leaf.x + eps * inv_mass * p_half
    logp, grad = target.logp_and_grad(x_new)
    p_new = p_half + 0.5 * eps * grad
    return _Leaf(x_new, p_new, logp, grad)


def _hamiltonian(leaf, inv_mass):
    return leaf.logp - 0.5 * float(np.dot(leaf.p, inv_mass * leaf.p))


def _uturn(x_plus, p_plus, x_minus, p_minus, inv_mass):
    dx = x_plus - x_minus
    return (
        float(np.dot(dx, inv_mass * p_minus)) < 0.0
        or float(np.dot(dx, inv_mass * p_plus)) < 0.0
    )


class _Tree:
    """Subtree summary for multinomial NUTS."""

    __slots__ = ("minus", "plus", "proposal", "logw", "n_steps", "sum_accept", "divergent", "turned")

    def __init__(self, minus, plus, proposal, logw, n_steps, sum_accept, divergent, turned):
        self.minus = minus
        self.plus = plus
        self.proposal = proposal
        self.logw = logw
        self.n_steps = n_steps
        self.sum_accept = sum_accept
        self.divergent = divergent
        self.turned = turned


def _build_tree(target, leaf, depth, direction, eps, inv_mass, h0, rng):
    if depth == 0:
        new = _leapfrog(target, leaf, direction * eps, inv_mass)
        h = _hamiltonian(new, inv_mass)
        dh = h - h0
        divergent = not math.isfinite(dh) or dh < -_DIVERGENCE_THRESHOLD
        accept = 0.0 if not math.isfinite(dh) else min(1.0, math.exp(min(dh, 0.0)))
        logw = dh if math.isfinite(dh) else -math.inf
        return _Tree(new, new, new, logw, 1, accept, divergent, False)

    first = _build_tree(target, leaf, depth - 1, direction, eps, inv_mass, h0, rng)
    if first.divergent or first.turned:
        return first
    edge = first.plus if direction > 0 else first.minus
    second = _build_tree(target, edge, depth - 1, direction, eps, inv_mass, h0, rng)

    n_steps = first.n_steps + second.n_steps
    sum_accept = first.sum_accept + second.sum_accept
    if second.divergent or second.turned:
        return _Tree(first.minus, first.plus, first.proposal, first.logw, n_steps, sum_accept, second.divergent, second.turned)

    logw = np.logaddexp(first.logw, second.logw)
    proposal = first.proposal
    if math.log(rng.uniform()) < second.logw - logw:
        proposal = second.proposal
    minus = second.minus if direction < 0 else first.minus
    plus = second.plus if direction > 0 else first.plus
    turned = _uturn(plus.x, plus.p, minus.x, minus.p, inv_mass)
    return _Tree(minus, plus, proposal, logw, n_steps, sum_accept, False, turned)


def _nuts_step(target, leaf, eps, inv_mass, max_depth, rng):
    """One NUTS transition; returns (new leaf, accept statistic, divergent)."""
    p0 = rng.standard_normal(leaf.x.shape[0]) / np.sqrt(inv_mass)
    current = _Leaf(leaf.x, p0, leaf.logp, leaf.grad)
    h0 = _hamiltonian(current, inv_mass)

    minus = plus = current
    proposal = current
    logw = 0.0
    sum_accept = 0.0
    n_steps = 0
    divergent = False

    for depth in range(max_depth):
        direction = 1 if rng.uniform() < 0.5 else -1
        edge = plus if direction > 0 else minus
        sub = _build_tree(target, edge, depth, direction, eps, inv_mass, h0, rng)
        sum_accept += sub.sum_accept
        n_steps += sub.n_steps
        if sub.divergent or sub.turned:
            divergent = sub.divergent
            break
        # biased progressive sampling toward the new subtree
        if math.log(rng.uniform()) < sub.logw - logw:
            proposal = sub.proposal
        if direction > 0:
            plus = sub.plus
        else:
            minus = sub.minus
        logw = np.logaddexp(logw, sub.logw)
        if _uturn(plus.x, plus.p, minus.x, minus.p, inv_mass):
            break

    accept_stat = sum_accept / max(n_steps, 1)
    return proposal, accept_stat, divergent


def _find_initial_step(target, leaf, inv_mass, rng):
    eps = 1.0
    p0 = rng.standard_normal(leaf.x.shape[0]) / np.sqrt(inv_mass)
    start = _Leaf(leaf.x, p0, leaf.logp, leaf.grad)
    h0 = _hamiltonian(start, inv_mass)
    new = _leapfrog(target, start, eps, inv_mass)
    dh = _hamiltonian(new, inv_mass) - h0
    if not math.isfinite(dh):
        dh = -math.inf
    direction = 1 if dh > math.log(0.5) else -1
    for _ in range(60):
        eps *= 2.0**direction
        new = _leapfrog(target, start, eps, inv_mass)
        dh = _hamiltonian(new, inv_mass) - h0
        if not math.isfinite(dh):
            dh = -math.inf
        if (direction == 1 and dh <= math.log(0.5)) or (direction == -1 and dh >= math.log(0.5)):
            break
    return eps


def _adaptation_windows(warmup):
    """Stan-style warm-up schedule: (fast start, expanding slow windows,
    fast end).  Returns the iteration indices ending each slow window."""
    if warmup < 20:
        return 0, [], warmup
    init_buffer = min(75, max(1, int(0.15 * warmup)))
    term_buffer = min(50, max(1, int(0.10 * warmup)))
    slow = warmup - init_buffer - term_buffer
    ends = []
    size = max(25, int(0.075 * warmup))
    pos = init_buffer
    while slow > 0:
        if size >= slow or size * 2 > slow:
            size = slow
        pos += size
        ends.append(pos)
        slow -= size
        size *= 2
    return init_buffer, ends, warmup


@dataclass
class _DualAveraging:
    target: float
    mu: float
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    count: int = 0
    h_bar: float = 0.0
    log_eps_bar: float = 0.0

    def update(self, accept_stat):
        self.count += 1
        frac = 1.0 / (self.count + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_stat)
        log_eps = self.mu - math.sqrt(self.count) / self.gamma * self.h_bar
        eta = self.count ** (-self.kappa)
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar
        return math.exp(log_eps)

    def restart(self, eps):
        # re-anchor at the adapted step itself: the 10x overshoot anchor is
        # only useful for the initial coarse search
        self.mu = math.log(eps)
        self.count = 0
        self.h_bar = 0.0
        self.log_eps_bar = math.log(eps)


def _run_chain(target, config: ChainConfig, chain_index):
    rng = chain_rng(config.seed, chain_index)
    x0 = np.asarray(target.initial_point(rng), dtype=float)
    logp, grad = target.logp_and_grad(x0)
    if not math.isfinite(logp):
        raise SamplerError(
            "target density is not finite at the initialization point",
            state={"chain": chain_index, "x0": x0, "logp": logp},
        )
    if not np.all(np.isfinite(grad)):
        raise SamplerError(
            "target gradient is not finite at the initialization point",
            state={"chain": chain_index, "x0": x0, "grad": grad},
        )

    dim = x0.shape[0]
    inv_mass = np.ones(dim)
    leaf = _Leaf(x0, np.zeros(dim), logp, grad)

    eps = _find_initial_step(target, leaf, inv_mass, rng)
    da = _DualAveraging(target=config.target_acceptance, mu=math.log(10.0 * eps))
    init_buffer, window_ends, warmup = _adaptation_windows(config.warmup)
    window_draws = []

    kept = np.empty((config.kept, dim))
    divergences = 0
    accept_sum = 0.0

    for it in range(config.iterations):
        leaf, accept_stat, divergent = _nuts_step(target, leaf, eps, inv_mass, config.max_depth, rng)
        if it < warmup:
            eps = da.update(accept_stat)
            if window_ends and it >= init_buffer:
                window_draws.append(leaf.x)
            if window_ends and (it + 1) == window_ends[0]:
                sample = np.asarray(window_draws)
                n = sample.shape[0]
                var = sample.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
                inv_mass = n / (n + 5.0) * var + 1e-3 * (5.0 / (n + 5.0))
                window_draws = []
                window_ends.pop(0)
                da.restart(eps)
            if (it + 1) == warmup:
                eps = math.exp(da.log_eps_bar)
        else:
            if divergent:
                divergences += 1
            accept_sum += accept_stat
            kept[it - warmup] = leaf.x

    return kept, {
        "chain": chain_index,
        "step_size": eps,
        "divergences": divergences,
        "mean_accept": accept_sum / config.kept,
    }


def _run_chain_star(args):
    return _run_chain(*args)


@dataclass
class RawDraws:
    """Post-warmup unconstrained draws: (chains, kept, dim)."""

    draws: np.ndarray
    stats: list


def run_mcmc(target, config: ChainConfig):
    """Run NUTS chains on a target over unconstrained coordinates.

    Chains are merged in chain order, so the result does not depend on
    ``config.workers``.
    """
    jobs = [(target, config, c) for c in range(config.chains)]
    if config.workers > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, config.chains)) as pool:
            results = list(pool.map(_run_chain_star, jobs))
    else:
        results = [_run_chain_star(j) for j in jobs]
    draws = np.stack([r[0] for r in results])
    stats = [r[1] for r in results]
    return RawDraws(draws=draws, stats=stats)


# ---------------------------------------------------------------------------
# convergence diagnostics
# ---------------------------------------------------------------------------


def _split_chains(draws):
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    m, n = draws.shape
    if m < 2:
        raise ValueError("need at least two chains")
    if n < 4:
        raise ValueError("need at least four retained draws per chain")
    half = n // 2
    return np.vstack([draws[:, :half], draws[:, n - half :]])


def _basic_rhat(chains):
    m, n = chains.shape
    means = chains.mean(axis=1)
    w = chains.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    if w <= 0.0:
        return 1.0 if b <= 0.0 else math.inf
    return math.sqrt(var_plus / w)


def split_rhat(draws):
    """Rank-normalized split-Rhat of one parameter, draws (chains, n)."""
    chains = _split_chains(draws)
    flat = rankdata(chains, method="average").reshape(chains.shape)
    z = ndtri((flat - 0.375) / (chains.size + 0.25))
    return _basic_rhat(z)


def _autocovariance(x):
    n = x.shape[0]
    xc = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n].real
    return acov / n


def ess(draws):
    """Effective sample size via Geyer's initial monotone sequence."""
    chains = _split_chains(draws)
    m, n = chains.shape
    acov = np.stack([_autocovariance(c) for c in chains])
    mean_acov = acov.mean(axis=0)
    w = chains.var(axis=1, ddof=1).mean()
    var_plus = (n - 1) / n * w + chains.mean(axis=1).var(ddof=1)
    if var_plus <= 0.0:
        return float(m * n)
    rho = 1.0 - (w - mean_acov) / var_plus
    rho[0] = 1.0

    # Geyer: sum of adjacent pairs, truncated at the first negative pair,
    # then forced monotone nonincreasing.
    tau = 0.0
    prev = math.inf
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair < 0.0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
        k += 1
    tau -= 1.0
    tau = max(tau, 1.0 / math.log10(m * n + 10.0), 1e-8)
    return float(m * n / tau)


# ---------------------------------------------------------------------------
# draw container
# ---------------------------------------------------------------------------


@dataclass
class PosteriorDraws:
    """Retained constrained draws with chain/iteration labels.

    ``array`` has shape (chains, kept, n_params); columns follow
    ``names`` (flattened vectors carry index suffixes like ``u_mu[3]``).
    """

    names: list
    array: np.ndarray
    stats: list = field(default_factory=list)

    def __post_init__(self):
        if self.array.ndim != 3 or self.array.shape[2] != len(self.names):
            raise ValueError("draw array must be (chains, kept, n_params)")

    @property
    def n_chains(self):
        return self.array.shape[0]

    @property
    def n_kept(self):
        return self.array.shape[1]

    @property
    def n_draws(self):
        return self.array.shape[0] * self.array.shape[1]

    def _col(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def pooled(self, name=None):
        """Draws pooled over chains: (B,) for one name or (B, k) for all."""
        flat = self.array.reshape(-1, len(self.names))
        return flat if name is None else flat[:, self._col(name)]

    def per_chain(self, name):
        return self.array[:, :, self._col(name)]

    def vector(self, prefix):
        """Pooled draws (B, len) of a flattened vector parameter."""
        cols = [i for i, n in enumerate(self.names) if n.startswith(prefix + "[")]
        if not cols:
            raise KeyError(f"no components named {prefix}[...]")
        return self.array.reshape(-1, len(self.names))[:, cols]

    def rhat(self, name):
        return split_rhat(self.per_chain(name))

    def ess(self, name):
        return ess(self.per_chain(name))

    def diagnostics(self):
        rows = [
            {
                "parameter": n,
                "mean": float(self.pooled(n).mean()),
                "sd": float(self.pooled(n).std(ddof=1)),
                "rhat": self.rhat(n),
                "ess": self.ess(n),
            }
            for n in self.names
        ]
        return pd.DataFrame(rows)

    def max_rhat(self):
        return max(self.rhat(n) for n in self.names)

    def divergences(self):
        return int(sum(s.get("divergences", 0) for s in self.stats))

    def to_frame(self):
        c, k, _ = self.array.shape
        frame = pd.DataFrame(self.array.reshape(-1, len(self.names)), columns=self.names)
        frame.insert(0, "iteration", np.tile(np.arange(k), c))
        frame.insert(0, "chain", np.repeat(np.arange(c), k))
        return frame

    def save(self, path):
        """Write draws as delimited text (.csv) or self-describing binary
        (.npz), selected by extension."""
        path = str(path)
        if path.endswith(".npz"):
            np.savez_compressed(path, names=np.array(self.names), array=self.array)
        elif path.endswith(".csv"):
            self.to_frame().to_csv(path, index=False)
        else:
            raise ValueError("draw files use .csv or .npz")

    @classmethod
    def load(cls, path):
        path = str(path)
        if path.endswith(".npz"):
            with np.load(path, allow_pickle=False) as f:
                return cls(names=[str(n) for n in f["names"]], array=f["array"])
        if path.endswith(".csv"):
            frame = pd.read_csv(path)
            names = [c for c in frame.columns if c not in ("chain", "iteration")]
            chains = int(frame["chain"].max()) + 1
            kept = int(frame["iteration"].max()) + 1
            order = frame.sort_values(["chain", "iteration"])
            return cls(names=names, array=order[names].to_numpy().reshape(chains, kept, len(names)))
        raise ValueError("draw files use .csv or .npz")
