"""Synthetic-population experiment: data generation, scenario heaping,
repeated estimation with four models, and performance metrics.

One synthetic population (two-component lognormal mixture with a binary
covariate and domain effects) is held fixed; each replication draws a
stratified sample, regenerates the coarsened reports under the active
scenario, fits the chosen estimators, and produces per-domain posterior
summaries of the mean intensity and the heavy-smoker share.  Metrics
(relative bias, relative RMSE, 90% coverage, interval width) compare
point estimates and intervals to the population truths.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

from . import __version__
from .coarsening import FULL, HeapingParams, coarsen_values, heaping_probs, heaping_probs_discrete
from .data import Standardizer
from .fitting import MODEL_CODES, fit_intensity
from .predictor import HS_THRESHOLD, PopulationFrame, direct_estimates, estimates_frame, hb_intensity_simulation
from .sampler import ChainConfig, chain_rng

_REALM_POP, _REALM_SAMPLE, _REALM_HEAP, _REALM_FIT, _REALM_PRED = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class PopulationSpec:
    """Design of the synthetic population (defaults mirror the study)."""

    group_sizes: tuple = (700, 1000, 1300)
    domains_per_group: int = 10
    covariate_prob: float = 0.4
    mixing_intercept: float = 0.4
    mixing_slope: float = 0.2
    intercept1: float = 1.7
    intercept2: float = 2.7
    slope: float = 0.05
    domain_sd: float = 0.25
    sigma1: float = 0.5
    sigma2: float = 0.25

    @property
    def n_domains(self):
        return len(self.group_sizes) * self.domains_per_group

    def domain_sizes(self):
        return np.repeat(np.asarray(self.group_sizes, dtype=np.int64), self.domains_per_group)


#: heaping scenario definitions: (mode, parameter values)
SCENARIOS = {
    1: HeapingParams.reduced(2.0, 0.0),
    2: HeapingParams.reduced(5.5, -3.2),
    3: HeapingParams.full(0.5, 2.5, 0.0),
    4: HeapingParams.full(7.0, 9.7, -3.4),
}


@dataclass
class Population:
    spec: PopulationSpec
    seed: int
    domain: np.ndarray
    x: np.ndarray
    component: np.ndarray
    z: np.ndarray
    domain_effects: np.ndarray

    @property
    def n(self):
        return self.domain.shape[0]

    def sizes(self):
        return self.spec.domain_sizes()

    def truths(self):
        """Exact per-domain mean intensity and heavy-smoker share."""
        D = self.spec.n_domains
        zbar = np.bincount(self.domain, weights=self.z, minlength=D) / self.sizes()
        heavy = np.bincount(self.domain, weights=(self.z >= HS_THRESHOLD).astype(float), minlength=D) / self.sizes()
        return pd.DataFrame({"domain": np.arange(D), "zbar": zbar, "hsbar": heavy})

    def frame(self):
        return PopulationFrame.from_units(self.domain, self.x[:, None], self.spec.n_domains).compress()


def generate_population(spec: PopulationSpec, seed):
    """Draw the synthetic population (fixed across replications)."""
    rng = chain_rng(seed, _REALM_POP)
    sizes = spec.domain_sizes()
    domain = np.repeat(np.arange(spec.n_domains), sizes)
    n = domain.shape[0]
    x = rng.binomial(1, spec.covariate_prob, n).astype(float)
    u = rng.normal(0.0, spec.domain_sd, spec.n_domains)
    p_first = expit(spec.mixing_intercept + spec.mixing_slope * x)
    component = np.where(rng.uniform(size=n) < p_first, 1, 2)
    loc = np.where(component == 1, spec.intercept1, spec.intercept2) + spec.slope * x + u[domain]
    sd = np.where(component == 1, spec.sigma1, spec.sigma2)
    z = np.exp(rng.normal(loc, sd))
    return Population(spec=spec, seed=seed, domain=domain, x=x, component=component, z=z, domain_effects=u)


def draw_sample(population: Population, fraction, seed):
    """Stratified SRS without replacement; n_d rounds half-up."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("sampling fraction must lie in (0, 1]")
    rng = chain_rng(seed, _REALM_SAMPLE)
    picks = []
    for d, size in enumerate(population.sizes()):
        n_d = int(np.floor(fraction * size + 0.5))
        idx = np.flatnonzero(population.domain == d)
        picks.append(rng.choice(idx, size=n_d, replace=False))
    return np.sort(np.concatenate(picks))


def draw_heaping_levels(z, scenario: HeapingParams, seed, discretized=False):
    """Draw one heaping level per latent intensity.

    The data-generating mechanism evaluates the level probabilities at
    the latent value itself; ``discretized=True`` switches to the
    piecewise-constant probabilities the fitted likelihood uses (the
    choice matters only when the slope is nonzero).
    """
    z = np.asarray(z, dtype=float)
    rng = chain_rng(seed, _REALM_HEAP)
    probs = heaping_probs_discrete(z, scenario) if discretized else heaping_probs(z, scenario)
    u = rng.uniform(size=z.shape[0])
    cum = np.cumsum(probs, axis=1)
    level_idx = (u[:, None] > cum[:, :-1]).sum(axis=1)
    levels = np.asarray((1, 5, 10) if scenario.mode == FULL else (1, 5))
    return levels[level_idx]


def apply_heaping(z, scenario: HeapingParams, seed, discretized=False):
    """Coarsen latent intensities under freshly drawn heaping levels."""
    g = draw_heaping_levels(z, scenario, seed, discretized=discretized)
    return coarsen_values(np.asarray(z, dtype=float), g, scenario.mode)


@dataclass(frozen=True)
class StudyConfig:
    """Configuration of a full study run.

    The default seed yields a population whose smallest per-domain
    heavy-smoker share is strictly positive, keeping the relative
    metrics well defined in every domain.
    """

    seed: int = 7
    replications: int = 25
    scenarios: tuple = (1, 2, 3, 4)
    models: tuple = tuple(MODEL_CODES)
    sample_fraction: float = 0.03
    population: PopulationSpec = field(default_factory=PopulationSpec)
    chains: int = 4
    iterations: int = 1000
    warmup: int = 500
    max_depth: int = 6
    target_acceptance: float = 0.7
    rhat_threshold: float = 1.05
    direct_replications: int = 500
    workers: int = 1

    @classmethod
    def full_budget(cls, **kwargs):
        """The reference protocol: 500 replications, 4 x 2000/1000 chains."""
        kwargs.setdefault("replications", 500)
        kwargs.setdefault("iterations", 2000)
        kwargs.setdefault("warmup", 1000)
        kwargs.setdefault("max_depth", 10)
        kwargs.setdefault("target_acceptance", 0.8)
        return cls(**kwargs)

    def chain_config(self, seed):
        return ChainConfig(
            chains=self.chains,
            iterations=self.iterations,
            warmup=self.warmup,
            seed=seed,
            max_depth=self.max_depth,
            target_acceptance=self.target_acceptance,
        )


def _derive_seed(base, *key):
    """64-bit stream label for a (scenario, replication, ...) cell."""
    ss = np.random.SeedSequence(entropy=int(base) & ((1 << 64) - 1), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def run_replication(population: Population, sample_idx, scenario_id, models, config: StudyConfig, replication):
    """Fit the requested estimators on one replication's coarsened sample.

    Returns one row per (model, domain, indicator) with the point
    estimate, 90% interval, and convergence flag; fits whose maximum
    split-Rhat breaches the threshold are marked excluded.
    """
    scenario = SCENARIOS[scenario_id]
    dom_s = population.domain[sample_idx]
    x_s = population.x[sample_idx]
    z_s = population.z[sample_idx]
    zstar = apply_heaping(z_s, scenario, _derive_seed(config.seed, _REALM_HEAP, scenario_id, replication))

    std = Standardizer.fit(x_s[:, None])
    X_std = std.apply(x_s[:, None])
    frame = population.frame()
    frame_std = PopulationFrame(
        domain=frame.domain, X=std.apply(frame.X), count=frame.count, n_domains=frame.n_domains
    )
    truths = population.truths()

    rows = []
    for model in models:
        fit_seed = _derive_seed(config.seed, _REALM_FIT, scenario_id, replication, MODEL_CODES.index(model))
        fit = fit_intensity(
            dom_s,
            X_std,
            zstar,
            population.spec.n_domains,
            model=model,
            mode=scenario.mode,
            config=config.chain_config(fit_seed),
        )
        max_rhat = fit.draws.max_rhat()
        excluded = bool(max_rhat >= config.rhat_threshold)
        pred_seed = _derive_seed(config.seed, _REALM_PRED, scenario_id, replication, MODEL_CODES.index(model))
        zbar, hsbar = hb_intensity_simulation(frame_std, fit.param_draws(), pred_seed)
        for est in zbar + hsbar:
            rows.append(
                {
                    "scenario": scenario_id,
                    "replication": replication,
                    "model": model,
                    "indicator": est.indicator,
                    "domain": est.domain,
                    "point": est.point,
                    "lo": est.ci90[0],
                    "hi": est.ci90[1],
                    "truth": float(truths[est.indicator][est.domain]),
                    "max_rhat": max_rhat,
                    "divergences": fit.draws.divergences(),
                    "excluded": excluded,
                }
            )
    return pd.DataFrame(rows)


def compute_metrics(estimates: pd.DataFrame, truths: pd.DataFrame | None = None):
    """Per-domain and domain-averaged RB / RRMSE / Cov / W.

    Excluded replications are dropped; the retained count is reported.
    Returns (per-domain long table, domain-averaged wide table).
    """
    est = estimates[~estimates["excluded"]].copy()
    if truths is not None:
        t = truths.melt("domain", var_name="indicator", value_name="truth")
        est = est.drop(columns=["truth"], errors="ignore").merge(t, on=["domain", "indicator"])
    rows = []
    for (scen, model, ind, dom), g in est.groupby(["scenario", "model", "indicator", "domain"]):
        truth = float(g["truth"].iloc[0])
        rel = g["point"] / truth - 1.0
        rows.append(
            {
                "scenario": scen,
                "model": model,
                "indicator": ind,
                "domain": dom,
                "rb": float(rel.mean()),
                "rrmse": float(np.sqrt(np.mean(rel**2))),
                "cov": float(np.mean((g["lo"] <= truth) & (truth <= g["hi"]))),
                "width": float(np.mean(g["hi"] - g["lo"])),
                "n_reps": len(g),
            }
        )
    columns = ["scenario", "model", "indicator", "domain", "rb", "rrmse", "cov", "width", "n_reps"]
    per_domain = pd.DataFrame(rows, columns=columns)
    avg = (
        per_domain.groupby(["scenario", "model", "indicator"])
        .agg(arb=("rb", "mean"), arrmse=("rrmse", "mean"), acov=("cov", "mean"), aw=("width", "mean"), n_reps=("n_reps", "min"))
        .reset_index()
    )
    return per_domain, avg


def summary_table(avg: pd.DataFrame):
    """Wide per-(scenario, model) summary with one metric block per
    indicator, in the layout of the study's headline table."""
    if avg.empty:
        return pd.DataFrame(columns=["scenario", "model"])
    wide = avg.pivot_table(
        index=["scenario", "model"], columns="indicator", values=["arb", "arrmse", "acov", "aw"]
    )
    wide.columns = [f"{metric}_{ind}" for metric, ind in wide.columns]
    order = [
        c
        for ind in ("zbar", "hsbar")
        for c in (f"arb_{ind}", f"arrmse_{ind}", f"acov_{ind}", f"aw_{ind}")
        if f"{c}" in wide.columns
    ]
    wide = wide[order].reset_index()
    wide["model"] = pd.Categorical(wide["model"], categories=list(MODEL_CODES), ordered=True)
    return wide.sort_values(["scenario", "model"]).reset_index(drop=True)


def run_direct_study(population: Population, scenarios, replications, fraction, seed):
    """Design-based estimators over cheap (no-MCMC) replications.

    For each replication the true-z direct estimator is compared with its
    coarsened counterpart under every scenario; reported values enter at
    face value (the top-code as 21).
    """
    truths = population.truths()
    sizes = population.sizes()
    D = population.spec.n_domains
    rows = []
    for r in range(replications):
        sample_idx = draw_sample(population, fraction, _derive_seed(seed, _REALM_SAMPLE, 0, r))
        dom_s = population.domain[sample_idx]
        z_s = population.z[sample_idx]
        base = direct_estimates(dom_s, z_s, D, sizes=sizes)
        variants = {"true-z": base}
        for s in scenarios:
            zstar = apply_heaping(z_s, SCENARIOS[s], _derive_seed(seed, _REALM_HEAP, s, r))
            variants[f"scenario-{s}"] = direct_estimates(dom_s, zstar.astype(float), D, sizes=sizes)
        for name, table in variants.items():
            for _, row in table.iterrows():
                d = int(row["domain"])
                for ind, se_col in (("zbar", "zbar_se"), ("hsbar", "hsbar_se")):
                    truth = float(truths[ind][d])
                    point = row[ind]
                    se = row[se_col]
                    rows.append(
                        {
                            "variant": name,
                            "replication": r,
                            "domain": d,
                            "indicator": ind,
                            "point": point,
                            "lo": point - 1.645 * se if np.isfinite(se) else np.nan,
                            "hi": point + 1.645 * se if np.isfinite(se) else np.nan,
                            "truth": truth,
                        }
                    )
    est = pd.DataFrame(rows).dropna(subset=["point"])
    out = []
    for (variant, ind, d), g in est.groupby(["variant", "indicator", "domain"]):
        truth = float(g["truth"].iloc[0])
        rel = g["point"] / truth - 1.0
        covered = (g["lo"] <= truth) & (truth <= g["hi"])
        out.append(
            {
                "variant": variant,
                "indicator": ind,
                "domain": d,
                "rb": float(rel.mean()),
                "rrmse": float(np.sqrt(np.mean(rel**2))),
                "cov": float(covered.mean()) if g["lo"].notna().all() else np.nan,
                "n_reps": len(g),
            }
        )
    per_domain = pd.DataFrame(out)
    avg = (
        per_domain.groupby(["variant", "indicator"])
        .agg(arb=("rb", "mean"), arrmse=("rrmse", "mean"), acov=("cov", "mean"))
        .reset_index()
    )
    return per_domain, avg


def _replication_task(args):
    population, scenario_id, models, config, replication = args
    sample_idx = draw_sample(
        population, config.sample_fraction, _derive_seed(config.seed, _REALM_SAMPLE, 0, replication)
    )
    return scenario_id, replication, run_replication(population, sample_idx, scenario_id, models, config, replication)


def run_study(config: StudyConfig, out_dir, resume=True, progress=None):
    """Run the full study with per-cell checkpointing.

    Writes raw per-replication estimate tables under ``out_dir/raws``,
    then the per-domain metric table, the wide summary, the direct
    estimator companion, and a manifest.  With ``resume`` (default),
    existing raw files are reused, so an interrupted run continues where
    it stopped and reproduces the uninterrupted results (replication
    seeds depend only on indices).
    """
    out = Path(out_dir)
    raws = out / "raws"
    raws.mkdir(parents=True, exist_ok=True)

    population = generate_population(config.population, _derive_seed(config.seed, _REALM_POP))
    truths = population.truths()

    tasks = []
    for s in config.scenarios:
        for r in range(config.replications):
            path = raws / f"scenario{s}_rep{r:04d}.csv"
            if resume and path.exists():
                continue
            tasks.append((population, s, tuple(config.models), config, r))

    def _store(scenario_id, replication, frame):
        path = raws / f"scenario{scenario_id}_rep{replication:04d}.csv"
        tmp = path.with_suffix(".tmp")
        frame.to_csv(tmp, index=False)
        tmp.rename(path)
        if progress:
            progress(scenario_id, replication)

    if config.workers > 1 and tasks:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for s, r, frame in pool.map(_replication_task, tasks):
                _store(s, r, frame)
    else:
        for t in tasks:
            s, r, frame = _replication_task(t)
            _store(s, r, frame)

    pieces = []
    for s in config.scenarios:
        for r in range(config.replications):
            pieces.append(pd.read_csv(raws / f"scenario{s}_rep{r:04d}.csv"))
    estimates = pd.concat(pieces, ignore_index=True)
    per_domain, avg = compute_metrics(estimates, truths)
    wide = summary_table(avg)
    direct_domain, direct_avg = run_direct_study(
        population, config.scenarios, config.direct_replications, config.sample_fraction,
        _derive_seed(config.seed, 99),
    )

    estimates.to_csv(out / "estimates.csv", index=False)
    per_domain.to_csv(out / "metrics_by_domain.csv", index=False)
    avg.to_csv(out / "metrics_summary.csv", index=False)
    wide.to_csv(out / "summary_table.csv", index=False)
    direct_domain.to_csv(out / "direct_metrics_by_domain.csv", index=False)
    direct_avg.to_csv(out / "direct_metrics_summary.csv", index=False)
    truths.to_csv(out / "truths.csv", index=False)

    manifest = {
        "seed": config.seed,
        "replications": config.replications,
        "scenarios": list(config.scenarios),
        "models": list(config.models),
        "budget": {
            "chains": config.chains,
            "iterations": config.iterations,
            "warmup": config.warmup,
            "max_depth": config.max_depth,
            "target_acceptance": config.target_acceptance,
        },
        "rhat_threshold": config.rhat_threshold,
        "excluded": int(estimates.drop_duplicates(["scenario", "replication", "model"])["excluded"].sum()),
        "version": __version__,
    }
    tmp = out / "study_manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2))
    tmp.rename(out / "study_manifest.json")
    return estimates, per_domain, avg, wide
