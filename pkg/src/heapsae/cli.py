"""Command-line entry point wiring ingestion, fitting, prediction,
checking, and study orchestration into reproducible batch runs.

Every command is a pure function of (inputs, flags, seed): outputs carry
a manifest with input digests, and artifact-consuming commands refuse to
run when a digest no longer matches (stale-artifact guard).  Exit codes:
0 success, 1 usage/config error, 2 data validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__, backend_name
from .coarsening import FULL, REDUCED
from .data import DataError, DomainCodec, Standardizer, load_frame, load_sample
from .fitting import (
    MODEL_CODES,
    IntensitySpec,
    fit_intensity,
    fit_participation,
    intensity_param_draws,
    participation_param_draws,
)
from .loo import loo_compare, psis_loo
from .predictor import (
    PopulationFrame,
    direct_estimates,
    estimates_frame,
    frame_remainder,
    hb_intensity_simulation,
    hb_intensity_survey,
    hb_wbar,
    ppc_stats,
)
from .sampler import ChainConfig, PosteriorDraws, SamplerError
from .simstudy import PopulationSpec, StudyConfig, compute_metrics, generate_population, run_study, summary_table

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, EXIT_USAGE)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_dir, command, args_dict, inputs, outputs, started, extra=None):
    manifest = {
        "command": command,
        "arguments": {k: str(v) for k, v in args_dict.items() if v is not None},
        "config_hash": hashlib.sha256(
            json.dumps(args_dict, sort_keys=True, default=str).encode()
        ).hexdigest(),
        "version": __version__,
        "backend": backend_name,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "input_digests": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / "manifest.json"
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2))
    tmp.rename(path)
    return path


def _check_digest(fit_dir, path, recorded):
    actual = _sha256(path)
    if actual != recorded:
        raise CliError(
            f"{path} does not match the digest recorded in {fit_dir}/manifest.json "
            f"(stale artifacts?): {actual[:12]} != {recorded[:12]}",
            EXIT_DATA,
        )


def _now():
    return datetime.now(timezone.utc).isoformat()


def _chain_config(args):
    return ChainConfig(
        chains=args.chains,
        iterations=args.iters,
        warmup=args.warmup,
        seed=args.seed,
        target_acceptance=args.target_accept,
        max_depth=args.max_depth,
        workers=args.workers,
    )


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    spec = PopulationSpec()
    pop = generate_population(spec, args.seed)
    units = pd.DataFrame(
        {
            "unit": np.arange(pop.n),
            "domain": pop.domain + 1,
            "x1": pop.x,
            "z": pop.z,
            "component": pop.component,
        }
    )
    truths = pop.truths()
    truths["domain"] = truths["domain"] + 1
    sizes = pop.sizes()
    frame = pd.DataFrame(
        {"domain": pop.domain + 1, "x1": pop.x}
    ).value_counts().rename("count").reset_index()
    units.to_csv(out / "population.csv", index=False)
    truths.to_csv(out / "truths.csv", index=False)
    frame.sort_values(["domain", "x1"]).to_csv(out / "frame.csv", index=False)
    _write_manifest(
        out, "simulate", vars(args), [], ["population.csv", "truths.csv", "frame.csv"], started,
        extra={"n_units": int(pop.n), "n_domains": int(spec.n_domains), "domain_sizes": sizes.tolist()},
    )
    print(f"wrote population of {pop.n} units in {spec.n_domains} domains to {out}")
    return 0


def cmd_fit(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    sample = load_sample(args.data)
    frame = load_frame(args.frame)
    codec = DomainCodec.fit(frame.domain)
    codec.encode(sample.domain)  # every sampled domain must exist in the frame

    dom_sm, X_sm, zstar = sample.smokers()
    std = Standardizer.fit(X_sm)
    config = _chain_config(args)

    mode = args.mode
    fit = fit_intensity(
        codec.encode(dom_sm),
        std.apply(X_sm),
        zstar,
        codec.n_domains,
        model=args.model,
        mode=mode,
        config=config,
        censored_at_face_value=args.censored_face_value,
        pointwise=True,
    )
    fit.draws.save(out / "intensity_draws.csv")
    np.savez_compressed(out / "pointwise_loglik.npz", loglik=fit.pointwise)
    diag = fit.draws.diagnostics()
    diag.insert(0, "part", "intensity")
    wall = {"intensity": fit.wall_time}

    participation = None
    if sample.w is not None and np.any(sample.w == 0):
        participation = fit_participation(
            codec.encode(sample.domain), std.apply(sample.X), sample.w, codec.n_domains, config=config
        )
        participation.draws.save(out / "participation_draws.csv")
        pdiag = participation.draws.diagnostics()
        pdiag.insert(0, "part", "participation")
        diag = pd.concat([diag, pdiag], ignore_index=True)
        wall["participation"] = participation.wall_time
    diag.to_csv(out / "diagnostics.csv", index=False)

    max_rhat = float(diag["rhat"].max())
    if max_rhat >= 1.01:
        worst = diag.loc[diag["rhat"].idxmax()]
        print(
            f"warning: split-Rhat {max_rhat:.3f} for {worst['parameter']} ({worst['part']}); "
            "consider a longer run",
            file=sys.stderr,
        )

    meta = {
        "model": args.model,
        "mode": mode,
        "censored_face_value": bool(args.censored_face_value),
        "standardizer": std.to_dict(),
        "codec": codec.to_dict(),
        "prior": {"mu_center": fit.prior.mu_center, "mu_scale": fit.prior.mu_scale},
        "seed": args.seed,
        "chains": args.chains,
        "iterations": args.iters,
        "warmup": args.warmup,
        "participation_fitted": participation is not None,
        "n_units": fit.n_units,
        "n_sample": sample.n,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    outputs = ["intensity_draws.csv", "pointwise_loglik.npz", "diagnostics.csv", "meta.json"]
    if participation is not None:
        outputs.append("participation_draws.csv")
    _write_manifest(
        out, "fit", vars(args), [args.data, args.frame], outputs, started,
        extra={"wall_time": wall, "max_rhat": max_rhat},
    )
    print(
        f"fitted {args.model} on {fit.n_units} reporting units "
        f"({codec.n_domains} domains) in {sum(wall.values()):.1f}s; max split-Rhat {max_rhat:.3f}"
    )
    return 0


def _load_fit(fit_dir, data_path=None, frame_path=None):
    fit_dir = Path(fit_dir)
    manifest = json.loads((fit_dir / "manifest.json").read_text())
    meta = json.loads((fit_dir / "meta.json").read_text())
    digests = manifest.get("input_digests", {})
    for provided, role in ((data_path, "data"), (frame_path, "frame")):
        if provided is None:
            continue
        recorded = digests.get(str(manifest["arguments"].get(role)))
        if recorded:
            _check_digest(fit_dir, provided, recorded)
    draws = PosteriorDraws.load(fit_dir / "intensity_draws.csv")
    spec = IntensitySpec.from_code(meta["model"], mode=meta["mode"])
    theta = intensity_param_draws(draws, spec)
    delta = None
    if meta.get("participation_fitted"):
        pdraws = PosteriorDraws.load(fit_dir / "participation_draws.csv")
        delta = participation_param_draws(pdraws)
    return meta, spec, theta, delta


def cmd_predict(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    meta, spec, theta, delta = _load_fit(args.fit, args.data, args.frame)
    sample = load_sample(args.data)
    frame_tab = load_frame(args.frame)
    codec = DomainCodec.from_dict(meta["codec"])
    std = Standardizer.from_dict(meta["standardizer"])

    frame = PopulationFrame(
        domain=codec.encode(frame_tab.domain),
        X=std.apply(frame_tab.X),
        count=frame_tab.count,
        n_domains=codec.n_domains,
    )
    sizes = frame.sizes()
    sample_domain = codec.encode(sample.domain)
    labels = codec.labels

    estimates = []
    if delta is not None and sample.w is not None:
        X_std = std.apply(sample.X)
        estimates += hb_wbar(sample_domain, sample.w, frame_remainder(frame, sample_domain, X_std), delta, args.seed)
        zbar, hsbar = hb_intensity_survey(
            sample_domain, X_std, sample.w,
            frame_remainder(frame, sample_domain, X_std), delta, theta, args.seed,
        )
        estimates += zbar + hsbar
    else:
        zbar, hsbar = hb_intensity_simulation(frame, theta, args.seed)
        estimates += zbar + hsbar

    table = estimates_frame(estimates, sizes=sizes, sample_domain=sample_domain, labels=labels)
    table.to_csv(out / "estimates.csv", index=False)
    _write_manifest(out, "predict", vars(args), [args.data, args.frame], ["estimates.csv"], started)
    print(f"wrote {len(table)} domain estimates to {out / 'estimates.csv'}")
    return 0


def cmd_ppc(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    meta, spec, theta, delta = _load_fit(args.fit, args.data)
    sample = load_sample(args.data)
    codec = DomainCodec.from_dict(meta["codec"])
    std = Standardizer.from_dict(meta["standardizer"])
    sample_domain = codec.encode(sample.domain)
    X_std = std.apply(sample.X)
    zstar = np.where(np.isnan(sample.zstar), 0, sample.zstar).astype(np.int64) if sample.zstar is not None else None

    gamma = theta.get("gamma")
    report = ppc_stats(
        sample_domain,
        X_std,
        sample_w=sample.w,
        sample_zstar=zstar,
        delta_draws=delta,
        theta_draws=theta,
        gamma_draws=gamma,
        mode=meta["mode"],
        seed=args.seed,
    )
    outputs = []
    if "participation" in report:
        (out / "participation.json").write_text(json.dumps(report["participation"], indent=2))
        outputs.append("participation.json")
    for name in ("cdf", "counts"):
        if name in report:
            report[name].to_csv(out / f"{name}.csv", index=False)
            outputs.append(f"{name}.csv")
    _write_manifest(out, "ppc", vars(args), [args.data], outputs, started)
    inside = report.get("participation", {}).get("inside")
    msg = f"posterior predictive checks written to {out}"
    if inside is not None:
        msg += f"; observed participation share {'inside' if inside else 'OUTSIDE'} the 90% band"
    print(msg)
    return 0


def cmd_direct(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    sample = load_sample(args.data)
    frame_tab = load_frame(args.frame)
    codec = DomainCodec.fit(frame_tab.domain)
    sizes = np.bincount(codec.encode(frame_tab.domain), weights=frame_tab.count, minlength=codec.n_domains)
    if sample.zstar is None:
        raise DataError("direct estimation needs a zstar column")
    values = np.where(np.isnan(sample.zstar), 0.0, sample.zstar)
    w = sample.w if sample.w is not None else np.ones(sample.n, dtype=np.int64)
    table = direct_estimates(codec.encode(sample.domain), values, codec.n_domains, sizes=sizes, sample_w=w)
    table["domain"] = codec.decode(table["domain"].to_numpy())
    table.to_csv(out / "direct.csv", index=False)
    _write_manifest(out, "direct", vars(args), [args.data, args.frame], ["direct.csv"], started)
    print(f"wrote direct estimates for {len(table)} domains to {out / 'direct.csv'}")
    return 0


def cmd_loo(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    results = {}
    for fit_dir in args.fits:
        meta = json.loads((Path(fit_dir) / "meta.json").read_text())
        with np.load(Path(fit_dir) / "pointwise_loglik.npz") as f:
            ll = f["loglik"]
        results[f"{meta['model']}:{Path(fit_dir).name}"] = psis_loo(ll)
    table = loo_compare(results)
    table.to_csv(out / "loo.csv", index=False)
    _write_manifest(out, "loo", vars(args), [], ["loo.csv"], started)
    print(table.to_string(index=False))
    return 0


def _study_config(args):
    raw = {}
    if args.config:
        try:
            raw = yaml.safe_load(Path(args.config).read_text()) or {}
        except yaml.YAMLError as e:
            raise CliError(f"malformed config {args.config}: {e}", EXIT_USAGE) from None
        if not isinstance(raw, dict):
            raise CliError(f"malformed config {args.config}: expected a mapping", EXIT_USAGE)
    pop = PopulationSpec(**raw.pop("population", {}))
    known = {f for f in StudyConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise CliError(f"unknown study config keys: {sorted(unknown)}", EXIT_USAGE)
    raw["population"] = pop
    if args.full_budget:
        for k, v in (("replications", 500), ("iterations", 2000), ("warmup", 1000), ("max_depth", 10), ("target_acceptance", 0.8)):
            raw.setdefault(k, v)
    if args.replications is not None:
        raw["replications"] = args.replications
    if args.scenario:
        raw["scenarios"] = tuple(args.scenario)
    if args.models:
        raw["models"] = tuple(m.upper() for m in args.models)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    if "scenarios" in raw:
        raw["scenarios"] = tuple(raw["scenarios"])
    if "models" in raw:
        raw["models"] = tuple(raw["models"])
        bad = set(raw["models"]) - set(MODEL_CODES)
        if bad:
            raise CliError(f"unknown model codes {sorted(bad)}", EXIT_USAGE)
    try:
        return StudyConfig(**raw)
    except TypeError as e:
        raise CliError(f"invalid study config: {e}", EXIT_USAGE) from None


def cmd_sim_study(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    config = _study_config(args)
    t0 = time.perf_counter()

    def progress(s, r):
        print(f"scenario {s} replication {r} done ({time.perf_counter() - t0:.0f}s)", flush=True)

    estimates, per_domain, avg, wide = run_study(config, out, resume=not args.no_resume, progress=progress)
    _write_manifest(
        out, "sim-study", {**vars(args), "resolved_seed": config.seed},
        [args.config] if args.config else [],
        ["estimates.csv", "metrics_by_domain.csv", "metrics_summary.csv", "summary_table.csv",
         "direct_metrics_by_domain.csv", "direct_metrics_summary.csv", "truths.csv"],
        started,
    )
    print(wide.to_string(index=False))
    return 0


def cmd_report(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    raws = sorted(Path(args.study).glob("raws/*.csv"))
    if not raws:
        raise CliError(f"no raw replication files under {args.study}/raws", EXIT_DATA)
    estimates = pd.concat([pd.read_csv(p) for p in raws], ignore_index=True)
    per_domain, avg = compute_metrics(estimates)
    wide = summary_table(avg)
    per_domain.to_csv(out / "metrics_by_domain.csv", index=False)
    avg.to_csv(out / "metrics_summary.csv", index=False)
    wide.to_csv(out / "summary_table.csv", index=False)
    _write_manifest(
        out, "report", vars(args), [],
        ["metrics_by_domain.csv", "metrics_summary.csv", "summary_table.csv"], started,
        extra={"n_raw_files": len(raws), "excluded": int(estimates.drop_duplicates(["scenario", "replication", "model"])["excluded"].sum())},
    )
    print(wide.to_string(index=False))
    return 0


def cmd_benchmark(args):
    from .benchmark import run_benchmark

    table = run_benchmark(n_units=args.n, repeats=args.repeats, seed=args.seed)
    print(table.to_string(index=False))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_mcmc_flags(p):
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--iters", type=int, default=2000, help="total iterations per chain, warmup included")
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--target-accept", type=float, default=0.8, dest="target_accept")
    p.add_argument("--max-depth", type=int, default=10, dest="max_depth")
    p.add_argument("--workers", type=int, default=1)


def build_parser():
    parser = _Parser(prog="heapsae", description=__doc__)
    parser.add_argument("--version", action="version", version=f"heapsae {__version__} ({backend_name} kernel)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic population, frame, and truths")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one model on a survey sample")
    p.add_argument("--data", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--model", default="LNM-C", choices=list(MODEL_CODES))
    p.add_argument("--mode", default=FULL, choices=[FULL, REDUCED], help="heaping mode of the coarsened variants")
    p.add_argument("--censored-face-value", action="store_true", help="non-coarsened variants treat the top code as an exact value")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_mcmc_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="domain estimates from a fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ppc", help="posterior predictive checks against the sample")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ppc)

    p = sub.add_parser("direct", help="design-based direct estimates")
    p.add_argument("--data", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_direct)

    p = sub.add_parser("loo", help="LOOIC comparison of fitted models")
    p.add_argument("--fits", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("sim-study", help="run the replication study")
    p.add_argument("--config", help="YAML study configuration")
    p.add_argument("--out", required=True)
    p.add_argument("--replications", type=int)
    p.add_argument("--scenario", type=int, action="append", choices=[1, 2, 3, 4])
    p.add_argument("--models", nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--full-budget", action="store_true", help="reference protocol: 500 replications, 4x2000/1000 chains")
    p.add_argument("--no-resume", action="store_true", help="ignore existing checkpoints")
    p.set_defaults(func=cmd_sim_study)

    p = sub.add_parser("report", help="summarize a (possibly partial) study directory")
    p.add_argument("--study", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("benchmark", help="compare kernel backends")
    p.add_argument("--n", type=int, default=900)
    p.add_argument("--repeats", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except SamplerError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
