"""Command-line front end: simulate | fit | bootstrap | evaluate.

All commands read an optional JSON config and accept flag overrides
(flags win).  Outputs are CSV/JSON files plus rendered figures in the
output directory; every file carries the run-manifest hash, a digest of
the resolved config, so identical configurations produce identical
outputs byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, benchmarks, plots
from .aim import AimConfig, select_k_cv
from .dataset import Dataset, LagWeights, SplineSpec, add_time_covariates, apply_lag, load_csv
from .glm import QUASIPOISSON
from .mars import MarsConfig, backward_pass, extract_thresholds_mars, forward_pass
from .mob import MobConfig, extract_thresholds, grow
from .prim import PrimConfig, paste as prim_paste, peel, select_box
from .scoring import ThresholdSet, alerts, episodes, evaluate_thresholds, expected_mortality, over_mortality
from .simulate import (
    METHODS,
    Scenario,
    acceptance_grid,
    bootstrap_summary,
    paper_grid,
    run_study,
    summarize_scores,
)

DEFAULT_CUTPOINTS = [30.0, 35.0, 40.0, 45.0, 50.0]

CONFIG_KEYS = {
    "schema",
    "season",
    "lag_weights",
    "df_season",
    "df_per_decade",
    "methods",
    "b",
    "seed",
    "out",
    "cutpoints",
    "thresholds",
    "grid",
    "p",
    "beta2",
    "rho",
    "n",
    "workers",
    "family",
    "keep_going",
    "data",
    "episode_gap",
    "plots",
}


class ConfigError(ValueError):
    pass


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def resolve(cfg: dict, args: argparse.Namespace, flags: list[str]) -> dict:
    out = dict(cfg)
    for key in flags:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


# Keys that steer execution but not results; they stay out of the hash so
# reruns at any worker count produce byte-identical primary outputs.
NON_SEMANTIC_KEYS = {"workers", "out", "plots", "keep_going"}


def manifest_hash(command: str, config: dict) -> str:
    semantic = {k: v for k, v in config.items() if k not in NON_SEMANTIC_KEYS}
    payload = json.dumps({"command": command, "config": semantic}, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def write_manifest(outdir: Path, command: str, config: dict) -> str:
    digest = manifest_hash(command, config)
    body = {
        "command": command,
        "config": config,
        "manifest_hash": digest,
        "package_version": __version__,
    }
    (outdir / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True, default=str) + "\n")
    return digest


def write_csv(frame: pd.DataFrame, path: Path, digest: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# manifest_hash={digest}\n")
        frame.to_csv(fh, index=False)


def write_json(payload: dict, path: Path, digest: str) -> None:
    payload = dict(payload)
    payload["manifest_hash"] = digest
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


def parse_thresholds(spec: str, names: tuple[str, ...]) -> ThresholdSet:
    bounds: dict[str, float | None] = {name: None for name in names}
    for part in spec.split(","):
        name, _, value = part.partition("=")
        name = name.strip()
        if name not in bounds:
            raise ConfigError(f"threshold variable {name!r} not among indicators {list(names)}")
        bounds[name] = float(value)
    return ThresholdSet(bounds=bounds, provenance="reference")


def build_dataset(config: dict) -> tuple[Dataset, SplineSpec]:
    if "data" not in config or "schema" not in config:
        raise ConfigError("need 'data' (CSV path) and 'schema' (column mapping)")
    season = config.get("season")
    season = tuple(tuple(x) for x in season) if season else ((5, 1), (9, 30))
    ds = load_csv(config["data"], config["schema"], season=season)
    weights = config.get("lag_weights")
    if weights:
        ds = apply_lag(ds, LagWeights(tuple(weights)))
    spec = SplineSpec(
        df_season=int(config.get("df_season", 4)),
        df_per_decade=float(config.get("df_per_decade", 1.0)),
    )
    return add_time_covariates(ds, spec, season[0]), spec


def scenario_list(config: dict) -> list[Scenario]:
    grid = config.get("grid")
    if grid == "paper":
        return paper_grid()
    if grid == "acceptance":
        return acceptance_grid()
    if grid is not None:
        raise ConfigError(f"unknown grid {grid!r}; use 'paper', 'acceptance', or p/beta2/rho lists")
    ps = config.get("p") or [1, 2]
    b2s = config.get("beta2") or [0.1, 1.0]
    rhos = config.get("rho") or [0.0, 0.5]
    n = int(config.get("n", 1000))
    return [Scenario(p=int(p), beta2=float(b2), rho=float(r), n=n) for p in ps for b2 in b2s for r in rhos]


def cmd_simulate(args: argparse.Namespace) -> int:
    config = resolve(load_config(args.config), args, ["grid", "b", "seed", "methods", "workers", "out", "n"])
    if "seed" not in config or config["seed"] is None:
        raise ConfigError("simulate requires a seed")
    methods = config.get("methods") or list(METHODS)
    if isinstance(methods, str):
        methods = methods.split(",")
    config["methods"] = list(methods)
    config.setdefault("b", 100)
    outdir = Path(config.get("out", "simulate-out"))
    outdir.mkdir(parents=True, exist_ok=True)
    digest = write_manifest(outdir, "simulate", config)

    scores = run_study(
        scenario_list(config),
        b=int(config["b"]),
        methods=config["methods"],
        seed=int(config["seed"]),
        workers=int(config.get("workers", 1)),
    )
    summary = summarize_scores(scores)
    write_csv(scores, outdir / "scores.csv", digest)
    write_csv(summary, outdir / "summary.csv", digest)
    if config.get("plots", True):
        plots.plot_fscore_summary(summary, outdir / "fscores.png")
    n_err = int((scores["status"] == "error").sum())
    print(f"simulate: {len(scores)} rows, {n_err} errors -> {outdir}")
    if n_err and not config.get("keep_going", False):
        return 1
    return 0


def _fit_method_artifacts(name: str, dataset: Dataset, family: str, outdir: Path, digest: str) -> ThresholdSet:
    if name == "mob":
        tree = grow(dataset, MobConfig(), family)
        write_json({"tree": tree.to_dict()}, outdir / "mob_tree.json", digest)
        return extract_thresholds(tree)
    if name == "mars":
        model = backward_pass(forward_pass(dataset, MarsConfig(), family), dataset, MarsConfig(), family)
        write_json({"knots": model.knots_by_variable(dataset.names)}, outdir / "mars_knots.json", digest)
        return extract_thresholds_mars(model, dataset, MarsConfig())
    if name == "prim":
        traj = peel(dataset, PrimConfig(), family)
        frame = pd.DataFrame(
            {
                "step": np.arange(len(traj.steps)),
                "support": traj.supports,
                "slope": traj.slopes,
                "rate": np.concatenate([[np.nan], traj.rates()]),
                "peeled_variable": [
                    dataset.names[s.peeled_var] if s.peeled_var is not None else "" for s in traj.steps
                ],
                "peeled_count": [s.peeled_count for s in traj.steps],
            }
        )
        write_csv(frame, outdir / "prim_trajectory.csv", digest)
        plots.plot_peeling_trajectory(frame, outdir / "prim_trajectory.png")
        cfg = PrimConfig()
        thresholds = select_box(traj)
        if cfg.paste:
            lower = np.array(
                [thresholds.bounds[n] if thresholds.bounds[n] is not None else -np.inf for n in dataset.names]
            )
            pasted = prim_paste(lower, dataset, cfg, family)
            thresholds = ThresholdSet(
                bounds={
                    n: (float(pasted[i]) if np.isfinite(pasted[i]) else None)
                    for i, n in enumerate(dataset.names)
                },
                provenance="prim",
            )
        return thresholds
    if name == "aim":
        model = select_k_cv(dataset, AimConfig())
        rules = [] if model is None else [
            {"variable": dataset.names[v], "cut": c} for v, c in model.rules
        ]
        write_json({"rules": rules}, outdir / "aim_rules.json", digest)
        if model is None:
            return ThresholdSet(bounds={n: None for n in dataset.names}, provenance="aim")
        from .aim import extract_thresholds_aim

        return extract_thresholds_aim(model, dataset.names)
    if name == "gamci":
        curves = benchmarks.exposure_curves(dataset, family=family)
        plots.plot_exposure_curves(curves, outdir / "gamci_curves.png")
        return ThresholdSet(bounds={c.name: c.threshold for c in curves}, provenance="gamci")
    return METHODS[name](dataset, family)


def cmd_fit(args: argparse.Namespace) -> int:
    config = resolve(
        load_config(args.config),
        args,
        ["data", "methods", "thresholds", "cutpoints", "out", "family", "keep_going", "episode_gap"],
    )
    if args.schema is not None:
        config["schema"] = json.loads(args.schema)
    methods = config.get("methods") or list(METHODS)
    if isinstance(methods, str):
        methods = methods.split(",")
    config["methods"] = list(methods)
    outdir = Path(config.get("out", "fit-out"))
    outdir.mkdir(parents=True, exist_ok=True)
    digest = write_manifest(outdir, "fit", config)

    dataset, spec = build_dataset(config)
    family = config.get("family", QUASIPOISSON)
    gap = int(config.get("episode_gap", 3))
    cutpoints = config.get("cutpoints") or DEFAULT_CUTPOINTS
    if isinstance(cutpoints, str):
        cutpoints = [float(c) for c in cutpoints.split(",")]

    em = expected_mortality(dataset, spec)
    om = over_mortality(dataset.y, em)

    results: dict[str, ThresholdSet] = {}
    failures: list[str] = []
    for name in config["methods"]:
        try:
            results[name] = _fit_method_artifacts(name, dataset, family, outdir, digest)
        except Exception as exc:  # recorded, optionally tolerated
            failures.append(f"{name}: {exc}")
    if config.get("thresholds"):
        spec_str = config["thresholds"]
        if isinstance(spec_str, dict):
            spec_str = ",".join(f"{k}={v}" for k, v in spec_str.items())
        results["reference"] = parse_thresholds(spec_str, dataset.names)

    thresholds_payload = {
        "indicators": list(dataset.names),
        "methods": {
            name: {
                "thresholds": {k: v for k, v in ts.bounds.items()},
                "selected": {k: v is not None for k, v in ts.bounds.items()},
                "relaxed": ts.relaxed,
            }
            for name, ts in results.items()
        },
        "failures": failures,
    }
    write_json(thresholds_payload, outdir / "thresholds.json", digest)

    mid_cut = cutpoints[len(cutpoints) // 2]
    alert_rows = []
    for name, ts in results.items():
        scores = evaluate_thresholds(dataset, ts, om, cut=mid_cut, gap=gap)
        row = {"method": name}
        row.update({f"threshold_{k}": ts.bounds[k] for k in dataset.names})
        row.update(
            {
                "n_alert_days": scores.n_alerts,
                "n_episodes": scores.n_episodes,
                "mean_om": scores.mean_om,
                "coverage": scores.coverage,
            }
        )
        alert_rows.append(row)
    write_csv(pd.DataFrame(alert_rows), outdir / "alerts_summary.csv", digest)

    cut_rows = []
    for name, ts in results.items():
        for cut in cutpoints:
            scores = evaluate_thresholds(dataset, ts, om, cut=float(cut), gap=gap)
            cut_rows.append(
                {
                    "method": name,
                    "cutpoint": float(cut),
                    "sensitivity": scores.sensitivity,
                    "precision": scores.precision,
                    "f_score": scores.f_score,
                    "n_alerts": scores.n_alerts,
                }
            )
    cut_frame = pd.DataFrame(cut_rows)
    write_csv(cut_frame, outdir / "cutpoint_scores.csv", digest)
    if config.get("plots", True) and not cut_frame.empty:
        plots.plot_cutpoint_scores(cut_frame, outdir / "cutpoint_scores.png")

    print(f"fit: {len(results)} methods, {len(failures)} failures -> {outdir}")
    for failure in failures:
        print(f"  failed {failure}", file=sys.stderr)
    if failures and not config.get("keep_going", False):
        return 1
    return 0


def cmd_bootstrap(args: argparse.Namespace) -> int:
    config = resolve(
        load_config(args.config),
        args,
        ["data", "methods", "b", "seed", "workers", "out", "family", "keep_going"],
    )
    if args.schema is not None:
        config["schema"] = json.loads(args.schema)
    if "seed" not in config or config["seed"] is None:
        raise ConfigError("bootstrap requires a seed")
    if "b" not in config or config["b"] is None:
        raise ConfigError("bootstrap requires B")
    methods = config.get("methods") or list(METHODS)
    if isinstance(methods, str):
        methods = methods.split(",")
    config["methods"] = list(methods)
    outdir = Path(config.get("out", "bootstrap-out"))
    outdir.mkdir(parents=True, exist_ok=True)
    digest = write_manifest(outdir, "bootstrap", config)

    dataset, _ = build_dataset(config)
    family = config.get("family", QUASIPOISSON)
    raws, summaries = [], []
    for name in config["methods"]:
        raw, summary = bootstrap_summary(
            name,
            dataset,
            b=int(config["b"]),
            seed=int(config["seed"]),
            family=family,
            workers=int(config.get("workers", 1)),
        )
        raws.append(raw)
        summaries.append(summary)
    raw = pd.concat(raws, ignore_index=True)
    summary = pd.concat(summaries, ignore_index=True)
    write_csv(raw, outdir / "bootstrap_raw.csv", digest)
    write_csv(summary, outdir / "bootstrap_summary.csv", digest)
    if config.get("plots", True):
        plots.plot_bootstrap_thresholds(raw, outdir / "bootstrap_thresholds.png")
    n_err = int((raw["status"] == "error").sum())
    print(f"bootstrap: {len(raw)} rows, {n_err} failed replicate rows -> {outdir}")
    if n_err and not config.get("keep_going", False):
        return 1
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = resolve(
        load_config(args.config),
        args,
        ["data", "thresholds", "cutpoints", "out", "episode_gap"],
    )
    if args.schema is not None:
        config["schema"] = json.loads(args.schema)
    if not config.get("thresholds"):
        raise ConfigError("evaluate requires thresholds, e.g. --thresholds 'tmin=20,tmax=33'")
    outdir = Path(config.get("out", "evaluate-out"))
    outdir.mkdir(parents=True, exist_ok=True)
    digest = write_manifest(outdir, "evaluate", config)

    dataset, spec = build_dataset(config)
    spec_str = config["thresholds"]
    if isinstance(spec_str, dict):
        spec_str = ",".join(f"{k}={v}" for k, v in spec_str.items())
    ts = parse_thresholds(spec_str, dataset.names)
    gap = int(config.get("episode_gap", 3))
    cutpoints = config.get("cutpoints") or DEFAULT_CUTPOINTS
    if isinstance(cutpoints, str):
        cutpoints = [float(c) for c in cutpoints.split(",")]

    em = expected_mortality(dataset, spec)
    om = over_mortality(dataset.y, em)
    rows = []
    for cut in cutpoints:
        scores = evaluate_thresholds(dataset, ts, om, cut=float(cut), gap=gap)
        rows.append(
            {
                "cutpoint": float(cut),
                "sensitivity": scores.sensitivity,
                "precision": scores.precision,
                "f_score": scores.f_score,
                "n_alerts": scores.n_alerts,
                "n_episodes": scores.n_episodes,
                "mean_om": scores.mean_om,
                "coverage": scores.coverage,
            }
        )
    write_csv(pd.DataFrame(rows), outdir / "evaluation.csv", digest)
    print(f"evaluate: {len(rows)} cut points -> {outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatwarn", description="Alert-threshold estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out", help="output directory")

    p_sim = sub.add_parser("simulate", help="run the synthetic scenario study")
    common(p_sim)
    p_sim.add_argument("--grid", help="'paper' (40 scenarios) or 'acceptance' (8)")
    p_sim.add_argument("--B", dest="b", type=int, help="replicates per scenario")
    p_sim.add_argument("--n", type=int, help="observations per replicate (custom grids)")
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--methods", help="comma-separated method names")
    p_sim.add_argument("--workers", type=int)
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="estimate thresholds on a CSV dataset")
    common(p_fit)
    p_fit.add_argument("--data", help="CSV file")
    p_fit.add_argument("--schema", help="inline JSON column mapping")
    p_fit.add_argument("--methods", help="comma-separated method names")
    p_fit.add_argument("--thresholds", help="fixed reference thresholds, e.g. 'tmin=20,tmax=33'")
    p_fit.add_argument("--cutpoints", help="comma-separated excess cut points")
    p_fit.add_argument("--family")
    p_fit.add_argument("--episode-gap", dest="episode_gap", type=int)
    p_fit.add_argument("--keep-going", dest="keep_going", action="store_const", const=True)
    p_fit.set_defaults(func=cmd_fit)

    p_boot = sub.add_parser("bootstrap", help="year-block bootstrap of threshold methods")
    common(p_boot)
    p_boot.add_argument("--data")
    p_boot.add_argument("--schema")
    p_boot.add_argument("--methods")
    p_boot.add_argument("--B", dest="b", type=int)
    p_boot.add_argument("--seed", type=int)
    p_boot.add_argument("--workers", type=int)
    p_boot.add_argument("--family")
    p_boot.add_argument("--keep-going", dest="keep_going", action="store_const", const=True)
    p_boot.set_defaults(func=cmd_bootstrap)

    p_eval = sub.add_parser("evaluate", help="score fixed thresholds against excess events")
    common(p_eval)
    p_eval.add_argument("--data")
    p_eval.add_argument("--schema")
    p_eval.add_argument("--thresholds")
    p_eval.add_argument("--cutpoints")
    p_eval.add_argument("--episode-gap", dest="episode_gap", type=int)
    p_eval.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
