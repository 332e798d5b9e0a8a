"""Command-line front end: JSON config in, CSV/JSON results out.

Every command is a pure function of (config, seed): rerunning with the same
inputs reproduces byte-identical outputs regardless of worker count. Shared
flags: --config PATH, --seed U64, --out DIR, --workers N; flags override
config-file fields. Exit codes: 2 for configuration errors, 1 for runtime
failures.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .core import Rng, splitmix64
from .goftest import (BenchmarkSpec, METHODS, RbmGofSpec, run_benchmark, run_rbm_gof)
from .ica import ICA_WEIGHT_SCALE, IcaConfig, make_ica_dataset, train_ica
from .samplers import (SamplerConfig, SghmcSpec, VarianceSpec, parf, run_ssvgd,
                       run_svgd, run_variance_experiment, select_step_size)
from .targets import Gaussian, ScoreModel


class ConfigError(ValueError):
    pass


def _take(cfg: dict, cls, **overrides):
    """Build dataclass ``cls`` from the matching config keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    known = {k: v for k, v in cfg.items() if k in names}
    known.update(overrides)
    try:
        return cls(**known)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _check_fields(cfg: dict, allowed: set):
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown config field {sorted(unknown)[0]!r}")


def _write_csv(path: Path, header: list[str], rows: list[list]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_run_json(out: Path, command: str, cfg: dict, seed: int, workers: int):
    doc = {"command": command, "seed": seed, "workers": workers, "config": cfg}
    (out / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _spec_fields(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def cmd_gof_benchmark(cfg: dict, seed: int, out: Path, workers: int) -> None:
    _check_fields(cfg, _spec_fields(BenchmarkSpec) | {"seed", "methods", "dims",
                                                      "alternatives", "alternative", "dim"})
    methods = cfg.get("methods", ["maxsksd-g"])
    alts = cfg.get("alternatives") or [cfg.get("alternative", "null")]
    dims = cfg.get("dims") or [cfg.get("dim", 2)]
    base = {k: v for k, v in cfg.items()
            if k in _spec_fields(BenchmarkSpec) - {"alternative", "dim"}}
    trial_rows, agg_rows = [], []
    for method in methods:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}")
        for alt in alts:
            for dim in dims:
                spec = BenchmarkSpec(alternative=alt, dim=int(dim), **base)
                res = run_benchmark(spec, method, seed, workers=workers)
                for r in res.records:
                    trial_rows.append([r.method, r.benchmark, r.dim, r.trial,
                                       r.statistic, r.p_value, r.reject])
                agg_rows.append([method, alt, dim, res.rejection_rate,
                                 res.mean_statistic, res.sd_statistic])
    _write_csv(out / "trials.csv",
               ["method", "benchmark", "dim", "trial", "statistic", "p_value", "reject"],
               trial_rows)
    _write_csv(out / "aggregate.csv",
               ["method", "benchmark", "dim", "rejection_rate", "mean_statistic",
                "sd_statistic"], agg_rows)


def cmd_gof_rbm(cfg: dict, seed: int, out: Path, workers: int) -> None:
    _check_fields(cfg, _spec_fields(RbmGofSpec) | {"seed", "methods"})
    methods = cfg.get("methods", ["maxsksd-g"])
    spec = _take({k: v for k, v in cfg.items() if k != "methods"}, RbmGofSpec)
    trial_rows, agg_rows = [], []
    for method in methods:
        res = run_rbm_gof(spec, method, seed, workers=workers)
        for r in res.records:
            trial_rows.append([r.method, "rbm", r.level, r.trial, r.statistic,
                               r.p_value, r.reject])
        for level in spec.levels:
            stats = [r.statistic for r in res.records if r.level == level]
            agg_rows.append([method, "rbm", level, res.rejection_rate(level),
                             float(np.mean(stats)),
                             float(np.std(stats, ddof=1)) if len(stats) > 1 else 0.0])
    _write_csv(out / "trials.csv",
               ["method", "benchmark", "level", "trial", "statistic", "p_value",
                "reject"], trial_rows)
    _write_csv(out / "aggregate.csv",
               ["method", "benchmark", "level", "rejection_rate", "mean_statistic",
                "sd_statistic"], agg_rows)


def cmd_svgd(cfg: dict, seed: int, out: Path, workers: int) -> None:
    allowed = _spec_fields(SamplerConfig) | {"seed", "sampler", "model", "n_particles",
                                             "steps", "step_size", "record_every",
                                             "dump_every", "init_mean", "init_std"}
    _check_fields(cfg, allowed)
    sampler = cfg.get("sampler", "ssvgd")
    if sampler not in ("svgd", "ssvgd"):
        raise ConfigError(f"unknown sampler {sampler!r}")
    if "model" not in cfg:
        raise ConfigError("missing config field 'model'")
    model = ScoreModel.from_config(cfg["model"])
    n = int(cfg.get("n_particles", 50))
    steps = int(cfg.get("steps", 1000))
    step_size = float(cfg.get("step_size", 0.1))
    record_every = int(cfg.get("record_every", 100))
    sampler_cfg = _take(cfg, SamplerConfig)
    rng = Rng(seed)
    x0 = float(cfg.get("init_mean", 0.0)) \
        + float(cfg.get("init_std", 1.0)) * rng.split(0).gen.standard_normal((n, model.dim))
    if sampler == "svgd":
        ens = run_svgd(model, x0, steps, step_size, sampler_cfg, record_every=record_every)
    else:
        ens, _ = run_ssvgd(model, x0, steps, step_size, rng.split(1), sampler_cfg,
                           record_every=record_every)
    rows = [[it, pf, va[1]] for (it, pf), va in zip(ens.parf_history, ens.var_history)]
    _write_csv(out / "diagnostics.csv", ["iter", "parf", "var_avg"], rows)
    _write_csv(out / "particles.csv", [f"x{d}" for d in range(model.dim)],
               [list(row) for row in ens.x])


def cmd_variance(cfg: dict, seed: int, out: Path, workers: int) -> None:
    _check_fields(cfg, _spec_fields(VarianceSpec) | {"seed"})
    spec = _take(cfg, VarianceSpec)
    records = run_variance_experiment(spec, seed, workers=workers)
    _write_csv(out / "variance.csv",
               ["sampler", "dim", "n_particles", "var_avg", "parf_final", "mean_avg"],
               [[r.sampler, r.dim, r.n_particles, r.var_avg, r.parf_final, r.mean_avg]
                for r in records])


def random_covariance(dim: int, rng: Rng) -> np.ndarray:
    """Random SPD covariance A A'/dim + 0.1 I (kept away from singularity)."""
    a = rng.gen.standard_normal((dim, dim))
    return a @ a.T / dim + 0.1 * np.eye(dim)


def cmd_sghmc_select(cfg: dict, seed: int, out: Path, workers: int) -> None:
    allowed = _spec_fields(SghmcSpec) | {"seed", "dim", "candidates", "methods", "model"}
    _check_fields(cfg, allowed)
    candidates = cfg.get("candidates")
    if not candidates or len(candidates) < 1:
        raise ConfigError("missing config field 'candidates'")
    methods = cfg.get("methods", ["maxsksd-g"])
    spec = _take({k: v for k, v in cfg.items()
                  if k in _spec_fields(SghmcSpec)}, SghmcSpec)
    rng = Rng(seed)
    if "model" in cfg:
        model = ScoreModel.from_config(cfg["model"])
    else:
        dim = int(cfg.get("dim", 15))
        model = Gaussian(mean=np.zeros(dim), cov=random_covariance(dim, rng.split(0)))
    rows, selection = [], {}
    for mi, method in enumerate(methods):
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}")
        sel = select_step_size(model, candidates, method, rng.split(100 + mi), spec)
        for r in sel.records:
            rows.append([method, r.step_size, r.discrepancy, r.kl])
        selection[method] = sel.chosen
        selection.setdefault("kl", sel.kl_chosen)
    _write_csv(out / "table.csv", ["method", "step_size", "discrepancy", "kl"], rows)
    (out / "selection.json").write_text(json.dumps(selection, indent=2, sort_keys=True) + "\n")


def cmd_ica(cfg: dict, seed: int, out: Path, workers: int) -> None:
    allowed = _spec_fields(IcaConfig) | {"seed", "dim", "n_train", "n_test",
                                         "weight_scale"}
    _check_fields(cfg, allowed)
    dim = int(cfg.get("dim", 10))
    n_train = int(cfg.get("n_train", 20000))
    n_test = int(cfg.get("n_test", 5000))
    scale = float(cfg.get("weight_scale", ICA_WEIGHT_SCALE))
    config = _take({k: v for k, v in cfg.items() if k in _spec_fields(IcaConfig)},
                   IcaConfig)
    rng = Rng(seed)
    train, test, _ = make_ica_dataset(dim, n_train, n_test, rng.split(0), scale=scale)
    state = train_ica(train, test, config, rng.split(1), init_scale=scale)
    _write_csv(out / "trace.csv", ["step", "objective", "test_nll"],
               [[s, o, n] for (s, o, n) in state.trace])
    checkpoint = {"W": state.w.tolist(),
                  "G": None if state.slices is None else state.slices.directions.tolist(),
                  "step": state.step,
                  "nll_trace": [[s, o, n] for (s, o, n) in state.trace]}
    (out / "checkpoint.json").write_text(json.dumps(checkpoint, sort_keys=True) + "\n")


_COMMANDS = {
    "gof-benchmark": cmd_gof_benchmark,
    "gof-rbm": cmd_gof_rbm,
    "svgd": cmd_svgd,
    "variance": cmd_variance,
    "sghmc-select": cmd_sghmc_select,
    "ica": cmd_ica,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sksd",
                                     description="Sliced Stein discrepancy experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="64-bit experiment seed")
        p.add_argument("--out", type=str, default=".", help="output directory")
        p.add_argument("--workers", type=int, default=1, help="trial-level workers")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = {}
        if args.config is not None:
            try:
                cfg = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
        seed = args.seed if args.seed is not None else cfg.get("seed")
        if seed is None:
            raise ConfigError("missing config field 'seed' (or pass --seed)")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        command = _COMMANDS[args.command]
        command(cfg, int(seed), out, max(1, int(args.workers)))
        _write_run_json(out, args.command, cfg, int(seed), int(args.workers))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
