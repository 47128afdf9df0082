"""Command-line entry point: ``discvar <command> --config FILE``.

Commands: simulate, quantify, infer, tune, rate-check. Every command writes
its outputs plus ``config.yaml`` (the effective config, reloadable) and
``report.json`` (config echo, wall time, log marginal likelihood when
defined, and the list of emitted files) into ``--out``.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 search failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from . import _streams
from .config import ExperimentConfig, dump_config, load_config, load_preset, preset_names
from .error_prior import rate_check
from .errors import ConfigError, FilterCollapseError, IntegrationError, ModelError, SearchError
from .hyperparam_search import GridSpec, RunSpec, search, write_heatmap, write_leaderboard
from .joint_inference import posterior_param_summary, run_joint_filter
from .observation import exact_errors
from .particle_engine import FilterConfig, credible_band, run_filter, sigma_summary

log = logging.getLogger("discvar")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_SEARCH = 0, 2, 3, 4


def _fmt(v) -> str:
    v = float(v)
    if v == -math.inf:
        return "-inf"
    if not math.isfinite(v):
        raise ModelError(f"refusing to write non-finite value {v} to CSV")
    return f"{v:.9g}"


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) if isinstance(c, float) else c for c in row])
    return path


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class _Run:
    """Output directory, manifest and timing for one command."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path, threads: int):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.files: list[Path] = []
        self.start = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def add(self, path: Path) -> Path:
        self.files.append(path)
        return path

    def path(self, name: str) -> Path:
        return self.out / name

    def finish(self, log_marginal=None, extra=None) -> Path:
        self.add(dump_config(self.cfg, self.path("config.yaml")))
        report = {
            "command": self.command,
            "config": self.cfg.raw,
            "seed": self.cfg.seed,
            "threads": self.threads,
            "wall_time_s": round(time.perf_counter() - self.start, 3),
            "log_marginal_likelihood": None if log_marginal is None else _json_float(log_marginal),
            "files": sorted(p.name for p in self.files) + ["report.json"],
        }
        if extra:
            report.update(extra)
        path = _write_json(self.path("report.json"), report)
        missing = [p for p in self.files if not p.exists()]
        if missing:
            raise ModelError(f"manifest entries missing on disk: {missing}")
        return path


def _json_float(v):
    v = float(v)
    return "-inf" if v == -math.inf else v


def _filter_config(cfg: ExperimentConfig, threads: int) -> FilterConfig:
    return FilterConfig(n_particles=cfg.particles, lag=cfg.lag, resampling=cfg.resampling, seed=cfg.seed,
                        threads=threads)


def _observations(cfg: ExperimentConfig, run: _Run):
    obs = cfg.observations(_streams.stream(cfg.seed, _streams.OBSERVATIONS))
    run.add(obs.to_csv(run.path("observations.csv")))
    return obs


def _exact_rows(cfg: ExperimentConfig, theta):
    return exact_errors(theta, cfg.x0, cfg.grid, cfg.system, h_ref=cfg.h_ref)


def _sigma_rows(times, cloud):
    summ = sigma_summary(cloud)
    for i, t in enumerate(times):
        for c in range(cloud.shape[2]):
            yield [float(t), c + 1] + [float(summ[k][i, c]) for k in ("q025", "q500", "q975", "mean")]


def _particle_rows(times, cloud):
    for i, t in enumerate(times):
        for c in range(cloud.shape[2]):
            for p in range(cloud.shape[1]):
                yield [float(t), c + 1, p, float(cloud[i, p, c])]


def cmd_simulate(cfg: ExperimentConfig, run: _Run, args):
    theta = cfg.require_theta("simulate")
    obs = _observations(cfg, run)
    r = _exact_rows(cfg, theta)
    header = ["t"] + [f"r{c + 1}" for c in range(r.shape[1])]
    run.add(_write_csv(run.path("exact_errors.csv"), header,
                       ([float(t)] + [float(v) for v in row] for t, row in zip(obs.times, r))))
    return run.finish()


def _quantify_outputs(cfg, run, args, times, cloud, theta):
    run.add(_write_csv(run.path("sigma_summary.csv"), ["t", "component", "q025", "q500", "q975", "mean"],
                       _sigma_rows(times, cloud)))
    r = _exact_rows(cfg, theta)
    rng = _streams.stream(cfg.seed, _streams.BAND)
    rows, coverage = [], {}
    for c in range(cloud.shape[2]):
        lo, hi = credible_band(cloud, c, 0.95, rng=rng)
        inside = (lo <= r[:, c]) & (r[:, c] <= hi)
        coverage[f"component_{c + 1}"] = float(inside.mean())
        rows += [[float(t), c + 1, float(lo[i]), float(hi[i]), float(r[i, c])] for i, t in enumerate(times)]
    rows.sort(key=lambda row: (row[0], row[1]))
    run.add(_write_csv(run.path("bands.csv"), ["t", "component", "lower", "upper", "exact_error"], rows))
    if args.dump_particles:
        run.add(_write_csv(run.path("particles.csv"), ["t", "component", "particle_index", "sigma"],
                           _particle_rows(times, cloud)))
    return coverage


def cmd_quantify(cfg: ExperimentConfig, run: _Run, args):
    theta = cfg.require_theta("quantify (fixed-parameter run)")
    prior = cfg.prior()
    obs = _observations(cfg, run)
    res = run_filter(cfg.system, theta, obs, cfg.grid, prior, cfg.init_prior(), cfg.op,
                     _filter_config(cfg, run.threads), cfg.x0)
    coverage = _quantify_outputs(cfg, run, args, obs.times, res.sigma, theta)
    log.info("log marginal likelihood %.6f; band coverage %s", res.log_marginal, coverage)
    return run.finish(res.log_marginal, {"alpha": prior.alpha, "beta": prior.beta, "band_coverage": coverage})


def _theta_rows(names, cloud):
    for j, name in enumerate(names):
        for p in range(cloud.shape[0]):
            yield [name, p, float(cloud[p, j])]


def cmd_infer(cfg: ExperimentConfig, run: _Run, args):
    param_prior = cfg.param_prior()
    prior = cfg.prior()
    obs = _observations(cfg, run)
    fc = _filter_config(cfg, run.threads)
    names = list(cfg.system.param_names)
    full = run_joint_filter(cfg.system, obs, cfg.grid, prior, cfg.init_prior(), param_prior, cfg.op, fc, cfg.x0)
    base = run_joint_filter(cfg.system, obs, cfg.grid, prior, cfg.init_prior(), param_prior, cfg.op, fc, cfg.x0,
                            ignore_error=True)
    header = ["param_name", "particle_index", "value"]
    run.add(_write_csv(run.path("theta_posterior.csv"), header, _theta_rows(names, full.theta)))
    run.add(_write_csv(run.path("theta_posterior_baseline.csv"), header, _theta_rows(names, base.theta)))
    summary = {
        "full": posterior_param_summary(full.theta, names),
        "baseline": posterior_param_summary(base.theta, names),
        "unique_particles": {"full": full.n_unique_theta, "baseline": base.n_unique_theta},
        "log_marginal_likelihood": {"full": _json_float(full.log_marginal),
                                    "baseline": _json_float(base.log_marginal)},
    }
    if cfg.theta is not None:
        summary["theta_true"] = dict(zip(names, map(float, cfg.theta)))
    run.add(_write_json(run.path("theta_summary.json"), summary))
    run.add(_write_csv(run.path("sigma_summary.csv"), ["t", "component", "q025", "q500", "q975", "mean"],
                       _sigma_rows(obs.times, full.sigma)))
    if args.dump_particles:
        run.add(_write_csv(run.path("particles.csv"), ["t", "component", "particle_index", "sigma"],
                           _particle_rows(obs.times, full.sigma)))
    for name in names:
        log.info("%s: full %.4f +- %.4f, baseline %.4f +- %.4f", name, summary["full"][name]["mean"],
                 summary["full"][name]["std"], summary["baseline"][name]["mean"], summary["baseline"][name]["std"])
    return run.finish(full.log_marginal, {"alpha": prior.alpha, "beta": prior.beta})


def cmd_tune(cfg: ExperimentConfig, run: _Run, args):
    t = cfg.tune()
    if args.particles is not None:
        t["k_eval"] = args.particles
    grid = GridSpec(tuple(t["alphas"]), None if t["betas"] is None else tuple(t["betas"]), t["constrained"],
                    t["k_eval"], t["seed_policy"])
    obs = _observations(cfg, run)
    if cfg.raw.get("params"):
        spec = RunSpec(cfg.system, obs, cfg.grid, cfg.op, tuple(cfg.x0), param_prior=cfg.param_prior(),
                       init_prior=cfg.init_prior(), lag=cfg.lag, resampling=cfg.resampling, seed=cfg.seed)
    else:
        spec = RunSpec(cfg.system, obs, cfg.grid, cfg.op, tuple(cfg.x0),
                       theta=tuple(cfg.require_theta("tune without params")), init_prior=cfg.init_prior(),
                       lag=cfg.lag, resampling=cfg.resampling, seed=cfg.seed)
    log.info("evaluating %d cells with %d particles", len(grid.pairs()), grid.k_eval)
    res = search(grid, spec, workers=run.threads)
    run.add(write_heatmap(res.cells, run.path("heatmap.csv")))
    run.add(write_leaderboard(res, run.path("leaderboard.csv")))
    alpha, beta = res.best
    print(f"best alpha={alpha:.9g} beta={beta:.9g} alpha*beta={alpha * beta:.9g} loglik={res.best_loglik:.9g}")
    n_inf = sum(1 for c in res.cells if c.loglik == -math.inf)
    return run.finish(res.best_loglik, {"best": {"alpha": alpha, "beta": beta}, "cells": len(res.cells),
                                        "cells_minus_inf": n_inf})


def cmd_rate_check(cfg: ExperimentConfig, run: _Run, args):
    rc = cfg.rate_check()
    theta = cfg.require_theta("rate-check")
    rep = rate_check(cfg.system, theta, cfg.x0, rc["h_list"], init=rc["init"], mc_samples=rc["mc_samples"],
                     seed=cfg.seed, scale_coeff=rc["scale_coeff"], t_end=rc["t_end"], order=rc["order"])
    slope = "" if rep.slope is None else _fmt(rep.slope)
    rows = [[h, e, s, slope, float(rep.expected_slope), int(rep.degenerate)] for h, e, s in rep.rows()]
    run.add(_write_csv(run.path("rate_check.csv"),
                       ["h", "mean_sq_norm", "std_error", "fitted_slope", "expected_slope", "degenerate"], rows))
    print(f"fitted slope {slope or 'n/a'} (expected {rep.expected_slope:g}){' degenerate' if rep.degenerate else ''}")
    return run.finish(None, {"fitted_slope": rep.slope, "expected_slope": rep.expected_slope,
                             "degenerate": rep.degenerate, "note": rep.note})


COMMANDS = {
    "simulate": cmd_simulate,
    "quantify": cmd_quantify,
    "infer": cmd_infer,
    "tune": cmd_tune,
    "rate-check": cmd_rate_check,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="discvar", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="YAML experiment config")
        src.add_argument("--preset", choices=preset_names(), help="bundled config")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads/processes")
        s.add_argument("--out", type=Path, help="output directory (default: config 'out' or runs/<command>)")
        s.add_argument("--particles", type=int, help="override the particle count")
        s.add_argument("--lag", type=int, help="fixed smoothing lag (default: full smoothing)")
        s.add_argument("--dump-particles", action="store_true", help="also write every sigma particle")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args) -> dict:
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.particles is not None and args.command != "tune":
        over["filter.particles"] = args.particles
    if args.lag is not None:
        over["filter.lag"] = args.lag
    return over


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        over = _overrides(args)
        cfg = load_preset(args.preset, over) if args.preset else load_config(args.config, over)
        out = args.out or Path(cfg.raw.get("out") or Path("runs") / args.command)
        run = _Run(args.command, cfg, Path(out), args.threads)
        report = COMMANDS[args.command](cfg, run, args)
        log.info("wrote %s", report)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FilterCollapseError as exc:
        print(f"numerical failure: {exc}. Check the multiplier prior (alpha*beta well above 1 lets sigma "
              "overflow), the parameter prior, or use more particles.", file=sys.stderr)
        return EXIT_NUMERICAL
    except (IntegrationError, ModelError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SearchError as exc:
        print(f"search failure: {exc}", file=sys.stderr)
        return EXIT_SEARCH


if __name__ == "__main__":
    sys.exit(main())
