"""Empirical-Bayes grid search over the multiplier prior ``(alpha, beta)``."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _streams
from .error_prior import GammaMultiplierPrior, InitialSigmaPrior
from .errors import ConfigError, DiscvarError, SearchError
from .joint_inference import ParamPrior, run_joint_filter
from .observation import ObservationOperator, ObservationSet
from .ode_core import OdeSystem, SolverGrid
from .particle_engine import FilterConfig, run_filter

log = logging.getLogger(__name__)

__all__ = ["GridSpec", "RunSpec", "HeatmapCell", "SearchResult", "evaluate_cell", "search",
           "write_heatmap", "read_heatmap", "write_leaderboard"]


@dataclass(frozen=True)
class GridSpec:
    """Candidate ``(alpha, beta)`` pairs.

    With ``constrained=True`` the candidates are ``(alpha, 1/alpha)`` and
    ``betas`` is ignored; otherwise the full product of both lists.
    """

    alphas: tuple
    betas: tuple | None = None
    constrained: bool = False
    k_eval: int = 50
    seed_policy: str = "shared"

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if self.betas is not None:
            object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.alphas or (not self.constrained and not self.betas):
            raise ConfigError("grid needs nonempty alpha and beta lists")
        if any(a <= 0 for a in self.alphas) or any(b <= 0 for b in (self.betas or ())):
            raise ConfigError("grid values must be positive")
        if self.seed_policy not in ("shared", "per-cell"):
            raise ConfigError("seed_policy must be 'shared' or 'per-cell'")
        if self.k_eval < 1:
            raise ConfigError("k_eval must be >= 1")

    def pairs(self) -> list[tuple[float, float]]:
        if self.constrained:
            return [(a, 1.0 / a) for a in self.alphas]
        return [(a, b) for a in self.alphas for b in self.betas]


@dataclass(frozen=True)
class RunSpec:
    """Everything a single marginal-likelihood evaluation needs except ``lambda``.

    ``theta`` set means a fixed-parameter filter; otherwise ``param_prior``
    selects the joint filter.
    """

    system: OdeSystem
    obs: ObservationSet
    grid: SolverGrid
    op: ObservationOperator
    x0: tuple
    theta: tuple | None = None
    param_prior: ParamPrior | None = None
    init_prior: InitialSigmaPrior = field(default_factory=InitialSigmaPrior)
    lag: int | None = None
    resampling: str = "multinomial"
    seed: int = 0
    ignore_error: bool = False

    def __post_init__(self):
        if (self.theta is None) == (self.param_prior is None):
            raise ConfigError("give exactly one of theta (fixed) or param_prior (joint)")


@dataclass(frozen=True)
class HeatmapCell:
    alpha: float
    beta: float
    loglik: float
    seed: int
    reason: str = ""


@dataclass
class SearchResult:
    best: tuple[float, float]
    best_loglik: float
    leaderboard: list
    cells: list

    def top(self, n: int = 10) -> list:
        return self.leaderboard[:n]


def evaluate_cell(lam: tuple[float, float], run_spec: RunSpec, k_eval: int, seed: int) -> HeatmapCell:
    """Particle estimate of ``log p(y | lambda)``; failures map to ``-inf``."""
    alpha, beta = lam
    prior = GammaMultiplierPrior(alpha, beta)
    config = FilterConfig(n_particles=k_eval, lag=run_spec.lag, resampling=run_spec.resampling, seed=seed)
    try:
        if run_spec.theta is not None:
            res = run_filter(run_spec.system, run_spec.theta, run_spec.obs, run_spec.grid, prior,
                             run_spec.init_prior, run_spec.op, config, run_spec.x0, run_spec.ignore_error)
        else:
            res = run_joint_filter(run_spec.system, run_spec.obs, run_spec.grid, prior, run_spec.init_prior,
                                   run_spec.param_prior, run_spec.op, config, run_spec.x0, run_spec.ignore_error)
    except DiscvarError as exc:
        log.debug("cell (%g, %g) failed: %s", alpha, beta, exc)
        return HeatmapCell(alpha, beta, -math.inf, seed, f"{type(exc).__name__}: {exc}")
    ll = res.log_marginal
    if not math.isfinite(ll):
        return HeatmapCell(alpha, beta, -math.inf, seed, "non-finite log-likelihood")
    return HeatmapCell(alpha, beta, float(ll), seed)


def _evaluate(args):
    return evaluate_cell(*args)


def _rank_key(cell: HeatmapCell):
    return (-cell.loglik, cell.alpha, cell.beta)


def search(grid: GridSpec, run_spec: RunSpec, workers: int = 1) -> SearchResult:
    """Evaluate every cell and pick the maximizer.

    Ties go to the smaller ``alpha``, then the smaller ``beta``. Cells are
    spread over ``workers`` processes and collected by cell index, so the
    result does not depend on ``workers``.
    """
    pairs = grid.pairs()
    if grid.seed_policy == "shared":
        seeds = [run_spec.seed] * len(pairs)
    else:
        seeds = [_streams.derive_seed(run_spec.seed, _streams.CELL, i) for i in range(len(pairs))]
    jobs = [(lam, run_spec, grid.k_eval, s) for lam, s in zip(pairs, seeds)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_evaluate, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        cells = [_evaluate(j) for j in jobs]
    ranked = sorted(cells, key=_rank_key)
    if not math.isfinite(ranked[0].loglik):
        raise SearchError(f"all {len(cells)} cells evaluated to -inf")
    best = ranked[0]
    return SearchResult((best.alpha, best.beta), best.loglik, ranked, cells)


def _fmt(v: float) -> str:
    if v == -math.inf:
        return "-inf"
    return f"{v:.9g}"


def write_heatmap(cells: Sequence[HeatmapCell], path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "beta", "loglik"])
        for c in cells:
            w.writerow([_fmt(c.alpha), _fmt(c.beta), _fmt(c.loglik)])
    return path


def read_heatmap(path) -> list[tuple[float, float, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["alpha", "beta", "loglik"]:
            raise ConfigError(f"{path}: unexpected heatmap header {header}")
        return [(float(a), float(b), float(ll)) for a, b, ll in reader]


def write_leaderboard(result: SearchResult, path, n: int = 10) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "alpha", "beta", "alpha_times_beta", "loglik"])
        for rank, c in enumerate(result.top(n), start=1):
            w.writerow([rank, _fmt(c.alpha), _fmt(c.beta), _fmt(c.alpha * c.beta), _fmt(c.loglik)])
    return path


def heatmap_matrix(cells: Sequence[HeatmapCell]):
    """Cells as a dense ``(n_alpha, n_beta)`` array plus the sorted axes."""
    alphas = np.unique([c.alpha for c in cells])
    betas = np.unique([c.beta for c in cells])
    grid = np.full((len(alphas), len(betas)), np.nan)
    for c in cells:
        grid[np.searchsorted(alphas, c.alpha), np.searchsorted(betas, c.beta)] = c.loglik
    return alphas, betas, grid
