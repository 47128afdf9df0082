"""Gaussian observation model inflated by the discretization-error variance.

``y ~ N(H x_num, Gamma + H diag(sigma^2) H^T)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ModelError
from .ode_core import OdeSystem, SolverGrid, euler_trajectory, reference_solution

__all__ = [
    "ObservationOperator",
    "ObservationSet",
    "effective_covariance",
    "log_likelihood",
    "generate_observations",
    "exact_errors",
]

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class ObservationOperator:
    """Linear observation ``H`` (d_Y x d_X) and noise covariance ``Gamma``."""

    H: np.ndarray
    Gamma: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        G = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        if G.shape != (H.shape[0], H.shape[0]):
            raise ConfigError(f"Gamma must be {H.shape[0]}x{H.shape[0]}, got {G.shape}")
        if np.linalg.matrix_rank(H) < min(H.shape):
            raise ConfigError("H must have full rank")
        if not np.allclose(G, G.T, rtol=0, atol=1e-12 * max(1.0, np.abs(G).max())):
            raise ConfigError("Gamma must be symmetric")
        try:
            np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            raise ConfigError("Gamma must be positive definite") from None
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "Gamma", G)

    @property
    def d_y(self) -> int:
        return self.H.shape[0]

    @property
    def d_x(self) -> int:
        return self.H.shape[1]

    @classmethod
    def diagonal(cls, h_diag, noise_sd):
        return cls(np.diag(np.asarray(h_diag, dtype=float)), np.diag(np.asarray(noise_sd, dtype=float) ** 2))


@dataclass(frozen=True)
class ObservationSet:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != t.shape[0]:
            raise ConfigError("one observation value per time is required")
        if not np.all(np.isfinite(v)) or not np.all(np.isfinite(t)):
            raise ConfigError("observations must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.times)

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"y{c + 1}" for c in range(self.values.shape[1])])
            for t, row in zip(self.times, self.values):
                w.writerow([_fmt(t)] + [_fmt(v) for v in row])
        return path

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[0] != "t" or any(h != f"y{c + 1}" for c, h in enumerate(header[1:])):
            raise ConfigError(f"{path}: expected header t,y1,...,yd, got {header}")
        data = np.array([[float(v) for v in r] for r in body if r], dtype=float)
        return cls(data[:, 0], data[:, 1:])


def _fmt(v) -> str:
    return f"{float(v):.9g}"


def effective_covariance(sigma, op: ObservationOperator) -> np.ndarray:
    """``Gamma + H diag(sigma^2) H^T``; ``sigma`` may carry leading batch axes."""
    sigma = np.asarray(sigma, dtype=float)
    # scale the columns of H instead of forming diag(sigma^2)
    with np.errstate(over="ignore", invalid="ignore"):
        scaled = op.H * (sigma**2)[..., None, :]
        return op.Gamma + scaled @ op.H.T


def _cholesky(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(cov)
        raise ModelError(
            f"effective covariance is not positive definite (min eigenvalue {eig.min():.3e}, "
            f"condition {eig.max() / max(abs(eig.min()), 1e-300):.3e})"
        ) from None


def _forward_solve(chol, r):
    # batched lower-triangular solve chol @ z = r, vectorized over leading axes
    d = chol.shape[-1]
    z = np.empty_like(r)
    for i in range(d):
        acc = r[..., i]
        if i:
            acc = acc - np.einsum("...j,...j->...", chol[..., i, :i], z[..., :i])
        z[..., i] = acc / chol[..., i, i]
    return z


def _gauss_logpdf(resid, cov, d_y):
    chol = _cholesky(cov)
    z = _forward_solve(chol, resid)
    logdet = 2 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * (d_y * LOG_2PI + logdet + np.sum(z * z, axis=-1))


def log_likelihood(y, x_num, sigma, op: ObservationOperator):
    """Log density of ``y`` under the inflated Gaussian observation model.

    ``x_num`` and ``sigma`` may carry matching leading batch axes, in which
    case one log density per batch row is returned. Rows whose sigma has
    overflowed to infinity get ``-inf`` (the density vanishes in that limit).
    """
    y = np.asarray(y, dtype=float)
    x_num = np.asarray(x_num, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if y.shape[-1] != op.d_y or x_num.shape[-1] != op.d_x or sigma.shape[-1] != op.d_x:
        raise ConfigError("inconsistent observation, state or sigma dimension")
    resid = y - x_num @ op.H.T
    cov = effective_covariance(sigma, op)
    batch = cov.shape[:-2]
    resid = np.broadcast_to(resid, batch + (op.d_y,))
    finite = np.all(np.isfinite(cov), axis=(-2, -1)) & np.all(np.isfinite(resid), axis=-1)
    if np.all(finite):
        return _gauss_logpdf(resid.copy(), cov, op.d_y)
    out = np.full(batch, -np.inf)
    if np.any(finite):
        out[finite] = _gauss_logpdf(resid[finite], cov[finite], op.d_y)
    return out


def generate_observations(x0, theta, op: ObservationOperator, times, sys: OdeSystem, rng,
                          h_ref: float = 5e-4, t_start: float = 0.0) -> ObservationSet:
    """Noisy observations of the reference trajectory: ``H x_ref(t) + eps``."""
    times = np.asarray(times, dtype=float)
    x_ref = reference_solution(x0, theta, times, sys, h_ref=h_ref, t_start=t_start)
    chol = np.linalg.cholesky(op.Gamma)
    eps = rng.standard_normal((len(times), op.d_y)) @ chol.T
    return ObservationSet(times, x_ref @ op.H.T + eps)


def exact_errors(theta, x0, grid: SolverGrid, sys: OdeSystem, h_ref: float | None = None) -> np.ndarray:
    """Reference minus Euler solution at every observation time, shape (N+1, d_X)."""
    if h_ref is None:
        h_ref = grid.h / 100
    x_ref = reference_solution(x0, theta, grid.observation_times, sys, h_ref=h_ref, t_start=grid.t_start)
    return x_ref - euler_trajectory(x0, theta, grid, sys)
