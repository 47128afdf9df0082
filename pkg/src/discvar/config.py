"""YAML experiment configuration: loading, validation and echo.

A config is a nested mapping. Every section is optional except ``system``
and ``grid``; commands check for the sections they need. Time lists and
hyperparameter lists accept either an explicit list or an inclusive
``{start, stop, step}`` range. See ``presets/`` for complete examples.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .error_prior import GammaMultiplierPrior, InitialSigmaPrior
from .errors import ConfigError, DiscvarError
from .joint_inference import Normal, ParamPrior, PointMass, TruncatedNormal
from .models import DEFAULT_X0, get_system
from .observation import ObservationOperator, ObservationSet
from .ode_core import SolverGrid

__all__ = ["ExperimentConfig", "load_config", "load_preset", "preset_names", "expand_range", "dump_config"]

_TOP_KEYS = {"system", "theta", "x0", "grid", "observation", "prior", "init", "params", "filter",
             "tune", "rate_check", "seed", "out"}


def expand_range(value, where: str) -> np.ndarray:
    """List or inclusive ``{start, stop, step}`` range as a float array."""
    if isinstance(value, dict):
        _only(value, {"start", "stop", "step"}, where)
        try:
            start, stop, step = (float(value[k]) for k in ("start", "stop", "step"))
        except KeyError as exc:
            raise ConfigError(f"{where}: range needs start, stop and step (missing {exc})") from None
        if step <= 0 or stop < start:
            raise ConfigError(f"{where}: need step > 0 and stop >= start")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        # rounding strips float fuzz such as 0.30000000000000004
        return np.round(start + step * np.arange(n), 12)
    if isinstance(value, (list, tuple)) and value:
        try:
            return np.array([float(v) for v in value])
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: entries must be numbers") from None
    raise ConfigError(f"{where}: expected a nonempty list or a {{start, stop, step}} mapping")


def _only(section: dict, allowed: set, where: str):
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}; allowed {sorted(allowed)}")


def _section(raw: dict, key: str) -> dict:
    sec = raw.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{key}: expected a mapping")
    return sec


def _vector(value, n: int, where: str) -> np.ndarray:
    try:
        v = np.atleast_1d(np.asarray(value, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected numbers") from None
    if v.ndim != 1 or len(v) != n:
        raise ConfigError(f"{where}: expected {n} value(s), got {np.shape(v)}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{where}: values must be finite")
    return v


def _matrix(value, shape, where: str) -> np.ndarray:
    """Full matrix, or a list of diagonal entries."""
    m = np.asarray(value, dtype=float)
    if m.ndim == 1:
        m = np.diag(m)
    if m.shape != shape:
        raise ConfigError(f"{where}: expected shape {shape} (or its diagonal), got {m.shape}")
    return m


def _marginal(spec, where: str):
    if isinstance(spec, (int, float)):
        return PointMass(float(spec))
    if not isinstance(spec, dict) or "dist" not in spec:
        raise ConfigError(f"{where}: expected a number or a mapping with 'dist'")
    kind = spec["dist"]
    try:
        if kind == "normal":
            _only(spec, {"dist", "mu", "sd"}, where)
            return Normal(float(spec["mu"]), float(spec["sd"]))
        if kind == "truncnormal":
            _only(spec, {"dist", "mu", "sd", "lo", "hi"}, where)
            return TruncatedNormal(float(spec["mu"]), float(spec["sd"]), float(spec["lo"]), float(spec["hi"]))
        if kind == "point":
            _only(spec, {"dist", "value"}, where)
            return PointMass(float(spec["value"]))
    except KeyError as exc:
        raise ConfigError(f"{where}: missing {exc}") from None
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: unknown dist {kind!r}; use normal, truncnormal or point")


def _init_prior(sec: dict, where: str) -> InitialSigmaPrior:
    _only(sec, {"mode", "sigma0", "c0", "exponent"}, where)
    try:
        return InitialSigmaPrior(
            mode=sec.get("mode", "zero"),
            sigma0=sec.get("sigma0", 0.0),
            c0=float(sec.get("c0", 1.0)),
            exponent=float(sec.get("exponent", math.inf)),
        )
    except DiscvarError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class ExperimentConfig:
    """Validated view of a raw config mapping.

    ``raw`` keeps the mapping as written (after command-line overrides) so
    it can be echoed and reloaded; ``base_dir`` resolves relative paths.
    """

    raw: dict
    base_dir: Path

    def __post_init__(self):
        raw = self.raw
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        _only(raw, _TOP_KEYS, "config")
        if "system" not in raw:
            raise ConfigError("system: required")
        self.system = get_system(str(raw["system"]))
        self.seed = int(raw.get("seed", 0))
        theta = raw.get("theta")
        self.theta = None if theta is None else _vector(theta, self.system.param_dimension, "theta")
        if self.theta is not None:
            try:
                self.system.check_params(self.theta)
            except DiscvarError as exc:
                raise ConfigError(f"theta: {exc}") from None
        x0 = raw.get("x0", DEFAULT_X0.get(self.system.name))
        if x0 is None:
            raise ConfigError(f"x0: required for system {self.system.name}")
        self.x0 = _vector(x0, self.system.dimension, "x0")
        self._grid()
        self._observation()
        self._filter()

    # sections -----------------------------------------------------------

    def _grid(self):
        sec = _section(self.raw, "grid")
        _only(sec, {"h", "times", "t_start"}, "grid")
        if "h" not in sec or "times" not in sec:
            raise ConfigError("grid: needs h and times")
        times = expand_range(sec["times"], "grid.times")
        # the ODE starts at the first observation time unless told otherwise
        t_start = sec.get("t_start")
        try:
            self.grid = SolverGrid.from_times(float(sec["h"]), times,
                                              t_start=None if t_start is None else float(t_start))
        except DiscvarError as exc:
            raise ConfigError(f"grid: {exc}") from None

    def _observation(self):
        sec = _section(self.raw, "observation")
        _only(sec, {"H", "Gamma", "noise_sd", "file", "h_ref"}, "observation")
        d = self.system.dimension
        try:
            H = np.asarray(sec.get("H", np.ones(d)), dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("observation.H: expected numbers") from None
        # a flat list is the diagonal of a square H
        H = np.diag(H) if H.ndim == 1 else H
        if H.ndim != 2 or H.shape[1] != d:
            raise ConfigError(f"observation.H: needs {d} columns, got shape {H.shape}")
        dy = H.shape[0]
        if "Gamma" in sec and "noise_sd" in sec:
            raise ConfigError("observation: give Gamma or noise_sd, not both")
        if "Gamma" in sec:
            G = _matrix(sec["Gamma"], (dy, dy), "observation.Gamma")
        else:
            G = np.diag(_vector(sec.get("noise_sd", np.ones(dy)), dy, "observation.noise_sd") ** 2)
        try:
            self.op = ObservationOperator(H, G)
        except ConfigError as exc:
            raise ConfigError(f"observation: {exc}") from None
        self.h_ref = float(sec.get("h_ref", 5e-4))
        if not self.h_ref > 0:
            raise ConfigError("observation.h_ref: must be > 0")
        self.obs_file = None
        if sec.get("file"):
            path = (self.base_dir / sec["file"]).resolve()
            if not path.is_file():
                raise ConfigError(f"observation.file: {path} does not exist")
            self.obs_file = path

    def _filter(self):
        sec = _section(self.raw, "filter")
        _only(sec, {"particles", "lag", "resampling"}, "filter")
        self.particles = int(sec.get("particles", 1000))
        if self.particles < 1:
            raise ConfigError("filter.particles: must be >= 1")
        lag = sec.get("lag")
        self.lag = None if lag is None else int(lag)
        if self.lag is not None and self.lag < 0:
            raise ConfigError("filter.lag: must be >= 0 or null")
        self.resampling = sec.get("resampling", "multinomial")
        if self.resampling not in ("multinomial", "systematic"):
            raise ConfigError("filter.resampling: must be multinomial or systematic")

    # lazily validated sections, only needed by some commands ------------

    def prior(self) -> GammaMultiplierPrior:
        sec = _section(self.raw, "prior")
        _only(sec, {"alpha", "beta", "leaderboard"}, "prior")
        if "leaderboard" in sec:
            path = (self.base_dir / sec["leaderboard"]).resolve()
            if not path.is_file():
                raise ConfigError(f"prior.leaderboard: {path} does not exist")
            alpha, beta = _leaderboard_best(path)
        elif "alpha" in sec and "beta" in sec:
            alpha, beta = float(sec["alpha"]), float(sec["beta"])
        else:
            raise ConfigError("prior: needs alpha and beta, or a leaderboard file from tune")
        try:
            return GammaMultiplierPrior(alpha, beta)
        except DiscvarError as exc:
            raise ConfigError(f"prior: {exc}") from None

    def init_prior(self) -> InitialSigmaPrior:
        return _init_prior(_section(self.raw, "init"), "init")

    def param_prior(self) -> ParamPrior:
        sec = self.raw.get("params")
        if not isinstance(sec, dict) or not sec:
            raise ConfigError("params: a prior per ODE parameter is required")
        names = self.system.param_names
        _only(sec, set(names), "params")
        missing = [n for n in names if n not in sec]
        if missing:
            raise ConfigError(f"params: missing prior for {missing}")
        return ParamPrior(tuple(_marginal(sec[n], f"params.{n}") for n in names))

    def tune(self) -> dict:
        sec = _section(self.raw, "tune")
        _only(sec, {"alphas", "betas", "constrained", "particles", "seed_policy"}, "tune")
        if "alphas" not in sec:
            raise ConfigError("tune.alphas: required")
        constrained = bool(sec.get("constrained", False))
        if not constrained and "betas" not in sec:
            raise ConfigError("tune.betas: required unless constrained is true")
        return {
            "alphas": expand_range(sec["alphas"], "tune.alphas"),
            "betas": None if constrained else expand_range(sec["betas"], "tune.betas"),
            "constrained": constrained,
            "k_eval": int(sec.get("particles", 50)),
            "seed_policy": sec.get("seed_policy", "shared"),
        }

    def rate_check(self) -> dict:
        sec = _section(self.raw, "rate_check")
        _only(sec, {"h", "mc_samples", "scale_coeff", "t_end", "init", "order"}, "rate_check")
        if "h" not in sec:
            raise ConfigError("rate_check.h: required")
        h = expand_range(sec["h"], "rate_check.h")
        if len(h) < 3:
            raise ConfigError("rate_check.h: need at least 3 step sizes")
        return {
            "h_list": h,
            "mc_samples": int(sec.get("mc_samples", 2000)),
            "scale_coeff": float(sec.get("scale_coeff", 1.0)),
            "t_end": float(sec.get("t_end", 1.0)),
            "order": float(sec.get("order", 1.0)),
            "init": _init_prior(sec.get("init") or {}, "rate_check.init"),
        }

    def observations(self, rng) -> ObservationSet:
        """Observations from ``observation.file`` or simulated from ``theta``."""
        if self.obs_file is not None:
            obs = ObservationSet.from_csv(self.obs_file)
            if obs.values.shape[1] != self.op.d_y:
                raise ConfigError(f"observation.file: expected {self.op.d_y} columns of values")
            if len(obs) != len(self.grid.observation_times) or not np.allclose(
                    obs.times, self.grid.observation_times, rtol=1e-9, atol=1e-12):
                raise ConfigError("observation.file: times do not match grid.times")
            return obs
        from .observation import generate_observations

        theta = self.require_theta("simulating observations")
        return generate_observations(self.x0, theta, self.op, self.grid.observation_times, self.system, rng,
                                     h_ref=self.h_ref, t_start=self.grid.t_start)

    def require_theta(self, purpose: str) -> np.ndarray:
        if self.theta is None:
            raise ConfigError(f"theta: required for {purpose}")
        return self.theta


def _leaderboard_best(path: Path) -> tuple[float, float]:
    import csv

    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "alpha" not in rows[0]:
        raise ConfigError(f"{path}: not a leaderboard file")
    return float(rows[0]["alpha"]), float(rows[0]["beta"])


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML file, apply dotted-key ``overrides`` and validate."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return from_mapping(raw, path.parent, overrides)


def from_mapping(raw: dict, base_dir=".", overrides: dict | None = None) -> ExperimentConfig:
    raw = copy.deepcopy(raw) if raw is not None else {}
    for key, value in (overrides or {}).items():
        node = raw
        *head, last = key.split(".")
        for part in head:
            node = node.setdefault(part, {})
        node[last] = value
    return ExperimentConfig(raw, Path(base_dir).resolve())


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("discvar.presets").iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str, overrides: dict | None = None) -> ExperimentConfig:
    res = resources.files("discvar.presets").joinpath(f"{name}.yaml")
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
    return from_mapping(yaml.safe_load(res.read_text(encoding="utf-8")), ".", overrides)


def dump_config(cfg: ExperimentConfig, path) -> Path:
    """Write the effective config so that reloading it reproduces the run.

    Relative file references are rewritten as absolute paths.
    """
    raw = copy.deepcopy(cfg.raw)
    obs = raw.get("observation") or {}
    if obs.get("file"):
        obs["file"] = str(cfg.obs_file)
    prior = raw.get("prior") or {}
    if prior.get("leaderboard"):
        prior["leaderboard"] = str((cfg.base_dir / prior["leaderboard"]).resolve())
    path = Path(path)
    path.write_text(yaml.safe_dump(raw, sort_keys=True), encoding="utf-8")
    return path
