"""Run configuration: TOML parsing and validation.

Everything is checked here, before any compute starts.  Errors name the
offending field (``section.key``) or, for syntax errors, the line.
"""
import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .exceptions import ConfigurationError
from .model import ModelParams, NonlinearitySpec
from .operators import GridSpec

EXPERIMENTS = ("simulate", "equilibria", "decay", "stabilizability", "dimension", "sweep", "semicontinuity")
SWEEPABLE = ("simulate", "equilibria", "decay", "stabilizability", "dimension")

TOP_KEYS = {"experiment", "seed", "dt", "T", "save_every", "tol", "threads", "validation_level"}
TOP_KEYS |= {"grid", "params", "initial"} | set(EXPERIMENTS)

# defaults of every experiment block; the keys double as the allowed set
BLOCK_DEFAULTS = {
    "simulate": {},
    "equilibria": {"n_starts": 8, "dedupe_tol": 1e-6},
    "decay": {"n_trajectories": 4, "R": 10.0, "n_starts": 8},
    "stabilizability": {"n_pairs": 2, "R": 10.0, "delta": 0.25},
    "dimension": {
        "n_trajectories": 10,
        "T_burn": 5.0,
        "T_sample": 20.0,
        "sample_every": 0.5,
        "R": 10.0,
        "projection_dim": 8,
    },
    "semicontinuity": {
        "lambda_0": [1.0, 0.0],
        "lambda_list": [[1.0, 0.5], [1.0, 0.25], [1.0, 0.1], [1.0, 0.0]],
        "n_trajectories": 6,
        "T_burn": 5.0,
        "T_sample": 10.0,
        "sample_every": 0.5,
        "R": 10.0,
        "norm": "Y",
    },
    "sweep": {"experiment": "decay", "gamma": [], "kappa": [], "cells": []},
}

INITIAL_DEFAULTS = {"kind": "random", "R": 10.0, "z": 0.0, "zt": 0.0, "v": 0.0, "vt": 0.0, "theta": 0.0, "path": ""}
PARAM_KEYS = {"alpha", "beta", "gamma", "kappa", "Q", "mu", "p0", "f", "g"}
GRID_KEYS = {"nx", "ny", "n0"}


@dataclass
class RunConfig:
    grid: GridSpec
    params: ModelParams
    experiment: str
    dt: float = 0.05
    T: float = 1.0
    save_every: int = 1
    tol: float = 1e-10
    seed: int = 0
    threads: int = 1
    validation_level: str = "attractor"
    initial: dict = field(default_factory=lambda: dict(INITIAL_DEFAULTS))
    blocks: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)

    @property
    def block(self):
        return self.blocks.get(self.experiment, {})

    def resolved(self):
        """Plain-data echo of the fully resolved configuration."""
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "dt": self.dt,
            "T": self.T,
            "save_every": self.save_every,
            "tol": self.tol,
            "threads": self.threads,
            "validation_level": self.validation_level,
            "grid": {"nx": self.grid.nx, "ny": self.grid.ny, "n0": self.grid.n0},
            "params": self.params.to_dict(),
            "initial": dict(self.initial),
            **{k: copy.deepcopy(v) for k, v in self.blocks.items()},
        }

    def config_hash(self):
        """SHA-256 of the resolved config, excluding the thread count."""
        data = self.resolved()
        data.pop("threads")
        text = json.dumps(data, sort_keys=True, default=_jsonable)
        return hashlib.sha256(text.encode()).hexdigest()

    def with_params(self, **changes):
        out = copy.copy(self)
        out.params = self.params.replace(**changes)
        return out


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not serialisable: {type(x)}")


def _unknown(section, data, allowed):
    extra = sorted(set(data) - set(allowed))
    if extra:
        where = f"{section}." if section else ""
        raise ConfigurationError(f"unknown field(s): {', '.join(where + k for k in extra)}")


def _number(name, value, positive=False, integer=False, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{name} must be a number, got {value!r}")
    if integer and (not isinstance(value, int)):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if not np.isfinite(value):
        raise ConfigurationError(f"{name} must be finite")
    if positive and not value > 0:
        raise ConfigurationError(f"{name} must be positive, got {value}")
    if minimum is not None and value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return value


def _nonlinearity(name, value):
    """``[c1, c3, ...]`` (odd polynomial) or ``{s = [...], values = [...]}`` (table)."""
    if isinstance(value, list):
        if not value:
            raise ConfigurationError(f"{name} needs at least one coefficient")
        coeffs = [_number(f"{name}[{i}]", c) for i, c in enumerate(value)]
        return NonlinearitySpec.odd_polynomial(*coeffs)
    if isinstance(value, dict):
        _unknown(name, value, {"s", "values"})
        if "s" not in value or "values" not in value:
            raise ConfigurationError(f"{name} table needs both 's' and 'values'")
        try:
            return NonlinearitySpec.tabulated(value["s"], value["values"])
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"{name}: {exc}") from exc
    raise ConfigurationError(f"{name} must be a coefficient list or a table, got {value!r}")


def _params(data):
    _unknown("params", data, PARAM_KEYS)
    kw = {}
    for key in ("alpha", "beta", "gamma", "kappa", "Q", "mu"):
        if key in data:
            kw[key] = float(_number(f"params.{key}", data[key]))
    if "p0" in data:
        p0 = data["p0"]
        if isinstance(p0, list):
            kw["p0"] = np.array([_number(f"params.p0[{i}]", x) for i, x in enumerate(p0)], dtype=float)
        else:
            kw["p0"] = float(_number("params.p0", p0))
    if "f" in data:
        kw["f_spec"] = _nonlinearity("params.f", data["f"])
    if "g" in data:
        kw["g_spec"] = _nonlinearity("params.g", data["g"])
    return ModelParams(**kw)


def _block(name, data):
    defaults = BLOCK_DEFAULTS[name]
    if not isinstance(data, dict):
        raise ConfigurationError(f"[{name}] must be a table")
    _unknown(name, data, defaults)
    out = copy.deepcopy(defaults)
    out.update(data)
    for key in ("n_starts", "n_trajectories", "n_pairs", "projection_dim"):
        if key in out:
            _number(f"{name}.{key}", out[key], positive=True, integer=True)
    for key in ("R", "T_burn", "T_sample", "sample_every", "dedupe_tol"):
        if key in out:
            _number(f"{name}.{key}", out[key], positive=True)
    if "delta" in out and not 0 < _number(f"{name}.delta", out["delta"]) < 1:
        raise ConfigurationError(f"{name}.delta must lie in (0, 1)")
    if name == "semicontinuity":
        lam0 = _pair(f"{name}.lambda_0", out["lambda_0"])
        if not out["lambda_list"]:
            raise ConfigurationError(f"{name}.lambda_list is empty")
        pairs = [_pair(f"{name}.lambda_list[{i}]", p) for i, p in enumerate(out["lambda_list"])]
        out["lambda_0"], out["lambda_list"] = lam0, pairs
        if out["norm"] not in ("Y", "H"):
            raise ConfigurationError(f"{name}.norm must be 'Y' or 'H'")
    if name == "sweep":
        if out["experiment"] not in SWEEPABLE:
            raise ConfigurationError(f"sweep.experiment must be one of {SWEEPABLE}, got {out['experiment']!r}")
        cells = [_pair(f"sweep.cells[{i}]", c) for i, c in enumerate(out["cells"])]
        gam = [_number(f"sweep.gamma[{i}]", g) for i, g in enumerate(out["gamma"])]
        kap = [_number(f"sweep.kappa[{i}]", k) for i, k in enumerate(out["kappa"])]
        if bool(gam) != bool(kap):
            raise ConfigurationError(f"sweep grid is empty: sweep.gamma has {len(gam)} values, sweep.kappa has {len(kap)}")
        cells += [[float(g), float(k)] for g in gam for k in kap]
        if not cells:
            raise ConfigurationError("sweep grid is empty: give sweep.gamma and sweep.kappa, or sweep.cells")
        out["cells"] = cells
    return out


def _pair(name, value):
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigurationError(f"{name} must be a [gamma, kappa] pair, got {value!r}")
    g, k = (float(_number(name, x)) for x in value)
    if not (0 <= g <= 1 and 0 <= k <= 1):
        raise ConfigurationError(f"{name} entries must lie in [0, 1], got {value!r}")
    return [g, k]


def _initial(data):
    _unknown("initial", data, INITIAL_DEFAULTS)
    out = dict(INITIAL_DEFAULTS)
    out.update(data)
    if out["kind"] not in ("random", "mode", "file"):
        raise ConfigurationError(f"initial.kind must be 'random', 'mode' or 'file', got {out['kind']!r}")
    _number("initial.R", out["R"], positive=True)
    for key in ("z", "zt", "v", "vt", "theta"):
        _number(f"initial.{key}", out[key])
    if out["kind"] == "file" and not out["path"]:
        raise ConfigurationError("initial.path is required when initial.kind = 'file'")
    return out


def parse_config(data, source=None):
    """Build a validated :class:`RunConfig` from a parsed TOML mapping."""
    if not isinstance(data, dict):
        raise ConfigurationError("configuration must be a table")
    _unknown("", data, TOP_KEYS)
    if "experiment" not in data:
        raise ConfigurationError("missing field: experiment")
    exp = data["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigurationError(f"experiment must be one of {EXPERIMENTS}, got {exp!r}")

    grid_data = data.get("grid", {})
    _unknown("grid", grid_data, GRID_KEYS)
    for k, v in grid_data.items():
        _number(f"grid.{k}", v, integer=True)
    grid = GridSpec(**grid_data)
    params = _params(data.get("params", {}))

    dt = float(_number("dt", data.get("dt", 0.05), positive=True))
    T = float(_number("T", data.get("T", 1.0), positive=True))
    n = T / dt
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise ConfigurationError(f"T = {T} must be an integer multiple of dt = {dt}")
    save_every = _number("save_every", data.get("save_every", 1), positive=True, integer=True)
    tol = float(_number("tol", data.get("tol", 1e-10), positive=True))
    seed = _number("seed", data.get("seed", 0), integer=True, minimum=0)
    threads = _number("threads", data.get("threads", 1), positive=True, integer=True)
    level = data.get("validation_level", "attractor")
    if level not in ("basic", "attractor", "dimension"):
        raise ConfigurationError(f"validation_level must be basic, attractor or dimension, got {level!r}")

    if exp != "simulate" and exp not in data and exp not in ("equilibria", "decay", "stabilizability"):
        raise ConfigurationError(f"missing [{exp}] block for experiment {exp!r}")
    blocks = {exp: _block(exp, data.get(exp, {}))}
    if exp == "sweep":
        sub = blocks["sweep"]["experiment"]
        blocks[sub] = _block(sub, data.get(sub, {}))
    for name in EXPERIMENTS:
        if name in data and name not in blocks:
            blocks[name] = _block(name, data[name])

    return RunConfig(
        grid=grid,
        params=params,
        experiment=exp,
        dt=dt,
        T=T,
        save_every=save_every,
        tol=tol,
        seed=seed,
        threads=threads,
        validation_level=level,
        initial=_initial(data.get("initial", {})),
        blocks=blocks,
        source={"path": str(source)} if source else {},
    )


def load_config(path):
    """Read and validate a TOML run config."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: syntax error: {exc}") from exc
    return parse_config(data, source=path)
