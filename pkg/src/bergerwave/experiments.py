"""Experiment runners behind the command line.

Each runner takes a validated :class:`RunConfig` and an output directory,
writes its CSV tables there and returns a JSON-ready summary.  Column
layouts are recorded per file so the CLI can emit a schema.
"""
import csv
import json
import os
import platform
import time
import warnings

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .diagnostics import (
    difference_functionals,
    dist_to_equilibria,
    draw_initial_states,
    fractal_dimension,
    attractor_sample,
    run_trajectories,
    semicontinuity_experiment,
    stabilizability_fit,
    uniform_bound_sup,
)
from .equilibria import enumerate_equilibria, equilibria_summary, equilibria_to_json
from .exceptions import AssumptionViolation, BergerWaveError, StiffnessWarning
from .integrator import Trajectory, simulate
from .model import bounds_or_nan, total_energy, validate_params
from .operators import build_operators
from .states import SimState, mode_state, random_state_in_WR

REQUIRED_LEVEL = {
    "simulate": "basic",
    "equilibria": "basic",
    "decay": "attractor",
    "stabilizability": "dimension",
    "dimension": "dimension",
    "semicontinuity": "attractor",
}
_ORDER = ("basic", "attractor", "dimension")


class Outputs:
    """Collects written CSV files and their column lists."""

    def __init__(self, directory):
        self.directory = directory
        self.schema = {}
        os.makedirs(directory, exist_ok=True)

    def path(self, name):
        return os.path.join(self.directory, name)

    def csv(self, name, columns, rows, description=""):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for row in rows:
                w.writerow([_cell(x) for x in row])
        self.schema[name] = {"columns": list(columns), "description": description}

    def json(self, name, data):
        with open(self.path(name), "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True, default=_jsonable)


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    return x


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return str(x)


def check_assumptions(cfg, experiment=None):
    """Raise :class:`AssumptionViolation` unless f and g pass the required level."""
    exp = experiment or cfg.experiment
    need = REQUIRED_LEVEL.get(exp, "basic")
    level = max(cfg.validation_level, need, key=_ORDER.index)
    ok, reports = validate_params(cfg.params, level)
    if not ok:
        text = "\n".join(r.summary() for r in reports.values() if not r.holds(level))
        raise AssumptionViolation(f"assumption check failed at level {level!r}:\n{text}", report=reports)
    return reports


def initial_state(cfg, ops):
    ini = cfg.initial
    if ini["kind"] == "random":
        return random_state_in_WR(cfg.params, ops, ini["R"], np.random.default_rng(cfg.seed))
    if ini["kind"] == "mode":
        return mode_state(ops, *(ini[k] for k in ("z", "zt", "v", "vt", "theta")))
    path = ini["path"]
    state = SimState.load_npz(path) if path.endswith(".npz") else SimState.load_json(path)
    state.t = 0.0
    return state


# -- runners -----------------------------------------------------------------


def run_simulate(cfg, out, n_jobs=1):
    ops = build_operators(cfg.grid, mu=cfg.params.mu, gamma=cfg.params.gamma)
    s0 = initial_state(cfg, ops)
    traj = simulate(s0, cfg.params, ops, cfg.dt, cfg.T, save_every=cfg.save_every, tol=cfg.tol)
    traj.to_csv(out.path("energy.csv"))
    out.schema["energy.csv"] = {"columns": list(Trajectory.CSV_COLUMNS), "description": "energy ledger per saved time"}
    traj.final_state.save_json(out.path("final_state.json"))
    E = traj.energy
    return {
        "E_initial": float(E[0]),
        "E_final": float(E[-1]),
        "max_energy_increase": float(np.max(np.diff(E), initial=0.0)),
        "max_abs_energy_residual": float(np.max(np.abs(traj.energy_residuals), initial=0.0)),
        "n_steps": len(traj.reports),
        "mean_newton_iters": float(np.mean([r.newton_iters for r in traj.reports])) if traj.reports else 0.0,
    }


def run_equilibria(cfg, out, n_jobs=1):
    ops = build_operators(cfg.grid, mu=cfg.params.mu, gamma=cfg.params.gamma)
    blk = cfg.blocks.get("equilibria", {"n_starts": 8, "dedupe_tol": 1e-6})
    eqs = enumerate_equilibria(cfg.params, ops, n_starts=blk["n_starts"], seed=cfg.seed, dedupe_tol=blk["dedupe_tol"])
    equilibria_to_json(eqs, out.path("equilibria.json"))
    bounds = bounds_or_nan(cfg.params)
    rows = [
        (e.label, e.residual_wave, e.residual_plate, e.min_eig_wave, e.min_eig_plate,
         total_energy(e.as_state(), cfg.params, ops, bounds=bounds).E_total)
        for e in eqs
    ]
    cols = ("label", "residual_wave", "residual_plate", "min_eig_wave", "min_eig_plate", "E_total")
    out.csv("equilibria.csv", cols, rows, "stationary states (z*, 0, v*, 0, 0)")
    summ = equilibria_summary(eqs, cfg.params, ops)
    summ["max_energy"] = float(max(r[-1] for r in rows)) if rows else float("nan")
    return summ


def run_decay(cfg, out, n_jobs=1):
    p = cfg.params
    ops = build_operators(cfg.grid, mu=p.mu, gamma=p.gamma)
    blk = cfg.blocks.get("decay", {"n_trajectories": 4, "R": 10.0, "n_starts": 8})
    eqs = enumerate_equilibria(p, ops, n_starts=blk["n_starts"], seed=cfg.seed)
    starts = draw_initial_states(p, ops, blk["n_trajectories"], blk["R"], cfg.seed)
    trajs = run_trajectories(starts, p, cfg.grid, cfg.dt, cfg.T, cfg.save_every, cfg.tol, n_jobs)
    bounds = bounds_or_nan(p)
    rows, finals = [], []
    for i, tr in enumerate(trajs):
        for s, led in zip(tr.states, tr.ledgers):
            d = dist_to_equilibria(s, eqs, p, ops)
            rows.append((i, s.t, led.E_total, d))
        finals.append(rows[-1][-1])
    out.csv("decay.csv", ("trajectory", "t", "E_total", "dist_to_equilibria"), rows, "distance to the equilibrium set")
    sup_E = max(total_energy(e.as_state(), p, ops, bounds=bounds).E_total for e in eqs)
    return {
        "n_trajectories": len(trajs),
        "n_equilibria": len(eqs),
        "final_distances": [float(x) for x in finals],
        "max_final_distance": float(max(finals)),
        "n_within_1e-4": int(sum(x <= 1e-4 for x in finals)),
        "max_equilibrium_energy": float(sup_E),
    }


def run_stabilizability(cfg, out, n_jobs=1):
    p = cfg.params
    ops = build_operators(cfg.grid, mu=p.mu, gamma=p.gamma)
    blk = cfg.blocks.get("stabilizability", {"n_pairs": 2, "R": 10.0, "delta": 0.25})
    starts = draw_initial_states(p, ops, 2 * blk["n_pairs"], blk["R"], cfg.seed)
    trajs = run_trajectories(starts, p, cfg.grid, cfg.dt, cfg.T, cfg.save_every, cfg.tol, n_jobs)
    rows, series = [], []
    for k in range(blk["n_pairs"]):
        t1, t2 = trajs[2 * k], trajs[2 * k + 1]
        C1, om, C2, rep = stabilizability_fit(t1, t2, p, ops, delta=blk["delta"])
        d = difference_functionals(t1, t2, p, ops, delta=blk["delta"])
        rows.append((k, C1, om, C2, rep["valid"], rep["n_violations"], *d.main_constants, d.main_ratio, d.main_feasible))
        series += [(k,) + r for r in d.rows()]
    out.csv(
        "stabilizability.csv",
        ("pair", "C1", "omega", "C2", "valid", "n_violations", "c0", "c1", "c2", "main_ratio", "main_feasible"),
        rows,
        "fitted stabilizability and main-inequality constants per pair",
    )
    out.csv("functionals.csv", ("pair",) + tuple(d.COLUMNS), series, "difference functionals per pair")
    return {
        "n_pairs": len(rows),
        "all_valid": bool(all(r[4] for r in rows)),
        "min_omega": float(min(r[2] for r in rows)),
        "total_violations": int(sum(r[5] for r in rows)),
        "all_main_feasible": bool(all(r[10] for r in rows)),
    }


def run_dimension(cfg, out, n_jobs=1):
    p = cfg.params
    ops = build_operators(cfg.grid, mu=p.mu, gamma=p.gamma)
    blk = cfg.blocks["dimension"]
    sample = attractor_sample(
        p, ops, blk["n_trajectories"], blk["T_burn"], blk["T_sample"], R=blk["R"], dt=cfg.dt,
        sample_every=blk["sample_every"], seed=cfg.seed, tol=cfg.tol, n_jobs=n_jobs,
    )
    est = fractal_dimension(sample, blk["projection_dim"], p, ops)
    out.csv("dimension.csv", ("epsilon", "count", "in_window"), est.rows(), "box-counting ladder")
    return {
        "n_samples": len(sample),
        "slope": est.slope,
        "slope_stderr": est.slope_stderr,
        "projection": est.projection,
        "uniform_bound_sup": float(uniform_bound_sup(sample, p, ops)),
    }


def run_semicontinuity(cfg, out, n_jobs=1):
    p = cfg.params
    ops = build_operators(cfg.grid, mu=p.mu, gamma=p.gamma)
    blk = cfg.blocks["semicontinuity"]
    rows = semicontinuity_experiment(
        blk["lambda_list"], blk["lambda_0"], p, ops, n_trajectories=blk["n_trajectories"],
        T_burn=blk["T_burn"], T_sample=blk["T_sample"], R=blk["R"], dt=cfg.dt,
        sample_every=blk["sample_every"], seed=cfg.seed, tol=cfg.tol, norm=blk["norm"], n_jobs=n_jobs,
    )
    cols = ("gamma", "kappa", "n_samples", "semidistance", "semidistance_product")
    out.csv("semicontinuity.csv", cols, [tuple(r.get(c, float("nan")) for c in cols) for r in rows], "semidistances")
    return {"rows": rows, "lambda_0": blk["lambda_0"], "norm": blk["norm"]}


RUNNERS = {
    "simulate": run_simulate,
    "equilibria": run_equilibria,
    "decay": run_decay,
    "stabilizability": run_stabilizability,
    "dimension": run_dimension,
    "semicontinuity": run_semicontinuity,
}


def _cell_dir(gamma, kappa):
    return f"cell_g{gamma:g}_k{kappa:g}"


def _run_cell(cfg, sub, gamma, kappa, directory):
    cell_cfg = cfg.with_params(gamma=gamma, kappa=kappa)
    cell_cfg.experiment = sub
    out = Outputs(directory)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StiffnessWarning)
            summary = RUNNERS[sub](cell_cfg, out, 1)
        status = "ok"
    except BergerWaveError as exc:
        summary, status = {}, f"error: {exc}"
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        summary, status = {}, f"error: {type(exc).__name__}: {exc}"
    out.json("summary.json", {"status": status, **summary})
    return status, summary, out.schema


def run_sweep(cfg, out, n_jobs=1):
    """Run the sub-experiment on every (gamma, kappa) cell; failures are kept per cell."""
    blk = cfg.blocks["sweep"]
    sub = blk["experiment"]
    cells = blk["cells"]
    for g, k in cells:
        check_assumptions(cfg.with_params(gamma=g, kappa=k), sub)
    jobs = [delayed(_run_cell)(cfg, sub, g, k, out.path(_cell_dir(g, k))) for g, k in cells]
    if n_jobs == 1:
        results = [f(*a, **kw) for f, a, kw in jobs]
    else:
        results = Parallel(n_jobs=n_jobs)(jobs)
    scalar_keys = []
    for _, summ, _ in results:
        for key, val in summ.items():
            if isinstance(val, (int, float, bool, np.number)) and key not in scalar_keys:
                scalar_keys.append(key)
    rows = [
        (g, k, status) + tuple(summ.get(key, "") for key in scalar_keys)
        for (g, k), (status, summ, _) in zip(cells, results)
    ]
    out.csv("sweep.csv", ("gamma", "kappa", "status", *scalar_keys), rows, f"aggregate of {sub} per (gamma, kappa)")
    for (g, k), (_, _, schema) in zip(cells, results):
        for name, entry in schema.items():
            out.schema[f"{_cell_dir(g, k)}/{name}"] = entry
    n_fail = sum(1 for s, _, _ in results if s != "ok")
    return {"experiment": sub, "n_cells": len(cells), "n_failed": n_fail}


RUNNERS["sweep"] = run_sweep


def execute(cfg, out_dir, n_jobs=None):
    """Validate, run and write all outputs for ``cfg``; returns the summary."""
    n_jobs = cfg.threads if n_jobs is None else n_jobs
    if cfg.experiment != "sweep":
        check_assumptions(cfg)
    out = Outputs(out_dir)
    out.json("config.resolved.json", cfg.resolved())
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", StiffnessWarning)
        summary = RUNNERS[cfg.experiment](cfg, out, n_jobs)
    wall = time.perf_counter() - t0
    notes = sorted({str(w.message) for w in caught if issubclass(w.category, StiffnessWarning)})
    out.json("summary.json", {"experiment": cfg.experiment, "seed": cfg.seed, "config_hash": cfg.config_hash(), **summary})
    out.json(
        "manifest.json",
        {
            "package": "bergerwave",
            "version": __version__,
            "experiment": cfg.experiment,
            "seed": cfg.seed,
            "config_hash": cfg.config_hash(),
            "threads": n_jobs,
            "wall_time_s": wall,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "warnings": notes,
            "files": sorted(out.schema),
        },
    )
    out.json("schema.json", out.schema)
    return summary
