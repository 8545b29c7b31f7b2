"""On-disk formats of runs, diagnostics and datasets.

Files
-----
summary.json
    Run configuration, termination, evidence and one record per level
    (epsilon, proposal scale and standard deviations, acceptance rates,
    adaptation outcome, evaluation counts, gamma, seed indices).  The
    level-0 tolerance is infinite and written as null.
particles.csv
    ``level,chain,step,theta_1..theta_d,rho``.  Conditional-level rows use
    the chain layout; level-0 rows have chain = particle index, step = 0.
particles_x.csv
    ``level,chain,step,x_1..x_l``, same row keys, for the levels selected
    by ``store_x`` (none, final or all).
diagnostics.json
    Per level: gamma, R(0), estimator variance and posterior mean of h,
    posterior mean of theta, quadratic error against theta_true and the
    Gaussian entropy bound.  Undefined values are null.
data.json
    Frozen dataset: model name, data seed, theta_true, y and force record.

Floats are written in the shortest representation that round-trips a
64-bit double, so reruns are byte-identical and re-reading is exact.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Callable

import numpy as np

from .diagnostics import (
    UndefinedDiagnosticError,
    differential_entropy_bound,
    estimator_variance,
    posterior_mean_qoi,
    quadratic_error,
    qoi_squared_norm,
)
from .subsim import SubSimRun
from .samplers import ChainMatrix

__all__ = [
    "diagnostics_summary",
    "fmt",
    "read_csv_table",
    "read_json",
    "read_particles_csv",
    "read_particles_x_csv",
    "run_summary",
    "write_csv_table",
    "write_json",
    "write_particles_csv",
    "write_particles_x_csv",
]


def fmt(value) -> str:
    """Shortest round-trip text of a number; integers stay integers."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if value is None:
        return ""
    return repr(float(value))


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv_table(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


def read_csv_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _level_rows(rec, values: np.ndarray):
    """(level, chain, step, *values) in stored order."""
    if isinstance(rec.particles, ChainMatrix):
        nc, ns = rec.particles.rho.shape
        flat = values.reshape(nc * ns, -1)
        for n in range(nc * ns):
            yield (rec.level, n // ns, n % ns, *flat[n])
    else:
        for n, row in enumerate(values.reshape(len(values), -1)):
            yield (rec.level, n, 0, *row)


def write_particles_csv(path, run: SubSimRun) -> None:
    d = run.levels[0].flat.theta.shape[1]
    header = ["level", "chain", "step", *[f"theta_{i + 1}" for i in range(d)], "rho"]

    def rows():
        for rec in run.levels:
            flat = rec.flat
            yield from _level_rows(rec, np.column_stack([flat.theta, flat.rho]))

    write_csv_table(path, header, rows())


def write_particles_x_csv(path, run: SubSimRun, which: str = "final") -> None:
    if which not in ("final", "all"):
        raise ValueError(f"store_x must be 'final' or 'all' to write x, got {which!r}")
    n_obs = run.levels[0].flat.x.shape[1]
    header = ["level", "chain", "step", *[f"x_{l + 1}" for l in range(n_obs)]]
    levels = run.levels if which == "all" else run.levels[-1:]

    def rows():
        for rec in levels:
            yield from _level_rows(rec, rec.flat.x)

    write_csv_table(path, header, rows())


def _read_levels(path, prefix: str) -> dict[int, dict[str, np.ndarray]]:
    header, rows = read_csv_table(path)
    cols = [i for i, h in enumerate(header) if h.startswith(prefix)]
    out: dict[int, dict[str, list]] = {}
    for row in rows:
        lvl = int(row[0])
        entry = out.setdefault(lvl, {"chain": [], "step": [], "values": [], "rho": []})
        entry["chain"].append(int(row[1]))
        entry["step"].append(int(row[2]))
        entry["values"].append([float(row[i]) for i in cols])
        if header[-1] == "rho":
            entry["rho"].append(float(row[-1]))
    return {
        lvl: {k: np.asarray(v, dtype=int if k in ("chain", "step") else float) for k, v in e.items()}
        for lvl, e in out.items()
    }


def read_particles_csv(path) -> dict[int, dict[str, np.ndarray]]:
    """Level -> arrays ``chain``, ``step``, ``theta`` (n, d) and ``rho``."""
    data = _read_levels(path, "theta_")
    for e in data.values():
        e["theta"] = e.pop("values")
    return data


def read_particles_x_csv(path) -> dict[int, dict[str, np.ndarray]]:
    """Level -> arrays ``chain``, ``step`` and ``x`` (n, l)."""
    data = _read_levels(path, "x_")
    for e in data.values():
        e["x"] = e.pop("values")
        e.pop("rho")
    return data


def run_summary(run: SubSimRun, model_name: str) -> dict:
    cfg = run.config
    levels = []
    for rec in run.levels:
        levels.append({
            "level": rec.level,
            "epsilon": rec.epsilon,
            "scale": rec.scale,
            "sigma": None if rec.proposal is None else rec.proposal.sigma,
            "acceptance_rate": rec.acceptance_rate,
            "component_acceptance": rec.component_acceptance,
            "adapt_converged": rec.adapt_converged,
            "adapt_rounds": rec.adapt_rounds,
            "pilot_acceptance": rec.pilot_acceptance,
            "pilot_evaluations": rec.pilot_evaluations,
            "model_evaluations": rec.model_evaluations,
            "gamma": rec.gamma,
            "r0": rec.r0,
            "seed_indices": rec.seed_indices,
        })
    cond = run.conditional_levels
    return {
        "model": model_name,
        "config": {
            "N": cfg.N, "P0": cfg.P0, "m_max": cfg.m_max, "epsilon_target": cfg.epsilon_target,
            "sigma0": cfg.sigma0, "sigma_schedule": cfg.sigma_schedule,
            "adapt": {
                "enabled": cfg.adapt.enabled, "pilot_length": cfg.adapt.pilot_length,
                "n_pilot_chains": cfg.adapt.n_pilot_chains, "band": cfg.adapt.band,
                "factor": cfg.adapt.factor, "max_rounds": cfg.adapt.max_rounds,
            },
        },
        "n_levels": run.n_levels,
        "termination": run.termination,
        "evidence": run.evidence_estimate,
        "epsilons": [r.epsilon for r in cond],
        "scales": [r.scale for r in cond],
        "acceptance_rates": [r.acceptance_rate for r in cond],
        "gammas": [r.gamma for r in cond],
        "model_evaluations": sum(r.model_evaluations + r.pilot_evaluations for r in run.levels),
        "levels": levels,
    }


def _safe(fn, *args):
    try:
        return fn(*args)
    except UndefinedDiagnosticError:
        return None


def diagnostics_summary(run: SubSimRun, theta_true=None, h: Callable = qoi_squared_norm) -> dict:
    out = []
    for rec in run.levels:
        flat = rec.flat
        mean = flat.theta.mean(axis=0)
        entry = {
            "level": rec.level,
            "epsilon": rec.epsilon,
            "posterior_mean_h": posterior_mean_qoi(flat, h),
            "posterior_mean_theta": mean,
            "entropy_bound": _safe(differential_entropy_bound, flat),
            "quadratic_error": None if theta_true is None else quadratic_error(mean, theta_true),
            "gamma": rec.gamma,
            "r0": rec.r0,
            "estimator_variance": None,
        }
        if isinstance(rec.particles, ChainMatrix):
            entry["estimator_variance"] = _safe(estimator_variance, rec.particles, h)
        out.append(entry)
    return {"levels": out}

