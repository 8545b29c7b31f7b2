"""Command-line experiment runner.

Subcommands
-----------
run          execute the configured algorithm for every repetition
evidence     rejection evidence next to the SubSim estimate at each stored tolerance
plot-data    CSV data behind the level scatter, signal and sensitivity figures
aggregate    averages over completed repetitions

Output layout under ``--out``::

    manifest.json        config hash, seeds, per-file sha256 (written last, atomically)
    config.json          normalized configuration
    data.json            frozen dataset read by every repetition
    rep_000/             one directory per repetition

Repetition k draws from ``RandomStream(seed, k)``.  Exit codes: 0 success,
2 configuration error, 3 runtime or I/O error; errors are reported as one
JSON object on stderr.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import os
import shutil
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    Dataset,
    ExperimentConfig,
    parse_real,
    build_model,
    config_hash,
    generate_dataset,
    load_config,
    load_preset,
    parse_config,
)
from .core import ContractViolation, ParticleSet, RandomStream
from .diagnostics import qoi_squared_norm
from .io import (
    diagnostics_summary,
    read_json,
    read_particles_csv,
    read_particles_x_csv,
    run_summary,
    write_csv_table,
    write_json,
    write_particles_csv,
    write_particles_x_csv,
)
from .samplers import AbcBudgetExceeded, ProposalSpec, abc_mcmc, standard_abc
from .subsim import estimate_evidence_subsim, rejection_evidence_curve, run_abc_subsim, sensitivity_sweep

log = logging.getLogger("abcsubsim")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
DEFAULT_EVIDENCE_DRAWS = 200_000

__all__ = [
    "aggregate",
    "emit_plot_data",
    "main",
    "rep_dirs",
    "run_evidence_comparison",
    "run_experiment",
]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _rep_name(k: int) -> str:
    return f"rep_{k:03d}"


def rep_dirs(out) -> list[Path]:
    return sorted(p for p in Path(out).glob("rep_[0-9][0-9][0-9]") if p.is_dir())


def _hashed_config(cfg: ExperimentConfig) -> dict:
    # the output location does not change results, so it is left out of the hash
    raw = copy.deepcopy(cfg.raw)
    raw.pop("out", None)
    raw["seed"], raw["reps"] = cfg.seed, cfg.reps
    return raw


def _atomic_json(path: Path, obj) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    write_json(tmp, obj)
    os.replace(tmp, path)


def _load_or_generate_data(cfg: ExperimentConfig, out: Path) -> Dataset:
    if cfg.dataset_path is not None:
        data = Dataset.from_dict(read_json(cfg.dataset_path))
        if data.model != cfg.model_name:
            raise ConfigError(f"dataset is for model {data.model!r}, config names {cfg.model_name!r}", "model/dataset")
    else:
        data = generate_dataset(cfg.model_name, cfg.model_params, cfg.theta_true, cfg.data_seed)
    path = out / "data.json"
    _atomic_json(path, data.to_dict())
    # inference always reads the frozen copy
    return Dataset.from_dict(read_json(path))


def _model_for(cfg: ExperimentConfig, data: Dataset):
    return build_model(cfg.model_name, cfg.model_params, data.theta_true, data.force)


def _flat_rows(thetas, rhos):
    for n, (t, r) in enumerate(zip(thetas, rhos)):
        yield (0, 0, n, *t, r)


def _write_rep_subsim(cfg, model, data, stream: RandomStream, tmp: Path) -> None:
    run = run_abc_subsim(model, data.y, cfg.subsim, stream)
    write_json(tmp / "summary.json", {"algorithm": "subsim", **run_summary(run, model.name)})
    write_particles_csv(tmp / "particles.csv", run)
    if cfg.store_x != "none":
        write_particles_x_csv(tmp / "particles_x.csv", run, cfg.store_x)
    write_json(tmp / "diagnostics.json", diagnostics_summary(run, data.theta_true))
    grid = cfg.section("sensitivity").get("sigma_grid")
    if grid:
        rows = sensitivity_sweep(model, data.y, run, grid, stream.derive("sensitivity"))
        write_json(tmp / "sensitivity.json", {"rows": rows})


def _write_rep_standard(cfg, model, data, stream, tmp: Path) -> None:
    sec = cfg.section("standard_abc")
    eps = parse_real(sec["epsilon"], "standard_abc/epsilon")
    particles, draws = standard_abc(
        model, data.y, eps, sec["n_accept"], stream, sec.get("max_draws", 10_000_000)
    )
    ps = ParticleSet.from_particles(particles)
    d = model.dim
    write_csv_table(
        tmp / "particles.csv",
        ["level", "chain", "step", *[f"theta_{i + 1}" for i in range(d)], "rho"],
        ((0, n, 0, *t, r) for n, (t, r) in enumerate(zip(ps.theta, ps.rho))),
    )
    write_json(tmp / "summary.json", {
        "algorithm": "standard-abc", "model": model.name, "epsilon": eps,
        "n_accept": len(particles), "total_draws": draws,
        "acceptance_probability": len(particles) / draws,
        "posterior_mean_theta": ps.theta.mean(axis=0),
    })


def _write_rep_mcmc(cfg, model, data, stream, tmp: Path) -> None:
    sec = cfg.section("abc_mcmc")
    eps = parse_real(sec["epsilon"], "abc_mcmc/epsilon")
    init, init_draws = standard_abc(
        model, data.y, eps, 1, stream.derive("init"), sec.get("init_max_draws", 10_000_000)
    )
    proposal = ProposalSpec.scaled(sec["sigma"], model.proposal_base_scales())
    chain = abc_mcmc(model, data.y, eps, sec["chain_length"], init[0], proposal, stream.derive("chain"))
    ps = ParticleSet.from_particles(chain)
    moves = int(np.count_nonzero(np.any(np.diff(np.vstack([init[0].theta, ps.theta]), axis=0) != 0, axis=1)))
    d = model.dim
    write_csv_table(
        tmp / "particles.csv",
        ["level", "chain", "step", *[f"theta_{i + 1}" for i in range(d)], "rho"],
        _flat_rows(ps.theta, ps.rho),
    )
    write_json(tmp / "summary.json", {
        "algorithm": "abc-mcmc", "model": model.name, "epsilon": eps,
        "chain_length": len(chain), "init_draws": init_draws,
        "acceptance_rate": moves / len(chain), "sigma": proposal.sigma,
        "posterior_mean_theta": ps.theta.mean(axis=0),
    })


def _write_rep_rejection(cfg, model, data, stream, tmp: Path) -> None:
    sec = cfg.section("evidence")
    eps = [parse_real(e, "evidence/epsilons") for e in sec["epsilons"]]
    n = sec.get("n_draws", DEFAULT_EVIDENCE_DRAWS)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results = rejection_evidence_curve(model, data.y, eps, n, stream)
    write_csv_table(
        tmp / "evidence.csv",
        ["epsilon", "subsim_estimate", "rejection_estimate", "rejection_draws"],
        ((e, None, r.estimate, r.draws) for e, r in zip(eps, results)),
    )
    write_json(tmp / "summary.json", {
        "algorithm": "evidence-rejection", "model": model.name,
        "epsilons": eps, "estimates": [r.estimate for r in results],
        "hits": [r.hits for r in results], "low_count": [r.low_count for r in results],
        "draws": n,
    })


_WRITERS = {
    "subsim": _write_rep_subsim,
    "standard-abc": _write_rep_standard,
    "abc-mcmc": _write_rep_mcmc,
    "evidence-rejection": _write_rep_rejection,
}


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run every repetition and write the output tree; returns the output directory.

    Each repetition is written to a temporary sibling directory and renamed
    into place once complete; the manifest is written last.  On failure the
    temporary directory is removed and the exception propagates.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_json(out / "config.json", cfg.raw)
    data = _load_or_generate_data(cfg, out)
    model = _model_for(cfg, data)
    writer = _WRITERS[cfg.algorithm]

    reps = []
    for k in range(cfg.reps):
        stream = RandomStream(cfg.seed, k)
        final = out / _rep_name(k)
        tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.", dir=out))
        try:
            writer(cfg, model, data, stream, tmp)
            if final.exists():
                shutil.rmtree(final)
            os.replace(tmp, final)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        files = {p.name: _sha256(p) for p in sorted(final.iterdir())}
        reps.append({"rep": k, "seed": cfg.seed, "stream_id": k, "dir": final.name, "files": files})
        log.info("repetition %d written to %s", k, final)

    hashed = _hashed_config(cfg)
    _atomic_json(out / "manifest.json", {
        "version": __version__,
        "config_sha256": config_hash(hashed),
        "config": hashed,
        "master_seed": cfg.seed,
        "algorithm": cfg.algorithm,
        "data": {"file": "data.json", "sha256": _sha256(out / "data.json"), "data_seed": data.data_seed},
        "reps": reps,
    })
    return out


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing input file: {path}")
    return path


def _config_from_out(out: Path) -> ExperimentConfig:
    raw = read_json(_require(out / "config.json"))
    raw["out"] = str(out)
    return parse_config(raw)


def run_evidence_comparison(out, n_draws: int | None = None) -> list[Path]:
    """Write ``evidence.csv`` into every repetition of a completed SubSim run.

    Rows hold the level-0 tolerance (infinite, both estimates 1) and each
    conditional tolerance with the SubSim estimate P0^j, next to a rejection
    estimate from fresh prior-predictive draws of that repetition's stream.
    """
    out = Path(out)
    cfg = _config_from_out(out)
    data = Dataset.from_dict(read_json(_require(out / "data.json")))
    model = _model_for(cfg, data)
    n = n_draws or cfg.section("evidence").get("n_draws", DEFAULT_EVIDENCE_DRAWS)
    written = []
    dirs = rep_dirs(out)
    if not dirs:
        raise FileNotFoundError(f"missing input: no repetition directories in {out}")
    for rep in dirs:
        summary = read_json(_require(rep / "summary.json"))
        if summary.get("algorithm") != "subsim":
            raise ConfigError("evidence comparison needs a subsim run", "algorithm")
        k = int(rep.name.split("_")[1])
        # stored null tolerances are infinite
        eps = [math.inf] + [math.inf if e is None else float(e) for e in summary["epsilons"]]
        P0 = summary["config"]["P0"]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            results = rejection_evidence_curve(
                model, data.y, eps, n, RandomStream(cfg.seed, k).derive("evidence-comparison")
            )
        path = rep / "evidence.csv"
        write_csv_table(
            path,
            ["epsilon", "subsim_estimate", "rejection_estimate", "rejection_draws"],
            ((e, estimate_evidence_subsim(j, P0), r.estimate, r.draws)
             for j, (e, r) in enumerate(zip(eps, results))),
        )
        written.append(path)
    return written


def emit_plot_data(out) -> list[Path]:
    """Per-repetition CSVs under ``rep_k/plot``.

    levels.csv
        level, chain, step, normalized theta coordinates, rho; one row per particle.
    signal.csv
        t, y, mean, p05, p95 of the final-level simulated outputs (5th and
        95th percentiles); needs stored x.
    sensitivity.csv
        level, epsilon, sigma, acceptance, gamma from a sensitivity sweep.
    """
    out = Path(out)
    cfg = _config_from_out(out)
    data = Dataset.from_dict(read_json(_require(out / "data.json")))
    model = _model_for(cfg, data)
    dirs = rep_dirs(out)
    if not dirs:
        raise FileNotFoundError(f"missing input: no repetition directories in {out}")
    written = []
    for rep in dirs:
        plot = rep / "plot"
        plot.mkdir(exist_ok=True)
        levels = read_particles_csv(_require(rep / "particles.csv"))
        d = model.dim
        rows = []
        for lvl in sorted(levels):
            e = levels[lvl]
            norm = model.normalized(e["theta"])
            rows.extend((lvl, c, s, *t, r) for c, s, t, r in zip(e["chain"], e["step"], norm, e["rho"]))
        write_csv_table(plot / "levels.csv", ["level", "chain", "step", *[f"theta_{i + 1}" for i in range(d)], "rho"], rows)
        written.append(plot / "levels.csv")

        xfile = rep / "particles_x.csv"
        if xfile.exists() and model.n_obs > 1:
            xs = read_particles_x_csv(xfile)
            x = xs[max(xs)]["x"]
            dt = getattr(model, "dt", 1.0)
            t = dt * np.arange(1, model.n_obs + 1)
            p05, p95 = np.percentile(x, [5, 95], axis=0)
            write_csv_table(plot / "signal.csv", ["t", "y", "mean", "p05", "p95"],
                            zip(t, data.y, x.mean(axis=0), p05, p95))
            written.append(plot / "signal.csv")

        sfile = rep / "sensitivity.json"
        if sfile.exists():
            srows = read_json(sfile)["rows"]
            write_csv_table(plot / "sensitivity.csv", ["level", "epsilon", "sigma", "acceptance", "gamma"],
                            ((r["level"], r["epsilon"], r["sigma"], r["acceptance"], r["gamma"]) for r in srows))
            written.append(plot / "sensitivity.csv")
    return written


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _std(values):
    vals = [v for v in values if v is not None]
    return float(np.std(vals, ddof=1)) if len(vals) > 1 else None


def aggregate(out) -> Path:
    """Average per-level statistics over completed SubSim repetitions.

    Writes aggregate.json, aggregate.csv and, when sensitivity sweeps are
    present, sensitivity_mean.csv (the mean over repetitions per level and sigma).
    """
    out = Path(out)
    dirs = rep_dirs(out)
    if not dirs:
        raise FileNotFoundError(f"missing input: no repetition directories in {out}")
    per_level: dict[int, list[tuple[dict, dict]]] = {}
    evidences = []
    sweeps: dict[tuple[int, float], list[dict]] = {}
    for rep in dirs:
        summary = read_json(_require(rep / "summary.json"))
        if summary.get("algorithm") != "subsim":
            raise ConfigError("aggregate expects subsim repetitions", "algorithm")
        diag = read_json(_require(rep / "diagnostics.json"))
        evidences.append(summary["evidence"])
        for lv, dg in zip(summary["levels"], diag["levels"]):
            per_level.setdefault(lv["level"], []).append((lv, dg))
        sfile = rep / "sensitivity.json"
        if sfile.exists():
            for r in read_json(sfile)["rows"]:
                sweeps.setdefault((r["level"], r["sigma"]), []).append(r)

    fields = ["level", "n_runs", "epsilon_mean", "epsilon_std", "scale_mean", "acceptance_mean",
              "gamma_mean", "posterior_mean_h_mean", "quadratic_error_mean", "entropy_bound_mean"]
    rows = []
    for lvl in sorted(per_level):
        items = per_level[lvl]
        rows.append({
            "level": lvl,
            "n_runs": len(items),
            "epsilon_mean": _mean(lv["epsilon"] for lv, _ in items),
            "epsilon_std": _std(lv["epsilon"] for lv, _ in items),
            "scale_mean": _mean(lv["scale"] for lv, _ in items),
            "acceptance_mean": _mean(lv["acceptance_rate"] for lv, _ in items),
            "gamma_mean": _mean(lv["gamma"] for lv, _ in items),
            "posterior_mean_h_mean": _mean(dg["posterior_mean_h"] for _, dg in items),
            "quadratic_error_mean": _mean(dg["quadratic_error"] for _, dg in items),
            "entropy_bound_mean": _mean(dg["entropy_bound"] for _, dg in items),
        })
    sens = [
        {"level": lvl, "sigma": sigma, "n_runs": len(rs),
         "acceptance_mean": _mean(r["acceptance"] for r in rs), "gamma_mean": _mean(r["gamma"] for r in rs)}
        for (lvl, sigma), rs in sorted(sweeps.items())
    ]
    write_json(out / "aggregate.json", {
        "n_runs": len(dirs), "evidence_mean": _mean(evidences), "levels": rows, "sensitivity": sens,
    })
    write_csv_table(out / "aggregate.csv", fields, ([r[f] for f in fields] for r in rows))
    if sens:
        sf = ["level", "sigma", "n_runs", "acceptance_mean", "gamma_mean"]
        write_csv_table(out / "sensitivity_mean.csv", sf, ([r[f] for f in sf] for r in sens))
    return out / "aggregate.json"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abcsubsim", description="ABC by Subset Simulation experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", metavar="PATH", help="experiment config JSON")
    src.add_argument("--preset", metavar="NAME", help="shipped preset name")
    run.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides config)")
    run.add_argument("--reps", type=int, metavar="INT", help="number of repetitions (overrides config)")
    run.add_argument("--out", metavar="DIR", help="output directory (overrides config)")

    ev = sub.add_parser("evidence", help="rejection vs SubSim evidence at the stored tolerances")
    ev.add_argument("--out", metavar="DIR", required=True, help="directory of a completed subsim run")
    ev.add_argument("--draws", type=int, metavar="INT", help="prior-predictive draws per tolerance")

    pd = sub.add_parser("plot-data", help="write figure data CSVs")
    pd.add_argument("--out", metavar="DIR", required=True)

    ag = sub.add_parser("aggregate", help="average statistics over repetitions")
    ag.add_argument("--out", metavar="DIR", required=True)
    return parser


def _error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        if args.command == "run":
            cfg = load_config(args.config) if args.config else load_preset(args.preset)
            cfg = cfg.with_overrides(args.seed, args.reps, args.out)
            out = run_experiment(cfg)
            print(json.dumps({"out": str(out), "reps": cfg.reps}))
        elif args.command == "evidence":
            for p in run_evidence_comparison(args.out, args.draws):
                print(p)
        elif args.command == "plot-data":
            for p in emit_plot_data(args.out):
                print(p)
        elif args.command == "aggregate":
            print(aggregate(args.out))
    except ConfigError as exc:
        _error("config", str(exc), path=exc.path)
        return EXIT_CONFIG
    except (ContractViolation, AbcBudgetExceeded, RuntimeError) as exc:
        _error("runtime", str(exc))
        return EXIT_RUNTIME
    except OSError as exc:
        _error("io", str(exc), path=getattr(exc, "filename", None) or "")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
