"""End-to-end pipelines: simulate a dataset, fit it, and run the
increasing-domain rate study.

Run directory layout::

    <out>/manifest.json          structured run description, seeds, file hashes
    <out>/covariates.cvf         covariate field container (simulate)
    <out>/points.csv             point pattern (simulate)
    <out>/summary.json, trace.csv                      (fit)
    <out>/tasks/n<n>_r<rep>.json, report.csv, rate.svg (rate-study)
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .covariates import build_covariates, load_covariates, save_covariates
from .coxmodel import CoxLikelihood, GroundTruthSpec, PointPattern, intensity_field, load_pattern
from .coxmodel import log_likelihood, sample_points, save_pattern
from .inference import PosteriorSummary, posterior_summary, run_chain, save_trace
from .metrics import RateReport, rate_regression, save_rate_report
from .prior import IntensityFunction, LinkFunction, base_prior, rescale_factor
from .randfield import sample_field, window_from_n
from .seeding import derive_seed

__all__ = ["Dataset", "simulate", "fit", "run_simulate", "run_fit", "run_rate_study", "plot_rate"]

log = logging.getLogger(__name__)

MIN_SUCCESS_FRACTION = 0.8


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


@dataclass
class Dataset:
    covariates: object
    pattern: PointPattern
    truth: GroundTruthSpec | None
    n: float
    replicate: int
    seeds: dict


def simulate(config: ExperimentConfig, n: float, replicate: int = 0) -> Dataset:
    """Covariates and a Cox pattern on ``W_n``; seeds keyed by ``(master_seed, purpose, n, replicate)``."""
    grid = window_from_n(n, config.ambient_dim, config.cells_per_axis(n), config.covariate_lengthscale)
    seeds = {f"covariate_{h}": derive_seed(config.master_seed, "covariate", n, replicate, h) for h in range(config.d)}
    seeds["points"] = derive_seed(config.master_seed, "points", n, replicate)
    latents = [sample_field(config.covariate_model, grid, seeds[f"covariate_{h}"]) for h in range(config.d)]
    Z = build_covariates(latents)
    truth = config.truth
    pattern = sample_points(intensity_field(truth, Z), grid, seeds["points"])
    return Dataset(Z, pattern, truth, float(n), int(replicate), seeds)


def fit(config: ExperimentConfig, data: Dataset, *, spot_check: bool = True):
    """Run the pCN chain on ``data``; returns ``(summary, chain_result, chain_seed)``."""
    spec = config.prior_spec
    n = data.n
    L = CoxLikelihood.for_prior(data.pattern, data.covariates, spec, n)
    check = None
    if spot_check:
        scale = rescale_factor(n, spec.alpha, spec.d)

        def check(w):
            return log_likelihood(IntensityFunction(w, scale, spec.link, spec.d), data.pattern, data.covariates)

    seed = derive_seed(config.master_seed, "chain", n, data.replicate)
    result = run_chain(config.chain, L, base_prior(spec), n, seed, spot_check=check)
    summary = posterior_summary(result.samples, data.truth, quadrature_cells=config.quadrature_cells,
                                min_samples=min(50, config.chain.num_samples))
    summary.extras.update(acceptance_rate=result.acceptance_rate, final_step=result.final_step, chain_seed=seed)
    return summary, result, seed


def run_simulate(config: ExperimentConfig, n: float, out, replicate: int = 0) -> Path:
    """Write one dataset on ``W_n`` to ``out`` and return the manifest path."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data = simulate(config, n, replicate)
    cov_path = save_covariates(data.covariates, out / "covariates.cvf")
    pts_path = save_pattern(data.pattern, out / "points.csv")
    manifest = {
        "kind": "dataset",
        "n": float(n),
        "volume": data.covariates.grid.volume,
        "replicate": int(replicate),
        "grid": data.covariates.grid.to_dict(),
        "point_count": data.pattern.count,
        "seeds": data.seeds,
        "ground_truth": data.truth.to_dict(),
        "config": config.to_dict(),
        "files": {cov_path.name: _sha256(cov_path), pts_path.name: _sha256(pts_path)},
    }
    return _write_json(out / "manifest.json", manifest)


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    Z = load_covariates(path / "covariates.cvf")
    pattern = load_pattern(path / "points.csv")
    truth = None
    if manifest.get("ground_truth"):
        t = manifest["ground_truth"]
        truth = GroundTruthSpec(t["name"], t["beta"], t["d"], LinkFunction(**t["link"]))
    return Dataset(Z, pattern, truth, float(manifest["n"]), int(manifest.get("replicate", 0)),
                   dict(manifest.get("seeds", {})))


def run_fit(config: ExperimentConfig, dataset, out=None) -> PosteriorSummary:
    """Fit a stored dataset; writes ``summary.json``, ``trace.csv`` and ``fit_manifest.json``."""
    dataset = Path(dataset)
    out = Path(out) if out is not None else dataset
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(dataset)
    summary, result, seed = fit(config, data)
    _write_json(out / "summary.json", summary.to_dict())
    trace = save_trace(result, out / "trace.csv")
    _write_json(out / "fit_manifest.json", {
        "kind": "fit",
        "dataset": str(dataset.name),
        "n": data.n,
        "replicate": data.replicate,
        "chain_seed": seed,
        "config": config.to_dict(),
        "acceptance_rate": result.acceptance_rate,
        "files": {"summary.json": _sha256(out / "summary.json"), trace.name: _sha256(trace)},
    })
    return summary


def load_summary(path) -> PosteriorSummary:
    return PosteriorSummary.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# rate study


def _task_name(n: float, replicate: int) -> str:
    return f"n{n:g}_r{replicate}"


def _rate_task(args) -> dict:
    config, n, replicate = args
    try:
        data = simulate(config, n, replicate)
        summary, result, seed = fit(config, data)
        return {
            "n": n,
            "replicate": replicate,
            "ok": True,
            "l1_error": summary.l1_error_of_mean,
            "credible_l1_radius": summary.credible_l1_radius,
            "acceptance_rate": result.acceptance_rate,
            "point_count": data.pattern.count,
            "seeds": dict(data.seeds, chain=seed),
        }
    except Exception as exc:  # noqa: BLE001 - failures are recorded per replicate
        log.exception("task n=%g replicate=%d failed", n, replicate)
        return {"n": n, "replicate": replicate, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def run_rate_study(config: ExperimentConfig, out, *, workers: int = 1, resume: bool = False) -> RateReport:
    """Simulate, fit and score every ``(n, replicate)``; regress median error on n.

    Aborts if fewer than 80% of the replicates at some n succeed.
    """
    if len(config.n_grid) < 3:
        raise ValueError("rate study needs at least 3 n values")
    if config.replicates < 3:
        raise ValueError("rate study needs at least 3 replicates")
    out = Path(out)
    tasks_dir = out / "tasks"
    tasks_dir.mkdir(parents=True, exist_ok=True)

    results: dict[tuple[float, int], dict] = {}
    todo = []
    for n in config.n_grid:
        for r in range(config.replicates):
            path = tasks_dir / f"{_task_name(n, r)}.json"
            if resume and path.exists():
                results[(n, r)] = json.loads(path.read_text())
            else:
                todo.append((config, n, r))

    def _store(res):
        results[(res["n"], res["replicate"])] = res
        _write_json(tasks_dir / f"{_task_name(res['n'], res['replicate'])}.json", res)

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_rate_task, todo):
                _store(res)
    else:
        for t in todo:
            _store(_rate_task(t))

    errors = []
    failures = {}
    for n in config.n_grid:
        ok = [results[(n, r)] for r in range(config.replicates) if results[(n, r)]["ok"]]
        failures[n] = config.replicates - len(ok)
        if len(ok) < MIN_SUCCESS_FRACTION * config.replicates:
            raise RuntimeError(f"only {len(ok)}/{config.replicates} replicates succeeded at n={n:g}")
        errors.append([res["l1_error"] for res in ok])

    seeds = [v for res in results.values() if res["ok"] for v in res["seeds"].values()]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("seed streams collided across tasks")

    report = rate_regression(config.n_grid, errors, config.beta, config.d)
    save_rate_report(report, out / "report.csv")
    plot_rate(report, out / "rate.svg")
    _write_json(out / "manifest.json", {
        "kind": "rate_study",
        "config": config.to_dict(),
        "n_values": report.n_values,
        "median_errors": report.median_errors,
        "fitted_slope": report.fitted_slope,
        "slope_stderr": report.slope_stderr,
        "theoretical_slope": report.theoretical_slope,
        "epsilon_n": report.epsilon_n,
        "medians_strictly_decreasing": report.medians_strictly_decreasing(),
        "failures": {f"{n:g}": k for n, k in failures.items()},
        "distinct_seed_streams": len(seeds),
        "files": {"report.csv": _sha256(out / "report.csv")},
    })
    return report


def plot_rate(report: RateReport, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "coxgp"
    n = np.asarray(report.n_values)
    fig, ax = plt.subplots(figsize=(5, 4))
    for x, errs in zip(n, report.errors):
        ax.scatter(np.full(len(errs), x), errs, s=8, color="0.6", zorder=1)
    ax.plot(n, report.median_errors, "o-", color="C0", label=f"median L1 error (slope {report.fitted_slope:.3f})")
    ref = math.exp(report.intercept) * n[0] ** report.fitted_slope * (n / n[0]) ** report.theoretical_slope
    ax.plot(n, ref, "--", color="C3", label=f"n^({report.theoretical_slope:.3f})")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n (window volume)")
    ax.set_ylabel("posterior-mean L1 error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
