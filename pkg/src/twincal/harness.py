"""Seeded replication sweeps: simulate, estimate, aggregate, persist.

Every (sweep point, replication) pair is an independent job whose random
streams derive from ``SeedSequence(master_seed, spawn_key=(point, rep))``,
so results do not depend on how jobs are scheduled across workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .analytic import (Prediction, auto_point_process, counting_coincidence_expected,
                       counting_difference_ratio, diff_integral, feedforward_ratio_expected, predict,
                       regime_classify)
from .calib import (TARGETS, VALID_REGIMES, CalibrationReport, estimate_counting, estimate_feedforward,
                    estimate_integrated_I, estimate_integrated_II, estimate_klyshko_I, estimate_klyshko_II,
                    estimate_twomode_analog, estimate_twomode_counting)
from .config import ExperimentSpec, spec_to_dict
from .corr import (CorrelationFunction, autocorrelation, blocked_mean, choose_blocks, counting_stats,
                   cross_correlation, difference_variance_fn, feedforward_residual, integrate_correlation)
from .detector import (CurrentTrace, integration_window, timescale_problem, sample_event_times,
                       synthesize_current, thin_counts)
from .errors import EstimatorError
from .source import CountFrame, sample_pair_counts

SUMMARY_COLUMNS = [
    "point", "param", "sweep_value", "estimator", "target", "eta_true", "eta_hat_mean", "eta_hat_spread",
    "stderr_block_mean", "stderr_of_mean", "bias", "rel_bias", "predicted", "n_reps", "n_valid",
    "n_within_3sigma", "pass",
]


def spec_digest(spec: ExperimentSpec) -> str:
    blob = json.dumps(spec_to_dict(spec), sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def replication_rngs(master_seed: int, point: int, rep: int, n: int = 4) -> list[np.random.Generator]:
    """Independent generators for (source, thinning, charges 1, charges 2)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(point, rep))
    return [np.random.default_rng(s) for s in ss.spawn(n)]


def true_eta(spec: ExperimentSpec, target: str) -> float:
    e1, e2 = spec.detector1.eta, spec.detector2.eta
    return {"eta1": e1, "eta2": e2, "eta_balanced": e1,
            "eta_geometric": math.sqrt(e1 * e2)}[target]


def classify(spec: ExperimentSpec):
    a = spec.analysis
    return regime_classify(spec.source, spec.detector1, a.overlap_threshold, a.gain_threshold)


def regime_warnings(spec: ExperimentSpec) -> list[str]:
    """Mismatches between requested estimators and the configuration's regime."""
    out = []
    info = classify(spec)
    pred = predict(spec.source, spec.detector1, spec.detector2)
    for name in spec.estimators:
        if info.regime not in VALID_REGIMES[name]:
            out.append(f"{name} assumes regime {'/'.join(VALID_REGIMES[name])} but the configuration "
                       f"is regime {info.regime} (<I>tau_p={info.I_tau_p:.3g}, nbar={info.nbar:.3g})")
        if name.startswith("twomode") and not pred.balanced:
            out.append(f"{name}: balanced assumption violated (eta1<q1> != eta2<q2>)")
    for det in (spec.detector1, spec.detector2):
        msg = timescale_problem(det.pulse.tau_p, spec.source.tau_coh)
        if msg:
            out.append(msg)
    return sorted(set(out), key=out.index)


@dataclass
class Simulation:
    """Everything one replication produces before estimation."""

    frames: CountFrame
    trace1: CurrentTrace
    trace2: CurrentTrace
    n_blocks: int
    window: float
    max_lag: float


def simulate(spec: ExperimentSpec, rngs: list[np.random.Generator], need_traces: bool = True) -> Simulation:
    src, d1, d2 = spec.source, spec.detector1, spec.detector2
    r_src, r_thin, r_q1, r_q2 = rngs
    frames = thin_counts(sample_pair_counts(src, None, r_src), d1.eta, d2.eta, r_thin)
    a = spec.analysis
    tau_p = max(d1.pulse.tau_p, d2.pulse.tau_p)
    window = a.window if a.window is not None else max(integration_window(d1.pulse), integration_window(d2.pulse))
    max_lag = max(window, a.max_lag or 0.0, a.klyshko_peak_window or 0.0)
    if not need_traces:
        return Simulation(frames, None, None, 0, window, max_lag)
    dt = min(d1.dt, d2.dt)  # both arms share one sampling grid
    tr1 = synthesize_current(sample_event_times(frames, 1), replace(d1, dt=dt), src.duration, r_q1)
    tr2 = synthesize_current(sample_event_times(frames, 2), replace(d2, dt=dt), src.duration, r_q2)
    guard = a.guard * tau_p
    tr1, tr2 = tr1.trim(guard), tr2.trim(guard)
    nb = choose_blocks(len(tr1), int(math.ceil(a.min_block * tau_p / dt)), a.min_blocks, a.max_blocks)
    return Simulation(frames, tr1, tr2, nb, window, max_lag)


ANALOG = {"klyshko_I", "integrated_I", "klyshko_II", "integrated_II", "twomode_analog", "feedforward"}


def estimate_all(spec: ExperimentSpec, sim: Simulation, regime: str
                 ) -> tuple[list[CalibrationReport | None], dict[str, CorrelationFunction], list[str]]:
    """Run the requested estimators on one simulated record."""
    a = spec.analysis
    d1, d2 = spec.detector1, spec.detector2
    names = spec.estimators
    corr: dict[str, CorrelationFunction] = {}
    cache: dict = {}
    errors: list[str] = []
    nb = sim.n_blocks
    balanced = math.isclose(d1.gamma, d2.gamma, rel_tol=1e-9)

    def cross(center):
        key = ("cross12", center)
        if key not in cache:
            cache[key] = cross_correlation(sim.trace1, sim.trace2, sim.max_lag, nb, "cross12", center)
            corr["cross12" if center else "cross12_raw"] = cache[key]
        return cache[key]

    def auto(center):
        key = ("auto11", center)
        if key not in cache:
            cache[key] = autocorrelation(sim.trace1, sim.max_lag, nb, "auto11", center)
            corr["auto11" if center else "auto11_raw"] = cache[key]
        return cache[key]

    def mean1():
        if "mean1" not in cache:
            cache["mean1"] = blocked_mean(sim.trace1, nb)
        return cache["mean1"]

    def stats():
        if "stats" not in cache:
            cache["stats"] = counting_stats(sim.frames, a.window_cells, a.counting_blocks)
        return cache["stats"]

    q1x = a.declared_q1_excess if a.declared_q1_excess is not None else d1.charge.excess_ratio
    reports: list[CalibrationReport | None] = []
    for name in names:
        try:
            if name == "counting_coincidence":
                rep = estimate_counting(stats(), regime)
            elif name == "twomode_counting":
                rep = estimate_twomode_counting(stats(), regime, math.isclose(d1.eta, d2.eta, rel_tol=1e-9))
            elif name == "klyshko_I":
                center = a.background_subtraction
                rep = estimate_klyshko_I(cross(center), auto(center), d1.charge.mean, q1x, d2.charge.mean,
                                         a.klyshko_peak_window, regime)
            elif name == "klyshko_II":
                rep = estimate_klyshko_II(cross(True), auto(True), d1.charge.mean, q1x, d2.charge.mean,
                                          a.klyshko_peak_window, regime)
            elif name == "integrated_I":
                integral = integrate_correlation(cross(a.background_subtraction), sim.window)
                rep = estimate_integrated_I(integral, mean1(), d2.charge.mean, regime)
            elif name == "integrated_II":
                c = cross(True)
                integral = integrate_correlation(c, sim.window)
                m2 = float(np.mean(sim.trace2.samples))
                background = 2.0 * sim.window * mean1().value * m2
                rep = estimate_integrated_II(integral, mean1(), d2.charge.mean, regime, background)
            elif name == "twomode_analog":
                dv = difference_variance_fn(sim.trace1, sim.trace2, sim.max_lag, nb)
                corr["diff"] = dv
                rep = estimate_twomode_analog(integrate_correlation(dv, sim.window), mean1(),
                                              d1.charge.mean, regime, balanced)
            elif name == "feedforward":
                ff = feedforward_residual(sim.trace1, sim.trace2, nb)
                rep = estimate_feedforward(ff.ratio, d1.charge.mean, d1.charge.excess_ratio,
                                           d2.charge.mean, d2.charge.excess_ratio, balanced, regime)
            else:  # pragma: no cover - validated by ExperimentSpec
                raise ValueError(name)
        except EstimatorError as exc:
            errors.append(f"{name}: {exc}")
            rep = None
        reports.append(rep)
    return reports, corr, errors


def predicted_eta(spec: ExperimentSpec, name: str, pred: Prediction) -> float | None:
    """What each estimator should return on infinite data, model assumptions included."""
    src, d1, d2 = spec.source, spec.detector1, spec.detector2
    q1x = spec.analysis.declared_q1_excess
    q1x = d1.charge.excess_ratio if q1x is None else q1x
    try:
        if name == "counting_coincidence":
            return counting_coincidence_expected(src, d1.eta, d2.eta)
        if name in ("integrated_I", "integrated_II"):
            return pred.integral_cross / pred.mean_i1 / d2.charge.mean
        if name in ("klyshko_I", "klyshko_II"):
            return q1x * d1.charge.mean * pred.cross12(0.0) / auto_point_process(src, d1, 0.0) / d2.charge.mean
        if name == "twomode_analog":
            return 1.0 - diff_integral(src, d1, d2) / (2.0 * d1.charge.mean * pred.mean_i1)
        if name == "twomode_counting":
            return 1.0 - 0.5 * counting_difference_ratio(src, d1.eta, d2.eta, spec.analysis.window_cells)
        if name == "feedforward":
            r = feedforward_ratio_expected(src, d1, d2)
            return math.sqrt(max(1.0 - r, 0.0) * d1.charge.excess_ratio * d2.charge.excess_ratio)
    except (ZeroDivisionError, ValueError):
        return None
    return None


def _job(args):
    spec, point, rep = args
    t0 = time.perf_counter()
    rngs = replication_rngs(spec.master_seed, point, rep)
    regime = classify(spec).regime
    need_traces = any(n in ANALOG for n in spec.estimators) or spec.analysis.save_correlations
    sim = simulate(spec, rngs, need_traces)
    reports, corr, errors = estimate_all(spec, sim, regime)
    saved = {}
    if spec.analysis.save_correlations:
        saved = {k: np.column_stack([c.lags, c.values, c.stderr]) for k, c in corr.items()}
    return point, rep, [r.to_dict() if r else None for r in reports], errors, saved, time.perf_counter() - t0


@dataclass
class RunResult:
    spec: ExperimentSpec
    spec_digest: str
    points: list                 # [(sweep value, ExperimentSpec)]
    reports: list                # reports[point][rep][estimator] -> dict | None
    errors: list                 # errors[point][rep] -> list[str]
    predictions: list            # Prediction per point
    warnings: list               # per point
    aggregates: list = field(default_factory=list)
    correlations: dict = field(default_factory=dict, repr=False)
    wall_clock: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(row["pass"] in (True, None) for row in self.aggregates)


def aggregate(spec: ExperimentSpec, value, point: int, reports: list, pred: Prediction,
              point_spec: ExperimentSpec) -> list[dict]:
    """Per-estimator statistics over replications (recomputable from ``reports``)."""
    rows = []
    tol = spec.analysis.rel_tolerance
    for k, name in enumerate(spec.estimators):
        target = TARGETS[name]
        truth = true_eta(point_spec, target)
        eta = np.array([r[k]["eta_hat"] for r in reports if r[k] is not None and r[k]["eta_hat"] is not None],
                       dtype=float)
        se = np.array([r[k]["eta_stderr"] for r in reports if r[k] is not None and r[k]["eta_hat"] is not None],
                      dtype=float)
        n = eta.size
        row = {"point": point, "param": spec.sweep.param if spec.sweep else "", "sweep_value": value,
               "estimator": name, "target": target, "eta_true": truth,
               "predicted": predicted_eta(point_spec, name, pred), "n_reps": len(reports), "n_valid": n}
        if n == 0:
            row.update(eta_hat_mean=None, eta_hat_spread=None, stderr_block_mean=None, stderr_of_mean=None,
                       bias=None, rel_bias=None, n_within_3sigma=0, **{"pass": False})
            rows.append(row)
            continue
        mean = float(eta.mean())
        spread = float(eta.std(ddof=1)) if n > 1 else 0.0
        sem = spread / math.sqrt(n) if n > 1 else float(se[0])
        bias = mean - truth
        within = int(np.sum(np.abs(eta - truth) <= 3.0 * se + 1e-12))
        # with few replications the sample spread is itself noisy; never gate tighter than the block errors allow
        gate = max(sem, float(np.nanmean(se)) / math.sqrt(n)) if np.any(np.isfinite(se)) else sem
        ok = abs(bias) <= 3.0 * gate + 1e-12 and n == len(reports)
        if tol is not None:
            ok = ok and abs(bias) <= tol * abs(truth) + 1e-12
        row.update(eta_hat_mean=mean, eta_hat_spread=spread, stderr_block_mean=float(se.mean()),
                   stderr_of_mean=sem, bias=bias, rel_bias=bias / truth if truth else None,
                   n_within_3sigma=within, **{"pass": bool(ok)})
        rows.append(row)
    return rows


def run(spec: ExperimentSpec, jobs: int = 1) -> RunResult:
    """Execute every sweep point and replication; order-independent."""
    t_start = time.time()
    points = spec.points()
    tasks = [(ps, p, r) for p, (_, ps) in enumerate(points) for r in range(spec.replications)]
    results = {}
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for out in pool.map(_job, tasks, chunksize=1):
                results[(out[0], out[1])] = out
    else:
        for t in tasks:
            out = _job(t)
            results[(out[0], out[1])] = out
    reports, errors, corr, job_time = [], [], {}, 0.0
    for p in range(len(points)):
        reports.append([results[(p, r)][2] for r in range(spec.replications)])
        errors.append([results[(p, r)][3] for r in range(spec.replications)])
        for r in range(spec.replications):
            for kind, arr in results[(p, r)][4].items():
                corr[(p, r, kind)] = arr
            job_time += results[(p, r)][5]
    preds = [predict(ps.source, ps.detector1, ps.detector2) for _, ps in points]
    warns = [regime_warnings(ps) for _, ps in points]
    result = RunResult(spec, spec_digest(spec), points, reports, errors, preds, warns, correlations=corr)
    for p, (value, ps) in enumerate(points):
        result.aggregates.extend(aggregate(spec, value, p, reports[p], preds[p], ps))
    result.wall_clock = {"started": t_start, "elapsed_s": time.time() - t_start, "job_cpu_s": job_time,
                         "jobs": jobs, "backend": _kernels.BACKEND, "python": platform.python_version()}
    return result


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def summary_csv(result: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in result.aggregates:
        w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def result_dict(result: RunResult) -> dict:
    points = []
    for p, (value, _) in enumerate(result.points):
        points.append({
            "sweep_value": value,
            "prediction": result.predictions[p].to_dict(),
            "replications": result.reports[p],
            "aggregate": [row for row in result.aggregates if row["point"] == p],
        })
    return _jsonable({
        "schema_version": result.spec.schema_version,
        "spec_digest": result.spec_digest,
        "spec": spec_to_dict(result.spec),
        "points": points,
        "diagnostics": {
            "warnings": [{"point": p, "message": m} for p, ws in enumerate(result.warnings) for m in ws],
            "errors": [{"point": p, "replication": r, "message": m}
                       for p, per in enumerate(result.errors) for r, ms in enumerate(per) for m in ms],
        },
        "passed": result.passed,
        "wall_clock": result.wall_clock,
    })


def report(result: RunResult, out_dir=None) -> dict[str, Path]:
    """Write ``summary.csv``, ``reports.json`` and any saved correlation functions."""
    out = Path(out_dir if out_dir is not None else result.spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"summary": out / "summary.csv", "reports": out / "reports.json"}
    paths["summary"].write_text(summary_csv(result))
    paths["reports"].write_text(json.dumps(result_dict(result), indent=2, sort_keys=False) + "\n")
    if result.correlations:
        cdir = out / "correlations"
        cdir.mkdir(exist_ok=True)
        for (p, r, kind), arr in sorted(result.correlations.items()):
            path = cdir / f"corr_{kind}_p{p}_r{r}.csv"
            np.savetxt(path, arr, delimiter=",", header="lag,value,stderr", comments="", fmt="%.17g")
    return paths


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
