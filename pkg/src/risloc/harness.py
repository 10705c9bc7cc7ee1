"""Seeded Monte Carlo trials, SNR sweeps, complexity counters and reports.

Every trial owns two RNG streams derived from the master seed:
``SeedSequence([seed, index, 0])`` draws the scene (target, probing,
gains) and ``SeedSequence([seed, index, 1])`` draws the unit noise that is
then scaled to each SNR. All SNR points of one trial therefore share the
scene and the noise shape, and only the noise level changes.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bound import fim_channel, path_fims, position_bound
from .coarse import CoarseEstimate, coarse_estimate
from .config import ExperimentConfig
from .dictionary import AngleGrid, build_direct_dictionary, build_ris_dictionary
from .geometry import Position2D, geometric_params, geometry_jacobian
from .refine import RefinementResult, refine_baseline_cdgd, refine_proposed, stack
from .signal_model import (ChannelParams, ProbingSet, generate_probing, snr_to_sigma,
                           synthesize_measurement)

NOISELESS = math.inf  # snr_db value meaning "no noise"

AGGREGATE_COLUMNS = (
    "snr_db", "rmse_theta_bt_rad", "rmse_theta_rt_rad", "rmse_d_bt_m", "rmse_d_rt_m",
    "rmse_pos_proposed_m", "rmse_pos_cdgd_m", "mean_peb_m", "fail_rate",
    "mean_rebuilds_proposed", "mean_rebuilds_cdgd",
)
TRIAL_COLUMNS = (
    "snr_db", "trial_index", "failed", "error",
    "true_x", "true_y", "true_theta_bt", "true_theta_rt", "true_d_bt", "true_d_rt",
    "est_theta_bt", "est_theta_rt", "est_d_bt", "est_d_rt", "coarse_x", "coarse_y",
    "proposed_x", "proposed_y", "cdgd_x", "cdgd_y",
    "err_pos_coarse_m", "err_pos_proposed_m", "err_pos_cdgd_m",
    "rebuilds_proposed", "rebuilds_cdgd", "peb_m",
)
TRACE_COLUMNS = ("method", "outer", "inner", "cost", "pos_err_m")


@dataclass(frozen=True)
class Scene:
    target: Position2D
    params: ChannelParams
    probing: ProbingSet


@dataclass
class TrialRecord:
    trial_index: int
    snr_db: float
    target: Position2D | None  # None when the scene itself could not be drawn
    truth: ChannelParams | None
    noise_sigma: float = 0.0
    coarse: CoarseEstimate | None = None
    results: dict[str, RefinementResult] = field(default_factory=dict)
    peb: float = float("nan")
    timing_us: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def position_error(self, method: str) -> float:
        if method == "coarse":
            p = self.coarse.initial_position if self.coarse else None
        else:
            p = self.results[method].position if method in self.results else None
        if p is None or self.target is None:
            return float("nan")
        return float(math.hypot(p[0] - self.target[0], p[1] - self.target[1]))


@dataclass
class SweepReport:
    rows: list[dict]
    records: list[TrialRecord]
    traces: list[tuple]
    metadata: dict


# --- scene and trial -------------------------------------------------------

def _streams(seed: int, index: int):
    scene = np.random.default_rng(np.random.SeedSequence([seed, index, 0]))
    noise = np.random.default_rng(np.random.SeedSequence([seed, index, 1]))
    return scene, noise


def draw_scene(config: ExperimentConfig, rng: np.random.Generator) -> Scene:
    sc = config.scenario
    if config.target_mode == "fixed":
        target = config.fixed_target
    else:
        x0, x1, y0, y1 = config.target_rect
        target = Position2D(float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
    probing = generate_probing(sc.arrays, sc.waveform, rng)
    ph = rng.uniform(0.0, 2.0 * np.pi, 2)
    g_d = config.gain_mag_dir * np.exp(1j * ph[0])
    g_r = config.gain_mag_ris * np.exp(1j * ph[1])
    return Scene(target=target, params=ChannelParams.from_position(target, sc, g_d, g_r),
                 probing=probing)


def _wrap(a: float) -> float:
    return float((a + np.pi) % (2.0 * np.pi) - np.pi)


def _run_cell(config, index, snr_db, scene, dicts) -> TrialRecord:
    sc = config.scenario
    rec = TrialRecord(trial_index=index, snr_db=float(snr_db), target=scene.target, truth=scene.params)
    t = time.perf_counter
    try:
        if math.isinf(snr_db) and snr_db > 0:
            sigma = 0.0
        else:
            sigma = snr_to_sigma(snr_db, scene.params, scene.probing, sc.arrays, sc.waveform,
                                 sc.theta_br, sc.theta_rb)
        rec.noise_sigma = sigma
        noise_rng = _streams(config.master_seed, index)[1]
        meas = synthesize_measurement(scene.params, sc.theta_br, sc.theta_rb, scene.probing,
                                      sc.arrays, sc.waveform, sigma, noise_rng)
        grid, d_dict, r_dict = dicts
        t0 = t()
        rec.coarse = coarse_estimate(meas, d_dict, r_dict, grid, sc)
        rec.timing_us["coarse"] = (t() - t0) * 1e6
        y = stack(meas)
        if "proposed" in config.methods:
            t0 = t()
            rec.results["proposed"] = refine_proposed(y, rec.coarse, sc, scene.probing, config.solver)
            rec.timing_us["proposed"] = (t() - t0) * 1e6
        if "cdgd" in config.methods:
            t0 = t()
            rec.results["cdgd"] = refine_baseline_cdgd(y, rec.coarse, sc, scene.probing, config.solver)
            rec.timing_us["cdgd"] = (t() - t0) * 1e6
        if sigma > 0:
            t0 = t()
            fim = fim_channel(scene.params, sc, scene.probing, sigma)
            jac = geometry_jacobian(scene.target, sc.p_b, sc.p_r, sc.waveform.c)
            rec.peb = position_bound(fim, jac).peb
            rec.timing_us["bound"] = (t() - t0) * 1e6
    except Exception as exc:  # a failed cell must never abort the sweep
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def run_trial_snrs(config: ExperimentConfig, trial_index: int, snr_list) -> list[TrialRecord]:
    """All SNR cells of one trial; the scene and dictionaries are shared."""
    sc = config.scenario
    try:
        scene = draw_scene(config, _streams(config.master_seed, trial_index)[0])
        t0 = time.perf_counter()
        grid = AngleGrid(config.grid_size)
        dicts = (grid,
                 build_direct_dictionary(grid, scene.probing, sc.arrays, sc.waveform),
                 build_ris_dictionary(grid, sc.theta_br, sc.theta_rb, scene.probing, sc.arrays, sc.waveform))
        build_us = (time.perf_counter() - t0) * 1e6
    except Exception as exc:
        err = f"{type(exc).__name__}: {exc}"
        return [TrialRecord(trial_index=trial_index, snr_db=float(s), target=None, truth=None, error=err)
                for s in snr_list]
    records = []
    for snr in snr_list:
        rec = _run_cell(config, trial_index, snr, scene, dicts)
        rec.timing_us["dictionary"] = build_us
        records.append(rec)
    return records


def run_trial(config: ExperimentConfig, trial_index: int, snr_db: float) -> TrialRecord:
    """One (trial, SNR) cell. ``snr_db=math.inf`` runs without noise."""
    return run_trial_snrs(config, trial_index, [snr_db])[0]


# --- aggregation -----------------------------------------------------------

def _rmse(values) -> float:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    return float(np.sqrt(np.mean(v ** 2))) if v.size else float("nan")


def _mean(values) -> float:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    return float(np.mean(v)) if v.size else float("nan")


def aggregate(records: list[TrialRecord], config: ExperimentConfig) -> list[dict]:
    """Per-SNR RMSEs over completed cells, in sweep order."""
    sc = config.scenario
    rows = []
    for snr in config.snr_db_list:
        cells = [r for r in records if r.snr_db == snr]
        ok = [r for r in cells if not r.failed]
        truth = [geometric_params(r.target, sc.p_b, sc.p_r, sc.waveform.c) for r in ok]
        row = {
            "snr_db": float(snr),
            "rmse_theta_bt_rad": _rmse([_wrap(r.coarse.direct.angle - g.theta_bt) for r, g in zip(ok, truth)]),
            "rmse_theta_rt_rad": _rmse([_wrap(r.coarse.ris.angle - g.theta_rt) for r, g in zip(ok, truth)]),
            "rmse_d_bt_m": _rmse([r.coarse.d_bt - g.d_bt for r, g in zip(ok, truth)]),
            "rmse_d_rt_m": _rmse([r.coarse.d_rt - g.d_rt for r, g in zip(ok, truth)]),
            "rmse_pos_proposed_m": _rmse([r.position_error("proposed") for r in ok]),
            "rmse_pos_cdgd_m": _rmse([r.position_error("cdgd") for r in ok]),
            "mean_peb_m": _mean([r.peb for r in ok]),
            "fail_rate": (len(cells) - len(ok)) / len(cells) if cells else float("nan"),
            "mean_rebuilds_proposed": _mean([float(r.results["proposed"].rebuild_count)
                                             for r in ok if "proposed" in r.results]),
            "mean_rebuilds_cdgd": _mean([float(r.results["cdgd"].rebuild_count)
                                         for r in ok if "cdgd" in r.results]),
        }
        rows.append(row)
    return rows


def trial_row(rec: TrialRecord, config: ExperimentConfig) -> dict:
    sc = config.scenario
    nan = float("nan")
    if rec.target is not None:
        g = geometric_params(rec.target, sc.p_b, sc.p_r, sc.waveform.c)
        truth = (rec.target[0], rec.target[1], g.theta_bt, g.theta_rt, g.d_bt, g.d_rt)
    else:
        truth = (nan,) * 6
    c = rec.coarse

    def pos(method, k):
        r = rec.results.get(method)
        return r.position[k] if r is not None else nan

    def rebuilds(method):
        r = rec.results.get(method)
        return r.rebuild_count if r is not None else ""

    return {
        "snr_db": rec.snr_db, "trial_index": rec.trial_index, "failed": int(rec.failed),
        "error": rec.error or "",
        **dict(zip(("true_x", "true_y", "true_theta_bt", "true_theta_rt", "true_d_bt", "true_d_rt"), truth)),
        "est_theta_bt": c.direct.angle if c else nan, "est_theta_rt": c.ris.angle if c else nan,
        "est_d_bt": c.d_bt if c else nan, "est_d_rt": c.d_rt if c else nan,
        "coarse_x": c.initial_position[0] if c else nan, "coarse_y": c.initial_position[1] if c else nan,
        "proposed_x": pos("proposed", 0), "proposed_y": pos("proposed", 1),
        "cdgd_x": pos("cdgd", 0), "cdgd_y": pos("cdgd", 1),
        "err_pos_coarse_m": rec.position_error("coarse"),
        "err_pos_proposed_m": rec.position_error("proposed"),
        "err_pos_cdgd_m": rec.position_error("cdgd"),
        "rebuilds_proposed": rebuilds("proposed"), "rebuilds_cdgd": rebuilds("cdgd"),
        "peb_m": rec.peb,
    }


def convergence_traces(config: ExperimentConfig, trial_index: int = 0) -> list[tuple]:
    """Cost and position error per iteration on a noiseless cell."""
    cfg = replace(config, methods=("coarse", "proposed", "cdgd"))
    rec = run_trial(cfg, trial_index, NOISELESS)
    rows = []
    if rec.failed:
        return rows
    tx, ty = rec.target
    for method in ("proposed", "cdgd"):
        res = rec.results[method]
        for (outer, inner), cost, p in zip(res.trace_index, res.cost_trace, res.position_trace):
            rows.append((method, outer, inner, cost, math.hypot(p[0] - tx, p[1] - ty)))
    return rows


# --- sweep -----------------------------------------------------------------

def _sweep_task(args):
    config, index = args
    return run_trial_snrs(config, index, config.snr_db_list)


def run_sweep(config: ExperimentConfig, workers: int = 1, out_dir=None,
              with_traces: bool = True) -> SweepReport:
    """Run trials x SNRs and aggregate.

    Cells are reduced in (trial, snr) order whatever the worker count, so
    every aggregate is independent of scheduling. When ``out_dir`` is
    given the CSV and JSON outputs are written there.
    """
    tasks = [(config, i) for i in range(config.trials)]
    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_sweep_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        chunks = [_sweep_task(t) for t in tasks]
    records = [r for chunk in chunks for r in chunk]
    wall = time.perf_counter() - t0
    report = SweepReport(
        rows=aggregate(records, config),
        records=records,
        traces=convergence_traces(config) if with_traces else [],
        metadata={
            "config_hash": config.digest(),
            "master_seed": config.master_seed,
            "version": __version__,
            "trials": config.trials,
            "snr_db_list": list(config.snr_db_list),
            "methods": list(config.methods),
            "grid_size": config.grid_size,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "wall_seconds": wall,
            "workers": workers,
        },
    )
    if out_dir is not None:
        write_report(report, config, out_dir)
    return report


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns] if isinstance(row, dict) else [_fmt(v) for v in row])


def write_report(report: SweepReport, config: ExperimentConfig, out_dir) -> dict[str, Path]:
    """Write ``aggregate.csv``, ``trials.csv``, ``traces.csv`` and ``report.json``.

    The CSVs carry no timestamps or timings, so they are byte-identical
    for identical config and seed. Timings live in the JSON only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / f"{k}.csv" for k in ("aggregate", "trials", "traces")}
    _write_csv(paths["aggregate"], AGGREGATE_COLUMNS, report.rows)
    _write_csv(paths["trials"], TRIAL_COLUMNS, [trial_row(r, config) for r in report.records])
    _write_csv(paths["traces"], TRACE_COLUMNS, report.traces)
    timings = {}
    for rec in report.records:
        for k, v in rec.timing_us.items():
            timings.setdefault(k, []).append(v)
    doc = {
        "metadata": report.metadata,
        "config": config.to_dict(),
        "aggregate": report.rows,
        "mean_timing_us": {k: float(np.mean(v)) for k, v in timings.items()},
        "failures": [{"trial_index": r.trial_index, "snr_db": r.snr_db, "error": r.error}
                     for r in report.records if r.failed],
    }
    paths["report"] = out / "report.json"
    paths["report"].write_text(json.dumps(doc, indent=2, default=str, allow_nan=True))
    return paths


# --- complexity and bound tables ------------------------------------------

def modeled_costs(config: ExperimentConfig) -> dict:
    """Unit-cost model: one atom rebuild versus one length-L inner product."""
    a, w = config.scenario.arrays, config.scenario.waveform
    s = config.solver
    c_build = w.n_subcarriers * w.n_snapshots * (2 * a.n_tx + a.m_ris + 2 * a.n_rx)
    length = a.n_rx * w.n_snapshots * w.n_subcarriers
    steps = s.total_inner_steps
    k_base = s.baseline_iterations or steps
    proposed = s.k_outer * c_build + steps * length
    baseline = k_base * (c_build + length)
    return {"c_build": c_build, "length": length, "inner_steps": steps,
            "cost_proposed": proposed, "cost_cdgd": baseline,
            "rebuild_ratio": k_base / s.k_outer, "modeled_speedup": baseline / proposed}


def complexity_report(config: ExperimentConfig, repeats: int = 5, snr_db: float = 10.0,
                      trial_index: int = 0) -> dict:
    """Counters, modeled costs and measured wall-time ratio on one scene.

    Early stopping is disabled so both methods spend the same number of
    inner steps. Wall time is the best of ``repeats`` runs.
    """
    solver = replace(config.solver, step_tolerance=0.0, cost_tolerance=0.0)
    cfg = replace(config, solver=solver, methods=("coarse", "proposed", "cdgd"))
    rec = run_trial(cfg, trial_index, snr_db)
    if rec.failed:
        raise RuntimeError(f"complexity scene failed: {rec.error}")
    scene = draw_scene(cfg, _streams(cfg.master_seed, trial_index)[0])
    sc = cfg.scenario
    # rebuild the exact measurement of the cell for timing
    noise_rng = _streams(cfg.master_seed, trial_index)[1]
    meas = synthesize_measurement(scene.params, sc.theta_br, sc.theta_rb, scene.probing,
                                  sc.arrays, sc.waveform, rec.noise_sigma, noise_rng)
    y = stack(meas)

    def best(fn):
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(y, rec.coarse, sc, scene.probing, solver)
            times.append(time.perf_counter() - t0)
        return min(times)

    t_prop = best(refine_proposed)
    t_base = best(refine_baseline_cdgd)
    rp, rb = rec.results["proposed"], rec.results["cdgd"]
    out = modeled_costs(cfg)
    out.update({
        "rebuilds_proposed": rp.rebuild_count, "rebuilds_cdgd": rb.rebuild_count,
        "inner_proposed": rp.inner_count, "inner_cdgd": rb.inner_count,
        "measured_rebuild_ratio": rb.rebuild_count / rp.rebuild_count,
        "wall_proposed_s": t_prop, "wall_cdgd_s": t_base, "wall_speedup": t_base / t_prop,
    })
    return out


def peb_table(config: ExperimentConfig, snr_db: float, trials: int | None = None) -> list[dict]:
    """PEB per trial scene: direct only, RIS only, both paths (both forms)."""
    sc = config.scenario
    rows = []
    for i in range(min(trials or config.trials, config.trials)):
        scene = draw_scene(config, _streams(config.master_seed, i)[0])
        sigma = snr_to_sigma(snr_db, scene.params, scene.probing, sc.arrays, sc.waveform,
                             sc.theta_br, sc.theta_rb)
        jac = geometry_jacobian(scene.target, sc.p_b, sc.p_r, sc.waveform.c)
        per = path_fims(scene.params, sc, scene.probing, sigma)
        joint = fim_channel(scene.params, sc, scene.probing, sigma)
        rows.append({
            "trial_index": i, "x": scene.target[0], "y": scene.target[1],
            "peb_direct_m": position_bound(per[0], jac).peb,
            "peb_ris_m": position_bound(per[1], jac).peb,
            "peb_joint_m": position_bound(joint, jac).peb,
            "peb_joint_direct_form_m": position_bound(joint, jac, form="direct").peb,
        })
    return rows


__all__ = [
    "AGGREGATE_COLUMNS", "TRIAL_COLUMNS", "TRACE_COLUMNS", "NOISELESS", "Scene", "TrialRecord",
    "SweepReport", "draw_scene", "run_trial", "run_trial_snrs", "aggregate",
    "trial_row", "convergence_traces", "run_sweep", "write_report", "modeled_costs",
    "complexity_report", "peb_table",
]
