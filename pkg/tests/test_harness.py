import csv
import json
import math

import numpy as np
import pytest

from conftest import on_grid_target
from risloc import harness
from risloc.config import desk_profile, paper_profile
from risloc.dictionary import AngleGrid
from risloc.harness import (AGGREGATE_COLUMNS, NOISELESS, TRACE_COLUMNS, complexity_report, modeled_costs,
                            peb_table, run_sweep, run_trial, trial_row)


def tiny(**kw):
    return desk_profile().with_overrides(**{"trials": 3, "snr_db_list": (0.0, 20.0), **kw})


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_trial_determinism():
    cfg = tiny()
    a, b = run_trial(cfg, 2, 10.0), run_trial(cfg, 2, 10.0)
    assert trial_row(a, cfg) == trial_row(b, cfg)
    assert a.results["proposed"].cost_trace == b.results["proposed"].cost_trace
    assert a.truth == b.truth
    c = run_trial(cfg, 3, 10.0)
    assert c.target != a.target


def test_snr_cells_share_scene():
    cfg = tiny()
    recs = harness.run_trial_snrs(cfg, 1, [0.0, 10.0])
    assert recs[0].target == recs[1].target
    assert recs[1].noise_sigma == pytest.approx(recs[0].noise_sigma / math.sqrt(10))


def test_noiseless_cell_on_grid_target():
    grid = AngleGrid(181)
    cfg = paper_profile()
    target = on_grid_target(cfg.scenario, grid, 100, 40)
    cfg = cfg.with_overrides(target_mode="fixed", target_rect=target)
    rec = run_trial(cfg, 0, NOISELESS)
    assert rec.noise_sigma == 0.0 and math.isnan(rec.peb)
    assert rec.position_error("proposed") < 1e-6


def test_coarse_only_has_no_refinement():
    cfg = tiny(methods=("coarse",))
    rec = run_trial(cfg, 0, 10.0)
    assert rec.results == {} and rec.coarse is not None
    row = trial_row(rec, cfg)
    assert row["rebuilds_proposed"] == "" and math.isnan(row["proposed_x"])


def test_sweep_outputs(tmp_path):
    cfg = tiny()
    rep = run_sweep(cfg, out_dir=tmp_path)
    agg = read_csv(tmp_path / "aggregate.csv")
    trials = read_csv(tmp_path / "trials.csv")
    assert len(agg) == 2 and len(trials) == 6
    assert (tmp_path / "aggregate.csv").read_text().splitlines()[0] == ",".join(AGGREGATE_COLUMNS)
    assert (tmp_path / "traces.csv").read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)
    meta = json.loads((tmp_path / "report.json").read_text())["metadata"]
    assert meta["config_hash"] == cfg.digest() and meta["master_seed"] == cfg.master_seed
    assert "timestamp" in meta and "version" in meta
    # aggregate RMSEs equal recomputation from the trial rows
    for row in agg:
        cells = [t for t in trials if t["snr_db"] == row["snr_db"] and t["failed"] == "0"]
        for col, err in [("rmse_pos_proposed_m", "err_pos_proposed_m"), ("rmse_pos_cdgd_m", "err_pos_cdgd_m")]:
            r = math.sqrt(np.mean([float(t[err]) ** 2 for t in cells]))
            assert float(row[col]) == pytest.approx(r, rel=1e-12)
        r = math.sqrt(np.mean([(float(t["est_d_bt"]) - float(t["true_d_bt"])) ** 2 for t in cells]))
        assert float(row["rmse_d_bt_m"]) == pytest.approx(r, rel=1e-12)
    assert rep.rows[0]["fail_rate"] == 0.0


def test_reproducible_and_worker_independent(tmp_path):
    cfg = tiny(trials=4)
    run_sweep(cfg, out_dir=tmp_path / "a")
    run_sweep(cfg, out_dir=tmp_path / "b")
    run_sweep(cfg, workers=2, out_dir=tmp_path / "c")
    for name in ("aggregate.csv", "trials.csv", "traces.csv"):
        ref = (tmp_path / "a" / name).read_bytes()
        assert (tmp_path / "b" / name).read_bytes() == ref
        assert (tmp_path / "c" / name).read_bytes() == ref


def test_failures_are_captured(monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("synthetic")
    monkeypatch.setattr(harness, "refine_proposed", boom)
    rep = run_sweep(tiny(), with_traces=False)
    assert all(r.failed and "synthetic" in r.error for r in rep.records)
    assert rep.rows[0]["fail_rate"] == 1.0 and math.isnan(rep.rows[0]["rmse_pos_cdgd_m"])


def test_degenerate_scene_captured():
    cfg = tiny(target_mode="fixed", target_rect=(5.0, 5.0))  # target on the RIS
    rec = run_trial(cfg, 0, 10.0)
    assert rec.failed and "DegenerateGeometryError" in rec.error
    assert math.isnan(trial_row(rec, cfg)["true_x"])


def test_convergence_traces_noiseless():
    rows = harness.convergence_traces(tiny())
    methods = {r[0] for r in rows}
    assert methods == {"proposed", "cdgd"}
    prop = [r for r in rows if r[0] == "proposed"]
    assert prop[0][1:3] == (0, 0) and prop[-1][4] < prop[0][4]


def test_modeled_costs_paper_numbers():
    m = modeled_costs(paper_profile())
    assert m["c_build"] == 20 * 32 * (64 + 32 + 64) == 102400
    assert m["length"] == 32 * 32 * 20
    assert m["rebuild_ratio"] == 5
    assert m["cost_proposed"] == 10 * 102400 + 50 * 20480
    assert m["cost_cdgd"] == 50 * (102400 + 20480)


def test_complexity_report_desk():
    r = complexity_report(desk_profile(), repeats=1)
    assert r["rebuilds_proposed"] == 10 and r["rebuilds_cdgd"] == 50
    assert r["inner_proposed"] == r["inner_cdgd"] == 50
    assert r["measured_rebuild_ratio"] == 5
    assert r["wall_proposed_s"] > 0 and r["wall_cdgd_s"] > 0


def test_peb_table():
    rows = peb_table(tiny(), 0.0, 2)
    assert len(rows) == 2
    for r in rows:
        assert r["peb_joint_m"] <= min(r["peb_direct_m"], r["peb_ris_m"]) * (1 + 1e-9)
        assert r["peb_joint_direct_form_m"] <= r["peb_joint_m"]
