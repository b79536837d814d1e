"""Tests for the experiment runner, aggregation, seeding, and the CLI."""

import json
import math

import numpy as np
import pytest

from poolscreen.cli import main
from poolscreen.harness import (
    AggregateReport,
    ConfusionCounts,
    ExperimentConfig,
    aggregate,
    derive_trial_seed,
    run_experiment,
    score_trial,
)
from poolscreen.matrices import builtin_matrix, save_matrix
from poolscreen.model import NoiseModel, Signal, UniformLoad
from poolscreen.schemes import SchemeConfig, run_scheme

import dataclasses


def _mini_config(**overrides):
    base = dict(
        n=961,
        q=31,
        s=31,
        k_values=(2,),
        trials=3,
        master_seed=77,
        schemes=("individual", "dorfman", "stap2"),
        alpha_values=(0.9,),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# config


def test_config_validation():
    with pytest.raises(ValueError, match="does not match"):
        _mini_config(n=960)
    with pytest.raises(ValueError, match="trials"):
        _mini_config(trials=0)
    with pytest.raises(ValueError, match="k must lie"):
        _mini_config(k_values=(2000,))
    with pytest.raises(ValueError, match="unknown scheme"):
        _mini_config(schemes=("stapler",))
    with pytest.raises(ValueError, match="duplicate"):
        _mini_config(schemes=("stamp", "stamp"))
    with pytest.raises(ValueError, match="alpha"):
        _mini_config(alpha_values=(1.2,))
    with pytest.raises(ValueError, match="delta_minus"):
        _mini_config(delta_minus=2.0)


def test_config_dict_round_trip():
    cfg = _mini_config()
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg


def test_config_rejects_unknown_and_missing_keys():
    with pytest.raises(ValueError, match="unknown config keys: colour"):
        ExperimentConfig.from_dict({**_mini_config().to_dict(), "colour": 7})
    with pytest.raises(ValueError, match="missing config keys"):
        ExperimentConfig.from_dict({"n": 961})


def test_cells_skip_alpha_for_undecoded_schemes():
    cfg = _mini_config(alpha_values=(0.9, 0.8), k_values=(2, 3))
    cells = cfg.cells()
    assert cells.count(("individual", 2, None)) == 1
    assert ("dorfman", 3, None) in cells
    assert ("stap2", 2, 0.9) in cells and ("stap2", 2, 0.8) in cells
    assert len(cells) == 2 * 2 + 2 * 2 * 2


# ---------------------------------------------------------------------------
# seeding


def test_seed_derivation_is_stable_and_distinct():
    seed = derive_trial_seed(77, "stamp", 10, 0.9, 0)
    assert seed == derive_trial_seed(77, "stamp", 10, 0.9, 0)  # pure function
    others = {
        derive_trial_seed(78, "stamp", 10, 0.9, 0),
        derive_trial_seed(77, "stap2", 10, 0.9, 0),
        derive_trial_seed(77, "stamp", 11, 0.9, 0),
        derive_trial_seed(77, "stamp", 10, 0.8, 0),
        derive_trial_seed(77, "stamp", 10, None, 0),
        derive_trial_seed(77, "stamp", 10, 0.9, 1),
    }
    assert seed not in others
    assert len(others) == 6
    assert all(0 <= s < 2**64 for s in others)


# ---------------------------------------------------------------------------
# scoring and aggregation


def test_score_trial_counts():
    values = np.zeros(4)
    values[0] = 5.0
    values[1] = 7.0
    truth = Signal(values)  # support {0, 1}
    counts = score_trial(truth, (1, 2))
    assert (counts.true_pos, counts.false_pos, counts.true_neg, counts.false_neg) == (
        1,
        1,
        1,
        1,
    )
    assert counts.total == 4
    perfect = score_trial(truth, (0, 1))
    assert perfect.false_neg == perfect.false_pos == 0
    empty = score_trial(truth, ())
    assert empty.false_neg == 2 and empty.true_neg == 2
    with pytest.raises(ValueError, match="out of range"):
        score_trial(truth, (9,))
    with pytest.raises(ValueError):
        ConfusionCounts(1, -1, 1, 1)


def _outcome(m):
    return __import__("poolscreen.schemes", fromlist=["TrialOutcome"]).TrialOutcome(
        estimated_support=(),
        measurements_total=m,
        measurements_stage1=m,
        measurements_stage2=0,
        pipetting_ops=m,
        budget_flag=False,
    )


def test_aggregate_means_and_exclusions():
    pairs = [
        (ConfusionCounts(2, 0, 8, 0), _outcome(10)),   # sens 1.0, ppv 1.0
        (ConfusionCounts(1, 1, 7, 1), _outcome(14)),   # sens 0.5, ppv 0.5
    ]
    rep = aggregate(pairs, scheme="demo", k=2, alpha=0.9)
    assert rep.sensitivity == pytest.approx(0.75)
    assert rep.specificity == pytest.approx((1.0 + 7 / 8) / 2)
    assert rep.ppv == pytest.approx(0.75)
    assert rep.m_min == 10 and rep.m_max == 14
    assert rep.m_ave == pytest.approx(12.0)
    assert rep.m_std == pytest.approx(np.std([10, 14], ddof=1))
    # an all-negative trial contributes no sensitivity or ppv sample
    with_empty = pairs + [(ConfusionCounts(0, 0, 10, 0), _outcome(10))]
    rep2 = aggregate(with_empty)
    assert rep2.sensitivity == pytest.approx(0.75)
    assert rep2.ppv == pytest.approx(0.75)
    assert rep2.npv == pytest.approx((1.0, 7 / 8, 1.0)[0] and (1.0 + 7 / 8 + 1.0) / 3)


def test_aggregate_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        aggregate([])


def test_aggregate_single_trial_has_zero_std():
    rep = aggregate([(ConfusionCounts(1, 0, 9, 0), _outcome(10))])
    assert rep.m_std == 0.0
    assert rep.m_min == rep.m_max == 10
    assert rep.sensitivity == 1.0


# ---------------------------------------------------------------------------
# experiment runner


def test_run_experiment_individual_single_trial(tmp_path):
    cfg = _mini_config(schemes=("individual",), trials=1, k_values=(10,))
    reports, records = run_experiment(cfg, out_dir=tmp_path)
    assert len(reports) == 1 and len(records) == 1
    rep = reports[0]
    assert rep.m_ave == 961.0 and rep.sensitivity == 1.0 and rep.specificity == 1.0
    assert records[0]["estimate"] == records[0]["support"]
    assert (tmp_path / "results.csv").exists()
    assert (tmp_path / "trials.jsonl").exists()
    assert (tmp_path / "meta.json").exists()
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["comp_violations_total"] == 0
    assert meta["config"]["n"] == 961
    header = (tmp_path / "results.csv").read_text().splitlines()[0]
    assert header == "scheme,k,alpha,m_min,m_max,m_std,m_ave,sensitivity,specificity,npv,ppv,budget_flags"


def test_run_experiment_is_deterministic(tmp_path):
    cfg = _mini_config()
    run_experiment(cfg, out_dir=tmp_path / "a")
    run_experiment(cfg, out_dir=tmp_path / "b")
    for name in ("results.csv", "results_table1.csv", "trials.jsonl", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_experiment_thread_count_does_not_change_results(tmp_path):
    cfg = _mini_config(schemes=("individual", "dorfman"), trials=4)
    run_experiment(cfg, out_dir=tmp_path / "serial", threads=1)
    run_experiment(cfg, out_dir=tmp_path / "pooled", threads=2)
    assert (tmp_path / "serial" / "results.csv").read_bytes() == (
        tmp_path / "pooled" / "results.csv"
    ).read_bytes()
    assert (tmp_path / "serial" / "trials.jsonl").read_bytes() == (
        tmp_path / "pooled" / "trials.jsonl"
    ).read_bytes()


def test_trial_records_are_self_consistent():
    cfg = _mini_config(schemes=("stap2",), trials=2, k_values=(3,))
    _, records = run_experiment(cfg)
    for rec in records:
        assert rec["tp"] + rec["fp"] + rec["tn"] + rec["fn"] == 961
        assert rec["m"] == rec["m1"] + rec["m2"]
        assert rec["comp_violations"] == 0
        assert rec["seed"] == derive_trial_seed(77, "stap2", 3, 0.9, rec["trial"])
        assert set(rec["estimate"]) <= set(range(961))


def test_throughput_ordering_smoke():
    # tiny-grid version of the ordering the big tables show
    cfg = _mini_config(
        schemes=("individual", "dorfman", "stap2"), trials=2, k_values=(5,)
    )
    reports, _ = run_experiment(cfg)
    by_scheme = {rep.scheme: rep.m_ave for rep in reports}
    assert by_scheme["individual"] > by_scheme["dorfman"] > by_scheme["stap2"]


# ---------------------------------------------------------------------------
# CLI


def _write_config(tmp_path, **overrides):
    raw = _mini_config(**overrides).to_dict()
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


def test_cli_simulate_round_trip(tmp_path, capsys):
    path = _write_config(tmp_path, schemes=("individual",), trials=2, k_values=(4,))
    code = main(["simulate", "--config", str(path), "--out", str(tmp_path / "run")])
    out = capsys.readouterr().out
    assert code == 0
    assert "individual k=4" in out
    assert (tmp_path / "run" / "results.csv").exists()


def test_cli_simulate_seed_override(tmp_path):
    path = _write_config(tmp_path, schemes=("individual",), trials=2)
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "x")]) == 0
    assert (
        main(
            ["simulate", "--config", str(path), "--out", str(tmp_path / "y"), "--seed", "123"]
        )
        == 0
    )
    first = (tmp_path / "x" / "trials.jsonl").read_text()
    second = (tmp_path / "y" / "trials.jsonl").read_text()
    assert first != second


def test_cli_simulate_bad_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"n": 961, "bogus": 1}))
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "bad config" in capsys.readouterr().err


def test_cli_simulate_missing_file_exits_3(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["simulate", "--config", str(missing), "--out", str(tmp_path / "o")]) == 3
    assert "cannot read" in capsys.readouterr().err


def test_cli_matrix_gen_and_verify(tmp_path, capsys):
    out = tmp_path / "mat.txt"
    assert main(["matrix", "gen", "--profile", "6x31", "--seed", "5", "--out", str(out)]) == 0
    assert main(["matrix", "verify", str(out), "--profile", "6x31"]) == 0
    assert "OK" in capsys.readouterr().out
    # a profile the matrix does not satisfy
    assert main(["matrix", "verify", str(out), "--profile", "5x31"]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_cli_matrix_gen_unknown_profile(tmp_path, capsys):
    out = tmp_path / "mat.txt"
    assert main(["matrix", "gen", "--profile", "99x99", "--seed", "1", "--out", str(out)]) == 2
    assert "no builtin profile" in capsys.readouterr().err


def test_cli_matrix_verify_kirkman(tmp_path):
    from poolscreen.matrices import KirkmanParams, construct_kirkman

    mat = construct_kirkman(KirkmanParams(m=9, c=4), np.random.default_rng(0))
    path = tmp_path / "kirkman.txt"
    save_matrix(mat, path)
    assert main(["matrix", "verify", str(path), "--kirkman", "9,4"]) == 0
    assert main(["matrix", "verify", str(path), "--kirkman", "9,3"]) == 2


def test_cli_decode_round_trip(tmp_path, capsys):
    rng = np.random.default_rng(6)
    mat = builtin_matrix(6, 31)
    matrix_path = tmp_path / "design.txt"
    save_matrix(mat, matrix_path)
    loads = np.zeros(31)
    loads[4] = 620.0
    readings = mat.entries.astype(float) @ loads
    noise = NoiseModel()
    readings = np.where(readings > 0, readings * noise.sample(rng, 6), 0.0)
    meas_path = tmp_path / "readings.txt"
    meas_path.write_text("\n".join(f"{v:.6f}" for v in readings) + "\n")
    code = main(
        ["decode", "--matrix", str(matrix_path), "--measurements", str(meas_path)]
    )
    payload = json.loads(capsys.readouterr().out)
    assert code == 0
    assert payload["estimate"] == [4]
    assert 4 in payload["survivors"]
    assert payload["best_subset"] == [4]
    assert payload["budget_exceeded"] is False


def test_cli_decode_length_mismatch(tmp_path, capsys):
    mat = builtin_matrix(6, 31)
    matrix_path = tmp_path / "design.txt"
    save_matrix(mat, matrix_path)
    meas_path = tmp_path / "short.txt"
    meas_path.write_text("1.0\n2.0\n")
    assert (
        main(["decode", "--matrix", str(matrix_path), "--measurements", str(meas_path)]) == 2
    )
    assert "matrix has 6 rows" in capsys.readouterr().err


def test_cli_decode_all_zero_readings(tmp_path, capsys):
    mat = builtin_matrix(5, 31)
    matrix_path = tmp_path / "design.txt"
    save_matrix(mat, matrix_path)
    meas_path = tmp_path / "zeros.txt"
    meas_path.write_text("0\n" * 5)
    assert (
        main(["decode", "--matrix", str(matrix_path), "--measurements", str(meas_path)]) == 0
    )
    payload = json.loads(capsys.readouterr().out)
    assert payload["estimate"] == []
    assert payload["scored_subsets"] == 0
