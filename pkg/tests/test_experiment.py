import json

import numpy as np
import pytest

from gdod.errors import ConfigError, InvalidInputError
from gdod.experiment import (
    ExperimentConfig,
    compare,
    compare_csv,
    curves_csv,
    report_json,
    run,
    run_single,
    seed_streams,
)

SMALL = {"dataset": {"synthetic": {"N": 600, "F": 6, "K": 2}}, "epochs": 2, "seeds": [1, 2, 3],
         "optimizer": {"batch_size": 64, "lr": 0.01}}


def small(**kw):
    return ExperimentConfig.from_dict({**SMALL, **kw})


def test_desk_defaults():
    cfg = ExperimentConfig.from_dict({})
    spec = cfg.dataset["synthetic"]
    assert (spec["N"], spec["F"], spec["K"], spec["rho"]) == (10_000, 16, 2, 0.2)
    assert cfg.optimizer == {"kind": "adam", "lr": 1e-3, "batch_size": 256}
    assert cfg.epochs == 10 and cfg.seeds == [1, 2, 3, 4, 5] and cfg.profile == "desk"
    assert cfg.combiners[0].config.groups == 16 and cfg.combiners[0].config.name == "gdod"


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"seeds": []},
    {"seeds": [1, 1]},
    {"seeds": [-1]},
    {"epochs": -1},
    {"profile": "huge"},
    {"combiner": {"name": "adamw"}},
    {"combiner": {"name": "gdod", "basis": "lu"}},
    {"combiner": {"name": "gdod", "colour": "red"}},
    {"combiner": ["sum", "sum"]},
    {"combiner": []},
    {"optimizer": {"kind": "rmsprop"}},
    {"optimizer": {"momentum": 0.9}},
    {"optimizer": {"batch_size": 0}},
    {"dataset": {"synthetic": {"rho": 2.0}}},
    {"dataset": {"parquet": "x"}},
    {"dataset": {"csv": {"path": "x.csv"}}},
    {"loss_weights": {"mode": "magic"}},
    {"test_fraction": 1.0},
])
def test_invalid_configs_raise_config_error(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_load_reports_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)


def test_combiner_list_with_labels_and_overrides():
    cfg = small(combiner=["sum", {"name": "gdod", "label": "gdod_qr", "basis": "qr", "groups": 4}])
    assert [e.label for e in cfg.combiners] == ["sum", "gdod_qr"]
    assert cfg.combiners[1].config.basis.kind == "qr"
    cfg2 = cfg.with_overrides(seeds=[7], epochs=None)
    assert cfg2.seeds == [7] and cfg2.epochs == 2


def test_seed_streams_are_independent_and_reproducible():
    a, b = seed_streams(3), seed_streams(3)
    assert a["batches"].integers(1 << 30) == b["batches"].integers(1 << 30)
    s = seed_streams(3)
    assert s["data"].integers(1 << 30) != s["init"].integers(1 << 30)


def test_zero_epochs_reports_chance_level():
    cfg = ExperimentConfig.from_dict({"combiner": "sum", "epochs": 0, "seeds": [1, 2]})
    report = run(cfg)[0]
    for r in report["runs"]:
        assert len(r["epochs"]) == 1
        assert all(abs(a - 0.5) <= 0.05 for a in r["epochs"][0]["test_auc"])


def test_training_improves_auc_and_records_diagnostics():
    report = run(small(combiner={"name": "gdod", "groups": 4}, epochs=3))[0]
    r = report["runs"][0]
    assert r["status"] == "ok" and len(r["epochs"]) == 4
    assert np.mean(r["epochs"][-1]["test_auc"]) > np.mean(r["epochs"][0]["test_auc"])
    e = r["epochs"][1]
    assert 0 <= e["shared_mass_fraction"] <= 1 and e["mean_rank"] == 8.0
    assert e["steps"] == int(np.ceil(480 / 64))
    assert all(np.isfinite(e["train_loss"]))


def test_same_seed_gives_same_batches_for_every_combiner():
    cfg = small(combiner=["sum", "mgda"], epochs=0)
    a, b = run(cfg)
    assert a["runs"][0]["epochs"][0]["test_auc"] == b["runs"][0]["epochs"][0]["test_auc"]


def test_aggregation_is_the_plain_mean_and_sample_std():
    report = run(small(combiner="sum"))[0]
    per_seed = np.array([r["epochs"][-1]["test_auc"] for r in report["runs"]])
    s = report["summary"]
    assert np.allclose(s["final_test_auc_mean"], per_seed.mean(axis=0), atol=1e-12, rtol=0)
    assert np.allclose(s["final_test_auc_std"], per_seed.std(axis=0, ddof=1), atol=1e-12, rtol=0)
    assert s["seeds_ok"] == 3 and s["seeds_failed"] == 0
    assert len(s["curves"]["test_auc_mean"]) == 3


def test_reports_are_byte_identical_across_runs():
    cfg = small(combiner=["pcgrad", {"name": "gdod", "basis": "randdec", "groups": 4}, "cagrad"], seeds=[4])
    first = [report_json(r) + curves_csv(r) for r in run(cfg)]
    second = [report_json(r) + curves_csv(r) for r in run(cfg)]
    assert first == second


def test_failed_seeds_are_recorded(tmp_path):
    cfg = small(dataset={"csv": {"path": str(tmp_path / "missing.csv"), "F": 6, "K": 2}})
    report = run_single(cfg, cfg.combiners[0])
    assert all(r["status"] == "failed" and "missing.csv" in r["reason"] for r in report["runs"])
    assert report["summary"]["seeds_ok"] == 0
    json.loads(report_json(report))


def test_uncertainty_weighting_runs():
    report = run(small(combiner="sum", loss_weights={"mode": "uncertainty"}, seeds=[1]))[0]
    assert len(report["runs"][0]["final_log_variance"]) == 2


def test_report_json_is_strict():
    text = report_json({"label": "x", "v": float("nan"), "w": [np.float64(1.5)], "summary": {}})
    assert json.loads(text) == {"label": "x", "v": None, "w": [1.5], "summary": {}}


def fake_report(label, aucs):
    return {"label": label, "summary": {"final_test_auc_mean": list(aucs)}}


def test_compare_single_baseline_has_zero_gain():
    rows = compare([fake_report("sum", [0.7, 0.8])])
    assert rows == [{"method": "sum", "task0_auc": 0.7, "task0_gain": 0.0, "task1_auc": 0.8, "task1_gain": 0.0}]


def test_compare_gain_is_elementwise_difference_in_input_order():
    rows = compare([fake_report("gdod", [0.75, 0.70]), fake_report("sum", [0.7, 0.8]), fake_report("mgda", [0.6, 0.9])])
    assert [r["method"] for r in rows] == ["gdod", "sum", "mgda"]
    assert rows[0]["task0_gain"] == pytest.approx(0.05) and rows[0]["task1_gain"] == pytest.approx(-0.1)
    assert rows[2]["task1_gain"] == pytest.approx(0.1)
    text = compare_csv(rows)
    assert text.splitlines()[0] == "method,task0_auc,task0_gain,task1_auc,task1_gain"


def test_compare_requires_the_baseline():
    with pytest.raises(InvalidInputError):
        compare([fake_report("gdod", [0.7])], "sum")
