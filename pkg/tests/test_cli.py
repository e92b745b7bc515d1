import json
from pathlib import Path

import numpy as np
import pytest

from gicaps.cli import main
from gicaps.dataset import load_csv

SMALL = {"preset": "imbalanced3", "params": {"n": 300}}


def write_cfg(tmp_path, name="cfg.json", **cfg):
    cfg.setdefault("version", 1)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, cmd, cfg, out="out", *extra):
    code = main([cmd, "--config", cfg, "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def snapshot(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_resample_none_is_byte_identical_copy(tmp_path):
    cfg = write_cfg(tmp_path, seed=1, dataset=SMALL, method="none")
    code, out = run(tmp_path, "resample", cfg)
    assert code == 0
    assert (out / "resampled.csv").read_bytes() == (out / "normalized.csv").read_bytes()


def test_resample_gicaps_pain_like_all_equal(tmp_path):
    cfg = write_cfg(tmp_path, seed=0, dataset={"preset": "pain_like", "params": {"scale": 0.02}},
                    method="gicaps", undersample={"n_target": 150}, oversample={})
    code, out = run(tmp_path, "resample", cfg)
    assert code == 0
    counts = [int(line.split("\t")[1]) for line in (out / "counts.txt").read_text().splitlines()
              if not line.startswith("#")]
    assert len(counts) == 15 and set(counts) == {150}
    ds = load_csv(out / "resampled.csv")
    assert set(ds.class_counts().tolist()) == {150}
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["config"]["seed"] == 0
    # provenance indexes rows of the normalized input, within the same class
    src = load_csv(out / "normalized.csv")
    rejected = set(json.loads((out / "audit.json").read_text())["rejected"])
    for r in prov["records"]:
        assert src.labels[r["m"]] == src.labels[r["v"]] == r["class"]
        assert r["m"] not in rejected and r["v"] not in rejected


@pytest.mark.parametrize("method,missing", [("gicaps", "undersample"), ("gicaps-o", "oversample"),
                                            ("smote", "baseline"), ("gicaps-u", "undersample")])
def test_missing_sub_config_is_usage_error(tmp_path, method, missing, capsys):
    cfg = write_cfg(tmp_path, seed=0, dataset=SMALL, method=method)
    code, _ = run(tmp_path, "resample", cfg)
    assert code == 2
    assert missing in capsys.readouterr().err


@pytest.mark.parametrize("cmd", ["generate", "resample", "benchmark", "margin", "dump-points", "train"])
@pytest.mark.parametrize("bad", [
    "{not json",
    json.dumps({"version": 1, "dataset": SMALL}),                      # no seed
    json.dumps({"version": 2, "seed": 0, "dataset": SMALL}),           # unknown version
    json.dumps({"version": 1, "seed": 0, "dataset": {"preset": "nope"}}),
    json.dumps({"version": 1, "seed": 0, "dataset": SMALL, "gmr": {"K": 0}, "margin": {"n_pca": 2},
                "oversample": {"rho": 3.0}, "baseline": {}, "method": "gicaps-o"}),
])
def test_malformed_config_exit_2(tmp_path, cmd, bad):
    path = tmp_path / "bad.json"
    path.write_text(bad)
    code, _ = run(tmp_path, cmd, str(path))
    assert code == 2


def test_unknown_key_is_usage_error(tmp_path):
    cfg = write_cfg(tmp_path, seed=0, dataset=SMALL, method="smote", baseline={"k": 5})
    assert run(tmp_path, "resample", cfg)[0] == 2


def test_runtime_failure_exit_1(tmp_path):
    cfg = write_cfg(tmp_path, seed=0, dataset={"csv": str(tmp_path / "missing.csv")}, method="none")
    assert run(tmp_path, "resample", cfg)[0] == 1


def test_flags_override_file(tmp_path):
    cfg = write_cfg(tmp_path, seed=0, dataset=SMALL)
    a = run(tmp_path, "generate", cfg, "a", "--seed", "7")[1]
    b = run(tmp_path, "generate", write_cfg(tmp_path, "c7.json", seed=7, dataset=SMALL), "b")[1]
    assert (a / "data.csv").read_bytes() == (b / "data.csv").read_bytes()
    assert '"seed": 7' in (a / "data.csv").read_text().splitlines()[1]


def test_generate_matches_counts(tmp_path):
    cfg = write_cfg(tmp_path, seed=0, dataset={"blobs": [{"mean": [0, 0], "std": 1, "count": 5, "class_id": 0},
                                                         {"mean": [3, 3], "std": 1, "count": 2, "class_id": 1}]})
    code, out = run(tmp_path, "generate", cfg)
    assert code == 0
    ds = load_csv(out / "data.csv")
    assert ds.class_counts().tolist() == [5, 2]


def test_benchmark_two_methods_two_records(tmp_path):
    cfg = write_cfg(tmp_path, seed=0, dataset=SMALL, methods=["none", "smote"], baseline={}, folds=3)
    code, out = run(tmp_path, "benchmark", cfg)
    assert code == 0
    doc = json.loads((out / "report.json").read_text())
    assert [s["method"] for s in doc["summary"]] == ["none", "smote"]
    assert len(doc["records"]) == 2 * 3
    for s in doc["summary"]:
        assert s["g_mean"] == pytest.approx(np.sqrt(s["precision"] * s["recall"]))
    assert main(["report", "--out", str(out)]) == 0


def test_benchmark_records_failures(tmp_path):
    # K larger than a fold's training set cannot be fitted
    cfg = write_cfg(tmp_path, seed=0, dataset=SMALL, methods=["none"], gmr={"K": 500}, folds=3)
    code, out = run(tmp_path, "benchmark", cfg)
    assert code == 1
    assert json.loads((out / "report.json").read_text())["failures"][0]["method"] == "none"


def test_margin_and_dump_points(tmp_path):
    cfg = write_cfg(tmp_path, seed=2, dataset={"preset": "shell"}, oversample={"tau_cross_rel": 0.3},
                    baseline={}, margin={"n_new": 90}, method="gicaps-o")
    code, out = run(tmp_path, "margin", cfg)
    assert code == 0
    doc = json.loads((out / "margin.json").read_text())
    assert set(doc["margins"]) == {"gicaps-o", "smote", "adasyn"}
    code, out = run(tmp_path, "dump-points", cfg, "pts")
    assert code == 0
    rows = [ln.split(",") for ln in (out / "points.csv").read_text().splitlines() if not ln.startswith("#")]
    kinds = [r[-4] for r in rows[1:]]
    assert kinds.count("original") == 430 and kinds.count("synthetic") == 400 - 30


def test_dump_points_none_has_no_synthetic(tmp_path):
    cfg = write_cfg(tmp_path, seed=0, dataset=SMALL, method="none")
    code, out = run(tmp_path, "dump-points", cfg)
    assert code == 0
    assert "synthetic" not in (out / "points.csv").read_text()


ALL_COMMANDS = ["generate", "resample", "train", "benchmark", "margin", "dump-points"]


def determinism_config(tmp_path):
    return write_cfg(tmp_path, seed=11, dataset=SMALL, methods=["gicaps", "smote", "adasyn"], method="gicaps",
                     undersample={"n_target": 0.5}, oversample={}, baseline={}, gmr={"K": 3}, folds=3,
                     margin={"minority": 2, "other": 0, "n_new": 9, "n_pca": 3})


@pytest.mark.parametrize("cmd", ALL_COMMANDS)
def test_every_command_deterministic_and_echoes_config(tmp_path, cmd):
    cfg = determinism_config(tmp_path)
    a = snapshot(run(tmp_path, cmd, cfg, "a")[1])
    b = snapshot(run(tmp_path, cmd, cfg, "b", "--jobs", "2")[1])
    assert a == b and a
    for name, data in a.items():
        text = data.decode()
        assert '"seed": 11' in text, name
        assert '"version": 1' in text, name


GOLDEN = Path(__file__).parent / "golden"


def golden_run(tmp_path):
    code, out = run(tmp_path, "benchmark", str(GOLDEN / "benchmark_two_class.json"))
    assert code == 0
    return out / "report.json"


def test_benchmark_matches_frozen_golden(tmp_path):
    got = json.loads(golden_run(tmp_path).read_text())
    want = json.loads((GOLDEN / "benchmark_two_class.report.json").read_text())
    assert got["summary"] == want["summary"]
    assert got["records"] == want["records"]


@pytest.mark.xfail(strict=True, reason="rejected majority rows in the test set cut full-GICaPS minority precision; "
                                       "see the decisions ledger")
def test_golden_gicaps_not_below_smote():
    doc = json.loads((GOLDEN / "benchmark_two_class.report.json").read_text())
    g = {s["method"]: s["g_mean"] for s in doc["summary"]}
    assert g["gicaps"] >= g["smote"]
