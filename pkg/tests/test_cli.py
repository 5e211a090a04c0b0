import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from nfisac.channels import RisState, build_channel_set
from nfisac.cli import main, read_complex_matrix, read_phases, write_complex_matrix
from nfisac.config import load_preset, preset_config
from nfisac.metrics import TransmitDesign, feasibility_report

DETERMINISTIC = ["beamformers.txt", "sensing_cov.txt", "total_cov.txt", "ris_phases.csv", "feasibility.json",
                 "convergence.jsonl", "capon_raw.csv", "capon_compensated.csv", "sinr_user1.csv"]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["run", "--preset", "tiny_oracle", "--out", str(out)]) == 0
    return out


def test_run_outputs(tiny_run):
    for name in DETERMINISTIC + ["summary.json"]:
        assert (tiny_run / name).exists(), name
    summary = json.loads((tiny_run / "summary.json").read_text())
    assert summary["feasible"] and summary["monotone"]
    assert summary["pair_constraint_count"] == 0
    assert set(summary["runtime_s"]) >= {"optimize_s", "sinr_map_s", "capon_s"}
    recs = [json.loads(line) for line in (tiny_run / "convergence.jsonl").read_text().splitlines()]
    assert recs[0]["stage"] == "bs" and all("max_residual" in r for r in recs)
    header = (tiny_run / "sinr_user1.csv").read_text().splitlines()[0]
    assert header == "y,z,value"


def test_summary_recomputable_from_exports(tiny_run):
    sc = load_preset("tiny_oracle")
    ch = build_channel_set(sc, warn_far_field=False)
    f = read_complex_matrix(tiny_run / "beamformers.txt")
    rs = read_complex_matrix(tiny_run / "sensing_cov.txt")
    design = TransmitDesign(list(f.T), rs)
    np.testing.assert_allclose(design.total_cov, read_complex_matrix(tiny_run / "total_cov.txt"), rtol=1e-14)
    rep = feasibility_report(sc, design, RisState(read_phases(tiny_run / "ris_phases.csv")), ch)
    summary = json.loads((tiny_run / "summary.json").read_text())
    assert rep.mu == pytest.approx(summary["mu"], rel=1e-12)
    assert rep.power == pytest.approx(summary["power_w"], rel=1e-12)
    for k, v in summary["rates"].items():
        assert rep.rates[k] == pytest.approx(v, rel=1e-12)
    for k, v in summary["gains"].items():
        assert rep.gains[k] == pytest.approx(v, rel=1e-12)


def test_rerun_is_byte_identical(tiny_run, tmp_path):
    assert main(["run", "--preset", "tiny_oracle", "--out", str(tmp_path)]) == 0
    for name in DETERMINISTIC:
        assert (tmp_path / name).read_bytes() == (tiny_run / name).read_bytes(), name
    a = json.loads((tiny_run / "summary.json").read_text())
    b = json.loads((tmp_path / "summary.json").read_text())
    a.pop("runtime_s"), b.pop("runtime_s")
    assert a == b


def test_matrix_format_round_trip(tmp_path, rng):
    m = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    write_complex_matrix(tmp_path / "m.txt", m)
    text = (tmp_path / "m.txt").read_text().splitlines()
    assert text[0] == "# 3 2" and len(text[1].split()) == 2 and text[1].count(",") == 2
    np.testing.assert_array_equal(read_complex_matrix(tmp_path / "m.txt"), m)


def test_validate(tmp_path, capsys):
    assert main(["validate", "--preset", "paper_sec4"]) == 0
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 1\nextra: 2\n")
    assert main(["validate", str(bad)]) == 4
    assert "extra" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 4


def test_infeasible_exit_code_keeps_partial_outputs(tmp_path):
    data = preset_config("tiny_oracle").data
    data["entities"][0]["min_rate"] = 60.0
    data["ao"]["feasibility_search"] = False
    cfg = tmp_path / "hard.yaml"
    cfg.write_text(yaml.safe_dump(data))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    err = json.loads((out / "error.json").read_text())
    assert err["kind"] == "infeasible"
    assert (out / "convergence.jsonl").exists()


def test_export_channels(tmp_path):
    assert main(["export-channels", "--preset", "tiny_oracle", "--out", str(tmp_path / "nf")]) == 0
    idx = json.loads((tmp_path / "nf" / "channels.json").read_text())
    ch = build_channel_set(load_preset("tiny_oracle"), warn_far_field=False)
    np.testing.assert_array_equal(read_complex_matrix(tmp_path / "nf" / idx["files"]["bs_ris"]), ch.bs_ris)
    np.testing.assert_array_equal(read_complex_matrix(tmp_path / "nf" / "los_tx_user1.txt")[:, 0], ch.los_tx["user1"])
    assert main(["export-channels", "--preset", "tiny_oracle", "--far-field", "--out", str(tmp_path / "ff")]) == 0
    assert json.loads((tmp_path / "ff" / "channels.json").read_text())["model"] == "far_field"


def test_sweep(tmp_path):
    code = main(["sweep", "--preset", "tiny_oracle", "--methods", "proposed", "nccs", "--seeds", "0", "1",
                 "--out", str(tmp_path), "--no-capon"])
    assert code == 0
    status = json.loads((tmp_path / "sweep.json").read_text())
    assert status == {"proposed_seed0": 0, "proposed_seed1": 0, "nccs_seed0": 0, "nccs_seed1": 0}
    s = json.loads((tmp_path / "nccs_seed1" / "summary.json").read_text())
    assert s["method"] == "nccs" and s["pair_constraint_count"] == 0 and s["seed"] == 1


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "nfisac.cli", "validate", "--preset", "tiny_oracle"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "ok" in r.stdout
