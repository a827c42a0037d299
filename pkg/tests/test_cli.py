import json
import shutil
from importlib import resources

import pytest

from dqdcap.cli import parse_range, run

pytestmark = pytest.mark.usefixtures("workdir")


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    for name in ("reference_device.json", "reference_measured.json"):
        src = resources.files("dqdcap.data").joinpath(name)
        shutil.copy(str(src), tmp_path / name)
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_parse_range():
    assert parse_range("-90:90:10") == [float(v) for v in range(-90, 100, 10)]
    assert parse_range("-50:50:10") == [float(v) for v in range(-50, 60, 10)]
    assert parse_range("25") == [25.0]


def test_bad_range_is_usage_failure(workdir):
    code = run(["sweep-dotsize", "--geometry", "reference_device.json",
                "--out", "s.csv", "--r", "10:bad"])
    assert code == 1


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as e:
        run(["frobnicate"])
    assert e.value.code == 2


def test_extract_stability_induced_charge_pipeline(workdir):
    assert run(["extract", "--geometry", "reference_device.json",
                "--out", "caps.json", "--h-max", "16", "--jobs", "2"]) == 0
    caps = json.loads((workdir / "caps.json").read_text())
    assert len(caps["conductor_names"]) == 9
    assert len(caps["entries_aF"]) == 9
    assert caps["roles"]["d1"] == "d1"
    for key in ("mode", "p", "mac_ratio", "tol"):
        assert key in caps["solver"]
    manifest = json.loads((workdir / "caps.json.manifest.json").read_text())
    assert manifest["outputs"] == ["caps.json"]
    assert "reference_device.json" in manifest["inputs"]

    assert run(["stability", "--caps", "caps.json", "--out-prefix", "diag",
                "--n", "101"]) == 0
    grid = (workdir / "diag_grid.csv").read_text().splitlines()
    assert grid[0] == "v_sl_mV,v_sr_mV,x"
    assert len(grid) == 1 + 101 * 101
    bounds = json.loads((workdir / "diag_boundaries.json").read_text())
    assert bounds["metrics"]["theta_deg"] == pytest.approx(45.0, abs=1.0)
    assert bounds["boundaries"]

    assert run(["induced-charge", "--caps", "caps.json", "--out", "dq.json"]) == 0
    dq = json.loads((workdir / "dq.json").read_text())
    assert 0.0 < dq["delta_q_e"] < 0.5
    assert dq["delta_q_e"] == pytest.approx(dq["oracle_delta_q_e"], abs=1e-6)


def test_extract_accelerated_mode(workdir):
    assert run(["extract", "--geometry", "reference_device.json",
                "--out", "acc.json", "--h-max", "16", "--mode", "accelerated"]) == 0
    caps = json.loads((workdir / "acc.json").read_text())
    assert caps["solver"]["mode"] == "accelerated"


def test_stability_accepts_model_caps_json(workdir):
    caps = {
        "Csum_d1": 2.0, "Csum_d2": 2.0, "C_d1d2": 1.0,
        "C_SLd1": 1.0, "C_SRd2": 1.0,
    }
    (workdir / "model.json").write_text(json.dumps(caps))
    assert run(["stability", "--caps", "model.json", "--out-prefix", "toy"]) == 0
    metrics = json.loads((workdir / "toy_boundaries.json").read_text())["metrics"]
    assert metrics["dV_SL_mV"] == pytest.approx(320.435, abs=0.1)


def test_sweep_misalign_row_count_and_negative_ranges(workdir):
    assert run(["sweep-misalign", "--geometry", "reference_device.json",
                "--out", "sweep.csv", "--dx", "-20:20:20", "--dy", "-10:10:10",
                "--h-max", "18", "--n", "51", "--jobs", "2"]) == 0
    lines = (workdir / "sweep.csv").read_text().splitlines()
    assert lines[0] == ("dx_nm,dy_nm,C_SLd1_aF,C_SRd2_aF,dV_SL_mV,dV_SR_mV,"
                        "theta_deg,dV_SL_dB,delta_q_e,status")
    assert len(lines) == 1 + 3 * 3
    assert all(ln.endswith(",ok") for ln in lines[1:])


def test_sweep_dotsize_csv(workdir):
    assert run(["sweep-dotsize", "--geometry", "reference_device.json",
                "--out", "sizes.csv", "--r", "20:40:20", "--h-max", "18",
                "--n", "51"]) == 0
    lines = (workdir / "sizes.csv").read_text().splitlines()
    assert lines[0].startswith("R_nm,C_SLd1_aF")
    assert len(lines) == 3


def test_reproducible_outputs(workdir):
    for out in ("a.csv", "b.csv"):
        assert run(["sweep-dotsize", "--geometry", "reference_device.json",
                    "--out", out, "--r", "30:40:10", "--h-max", "18",
                    "--n", "51"]) == 0
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()


def test_compare_report(workdir):
    assert run(["extract", "--geometry", "reference_device.json",
                "--out", "caps.json", "--h-max", "16"]) == 0
    assert run(["compare", "--caps", "caps.json",
                "--measured", "reference_measured.json",
                "--out", "report.json"]) == 0
    report = json.loads((workdir / "report.json").read_text())
    assert len(report["pairs"]) == 4
    for row in report["pairs"]:
        assert row["calculated_aF"] > 0
        assert row["period_mV"] > 0


def test_missing_file_is_runtime_failure(workdir):
    assert run(["extract", "--geometry", "nope.json", "--out", "x.json"]) == 1


def test_validate_passes(workdir, capsys):
    assert run(["validate"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_jobs_env_default(workdir, monkeypatch):
    monkeypatch.setenv("DQDCAP_JOBS", "3")
    assert run(["extract", "--geometry", "reference_device.json",
                "--out", "caps.json", "--h-max", "18"]) == 0
