import json
import math

import pytest

from okra.cli import EXIT_INPUT, EXIT_OK, EXIT_VERIFY_FAIL, main


def run_cli(*argv):
    return main(list(argv))


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit):
        run_cli("--help")
    out = capsys.readouterr().out
    for cmd in ("ratio", "ratio-curve", "run", "offline", "adversary",
                "empirical-cr", "simulate", "verify"):
        assert cmd in out


def test_ratio_canonical_output(capsys):
    assert run_cli("ratio", "--family", "got", "--theta", "36") == EXIT_OK
    first = capsys.readouterr().out
    assert run_cli("ratio", "--family", "got", "--theta", "36") == EXIT_OK
    second = capsys.readouterr().out
    assert first == second
    obj = json.loads(first)
    assert obj["alpha"] == pytest.approx(1 + math.log(36), rel=1e-12)
    # canonical formatting: sorted keys
    keys = list(obj)
    assert keys == sorted(keys)


def test_ratio_curve_shape(capsys):
    assert run_cli("ratio-curve", "--family", "sep", "--theta-min", "1",
                   "--theta-max", "10", "--points", "4") == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "theta,alpha"
    assert len(lines) == 5
    alphas = [float(l.split(",")[1]) for l in lines[1:]]
    assert alphas == sorted(alphas)


def test_run_and_offline_and_empirical(tmp_path, capsys):
    inst_dir = tmp_path / "instances"
    inst_dir.mkdir()
    path = inst_dir / "cnd.json"
    assert run_cli("adversary", "--kind", "cnd", "--theta", "36", "--top", "36",
                   "--epsilon", "1.0", "--out", str(path)) == EXIT_OK
    out_json = tmp_path / "run.json"
    trace = tmp_path / "trace.csv"
    assert run_cli("run", "--policy", "ota", "--family", "got",
                   "--instance", str(path), "--out", str(out_json),
                   "--trace", str(trace)) == EXIT_OK
    report = json.loads(out_json.read_text())
    assert report["final_utilizations"][0] == pytest.approx(1.0)
    assert trace.read_text().startswith("item,assignment,value,utilizations_after")

    off_json = tmp_path / "off.json"
    assert run_cli("offline", "--instance", str(path), "--out", str(off_json)) == EXIT_OK
    off = json.loads(off_json.read_text())
    assert off["value"] == pytest.approx(36.0, rel=1e-9)
    assert off["converged"] is True

    cr_csv = tmp_path / "cr.csv"
    assert run_cli("empirical-cr", "--family", "got", "--policy", "ota",
                   "--instances", str(inst_dir), "--out", str(cr_csv)) == EXIT_OK
    text = cr_csv.read_text()
    assert text.startswith("instance,ratio")
    assert "max," in text


def test_run_rejects_missing_instance(capsys):
    assert run_cli("run", "--policy", "ota", "--family", "got",
                   "--instance", "/nonexistent.json") == EXIT_INPUT


def test_verify_exit_codes(tmp_path):
    out = tmp_path / "verify.json"
    assert run_cli("verify", "--family", "got",
                   "--theta-grid", "2.718281828459045,10,36",
                   "--out", str(out)) == EXIT_OK
    report = json.loads(out.read_text())
    assert report["failures"] == []
    assert run_cli("verify", "--family", "got", "--theta-grid", "10",
                   "--perturb-alpha", "-0.05", "--out", str(out)) == EXIT_VERIFY_FAIL
    report = json.loads(out.read_text())
    assert report["failures"]


def test_verify_all_families(tmp_path):
    for fam in ("got", "v1", "agg", "sep"):
        assert run_cli("verify", "--family", fam, "--theta-grid", "5,36",
                       "--out", str(tmp_path / f"{fam}.json")) == EXIT_OK
    assert run_cli("verify", "--family", "v2", "--c", "2", "--theta-grid", "5,36",
                   "--out", str(tmp_path / "v2.json")) == EXIT_OK


def test_simulate_outputs_are_rerun_identical(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    for out in (out1, out2):
        assert run_cli("simulate", "--synthetic", "80", "--trials", "2",
                       "--congestion", "medium", "--seed", "7",
                       "--out", str(out)) == EXIT_OK
    for name in ("cdf.csv", "summary.json", "trials.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_simulate_needs_input():
    assert run_cli("simulate", "--trials", "1") == EXIT_INPUT
