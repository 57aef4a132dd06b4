"""CLI: config parsing, trace emission, selftest, exit codes."""

import csv
import json

import pytest

from pushopt import cli
from pushopt.algo import AlgoConfig, run
from pushopt.cli import (
    ConfigError,
    check_mixing_matrix,
    config_from_dict,
    emit_trace,
    emit_summary,
    main,
    parse_config,
    phi_check,
    selftest,
)
from pushopt.graph import cyclic_er_rings, directed_ring, mixing_matrix
from pushopt.oracle import make_pl_sine
from pushopt.runner import fingerprint


MINIMAL = {
    "objective": {"kind": "pl-sine", "n": 6, "sigma": 0.5},
    "topology": {"mode": "cyclic-er-rings", "n": 6, "p": 0.3, "seed": 1},
    "algorithms": [{"variant": "push-asgd", "alpha": 0.01, "T": 20}],
    "seeds": [0],
}


def test_parse_preset_fills_defaults():
    cfg = config_from_dict({"preset": "pl-sine"})
    assert cfg.objective["n"] == 100
    assert cfg.algorithms[0]["variant"] == "push-asgd"
    assert cfg.shared_noise is True


def test_parse_missing_alpha_gets_default():
    doc = json.loads(json.dumps(MINIMAL))
    del doc["algorithms"][0]["alpha"]
    cfg = config_from_dict(doc)
    assert cfg.algorithms[0]["alpha"] == 0.01


def test_parse_beta_out_of_range_names_field():
    doc = json.loads(json.dumps(MINIMAL))
    doc["algorithms"][0]["beta"] = 1.5
    with pytest.raises(ConfigError) as exc_info:
        config_from_dict(doc)
    assert any("algorithms.0" in e and "momentum" in e for e in exc_info.value.errors)


def test_parse_unknown_key_suggests_nearest():
    doc = json.loads(json.dumps(MINIMAL))
    doc["algorithms"][0]["alpa"] = 0.5
    with pytest.raises(ConfigError) as exc_info:
        config_from_dict(doc)
    assert any("alpa" in e and "alpha" in e for e in exc_info.value.errors)


def test_parse_reports_all_errors_together():
    doc = json.loads(json.dumps(MINIMAL))
    doc["algorithms"][0]["beta"] = -1
    doc["bogus_key"] = 1
    doc["seeds"] = []
    with pytest.raises(ConfigError) as exc_info:
        config_from_dict(doc)
    assert len(exc_info.value.errors) >= 3


def test_parse_config_from_file_and_overrides(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(MINIMAL))
    cfg = parse_config(path, ["algorithms.0.alpha=0.5", "objective.n=8",
                              "topology.n=8"])
    assert cfg.algorithms[0]["alpha"] == 0.5
    assert cfg.objective["n"] == 8


def test_parse_rejects_bad_json():
    with pytest.raises(ConfigError):
        parse_config("{not json")


def trace_fixture(T=10, stride=5):
    obj = make_pl_sine(5, 0.5)
    sched = cyclic_er_rings(5, 0.4, seed=2)
    tr = run(obj, AlgoConfig(alpha=0.01, T=T), sched, seed=3,
             probe_stride=stride, backend="numpy")
    tr.seed = 3
    return tr


def test_emit_trace_rows_and_header(tmp_path):
    tr = trace_fixture()
    path = emit_trace(tr, tmp_path, "abc123")
    assert path.name == "trace_abc123_3.csv"
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(cli.TRACE_COLUMNS)
    assert [r[0] for r in rows[1:]] == ["0", "5", "10"]


def test_emit_trace_bytes_reproducible_and_roundtrip(tmp_path):
    tr = trace_fixture()
    p1 = emit_trace(tr, tmp_path / "a", "fp")
    p2 = emit_trace(tr, tmp_path / "b", "fp")
    assert p1.read_bytes() == p2.read_bytes()
    with open(p1, newline="") as fh:
        rows = list(csv.DictReader(fh))
    # shortest round-trip float formatting: parsing returns the same value
    assert float(rows[1]["gap"]) == tr.gap[1]
    assert rows[0]["l2_z"] == ""  # nan written as empty field
    text = p1.read_text()
    assert "," in text and ";" not in text.splitlines()[0]


def test_emit_summary_contains_fingerprint(tmp_path):
    cfg = config_from_dict(json.loads(json.dumps(MINIMAL)))
    tr = trace_fixture()
    tr.meta["fingerprint"] = fingerprint(cfg, 0)
    path = emit_summary(cfg, [tr], tmp_path)
    doc = json.loads(path.read_text(), parse_constant=lambda _: pytest.fail(
        "summary.json must be strict JSON"))
    assert doc["fingerprint"] == fingerprint(cfg)
    assert doc["final_metrics"][0]["fingerprint"] == fingerprint(cfg, 0)
    assert doc["constants"]["phi_m_empirical"] is None  # NaN sanitized to null
    assert "meta" in doc


def test_check_mixing_matrix_negative_control():
    W = mixing_matrix(directed_ring(4))
    assert check_mixing_matrix(W)
    W[1, 0] += 1e-6  # corrupt one weight: column sum breaks
    assert not check_mixing_matrix(W)


def test_selftest_passes(capsys):
    assert selftest() == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == len(cli.SELFTEST_SUITES)
    for name, _ in cli.SELFTEST_SUITES:
        assert name in out


def test_phi_check_passes(capsys):
    assert phi_check(n=10, rounds=100, p=0.2, seed=3) == 0
    assert "PASS" in capsys.readouterr().out


def test_main_run_and_exit_codes(tmp_path):
    config_path = tmp_path / "c.json"
    config_path.write_text(json.dumps(MINIMAL))
    out = tmp_path / "results"
    code = main(["run", "--config", str(config_path), "--out", str(out),
                 "--backend", "numpy"])
    assert code == 0
    csvs = sorted(out.glob("trace_*.csv"))
    assert len(csvs) == 1
    assert (out / "summary.json").exists()


def test_main_config_error_exit_2(tmp_path):
    config_path = tmp_path / "bad.json"
    config_path.write_text(json.dumps({"objective": {"kind": "bogus"}}))
    assert main(["run", "--config", str(config_path)]) == 2
    assert main(["run"]) == 2  # neither --config nor --preset


def test_main_divergence_exit_3(tmp_path):
    doc = json.loads(json.dumps(MINIMAL))
    doc["algorithms"][0]["alpha"] = 1e9
    doc["algorithms"][0]["T"] = 200
    config_path = tmp_path / "d.json"
    config_path.write_text(json.dumps(doc))
    code = main(["run", "--config", str(config_path),
                 "--out", str(tmp_path / "r"), "--backend", "numpy"])
    assert code == 3


def test_main_io_error_exit_4(tmp_path):
    config_path = tmp_path / "c.json"
    config_path.write_text(json.dumps(MINIMAL))
    blocker = tmp_path / "blocked"
    blocker.write_text("a file, not a directory")
    code = main(["run", "--config", str(config_path), "--out", str(blocker),
                 "--backend", "numpy"])
    assert code == 4


def test_main_compare_writes_report(tmp_path):
    doc = json.loads(json.dumps(MINIMAL))
    doc["algorithms"].append({"variant": "push-sgd", "alpha": 0.01, "T": 20})
    doc["seeds"] = [0, 1, 2]
    config_path = tmp_path / "c.json"
    config_path.write_text(json.dumps(doc))
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(config_path), "--out", str(out),
                 "--backend", "numpy"]) == 0
    report = json.loads((out / "compare.json").read_text())
    assert "sign_test" in report
    assert 0.0 <= report["sign_test"]["p_value"] <= 1.0


def test_main_rate_subcommand(tmp_path):
    doc = json.loads(json.dumps(MINIMAL))
    config_path = tmp_path / "c.json"
    config_path.write_text(json.dumps(doc))
    out = tmp_path / "rate"
    assert main(["rate", "--config", str(config_path), "--out", str(out),
                 "--backend", "numpy", "--T", "64,216,512", "seeds=[0,1]"]) == 0
    doc2 = json.loads((out / "rate.json").read_text())
    assert doc2["T"] == [64, 216, 512]
    assert isinstance(doc2["slope"], float)
