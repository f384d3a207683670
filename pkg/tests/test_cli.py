from __future__ import annotations

import csv
import json

import pytest

from hybridband.cli import EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, main

SMALL = ["--n", "12", "--n-k", "4"]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_verify_clean(capsys):
    assert main(["verify"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("spectrum-preservation", "eigensolver-residual", "electron-count",
                 "determinism"):
        assert f"PASS  {name}" in out


def test_verify_fault(capsys):
    assert main(["verify", "--inject-fault", "p6_sign"]) == EXIT_INVARIANT
    out = capsys.readouterr().out
    assert "FAIL  spectrum-preservation" in out
    assert "invariant failure: spectrum-preservation" in out


def test_bench_four_rows_and_deterministic(tmp_path):
    args = ["bench", *SMALL, "--groups", "4d,4d",
            "--schemes", "RankOnly,ThreadOnly,ThreeWayHybrid,TwoWayRankDevice"]
    assert main(args + ["--output-dir", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--output-dir", str(tmp_path / "b")]) == EXIT_OK
    rows = _rows(tmp_path / "a" / "bench.csv")
    assert rows[0] == ["scheme", "workers", "mode", "seconds", "speedup",
                       "memory_replicated_bytes", "memory_shared_bytes", "memory_total_bytes"]
    assert len(rows) == 5
    for name in ("bench.csv", "bench.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_bench_invalid_pairing(tmp_path, capsys):
    code = main(["bench", *SMALL, "--groups", "4", "--schemes", "TwoWayRankDevice",
                 "--output-dir", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "device" in capsys.readouterr().err


def test_unknown_scheme(tmp_path):
    assert main(["bench", *SMALL, "--schemes", "Quantum", "--output-dir", str(tmp_path)]) \
        == EXIT_CONFIG


def test_simulate_symmetric(tmp_path, capsys):
    code = main(["simulate", "--groups", "4d,4d", "--scheme", "ThreeWayHybrid", "--n-k", "64",
                 "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    assert capsys.readouterr().out.splitlines()[0] == "[32, 32]"
    dump = json.loads((tmp_path / "plan.json").read_text())
    assert dump["plan"]["kpoints_per_worker"] == [32, 32]


def test_simulate_run(tmp_path):
    assert main(["simulate", *SMALL, "--groups", "2d", "--scheme", "TwoWayRankDevice", "--run",
                 "--output-dir", str(tmp_path)]) == EXIT_OK
    assert json.loads((tmp_path / "plan.json").read_text())["makespan"] > 0


def test_topology_file(tmp_path):
    topo = tmp_path / "topo.json"
    topo.write_text(json.dumps({"groups": [{"cores": 2, "device": True}],
                                "scheme": "RankOnly", "cost_model": {"link_latency": 2e-5}}))
    assert main(["simulate", "--topology", str(topo), "--n-k", "5",
                 "--output-dir", str(tmp_path)]) == EXIT_OK
    dump = json.loads((tmp_path / "plan.json").read_text())
    assert dump["plan"]["kpoints_per_worker"] == [3, 2]
    assert dump["cost_model"]["link_latency"] == 2e-5
    assert main(["simulate", "--topology", str(tmp_path / "none.json")]) == EXIT_CONFIG


def test_microbench_rows(tmp_path):
    assert main(["microbench", "10", "100", "1000", "10000", "100000", "--repeats", "1",
                 "--output-dir", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "microbench.csv")
    assert [r[0] for r in rows[1:]] == ["10", "100", "1000", "10000", "100000"]


def test_report_merge(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["bench", *SMALL, "--groups", "2d", "--schemes", "TwoWayRankDevice,RankOnly",
          "--output-dir", str(a)])
    main(["bench", *SMALL, "--groups", "2d", "--schemes", "ThreadOnly,RankOnly",
          "--output-dir", str(b), "--seed", "1"])
    capsys.readouterr()
    assert main(["report", str(a), str(b), "--output", str(tmp_path / "r.csv")]) == EXIT_OK
    rows = _rows(tmp_path / "r.csv")[1:]
    assert [r[0] for r in rows] == ["RankOnly", "RankOnly", "ThreadOnly", "TwoWayRankDevice"]
    assert main(["report", str(tmp_path / "missing")]) == EXIT_CONFIG


def test_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 10, "n_k": 3, "output_dir": str(tmp_path / "file"),
                               "groups": "2"}))
    monkeypatch.setenv("HYBRIDBAND_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["simulate", "--config", str(cfg), "--n-k", "4"]) == EXIT_OK
    dump = json.loads((tmp_path / "env" / "plan.json").read_text())
    assert dump["plan"]["kpoints_per_worker"] == [2, 2]
    assert main(["simulate", "--config", str(cfg), "--output-dir", str(tmp_path / "flag")]) \
        == EXIT_OK
    assert (tmp_path / "flag" / "plan.json").exists()


def test_bad_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": 1}))
    assert main(["simulate", "--config", str(cfg)]) == EXIT_CONFIG
