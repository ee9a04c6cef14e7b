from __future__ import annotations

import json
import os
import re
import shutil
import subprocess
import sys

import pytest

from builders import taskmaster_dialogues
from tod_audit import cli
from tod_audit.corpus import read_corpus
from tod_audit.errors import InvariantViolation


def run(*argv):
    return cli.run([str(a) for a in argv])


def run_proc(*argv, env_extra=None, cwd=None):
    env = dict(os.environ)
    env.update(env_extra or {})
    return subprocess.run(
        [sys.executable, "-m", "tod_audit.cli", *map(str, argv)],
        capture_output=True, text=True, env=env, cwd=cwd,
    )


@pytest.fixture
def synth_corpus(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"dialogues": 120, "horizon": 1, "seed": 3, "user_vocab": 2,
                                "max_actions_per_turn": 1,
                                "injections": [{"alternatives": {"a0": 0.5, "a1": 0.5}}]}))
    out = tmp_path / "synth.json"
    assert run("synth", "--in", spec, "--out", out) == 0
    return out


def test_no_arguments_prints_usage(capsys):
    assert cli.run([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_and_missing_input(tmp_path, capsys):
    assert cli.run(["audit", "--in", "x.json", "--bogus"]) == 1
    assert "hint:" in capsys.readouterr().err
    assert cli.run(["audit", "--in", str(tmp_path / "missing.json")]) == 1
    err = capsys.readouterr().err
    assert "not found" in err and "hint:" in err


def test_schema_probe_failure_exit_code(tmp_path, capsys):
    (tmp_path / "data.json").write_text(json.dumps({"A": {"turns": []}}))
    assert run("ingest", "multiwoz", "--in", tmp_path, "--out", tmp_path / "c.json") == 1
    assert "schema" in capsys.readouterr().err


def test_invariant_violation_exit_code(synth_corpus, monkeypatch, capsys):
    def broken(*a, **kw):
        raise InvariantViolation("closed form mismatch")
    monkeypatch.setattr(cli, "evaluate", broken)
    assert run("audit", "--in", synth_corpus) == 2
    assert "invariant" in capsys.readouterr().err


def test_ingest_canonicalize_audit_pipeline(mwoz_dir, tmp_path):
    parsed = tmp_path / "parsed.json"
    canon = tmp_path / "canon.json"
    assert run("ingest", "multiwoz", "--in", mwoz_dir, "--out", parsed) == 0
    assert len(read_corpus(parsed)) == 2
    assert run("canonicalize", "--in", parsed, "--out", canon, "--kb", mwoz_dir) == 0
    assert read_corpus(canon).stage_log == ("status_slots", "merge_labels", "drop_reqmore")
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    assert run("audit", "--in", canon, "--out", r1) == 0
    assert run("audit", "--in", canon, "--out", r2) == 0
    assert r1.read_bytes() == r2.read_bytes()
    report = json.loads(r1.read_text())
    assert report["stage_log"] == ["status_slots", "merge_labels", "drop_reqmore"]
    assert report["inputs"][0]["sha256"]


def test_canonicalize_without_kb_is_config_error(mwoz_dir, tmp_path, capsys):
    parsed = tmp_path / "parsed.json"
    run("ingest", "multiwoz", "--in", mwoz_dir, "--out", parsed)
    assert run("canonicalize", "--in", parsed, "--out", tmp_path / "c.json") == 1
    assert "--kb" in capsys.readouterr().err
    assert run("canonicalize", "--in", parsed, "--out", tmp_path / "c.json", "--stages", "merge_labels") == 0
    assert read_corpus(tmp_path / "c.json").stage_log == ("merge_labels",)


def test_taskmaster_report_is_marked_proxy(tmp_path):
    src = tmp_path / "self-dialogs.json"
    src.write_text(json.dumps(taskmaster_dialogues()))
    out = tmp_path / "tm.json"
    assert run("ingest", "taskmaster", "--in", src, "--out", out) == 0
    rep = tmp_path / "r.json"
    assert run("audit", "--in", out, "--out", rep) == 0
    report = json.loads(rep.read_text())
    assert report["proxy_metrics"] is True
    assert any("proxy" in n for n in report["notes"])


def test_pruned_corpus_audits_perfectly(synth_corpus, tmp_path):
    pruned = tmp_path / "pruned.json"
    assert run("prune", "--in", synth_corpus, "--out", pruned, "--k", 10) == 0
    result = json.loads((tmp_path / "pruned.json.prune.json").read_text())
    assert result["kept"] == len(read_corpus(pruned))
    rep = tmp_path / "r.json"
    assert run("audit", "--in", pruned, "--k", 10, "--out", rep) == 0
    report = json.loads(rep.read_text())
    assert report["conflicts"]["count"] == 0
    row = report["scores"][0]
    assert (row["model"], row["train"]["macro_f1"], row["train"]["accuracy"]) == ("memorize", 1.0, 1.0)


def test_probe_horizon_one_delta(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"dialogues": 300, "horizon": 1, "seed": 1, "user_vocab": 2, "max_actions_per_turn": 1}))
    run("synth", "--in", spec, "--out", tmp_path / "c.json")
    assert run("probe", "--in", tmp_path / "c.json", "--ks", "10,2", "--out", tmp_path / "p.json") == 0
    deltas = json.loads((tmp_path / "p.json").read_text())["probe_deltas"]
    assert len(deltas) == 2
    assert all(d[m] <= 0.01 for d in deltas for m in ("train_macro_f1", "test_macro_f1", "train_accuracy", "test_accuracy"))


def _md_scores(md: str) -> list[list[str]]:
    lines = md.split("## Scores")[1].split("\n\n")[1].strip().splitlines()
    return [[c.strip() for c in line.strip("|").split("|")] for line in lines[2:]]


def test_md_and_json_agree(synth_corpus, tmp_path):
    rep = tmp_path / "r.json"
    assert run("audit", "--in", synth_corpus, "--ks", "10,2", "--out", rep) == 0
    assert run("report", "--in", rep, "--format", "md", "--out", tmp_path / "r.md") == 0
    assert run("report", "--in", rep, "--format", "csv", "--out", tmp_path / "r.csv") == 0
    report = json.loads(rep.read_text())
    md = (tmp_path / "r.md").read_text()
    rows = _md_scores(md)
    assert len(rows) == len(report["scores"])
    for cells, row in zip(rows, report["scores"]):
        assert cells[0] == row["model"] and int(cells[1]) == row["k"]
        assert float(cells[5]) == pytest.approx(row["train"]["macro_f1"], abs=5e-5)
        assert float(cells[6]) == pytest.approx(row["train"]["accuracy"], abs=5e-5)
        assert float(cells[8]) == pytest.approx(row["test"]["macro_f1"], abs=5e-5)
        assert float(cells[9]) == pytest.approx(row["test"]["accuracy"], abs=5e-5)
    assert f"{report['conflicts']['count']} branch points" in md
    csv_lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(csv_lines) == len(report["scores"]) + 1
    # every number in the md deltas table appears in the json deltas
    for d in report["probe_deltas"]:
        assert re.search(rf"\| {d['model']} \| 10 \| 2 \| {d['train_accuracy']:.4f} \|", md)


def test_config_file_and_env(synth_corpus, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 3, "split": {"train_fraction": 0.5, "seed": 9}}))
    monkeypatch.setenv(cli.CONFIG_ENV, str(cfg))
    rep = tmp_path / "r.json"
    assert run("audit", "--in", synth_corpus, "--out", rep) == 0
    report = json.loads(rep.read_text())
    assert report["config"]["k"] == 3 and report["config"]["split"]["seed"] == 9
    assert run("audit", "--in", synth_corpus, "--out", rep, "--k", 4, "--seed", 1) == 0
    report = json.loads(rep.read_text())
    assert report["config"]["k"] == 4 and report["config"]["split"]["seed"] == 1
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert run("audit", "--in", synth_corpus) == 1


def test_stdout_when_no_out(synth_corpus, capsys):
    assert run("audit", "--in", synth_corpus, "--format", "csv") == 0
    assert capsys.readouterr().out.startswith("model,k,note")


def test_deterministic_across_processes_and_jobs(synth_corpus, tmp_path):
    outputs = []
    for seed, jobs in (("0", "1"), ("123", "4"), ("random", "3")):
        out = tmp_path / f"r{seed}.json"
        proc = run_proc("audit", "--in", synth_corpus.name, "--ks", "10,2", "--jobs", jobs, "--out", out.name,
                        env_extra={"PYTHONHASHSEED": seed}, cwd=tmp_path)
        assert proc.returncode == 0, proc.stderr
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]


def test_console_script_installed():
    exe = shutil.which("tod-audit")
    if exe is None:
        pytest.skip("console script not on PATH")
    proc = subprocess.run([exe], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr
