import csv
import io
import json
import subprocess
import sys

import pytest

from specsamp.cli import main
from specsamp.models import NGramModel, TabularModel


@pytest.fixture(scope="module")
def corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "c.txt"
    path.write_text("the cat sat on the mat and the dog sat on the log. " * 400)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_train_and_sample(tmp_path, corpus_file, capsys):
    t, d = tmp_path / "t.npz", tmp_path / "d.npz"
    assert run(capsys, "train", "--corpus", corpus_file, "--order", 3, "--out", t)[0] == 0
    assert run(capsys, "train", "--corpus", corpus_file, "--order", 1, "--out", d)[0] == 0
    assert NGramModel.load(t).order == 3

    code, out, _ = run(capsys, "sample", "--model", t, "--prompt", "the ", "--length", 20, "--seed", 1)
    assert code == 0 and out.startswith("the ") and len(out.rstrip("\n")) == 24

    traces = tmp_path / "tr.jsonl"
    code, out, _ = run(capsys, "sample", "--model", t, "--draft", d, "--prompt", "the ", "--length", 20,
                       "--k", 3, "--method", "nucleus:0.9", "--format", "json", "--traces", traces)
    doc = json.loads(out)
    assert code == 0 and len(doc["completion"]) >= 20 and doc["loops"] >= 1
    assert len(traces.read_text().splitlines()) == doc["loops"]


def test_sample_tabular(tmp_path, capsys):
    path = tmp_path / "m.json"
    path.write_text(TabularModel(2, 0, {}, [0.0, 1.0]).to_json())
    code, out, _ = run(capsys, "sample", "--model", path, "--prompt", "0", "--length", 3)
    assert code == 0 and out.strip() == "0,1,1,1"


def test_sample_is_seeded(tmp_path, corpus_file, capsys):
    t = tmp_path / "t.npz"
    run(capsys, "train", "--corpus", corpus_file, "--order", 2, "--out", t)
    outs = {run(capsys, "sample", "--model", t, "--length", 30, "--seed", 5)[1] for _ in range(2)}
    assert len(outs) == 1


def test_bench_config_and_flags(tmp_path, corpus_file, capsys):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({"corpus": str(corpus_file), "num_sequences": 4, "prompt_len": 4,
                               "completion_len": 10, "target": {"order": 3, "alpha": 0.1},
                               "draft": {"order": 2, "alpha": 0.1}, "k": 2}))
    out_path = tmp_path / "r.csv"
    code, _, _ = run(capsys, "bench", "--config", cfg, "--k", 3, "--seed", 2, "--method", "plain", "--out", out_path)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out_path.read_text())))
    assert [r["method"] for r in rows] == ["ars", "sps"]
    assert "acceptance_rate_pos3" in rows[0] and "acceptance_rate_pos4" not in rows[0]

    code, out, _ = run(capsys, "bench", "--config", cfg, "--format", "json")
    assert code == 0 and json.loads(out)["config"]["k"] == 2


def test_bench_invalid_config(capsys):
    code, _, err = run(capsys, "bench", "--num-sequences", 0)
    assert code == 2 and "num_sequences" in err


def test_verify_small(capsys):
    code, out, _ = run(capsys, "verify", "--instances", 2, "--samples", 2000, "--identity-pairs", 100,
                       "--format", "json")
    assert code == 0 and json.loads(out)["pass"] is True


def test_sweep(tmp_path, capsys):
    cost = tmp_path / "cost.json"
    cost.write_text(json.dumps({"target_ms": 14.1, "draft_ms": 1.8, "scoring_ms": 14.1, "overhead_ms": 0}))
    code, out, _ = run(capsys, "sweep", "--config", cost, "--alpha", 0.7, "--k-max", 6, "--sequences", 500)
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0
    assert rows[0] == ["K", "mean_ms_per_128", "std_ms", "efficiency", "loop_ms", "speedup"]
    assert len(rows) == 7 and float(rows[4][4]) == pytest.approx(21.3)

    traces = tmp_path / "t.jsonl"
    traces.write_text('{"loop": 0, "accepted": 4, "resampled": false, "bonus": true}\n'
                      '{"loop": 1, "accepted": 1, "resampled": true, "bonus": false}\n')
    code, out, _ = run(capsys, "sweep", "--traces", traces, "--k", 4, "--k-max", 4, "--sequences", 100)
    assert code == 0 and len(out.splitlines()) == 5


def test_sweep_bad_cost(tmp_path, capsys):
    cost = tmp_path / "cost.json"
    cost.write_text(json.dumps({"target_ms": -1, "draft_ms": 1}))
    assert run(capsys, "sweep", "--config", cost)[0] == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "specsamp", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "sweep" in proc.stdout
