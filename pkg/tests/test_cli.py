import json
from pathlib import Path

import pytest

from synthgen import embedding_table_for, planted_corpus
from u3e import load_corpus, read_changes, read_evidence, save_corpus
from u3e.cli import main


def save_embeddings(table, path: Path) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for token, vec in table.vectors.items():
            fh.write(token + " " + " ".join(repr(float(x)) for x in vec) + "\n")


@pytest.fixture()
def workspace(tmp_path):
    corpus, truth = planted_corpus(n_train=30, n_test=12, seed=5)
    train_path = tmp_path / "train.jsonl"
    test_path = tmp_path / "test.jsonl"
    save_corpus(corpus.restrict("train"), train_path)
    save_corpus(corpus.restrict("test"), test_path)
    table = embedding_table_for(corpus)
    vec_path = tmp_path / "vec.txt"
    save_embeddings(table, vec_path)
    return tmp_path, corpus, truth


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


class TestTrainChangesExtract:
    def test_full_command_chain(self, workspace, capsys):
        tmp, corpus, _truth = workspace
        ckpts = tmp / "ckpts"
        assert run_cli("train", "--corpus", tmp / "train.jsonl", "--epochs", 3, "--seed", 42,
                       "--hash-bits", 14, "--out", ckpts) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["checkpoints"] == 3
        assert sorted(p.name for p in ckpts.glob("*.json")) == ["epoch-1.json", "epoch-2.json", "epoch-3.json"]

        changes_dir = tmp / "changes"
        assert run_cli("changes", "--ckpts", ckpts, "--corpus", tmp / "train.jsonl",
                       "--out", changes_dir) == 0
        capsys.readouterr()
        vectors = read_changes(changes_dir / "epoch-3.jsonl")
        assert len(vectors) == 30
        assert all(cv.epoch == 3 for cv in vectors)

        assert run_cli("select", "--method", "bmc", "--lambda", 0.1, "--k", 1,
                       "--changes", changes_dir, "--test", tmp / "test.jsonl",
                       "--ckpts", ckpts, "--out", tmp / "selection.json") == 0
        table_text = capsys.readouterr().out
        assert "chosen_epoch=" in table_text
        report = json.loads((tmp / "selection.json").read_text())
        assert report["method"] == "bmc"
        assert len(report["rows"]) == 3

        evidence_path = tmp / "evidence.jsonl"
        assert run_cli("extract", "--changes", changes_dir / "epoch-3.jsonl", "--k", 1,
                       "--out", evidence_path) == 0
        capsys.readouterr()
        evidences = read_evidence(evidence_path)
        assert len(evidences) == 30
        assert all(len(e.indices) == 1 for e in evidences)

        assert run_cli("retrain", "--corpus", tmp / "train.jsonl", "--evidence", evidence_path,
                       "--test", tmp / "test.jsonl", "--epochs", 3, "--hash-bits", 14) == 0
        result = json.loads(capsys.readouterr().out)
        assert 0.0 <= result["retrain_accuracy"] <= 1.0

    def test_train_deterministic_across_invocations(self, workspace, capsys):
        tmp, _corpus, _truth = workspace
        for name in ("a", "b"):
            assert run_cli("train", "--corpus", tmp / "train.jsonl", "--epochs", 2,
                           "--hash-bits", 12, "--out", tmp / name) == 0
        capsys.readouterr()
        for epoch in (1, 2):
            a = (tmp / "a" / f"epoch-{epoch}.json").read_bytes()
            b = (tmp / "b" / f"epoch-{epoch}.json").read_bytes()
            assert a == b

    def test_changes_via_external_stub(self, workspace, capsys):
        import sys

        tmp, _corpus, _truth = workspace
        ckpts = tmp / "ckpts"
        run_cli("train", "--corpus", tmp / "train.jsonl", "--epochs", 1, "--hash-bits", 12, "--out", ckpts)
        stub = Path(__file__).parent / "stub_scorer.py"
        cmd = f"{sys.executable} {stub} --mirror {ckpts / 'epoch-1.json'}"
        assert run_cli("changes", "--ckpts", ckpts, "--corpus", tmp / "train.jsonl",
                       "--out", tmp / "ext-changes", "--scorer-cmd", cmd) == 0
        capsys.readouterr()
        builtin_dir = tmp / "builtin-changes"
        run_cli("changes", "--ckpts", ckpts, "--corpus", tmp / "train.jsonl", "--out", builtin_dir)
        capsys.readouterr()
        a = read_changes(tmp / "ext-changes" / "epoch-1.jsonl")
        b = read_changes(builtin_dir / "epoch-1.jsonl")
        assert [cv.values for cv in a] == [cv.values for cv in b]


class TestRunAndSweep:
    def write_config(self, tmp: Path, **overrides) -> Path:
        cfg = {
            "train": "train.jsonl",
            "test": "test.jsonl",
            "out": "out",
            "epochs": 3,
            "seed": 42,
            "hash_bits": 14,
            "k": 1,
            "lambda": 0.1,
            "method": "bmc",
        }
        cfg.update(overrides)
        path = tmp / "run.json"
        path.write_text(json.dumps(cfg), encoding="utf-8")
        return path

    def test_run_writes_artifacts(self, workspace, capsys):
        tmp, _corpus, _truth = workspace
        config = self.write_config(tmp)
        assert run_cli("run", "--config", config) == 0
        captured = capsys.readouterr()
        assert "chosen_epoch=" in captured.out
        assert "timings_s" in captured.err
        out = tmp / "out"
        assert (out / "result.json").exists()
        assert (out / "selection.json").exists()
        assert (out / "evidence.jsonl").exists()
        assert sorted(p.name for p in (out / "ckpts").glob("*.json")) == [
            "epoch-1.json", "epoch-2.json", "epoch-3.json",
        ]
        result = json.loads((out / "result.json").read_text())
        assert set(result) == {"selection", "full_context_accuracy", "retrain_accuracy", "evidences"}

    def test_single_corpus_with_splits(self, workspace, capsys):
        tmp, corpus, _truth = workspace
        save_corpus(corpus, tmp / "all.jsonl")
        config = self.write_config(tmp, out="out2")
        cfg = json.loads(config.read_text())
        del cfg["train"], cfg["test"]
        cfg["corpus"] = "all.jsonl"
        config.write_text(json.dumps(cfg), encoding="utf-8")
        assert run_cli("run", "--config", config) == 0
        capsys.readouterr()
        assert (tmp / "out2" / "result.json").exists()

    def test_sweep_writes_table(self, workspace, capsys):
        tmp, _corpus, _truth = workspace
        config = self.write_config(tmp, out="sweep-out")
        assert run_cli("sweep", "--config", config) == 0
        capsys.readouterr()
        sweep = json.loads((tmp / "sweep-out" / "sweep.json").read_text())
        assert [row["epoch"] for row in sweep["rows"]] == [1, 2, 3]
        best = sweep["best_epoch"]
        best_acc = next(r["retrain_accuracy"] for r in sweep["rows"] if r["epoch"] == best)
        assert all(best_acc >= r["retrain_accuracy"] for r in sweep["rows"])

    def test_config_validation(self, workspace, capsys):
        tmp, _corpus, _truth = workspace
        bad = tmp / "bad.json"
        bad.write_text(json.dumps({"train": "train.jsonl", "test": "test.jsonl"}), encoding="utf-8")
        assert run_cli("run", "--config", bad) == 1
        err = capsys.readouterr().err.strip()
        obj = json.loads(err)
        assert "out" in obj["error"]


class TestBaselineAndEval:
    def test_baseline_wv(self, workspace, capsys):
        tmp, _corpus, _truth = workspace
        out = tmp / "wv.jsonl"
        assert run_cli("baseline", "--method", "wv", "--embeddings", tmp / "vec.txt",
                       "--k", 2, "--corpus", tmp / "train.jsonl", "--out", out) == 0
        capsys.readouterr()
        evidences = read_evidence(out)
        assert len(evidences) == 30
        assert all(len(e.indices) == 2 for e in evidences)

    def test_baseline_beam_to_stdout(self, workspace, capsys):
        tmp, _corpus, _truth = workspace
        assert run_cli("baseline", "--method", "beam", "--embeddings", tmp / "vec.txt",
                       "--k", 1, "--corpus", tmp / "train.jsonl", "--beam-width", 2) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
        assert len(lines) == 30
        assert all("evidence" in json.loads(l) for l in lines)

    def test_eval_reports_metrics(self, workspace, capsys):
        tmp, corpus, truth = workspace
        gold_path = tmp / "train.jsonl"
        pred_path = tmp / "pred.jsonl"
        with pred_path.open("w", encoding="utf-8") as fh:
            for s in load_corpus(gold_path).samples:
                fh.write(json.dumps({"id": s.id, "answer": s.label, "evidence": [truth[s.id]]}) + "\n")
        assert run_cli("eval", "--pred", pred_path, "--gold", gold_path,
                       "--metrics", "ans,evi,all", "--json") == 0
        report = json.loads(capsys.readouterr().out)
        assert report["acc"] == 1.0
        assert report["evi_f1"] == 1.0
        assert report["all_f1"] == 1.0

    def test_eval_table_output(self, workspace, capsys):
        tmp, _corpus, truth = workspace
        gold_path = tmp / "train.jsonl"
        pred_path = tmp / "pred.jsonl"
        with pred_path.open("w", encoding="utf-8") as fh:
            for s in load_corpus(gold_path).samples:
                fh.write(json.dumps({"id": s.id, "answer": 1 - s.label, "evidence": [truth[s.id]]}) + "\n")
        assert run_cli("eval", "--pred", pred_path, "--gold", gold_path, "--metrics", "ans,evi,all") == 0
        text = capsys.readouterr().out
        assert "all_f1" in text and "0.0000" in text


class TestErrorHandling:
    def test_missing_file_is_one_json_line(self, tmp_path, capsys):
        assert run_cli("train", "--corpus", tmp_path / "nope.jsonl", "--out", tmp_path / "o") == 1
        err = capsys.readouterr().err
        assert err.count("\n") == 1
        obj = json.loads(err)
        assert "error" in obj

    def test_malformed_corpus_reports_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id":"x"}\n', encoding="utf-8")
        assert run_cli("train", "--corpus", bad, "--out", tmp_path / "o") == 1
        obj = json.loads(capsys.readouterr().err)
        assert "line 1" in obj["error"]
