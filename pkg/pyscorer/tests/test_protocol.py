"""Wire-protocol conformance: request/response pairing, ordering, resilience
to malformed input, and clean end-of-input shutdown."""

import json
import subprocess
import sys


def spawn(*args: str) -> subprocess.Popen:
    return subprocess.Popen(
        [sys.executable, "-m", "pyscorer", *args],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
        encoding="utf-8",
        bufsize=1,
    )


def exchange(proc: subprocess.Popen, lines: list[str]) -> list[str]:
    out, err = proc.communicate("".join(line + "\n" for line in lines), timeout=30)
    assert proc.returncode == 0, err
    return [line for line in out.splitlines() if line.strip()]


class TestFixedMode:
    def test_predict_returns_fixed_scores(self):
        proc = spawn("--fixed", "1.0", "-1.0")
        req = {"type": "predict", "id": "r1", "option": "o", "sentences": ["a", "b"]}
        responses = exchange(proc, [json.dumps(req)])
        assert len(responses) == 1
        obj = json.loads(responses[0])
        assert obj == {"type": "scores", "id": "r1", "scores": [1.0, -1.0]}

    def test_one_response_per_request_in_order(self):
        proc = spawn("--fixed", "0.5", "0.25")
        requests = [
            json.dumps({"type": "predict", "id": f"q{i}", "option": str(i), "sentences": []})
            for i in range(20)
        ]
        responses = exchange(proc, requests)
        assert len(responses) == len(requests)
        assert [json.loads(r)["id"] for r in responses] == [f"q{i}" for i in range(20)]

    def test_malformed_line_gets_error_then_processing_continues(self):
        proc = spawn("--fixed", "1.0", "2.0")
        good = json.dumps({"type": "predict", "id": "after", "option": "o", "sentences": []})
        responses = exchange(proc, ["{{", good])
        assert len(responses) == 2
        first = json.loads(responses[0])
        assert first["type"] == "error"
        assert first["id"] is None
        second = json.loads(responses[1])
        assert second == {"type": "scores", "id": "after", "scores": [1.0, 2.0]}

    def test_unknown_request_type_is_error_response(self):
        proc = spawn("--fixed", "0", "0")
        responses = exchange(proc, [json.dumps({"type": "shutdown", "id": "x"})])
        obj = json.loads(responses[0])
        assert obj["type"] == "error"
        assert obj["id"] == "x"

    def test_predict_without_sentences_is_error(self):
        proc = spawn("--fixed", "0", "0")
        responses = exchange(proc, [json.dumps({"type": "predict", "id": "x", "option": "o"})])
        assert json.loads(responses[0])["type"] == "error"

    def test_list_and_select_checkpoints(self):
        proc = spawn("--fixed", "0", "0")
        responses = exchange(
            proc,
            [
                json.dumps({"type": "list_checkpoints", "id": "a"}),
                json.dumps({"type": "select_checkpoint", "id": "b", "epoch": 1}),
            ],
        )
        assert json.loads(responses[0]) == {"type": "checkpoints", "id": "a", "epochs": []}
        assert json.loads(responses[1]) == {"type": "ok", "id": "b"}

    def test_end_of_input_exits_zero(self):
        proc = spawn("--fixed", "0", "0")
        out, err = proc.communicate("", timeout=30)
        assert proc.returncode == 0, err
        assert out == ""

    def test_blank_lines_ignored(self):
        proc = spawn("--fixed", "3.0", "4.0")
        req = json.dumps({"type": "predict", "id": "only", "option": "o", "sentences": []})
        responses = exchange(proc, ["", "   ", req])
        assert len(responses) == 1


class TestCli:
    def test_requires_a_mode(self):
        proc = subprocess.run(
            [sys.executable, "-m", "pyscorer"], capture_output=True, text=True, timeout=30
        )
        assert proc.returncode != 0

    def test_mirror_missing_path_fails(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "pyscorer", "--mirror", str(tmp_path / "missing")],
            capture_output=True,
            text=True,
            timeout=30,
        )
        assert proc.returncode != 0
