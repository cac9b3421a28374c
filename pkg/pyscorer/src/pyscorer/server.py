"""Single-threaded request loop over stdin/stdout.

One JSON object per input line, exactly one JSON response line per request,
answered in order. A malformed line yields an error response and processing
continues; end of input exits cleanly.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import IO

from .model import FixedModel, MirrorModel


def _handle(model, request: dict) -> dict:
    rid = request.get("id")
    rtype = request.get("type")
    if rtype == "predict":
        option = request.get("option")
        sentences = request.get("sentences")
        if not isinstance(option, str) or not isinstance(sentences, list):
            return {"type": "error", "id": rid, "message": "predict needs 'option' and 'sentences'"}
        scores = model.predict(option, [str(s) for s in sentences])
        return {"type": "scores", "id": rid, "scores": scores}
    if rtype == "list_checkpoints":
        return {"type": "checkpoints", "id": rid, "epochs": model.epochs()}
    if rtype == "select_checkpoint":
        try:
            model.select(int(request["epoch"]))
        except (KeyError, TypeError, ValueError) as exc:
            return {"type": "error", "id": rid, "message": f"cannot select checkpoint: {exc}"}
        return {"type": "ok", "id": rid}
    return {"type": "error", "id": rid, "message": f"unknown request type {rtype!r}"}


def serve(model, stdin: IO[str] | None = None, stdout: IO[str] | None = None) -> int:
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ValueError("request must be a JSON object")
        except ValueError as exc:
            response = {"type": "error", "id": None, "message": f"malformed request: {exc}"}
        else:
            try:
                response = _handle(model, request)
            except Exception as exc:  # keep serving after any per-request failure
                response = {"type": "error", "id": request.get("id"), "message": str(exc)}
        stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
        stdout.flush()
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="pyscorer", description="External scorer plugin")
    mode = parser.add_mutually_exclusive_group(required=True)
    mode.add_argument("--fixed", nargs=2, type=float, metavar=("R0", "R1"),
                      help="answer every predict with these two scores")
    mode.add_argument("--mirror", metavar="CKPT",
                      help="checkpoint file or directory of epoch-N.json files")
    args = parser.parse_args(argv)
    try:
        if args.fixed is not None:
            model = FixedModel(*args.fixed)
        else:
            model = MirrorModel(args.mirror)
    except (OSError, ValueError) as exc:
        print(f"pyscorer: {exc}", file=sys.stderr)
        return 2
    return serve(model)


if __name__ == "__main__":
    sys.exit(main())
