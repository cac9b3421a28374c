"""Leave-one-out sentence erasure and prediction-change vectors.

For a labeled sample, the importance of sentence j is the absolute change of
the gold-class raw score when that single sentence is removed from the
document. Computing a full change vector for an m-sentence document costs
exactly m + 1 scorer predictions (one on the full document, one per variant).
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Corpus, Sample
from .scorer import Scorer, ScorerError


@dataclass
class ChangeVector:
    """Per-sentence importance values for one sample under one checkpoint."""

    sample_id: str
    epoch: int
    values: list[float]

    def __post_init__(self) -> None:
        for v in self.values:
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"change values must be finite and non-negative, got {v!r}")


def erase(sentences: Sequence[str], j: int) -> list[str]:
    """Document with the j-th (1-based) sentence removed; order preserved."""
    m = len(sentences)
    if not 1 <= j <= m:
        raise ValueError(f"sentence index {j} out of range 1..{m}")
    return list(sentences[: j - 1]) + list(sentences[j:])


def changes(scorer: Scorer, sample: Sample) -> ChangeVector:
    """Change vector of one sample: |R_y(full) - R_y(without sentence j)| per j."""
    y = sample.label
    try:
        full = scorer.predict(sample.option, sample.sentences)
    except Exception as exc:
        raise ScorerError(f"scorer failed on full document of sample {sample.id!r}: {exc}") from exc
    base = float(full[y])
    values: list[float] = []
    for j in range(1, sample.m + 1):
        try:
            variant = scorer.predict(sample.option, erase(sample.sentences, j))
        except Exception as exc:
            raise ScorerError(f"scorer failed on variant j={j} of sample {sample.id!r}: {exc}") from exc
        values.append(abs(base - float(variant[y])))
    return ChangeVector(sample_id=sample.id, epoch=getattr(scorer, "epoch", 0), values=values)


def worker_count() -> int:
    """Worker cap: the U3E_THREADS environment variable, else min(4, cpu count)."""
    env = os.environ.get("U3E_THREADS")
    if env is not None:
        try:
            value = int(env)
        except ValueError as exc:
            raise ValueError(f"U3E_THREADS must be a positive integer, got {env!r}") from exc
        if value < 1:
            raise ValueError(f"U3E_THREADS must be a positive integer, got {env!r}")
        return value
    return min(4, os.cpu_count() or 1)


def changes_matrix(scorer: Scorer, corpus: Corpus) -> list[ChangeVector]:
    """Change vectors for every corpus sample, order-aligned with the corpus.

    Samples are scored in parallel up to :func:`worker_count` workers; output
    is independent of scheduling.
    """
    samples = corpus.samples
    workers = worker_count()
    if workers == 1 or len(samples) <= 1:
        return [changes(scorer, s) for s in samples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: changes(scorer, s), samples))


def write_changes(vectors: Sequence[ChangeVector], path: str | Path) -> None:
    """One JSONL line per (sample, epoch): {"id", "epoch", "changes"}."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for cv in vectors:
            obj = {"id": cv.sample_id, "epoch": cv.epoch, "changes": cv.values}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_changes(path: str | Path) -> list[ChangeVector]:
    vectors: list[ChangeVector] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                vectors.append(
                    ChangeVector(
                        sample_id=str(obj["id"]),
                        epoch=int(obj["epoch"]),
                        values=[float(v) for v in obj["changes"]],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return vectors
