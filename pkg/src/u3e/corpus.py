"""Corpus data model, JSONL ingestion, sentence segmentation, and length-budget
preprocessing (relevance prefilter and sliding block windows)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

from .embeddings import EmbeddingTable, cosine, has_cjk, sentence_vector

DEFAULT_PREFILTER_N = 8
DEFAULT_PREFILTER_BUDGET = 512
DEFAULT_WINDOW = 256
DEFAULT_STEP = 128

SPLITS = ("train", "dev", "test")

_TERMINALS = "。！？!?."
_CLOSERS = "”’\"'」』》）)"


class CorpusError(ValueError):
    """Raised for malformed corpus files or records."""


@dataclass
class Sample:
    """One (statement, document, label) record.

    The document is an ordered list of sentences; ``gold_evidence`` holds
    1-based indices of annotated evidence sentences when available.
    ``gold_dropped`` is set by preprocessing steps that discard a gold
    evidence sentence.
    """

    id: str
    option: str
    sentences: list[str]
    label: int
    gold_evidence: tuple[int, ...] | None = None
    split: str = "train"
    gold_dropped: bool = False

    def __post_init__(self) -> None:
        if not self.sentences:
            raise ValueError("document must contain at least one sentence")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.gold_evidence is not None:
            self.gold_evidence = tuple(sorted(int(i) for i in self.gold_evidence))
            m = len(self.sentences)
            for idx in self.gold_evidence:
                if not 1 <= idx <= m:
                    raise ValueError(f"gold evidence index {idx} out of range 1..{m}")

    @property
    def m(self) -> int:
        return len(self.sentences)


@dataclass
class Corpus:
    """Ordered collection of samples with unique ids."""

    samples: list[Sample]
    name: str = "corpus"

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise CorpusError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def subset(self, split: str) -> list[Sample]:
        return [s for s in self.samples if s.split == split]

    def restrict(self, split: str) -> "Corpus":
        return Corpus(self.subset(split), name=f"{self.name}-{split}")

    def by_id(self, sample_id: str) -> Sample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)


@dataclass(frozen=True)
class EvidenceSet:
    """Extracted evidence for one sample: strictly ascending 1-based sentence
    indices (original relative order) of size min(k, m)."""

    sample_id: str
    indices: tuple[int, ...]
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.indices:
            raise ValueError("evidence indices must be non-empty")
        for prev, nxt in zip(self.indices, self.indices[1:]):
            if nxt <= prev:
                raise ValueError(f"evidence indices must be strictly ascending, got {self.indices}")
        if self.indices[0] < 1:
            raise ValueError("evidence indices are 1-based")


def write_evidence(evidences: Sequence[EvidenceSet], path: str | Path) -> None:
    """One JSONL line per sample: {"id", "evidence", "k"}."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for ev in evidences:
            obj = {"id": ev.sample_id, "evidence": list(ev.indices), "k": ev.k}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_evidence(path: str | Path) -> list[EvidenceSet]:
    out: list[EvidenceSet] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(
                    EvidenceSet(
                        sample_id=str(obj["id"]),
                        indices=tuple(int(i) for i in obj["evidence"]),
                        k=int(obj.get("k", len(obj["evidence"]))),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}: line {lineno}: {exc}") from exc
    return out


_REQUIRED_KEYS = ("id", "option", "sentences", "label")


def _sample_from_obj(obj: dict) -> Sample:
    for key in _REQUIRED_KEYS:
        if key not in obj:
            raise CorpusError(f"missing field {key!r}")
    evidence = obj.get("evidence")
    return Sample(
        id=str(obj["id"]),
        option=str(obj["option"]),
        sentences=[str(s) for s in obj["sentences"]],
        label=obj["label"],
        gold_evidence=tuple(evidence) if evidence is not None else None,
        split=obj.get("split", "train"),
        gold_dropped=bool(obj.get("gold_dropped", False)),
    )


def load_corpus(path: str | Path, fmt: str = "jsonl", split: str | None = None) -> Corpus:
    """Load a JSONL corpus, one sample object per line.

    ``split`` forces every loaded sample into that split, overriding any
    per-line value (used when a whole file plays one role).
    """
    if fmt != "jsonl":
        raise CorpusError(f"unsupported corpus format {fmt!r}")
    path = Path(path)
    samples: list[Sample] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON at line {lineno}: {exc}") from exc
            try:
                sample = _sample_from_obj(obj)
            except (CorpusError, ValueError, TypeError) as exc:
                msg = str(exc)
                raise CorpusError(f"{msg} at line {lineno}") from exc
            if split is not None:
                sample.split = split
            if sample.id in seen:
                raise CorpusError(f"duplicate sample id {sample.id!r} at line {lineno}")
            seen.add(sample.id)
            samples.append(sample)
    return Corpus(samples=samples, name=path.stem)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back to JSONL with a fixed key order."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in corpus.samples:
            obj: dict = {
                "id": s.id,
                "option": s.option,
                "sentences": s.sentences,
                "label": s.label,
            }
            if s.gold_evidence is not None:
                obj["evidence"] = list(s.gold_evidence)
            obj["split"] = s.split
            if s.gold_dropped:
                obj["gold_dropped"] = True
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def segment(text: str) -> list[str]:
    """Split raw text into sentences.

    A boundary falls after a run of terminal punctuation (。！？!?.) plus any
    closing quotes that immediately follow it. Whitespace-only segments are
    dropped; remaining segments are stripped.
    """
    pieces: list[str] = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] in _TERMINALS:
            j = i + 1
            while j < n and text[j] in _TERMINALS:
                j += 1
            while j < n and text[j] in _CLOSERS:
                j += 1
            pieces.append(text[start:j])
            start = j
            i = j
        else:
            i += 1
    if start < n:
        pieces.append(text[start:])
    return [p.strip() for p in pieces if p.strip()]


def token_count(text: str) -> int:
    """Length-budget units: characters for CJK text, whitespace tokens otherwise."""
    if has_cjk(text):
        return len(text)
    return len(text.split())


def prefilter_topn(
    sample: Sample,
    table: EmbeddingTable,
    n: int = DEFAULT_PREFILTER_N,
    budget: int | None = DEFAULT_PREFILTER_BUDGET,
) -> Sample:
    """Keep the ``n`` sentences most cosine-similar to the statement, then drop
    the lowest-ranked survivors until the total token count fits ``budget``.

    Survivors keep their original order. Gold evidence indices are remapped;
    if a gold sentence was dropped the returned sample has ``gold_dropped``
    set. Ties (including the all-zero-vector case) resolve toward earlier
    sentences, so a degenerate table deterministically keeps the first ``n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    m = sample.m
    option_vec = sentence_vector(sample.option, table)
    sims = [cosine(sentence_vector(s, table), option_vec) for s in sample.sentences]
    ranked = sorted(range(m), key=lambda j: (-sims[j], j))
    kept = ranked[: min(n, m)]
    if budget is not None:
        while len(kept) > 1 and sum(token_count(sample.sentences[j]) for j in kept) > budget:
            kept = kept[:-1]
    survivors = sorted(kept)
    remap = {old + 1: new + 1 for new, old in enumerate(survivors)}
    new_gold: tuple[int, ...] | None = None
    dropped = False
    if sample.gold_evidence is not None:
        remapped = [remap[g] for g in sample.gold_evidence if g in remap]
        dropped = len(remapped) != len(sample.gold_evidence)
        new_gold = tuple(remapped) if remapped else None
    return replace(
        sample,
        sentences=[sample.sentences[j] for j in survivors],
        gold_evidence=new_gold,
        gold_dropped=sample.gold_dropped or dropped,
    )


@dataclass(frozen=True)
class Block:
    """Inclusive 1-based range of sentence indices forming one prediction window."""

    start: int
    end: int
    overlong: bool = False


def blocks(sentences: Sequence[str], window: int = DEFAULT_WINDOW, step: int = DEFAULT_STEP) -> list[Block]:
    """Sliding whole-sentence windows over the document.

    Window starts advance by ``step`` token offsets; each window holds the
    sentences that fit entirely inside ``window`` tokens from its start. The
    sweep stops once a window reaches the final sentence. Any sentence no
    window can hold (longer than ``window``) becomes its own block, flagged
    ``overlong``.
    """
    if not window >= step >= 1:
        raise ValueError(f"need window >= step >= 1, got window={window} step={step}")
    m = len(sentences)
    if m == 0:
        return []
    lens = [token_count(s) for s in sentences]
    offs = [0]
    for length in lens:
        offs.append(offs[-1] + length)
    total = offs[m]

    ranges: list[tuple[int, int]] = []
    covered = [False] * m
    offset = 0
    while offset < max(total, 1):
        first = None
        last = None
        for j in range(m):
            if offs[j] >= offset + window:
                break
            if offs[j] >= offset and offs[j + 1] <= offset + window:
                if first is None:
                    first = j
                last = j
        if first is not None and last is not None:
            rng = (first + 1, last + 1)
            if not ranges or ranges[-1] != rng:
                ranges.append(rng)
            for j in range(first, last + 1):
                covered[j] = True
            if last == m - 1:
                break
        offset += step
        if offset >= total:
            break

    out = [Block(a, b) for a, b in ranges]
    for j in range(m):
        if not covered[j]:
            out.append(Block(j + 1, j + 1, overlong=lens[j] > window))
    out.sort(key=lambda b: (b.start, b.end))
    return out
