"""Static word-embedding tables and average-pooled sentence vectors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# CJK Unified Ideographs (basic plane, extension A, compatibility block).
_CJK_RANGES = ((0x4E00, 0x9FFF), (0x3400, 0x4DBF), (0xF900, 0xFAFF))


def has_cjk(text: str) -> bool:
    """True when the text contains at least one CJK ideograph."""
    return any(lo <= ord(ch) <= hi for ch in text for lo, hi in _CJK_RANGES)


@dataclass
class EmbeddingTable:
    """token -> vector mapping with a single fixed dimension."""

    vectors: dict[str, np.ndarray]
    dim: int
    _max_token_len: int = field(init=False, repr=False, default=0)

    def __post_init__(self) -> None:
        for token, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ValueError(f"vector for {token!r} has dimension {vec.shape}, expected ({self.dim},)")
        self._max_token_len = max((len(t) for t in self.vectors), default=1)

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    @property
    def max_token_len(self) -> int:
        return self._max_token_len


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Load a word2vec-text-format file: header ``V d``, then V lines ``token v1 .. vd``.

    Duplicate tokens keep the last occurrence (with a warning). A line whose
    value count does not match the header dimension is an error naming the line.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: line 1: expected header 'V d'")
        try:
            vocab_size, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise ValueError(f"{path}: line 1: non-integer header: {exc}") from exc
        vectors: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split()
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ValueError(f"{path}: line {lineno}: expected {dim} values, got {len(values)}")
            if token in vectors:
                logger.warning("%s: line %d: duplicate token %r, keeping last", path, lineno, token)
            vectors[token] = np.asarray([float(v) for v in values], dtype=np.float64)
    if len(vectors) != vocab_size:
        logger.warning("%s: header declared %d tokens, found %d", path, vocab_size, len(vectors))
    return EmbeddingTable(vectors=vectors, dim=dim)


def tokenize(text: str, table: EmbeddingTable | None = None) -> list[str]:
    """Split text into lookup tokens.

    Space-delimited scripts split on whitespace. Text containing CJK ideographs
    is scanned greedily: the longest substring present in the table wins,
    falling back to single characters.
    """
    if not has_cjk(text):
        return text.split()
    max_len = table.max_token_len if table is not None else 1
    tokens: list[str] = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        match = None
        if table is not None:
            for length in range(min(max_len, n - i), 1, -1):
                candidate = text[i : i + length]
                if candidate in table:
                    match = candidate
                    break
        if match is None:
            match = text[i]
        tokens.append(match)
        i += len(match)
    return tokens


def pooled_vector(tokens: list[str], table: EmbeddingTable) -> np.ndarray:
    """Mean of the in-vocabulary token vectors; zero vector when none match."""
    found = [table.vectors[t] for t in tokens if t in table]
    if not found:
        return np.zeros(table.dim, dtype=np.float64)
    return np.mean(found, axis=0)


def sentence_vector(sentence: str, table: EmbeddingTable) -> np.ndarray:
    """Average-pooled vector of a sentence's in-vocabulary tokens."""
    return pooled_vector(tokenize(sentence, table), table)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; defined as 0.0 when either operand is the zero vector."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))
