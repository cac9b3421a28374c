"""Scoring models served over the wire protocol.

``MirrorModel`` reimplements the engine's built-in scorer from its checkpoint
file format alone:

* features are hashed character n-gram counts over three fields: the
  statement ("option"), each document sentence, and for every distinct option
  n-gram the number of sentences containing it;
* bucket index = ``crc32(tag + 0x1f + utf8(gram)) & (2**hash_bits - 1)`` with
  tags ``b"o"`` (option), ``b"d"`` (document), ``b"x"`` (overlap);
* raw scores = ``weights @ features + bias``, no normalization.

Checkpoint files are single JSON objects with keys ``epoch``, ``seed``,
``hash_bits``, ``ngram_orders``, ``weights`` (2 rows), and ``bias``.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

_EPOCH_FILE = re.compile(r"epoch-(\d+)\.json$")


@dataclass
class LinearCheckpoint:
    epoch: int
    weights: np.ndarray
    bias: np.ndarray
    hash_bits: int
    ngram_orders: tuple[int, ...]


def load_checkpoint_file(path: str | Path) -> LinearCheckpoint:
    with Path(path).open("r", encoding="utf-8") as fh:
        obj = json.load(fh)
    weights = np.asarray(obj["weights"], dtype=np.float64)
    bias = np.asarray(obj["bias"], dtype=np.float64)
    hash_bits = int(obj["hash_bits"])
    if weights.shape != (2, 1 << hash_bits) or bias.shape != (2,):
        raise ValueError(f"{path}: inconsistent checkpoint shapes {weights.shape} / {bias.shape}")
    return LinearCheckpoint(
        epoch=int(obj["epoch"]),
        weights=weights,
        bias=bias,
        hash_bits=hash_bits,
        ngram_orders=tuple(sorted(set(int(n) for n in obj["ngram_orders"]))),
    )


def _bucket(tag: bytes, gram: str, mask: int) -> int:
    return zlib.crc32(tag + b"\x1f" + gram.encode("utf-8")) & mask


def _ngrams(text: str, orders: tuple[int, ...]):
    for n in orders:
        for i in range(len(text) - n + 1):
            yield text[i : i + n]


@lru_cache(maxsize=100_000)
def _feature_arrays(
    option: str, sentences: tuple[str, ...], hash_bits: int, orders: tuple[int, ...]
) -> tuple[np.ndarray, np.ndarray]:
    mask = (1 << hash_bits) - 1
    feats: dict[int, float] = {}
    for gram in _ngrams(option, orders):
        key = _bucket(b"o", gram, mask)
        feats[key] = feats.get(key, 0.0) + 1.0
    for sent in sentences:
        for gram in _ngrams(sent, orders):
            key = _bucket(b"d", gram, mask)
            feats[key] = feats.get(key, 0.0) + 1.0
    for gram in dict.fromkeys(_ngrams(option, orders)):
        count = sum(1 for sent in sentences if gram in sent)
        if count:
            key = _bucket(b"x", gram, mask)
            feats[key] = feats.get(key, 0.0) + float(count)
    idx = np.fromiter(feats.keys(), dtype=np.intp, count=len(feats))
    val = np.fromiter(feats.values(), dtype=np.float64, count=len(feats))
    return idx, val


class FixedModel:
    """Answers every predict with the same two scores; no checkpoints."""

    def __init__(self, r0: float, r1: float):
        self.scores = [float(r0), float(r1)]

    def predict(self, option: str, sentences: list[str]) -> list[float]:
        return list(self.scores)

    def epochs(self) -> list[int]:
        return []

    def select(self, epoch: int) -> None:
        pass


class MirrorModel:
    """Linear scorer over one checkpoint file or a directory of them.

    A directory is expected to hold ``epoch-N.json`` files; the smallest
    epoch starts selected.
    """

    def __init__(self, target: str | Path):
        target = Path(target)
        self._checkpoints: dict[int, LinearCheckpoint | Path] = {}
        if target.is_dir():
            for path in sorted(target.glob("epoch-*.json")):
                match = _EPOCH_FILE.search(path.name)
                if match:
                    self._checkpoints[int(match.group(1))] = path
            if not self._checkpoints:
                raise FileNotFoundError(f"no epoch-*.json checkpoints under {target}")
        else:
            ckpt = load_checkpoint_file(target)
            self._checkpoints[ckpt.epoch] = ckpt
        self._current = self._load(min(self._checkpoints))

    def _load(self, epoch: int) -> LinearCheckpoint:
        entry = self._checkpoints[epoch]
        if isinstance(entry, Path):
            entry = load_checkpoint_file(entry)
            self._checkpoints[epoch] = entry
        return entry

    def predict(self, option: str, sentences: list[str]) -> list[float]:
        ckpt = self._current
        idx, val = _feature_arrays(option, tuple(sentences), ckpt.hash_bits, ckpt.ngram_orders)
        if idx.size == 0:
            return ckpt.bias.tolist()
        return (ckpt.weights[:, idx] @ val + ckpt.bias).tolist()

    def epochs(self) -> list[int]:
        return sorted(self._checkpoints)

    def select(self, epoch: int) -> None:
        if epoch not in self._checkpoints:
            raise KeyError(f"no checkpoint for epoch {epoch}")
        self._current = self._load(epoch)
