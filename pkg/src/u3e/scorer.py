"""Trainable linear scorer over hashed character n-gram features.

The built-in model is a two-class linear classifier trained with seeded
per-sample SGD on a softmax cross-entropy loss. Features are hashed counts
over three fields:

* ``option``  — character n-grams of the statement text;
* ``document``— character n-grams of each sentence, summed over sentences
  (n-grams never cross sentence boundaries);
* ``overlap`` — for each distinct option n-gram, the number of sentences
  containing it as a substring.

Bucket index = ``crc32(field_tag + 0x1f + utf8(gram)) & (2**hash_bits - 1)``
with field tags ``b"o"``, ``b"d"``, ``b"x"``. Because every contribution is
attached to a single sentence (or to the option), erasing one sentence
removes exactly that sentence's feature mass, and predictions are linear in
it.

Raw scores are pre-softmax and cross the scorer boundary unnormalized; the
same contract applies to external scorer processes speaking the line-delimited
JSON protocol implemented by :class:`ExternalScorer`.
"""

from __future__ import annotations

import json
import math
import random
import shlex
import subprocess
import threading
import zlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Protocol, Sequence

import numpy as np

from .corpus import Corpus

NUM_CLASSES = 2

_FIELD_OPTION = b"o"
_FIELD_DOC = b"d"
_FIELD_OVERLAP = b"x"


class ScorerError(RuntimeError):
    """Scorer could not produce a prediction."""


class ProtocolError(ScorerError):
    """External scorer broke the wire protocol; carries the raw exchange."""

    def __init__(self, message: str, exchange: tuple[str, ...] = ()):
        super().__init__(message)
        self.exchange = exchange


@dataclass(frozen=True)
class FeatureConfig:
    """Hashing configuration shared by featurization and checkpoints."""

    hash_bits: int = 18
    ngram_orders: tuple[int, ...] = (1, 2)

    def __post_init__(self) -> None:
        if not 1 <= self.hash_bits <= 30:
            raise ValueError("hash_bits must be in 1..30")
        if not self.ngram_orders or any(n < 1 for n in self.ngram_orders):
            raise ValueError("ngram_orders must be a non-empty tuple of positive ints")
        object.__setattr__(self, "ngram_orders", tuple(sorted(set(self.ngram_orders))))

    @property
    def dim(self) -> int:
        return 1 << self.hash_bits


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.1
    seed: int = 42
    hash_bits: int = 18
    ngram_orders: tuple[int, ...] = (1, 2)
    epsilon: float = 1e-12

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        object.__setattr__(self, "ngram_orders", tuple(self.ngram_orders))

    @property
    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(hash_bits=self.hash_bits, ngram_orders=self.ngram_orders)


@dataclass
class Checkpoint:
    """Classifier parameters saved after one training epoch."""

    epoch: int
    weights: np.ndarray  # shape (2, dim)
    bias: np.ndarray  # shape (2,)
    seed: int
    feature_config: FeatureConfig

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        expected = (NUM_CLASSES, self.feature_config.dim)
        if self.weights.shape != expected:
            raise ValueError(f"weights shape {self.weights.shape} != {expected}")
        if self.bias.shape != (NUM_CLASSES,):
            raise ValueError(f"bias shape {self.bias.shape} != ({NUM_CLASSES},)")


def _bucket(field_tag: bytes, gram: str, mask: int) -> int:
    return zlib.crc32(field_tag + b"\x1f" + gram.encode("utf-8")) & mask


def _ngrams(text: str, orders: tuple[int, ...]) -> Iterator[str]:
    for n in orders:
        for i in range(len(text) - n + 1):
            yield text[i : i + n]


def featurize(option: str, sentences: Sequence[str], config: FeatureConfig = FeatureConfig()) -> dict[int, float]:
    """Sparse hashed feature counts for a (statement, document) pair.

    Deterministic for fixed inputs and config; removing one sentence removes
    exactly that sentence's document n-grams and overlap contributions.
    """
    mask = config.dim - 1
    feats: dict[int, float] = {}
    for gram in _ngrams(option, config.ngram_orders):
        key = _bucket(_FIELD_OPTION, gram, mask)
        feats[key] = feats.get(key, 0.0) + 1.0
    for sent in sentences:
        for gram in _ngrams(sent, config.ngram_orders):
            key = _bucket(_FIELD_DOC, gram, mask)
            feats[key] = feats.get(key, 0.0) + 1.0
    for gram in dict.fromkeys(_ngrams(option, config.ngram_orders)):
        count = sum(1 for sent in sentences if gram in sent)
        if count:
            key = _bucket(_FIELD_OVERLAP, gram, mask)
            feats[key] = feats.get(key, 0.0) + float(count)
    return feats


@lru_cache(maxsize=200_000)
def _feature_arrays(option: str, sentences: tuple[str, ...], config: FeatureConfig) -> tuple[np.ndarray, np.ndarray]:
    feats = featurize(option, sentences, config)
    idx = np.fromiter(feats.keys(), dtype=np.intp, count=len(feats))
    val = np.fromiter(feats.values(), dtype=np.float64, count=len(feats))
    return idx, val


def _raw_scores(weights: np.ndarray, bias: np.ndarray, idx: np.ndarray, val: np.ndarray) -> np.ndarray:
    if idx.size == 0:
        return bias.copy()
    return weights[:, idx] @ val + bias


def predict(ckpt: Checkpoint, option: str, sentences: Sequence[str]) -> np.ndarray:
    """Raw (pre-softmax) class scores ``W @ f + b`` for the pair."""
    idx, val = _feature_arrays(option, tuple(sentences), ckpt.feature_config)
    if idx.size and int(idx.max()) >= ckpt.weights.shape[1]:
        raise ScorerError(
            f"feature index {int(idx.max())} exceeds checkpoint dimension {ckpt.weights.shape[1]}"
        )
    return _raw_scores(ckpt.weights, ckpt.bias, idx, val)


def softmax_probs(scores: Sequence[float] | np.ndarray) -> np.ndarray:
    """Shift-invariant softmax over raw class scores."""
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    z = s - s.max()
    e = np.exp(z)
    return e / e.sum()


def cross_entropy(probs: Sequence[float] | np.ndarray, label: int, epsilon: float = 1e-12) -> float:
    """Negative log-probability of the true class, clamped away from zero."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    p = float(np.asarray(probs, dtype=np.float64)[label])
    return -math.log(min(max(p, epsilon), 1.0))


def combine_losses(l_ans: float, l_evi: float, alpha: float) -> float:
    """Joint answer/evidence loss ``l_ans + alpha * l_evi`` with alpha in [0, 1]."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return l_ans + alpha * l_evi


ALPHA_GRID: tuple[float, ...] = tuple(round(i / 10, 1) for i in range(11))


def alpha_sweep(l_ans: float, l_evi: float, alphas: Sequence[float] = ALPHA_GRID) -> list[tuple[float, float]]:
    """Combined loss at each alpha of the sweep grid (0.0 to 1.0 by 0.1 by default)."""
    return [(a, combine_losses(l_ans, l_evi, a)) for a in alphas]


def iter_train_epochs(corpus: Corpus, config: TrainConfig = TrainConfig()) -> Iterator[Checkpoint]:
    """Seeded per-sample SGD on the train split, yielding a checkpoint per epoch.

    Weights start at zero; samples are reshuffled (Fisher-Yates) before each
    epoch from a single RNG seeded with ``config.seed``, so runs are bitwise
    reproducible.
    """
    train = corpus.subset("train")
    if not train:
        raise ScorerError("empty training split")
    fc = config.feature_config
    features = [_feature_arrays(s.option, tuple(s.sentences), fc) for s in train]
    labels = [s.label for s in train]
    weights = np.zeros((NUM_CLASSES, fc.dim), dtype=np.float64)
    bias = np.zeros(NUM_CLASSES, dtype=np.float64)
    rng = random.Random(config.seed)
    order = list(range(len(train)))
    lr = config.learning_rate
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        for i in order:
            idx, val = features[i]
            scores = _raw_scores(weights, bias, idx, val)
            grad = softmax_probs(scores)
            grad[labels[i]] -= 1.0
            if idx.size:
                weights[:, idx] -= lr * np.outer(grad, val)
            bias -= lr * grad
        yield Checkpoint(epoch=epoch, weights=weights.copy(), bias=bias.copy(), seed=config.seed, feature_config=fc)


def train_epochs(corpus: Corpus, config: TrainConfig = TrainConfig()) -> list[Checkpoint]:
    """All per-epoch checkpoints of one training run (epochs 1..x)."""
    return list(iter_train_epochs(corpus, config))


def mean_loss(ckpt: Checkpoint, corpus: Corpus, epsilon: float = 1e-12) -> float:
    """Average cross-entropy of a checkpoint over the train split."""
    train = corpus.subset("train")
    if not train:
        raise ScorerError("empty training split")
    total = 0.0
    for s in train:
        probs = softmax_probs(predict(ckpt, s.option, s.sentences))
        total += cross_entropy(probs, s.label, epsilon)
    return total / len(train)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    obj = {
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "hash_bits": ckpt.feature_config.hash_bits,
        "ngram_orders": list(ckpt.feature_config.ngram_orders),
        "weights": [row.tolist() for row in ckpt.weights],
        "bias": ckpt.bias.tolist(),
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path: str | Path) -> Checkpoint:
    with Path(path).open("r", encoding="utf-8") as fh:
        obj = json.load(fh)
    fc = FeatureConfig(hash_bits=obj["hash_bits"], ngram_orders=tuple(obj["ngram_orders"]))
    return Checkpoint(
        epoch=int(obj["epoch"]),
        weights=np.asarray(obj["weights"], dtype=np.float64),
        bias=np.asarray(obj["bias"], dtype=np.float64),
        seed=int(obj["seed"]),
        feature_config=fc,
    )


class Scorer(Protocol):
    """Anything that maps (option, sentences) to raw two-class scores."""

    epoch: int

    def predict(self, option: str, sentences: Sequence[str]) -> np.ndarray: ...


class BuiltinScorer:
    """In-process scorer over a checkpoint; pure and safe for concurrent use."""

    def __init__(self, ckpt: Checkpoint):
        self.ckpt = ckpt

    @property
    def epoch(self) -> int:
        return self.ckpt.epoch

    def predict(self, option: str, sentences: Sequence[str]) -> np.ndarray:
        return predict(self.ckpt, option, sentences)

    def close(self) -> None:
        pass


class ExternalScorer:
    """Client for a scorer subprocess speaking line-delimited JSON.

    One request line yields exactly one response line, in order. Requests:

    * ``{"type":"predict","id":i,"option":o,"sentences":[..]}`` ->
      ``{"type":"scores","id":i,"scores":[r0,r1]}``
    * ``{"type":"list_checkpoints","id":i}`` ->
      ``{"type":"checkpoints","id":i,"epochs":[..]}``
    * ``{"type":"select_checkpoint","id":i,"epoch":l}`` -> ``{"type":"ok","id":i}``

    Any failure is reported as ``{"type":"error","id":i,"message":..}``.
    Requests are serialized; the handle is safe to share across threads.
    """

    def __init__(self, command: Sequence[str] | str):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not argv:
            raise ScorerError("empty scorer command")
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise ScorerError(f"failed to start scorer process {argv!r}: {exc}") from exc
        self._argv = argv
        self._lock = threading.Lock()
        self._counter = 0
        self.epoch = 0

    def _request(self, payload: dict) -> dict:
        with self._lock:
            self._counter += 1
            rid = str(self._counter)
            request = dict(payload, id=rid)
            line = json.dumps(request, ensure_ascii=False)
            try:
                assert self._proc.stdin is not None and self._proc.stdout is not None
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
                reply = self._proc.stdout.readline()
            except (OSError, ValueError) as exc:
                raise ScorerError(f"scorer process {self._argv!r} I/O failure: {exc}") from exc
        if not reply:
            raise ProtocolError("scorer process closed its output", exchange=(line,))
        try:
            resp = json.loads(reply)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"unparseable scorer response: {exc}", exchange=(line, reply)) from exc
        if resp.get("id") != rid:
            raise ProtocolError(f"response id {resp.get('id')!r} != request id {rid!r}", exchange=(line, reply))
        if resp.get("type") == "error":
            raise ScorerError(f"scorer error: {resp.get('message')}")
        return resp

    def predict(self, option: str, sentences: Sequence[str]) -> np.ndarray:
        resp = self._request({"type": "predict", "option": option, "sentences": list(sentences)})
        scores = resp.get("scores")
        if resp.get("type") != "scores" or not isinstance(scores, list) or len(scores) != NUM_CLASSES:
            raise ProtocolError(f"bad predict response: {resp!r}", exchange=(json.dumps(resp),))
        out = np.asarray([float(x) for x in scores], dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise ProtocolError(f"non-finite scores in response: {resp!r}")
        return out

    def list_checkpoints(self) -> list[int]:
        resp = self._request({"type": "list_checkpoints"})
        if resp.get("type") != "checkpoints" or not isinstance(resp.get("epochs"), list):
            raise ProtocolError(f"bad list_checkpoints response: {resp!r}")
        return [int(e) for e in resp["epochs"]]

    def select_checkpoint(self, epoch: int) -> None:
        resp = self._request({"type": "select_checkpoint", "epoch": int(epoch)})
        if resp.get("type") != "ok":
            raise ProtocolError(f"bad select_checkpoint response: {resp!r}")
        self.epoch = int(epoch)

    def close(self) -> None:
        proc = self._proc
        if proc.stdin is not None:
            try:
                proc.stdin.close()
            except OSError:
                pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.terminate()
            proc.wait(timeout=5)

    def __enter__(self) -> "ExternalScorer":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def scorer_handle(kind: str, target: str | Path | Sequence[str]) -> BuiltinScorer | ExternalScorer:
    """Open a scorer: ``builtin`` loads a checkpoint file, ``external`` spawns
    the given command line (string or argv list)."""
    if kind == "builtin":
        if not isinstance(target, (str, Path)):
            raise ValueError("builtin scorer target must be a checkpoint path")
        return BuiltinScorer(load_checkpoint(target))
    if kind == "external":
        return ExternalScorer(str(target) if isinstance(target, Path) else target)
    raise ValueError(f"unknown scorer kind {kind!r}")
