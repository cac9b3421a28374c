"""Three-stage evidence-extraction pipeline.

Stage 1 (train & acquire): train per-epoch checkpoints on the train split and
compute leave-one-out change vectors for every train sample under every
checkpoint, caching them per epoch. Stage 2 (select & reacquire): pick the
working checkpoint by the configured method and fetch its change vectors
(cache lookup, or recomputation with ``no_cache``). Stage 3 (apply &
retrain): extract top-k evidence per sample, rebuild the train split from
evidence sentences only, retrain under the identical training configuration,
and evaluate on the test split over block windows of the original documents.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from tempfile import TemporaryDirectory
from typing import Mapping, Sequence

import numpy as np

from .corpus import (
    DEFAULT_STEP,
    DEFAULT_WINDOW,
    Corpus,
    EvidenceSet,
    Sample,
    blocks,
)
from .erasure import ChangeVector, changes_matrix, write_changes
from .scorer import (
    BuiltinScorer,
    Checkpoint,
    ExternalScorer,
    Scorer,
    TrainConfig,
    iter_train_epochs,
    save_checkpoint,
    train_epochs,
)
from .selection import DEFAULT_LAMBDA, SelectionReport, build_report


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


@dataclass
class RunConfig:
    """Configuration for one full pipeline run."""

    train: TrainConfig = field(default_factory=TrainConfig)
    k: int = 2
    lam: float = DEFAULT_LAMBDA
    method: str = "bmc"
    window: int = DEFAULT_WINDOW
    step: int = DEFAULT_STEP
    scorer_kind: str = "builtin"
    scorer_command: tuple[str, ...] | None = None
    no_cache: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.method not in ("bmc", "mtest"):
            raise ValueError(f"method must be 'bmc' or 'mtest', got {self.method!r}")
        if self.scorer_kind not in ("builtin", "external"):
            raise ValueError(f"scorer_kind must be 'builtin' or 'external', got {self.scorer_kind!r}")
        if self.scorer_kind == "external" and not self.scorer_command:
            raise ValueError("external scorer needs a command")


@dataclass
class PipelineResult:
    selection: SelectionReport
    evidences: list[EvidenceSet]
    retrain_accuracy: float
    full_context_accuracy: float
    per_stage_timings: dict[str, float]

    def to_json(self) -> dict:
        # Timings are intentionally left out: result files must be
        # byte-identical across runs of the same seed and config.
        return {
            "selection": self.selection.to_json(),
            "full_context_accuracy": self.full_context_accuracy,
            "retrain_accuracy": self.retrain_accuracy,
            "evidences": [{"id": e.sample_id, "evidence": list(e.indices), "k": e.k} for e in self.evidences],
        }


def block_scores(scorer: Scorer, sample: Sample, window: int = DEFAULT_WINDOW, step: int = DEFAULT_STEP) -> np.ndarray:
    """Elementwise max of raw scores over the document's block windows."""
    agg: np.ndarray | None = None
    for b in blocks(sample.sentences, window, step):
        scores = scorer.predict(sample.option, sample.sentences[b.start - 1 : b.end])
        agg = scores if agg is None else np.maximum(agg, scores)
    assert agg is not None  # documents always have >= 1 sentence
    return agg


def block_accuracy(scorer: Scorer, samples: Sequence[Sample], window: int = DEFAULT_WINDOW, step: int = DEFAULT_STEP) -> float:
    """Label accuracy with block-window prediction on original documents."""
    if not samples:
        raise ValueError("cannot evaluate over zero samples")
    hits = 0
    for s in samples:
        if int(np.argmax(block_scores(scorer, s, window, step))) == s.label:
            hits += 1
    return hits / len(samples)


def direct_accuracy(scorer: Scorer, samples: Sequence[Sample]) -> float:
    """Label accuracy with single-shot prediction on whole documents."""
    if not samples:
        raise ValueError("cannot evaluate over zero samples")
    hits = 0
    for s in samples:
        if int(np.argmax(scorer.predict(s.option, s.sentences))) == s.label:
            hits += 1
    return hits / len(samples)


def extract_evidence(change: ChangeVector, k: int) -> EvidenceSet:
    """Indices of the min(k, m) largest changes, ascending; value ties go to
    the smaller index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    m = len(change.values)
    top = sorted(range(m), key=lambda j: (-change.values[j], j))[: min(k, m)]
    return EvidenceSet(sample_id=change.sample_id, indices=tuple(sorted(j + 1 for j in top)), k=k)


def build_retrain_corpus(corpus: Corpus, evidences: Sequence[EvidenceSet]) -> Corpus:
    """Replace each document with its evidence sentences, original order kept.

    Labels, options, ids, and splits are preserved; gold evidence indices are
    remapped into the shrunken documents.
    """
    by_id = {e.sample_id: e for e in evidences}
    rebuilt: list[Sample] = []
    for s in corpus.samples:
        ev = by_id.get(s.id)
        if ev is None:
            raise ValueError(f"missing evidence for sample {s.id!r}")
        for idx in ev.indices:
            if not 1 <= idx <= s.m:
                raise ValueError(f"evidence index {idx} out of range for sample {s.id!r} (m={s.m})")
        remap = {old: new + 1 for new, old in enumerate(ev.indices)}
        new_gold = None
        dropped = False
        if s.gold_evidence is not None:
            kept = [remap[g] for g in s.gold_evidence if g in remap]
            dropped = len(kept) != len(s.gold_evidence)
            new_gold = tuple(kept) if kept else None
        rebuilt.append(
            Sample(
                id=s.id,
                option=s.option,
                sentences=[s.sentences[i - 1] for i in ev.indices],
                label=s.label,
                gold_evidence=new_gold,
                split=s.split,
                gold_dropped=s.gold_dropped or dropped,
            )
        )
    return Corpus(rebuilt, name=f"{corpus.name}-evidence")


@dataclass
class _Acquired:
    checkpoints: list[Checkpoint]
    test_accs: dict[int, float]
    train_accs: dict[int, float]
    change_cache: dict[int, list[ChangeVector]]
    train_corpus: Corpus
    test_samples: list[Sample]


def _resolve_command(command: Sequence[str], ckpt_dir: Path | None) -> list[str]:
    resolved = []
    for arg in command:
        if "{ckpts}" in arg:
            if ckpt_dir is None:
                raise PipelineError("scorer command uses {ckpts} but no checkpoint directory exists")
            arg = arg.replace("{ckpts}", str(ckpt_dir))
        resolved.append(arg)
    return resolved


def _epoch_scorers(config: RunConfig, checkpoints: Sequence[Checkpoint], ckpt_dir: Path | None):
    """Yield (epoch, scorer) pairs through the configured scorer kind."""
    if config.scorer_kind == "builtin":
        for ckpt in checkpoints:
            yield ckpt.epoch, BuiltinScorer(ckpt)
        return
    handle = ExternalScorer(_resolve_command(config.scorer_command or (), ckpt_dir))
    try:
        available = set(handle.list_checkpoints())
        wanted = {c.epoch for c in checkpoints}
        if not wanted <= available:
            raise PipelineError(f"external scorer offers epochs {sorted(available)}, need {sorted(wanted)}")
        for ckpt in checkpoints:
            handle.select_checkpoint(ckpt.epoch)
            yield ckpt.epoch, handle
    finally:
        handle.close()


def _train_and_acquire(corpus: Corpus, config: RunConfig, workdir: Path | None) -> _Acquired:
    train_samples = corpus.subset("train")
    test_samples = corpus.subset("test")
    if not train_samples or not test_samples:
        raise PipelineError("corpus needs non-empty train and test splits")
    train_corpus = corpus.restrict("train")

    ckpt_dir = None
    changes_dir = None
    if workdir is not None:
        workdir = Path(workdir)
        ckpt_dir = workdir / "ckpts"
        changes_dir = workdir / "changes"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        changes_dir.mkdir(parents=True, exist_ok=True)

    checkpoints: list[Checkpoint] = []
    test_accs: dict[int, float] = {}
    train_accs: dict[int, float] = {}
    for ckpt in iter_train_epochs(corpus, config.train):
        checkpoints.append(ckpt)
        if ckpt_dir is not None:
            save_checkpoint(ckpt, ckpt_dir / f"epoch-{ckpt.epoch}.json")
        scorer = BuiltinScorer(ckpt)
        test_accs[ckpt.epoch] = block_accuracy(scorer, test_samples, config.window, config.step)
        train_accs[ckpt.epoch] = direct_accuracy(scorer, train_samples)

    change_cache: dict[int, list[ChangeVector]] = {}
    for epoch, scorer in _epoch_scorers(config, checkpoints, ckpt_dir):
        change_cache[epoch] = changes_matrix(scorer, train_corpus)
        if changes_dir is not None:
            write_changes(change_cache[epoch], changes_dir / f"epoch-{epoch}.jsonl")

    return _Acquired(checkpoints, test_accs, train_accs, change_cache, train_corpus, test_samples)


def _retrain_and_eval(
    acq: _Acquired,
    config: RunConfig,
    epoch_changes: Sequence[ChangeVector],
) -> tuple[list[EvidenceSet], float]:
    evidences = [extract_evidence(cv, config.k) for cv in epoch_changes]
    retrain_corpus = build_retrain_corpus(acq.train_corpus, evidences)
    final = train_epochs(retrain_corpus, config.train)[-1]
    acc = block_accuracy(BuiltinScorer(final), acq.test_samples, config.window, config.step)
    return evidences, acc


def run_u3e(corpus: Corpus, config: RunConfig, workdir: str | Path | None = None) -> PipelineResult:
    """Run the full three-stage pipeline and return its result.

    ``workdir``, when given, receives ``ckpts/epoch-N.json`` and
    ``changes/epoch-N.jsonl`` artifacts; an external scorer command may refer
    to the checkpoint directory as ``{ckpts}``.
    """
    timings: dict[str, float] = {}
    tmp = None
    if workdir is None and config.scorer_kind == "external":
        tmp = TemporaryDirectory(prefix="u3e-run-")
        workdir = tmp.name
    try:
        t0 = time.monotonic()
        try:
            acq = _train_and_acquire(corpus, config, Path(workdir) if workdir is not None else None)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(f"stage train-and-acquire failed: {exc}") from exc
        timings["train_acquire"] = time.monotonic() - t0

        t0 = time.monotonic()
        try:
            chosen, report = build_report(
                acq.checkpoints,
                acq.test_accs,
                acq.change_cache,
                config.k,
                config.lam,
                config.method,
                acq.train_accs,
            )
            if config.no_cache:
                if config.scorer_kind == "builtin":
                    chosen_changes = changes_matrix(BuiltinScorer(chosen), acq.train_corpus)
                else:
                    ckpt_dir = None if workdir is None else Path(workdir) / "ckpts"
                    with ExternalScorer(_resolve_command(config.scorer_command or (), ckpt_dir)) as handle:
                        handle.select_checkpoint(chosen.epoch)
                        chosen_changes = changes_matrix(handle, acq.train_corpus)
            else:
                chosen_changes = acq.change_cache[chosen.epoch]
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(f"stage select-and-reacquire failed: {exc}") from exc
        timings["select_reacquire"] = time.monotonic() - t0

        t0 = time.monotonic()
        try:
            evidences, retrain_acc = _retrain_and_eval(acq, config, chosen_changes)
        except Exception as exc:
            raise PipelineError(f"stage apply-and-retrain failed: {exc}") from exc
        timings["apply_retrain"] = time.monotonic() - t0

        full_context = acq.test_accs[acq.checkpoints[-1].epoch]
        return PipelineResult(
            selection=report,
            evidences=evidences,
            retrain_accuracy=retrain_acc,
            full_context_accuracy=full_context,
            per_stage_timings=timings,
        )
    finally:
        if tmp is not None:
            tmp.cleanup()


def sweep_max(
    corpus: Corpus, config: RunConfig, workdir: str | Path | None = None
) -> tuple[int, list[PipelineResult]]:
    """Retrain from every checkpoint's evidence and report the best epoch.

    Returns the epoch with the highest retrain test accuracy (ties toward the
    earliest) and the per-epoch results.
    """
    tmp = None
    if workdir is None and config.scorer_kind == "external":
        tmp = TemporaryDirectory(prefix="u3e-sweep-")
        workdir = tmp.name
    try:
        t0 = time.monotonic()
        try:
            acq = _train_and_acquire(corpus, config, Path(workdir) if workdir is not None else None)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(f"stage train-and-acquire failed: {exc}") from exc
        shared = time.monotonic() - t0

        full_context = acq.test_accs[acq.checkpoints[-1].epoch]
        results: list[PipelineResult] = []
        for ckpt in acq.checkpoints:
            t0 = time.monotonic()
            try:
                evidences, retrain_acc = _retrain_and_eval(acq, config, acq.change_cache[ckpt.epoch])
            except Exception as exc:
                raise PipelineError(f"stage apply-and-retrain failed at epoch {ckpt.epoch}: {exc}") from exc
            _, report = build_report(
                acq.checkpoints,
                acq.test_accs,
                acq.change_cache,
                config.k,
                config.lam,
                "max",
                acq.train_accs,
            )
            report.chosen_epoch = ckpt.epoch
            results.append(
                PipelineResult(
                    selection=report,
                    evidences=evidences,
                    retrain_accuracy=retrain_acc,
                    full_context_accuracy=full_context,
                    per_stage_timings={"train_acquire": shared, "apply_retrain": time.monotonic() - t0},
                )
            )
        best = results[0].selection.chosen_epoch
        best_acc = results[0].retrain_accuracy
        for res in results[1:]:
            if res.retrain_accuracy > best_acc:
                best = res.selection.chosen_epoch
                best_acc = res.retrain_accuracy
        return best, results
    finally:
        if tmp is not None:
            tmp.cleanup()
