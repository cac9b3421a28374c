"""Checkpoint selection over per-epoch accuracies and change vectors.

Two strategies:

* ``mtest`` — pick the epoch with maximum test-split accuracy.
* ``bmc``   — pick the epoch maximizing ``-lam * acc_test + sc``, where ``sc``
  (the salient-change ratio) is the corpus mean of the fraction of change
  mass concentrated in each sample's top-k sentences. High ``sc`` means the
  checkpoint's sensitivity focuses on few sentences; the accuracy term
  discounts checkpoints that merely chase the end task.

Ties always resolve toward the earliest epoch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .erasure import ChangeVector
from .render import format_table
from .scorer import Checkpoint

DEFAULT_LAMBDA = 0.1


@dataclass
class EpochRow:
    epoch: int
    acc_test: float
    acc_train: float | None = None
    sc: float | None = None
    bmc_score: float | None = None


@dataclass
class SelectionReport:
    rows: list[EpochRow]
    chosen_epoch: int
    method: str
    lam: float | None = None
    k: int | None = None

    def __post_init__(self) -> None:
        if self.chosen_epoch not in {r.epoch for r in self.rows}:
            raise ValueError(f"chosen epoch {self.chosen_epoch} not among report rows")

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "lambda": self.lam,
            "k": self.k,
            "chosen_epoch": self.chosen_epoch,
            "rows": [
                {
                    "epoch": r.epoch,
                    "acc_test": r.acc_test,
                    "acc_train": r.acc_train,
                    "sc": r.sc,
                    "bmc_score": r.bmc_score,
                }
                for r in self.rows
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SelectionReport":
        rows = [
            EpochRow(
                epoch=int(r["epoch"]),
                acc_test=float(r["acc_test"]),
                acc_train=None if r.get("acc_train") is None else float(r["acc_train"]),
                sc=None if r.get("sc") is None else float(r["sc"]),
                bmc_score=None if r.get("bmc_score") is None else float(r["bmc_score"]),
            )
            for r in obj["rows"]
        ]
        return cls(
            rows=rows,
            chosen_epoch=int(obj["chosen_epoch"]),
            method=str(obj["method"]),
            lam=None if obj.get("lambda") is None else float(obj["lambda"]),
            k=None if obj.get("k") is None else int(obj["k"]),
        )

    def render(self) -> str:
        def fmt(x: float | None) -> str:
            return "-" if x is None else f"{x:.4f}"

        rows = [
            [str(r.epoch), fmt(r.acc_train), fmt(r.acc_test), fmt(r.sc), fmt(r.bmc_score),
             "*" if r.epoch == self.chosen_epoch else ""]
            for r in self.rows
        ]
        table = format_table(["epoch", "acc_train", "acc_test", "sc", "bmc_score", "chosen"], rows)
        lam = "-" if self.lam is None else f"{self.lam}"
        k = "-" if self.k is None else f"{self.k}"
        return f"method={self.method} lambda={lam} k={k} chosen_epoch={self.chosen_epoch}\n{table}"


def salient_change(epoch_changes: Sequence[ChangeVector], k: int) -> float:
    """Mean over samples of (sum of the k largest changes) / (sum of all changes).

    A sample whose changes are all zero contributes ratio 0. The ratio is
    computed on the descending-sorted values so that k >= m gives exactly 1.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not epoch_changes:
        raise ValueError("no change vectors to aggregate")
    ratios = []
    for cv in epoch_changes:
        ordered = sorted(cv.values, reverse=True)
        total = sum(ordered)
        if total <= 0.0:
            ratios.append(0.0)
        else:
            ratios.append(sum(ordered[:k]) / total)
    return sum(ratios) / len(ratios)


def _by_epoch(checkpoints: Sequence[Checkpoint]) -> dict[int, Checkpoint]:
    out: dict[int, Checkpoint] = {}
    for c in checkpoints:
        if c.epoch in out:
            raise ValueError(f"duplicate checkpoint epoch {c.epoch}")
        out[c.epoch] = c
    if not out:
        raise ValueError("no checkpoints to select from")
    return out


def build_report(
    checkpoints: Sequence[Checkpoint],
    acc_source: Mapping[int, float],
    change_store: Mapping[int, Sequence[ChangeVector]] | None,
    k: int | None,
    lam: float | None,
    method: str,
    train_accs: Mapping[int, float] | None = None,
) -> tuple[Checkpoint, SelectionReport]:
    """Per-epoch selection table plus the chosen checkpoint for ``method``."""
    if method not in ("bmc", "mtest", "max"):
        raise ValueError(f"unknown selection method {method!r}")
    ckpts = _by_epoch(checkpoints)
    epochs = sorted(ckpts)
    if set(acc_source) != set(epochs):
        raise ValueError(f"accuracy epochs {sorted(acc_source)} do not match checkpoints {epochs}")
    if change_store is not None and set(change_store) != set(epochs):
        raise ValueError(f"change epochs {sorted(change_store)} do not match checkpoints {epochs}")

    rows: list[EpochRow] = []
    for epoch in epochs:
        acc = float(acc_source[epoch])
        sc = bmc = None
        if change_store is not None and k is not None:
            sc = salient_change(change_store[epoch], k)
            if lam is not None:
                bmc = -lam * acc + sc
        rows.append(
            EpochRow(
                epoch=epoch,
                acc_test=acc,
                acc_train=None if train_accs is None else float(train_accs[epoch]),
                sc=sc,
                bmc_score=bmc,
            )
        )

    if method == "bmc":
        if change_store is None or k is None or lam is None:
            raise ValueError("bmc selection needs change vectors, k, and lambda")
        key = {r.epoch: r.bmc_score for r in rows}
    else:
        key = {r.epoch: r.acc_test for r in rows}
    chosen = epochs[0]
    for epoch in epochs[1:]:
        if key[epoch] > key[chosen]:
            chosen = epoch
    report = SelectionReport(rows=rows, chosen_epoch=chosen, method=method, lam=lam, k=k)
    return ckpts[chosen], report


def bmc_select(
    checkpoints: Sequence[Checkpoint],
    acc_source: Mapping[int, float],
    change_store: Mapping[int, Sequence[ChangeVector]],
    k: int,
    lam: float = DEFAULT_LAMBDA,
    train_accs: Mapping[int, float] | None = None,
) -> tuple[Checkpoint, SelectionReport]:
    """Argmax over epochs of ``-lam * acc_test + salient_change``; ties go to
    the earliest epoch."""
    return build_report(checkpoints, acc_source, change_store, k, lam, "bmc", train_accs)


def mtest_select(
    checkpoints: Sequence[Checkpoint],
    acc_source: Mapping[int, float],
    train_accs: Mapping[int, float] | None = None,
) -> tuple[Checkpoint, SelectionReport]:
    """Argmax of test-split accuracy; ties go to the earliest epoch."""
    return build_report(checkpoints, acc_source, None, None, None, "mtest", train_accs)


def save_report(report: SelectionReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, ensure_ascii=False, indent=2)
        fh.write("\n")


def load_report(path) -> SelectionReport:
    with open(path, "r", encoding="utf-8") as fh:
        return SelectionReport.from_json(json.load(fh))
