"""Answer and evidence metrics: accuracy, evidence F1 (token or sentence mode),
and their per-sample combination."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import Corpus
from .embeddings import has_cjk
from .render import format_table


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """Exact-match fraction over aligned prediction/label lists."""
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise ValueError("cannot compute accuracy over zero samples")
    return sum(1 for p, y in zip(predictions, labels) if p == y) / len(labels)


def _evidence_tokens(text: str) -> list[str]:
    if has_cjk(text):
        return [ch for ch in text if not ch.isspace()]
    return text.split()


def _f1(common: float, n_pred: float, n_gold: float) -> float:
    if common <= 0 or n_pred <= 0:
        return 0.0
    precision = common / n_pred
    recall = common / n_gold
    return 2 * precision * recall / (precision + recall)


def evidence_f1(predicted, gold, mode: str = "token") -> float:
    """F1 between predicted and gold evidence.

    ``token`` mode takes evidence strings and scores the multiset overlap of
    their tokens (characters for CJK text, whitespace tokens otherwise).
    ``sentence`` mode takes index collections and scores set overlap.
    An empty prediction scores 0; an empty gold is an error.
    """
    if mode == "token":
        if not isinstance(predicted, str) or not isinstance(gold, str):
            raise TypeError("token mode expects evidence strings")
        gold_tokens = Counter(_evidence_tokens(gold))
        if not gold_tokens:
            raise ValueError("gold evidence must be non-empty")
        pred_tokens = Counter(_evidence_tokens(predicted))
        common = sum((pred_tokens & gold_tokens).values())
        return _f1(common, sum(pred_tokens.values()), sum(gold_tokens.values()))
    if mode == "sentence":
        if isinstance(predicted, str) or isinstance(gold, str):
            raise TypeError("sentence mode expects index collections")
        gold_set = set(int(i) for i in gold)
        if not gold_set:
            raise ValueError("gold evidence must be non-empty")
        pred_set = set(int(i) for i in predicted)
        return _f1(len(pred_set & gold_set), len(pred_set), len(gold_set))
    raise ValueError(f"unknown evidence_f1 mode {mode!r}")


def all_f1(ans_correct: Sequence[bool], evi_scores: Sequence[float]) -> float:
    """Mean over samples of (answer correct) * (evidence F1)."""
    if len(ans_correct) != len(evi_scores):
        raise ValueError(f"length mismatch: {len(ans_correct)} answers vs {len(evi_scores)} evidence scores")
    if not ans_correct:
        raise ValueError("cannot combine zero samples")
    return sum((1.0 if a else 0.0) * e for a, e in zip(ans_correct, evi_scores)) / len(ans_correct)


@dataclass
class MetricsReport:
    n: int
    acc: float | None = None
    respective_acc: tuple[float, float] | None = None
    ans_f1: float | None = None
    evi_f1: float | None = None
    all_f1: float | None = None

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "acc": self.acc,
            "respective_acc": list(self.respective_acc) if self.respective_acc else None,
            "ans_f1": self.ans_f1,
            "evi_f1": self.evi_f1,
            "all_f1": self.all_f1,
        }

    def render(self) -> str:
        def fmt(x) -> str:
            if x is None:
                return "-"
            if isinstance(x, tuple):
                return f"{x[0]:.4f} / {x[1]:.4f}"
            return f"{x:.4f}"

        rows = [
            ["n", str(self.n)],
            ["acc", fmt(self.acc)],
            ["respective_acc", fmt(self.respective_acc)],
            ["ans_f1", fmt(self.ans_f1)],
            ["evi_f1", fmt(self.evi_f1)],
            ["all_f1", fmt(self.all_f1)],
        ]
        return format_table(["metric", "value"], rows)


def evaluate_predictions(
    predictions: Iterable[dict],
    gold: Corpus,
    metrics: Sequence[str] = ("ans", "evi", "all"),
    evi_mode: str = "sentence",
) -> MetricsReport:
    """Score a prediction stream against gold labels and evidence.

    Each prediction record carries ``id``, and depending on the requested
    metrics ``answer`` plus ``evidence`` (indices) or ``evidence_text``.
    In the answer-verification setting the per-sample answer F1 reduces to
    answer accuracy.
    """
    for m in metrics:
        if m not in ("ans", "evi", "all"):
            raise ValueError(f"unknown metric {m!r}")
    preds = {str(p["id"]): p for p in predictions}
    ans_correct: list[bool] = []
    evi_scores: list[float] = []
    need_ans = "ans" in metrics or "all" in metrics
    need_evi = "evi" in metrics or "all" in metrics
    n = 0
    for sample in gold.samples:
        pred = preds.get(sample.id)
        if pred is None:
            raise ValueError(f"missing prediction for sample {sample.id!r}")
        n += 1
        if need_ans:
            if "answer" not in pred:
                raise ValueError(f"prediction for {sample.id!r} lacks 'answer'")
            ans_correct.append(int(pred["answer"]) == sample.label)
        if need_evi:
            if sample.gold_evidence is None:
                raise ValueError(f"gold sample {sample.id!r} lacks evidence annotations")
            if evi_mode == "sentence":
                if "evidence" not in pred:
                    raise ValueError(f"prediction for {sample.id!r} lacks 'evidence'")
                evi_scores.append(evidence_f1(pred["evidence"], sample.gold_evidence, mode="sentence"))
            else:
                gold_text = "".join(sample.sentences[i - 1] for i in sample.gold_evidence)
                evi_scores.append(evidence_f1(str(pred.get("evidence_text", "")), gold_text, mode="token"))
    if n == 0:
        raise ValueError("gold corpus is empty")
    acc = (sum(1 for c in ans_correct if c) / n) if need_ans else None
    return MetricsReport(
        n=n,
        acc=acc,
        ans_f1=acc,
        evi_f1=(sum(evi_scores) / n) if need_evi else None,
        all_f1=all_f1(ans_correct, evi_scores) if "all" in metrics else None,
    )


def render_json(report: MetricsReport) -> str:
    return json.dumps(report.to_json(), ensure_ascii=False)
