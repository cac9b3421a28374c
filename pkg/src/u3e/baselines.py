"""Similarity-based evidence extractors used for comparison: static word-vector
top-k and beam search with hard query masking."""

from __future__ import annotations

from .corpus import EvidenceSet, Sample
from .embeddings import (  # noqa: F401  (re-exported table API)
    EmbeddingTable,
    cosine,
    load_embeddings,
    pooled_vector,
    sentence_vector,
    tokenize,
)

DEFAULT_BEAM_WIDTH = 3


def wv_topk(sample: Sample, table: EmbeddingTable, k: int) -> EvidenceSet:
    """The k sentences most cosine-similar to the statement.

    Zero-vector operands score 0; ties resolve toward the earlier sentence.
    Indices are emitted in ascending order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    option_vec = sentence_vector(sample.option, table)
    sims = [cosine(sentence_vector(s, table), option_vec) for s in sample.sentences]
    ranked = sorted(range(sample.m), key=lambda j: (-sims[j], j))
    indices = tuple(sorted(j + 1 for j in ranked[: min(k, sample.m)]))
    return EvidenceSet(sample_id=sample.id, indices=indices, k=k)


def beam_search_hard_mask(
    sample: Sample,
    table: EmbeddingTable,
    k: int,
    beam_width: int = DEFAULT_BEAM_WIDTH,
) -> EvidenceSet:
    """Iterative k-step selection with a beam over partial evidence sets.

    At each step a candidate sentence is scored by cosine similarity against
    the residual query: the statement with every token that appears in an
    already-selected sentence removed (hard masking). The beam keeps the
    ``beam_width`` best partial sets by cumulative score. When the residual
    query runs empty all candidates score 0 and the tie-break falls back to
    the smallest unselected indices.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    m = sample.m
    steps = min(k, m)
    query_tokens = tokenize(sample.option, table)
    sent_tokens = [set(tokenize(s, table)) for s in sample.sentences]
    sent_vecs = [sentence_vector(s, table) for s in sample.sentences]

    # beam state: (selection order, cumulative score)
    states: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    for _ in range(steps):
        candidates: list[tuple[tuple[int, ...], float]] = []
        for selected, score in states:
            masked = set().union(*(sent_tokens[j] for j in selected)) if selected else set()
            residual = [t for t in query_tokens if t not in masked]
            query_vec = pooled_vector(residual, table)
            chosen = set(selected)
            for j in range(m):
                if j in chosen:
                    continue
                candidates.append((selected + (j,), score + cosine(sent_vecs[j], query_vec)))
        candidates.sort(key=lambda c: (-c[1], tuple(sorted(c[0])), c[0]))
        states = []
        seen: set[frozenset[int]] = set()
        for selected, score in candidates:
            key = frozenset(selected)
            if key in seen:
                continue
            seen.add(key)
            states.append((selected, score))
            if len(states) == beam_width:
                break
    best = states[0][0]
    indices = tuple(sorted(j + 1 for j in best))
    return EvidenceSet(sample_id=sample.id, indices=indices, k=k)
