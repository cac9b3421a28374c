"""Unsupervised evidence-sentence extraction by leave-one-out sentence erasure.

Train a small text classifier with per-epoch checkpoints, score each sentence
by how much its removal changes the gold-class prediction, select the
checkpoint whose changes concentrate on few sentences, extract the top-k
sentences as evidence, and retrain on evidence-only documents.
"""

__version__ = "0.1.0"

from .baselines import beam_search_hard_mask, wv_topk
from .corpus import (
    Block,
    Corpus,
    CorpusError,
    EvidenceSet,
    Sample,
    blocks,
    load_corpus,
    prefilter_topn,
    read_evidence,
    save_corpus,
    segment,
    token_count,
    write_evidence,
)
from .embeddings import EmbeddingTable, cosine, load_embeddings, sentence_vector, tokenize
from .erasure import ChangeVector, changes, changes_matrix, erase, read_changes, write_changes
from .metrics import MetricsReport, accuracy, all_f1, evaluate_predictions, evidence_f1
from .pipeline import (
    PipelineError,
    PipelineResult,
    RunConfig,
    block_accuracy,
    block_scores,
    build_retrain_corpus,
    direct_accuracy,
    extract_evidence,
    run_u3e,
    sweep_max,
)
from .scorer import (
    ALPHA_GRID,
    BuiltinScorer,
    Checkpoint,
    ExternalScorer,
    FeatureConfig,
    ProtocolError,
    ScorerError,
    TrainConfig,
    alpha_sweep,
    combine_losses,
    cross_entropy,
    featurize,
    iter_train_epochs,
    load_checkpoint,
    predict,
    save_checkpoint,
    scorer_handle,
    softmax_probs,
    train_epochs,
)
from .selection import (
    EpochRow,
    SelectionReport,
    bmc_select,
    mtest_select,
    salient_change,
)

__all__ = [
    "ALPHA_GRID",
    "Block",
    "BuiltinScorer",
    "ChangeVector",
    "Checkpoint",
    "Corpus",
    "CorpusError",
    "EmbeddingTable",
    "EpochRow",
    "EvidenceSet",
    "ExternalScorer",
    "FeatureConfig",
    "MetricsReport",
    "PipelineError",
    "PipelineResult",
    "ProtocolError",
    "RunConfig",
    "Sample",
    "ScorerError",
    "SelectionReport",
    "TrainConfig",
    "accuracy",
    "all_f1",
    "alpha_sweep",
    "beam_search_hard_mask",
    "blocks",
    "block_accuracy",
    "block_scores",
    "bmc_select",
    "build_retrain_corpus",
    "changes",
    "changes_matrix",
    "combine_losses",
    "cosine",
    "cross_entropy",
    "direct_accuracy",
    "erase",
    "evaluate_predictions",
    "evidence_f1",
    "extract_evidence",
    "featurize",
    "iter_train_epochs",
    "load_checkpoint",
    "load_corpus",
    "load_embeddings",
    "mtest_select",
    "predict",
    "prefilter_topn",
    "read_changes",
    "read_evidence",
    "run_u3e",
    "salient_change",
    "save_checkpoint",
    "save_corpus",
    "scorer_handle",
    "segment",
    "sentence_vector",
    "softmax_probs",
    "sweep_max",
    "token_count",
    "tokenize",
    "train_epochs",
    "wv_topk",
    "write_changes",
    "write_evidence",
]
