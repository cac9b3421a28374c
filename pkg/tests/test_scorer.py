import json
import math
import zlib

import numpy as np
import pytest

from synthgen import separable_corpus
from u3e import (
    ALPHA_GRID,
    BuiltinScorer,
    Checkpoint,
    Corpus,
    FeatureConfig,
    Sample,
    TrainConfig,
    alpha_sweep,
    combine_losses,
    cross_entropy,
    featurize,
    load_checkpoint,
    predict,
    save_checkpoint,
    scorer_handle,
    softmax_probs,
    train_epochs,
)
from u3e.scorer import ScorerError, mean_loss


def bucket(tag: bytes, gram: str, hash_bits: int) -> int:
    return zlib.crc32(tag + b"\x1f" + gram.encode("utf-8")) & ((1 << hash_bits) - 1)


def manual_features(option, sentences, hash_bits, orders):
    """Independent re-derivation of the featurization contract."""

    def grams(text):
        return [text[i : i + n] for n in orders for i in range(len(text) - n + 1)]

    feats = {}
    for g in grams(option):
        k = bucket(b"o", g, hash_bits)
        feats[k] = feats.get(k, 0.0) + 1.0
    for sent in sentences:
        for g in grams(sent):
            k = bucket(b"d", g, hash_bits)
            feats[k] = feats.get(k, 0.0) + 1.0
    for g in dict.fromkeys(grams(option)):
        count = sum(1 for sent in sentences if g in sent)
        if count:
            k = bucket(b"x", g, hash_bits)
            feats[k] = feats.get(k, 0.0) + count
    return feats


class TestFeaturize:
    def test_empty_inputs_give_empty_vector(self):
        assert featurize("", []) == {}

    def test_deterministic(self):
        a = featurize("陈述 text", ["一句。", "another"])
        b = featurize("陈述 text", ["一句。", "another"])
        assert a == b

    def test_single_character_hand_hash_trace(self):
        config = FeatureConfig(hash_bits=18, ngram_orders=(1,))
        feats = featurize("a", [], config)
        expected_bucket = zlib.crc32(b"o\x1fa") & (2**18 - 1)
        assert feats == {expected_bucket: 1.0}

    def test_matches_independent_derivation(self):
        config = FeatureConfig(hash_bits=10, ngram_orders=(1, 2))
        option, sentences = "ab cd", ["ab x", "yz"]
        assert featurize(option, sentences, config) == manual_features(option, sentences, 10, (1, 2))

    def test_sentence_removal_removes_exactly_its_contributions(self):
        config = FeatureConfig(hash_bits=18, ngram_orders=(1, 2))
        option = "qz"
        with_b = featurize(option, ["ab", "cd"], config)
        without = featurize(option, ["ab"], config)
        diff = {k: with_b.get(k, 0.0) - without.get(k, 0.0) for k in set(with_b) | set(without)}
        diff = {k: v for k, v in diff.items() if v}
        expected = {bucket(b"d", g, 18): 1.0 for g in ("c", "d", "cd")}
        assert diff == expected


def make_checkpoint(weights, bias, hash_bits=2, orders=(1,), epoch=1):
    return Checkpoint(
        epoch=epoch,
        weights=np.asarray(weights, dtype=float),
        bias=np.asarray(bias, dtype=float),
        seed=0,
        feature_config=FeatureConfig(hash_bits=hash_bits, ngram_orders=orders),
    )


class TestPredict:
    def test_bias_only_model(self):
        ckpt = make_checkpoint(np.zeros((2, 4)), [0.3, -0.3])
        scores = predict(ckpt, "anything at all", ["some", "sentences"])
        assert scores.tolist() == [0.3, -0.3]

    def test_hand_dot_product(self):
        weights = [[0.5, -1.0, 2.0, 0.25], [1.0, 1.0, -1.0, 0.0]]
        bias = [0.1, -0.2]
        ckpt = make_checkpoint(weights, bias)
        feats = manual_features("a", ["b"], 2, (1,))
        expected = [
            sum(weights[c][k] * v for k, v in feats.items()) + bias[c] for c in (0, 1)
        ]
        scores = predict(ckpt, "a", ["b"])
        assert scores.tolist() == pytest.approx(expected, abs=0)

    def test_scores_always_length_two(self):
        ckpt = make_checkpoint(np.zeros((2, 4)), [0.0, 0.0])
        assert predict(ckpt, "x", []).shape == (2,)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            make_checkpoint(np.zeros((2, 8)), [0.0, 0.0], hash_bits=2)

    def test_linear_in_disjoint_sentence_features(self):
        config = FeatureConfig(hash_bits=18, ngram_orders=(1, 2))
        rng = np.random.default_rng(0)
        ckpt = Checkpoint(
            epoch=1,
            weights=rng.normal(size=(2, config.dim)),
            bias=rng.normal(size=2),
            seed=0,
            feature_config=config,
        )
        both = predict(ckpt, "qz", ["ab", "cd"])
        only_a = predict(ckpt, "qz", ["ab"])
        contribution = np.zeros(2)
        for g in ("c", "d", "cd"):
            contribution += ckpt.weights[:, bucket(b"d", g, 18)]
        assert both - only_a == pytest.approx(contribution, abs=1e-12)


class TestSoftmaxAndLoss:
    def test_symmetric_scores(self):
        assert softmax_probs([0.0, 0.0]).tolist() == [0.5, 0.5]

    def test_hand_arithmetic(self):
        probs = softmax_probs([math.log(3.0), 0.0])
        assert probs.tolist() == pytest.approx([0.75, 0.25], abs=1e-12)

    def test_shift_invariance(self):
        assert softmax_probs([5.0, 5.0]).tolist() == pytest.approx([0.5, 0.5], abs=0)
        base = softmax_probs([1.2, -0.7])
        shifted = softmax_probs([1.2 + 100.0, -0.7 + 100.0])
        assert shifted.tolist() == pytest.approx(base.tolist(), abs=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            probs = softmax_probs(rng.normal(scale=10, size=2))
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)
            assert (probs > 0).all()

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            softmax_probs([float("nan"), 0.0])

    def test_cross_entropy_half(self):
        assert cross_entropy([0.5, 0.5], 1) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_cross_entropy_perfect(self):
        assert cross_entropy([0.0, 1.0], 1) == 0.0

    def test_cross_entropy_clamped(self):
        loss = cross_entropy([1.0, 0.0], 1, epsilon=1e-12)
        assert loss == pytest.approx(-math.log(1e-12), abs=1e-9)
        assert math.isfinite(loss)

    def test_cross_entropy_non_negative(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            p1 = rng.uniform(0, 1)
            assert cross_entropy([1 - p1, p1], rng.integers(0, 2)) >= 0.0


class TestCombineLosses:
    def test_alpha_zero_is_answer_loss(self):
        assert combine_losses(0.7, 123.0, 0.0) == 0.7

    def test_hand_arithmetic(self):
        assert combine_losses(0.5, 0.25, 1.0) == 0.75

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            combine_losses(1.0, 1.0, 1.5)
        with pytest.raises(ValueError):
            combine_losses(1.0, 1.0, -0.1)

    def test_sweep_grid_covers_tenths(self):
        assert ALPHA_GRID == (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
        sweep = alpha_sweep(1.0, 2.0)
        assert len(sweep) == 11
        assert sweep[0] == (0.0, 1.0)
        assert sweep[-1] == (1.0, 3.0)

    def test_monotone_in_alpha_for_positive_evidence_loss(self):
        values = [combine_losses(0.5, 0.3, a) for a in ALPHA_GRID]
        assert values == sorted(values)


class TestTraining:
    def test_checkpoint_count_and_epochs(self):
        corpus = separable_corpus(n=10)
        ckpts = train_epochs(corpus, TrainConfig(epochs=3, hash_bits=12))
        assert [c.epoch for c in ckpts] == [1, 2, 3]

    def test_same_seed_gives_byte_identical_checkpoints(self, tmp_path):
        corpus = separable_corpus(n=10)
        config = TrainConfig(epochs=2, seed=5, hash_bits=12)
        for run in ("one", "two"):
            out = tmp_path / run
            out.mkdir()
            for ckpt in train_epochs(corpus, config):
                save_checkpoint(ckpt, out / f"epoch-{ckpt.epoch}.json")
        for epoch in (1, 2):
            a = (tmp_path / "one" / f"epoch-{epoch}.json").read_bytes()
            b = (tmp_path / "two" / f"epoch-{epoch}.json").read_bytes()
            assert a == b

    def test_empty_training_split_rejected(self):
        corpus = Corpus([Sample("s", "o", ["a"], 0, split="test")])
        with pytest.raises(ScorerError, match="empty training split"):
            train_epochs(corpus, TrainConfig(epochs=1))

    def test_separable_corpus_reaches_full_accuracy(self):
        corpus = separable_corpus(n=40)
        config = TrainConfig(epochs=50, seed=11, hash_bits=16)
        ckpts = train_epochs(corpus, config)
        final = BuiltinScorer(ckpts[-1])
        train = corpus.subset("train")
        hits = sum(
            1 for s in train if int(np.argmax(final.predict(s.option, s.sentences))) == s.label
        )
        assert hits == len(train)

        # independent oracle: a plain perceptron on the same features separates them
        fc = config.feature_config
        features = [featurize(s.option, s.sentences, fc) for s in train]
        w = [dict(), dict()]

        def score(c, feats):
            return sum(w[c].get(k, 0.0) * v for k, v in feats.items())

        converged = False
        for _ in range(100):
            errors = 0
            for s, feats in zip(train, features):
                pred = 1 if score(1, feats) > score(0, feats) else 0
                if pred != s.label:
                    errors += 1
                    for k, v in feats.items():
                        w[s.label][k] = w[s.label].get(k, 0.0) + v
                        w[pred][k] = w[pred].get(k, 0.0) - v
            if errors == 0:
                converged = True
                break
        assert converged, "oracle perceptron failed: corpus is not separable"

    def test_loss_improves_over_epochs(self):
        corpus = separable_corpus(n=20)
        ckpts = train_epochs(corpus, TrainConfig(epochs=10, seed=3, hash_bits=14))
        assert mean_loss(ckpts[-1], corpus) <= mean_loss(ckpts[0], corpus)


class TestCheckpointIO:
    def test_round_trip_preserves_predictions_exactly(self, tmp_path):
        corpus = separable_corpus(n=8)
        ckpt = train_epochs(corpus, TrainConfig(epochs=1, hash_bits=12))[0]
        path = tmp_path / "ckpt.json"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        for s in corpus.samples:
            a = predict(ckpt, s.option, s.sentences)
            b = predict(loaded, s.option, s.sentences)
            assert a.tolist() == b.tolist()

    def test_file_schema(self, tmp_path):
        ckpt = make_checkpoint(np.zeros((2, 4)), [0.5, -0.5], epoch=7)
        path = tmp_path / "ckpt.json"
        save_checkpoint(ckpt, path)
        obj = json.loads(path.read_text())
        assert set(obj) == {"epoch", "seed", "hash_bits", "ngram_orders", "weights", "bias"}
        assert obj["epoch"] == 7
        assert obj["bias"] == [0.5, -0.5]

    def test_builtin_handle_reproduces_predict(self, tmp_path):
        corpus = separable_corpus(n=8)
        ckpt = train_epochs(corpus, TrainConfig(epochs=1, hash_bits=12))[0]
        path = tmp_path / "ckpt.json"
        save_checkpoint(ckpt, path)
        handle = scorer_handle("builtin", path)
        assert handle.epoch == 1
        s = corpus.samples[0]
        assert handle.predict(s.option, s.sentences).tolist() == predict(ckpt, s.option, s.sentences).tolist()

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="kind"):
            scorer_handle("other", "x")
