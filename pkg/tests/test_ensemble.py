import numpy as np
import pytest

from conftest import build_model
from wordbench.corpus import UNK_TOKEN
from wordbench.embeddings import SynonymIndex
from wordbench.ensemble import (
    EnsembleConfig,
    EnsemblePredictor,
    ensemble_predict,
    perturb_tokens,
)


def two_class_model():
    return build_model(
        ["good", "bad", "meh"],
        {"good": (1.0, 0.0), "bad": (-1.0, 0.0), "meh": (0.0, 0.2)},
        W1=[[1.0, 0.0], [0.0, 1.0]],
        b1=[0.0, 0.0],
        W2=[[3.0, -3.0], [0.0, 0.0]],
        b2=[0.0, 0.0],
    )


class TestConfig:
    def test_paper_default_size_is_sixteen(self):
        assert EnsembleConfig().size == 16

    def test_validation(self):
        with pytest.raises(ValueError, match="strategy"):
            EnsembleConfig(strategy="avg")
        with pytest.raises(ValueError, match="size"):
            EnsembleConfig(size=0)
        with pytest.raises(ValueError, match="mask_rate"):
            EnsembleConfig(perturber="mask", mask_rate=1.5)
        with pytest.raises(ValueError, match="perturber"):
            EnsembleConfig(perturber="shuffle")
        with pytest.raises(ValueError, match="defender index"):
            EnsembleConfig(perturber="synonym")


class TestAggregation:
    def test_singleton_ensemble_equals_plain_predict(self):
        model = two_class_model()
        tokens = ["good", "meh"]
        for strategy in ("logit", "vote"):
            config = EnsembleConfig(strategy=strategy, size=1, perturber="identity")
            label, probs, members = ensemble_predict(model, tokens, config)
            assert label == model.predict(tokens)
            assert len(members) == 1
            if strategy == "logit":
                assert np.allclose(probs, model.predict_proba(tokens), atol=1e-12)

    def test_identity_perturber_any_size_equals_plain(self):
        model = two_class_model()
        tokens = ["bad", "meh", "good", "bad"]
        plain = model.predict(tokens)
        for size in (1, 4, 9):
            for strategy in ("logit", "vote"):
                config = EnsembleConfig(strategy=strategy, size=size, perturber="identity")
                label, _, _ = ensemble_predict(model, tokens, config)
                assert label == plain

    def test_vote_probs_are_count_fractions(self):
        model = two_class_model()
        config = EnsembleConfig(strategy="vote", size=7, perturber="mask", mask_rate=0.5, seed=3)
        _, probs, _ = ensemble_predict(model, ["good", "bad", "meh"], config)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        counts = probs * 7
        assert np.allclose(counts, np.round(counts), atol=1e-9)

    def test_tied_votes_pick_lowest_class(self):
        # feed crafted alternating logits through the aggregation path by
        # stubbing the model surface ensemble_predict relies on
        class Stub:
            num_classes = 2

            class _Trace:
                def __init__(self, logits):
                    self.logits = logits

            def make_batch(self, pairs):
                self._n = len(pairs)
                return self

            @property
            def ids(self):
                return None

            @property
            def mask(self):
                return None

            def forward(self, ids, mask):
                logits = np.array(
                    [[1.0, 0.0] if i % 2 == 0 else [0.0, 1.0] for i in range(self._n)]
                )
                return Stub._Trace(logits)

        config = EnsembleConfig(strategy="vote", size=10, perturber="identity")
        label, probs, members = ensemble_predict(Stub(), ["x"], config)
        assert [m.label for m in members].count(0) == 5
        assert label == 0
        assert np.allclose(probs, [0.5, 0.5])

    def test_deterministic_per_input_and_seed(self):
        model = two_class_model()
        config = EnsembleConfig(strategy="vote", size=8, perturber="mask", mask_rate=0.4, seed=11)
        tokens = ["good", "bad", "meh", "good"]
        a = ensemble_predict(model, tokens, config)
        b = ensemble_predict(model, tokens, config)
        assert a[0] == b[0]
        assert np.array_equal(a[1], b[1])

    def test_logit_aggregate_probs_sum_to_one(self):
        model = two_class_model()
        config = EnsembleConfig(strategy="logit", size=5, perturber="mask", mask_rate=0.3, seed=2)
        _, probs, _ = ensemble_predict(model, ["good", "meh"], config)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)


class TestPerturbers:
    def test_mask_rate_one_masks_everything(self):
        rng = np.random.default_rng(0)
        config = EnsembleConfig(perturber="mask", mask_rate=1.0)
        out = perturb_tokens(["a", "b", "c"], config, rng)
        assert out == [UNK_TOKEN] * 3

    def test_mask_rate_zero_is_identity(self):
        rng = np.random.default_rng(0)
        config = EnsembleConfig(perturber="mask", mask_rate=0.0)
        assert perturb_tokens(["a", "b"], config, rng) == ["a", "b"]

    def test_synonym_keeps_words_without_candidates(self):
        index = SynonymIndex(neighbors={"a": (("z", 0.9),)}, k_max=1, min_cos=0.0)
        config = EnsembleConfig(perturber="synonym", index=index)
        rng = np.random.default_rng(0)
        out = perturb_tokens(["a", "b"], config, rng)
        assert out[0] == "z"
        assert out[1] == "b"


class TestPredictor:
    def test_predictor_facade_matches_function(self):
        model = two_class_model()
        config = EnsembleConfig(strategy="vote", size=6, perturber="mask", mask_rate=0.3, seed=5)
        predictor = EnsemblePredictor(model, config)
        tokens = ["good", "bad", "meh"]
        label, probs, _ = ensemble_predict(model, tokens, config)
        assert predictor.predict(tokens) == label
        assert np.array_equal(predictor.predict_proba(tokens), probs)
        batch = predictor.predict_proba_batch([tokens, ["good"]])
        assert batch.shape == (2, 2)
        assert np.array_equal(batch[0], probs)
