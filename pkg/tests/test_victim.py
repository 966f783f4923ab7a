import math

import numpy as np
import pytest

from conftest import build_model
from wordbench.corpus import Dataset, Document, Vocabulary
from wordbench.victim import (
    NonFiniteLossError,
    VictimModel,
    checkpoint_hash,
    load_checkpoint,
    parameter_hash,
    save_checkpoint,
    train,
)


def small_random_model(seed, n_words=12, dim=4, hidden=5, classes=3):
    vocab = Vocabulary.from_words([f"w{i}" for i in range(n_words)])
    model = VictimModel(vocab, dim, hidden, classes, seed=seed)
    rng = np.random.default_rng(seed + 1)
    model.embedding[2:] = rng.normal(scale=0.5, size=(n_words, dim))
    return model


def random_batch(model, rng, n_docs=3, max_len=5):
    docs = []
    words = [w for w in model.vocab.id_to_word[2:]]
    for _ in range(n_docs):
        L = int(rng.integers(2, max_len + 1))
        tokens = [str(rng.choice(words)) for _ in range(L)]
        docs.append((tokens, int(rng.integers(model.num_classes))))
    return model.make_batch(docs)


def finite_difference_grads(model, batch, delta, eps=1e-4):
    """Central differences for every parameter and for the input gradient."""

    def loss_at():
        loss, _, _ = model.loss_and_grads(batch, delta=delta)
        return loss

    fd = {}
    for name, arr in model.parameters().items():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_at()
            flat[i] = orig - eps
            down = loss_at()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        fd[name] = g
    g_delta = np.zeros_like(delta)
    dflat = delta.ravel()
    gflat = g_delta.ravel()
    for i in range(dflat.size):
        orig = dflat[i]
        dflat[i] = orig + eps
        up = loss_at()
        dflat[i] = orig - eps
        down = loss_at()
        dflat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return fd, g_delta


def max_rel_error(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


class TestForward:
    def test_zero_weights_give_uniform_probabilities(self):
        model = small_random_model(0)
        model.W1[:] = 0.0
        model.b1[:] = 0.0
        model.W2[:] = 0.0
        model.b2[:] = 0.0
        probs = model.predict_proba(["w0", "w3"])
        assert np.allclose(probs, 1.0 / model.num_classes, atol=1e-12)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(2)
        model = small_random_model(2)
        for _ in range(10):
            batch = random_batch(model, rng)
            trace = model.forward(batch.ids, batch.mask)
            assert np.allclose(trace.probs.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(trace.probs >= 0.0)

    def test_hand_computed_two_class_logits(self):
        # scalar re-derivation of pooled -> tanh -> logits, kept independent
        # of any numpy batching
        model = build_model(
            ["u", "v"],
            {"u": (1.0, 0.0), "v": (0.0, 1.0)},
            W1=[[1.0, 0.0], [0.0, 1.0]],
            b1=[0.0, 0.0],
            W2=[[1.0, -1.0], [2.0, 0.5]],
            b2=[0.1, -0.1],
        )
        a = math.tanh(0.5)
        expected = (a * 1.0 + a * 2.0 + 0.1, a * -1.0 + a * 0.5 - 0.1)
        logits = model.predict_logits(["u", "v"])
        assert logits == pytest.approx(expected, abs=1e-12)

    def test_shift_invariance_of_softmax(self):
        model = small_random_model(4)
        tokens = ["w1", "w2", "w3"]
        base = model.predict_proba(tokens)
        label = model.predict(tokens)
        model.b2 = model.b2 + 7.3
        assert np.allclose(model.predict_proba(tokens), base, atol=1e-9)
        assert model.predict(tokens) == label

    def test_empty_input_uses_pad_pooling_and_flags(self):
        model = small_random_model(5)
        batch = model.make_batch([([], 0)])
        trace = model.forward(batch.ids, batch.mask)
        assert trace.degenerate
        assert np.all(np.isfinite(trace.probs))

    def test_batched_forward_matches_single(self):
        model = small_random_model(6)
        seqs = [["w0"], ["w1", "w2", "w3", "w4"], ["w5", "w6"]]
        batched = model.predict_proba_batch(seqs)
        for i, tokens in enumerate(seqs):
            assert np.allclose(batched[i], model.predict_proba(tokens), atol=1e-12)


class TestGradients:
    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(7)
        for trial in range(3):
            model = small_random_model(30 + trial)
            batch = random_batch(model, rng)
            delta = rng.normal(scale=0.05, size=(*batch.ids.shape, model.dim))
            delta *= (batch.mask * (batch.ids != model.vocab.pad_id))[:, :, None]
            _, grads, g_delta = model.loss_and_grads(batch, delta=delta)
            fd, fd_delta = finite_difference_grads(model, batch, delta)
            for name in grads:
                assert max_rel_error(grads[name], fd[name]) <= 1e-3, name
            assert max_rel_error(g_delta, fd_delta) <= 1e-3

    def test_zero_delta_reproduces_unperturbed_loss(self):
        model = small_random_model(8)
        rng = np.random.default_rng(8)
        batch = random_batch(model, rng)
        loss_plain, _, _ = model.loss_and_grads(batch)
        zeros = np.zeros((*batch.ids.shape, model.dim))
        loss_zero, _, _ = model.loss_and_grads(batch, delta=zeros)
        assert loss_plain == loss_zero

    def test_perfect_fit_has_zero_loss_and_grads(self):
        model = small_random_model(9)
        tokens = ["w0", "w1"]
        label = model.predict(tokens)
        model.W2 *= 1e5  # saturate the softmax at the predicted class
        batch = model.make_batch([(tokens, label)])
        loss, grads, g_delta = model.loss_and_grads(batch)
        assert loss < 1e-12
        for g in grads.values():
            assert np.max(np.abs(g)) < 1e-8
        assert np.max(np.abs(g_delta)) < 1e-8

    def test_delta_shape_mismatch_rejected(self):
        model = small_random_model(10)
        batch = model.make_batch([(["w0", "w1"], 0)])
        with pytest.raises(ValueError, match="delta shape"):
            model.loss_and_grads(batch, delta=np.zeros((1, 99, model.dim)))

    def test_non_finite_loss_carries_batch_id(self):
        model = small_random_model(11)
        model.W2[:] = np.nan
        batch = model.make_batch([(["w0"], 0)])
        with pytest.raises(NonFiniteLossError, match="batch-7"):
            model.loss_and_grads(batch, batch_id="batch-7")


def separable_dataset():
    docs = []
    for i in range(10):
        docs.append(Document(id=i, label=0, tokens=("left", f"n{i}"), raw=""))
        docs.append(Document(id=10 + i, label=1, tokens=("right", f"n{i}"), raw=f"r{i}"))
    fixed = [
        Document(id=d.id, label=d.label, tokens=d.tokens, raw=" ".join(d.tokens))
        for d in docs
    ]
    return Dataset(documents=fixed, num_classes=2)


class TestTrain:
    def test_separable_reaches_full_accuracy(self):
        ds = separable_dataset()
        vocab = Vocabulary.from_dataset(ds)
        model = VictimModel(vocab, dim=8, hidden=8, num_classes=2, seed=0)
        stats = train(model, ds, epochs=50, lr=0.5, seed=0)
        assert any(s.accuracy == 1.0 for s in stats)
        assert stats[-1].accuracy == 1.0

    def test_zero_epochs_is_noop(self):
        ds = separable_dataset()
        vocab = Vocabulary.from_dataset(ds)
        model = VictimModel(vocab, dim=4, hidden=4, num_classes=2, seed=0)
        before = {k: v.copy() for k, v in model.parameters().items()}
        stats = train(model, ds, epochs=0, lr=0.5, seed=0)
        assert stats == []
        for k, v in model.parameters().items():
            assert np.array_equal(v, before[k])

    def test_same_seed_bit_identical(self):
        ds = separable_dataset()
        vocab = Vocabulary.from_dataset(ds)
        a = VictimModel(vocab, dim=4, hidden=4, num_classes=2, seed=3)
        b = VictimModel(vocab, dim=4, hidden=4, num_classes=2, seed=3)
        train(a, ds, epochs=5, lr=0.3, seed=9)
        train(b, ds, epochs=5, lr=0.3, seed=9)
        assert parameter_hash(a) == parameter_hash(b)

    def test_divergence_aborts_with_epoch(self):
        ds = separable_dataset()
        vocab = Vocabulary.from_dataset(ds)
        model = VictimModel(vocab, dim=4, hidden=4, num_classes=2, seed=0)
        model.W1[0, 0] = np.nan
        with pytest.raises(NonFiniteLossError, match="epoch 0"):
            train(model, ds, epochs=1, lr=0.5, seed=0)

    def test_pad_row_stays_frozen(self):
        ds = separable_dataset()
        vocab = Vocabulary.from_dataset(ds)
        model = VictimModel(vocab, dim=4, hidden=4, num_classes=2, seed=0)
        train(model, ds, epochs=3, lr=0.5, seed=0)
        assert np.array_equal(model.embedding[vocab.pad_id], np.zeros(4))


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        model = small_random_model(13)
        path = tmp_path / "model.bin"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.activation == model.activation
        assert loaded.vocab.id_to_word == model.vocab.id_to_word
        for k in model.parameters():
            assert np.array_equal(loaded.parameters()[k], model.parameters()[k])
        tokens = ["w0", "w5", "w2"]
        assert np.array_equal(loaded.predict_logits(tokens), model.predict_logits(tokens))

    def test_hash_stable_across_saves(self, tmp_path):
        model = small_random_model(14)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(model, p1)
        save_checkpoint(model, p2)
        assert checkpoint_hash(p1) == checkpoint_hash(p2)

    def test_rejects_non_checkpoint(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_embedding_init_from_table(self):
        from wordbench.embeddings import EmbeddingTable

        vocab = Vocabulary.from_words(["a", "b"])
        table = EmbeddingTable(["a"], np.array([[5.0, 6.0]]))
        model = VictimModel(vocab, dim=2, hidden=3, num_classes=2, seed=0, init_table=table)
        assert np.array_equal(model.embedding[vocab.word_to_id["a"]], [5.0, 6.0])
        b_row = model.embedding[vocab.word_to_id["b"]]
        assert np.all(np.abs(b_row) <= 0.1)
