"""Shared fixtures: tiny hand-built models and attack instances."""

import numpy as np
import pytest

from wordbench.corpus import Document, Vocabulary
from wordbench.embeddings import EmbeddingTable, SynonymIndex
from wordbench.victim import VictimModel


def build_model(words, embedding_rows, W1, b1, W2, b2, activation="tanh"):
    """A VictimModel with every parameter set by hand.

    ``embedding_rows`` maps word -> vector; PAD and UNK rows default to
    zero unless given explicitly.
    """
    vocab = Vocabulary.from_words(words)
    dim = len(next(iter(embedding_rows.values())))
    hidden = np.asarray(W1).shape[1]
    num_classes = np.asarray(W2).shape[1]
    model = VictimModel(vocab, dim, hidden, num_classes, activation=activation, seed=0)
    model.embedding[:] = 0.0
    for word, row in embedding_rows.items():
        model.embedding[vocab.word_to_id[word]] = row
    model.W1 = np.asarray(W1, dtype=float)
    model.b1 = np.asarray(b1, dtype=float)
    model.W2 = np.asarray(W2, dtype=float)
    model.b2 = np.asarray(b2, dtype=float)
    return model


def constant_sim_table(words, dim=2):
    """Similarity table where every sentence pair scores 1.0."""
    return EmbeddingTable(list(words), np.ones((len(words), dim)))


@pytest.fixture
def pivot_instance():
    """A 2-class instance with one pivotal word whose only synonym flips it.

    The document is ``filler ... pivot ... filler`` with label 0; swapping
    ``pivot`` for ``alt`` flips the pooled embedding sign, and fillers
    carry no signal at all.
    """
    words = ["filler", "pivot", "alt"]
    model = build_model(
        words,
        {"filler": (0.0, 0.0), "pivot": (1.0, 0.0), "alt": (-1.0, 0.0)},
        W1=[[1.0, 0.0], [0.0, 1.0]],
        b1=[0.0, 0.0],
        W2=[[2.0, -2.0], [0.0, 0.0]],
        b2=[0.0, 0.0],
    )
    L = 5
    tokens = tuple(["filler"] * 2 + ["pivot"] + ["filler"] * (L - 3))
    doc = Document(id=0, label=0, tokens=tokens, raw=" ".join(tokens))
    index = SynonymIndex(
        neighbors={"pivot": (("alt", 0.9),)}, k_max=3, min_cos=0.0, source="attacker"
    )
    sim_table = constant_sim_table(words + ["<unk>"])
    return model, doc, index, sim_table


def random_tiny_instance(rng: np.random.Generator):
    """A random small model, document, and synonym index for oracle tests."""
    n_words = 8
    dim, hidden, classes = 3, 4, 2
    words = [f"w{i}" for i in range(n_words)]
    vocab = Vocabulary.from_words(words)
    model = VictimModel(vocab, dim, hidden, classes, seed=int(rng.integers(2**31)))
    model.embedding[2:] = rng.normal(size=(n_words, dim))
    L = int(rng.integers(4, 7))
    tokens = tuple(str(rng.choice(words)) for _ in range(L))
    doc = Document(
        id=int(rng.integers(10_000)),
        label=int(rng.integers(classes)),
        tokens=tokens,
        raw=" ".join(tokens),
    )
    neighbors = {}
    for w in words:
        others = [o for o in words if o != w]
        rng.shuffle(others)
        k = int(rng.integers(0, 4))
        neighbors[w] = tuple((o, 1.0 - 0.1 * j) for j, o in enumerate(others[:k]))
    index = SynonymIndex(neighbors=neighbors, k_max=3, min_cos=0.0, source="attacker")
    sim_table = EmbeddingTable(words, rng.normal(size=(n_words, dim)) + 3.0)
    return model, doc, index, sim_table
