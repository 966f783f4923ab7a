"""A small differentiable text classifier with manual backprop.

Architecture: mean-pooled word embeddings -> one hidden layer (tanh or
relu) -> softmax. Exposes gradients w.r.t. every parameter group and
w.r.t. the per-position input embeddings, which is what embedding-space
adversarial training perturbs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dataset, Document, Vocabulary

CHECKPOINT_MAGIC = b"WBCK"
CHECKPOINT_VERSION = 1

PARAM_NAMES = ("embedding", "W1", "b1", "W2", "b2")


class NonFiniteLossError(RuntimeError):
    """Loss became non-finite (divergence)."""


@dataclass
class ForwardTrace:
    """Intermediate activations kept for backprop."""

    ids: np.ndarray          # (B, L) int
    mask: np.ndarray         # (B, L) 1.0 at real token positions
    perturb_mask: np.ndarray  # (B, L) 1.0 where input perturbations may act
    embedded: np.ndarray     # (B, L, d) embeddings plus any perturbation
    pooled: np.ndarray       # (B, d)
    z1: np.ndarray           # (B, h) hidden pre-activation
    a1: np.ndarray           # (B, h) hidden post-activation
    logits: np.ndarray       # (B, C)
    probs: np.ndarray        # (B, C)
    degenerate: bool = False  # True when any row used PAD-only pooling


@dataclass
class Batch:
    """Padded id matrix with masks; the unit all trainers operate on."""

    ids: np.ndarray     # (B, L)
    mask: np.ndarray    # (B, L)
    labels: np.ndarray  # (B,)

    @property
    def size(self) -> int:
        return self.ids.shape[0]


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


class VictimModel:
    """Mean-pool -> hidden -> softmax classifier over a fixed vocabulary.

    Prediction never mutates the model, so one instance can serve parallel
    attack workers; training mutates parameters and is single-threaded.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        dim: int,
        hidden: int,
        num_classes: int,
        activation: str = "tanh",
        seed: int = 0,
        init_table=None,
    ):
        if activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.vocab = vocab
        self.dim = dim
        self.hidden = hidden
        self.num_classes = num_classes
        self.activation = activation
        rng = np.random.default_rng(seed)
        V = len(vocab)
        self.embedding = rng.uniform(-0.1, 0.1, size=(V, dim))
        if init_table is not None:
            if init_table.dim != dim:
                raise ValueError("init table dimension disagrees with model dim")
            for word, wid in vocab.word_to_id.items():
                vec = init_table.vector(word)
                if vec is not None:
                    self.embedding[wid] = vec
        self.embedding[vocab.pad_id] = 0.0  # PAD row stays frozen at zero
        s1 = 1.0 / np.sqrt(dim)
        s2 = 1.0 / np.sqrt(hidden)
        self.W1 = rng.uniform(-s1, s1, size=(dim, hidden))
        self.b1 = np.zeros(hidden)
        self.W2 = rng.uniform(-s2, s2, size=(hidden, num_classes))
        self.b2 = np.zeros(num_classes)

    # --- parameter plumbing -------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "embedding": self.embedding,
            "W1": self.W1,
            "b1": self.b1,
            "W2": self.W2,
            "b2": self.b2,
        }

    def copy(self) -> "VictimModel":
        clone = VictimModel.__new__(VictimModel)
        clone.vocab = self.vocab
        clone.dim = self.dim
        clone.hidden = self.hidden
        clone.num_classes = self.num_classes
        clone.activation = self.activation
        clone.embedding = self.embedding.copy()
        clone.W1 = self.W1.copy()
        clone.b1 = self.b1.copy()
        clone.W2 = self.W2.copy()
        clone.b2 = self.b2.copy()
        return clone

    # --- encoding and batching ----------------------------------------------

    def encode(self, tokens) -> np.ndarray:
        ids = self.vocab.encode(tokens)
        if ids.size == 0:
            ids = np.array([self.vocab.pad_id], dtype=np.int64)
        return ids

    def make_batch(self, docs_or_pairs) -> Batch:
        """Pad a list of Documents or (tokens, label) pairs into a Batch."""
        ids_list, labels = [], []
        for item in docs_or_pairs:
            if isinstance(item, Document):
                tokens, label = item.tokens, item.label
            else:
                tokens, label = item
            ids_list.append(self.vocab.encode(tokens))
            labels.append(label)
        L = max(1, max(len(i) for i in ids_list))
        B = len(ids_list)
        ids = np.full((B, L), self.vocab.pad_id, dtype=np.int64)
        mask = np.zeros((B, L))
        for r, row in enumerate(ids_list):
            ids[r, : len(row)] = row
            mask[r, : len(row)] = 1.0
        return Batch(ids=ids, mask=mask, labels=np.array(labels, dtype=np.int64))

    # --- forward / backward ---------------------------------------------------

    def forward(self, ids: np.ndarray, mask: np.ndarray, delta: np.ndarray | None = None) -> ForwardTrace:
        """Run the network; retains every intermediate needed by backprop.

        An all-PAD row (empty document) pools the PAD embedding alone and
        flags the trace degenerate.
        """
        ids = np.atleast_2d(ids)
        mask = np.atleast_2d(mask).astype(float)
        counts = mask.sum(axis=1)
        pool_mask = mask.copy()
        pool_mask[counts == 0, 0] = 1.0  # PAD-only pooling for empty rows
        counts = pool_mask.sum(axis=1)

        embedded = self.embedding[ids]
        perturb_mask = pool_mask * (ids != self.vocab.pad_id)
        degenerate = bool(np.any(perturb_mask.sum(axis=1) == 0))
        if delta is not None:
            embedded = embedded + delta * perturb_mask[:, :, None]
        pooled = (embedded * pool_mask[:, :, None]).sum(axis=1) / counts[:, None]
        z1 = pooled @ self.W1 + self.b1
        a1 = np.tanh(z1) if self.activation == "tanh" else np.maximum(z1, 0.0)
        logits = a1 @ self.W2 + self.b2
        probs = _softmax(logits)
        return ForwardTrace(
            ids=ids,
            mask=pool_mask,
            perturb_mask=perturb_mask,
            embedded=embedded,
            pooled=pooled,
            z1=z1,
            a1=a1,
            logits=logits,
            probs=probs,
            degenerate=degenerate,
        )

    def loss_and_grads(
        self,
        batch: Batch,
        delta: np.ndarray | None = None,
        batch_id=None,
    ) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
        """Mean cross-entropy, parameter gradients, and the input gradient.

        The returned input gradient has the batch embedding shape (B, L, d)
        and is zero at PAD positions; it is the gradient of the loss w.r.t.
        an additive perturbation of the input embeddings.
        """
        loss, grads, g_delta, _ = self._loss_grads_trace(batch, delta=delta, batch_id=batch_id)
        return loss, grads, g_delta

    def _loss_grads_trace(
        self,
        batch: Batch,
        delta: np.ndarray | None = None,
        batch_id=None,
    ):
        if delta is not None and delta.shape != (*batch.ids.shape, self.dim):
            raise ValueError(
                f"delta shape {delta.shape} does not match batch embedding shape "
                f"{(*batch.ids.shape, self.dim)}"
            )
        trace = self.forward(batch.ids, batch.mask, delta=delta)
        B = batch.size
        logp = trace.logits - _logsumexp(trace.logits)
        loss = float(-logp[np.arange(B), batch.labels].mean())
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"non-finite loss in batch {batch_id!r}")

        dlogits = trace.probs.copy()
        dlogits[np.arange(B), batch.labels] -= 1.0
        dlogits /= B

        dW2 = trace.a1.T @ dlogits
        db2 = dlogits.sum(axis=0)
        da1 = dlogits @ self.W2.T
        if self.activation == "tanh":
            dz1 = da1 * (1.0 - trace.a1**2)
        else:
            dz1 = da1 * (trace.z1 > 0.0)
        dW1 = trace.pooled.T @ dz1
        db1 = dz1.sum(axis=0)
        dpooled = dz1 @ self.W1.T

        counts = trace.mask.sum(axis=1)
        dX = (trace.mask / counts[:, None])[:, :, None] * dpooled[:, None, :]
        g_delta = dX * trace.perturb_mask[:, :, None]

        dE = np.zeros_like(self.embedding)
        np.add.at(dE, trace.ids.ravel(), g_delta.reshape(-1, self.dim))
        dE[self.vocab.pad_id] = 0.0

        grads = {"embedding": dE, "W1": dW1, "b1": db1, "W2": dW2, "b2": db2}
        return loss, grads, g_delta, trace

    # --- prediction -----------------------------------------------------------

    def predict_logits(self, tokens) -> np.ndarray:
        ids = self.encode(tokens)
        trace = self.forward(ids[None, :], np.ones((1, len(ids))))
        return trace.logits[0]

    def predict_proba(self, tokens) -> np.ndarray:
        return _softmax(self.predict_logits(tokens)[None, :])[0]

    def predict(self, tokens) -> int:
        return int(np.argmax(self.predict_logits(tokens)))

    def predict_proba_batch(self, token_seqs) -> np.ndarray:
        """Probabilities for many token sequences in one padded forward."""
        if not token_seqs:
            return np.zeros((0, self.num_classes))
        batch = self.make_batch([(t, 0) for t in token_seqs])
        trace = self.forward(batch.ids, batch.mask)
        return trace.probs

    def sgd_step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.embedding -= lr * grads["embedding"]
        self.embedding[self.vocab.pad_id] = 0.0
        self.W1 -= lr * grads["W1"]
        self.b1 -= lr * grads["b1"]
        self.W2 -= lr * grads["W2"]
        self.b2 -= lr * grads["b2"]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _logsumexp(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    return m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))


# --- training ----------------------------------------------------------------


def sgd_epochs(
    model: VictimModel,
    docs,
    epochs: int,
    seed: int,
    batch_size: int,
    step_fn,
) -> list[EpochStats]:
    """Shared SGD skeleton: seeded shuffling, per-epoch loss and accuracy.

    ``step_fn(model, chunk, epoch) -> (loss, n_correct)`` receives the
    shuffled document chunk and performs one parameter update. The shuffle
    RNG stream is independent of anything a step_fn draws, so trainers
    that degenerate to plain SGD reproduce it bit for bit.
    """
    docs = list(docs)
    stats: list[EpochStats] = []
    shuffle_rng = np.random.default_rng([seed, 0x5A])
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(docs))
        total_loss = 0.0
        total_correct = 0
        for start in range(0, len(order), batch_size):
            chunk = [docs[i] for i in order[start : start + batch_size]]
            try:
                loss, correct = step_fn(model, chunk, epoch)
            except NonFiniteLossError as e:
                raise NonFiniteLossError(f"diverged at epoch {epoch}: {e}") from e
            total_loss += loss * len(chunk)
            total_correct += correct
        stats.append(
            EpochStats(
                epoch=epoch,
                loss=total_loss / len(docs),
                accuracy=total_correct / len(docs),
            )
        )
    return stats


def train(
    model: VictimModel,
    dataset: Dataset,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
) -> list[EpochStats]:
    """Plain SGD training with seeded shuffling; epochs=0 is a no-op."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")

    def step(m, chunk, epoch):
        batch = m.make_batch(chunk)
        loss, grads, _, trace = m._loss_grads_trace(batch)
        correct = int((np.argmax(trace.probs, axis=1) == batch.labels).sum())
        m.sgd_step(grads, lr)
        return loss, correct

    return sgd_epochs(model, dataset.documents, epochs, seed, batch_size, step_fn=step)


# --- checkpoint io -------------------------------------------------------------


def save_checkpoint(model: VictimModel, path: str | Path) -> None:
    """Write a versioned binary checkpoint with deterministic bytes."""
    header = {
        "version": CHECKPOINT_VERSION,
        "dim": model.dim,
        "hidden": model.hidden,
        "num_classes": model.num_classes,
        "activation": model.activation,
        "vocab": model.vocab.id_to_word,
        "arrays": [
            {"name": name, "shape": list(arr.shape)}
            for name, arr in model.parameters().items()
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for name in PARAM_NAMES:
            f.write(np.ascontiguousarray(model.parameters()[name], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> VictimModel:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    hlen = int.from_bytes(raw[4:12], "little")
    header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    vocab = Vocabulary.from_words([])
    vocab.id_to_word = list(header["vocab"])
    vocab.word_to_id = {w: i for i, w in enumerate(vocab.id_to_word)}
    model = VictimModel(
        vocab=vocab,
        dim=header["dim"],
        hidden=header["hidden"],
        num_classes=header["num_classes"],
        activation=header["activation"],
    )
    offset = 12 + hlen
    params = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape)
        params[spec["name"]] = arr.astype(np.float64)
        offset += n * 8
    model.embedding = params["embedding"].copy()
    model.W1 = params["W1"].copy()
    model.b1 = params["b1"].copy()
    model.W2 = params["W2"].copy()
    model.b2 = params["b2"].copy()
    return model


def checkpoint_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def parameter_hash(model: VictimModel) -> str:
    """Hash of the parameter values alone, without writing a checkpoint."""
    h = hashlib.sha256()
    for name in PARAM_NAMES:
        arr = model.parameters()[name]
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()
