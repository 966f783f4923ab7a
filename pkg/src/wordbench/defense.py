"""Defense trainers: data augmentation, embedding-space adversarial
training (PGD-K, FreeLB, FreeLB++), and randomized-smoothing training.

All gradient methods share one ascent primitive: a normalized gradient
step on an additive input-embedding perturbation, optionally projected
back onto a Frobenius-norm ball. Removing the projection bounds the
perturbation norm by steps * alpha instead of epsilon, which is the whole
point of the ++ variants.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dataset, Document, UNK_TOKEN
from .embeddings import SynonymIndex
from .victim import Batch, EpochStats, VictimModel, sgd_epochs

GRAD_NORM_FLOOR = 1e-12

METHODS = ("none", "ada", "pgd_k", "freelb", "freelb_pp", "smooth_mask", "smooth_synonym")
GRADIENT_METHODS = ("pgd_k", "freelb", "freelb_pp")


@dataclass
class PerturbState:
    """An input-embedding perturbation mid-ascent."""

    delta: np.ndarray          # same shape as the batch embeddings (B, L, d)
    t: int = 0                 # ascent steps taken
    alpha: float = 0.1
    epsilon: float | None = None
    project: bool = False
    degenerate_steps: int = 0  # steps skipped because the gradient vanished

    @classmethod
    def zeros(cls, batch: Batch, dim: int, alpha: float, epsilon: float | None, project: bool):
        return cls(
            delta=np.zeros((*batch.ids.shape, dim)),
            alpha=alpha,
            epsilon=epsilon,
            project=project,
        )


def _ascent_update(state: PerturbState, g: np.ndarray) -> None:
    """delta += alpha * g/||g||_F, then project onto the epsilon ball if asked."""
    gnorm = float(np.sqrt((g * g).sum()))
    if gnorm < GRAD_NORM_FLOOR:
        state.degenerate_steps += 1
    else:
        state.delta = state.delta + state.alpha * (g / gnorm)
        if state.project and state.epsilon is not None:
            dnorm = float(np.sqrt((state.delta * state.delta).sum()))
            # the 1e-12 relative slack keeps a ball of radius exactly t*alpha
            # from binding on rounding noise, so projected and unprojected
            # trajectories stay bitwise identical whenever epsilon >= t*alpha
            if dnorm > state.epsilon * (1.0 + 1e-12):
                state.delta = state.delta * (state.epsilon / dnorm)
    state.t += 1


def ascend(model: VictimModel, batch: Batch, state: PerturbState) -> PerturbState:
    """One projected-gradient ascent step on the batch perturbation."""
    _, _, g = model.loss_and_grads(batch, delta=state.delta)
    _ascent_update(state, g)
    return state


@dataclass
class DefenseConfig:
    """Everything a defense trainer needs, seeds included."""

    method: str = "none"
    steps: int = 1             # ascent steps t for gradient methods
    alpha: float = 0.1
    epsilon: float | None = None  # Frobenius ball radius; None disables projection
    ada_rounds: int = 2
    ada_mix: float = 1.0       # adversarial examples added per round, as a
    ada_sample: int = 128      # fraction of the attacked subsample size
    mask_rate: float = 0.15
    epochs: int = 10
    lr: float = 0.5
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown defense method {self.method!r}")
        if self.method in GRADIENT_METHODS and self.steps < 1:
            raise ValueError("gradient methods need steps >= 1")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError("mask_rate must be in [0, 1]")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def pgd_train(model: VictimModel, dataset: Dataset, config: DefenseConfig) -> list[EpochStats]:
    """Min-max training: t ascent steps from a zero perturbation, then one
    parameter step on the loss at the final perturbation.

    Projection applies iff config.epsilon is set.
    """
    if config.method != "pgd_k":
        raise ValueError(f"pgd_train got method {config.method!r}")
    project = config.epsilon is not None

    def step(m: VictimModel, chunk, epoch: int):
        batch = m.make_batch(chunk)
        state = PerturbState.zeros(batch, m.dim, config.alpha, config.epsilon, project)
        for _ in range(config.steps):
            ascend(m, batch, state)
        loss, grads, _, _ = m._loss_grads_trace(batch, delta=state.delta)
        clean = m.forward(batch.ids, batch.mask)
        correct = int((np.argmax(clean.probs, axis=1) == batch.labels).sum())
        m.sgd_step(grads, config.lr)
        return loss, correct

    return sgd_epochs(
        model, dataset.documents, config.epochs, config.seed, config.batch_size, step
    )


def freelb_train(model: VictimModel, dataset: Dataset, config: DefenseConfig) -> list[EpochStats]:
    """Free adversarial training: accumulate parameter gradients along the
    ascent trajectory and update with their mean.

    The perturbation starts uniform in [-alpha/sqrt(d), alpha/sqrt(d)] per
    coordinate on real token positions. freelb projects onto the epsilon
    ball when epsilon is set; freelb_pp never projects. Averaging (not
    summing) the t gradients keeps the step count from scaling the
    learning rate.
    """
    if config.method not in ("freelb", "freelb_pp"):
        raise ValueError(f"freelb_train got method {config.method!r}")
    project = config.method == "freelb" and config.epsilon is not None
    init_rng = np.random.default_rng([config.seed, 0xF1])
    bound = config.alpha / np.sqrt(model.dim)

    def step(m: VictimModel, chunk, epoch: int):
        batch = m.make_batch(chunk)
        shape = (*batch.ids.shape, m.dim)
        perturbable = (batch.mask * (batch.ids != m.vocab.pad_id))[:, :, None]
        delta0 = init_rng.uniform(-bound, bound, size=shape) * perturbable
        state = PerturbState(
            delta=delta0, alpha=config.alpha, epsilon=config.epsilon, project=project
        )
        accum = None
        loss_sum = 0.0
        for _ in range(config.steps):
            loss, grads, g, _ = m._loss_grads_trace(batch, delta=state.delta)
            loss_sum += loss
            if accum is None:
                accum = {k: v.copy() for k, v in grads.items()}
            else:
                for k in accum:
                    accum[k] += grads[k]
            _ascent_update(state, g)
        mean_grads = {k: v / config.steps for k, v in accum.items()}
        clean = m.forward(batch.ids, batch.mask)
        correct = int((np.argmax(clean.probs, axis=1) == batch.labels).sum())
        m.sgd_step(mean_grads, config.lr)
        return loss_sum / config.steps, correct

    return sgd_epochs(
        model, dataset.documents, config.epochs, config.seed, config.batch_size, step
    )


def smooth_train(
    model: VictimModel,
    dataset: Dataset,
    config: DefenseConfig,
    index: SynonymIndex | None = None,
) -> list[EpochStats]:
    """Train on randomly perturbed copies of each example, fresh every epoch.

    smooth_mask replaces each token by the UNK marker independently with
    the mask rate; smooth_synonym replaces each token by a uniform draw
    from its defender-index list (kept when the list is empty).
    """
    if config.method not in ("smooth_mask", "smooth_synonym"):
        raise ValueError(f"smooth_train got method {config.method!r}")
    if config.method == "smooth_synonym" and index is None:
        raise ValueError("smooth_synonym needs a defender index")
    perturb_rng = np.random.default_rng([config.seed, 0x57])

    def perturb(tokens) -> list[str]:
        if config.method == "smooth_mask":
            flips = perturb_rng.random(len(tokens)) < config.mask_rate
            return [UNK_TOKEN if f else t for t, f in zip(tokens, flips)]
        out = []
        for t in tokens:
            cands = index.candidates(t)
            out.append(cands[perturb_rng.integers(len(cands))] if cands else t)
        return out

    def step(m: VictimModel, chunk, epoch: int):
        noisy = m.make_batch([(perturb(d.tokens), d.label) for d in chunk])
        loss, grads, _, trace = m._loss_grads_trace(noisy)
        correct = int((np.argmax(trace.probs, axis=1) == noisy.labels).sum())
        m.sgd_step(grads, config.lr)
        return loss, correct

    return sgd_epochs(
        model, dataset.documents, config.epochs, config.seed, config.batch_size, step
    )


def ada_train(
    model: VictimModel,
    dataset: Dataset,
    config: DefenseConfig,
    attacker=None,
) -> list[EpochStats]:
    """Adversarial data augmentation.

    Train, then alternate rounds of attacking a training subsample and
    appending the successful adversarial examples (with their original
    labels) to the pool before continuing training. A mix ratio of zero
    short-circuits to plain training. Rounds that yield no successes are
    logged and training simply continues.
    """
    if config.method != "ada":
        raise ValueError(f"ada_train got method {config.method!r}")
    from .victim import train as plain_train

    if config.ada_mix <= 0.0:
        return plain_train(
            model, dataset, config.epochs, config.lr, config.seed, config.batch_size
        )
    if attacker is None:
        raise ValueError("ada_train needs an attacker when ada_mix > 0")

    stats = plain_train(
        model, dataset, config.epochs, config.lr, config.seed, config.batch_size
    )
    pool = list(dataset.documents)
    next_id = max(d.id for d in pool) + 1
    for rnd in range(config.ada_rounds):
        rng = np.random.default_rng([config.seed, 0xADA, rnd])
        n_sub = min(config.ada_sample, len(dataset.documents))
        picks = rng.choice(len(dataset.documents), size=n_sub, replace=False)
        added = 0
        cap = int(config.ada_mix * n_sub)
        for i in picks:
            if added >= cap:
                break
            doc = dataset.documents[i]
            outcome = attacker.run(model, doc)
            if outcome.status == "success":
                pool.append(
                    Document(
                        id=next_id,
                        label=doc.label,
                        tokens=outcome.adversarial_tokens,
                        raw=" ".join(outcome.adversarial_tokens),
                    )
                )
                next_id += 1
                added += 1
        round_set = Dataset(documents=pool, num_classes=dataset.num_classes, split="ada-pool")
        stats += plain_train(
            model,
            round_set,
            config.epochs,
            config.lr,
            seed=config.seed + 1 + rnd,
            batch_size=config.batch_size,
        )
    return stats


def train_defended(
    model: VictimModel,
    dataset: Dataset,
    config: DefenseConfig,
    index: SynonymIndex | None = None,
    attacker=None,
) -> list[EpochStats]:
    """Dispatch to the trainer owning config.method."""
    if config.method == "none":
        from .victim import train as plain_train

        return plain_train(
            model, dataset, config.epochs, config.lr, config.seed, config.batch_size
        )
    if config.method == "pgd_k":
        return pgd_train(model, dataset, config)
    if config.method in ("freelb", "freelb_pp"):
        return freelb_train(model, dataset, config)
    if config.method in ("smooth_mask", "smooth_synonym"):
        return smooth_train(model, dataset, config, index=index)
    return ada_train(model, dataset, config, attacker=attacker)


def write_defense_manifest(
    path: str | Path, config: DefenseConfig, checkpoint_hash: str, extra: dict | None = None
) -> None:
    """Record the full config and checkpoint hash next to every checkpoint."""
    record = {
        "config": config.to_json(),
        "checkpoint_sha256": checkpoint_hash,
    }
    if extra:
        record.update(extra)
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True), encoding="utf-8")
