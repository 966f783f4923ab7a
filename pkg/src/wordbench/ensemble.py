"""Randomized-smoothing ensemble prediction.

A prediction draws C randomly perturbed copies of the input (masking,
synonym substitution, or identity), runs the base classifier on each, and
aggregates either by averaging logits or by majority vote. Vote ensembles
emit near-one-hot probabilities, which starves score-based attackers of
signal.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .corpus import UNK_TOKEN
from .embeddings import SynonymIndex
from .victim import VictimModel, _softmax

STRATEGIES = ("logit", "vote")
PERTURBERS = ("identity", "mask", "synonym")


@dataclass
class EnsembleConfig:
    """How to build and aggregate one smoothed prediction."""

    strategy: str = "logit"
    size: int = 16
    perturber: str = "identity"
    mask_rate: float = 0.15
    index: SynonymIndex | None = None  # defender index for the synonym perturber
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.perturber not in PERTURBERS:
            raise ValueError(f"unknown perturber {self.perturber!r}")
        if self.size < 1:
            raise ValueError("ensemble size must be >= 1")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError("mask_rate must be in [0, 1]")
        if self.perturber == "synonym" and self.index is None:
            raise ValueError("synonym perturber needs a defender index")


@dataclass
class MemberRecord:
    member: int
    label: int
    logits: np.ndarray


def perturb_tokens(tokens, config: EnsembleConfig, rng: np.random.Generator) -> list[str]:
    """One randomized copy of the input under the configured perturber."""
    tokens = list(tokens)
    if config.perturber == "identity":
        return tokens
    if config.perturber == "mask":
        flips = rng.random(len(tokens)) < config.mask_rate
        return [UNK_TOKEN if f else t for t, f in zip(tokens, flips)]
    out = []
    for t in tokens:
        cands = config.index.candidates(t)
        if cands:
            out.append(cands[rng.integers(len(cands))])
        else:
            out.append(t)
    return out


def _call_seed(tokens, config: EnsembleConfig) -> list[int]:
    # stable per-input stream: same tokens and config give identical members
    digest = zlib.crc32(" ".join(tokens).encode("utf-8"))
    return [config.seed, digest]


def ensemble_predict(
    model: VictimModel, tokens, config: EnsembleConfig
) -> tuple[int, np.ndarray, list[MemberRecord]]:
    """Label, aggregate probabilities, and per-member records.

    logit: argmax of the mean member logits, probabilities via softmax of
    the mean. vote: label counts over members, probabilities counts/C.
    Ties resolve to the lowest class index in both strategies.
    """
    rng = np.random.default_rng(_call_seed(tokens, config))
    copies = [perturb_tokens(tokens, config, rng) for _ in range(config.size)]
    batch = model.make_batch([(c, 0) for c in copies])
    trace = model.forward(batch.ids, batch.mask)
    logits = trace.logits
    labels = np.argmax(logits, axis=1)
    members = [
        MemberRecord(member=i, label=int(labels[i]), logits=logits[i])
        for i in range(config.size)
    ]
    if config.strategy == "logit":
        mean_logits = logits.mean(axis=0)
        probs = _softmax(mean_logits[None, :])[0]
        label = int(np.argmax(mean_logits))
    else:
        counts = np.bincount(labels, minlength=model.num_classes)
        probs = counts / config.size
        label = int(np.argmax(counts))
    return label, probs, members


class EnsemblePredictor:
    """Predictor facade over (model, EnsembleConfig) used by attack and bench."""

    def __init__(self, model: VictimModel, config: EnsembleConfig):
        self.model = model
        self.config = config
        self.num_classes = model.num_classes

    def predict_proba(self, tokens) -> np.ndarray:
        _, probs, _ = ensemble_predict(self.model, tokens, self.config)
        return probs

    def predict(self, tokens) -> int:
        label, _, _ = ensemble_predict(self.model, tokens, self.config)
        return label

    def predict_proba_batch(self, token_seqs) -> np.ndarray:
        return np.stack([self.predict_proba(t) for t in token_seqs]) if token_seqs else np.zeros(
            (0, self.num_classes)
        )
