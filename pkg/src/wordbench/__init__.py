"""wordbench: adversarial word-substitution attacks, defenses, and metrics
for text classifiers, at desk scale.
"""

from .attack import (
    AttackConstraints,
    AttackOutcome,
    AttackRecipe,
    Attacker,
    brute_force_attack,
    candidates,
    greedy_attack,
    modification_ratio,
    query_budget,
    typo_candidates,
    word_importance,
)
from .bench import (
    BenchContext,
    DefenseSetup,
    SweepSpec,
    evaluate_clean,
    evaluate_under_attack,
    run_benchmark,
    sweep,
)
from .certify import certify_attack
from .corpus import (
    Dataset,
    Document,
    Vocabulary,
    load_dataset,
    sample_eval,
    save_dataset,
    tokenize,
)
from .defense import DefenseConfig, PerturbState, ascend, train_defended
from .embeddings import (
    EmbeddingTable,
    SynonymIndex,
    build_synonym_index,
    load_embeddings,
    sentence_similarity,
)
from .ensemble import EnsembleConfig, EnsemblePredictor, ensemble_predict
from .synthetic import ToyConfig, make_toy_benchmark, write_toy_benchmark
from .victim import VictimModel, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AttackConstraints",
    "AttackOutcome",
    "AttackRecipe",
    "Attacker",
    "BenchContext",
    "Dataset",
    "DefenseConfig",
    "DefenseSetup",
    "Document",
    "EmbeddingTable",
    "EnsembleConfig",
    "EnsemblePredictor",
    "PerturbState",
    "SweepSpec",
    "SynonymIndex",
    "ToyConfig",
    "VictimModel",
    "Vocabulary",
    "ascend",
    "brute_force_attack",
    "build_synonym_index",
    "candidates",
    "certify_attack",
    "ensemble_predict",
    "evaluate_clean",
    "evaluate_under_attack",
    "greedy_attack",
    "load_checkpoint",
    "load_dataset",
    "load_embeddings",
    "make_toy_benchmark",
    "modification_ratio",
    "query_budget",
    "run_benchmark",
    "sample_eval",
    "save_checkpoint",
    "save_dataset",
    "sentence_similarity",
    "sweep",
    "tokenize",
    "train",
    "train_defended",
    "typo_candidates",
    "word_importance",
    "write_toy_benchmark",
]
