"""Independent re-validation of attack outcomes.

Deliberately re-derives every check from the outcome fields alone, with
its own arithmetic, so a bug in the search path cannot certify itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attack import STATUS_SUCCESS, AttackConstraints
from .corpus import Document
from .embeddings import EmbeddingTable


@dataclass
class Certification:
    ok: bool
    flipped: bool | None
    rho: float | None
    similarity: float | None
    queries_used: int
    budget: int
    failures: tuple[str, ...] = ()


def certify_attack(
    document: Document,
    outcome,
    predictor,
    constraints: AttackConstraints,
    sim_table: EmbeddingTable,
) -> Certification:
    """Re-check every budget on an attack outcome.

    For a success the adversarial tokens must flip the prediction, keep
    the modification ratio within rho_max, keep the mean-vector cosine at
    or above epsilon_min, and the recorded query count must fit the query
    budget. Non-success outcomes only need the query bound.
    """
    failures: list[str] = []
    L = len(document.tokens)
    if constraints.queries == "kxl":
        budget = constraints.k_max * L
    else:
        budget = int(constraints.queries.split(":", 1)[1])
    if outcome.queries_used > budget:
        failures.append(f"queries {outcome.queries_used} > budget {budget}")

    flipped = rho = similarity = None
    if outcome.status == STATUS_SUCCESS:
        adv = outcome.adversarial_tokens
        if adv is None or len(adv) != L:
            failures.append("success outcome without same-length adversarial tokens")
        else:
            probs = predictor.predict_proba(list(adv))
            flipped = int(np.argmax(probs)) != document.label
            if not flipped:
                failures.append("prediction did not flip")
            changed = 0
            for a, b in zip(document.tokens, adv):
                if a != b:
                    changed += 1
            rho = changed / L
            if rho > constraints.rho_max + 1e-12:
                failures.append(f"rho {rho:.4f} > rho_max {constraints.rho_max}")
            similarity = _mean_vector_cosine(document.tokens, adv, sim_table)
            # 1e-9 absorbs ulp-level disagreement between two cosine codepaths
            if similarity < constraints.epsilon_min - 1e-9:
                failures.append(
                    f"similarity {similarity:.4f} < epsilon_min {constraints.epsilon_min}"
                )
    return Certification(
        ok=not failures,
        flipped=flipped,
        rho=rho,
        similarity=similarity,
        queries_used=outcome.queries_used,
        budget=budget,
        failures=tuple(failures),
    )


def _mean_vector_cosine(tokens_a, tokens_b, table: EmbeddingTable) -> float:
    """Clamped cosine of mean word vectors, written out longhand."""
    va = np.zeros(table.dim)
    for t in tokens_a:
        vec = table.vector(t)
        if vec is not None:
            va += vec
    va /= len(tokens_a)
    vb = np.zeros(table.dim)
    for t in tokens_b:
        vec = table.vector(t)
        if vec is not None:
            vb += vec
    vb /= len(tokens_b)
    na = float(np.sqrt((va * va).sum()))
    nb = float(np.sqrt((vb * vb).sum()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(0.0, float((va * vb).sum()) / (na * nb)))
