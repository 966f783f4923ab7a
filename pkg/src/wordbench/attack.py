"""Constrained greedy word-substitution attacks.

The attacker ranks positions by importance, tries candidate substitutions
in rank order, and keeps the swap that most lowers the true-class
probability, subject to four hard budgets: minimum sentence similarity,
candidate-list size, modification ratio, and total model queries. Every
model call flows through a single query counter so the query budget can
never be bypassed.
"""

from __future__ import annotations

import itertools
import json
import string
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .corpus import Document, UNK_TOKEN
from .embeddings import EmbeddingTable, SynonymIndex, sentence_similarity

RECIPE_NAMES = ("synonym-greedy", "typo-greedy", "mixed-greedy")
ORDERINGS = ("deletion-importance", "saliency-weighted")

STATUS_SUCCESS = "success"
STATUS_FAILED = "failed"
STATUS_SKIPPED = "skipped-misclassified"

_ALPHABET = string.ascii_lowercase


class InstanceTooLargeError(ValueError):
    """Brute-force oracle refused an instance that would blow up."""


@dataclass(frozen=True)
class AttackConstraints:
    """The four attack budgets.

    ``queries`` is either "kxl" (budget = k_max * sentence length) or
    "fixed:N" for a flat budget of N model calls.
    """

    epsilon_min: float = 0.84
    k_max: int = 50
    rho_max: float = 0.3
    queries: str = "kxl"

    def __post_init__(self):
        if not 0.0 <= self.epsilon_min <= 1.0:
            raise ValueError(f"epsilon_min must be in [0, 1], got {self.epsilon_min}")
        if self.k_max < 1:
            raise ValueError(f"k_max must be >= 1, got {self.k_max}")
        if not 0.0 < self.rho_max <= 1.0:
            raise ValueError(f"rho_max must be in (0, 1], got {self.rho_max}")
        _parse_query_policy(self.queries)


def _parse_query_policy(spec: str) -> int | None:
    """Returns the fixed budget, or None for the k*L policy."""
    if spec == "kxl":
        return None
    if spec.startswith("fixed:"):
        try:
            n = int(spec.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad query policy {spec!r}") from None
        if n < 1:
            raise ValueError(f"fixed query budget must be >= 1, got {n}")
        return n
    raise ValueError(f"bad query policy {spec!r}; use 'kxl' or 'fixed:N'")


def query_budget(constraints: AttackConstraints, L: int) -> int:
    """Maximum model queries allowed against a sentence of length L."""
    if L < 1:
        raise ValueError("sentence length must be >= 1")
    fixed = _parse_query_policy(constraints.queries)
    return constraints.k_max * L if fixed is None else fixed


def max_substitutions(constraints: AttackConstraints, L: int) -> int:
    """Largest substitution count whose ratio stays within rho_max."""
    return int(np.floor(constraints.rho_max * L + 1e-9))


def modification_ratio(original, adversarial) -> float:
    """Hamming distance over length; substitution never changes length."""
    if len(original) != len(adversarial):
        raise ValueError(
            f"length mismatch: {len(original)} vs {len(adversarial)} tokens"
        )
    changed = sum(1 for a, b in zip(original, adversarial) if a != b)
    return changed / len(original)


@dataclass(frozen=True)
class AttackRecipe:
    """Names the candidate source and the position-ordering heuristic."""

    name: str = "synonym-greedy"
    ordering: str = "deletion-importance"

    def __post_init__(self):
        if self.name not in RECIPE_NAMES:
            raise ValueError(f"unknown recipe {self.name!r}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering {self.ordering!r}")


class TraceStep(NamedTuple):
    position: int
    word: str
    true_prob: float


@dataclass
class AttackOutcome:
    """The certified result of one attack run."""

    status: str
    adversarial_tokens: tuple[str, ...] | None
    queries_used: int
    rho: float
    similarity: float
    trace: tuple[TraceStep, ...] = ()
    ranking_partial: bool = False


class QueryCounter:
    """The single choke point for attacker queries to the victim.

    One call to the predictor counts as one query regardless of any
    ensemble size inside the predictor; the attacker sees one API call.
    """

    def __init__(self, predictor, budget: int):
        self.predictor = predictor
        self.budget = budget
        self.used = 0

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    @property
    def exhausted(self) -> bool:
        return self.used >= self.budget

    def query(self, tokens) -> np.ndarray | None:
        """Probabilities for one sentence, or None once the budget is spent."""
        if self.exhausted:
            return None
        self.used += 1
        return self.predictor.predict_proba(tokens)

    def query_batch(self, token_seqs) -> tuple[np.ndarray, int]:
        """Query up to the remaining budget, in order; returns (probs, n)."""
        n = min(len(token_seqs), self.remaining)
        if n == 0:
            return np.zeros((0, 0)), 0
        self.used += n
        return self.predictor.predict_proba_batch(token_seqs[:n]), n


# --- candidate generation -----------------------------------------------------


def typo_candidates(word: str, k_max: int) -> list[str]:
    """Deterministic single-character edits: swap, delete, insert, substitute.

    Edits are enumerated edit-type first, then position, then character.
    Words of length >= 4 keep their first and last characters untouched so
    the typo stays readable; words shorter than 3 characters only get
    substitutions.
    """
    n = len(word)
    if n == 0 or k_max < 1:
        return []
    out: list[str] = []
    seen = {word}

    def push(w: str) -> bool:
        if w and w not in seen:
            seen.add(w)
            out.append(w)
        return len(out) >= k_max

    if n < 3:
        for i in range(n):
            for ch in _ALPHABET:
                if ch != word[i] and push(word[:i] + ch + word[i + 1 :]):
                    return out
        return out

    protect = n >= 4
    swap_positions = range(1, n - 2) if protect else range(n - 1)
    for i in swap_positions:
        if word[i] != word[i + 1]:
            if push(word[:i] + word[i + 1] + word[i] + word[i + 2 :]):
                return out
    delete_positions = range(1, n - 1) if protect else range(n)
    for i in delete_positions:
        if push(word[:i] + word[i + 1 :]):
            return out
    insert_positions = range(1, n) if protect else range(n + 1)
    for i in insert_positions:
        for ch in _ALPHABET:
            if push(word[:i] + ch + word[i:]):
                return out
    sub_positions = range(1, n - 1) if protect else range(n)
    for i in sub_positions:
        for ch in _ALPHABET:
            if ch != word[i] and push(word[:i] + ch + word[i + 1 :]):
                return out
    return out


def candidates(
    word: str,
    recipe: AttackRecipe,
    k_max: int,
    index: SynonymIndex | None = None,
) -> list[str]:
    """Candidate replacement words for one position, capped at k_max."""
    if recipe.name == "typo-greedy":
        return typo_candidates(word, k_max)
    if index is None:
        raise ValueError(f"recipe {recipe.name} needs an attacker synonym index")
    synonyms = index.candidates(word, k_max)
    if recipe.name == "synonym-greedy":
        return synonyms
    # mixed: interleave synonyms with typos, dedupe, cap
    typos = typo_candidates(word, k_max)
    merged: list[str] = []
    seen = {word}
    for syn, typo in itertools.zip_longest(synonyms, typos):
        for cand in (syn, typo):
            if cand is not None and cand not in seen:
                seen.add(cand)
                merged.append(cand)
                if len(merged) == k_max:
                    return merged
    return merged


# --- importance ranking ---------------------------------------------------------


def word_importance(
    counter: QueryCounter,
    tokens,
    true_label: int,
    base_true_prob: float,
    ordering: str = "deletion-importance",
    recipe: AttackRecipe | None = None,
    k_max: int | None = None,
    index: SynonymIndex | None = None,
) -> tuple[list[int], bool]:
    """Positions in descending attack priority; ties go to the leftmost.

    deletion-importance scores a position by the drop in true-class
    probability when its token is replaced by the UNK marker (one query
    per position). saliency-weighted multiplies that score by the largest
    candidate-induced drop at the position, clamped at zero. If the query
    budget dies mid-ranking the positions scored so far are returned and
    the partial flag is set.
    """
    tokens = list(tokens)
    L = len(tokens)
    variants = [tokens[:i] + [UNK_TOKEN] + tokens[i + 1 :] for i in range(L)]
    probs, n = counter.query_batch(variants)
    partial = n < L
    scores = [base_true_prob - float(probs[i, true_label]) for i in range(n)]
    scored = list(range(n))

    if ordering == "saliency-weighted":
        weights: list[float] = []
        for i in scored:
            cands = candidates(tokens[i], recipe, k_max, index)
            if not cands:
                weights.append(0.0)
                continue
            cand_variants = [tokens[:i] + [c] + tokens[i + 1 :] for c in cands]
            cprobs, m = counter.query_batch(cand_variants)
            if m < len(cand_variants):
                partial = True
            if m == 0:
                break  # budget gone; positions past here drop from the ranking
            drop_est = base_true_prob - float(cprobs[:m, true_label].min())
            weights.append(max(drop_est, 0.0))
        scored = scored[: len(weights)]
        scores = [scores[i] * weights[i] for i in range(len(weights))]

    ranked = sorted(scored, key=lambda i: (-scores[i], i))
    return ranked, partial


# --- greedy attack ---------------------------------------------------------------


def greedy_attack(
    predictor,
    document: Document,
    constraints: AttackConstraints,
    recipe: AttackRecipe,
    index: SynonymIndex | None = None,
    sim_table: EmbeddingTable | None = None,
    seed: int = 0,
) -> AttackOutcome:
    """Greedy search for a budget-certified adversarial example.

    Flow: (1) one query checks the clean prediction; a misclassified input
    is skipped without any substitution attempt. (2) positions are ranked.
    (3) in rank order, candidates that keep the sentence similarity at or
    above epsilon_min and the modification ratio within rho_max are
    queried; the one with the largest true-class probability drop is kept
    if it lowers the probability at all. Each position is substituted at
    most once. (4) the search stops at a label flip (success) or when
    positions, the query budget, or the ratio budget run out (failed).

    Candidates that fail the similarity or ratio constraint are discarded
    before querying, so budget is only spent on admissible sentences.
    ``seed`` is reserved for stochastic recipes; the bundled recipes are
    fully deterministic.
    """
    if sim_table is None:
        raise ValueError("greedy_attack needs a sim_table for the similarity budget")
    tokens = list(document.tokens)
    L = len(tokens)
    y = document.label
    counter = QueryCounter(predictor, query_budget(constraints, L))

    probs0 = counter.query(tokens)
    if int(np.argmax(probs0)) != y:
        return AttackOutcome(
            status=STATUS_SKIPPED,
            adversarial_tokens=None,
            queries_used=counter.used,
            rho=0.0,
            similarity=1.0,
            trace=(),
        )

    ranked, partial = word_importance(
        counter,
        tokens,
        y,
        base_true_prob=float(probs0[y]),
        ordering=recipe.ordering,
        recipe=recipe,
        k_max=constraints.k_max,
        index=index,
    )

    current = tokens[:]
    p_cur = float(probs0[y])
    subs = 0
    budget_subs = max_substitutions(constraints, L)
    trace: list[TraceStep] = []
    status = STATUS_FAILED

    for pos in ranked:
        if subs >= budget_subs or counter.exhausted:
            break
        cand_words = candidates(current[pos], recipe, constraints.k_max, index)
        feasible: list[tuple[str, list[str]]] = []
        for cand in cand_words:
            tentative = current[:]
            tentative[pos] = cand
            sim = sentence_similarity(tokens, tentative, sim_table).value
            if sim >= constraints.epsilon_min:
                feasible.append((cand, tentative))
        if not feasible:
            continue
        probs, n = counter.query_batch([t for _, t in feasible])
        best = None
        for k in range(n):
            p_true = float(probs[k, y])
            if best is None or p_cur - p_true > best[0]:
                best = (p_cur - p_true, k, p_true)
        if best is None or best[0] <= 0.0:
            continue  # nothing lowers the true-class probability: give up here
        drop, k, p_true = best
        current = feasible[k][1]
        subs += 1
        p_cur = p_true
        trace.append(TraceStep(position=pos, word=feasible[k][0], true_prob=p_true))
        if int(np.argmax(probs[k])) != y:
            status = STATUS_SUCCESS
            break

    similarity = sentence_similarity(tokens, current, sim_table).value
    return AttackOutcome(
        status=status,
        adversarial_tokens=tuple(current) if status == STATUS_SUCCESS else None,
        queries_used=counter.used,
        rho=subs / L,
        similarity=similarity,
        trace=tuple(trace),
        ranking_partial=partial,
    )


# --- exhaustive oracle -------------------------------------------------------------


def brute_force_attack(
    predictor,
    document: Document,
    constraints: AttackConstraints,
    recipe: AttackRecipe,
    index: SynonymIndex | None = None,
    sim_table: EmbeddingTable | None = None,
) -> AttackOutcome:
    """Exhaustive substitution search on tiny instances; the greedy oracle.

    Enumerates every position subset within the ratio budget (smallest
    first) and every candidate assignment, returning a minimal-ratio valid
    adversarial example or failure. Ignores the query budget by design;
    refuses instances with L > 8 or candidate lists longer than 4.
    """
    tokens = list(document.tokens)
    L = len(tokens)
    y = document.label
    if L > 8:
        raise InstanceTooLargeError(f"instance too large: L={L} > 8")
    if constraints.k_max > 4:
        raise InstanceTooLargeError(f"instance too large: k_max={constraints.k_max} > 4")
    if sim_table is None:
        raise ValueError("brute_force_attack needs a sim_table")

    queries = 1
    probs0 = predictor.predict_proba(tokens)
    if int(np.argmax(probs0)) != y:
        return AttackOutcome(
            status=STATUS_SKIPPED,
            adversarial_tokens=None,
            queries_used=queries,
            rho=0.0,
            similarity=1.0,
        )

    cand_lists = [candidates(tokens[i], recipe, constraints.k_max, index) for i in range(L)]
    for r in range(1, max_substitutions(constraints, L) + 1):
        for combo in itertools.combinations(range(L), r):
            lists = [cand_lists[i] for i in combo]
            if any(not lst for lst in lists):
                continue
            variants = []
            for assignment in itertools.product(*lists):
                adv = tokens[:]
                for pos, word in zip(combo, assignment):
                    adv[pos] = word
                sim = sentence_similarity(tokens, adv, sim_table).value
                if sim >= constraints.epsilon_min:
                    variants.append((adv, assignment, sim))
            if not variants:
                continue
            probs = predictor.predict_proba_batch([v[0] for v in variants])
            queries += len(variants)
            for k, (adv, assignment, sim) in enumerate(variants):
                if int(np.argmax(probs[k])) != y:
                    steps = tuple(
                        TraceStep(position=pos, word=word, true_prob=float(probs[k, y]))
                        for pos, word in zip(combo, assignment)
                    )
                    return AttackOutcome(
                        status=STATUS_SUCCESS,
                        adversarial_tokens=tuple(adv),
                        queries_used=queries,
                        rho=r / L,
                        similarity=sim,
                        trace=steps,
                    )
    return AttackOutcome(
        status=STATUS_FAILED,
        adversarial_tokens=None,
        queries_used=queries,
        rho=0.0,
        similarity=1.0,
    )


# --- convenience wrapper and trace log ------------------------------------------------


@dataclass
class Attacker:
    """Bundles a recipe with its candidate index and similarity table."""

    recipe: AttackRecipe
    constraints: AttackConstraints
    index: SynonymIndex | None = None
    sim_table: EmbeddingTable | None = None
    name: str | None = None

    def run(self, predictor, document: Document, seed: int = 0) -> AttackOutcome:
        return greedy_attack(
            predictor,
            document,
            self.constraints,
            self.recipe,
            index=self.index,
            sim_table=self.sim_table,
            seed=seed,
        )

    @property
    def label(self) -> str:
        return self.name or self.recipe.name


def trace_record(document: Document, outcome: AttackOutcome) -> dict:
    return {
        "id": document.id,
        "status": outcome.status,
        "queries": outcome.queries_used,
        "rho": outcome.rho,
        "sim": outcome.similarity,
        "trace": [[s.position, s.word, s.true_prob] for s in outcome.trace],
    }


def write_trace_log(records, path: str | Path) -> None:
    """One JSON object per line per attacked document."""
    with Path(path).open("w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trace_log(path: str | Path) -> list[dict]:
    with Path(path).open("r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
