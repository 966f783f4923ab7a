"""Embedding tables, k-NN synonym indices, and sentence similarity.

Attackers and defenders hold separate tables built from separate vector
files; the similarity score used for attack certification is the cosine of
mean word vectors over a designated table, clamped to [0, 1].
"""

from __future__ import annotations

import hashlib
import logging
import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

_NORM_RTOL = 1e-6


class EmbeddingFormatError(ValueError):
    """An embedding file violates the ``word float...`` layout."""


class EmbeddingTable:
    """Dense word vectors with precomputed L2 norms.

    Immutable after construction; shareable across workers.
    """

    def __init__(self, words: list[str], vectors: np.ndarray, duplicate_count: int = 0):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or len(words) != vectors.shape[0]:
            raise ValueError("words and vectors disagree in length")
        self.words = list(words)
        self.vectors = vectors
        self.dim = int(vectors.shape[1])
        self.word_index = {w: i for i, w in enumerate(self.words)}
        self.norms = np.linalg.norm(self.vectors, axis=1)
        self.duplicate_count = duplicate_count

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.word_index

    def vector(self, word: str) -> np.ndarray | None:
        idx = self.word_index.get(word)
        return None if idx is None else self.vectors[idx]


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Parse a ``word v1 v2 ... vd`` text file into an EmbeddingTable.

    The dimension is fixed by the first line; later disagreement raises
    EmbeddingFormatError naming the line. Duplicate words keep the last
    occurrence and are counted on ``table.duplicate_count``.
    """
    path = Path(path)
    words: list[str] = []
    rows: list[list[float]] = []
    slot: dict[str, int] = {}
    dim = None
    duplicates = 0
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise EmbeddingFormatError(f"no vector components at line {lineno}")
            elif len(values) != dim:
                raise EmbeddingFormatError(
                    f"dimension mismatch at line {lineno}: got {len(values)}, expected {dim}"
                )
            try:
                vec = [float(v) for v in values]
            except ValueError:
                raise EmbeddingFormatError(
                    f"non-numeric vector component at line {lineno}"
                ) from None
            if word in slot:
                duplicates += 1
                rows[slot[word]] = vec
            else:
                slot[word] = len(words)
                words.append(word)
                rows.append(vec)
    if not words:
        raise EmbeddingFormatError(f"no vectors in {path}")
    if duplicates:
        logger.warning("%s: %d duplicate words, last occurrence kept", path, duplicates)
    return EmbeddingTable(words, np.array(rows, dtype=np.float64), duplicate_count=duplicates)


@dataclass
class SynonymIndex:
    """Per-word candidate lists ranked by descending cosine.

    Lists never contain the source word and are capped at k_max. k-NN is
    asymmetric: w' in neighbors[w] does not imply w in neighbors[w'].
    """

    neighbors: dict[str, tuple[tuple[str, float], ...]]
    k_max: int
    min_cos: float
    source: str = "attacker"

    def candidates(self, word: str, k: int | None = None) -> list[str]:
        """Top-k candidate words for ``word`` (empty for unknown words)."""
        entries = self.neighbors.get(word, ())
        if k is not None:
            entries = entries[:k]
        return [w for w, _ in entries]

    def vocabulary(self) -> set[str]:
        return set(self.neighbors)


def build_synonym_index(
    table: EmbeddingTable,
    k_max: int,
    min_cos: float = 0.0,
    source: str = "attacker",
    chunk: int = 512,
) -> SynonymIndex:
    """k nearest neighbors by cosine for every word in the table.

    Ties in cosine are broken by lexicographic word order so reports are
    deterministic. Words with zero-norm vectors get empty lists and never
    appear as candidates.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    V = len(table)
    norms = table.norms.copy()
    usable = norms > 0
    safe = np.where(usable, norms, 1.0)
    unit = table.vectors / safe[:, None]
    unit[~usable] = 0.0

    # lexicographic rank per word id, used as the tie-break sort key
    lex_rank = np.empty(V, dtype=np.int64)
    lex_rank[np.argsort(np.array(table.words, dtype=object))] = np.arange(V)

    neighbors: dict[str, tuple[tuple[str, float], ...]] = {}
    for start in range(0, V, chunk):
        stop = min(start + chunk, V)
        cos = unit[start:stop] @ unit.T
        for row, wid in enumerate(range(start, stop)):
            word = table.words[wid]
            if not usable[wid]:
                neighbors[word] = ()
                continue
            c = cos[row].copy()
            c[wid] = -np.inf
            c[~usable] = -np.inf
            order = np.lexsort((lex_rank, -c))
            picked = []
            for j in order:
                if len(picked) == k_max:
                    break
                if c[j] < min_cos or c[j] == -np.inf:
                    break
                picked.append((table.words[j], float(np.clip(c[j], -1.0, 1.0))))
            neighbors[word] = tuple(picked)
    return SynonymIndex(neighbors=neighbors, k_max=k_max, min_cos=min_cos, source=source)


class SimilarityScore(NamedTuple):
    """Sentence similarity in [0, 1] with a degeneracy marker."""

    value: float
    degenerate: bool = False


def sentence_similarity(a, b, table: EmbeddingTable) -> SimilarityScore:
    """Cosine of mean word vectors, clamped to [0, 1].

    Words absent from the table contribute zero vectors. If either mean
    vector is zero the cosine is undefined; the score is 0 with the
    degenerate flag set. Exactly symmetric in its arguments.
    """
    if not a or not b:
        raise ValueError("token sequences must be non-empty")
    ma = _mean_vector(a, table)
    mb = _mean_vector(b, table)
    na = np.linalg.norm(ma)
    nb = np.linalg.norm(mb)
    if na == 0.0 or nb == 0.0:
        return SimilarityScore(0.0, degenerate=True)
    value = float(np.dot(ma, mb) / (na * nb))
    return SimilarityScore(min(1.0, max(0.0, value)), degenerate=False)


def _mean_vector(tokens, table: EmbeddingTable) -> np.ndarray:
    total = np.zeros(table.dim)
    for t in tokens:
        v = table.vector(t)
        if v is not None:
            total += v
    return total / len(tokens)


# --- optional binary index cache -------------------------------------------

_CACHE_FORMAT = 1


def index_cache_key(vectors_path: str | Path, k_max: int, min_cos: float) -> str:
    """Cache key binding an index to its source file bytes and parameters."""
    h = hashlib.sha256()
    h.update(Path(vectors_path).read_bytes())
    h.update(f"|k_max={k_max}|min_cos={min_cos!r}".encode())
    return h.hexdigest()


def save_index_cache(index: SynonymIndex, key: str, path: str | Path) -> None:
    payload = {
        "format": _CACHE_FORMAT,
        "key": key,
        "k_max": index.k_max,
        "min_cos": index.min_cos,
        "source": index.source,
        "neighbors": index.neighbors,
    }
    with Path(path).open("wb") as f:
        pickle.dump(payload, f, protocol=pickle.HIGHEST_PROTOCOL)


def load_index_cache(path: str | Path, expected_key: str) -> SynonymIndex | None:
    """Load a cached index; returns None on any key or format mismatch."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        with path.open("rb") as f:
            payload = pickle.load(f)
    except Exception:
        return None
    if payload.get("format") != _CACHE_FORMAT or payload.get("key") != expected_key:
        return None
    return SynonymIndex(
        neighbors=payload["neighbors"],
        k_max=payload["k_max"],
        min_cos=payload["min_cos"],
        source=payload["source"],
    )


def index_overlap(defender: SynonymIndex, attacker: SynonymIndex) -> dict[str, float]:
    """Vocabulary and synonym overlap of a defender index with an attacker's.

    Reported for inspection only; no target value is enforced anywhere.
    """
    dv = defender.vocabulary()
    av = attacker.vocabulary()
    vocab_overlap = len(dv & av) / len(dv) if dv else 0.0
    covered = total = 0
    for word in dv & av:
        att = set(attacker.candidates(word))
        for cand in defender.candidates(word):
            total += 1
            if cand in att:
                covered += 1
    return {
        "vocab_overlap": vocab_overlap,
        "synonym_coverage": covered / total if total else 0.0,
    }
