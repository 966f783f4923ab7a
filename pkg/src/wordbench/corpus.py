"""Dataset ingestion, tokenization, vocabulary, and deterministic eval sampling.

Dataset files are plain UTF-8 text, one example per line in the form
``label<TAB>text``. Labels are 0-based integers; an optional sidecar
``classes.txt`` may map them to names but is purely cosmetic.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class DatasetFormatError(ValueError):
    """A dataset file violates the ``label<TAB>text`` layout."""


@dataclass(frozen=True)
class Document:
    """A labeled token sequence; the unit of attack and training."""

    id: int
    label: int
    tokens: tuple[str, ...]
    raw: str

    def __post_init__(self):
        if not self.tokens:
            raise ValueError(f"document {self.id} has no tokens")
        if self.label < 0:
            raise ValueError(f"document {self.id} has negative label {self.label}")


@dataclass
class Dataset:
    """An ordered collection of documents with a fixed class count.

    Read-only after construction; safe to share across parallel workers.
    """

    documents: list[Document]
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        ids = [d.id for d in self.documents]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate document ids")
        for d in self.documents:
            if d.label >= self.num_classes:
                raise ValueError(
                    f"document {d.id} label {d.label} out of range for "
                    f"{self.num_classes} classes"
                )

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def labels(self) -> np.ndarray:
        return np.array([d.label for d in self.documents], dtype=np.int64)


def tokenize(raw: str) -> list[str]:
    """Lowercase and split on whitespace, stripping boundary punctuation.

    Punctuation interior to a word (e.g. the apostrophe in ``don't``) is
    kept; chunks that are pure punctuation are dropped. Deterministic, and
    idempotent on its own output joined by single spaces.
    """
    tokens = []
    for chunk in raw.lower().split():
        word = chunk.strip(string.punctuation)
        if word:
            tokens.append(word)
    return tokens


def load_dataset(path: str | Path, num_classes: int, split: str = "train") -> Dataset:
    """Parse a ``label<TAB>text`` file into a Dataset, preserving file order.

    Raises DatasetFormatError naming the offending line on any malformed
    record, out-of-range label, or a file with no documents. Blank lines
    are ignored.
    """
    path = Path(path)
    documents: list[Document] = []
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            label_str, sep, text = line.partition("\t")
            if not sep:
                raise DatasetFormatError(f"missing tab separator at line {lineno}")
            try:
                label = int(label_str)
            except ValueError:
                raise DatasetFormatError(
                    f"label {label_str!r} is not an integer at line {lineno}"
                ) from None
            if label < 0 or label >= num_classes:
                raise DatasetFormatError(f"label out of range at line {lineno}")
            tokens = tokenize(text)
            if not tokens:
                raise DatasetFormatError(f"no tokens at line {lineno}")
            documents.append(
                Document(id=len(documents), label=label, tokens=tuple(tokens), raw=text)
            )
    if not documents:
        raise DatasetFormatError(f"no documents in {path}")
    return Dataset(documents=documents, num_classes=num_classes, split=split)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write ``label<TAB>raw`` lines; round-trips exactly through load_dataset."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for doc in dataset:
            f.write(f"{doc.label}\t{doc.raw}\n")


def sample_eval(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Draw n documents without replacement, deterministically in the seed."""
    if n > len(dataset):
        raise ValueError(f"cannot sample {n} from {len(dataset)} documents")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(dataset), size=n, replace=False)
    docs = [dataset.documents[i] for i in idx]
    return Dataset(documents=docs, num_classes=dataset.num_classes, split="eval-sample")


def write_eval_manifest(dataset: Dataset, path: str | Path) -> None:
    """Emit the eval sample as a newline-separated id list for replay."""
    Path(path).write_text("".join(f"{d.id}\n" for d in dataset), encoding="utf-8")


def read_eval_manifest(path: str | Path) -> list[int]:
    return [int(line) for line in Path(path).read_text(encoding="utf-8").split()]


def select_by_ids(dataset: Dataset, ids: list[int]) -> Dataset:
    """Rebuild an eval sample from a manifest, preserving manifest order."""
    by_id = {d.id: d for d in dataset}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ValueError(f"manifest ids not in dataset: {missing[:5]}")
    return Dataset(
        documents=[by_id[i] for i in ids],
        num_classes=dataset.num_classes,
        split="eval-sample",
    )


@dataclass
class Vocabulary:
    """Bijective word<->id map with reserved PAD and UNK entries."""

    word_to_id: dict[str, int] = field(default_factory=dict)
    id_to_word: list[str] = field(default_factory=list)

    pad_id: int = 0
    unk_id: int = 1

    @classmethod
    def from_words(cls, words) -> "Vocabulary":
        vocab = cls()
        vocab.id_to_word = [PAD_TOKEN, UNK_TOKEN]
        for word in sorted(set(words) - {PAD_TOKEN, UNK_TOKEN}):
            vocab.id_to_word.append(word)
        vocab.word_to_id = {w: i for i, w in enumerate(vocab.id_to_word)}
        return vocab

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "Vocabulary":
        words = set()
        for doc in dataset:
            words.update(doc.tokens)
        return cls.from_words(words)

    def __len__(self) -> int:
        return len(self.id_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id

    def encode(self, tokens) -> np.ndarray:
        """Map tokens to ids, unknown words to UNK."""
        return np.array(
            [self.word_to_id.get(t, self.unk_id) for t in tokens], dtype=np.int64
        )
