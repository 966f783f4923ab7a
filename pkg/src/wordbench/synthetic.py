"""Bundled synthetic benchmark: a 4-class dataset with paired embedding
tables for attacker and defender.

Word geometry, defender space: each class owns a set of signal-word
families clustered around a class direction; neutral families sit in
random directions. Every document mixes a few signal words for its label
with neutral filler, so class evidence is redundant but not unbounded.

The attacker table blends the defender cores with independent noise and,
crucially, swaps the cores of a fraction of "impostor" words. Impostors
look like close synonyms to the attacker while being unrelated words to
the victim, which is what gives word-substitution attacks their bite and
gives k-NN candidate lists a quality gradient in k. A shared offset
vector per table keeps mean-vector cosines high, so the similarity budget
behaves like a sanity constraint rather than the binding one.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dataset, Document
from .embeddings import EmbeddingTable


@dataclass(frozen=True)
class ToyConfig:
    num_classes: int = 4
    dim: int = 16
    families_per_class: int = 10
    family_size: int = 6
    neutral_families: int = 127
    n_train: int = 1600
    n_test: int = 400
    min_len: int = 8
    max_len: int = 12
    signal_per_doc: int = 5
    confusers_per_doc: int = 0  # words drawn from one wrong class per doc
    signal_scale: float = 1.0
    family_noise: float = 0.25
    word_noise: float = 0.1
    neutral_scale: float = 1.0
    offset_scale: float = 1.5
    blend: float = 0.7
    attacker_noise: float = 0.3
    impostor_fraction: float = 0.12
    impostor_pool: str = "class"  # "all": impostors anywhere; "class": only class words swap cores


@dataclass
class ToyAssets:
    train: Dataset
    test: Dataset
    defender_table: EmbeddingTable
    attacker_table: EmbeddingTable
    config: ToyConfig
    seed: int

    @property
    def full(self) -> Dataset:
        return Dataset(
            documents=list(self.train.documents) + list(self.test.documents),
            num_classes=self.train.num_classes,
            split="full",
        )


def _runit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def make_toy_benchmark(seed: int = 0, config: ToyConfig = ToyConfig()) -> ToyAssets:
    """Generate the benchmark deterministically from the seed."""
    cfg = config
    rng = np.random.default_rng([seed, 0x709])

    # class directions: orthonormal, so class evidence never cancels
    basis, _ = np.linalg.qr(rng.normal(size=(cfg.dim, cfg.dim)))
    class_dirs = basis[:, : cfg.num_classes].T

    words: list[str] = []
    cores: list[np.ndarray] = []
    class_words: list[list[str]] = [[] for _ in range(cfg.num_classes)]
    for c in range(cfg.num_classes):
        for f in range(cfg.families_per_class):
            center = cfg.signal_scale * class_dirs[c] + cfg.family_noise * _runit(rng, cfg.dim)
            for i in range(cfg.family_size):
                word = f"c{c}f{f}w{i}"
                words.append(word)
                cores.append(center + cfg.word_noise * _runit(rng, cfg.dim))
                class_words[c].append(word)
    neutral_words: list[str] = []
    for f in range(cfg.neutral_families):
        center = cfg.neutral_scale * _runit(rng, cfg.dim)
        for i in range(cfg.family_size):
            word = f"n{f}w{i}"
            words.append(word)
            cores.append(center + cfg.word_noise * _runit(rng, cfg.dim))
            neutral_words.append(word)
    core_arr = np.stack(cores)
    V = len(words)

    defender_offset = cfg.offset_scale * _runit(rng, cfg.dim)
    defender_vectors = defender_offset[None, :] + core_arr

    # impostors: a fraction of words whose attacker-space cores are swapped,
    # so the attacker sees synonyms where the victim sees unrelated words
    if cfg.impostor_pool == "class":
        pool = np.arange(cfg.num_classes * cfg.families_per_class * cfg.family_size)
    else:
        pool = np.arange(V)
    n_impostor = min(int(cfg.impostor_fraction * V), len(pool))
    impostors = rng.choice(pool, size=n_impostor, replace=False)
    permuted = impostors[rng.permutation(n_impostor)]
    att_source = np.arange(V)
    att_source[impostors] = permuted

    attacker_offset = cfg.offset_scale * _runit(rng, cfg.dim)
    attacker_noise = np.stack([_runit(rng, cfg.dim) for _ in range(V)])
    attacker_vectors = (
        attacker_offset[None, :]
        + cfg.blend * core_arr[att_source]
        + cfg.attacker_noise * attacker_noise
    )

    defender_table = EmbeddingTable(words, defender_vectors)
    attacker_table = EmbeddingTable(words, attacker_vectors)

    # documents: balanced labels, a few signal words plus neutral filler
    n_total = cfg.n_train + cfg.n_test
    documents: list[Document] = []
    for i in range(n_total):
        label = i % cfg.num_classes
        L = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        n_sig = min(cfg.signal_per_doc, L)
        n_conf = min(cfg.confusers_per_doc, L - n_sig)
        sig = list(rng.choice(class_words[label], size=n_sig, replace=False))
        wrong = int(rng.integers(cfg.num_classes - 1))
        wrong = wrong if wrong < label else wrong + 1
        conf = list(rng.choice(class_words[wrong], size=n_conf, replace=False)) if n_conf else []
        filler = list(rng.choice(neutral_words, size=L - n_sig - n_conf, replace=True))
        tokens = [str(t) for t in sig + conf + filler]
        rng.shuffle(tokens)
        documents.append(
            Document(id=i, label=label, tokens=tuple(tokens), raw=" ".join(tokens))
        )

    train = Dataset(documents=documents[: cfg.n_train], num_classes=cfg.num_classes, split="train")
    test = Dataset(documents=documents[cfg.n_train :], num_classes=cfg.num_classes, split="test")
    return ToyAssets(
        train=train,
        test=test,
        defender_table=defender_table,
        attacker_table=attacker_table,
        config=cfg,
        seed=seed,
    )


def write_embedding_file(table: EmbeddingTable, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for i, word in enumerate(table.words):
            values = " ".join(repr(float(x)) for x in table.vectors[i])
            f.write(f"{word} {values}\n")


def write_toy_benchmark(out_dir: str | Path, seed: int = 0, config: ToyConfig = ToyConfig()) -> dict:
    """Write the toy assets as the standard file formats; returns the paths."""
    from .corpus import save_dataset

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    assets = make_toy_benchmark(seed=seed, config=config)
    paths = {
        "train": out / "train.tsv",
        "test": out / "test.tsv",
        "attacker_vectors": out / "attacker_vectors.txt",
        "defender_vectors": out / "defender_vectors.txt",
        "classes": out / "classes.txt",
    }
    save_dataset(assets.train, paths["train"])
    save_dataset(assets.test, paths["test"])
    write_embedding_file(assets.attacker_table, paths["attacker_vectors"])
    write_embedding_file(assets.defender_table, paths["defender_vectors"])
    paths["classes"].write_text(
        "".join(f"class{c}\n" for c in range(config.num_classes)), encoding="utf-8"
    )
    return {k: str(v) for k, v in paths.items()}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m wordbench.synthetic",
        description="Generate the bundled synthetic benchmark assets.",
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    paths = write_toy_benchmark(args.out, seed=args.seed)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
