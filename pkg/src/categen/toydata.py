"""Synthetic two-category corpus over disjoint token sets, for desk-scale runs.

Category 0 sentences draw words from one fixed set, category 1 from a disjoint
set, so a rule-based membership test can verify requested categories exactly.
"""
from __future__ import annotations

import argparse
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Dataset, LabeledSentence, build_vocabulary

CATEGORY_WORDS = (
    ("ace", "aim", "air", "alp", "ant", "ape", "arc", "ash", "awl", "axe"),
    ("bat", "bay", "bee", "bit", "bog", "box", "bud", "bug", "bun", "bow"),
)
_WORD_SETS = tuple(frozenset(words) for words in CATEGORY_WORDS)


def toy_sentences(
    n_per_class: int,
    rng: np.random.Generator,
    min_words: int = 3,
    max_words: int = 8,
) -> list[LabeledSentence]:
    sentences = []
    for category, words in enumerate(CATEGORY_WORDS):
        for _ in range(n_per_class):
            length = int(rng.integers(min_words, max_words + 1))
            tokens = tuple(words[i] for i in rng.integers(0, len(words), size=length))
            sentences.append(LabeledSentence(tokens=tokens, category=category))
    return sentences


def token_set_checker(tokens: Sequence[str]) -> int:
    """Grammar membership: the category whose word set contains every token, else -1."""
    if not tokens:
        return -1
    for category, words in enumerate(_WORD_SETS):
        if all(tok in words for tok in tokens):
            return category
    return -1


def make_toy_dataset(
    n_train: int = 500,
    n_valid: int = 50,
    n_test: int = 100,
    max_len: int = 10,
    min_words: int = 3,
    max_words: int = 8,
    seed: int = 0,
) -> Dataset:
    rng = np.random.default_rng(seed)
    train = toy_sentences(n_train, rng, min_words, max_words)
    valid = toy_sentences(n_valid, rng, min_words, max_words)
    test = toy_sentences(n_test, rng, min_words, max_words)
    vocab = build_vocabulary([s.tokens for s in train])
    return Dataset(train=train, valid=valid, test=test, n_categories=2, max_len=max_len, vocab=vocab)


def write_split(path: Path, sentences: Sequence[LabeledSentence]) -> None:
    lines = [f"{s.category}\t{' '.join(s.tokens)}" for s in sentences]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def make_toy_corpus(out_dir: str | Path, n_train=500, n_valid=50, n_test=100,
                    min_words=3, max_words=8, seed=0) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    write_split(out / "train.txt", toy_sentences(n_train, rng, min_words, max_words))
    write_split(out / "valid.txt", toy_sentences(n_valid, rng, min_words, max_words))
    write_split(out / "test.txt", toy_sentences(n_test, rng, min_words, max_words))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="write a synthetic two-category corpus")
    parser.add_argument("out_dir")
    parser.add_argument("--train", type=int, default=500, help="sentences per category")
    parser.add_argument("--valid", type=int, default=50)
    parser.add_argument("--test", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    make_toy_corpus(args.out_dir, args.train, args.valid, args.test, seed=args.seed)
    print(f"wrote train/valid/test splits to {args.out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
