"""Corpus ingestion and synthetic long-range tagging tasks.

A corpus is a list of sentences, each a list of (raw token, tag) pairs.
The file format is two whitespace-separated columns per line ("token tag"),
blank line between sentences.

The synthetic generator produces a controllable long-range dependency: the
tag at position t is a fixed random function of the token at t and the
token k positions earlier (positions with no trigger use a unary table).
With k beyond the context window, a memoryless window classifier cannot
reach 100% -- depth and skip routing have to carry the trigger.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DataError
from .linalg import make_rng

Sentence = list[tuple[str, str]]
TaggedCorpus = list[Sentence]


def load_conll(path: str) -> TaggedCorpus:
    corpus: TaggedCorpus = []
    current: Sentence = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                if current:
                    corpus.append(current)
                    current = []
                continue
            fields = stripped.split()
            if len(fields) != 2:
                raise DataError(
                    f"{path}:{lineno}: expected 2 columns, got {len(fields)}"
                )
            current.append((fields[0], fields[1]))
    if current:
        corpus.append(current)
    return corpus


def save_conll(corpus: TaggedCorpus, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sentence in corpus:
            for token, tag in sentence:
                fh.write(f"{token} {tag}\n")
            fh.write("\n")


def tokens_of(sentence: Sentence) -> list[str]:
    return [tok for tok, _ in sentence]


def tags_of(sentence: Sentence) -> list[str]:
    return [tag for _, tag in sentence]


@dataclass
class SyntheticSpec:
    vocab_size: int = 12
    tag_count: int = 6
    len_min: int = 9
    len_max: int = 13
    k: int = 8  # dependency distance: tag(t) = F(token(t), token(t-k))
    train_size: int = 160
    dev_size: int = 48
    test_size: int = 48
    seed: int = 0

    def __post_init__(self):
        if self.k >= self.len_min:
            raise DataError(
                f"dependency distance k={self.k} must be < len_min={self.len_min}"
            )
        if self.len_min < 1 or self.len_max < self.len_min:
            raise DataError("invalid sentence length range")


def gen_synthetic(
    spec: SyntheticSpec,
) -> tuple[TaggedCorpus, TaggedCorpus, TaggedCorpus]:
    """Deterministic (train, dev, test) corpora; sentences never repeat
    across or within splits, so the splits are disjoint."""
    rng = make_rng(spec.seed)
    pair_table = rng.integers(0, spec.tag_count, size=(spec.vocab_size, spec.vocab_size))
    unary_table = rng.integers(0, spec.tag_count, size=spec.vocab_size)

    seen: set[tuple[int, ...]] = set()

    def one_sentence() -> Sentence:
        while True:
            length = int(rng.integers(spec.len_min, spec.len_max + 1))
            toks = tuple(int(x) for x in rng.integers(0, spec.vocab_size, size=length))
            if toks in seen:
                continue
            seen.add(toks)
            break
        sentence = []
        for t, tok in enumerate(toks):
            if t - spec.k >= 0:
                tag = int(pair_table[tok, toks[t - spec.k]])
            else:
                tag = int(unary_table[tok])
            sentence.append((f"w{tok:02d}", f"t{tag}"))
        return sentence

    return (
        [one_sentence() for _ in range(spec.train_size)],
        [one_sentence() for _ in range(spec.dev_size)],
        [one_sentence() for _ in range(spec.test_size)],
    )


def split(
    corpus: TaggedCorpus, fractions: tuple[float, float, float], seed: int
) -> tuple[TaggedCorpus, TaggedCorpus, TaggedCorpus]:
    """Seeded shuffle then partition; sizes match the fractions within 1."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {fractions}")
    rng = make_rng(seed)
    order = list(range(len(corpus)))
    rng.shuffle(order)
    shuffled = [corpus[i] for i in order]
    n = len(corpus)
    n_train = round(fractions[0] * n)
    n_dev = round(fractions[1] * n)
    n_train = min(n_train, n)
    n_dev = min(n_dev, n - n_train)
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_dev],
        shuffled[n_train + n_dev :],
    )
