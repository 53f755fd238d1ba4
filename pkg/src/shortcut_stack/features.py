"""Token -> input-vector pipeline.

Tokens are normalized (digits to '9', lowercased) before the word and
character lookups; the original casing survives through a 5-way
capitalization category with its own small embedding.  A token's feature is

    [word(100); cap(5); chars(10 x 5)]  -> 155 dims by default

where the character block concatenates the leftmost five and rightmost five
character embeddings (short words pad with a reserved symbol).  The network
input for position t is a context window of d such features, each window
slot multiplied by a learned logistic gate (a per-slot sigmoid'd parameter
vector); positions outside the sentence use the padding token's feature.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable

import numpy as np

from . import autodiff as ad
from . import linalg
from .autodiff import Node, Parameter, Tape
from .cells import ForwardCtx
from .errors import ConfigError, DataError

_DIGITS = re.compile(r"[0-9]")

PAD = "<pad>"
UNK = "<unk>"


def normalize(token: str) -> str:
    """Map every decimal digit to '9', then lowercase."""
    if not token:
        raise DataError("empty token")
    return _DIGITS.sub("9", token).lower()


class CapCategory(IntEnum):
    ALL_LOWER = 0
    ALL_CAPS = 1
    INITIAL_CAP = 2
    MIXED = 3
    NON_ALPHA = 4


def cap_category(token: str) -> CapCategory:
    """Casing category of the raw (pre-normalization) token."""
    if not token:
        raise DataError("empty token")
    alphas = [ch for ch in token if ch.isalpha()]
    if not alphas:
        return CapCategory.NON_ALPHA
    if all(ch.islower() for ch in alphas):
        return CapCategory.ALL_LOWER
    if all(ch.isupper() for ch in alphas):
        return CapCategory.ALL_CAPS
    if token[0].isalpha() and token[0].isupper() and all(
        ch.islower() for ch in alphas[1:]
    ):
        return CapCategory.INITIAL_CAP
    return CapCategory.MIXED


class Vocab:
    """Dense token -> id map with PAD=0 and UNK=1; lookups never fail."""

    def __init__(self, tokens: list[str]):
        if tokens[:2] != [PAD, UNK]:
            tokens = [PAD, UNK] + [t for t in tokens if t not in (PAD, UNK)]
        self.tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}
        if len(self._ids) != len(tokens):
            raise DataError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, items: Iterable[str]) -> "Vocab":
        """Deterministic vocabulary: reserved ids then sorted unique items."""
        return cls([PAD, UNK] + sorted(set(items)))

    def id(self, token: str) -> int:
        return self._ids.get(token, 1)

    @property
    def pad_id(self) -> int:
        return 0

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __len__(self) -> int:
        return len(self.tokens)


def build_word_vocab(sentences: Iterable[list[str]]) -> Vocab:
    return Vocab.build(normalize(tok) for sent in sentences for tok in sent)


def build_char_vocab(sentences: Iterable[list[str]]) -> Vocab:
    return Vocab.build(
        ch for sent in sentences for tok in sent for ch in normalize(tok)
    )


@dataclass
class FeatureDims:
    word_dim: int = 100
    cap_dim: int = 5
    char_dim: int = 5
    chars_per_word: int = 10  # split half leftmost / half rightmost
    window: int = 3

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd and >= 1, got {self.window}")
        if self.chars_per_word < 2 or self.chars_per_word % 2 == 1:
            raise ConfigError(
                f"chars_per_word must be even and >= 2, got {self.chars_per_word}"
            )

    @property
    def token_dim(self) -> int:
        return self.word_dim + self.cap_dim + self.chars_per_word * self.char_dim

    @property
    def window_dim(self) -> int:
        return self.token_dim * self.window


def char_ids(token: str, char_vocab: Vocab, chars_per_word: int = 10) -> list[int]:
    """Leftmost half padded on the right, rightmost half padded on the left."""
    if not token:
        raise DataError("empty token")
    half = chars_per_word // 2
    left = [char_vocab.id(ch) for ch in token[:half]]
    left += [char_vocab.pad_id] * (half - len(left))
    right = [char_vocab.id(ch) for ch in token[-half:]]
    right = [char_vocab.pad_id] * (half - len(right)) + right
    return left + right


@dataclass
class FeatureParams:
    dims: FeatureDims
    vocab: Vocab
    char_vocab: Vocab
    L_w: Parameter
    L_a: Parameter
    L_c: Parameter
    win_gates: list[Parameter] = field(default_factory=list)

    @property
    def token_dim(self) -> int:
        return self.dims.token_dim

    @property
    def window_dim(self) -> int:
        return self.dims.window_dim


def init_features(
    dims: FeatureDims,
    vocab: Vocab,
    char_vocab: Vocab,
    rng: np.random.Generator,
    init_weights: bool = True,
) -> FeatureParams:
    def table(name, rows, cols):
        w = (
            linalg.gaussian_init(rows, cols, cols, rng)
            if init_weights
            else np.zeros((rows, cols))
        )
        return Parameter(name, w)

    # Window gates start at zero: sigmoid(0) = 0.5 on every slot.
    gates = [
        Parameter(f"features.win{j}", np.zeros(dims.token_dim))
        for j in range(dims.window)
    ]
    return FeatureParams(
        dims=dims,
        vocab=vocab,
        char_vocab=char_vocab,
        L_w=table("features.L_w", len(vocab), dims.word_dim),
        L_a=table("features.L_a", len(CapCategory), dims.cap_dim),
        L_c=table("features.L_c", len(char_vocab), dims.char_dim),
        win_gates=gates,
    )


def feature_parameters(fp: FeatureParams) -> list[Parameter]:
    return [fp.L_w, fp.L_a, fp.L_c] + list(fp.win_gates)


def token_feature(tape: Tape, fp: FeatureParams, raw_token: str) -> Node:
    """[word emb; cap emb; char embs] for one raw token (UNK fallback)."""
    norm = normalize(raw_token)
    parts = [
        ad.row(tape, tape.leaf(fp.L_w), fp.vocab.id(norm)),
        ad.row(tape, tape.leaf(fp.L_a), int(cap_category(raw_token))),
    ]
    lc = tape.leaf(fp.L_c)
    parts += [
        ad.row(tape, lc, cid)
        for cid in char_ids(norm, fp.char_vocab, fp.dims.chars_per_word)
    ]
    return ad.concat(tape, parts)


def pad_feature(tape: Tape, fp: FeatureParams) -> Node:
    """Feature vector of the sentence-boundary padding token."""
    parts = [
        ad.row(tape, tape.leaf(fp.L_w), fp.vocab.pad_id),
        ad.row(tape, tape.leaf(fp.L_a), int(CapCategory.NON_ALPHA)),
    ]
    lc = tape.leaf(fp.L_c)
    parts += [
        ad.row(tape, lc, fp.char_vocab.pad_id)
        for _ in range(fp.dims.chars_per_word)
    ]
    return ad.concat(tape, parts)


def window_input(
    tape: Tape,
    fp: FeatureParams,
    feats: list[Node],
    t: int,
    pad: Node,
    gates: list[Node],
) -> Node:
    """Gated context window around position t (0-based)."""
    half = fp.dims.window // 2
    slots = []
    for j, off in enumerate(range(-half, half + 1)):
        k = t + off
        feat = feats[k] if 0 <= k < len(feats) else pad
        slots.append(ad.mul(tape, gates[j], feat))
    return ad.concat(tape, slots)


def window_gate_nodes(tape: Tape, fp: FeatureParams) -> list[Node]:
    """The d logistic window gates, computed once per sentence."""
    return [ad.sigmoid(tape, tape.leaf(r)) for r in fp.win_gates]


def sentence_windows(
    tape: Tape, fp: FeatureParams, ctx: ForwardCtx, tokens: list[str]
) -> list[Node]:
    """Window inputs for a whole sentence, with window dropout applied."""
    gates = window_gate_nodes(tape, fp)
    feats = [token_feature(tape, fp, tok) for tok in tokens]
    pad = pad_feature(tape, fp)
    out = []
    for t in range(len(tokens)):
        win = window_input(tape, fp, feats, t, pad, gates)
        out.append(ctx.dropout(tape, win, ctx.window_drop))
    return out


def load_pretrained_embeddings(fp: FeatureParams, path: str) -> int:
    """Load "token v1 ... v_{word_dim}" lines into L_w for in-vocab tokens.

    Tokens absent from the file keep their random initialization.  Returns
    the number of vocabulary rows overwritten.
    """
    loaded = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            token, values = fields[0], fields[1:]
            if len(values) != fp.dims.word_dim:
                raise DataError(
                    f"{path}:{lineno}: expected {fp.dims.word_dim} values, "
                    f"got {len(values)}"
                )
            if token not in fp.vocab:
                continue
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            fp.L_w.value[fp.vocab.id(token)] = vec
            loaded += 1
    return loaded
