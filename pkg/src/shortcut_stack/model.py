"""End-to-end tagger: features -> stacked recurrent layers -> softmax.

The output layer maps the concatenated top-layer directions (width 2n) to a
distribution over the training tag set plus a reserved rare symbol.  Test
mode is a pure function of the parameters (dropout sites scale by their
keep probabilities, stochastic gates by their on-probabilities); train mode
samples masks from the explicit rng.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import linalg
from .autodiff import Node, Parameter, Tape
from .cells import DrawBank, ForwardCtx
from .errors import DataError
from .features import (
    FeatureDims,
    FeatureParams,
    Vocab,
    feature_parameters,
    init_features,
    sentence_windows,
)
from .stack import StackConfig, StackParams, init_stack, stack_forward

RARE = "<rare>"


class TagVocab:
    """Tag -> id map over the training tags plus the rare symbol (last id).

    Tags unseen in training map to the rare id for loss computation; a
    rare-tag prediction can never match a real gold tag string, so unseen
    tags are always scored as errors.
    """

    def __init__(self, tags: list[str]):
        if RARE not in tags:
            tags = list(tags) + [RARE]
        self.tags = tags
        self._ids = {t: i for i, t in enumerate(tags)}
        self.rare_id = self._ids[RARE]

    @classmethod
    def build(cls, tags) -> "TagVocab":
        return cls(sorted(set(tags)) + [RARE])

    def id(self, tag: str) -> int:
        return self._ids.get(tag, self.rare_id)

    def tag(self, i: int) -> str:
        return self.tags[i]

    def __len__(self) -> int:
        return len(self.tags)


@dataclass
class TaggerModel:
    features: FeatureParams
    config: StackConfig
    stack: StackParams
    W_hy: Parameter
    b_y: Parameter
    tags: TagVocab
    window_drop: float = 0.0
    hidden_drop: float = 0.0

    @classmethod
    def build(
        cls,
        dims: FeatureDims,
        config: StackConfig,
        vocab: Vocab,
        char_vocab: Vocab,
        tags: TagVocab,
        rng: np.random.Generator,
        window_drop: float = 0.0,
        hidden_drop: float = 0.0,
        init_weights: bool = True,
    ) -> "TaggerModel":
        fp = init_features(dims, vocab, char_vocab, rng, init_weights)
        sp = init_stack(config, dims.window_dim, rng, init_weights)
        w_hy = (
            linalg.gaussian_init(len(tags), 2 * config.width, 2 * config.width, rng)
            if init_weights
            else np.zeros((len(tags), 2 * config.width))
        )
        return cls(
            features=fp,
            config=config,
            stack=sp,
            W_hy=Parameter("out.W_hy", w_hy),
            b_y=Parameter("out.b_y", np.zeros(len(tags))),
            tags=tags,
            window_drop=window_drop,
            hidden_drop=hidden_drop,
        )

    def parameters(self) -> list[Parameter]:
        return (
            feature_parameters(self.features)
            + self.stack.parameters()
            + [self.W_hy, self.b_y]
        )

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def make_ctx(
        self,
        train: bool,
        rng: np.random.Generator | None = None,
        draws: DrawBank | None = None,
    ) -> ForwardCtx:
        return ForwardCtx(
            train=train,
            rng=rng,
            draws=draws,
            window_drop=self.window_drop,
            hidden_drop=self.hidden_drop,
        )


def forward_nodes(
    model: TaggerModel, tokens: list[str], ctx: ForwardCtx
) -> tuple[Tape, list[Node]]:
    """Record a forward pass; returns the tape and per-token log-probs."""
    if not tokens:
        raise DataError("empty sentence")
    tape = Tape()
    xs = sentence_windows(tape, model.features, ctx, tokens)
    tops = stack_forward(tape, model.stack, model.config, ctx, xs)
    w, b = tape.leaf(model.W_hy), tape.leaf(model.b_y)
    return tape, [
        ad.log_softmax(tape, ad.affine(tape, w, b, top)) for top in tops
    ]


def forward(
    model: TaggerModel,
    tokens: list[str],
    train: bool = False,
    rng: np.random.Generator | None = None,
    draws: DrawBank | None = None,
) -> list[np.ndarray]:
    """Per-token probability distributions over the tag set."""
    _, logps = forward_nodes(model, tokens, model.make_ctx(train, rng, draws))
    return [np.exp(lp.value) for lp in logps]


def nll_loss(probs: list[np.ndarray], gold_ids: list[int]) -> float:
    """Mean negative log-likelihood of the gold tags."""
    if len(probs) != len(gold_ids):
        raise DataError(
            f"{len(probs)} predictions vs {len(gold_ids)} gold tags"
        )
    total = 0.0
    for p, g in zip(probs, gold_ids):
        if not 0 <= g < p.shape[0]:
            raise DataError(f"gold id {g} out of range 0..{p.shape[0] - 1}")
        total -= float(np.log(p[g]))
    return total / len(probs)


def predict(model: TaggerModel, tokens: list[str]) -> list[str]:
    """Argmax tags in test mode; ties break to the lowest tag id."""
    return [
        model.tags.tag(int(np.argmax(p))) for p in forward(model, tokens)
    ]


def accuracy(pred_tags: list[str], gold_tags: list[str]) -> float:
    if len(pred_tags) != len(gold_tags):
        raise DataError(
            f"{len(pred_tags)} predictions vs {len(gold_tags)} gold tags"
        )
    if not gold_tags:
        return 0.0
    hits = sum(1 for p, g in zip(pred_tags, gold_tags) if p == g)
    return hits / len(gold_tags)
