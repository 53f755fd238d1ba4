"""Recurrent update rules: the stacked LSTM baseline, the shortcut block,
and every studied cell/gate variant.

A plain stacked-LSTM layer computes

    (i, f, o, s) = (sigm, sigm, sigm, tanh) W [x_t; h_{t-1}]
    c_t = f * c_{t-1} + i * s
    h_t = o * tanh(c_t)

The shortcut block drops the self-connected cell state and instead feeds a
gated skip h_skip from a lower layer into an increment-only state:

    m   = i * s + g * h_skip
    h_t = o * tanh(m) + g * h_skip

`CellRule` enumerates the block variants (skips added to both c and h,
highway-style convex gating, separate gates, dropped terms, ...);
`GateKind` enumerates the ways g is computed (linear map, logistic maps of
the layer input / recurrent state / skip, fixed or learned Bernoulli
sampling, tanh-squashed identity).

All steps are pure functions of (params, inputs, rng draws) and record onto
an autodiff tape; layers with several skip sources sum the gated terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import linalg
from .autodiff import Node, Parameter, Tape
from .errors import ConfigError, ShapeError, UsageError


class CellRule(str, Enum):
    PLAIN_LSTM = "PlainLSTM"
    WU_BASELINE = "WuBaseline"
    CASE1_NO_GATE = "Case1NoGate"
    CASE1_WITH_GATE = "Case1WithGate"
    CASE1_HIGHWAY = "Case1Highway"
    CASE1_SEPARATE_GATES = "Case1SeparateGates"
    SHORTCUT_BLOCK = "ShortcutBlock"
    SB_NO_GATE_IN_H = "SB_NoGateInH"
    SB_NO_GATE_IN_M = "SB_NoGateInM"
    SB_SHARED_OUTPUT_GATE = "SB_SharedOutputGate"
    SB_NO_SHORTCUT_INTERNAL = "SB_NoShortcutInternal"
    SB_NO_SHORTCUT_CELL_OUTPUT = "SB_NoShortcutCellOutput"


class GateKind(str, Enum):
    LINEAR_MAP = "LinearMap"
    NONLINEAR_PREV = "NonlinearPrev"
    NONLINEAR_RECURRENT = "NonlinearRecurrent"
    NONLINEAR_SKIP = "NonlinearSkip"
    BERNOULLI_FIXED = "BernoulliFixed"
    BERNOULLI_LEARNED = "BernoulliLearned"
    TANH_SCALED_SKIP = "TanhScaledSkip"


#: Rules that carry a self-connected internal state c between time steps.
RULES_WITH_CELL_STATE = frozenset(
    {
        CellRule.PLAIN_LSTM,
        CellRule.WU_BASELINE,
        CellRule.CASE1_NO_GATE,
        CellRule.CASE1_WITH_GATE,
        CellRule.CASE1_HIGHWAY,
        CellRule.CASE1_SEPARATE_GATES,
    }
)

#: Rules that route the skip source's internal state (not just its output).
RULES_USING_SKIP_CELL_STATE = frozenset({CellRule.CASE1_SEPARATE_GATES})


def gate_weight_names(rule: CellRule, kind: GateKind) -> tuple[str, ...]:
    """Which n x n gate weights a (layer, skip source) pair allocates."""
    if rule in (CellRule.PLAIN_LSTM, CellRule.CASE1_NO_GATE):
        return ()
    if kind in (GateKind.BERNOULLI_FIXED, GateKind.TANH_SCALED_SKIP):
        return ()
    if rule is CellRule.CASE1_SEPARATE_GATES:
        return ("w", "w_c")
    return ("w",)


class DrawBank:
    """Records Bernoulli draws on one pass and replays them on later passes.

    Replayed masks are returned verbatim, independent of the current gate
    probabilities, which makes a replayed forward pass a deterministic
    function of the parameters -- the precondition for gradient checking.
    """

    def __init__(self):
        self.masks: list[np.ndarray] = []
        self.recording = True
        self._i = 0

    def start_replay(self) -> None:
        self.recording = False
        self._i = 0

    def rewind(self) -> None:
        if self.recording:
            raise UsageError("rewind before any recording pass finished")
        self._i = 0

    def take(self, sample: Callable[[], np.ndarray], size: int) -> np.ndarray:
        if self.recording:
            mask = sample()
            self.masks.append(mask)
            return mask
        if self._i >= len(self.masks):
            raise UsageError("replay ran past the recorded draws")
        mask = self.masks[self._i]
        self._i += 1
        if mask.shape[0] != size:
            raise UsageError(
                f"replayed mask of length {mask.shape[0]}, expected {size}"
            )
        return mask


@dataclass
class ForwardCtx:
    """Mode and randomness for one forward pass.

    train=False is fully deterministic: no sampling, stochastic gates and
    dropout sites scale by their keep probabilities instead.
    """

    train: bool = False
    rng: np.random.Generator | None = None
    draws: DrawBank | None = None
    window_drop: float = 0.0
    hidden_drop: float = 0.0

    def bernoulli(self, p, size: int) -> np.ndarray:
        """A {0,1} float mask with P(1) = p (p scalar or per-unit vector)."""

        def sample() -> np.ndarray:
            if self.rng is None:
                raise UsageError("sampling in train mode requires an rng")
            return (self.rng.random(size) < p).astype(np.float64)

        if self.draws is not None:
            return self.draws.take(sample, size)
        return sample()

    def dropout(self, tape: Tape, node: Node, p: float) -> Node:
        """Train: multiply by a Bernoulli(1-p) mask; test: scale by 1-p."""
        if p <= 0.0:
            return node
        if not self.train:
            return ad.scale(tape, node, 1.0 - p)
        mask = self.bernoulli(1.0 - p, node.value.shape[0])
        return ad.scale_by(tape, node, mask)


@dataclass
class SkipGateParams:
    """Gate configuration and weights for one (layer, skip source) pair."""

    kind: GateKind
    p: float = 0.5  # BernoulliFixed on-probability
    w: Parameter | None = None  # gate weight, when the kind learns one
    w_c: Parameter | None = None  # Case1SeparateGates internal-state gate

    def __post_init__(self):
        if self.kind is GateKind.BERNOULLI_FIXED and not 0.0 <= self.p <= 1.0:
            raise ConfigError(
                f"BernoulliFixed gate probability must be in [0,1], got {self.p}"
            )


@dataclass
class CellParams:
    """One recurrent layer's weights (per direction).

    W stacks the four pre-activation blocks (i, f-or-g, o, s); the second
    block is the forget gate for rules with a cell state and unused for
    shortcut-block rules, whose skip gate has its own parameters.
    """

    n: int
    d_in: int
    W: Parameter  # (4n, d_in + n)
    b: Parameter  # (4n,)
    gates: list[SkipGateParams] = field(default_factory=list)


@dataclass
class CellState:
    """c is the self-connected internal state; absent for shortcut blocks."""

    c: Node | None
    h: Node


@dataclass
class SkipSource:
    """A lower layer's output routed into this layer, with its gate."""

    h: Node
    gate: SkipGateParams
    c: Node | None = None


@dataclass
class GateResult:
    """Realized gate for inspection: g is the elementwise gate vector
    (None for the linear-map and tanh-identity kinds), p the Bernoulli
    on-probability when the gate is stochastic."""

    g: np.ndarray | None
    p: np.ndarray | float | None = None


def gate_value(
    kind: GateKind,
    params: SkipGateParams,
    h_prev_layer: np.ndarray,
    h_prev_time: np.ndarray,
    h_skip: np.ndarray,
    mode: str = "train",
    rng: np.random.Generator | None = None,
) -> GateResult:
    """Value-level gate evaluation (the tape path mirrors these formulas)."""
    n = h_skip.shape[0]
    if kind is GateKind.LINEAR_MAP:
        return GateResult(g=None)
    if kind is GateKind.TANH_SCALED_SKIP:
        return GateResult(g=np.ones(n))
    if kind is GateKind.NONLINEAR_PREV:
        return GateResult(g=linalg.sigmoid(params.w.value @ h_prev_layer))
    if kind is GateKind.NONLINEAR_RECURRENT:
        return GateResult(g=linalg.sigmoid(params.w.value @ h_prev_time))
    if kind is GateKind.NONLINEAR_SKIP:
        return GateResult(g=linalg.sigmoid(params.w.value @ h_skip))
    if kind is GateKind.BERNOULLI_FIXED:
        if not 0.0 <= params.p <= 1.0:
            raise ConfigError(f"BernoulliFixed p out of range: {params.p}")
        if mode == "train":
            return GateResult(
                g=(rng.random(n) < params.p).astype(np.float64), p=params.p
            )
        return GateResult(g=np.full(n, params.p), p=params.p)
    if kind is GateKind.BERNOULLI_LEARNED:
        p = linalg.sigmoid(params.w.value @ h_prev_layer)
        if mode == "train":
            return GateResult(g=(rng.random(n) < p).astype(np.float64), p=p)
        return GateResult(g=p.copy(), p=p)
    raise ConfigError(f"unknown gate kind {kind!r}")


class _RealizedGate:
    """One evaluation of a gate, reusable on several vectors.

    `term` is the gated skip itself; `apply` re-applies the same realized
    gate (same g / mask / matrix) to another vector, which is what the
    highway rule needs for its (1-g) side.
    """

    def __init__(self, term: Node, apply: Callable[[Node], Node]):
        self.term = term
        self.apply = apply


def _realize_gate(
    tape: Tape,
    ctx: ForwardCtx,
    gate: SkipGateParams,
    weight: Parameter | None,
    x: Node,
    h_prev: Node,
    h_skip: Node,
) -> _RealizedGate:
    kind = gate.kind
    n = h_skip.value.shape[0]
    if kind is GateKind.LINEAR_MAP:
        w_leaf = tape.leaf(weight)
        apply = lambda v: ad.matvec(tape, w_leaf, v)
        return _RealizedGate(apply(h_skip), apply)
    if kind is GateKind.TANH_SCALED_SKIP:
        # Identity gate; the skip itself passes through tanh.
        return _RealizedGate(ad.tanh(tape, h_skip), lambda v: v)
    if kind in (
        GateKind.NONLINEAR_PREV,
        GateKind.NONLINEAR_RECURRENT,
        GateKind.NONLINEAR_SKIP,
    ):
        src = {
            GateKind.NONLINEAR_PREV: x,
            GateKind.NONLINEAR_RECURRENT: h_prev,
            GateKind.NONLINEAR_SKIP: h_skip,
        }[kind]
        g = ad.sigmoid(tape, ad.matvec(tape, tape.leaf(weight), src))
        apply = lambda v: ad.mul(tape, g, v)
        return _RealizedGate(apply(h_skip), apply)
    if kind is GateKind.BERNOULLI_FIXED:
        if not ctx.train:
            apply = lambda v: ad.scale(tape, v, gate.p)
        else:
            mask = ctx.bernoulli(gate.p, n)
            apply = lambda v: ad.scale_by(tape, v, mask)
        return _RealizedGate(apply(h_skip), apply)
    if kind is GateKind.BERNOULLI_LEARNED:
        if not ctx.train:
            g = ad.sigmoid(tape, ad.matvec(tape, tape.leaf(weight), x))
            apply = lambda v: ad.mul(tape, g, v)
        elif ctx.draws is None:
            # Live training: sampled mask is constant in the backward pass,
            # the learned probability trains through the straight-through
            # convention.
            pre = ad.matvec(tape, tape.leaf(weight), x)
            mask = ctx.bernoulli(linalg.sigmoid(pre.value), n)
            apply = lambda v: ad.stochastic_gated_skip(tape, v, mask, pre=pre)
        else:
            # Frozen draws (gradient checking): mask is a pure constant.
            p = linalg.sigmoid(weight.value @ x.value)
            mask = ctx.bernoulli(p, n)
            apply = lambda v: ad.scale_by(tape, v, mask)
        return _RealizedGate(apply(h_skip), apply)
    raise ConfigError(f"unknown gate kind {kind!r}")


def _check_skip_shapes(n: int, skips: list[SkipSource]) -> None:
    for src in skips:
        if src.h.value.shape[0] != n:
            raise ShapeError(
                f"skip of length {src.h.value.shape[0]} fed to a width-{n} layer"
            )


def lstm_step(
    tape: Tape, params: CellParams, ctx: ForwardCtx, x: Node, prev: CellState
) -> CellState:
    """Plain stacked-LSTM update."""
    if prev.c is None:
        raise UsageError("lstm_step requires the previous internal state c")
    n = params.n
    pre = ad.affine(tape, tape.leaf(params.W), tape.leaf(params.b), x, prev.h)
    act = ad.gate_block(tape, pre, 3 * n)
    i = ad.seg(tape, act, 0, n)
    f = ad.seg(tape, act, n, 2 * n)
    o = ad.seg(tape, act, 2 * n, 3 * n)
    s = ad.seg(tape, act, 3 * n, 4 * n)
    c = ad.add(tape, ad.mul(tape, f, prev.c), ad.mul(tape, i, s))
    h = ad.mul(tape, o, ad.tanh(tape, c))
    return CellState(c=c, h=h)


def shortcut_block_step(
    tape: Tape,
    params: CellParams,
    rule: CellRule,
    ctx: ForwardCtx,
    x: Node,
    prev: CellState,
    skips: list[SkipSource],
) -> CellState:
    """One step of the selected cell rule with gated skip inputs.

    With no skip sources the rule degrades to the plain LSTM update (the
    stack builds skipless layers that way).
    """
    if rule is CellRule.PLAIN_LSTM or not skips:
        return lstm_step(tape, params, ctx, x, prev)
    n = params.n
    _check_skip_shapes(n, skips)

    needs_c = rule in RULES_WITH_CELL_STATE
    if needs_c and prev.c is None:
        raise UsageError(f"{rule.value} requires the previous internal state c")

    pre = ad.affine(tape, tape.leaf(params.W), tape.leaf(params.b), x, prev.h)
    act = ad.gate_block(tape, pre, 3 * n)
    i = ad.seg(tape, act, 0, n)
    o = ad.seg(tape, act, 2 * n, 3 * n)
    s = ad.seg(tape, act, 3 * n, 4 * n)
    i_s = ad.mul(tape, i, s)

    if needs_c:
        f = ad.seg(tape, act, n, 2 * n)
        c_tilde = ad.add(tape, ad.mul(tape, f, prev.c), i_s)

        if rule is CellRule.WU_BASELINE:
            terms = [
                _realize_gate(tape, ctx, src.gate, src.gate.w, x, prev.h, src.h).term
                for src in skips
            ]
            h = ad.sum_nodes(tape, [ad.mul(tape, o, ad.tanh(tape, c_tilde))] + terms)
            return CellState(c=c_tilde, h=h)

        if rule in (CellRule.CASE1_NO_GATE, CellRule.CASE1_WITH_GATE):
            if rule is CellRule.CASE1_NO_GATE:
                terms = [src.h for src in skips]
            else:
                terms = [
                    _realize_gate(
                        tape, ctx, src.gate, src.gate.w, x, prev.h, src.h
                    ).term
                    for src in skips
                ]
            c_new = ad.sum_nodes(tape, [c_tilde] + terms)
            h = ad.sum_nodes(tape, [ad.mul(tape, o, ad.tanh(tape, c_new))] + terms)
            return CellState(c=c_new, h=h)

        if rule is CellRule.CASE1_SEPARATE_GATES:
            c_terms, h_terms = [], []
            for src in skips:
                if src.c is None:
                    raise UsageError(
                        "Case1SeparateGates routes the skip source's internal "
                        "state, which this source does not carry"
                    )
                h_terms.append(
                    _realize_gate(tape, ctx, src.gate, src.gate.w, x, prev.h, src.h).term
                )
                c_terms.append(
                    _realize_gate(
                        tape, ctx, src.gate, src.gate.w_c, x, prev.h, src.c
                    ).term
                )
            c_new = ad.sum_nodes(tape, [c_tilde] + c_terms)
            h = ad.sum_nodes(
                tape, [ad.mul(tape, o, ad.tanh(tape, c_new))] + h_terms
            )
            return CellState(c=c_new, h=h)

        if rule is CellRule.CASE1_HIGHWAY:
            # (1-g)*acc + g*skip, applied per source; written as
            # acc - g*acc + g*skip so the linear-map gate stays well defined.
            realized = [
                _realize_gate(tape, ctx, src.gate, src.gate.w, x, prev.h, src.h)
                for src in skips
            ]
            c_new = c_tilde
            for r in realized:
                c_new = ad.add(tape, ad.sub(tape, c_new, r.apply(c_new)), r.term)
            h = ad.mul(tape, o, ad.tanh(tape, c_new))
            for r in realized:
                h = ad.add(tape, ad.sub(tape, h, r.apply(h)), r.term)
            return CellState(c=c_new, h=h)

        raise ConfigError(f"unhandled cell rule {rule!r}")

    # Shortcut-block family: increment-only state m, no c carried.
    if rule is CellRule.SHORTCUT_BLOCK:
        terms = [
            _realize_gate(tape, ctx, src.gate, src.gate.w, x, prev.h, src.h).term
            for src in skips
        ]
        m_terms, h_terms = terms, terms
    elif rule is CellRule.SB_NO_GATE_IN_M:
        m_terms = [src.h for src in skips]
        h_terms = [
            _realize_gate(tape, ctx, src.gate, src.gate.w, x, prev.h, src.h).term
            for src in skips
        ]
    elif rule is CellRule.SB_NO_GATE_IN_H:
        m_terms = [
            _realize_gate(tape, ctx, src.gate, src.gate.w, x, prev.h, src.h).term
            for src in skips
        ]
        h_terms = [src.h for src in skips]
    elif rule is CellRule.SB_SHARED_OUTPUT_GATE:
        m_terms = [
            _realize_gate(tape, ctx, src.gate, src.gate.w, x, prev.h, src.h).term
            for src in skips
        ]
        h_terms = [ad.mul(tape, o, src.h) for src in skips]
    elif rule is CellRule.SB_NO_SHORTCUT_INTERNAL:
        m_terms = []
        h_terms = [
            _realize_gate(tape, ctx, src.gate, src.gate.w, x, prev.h, src.h).term
            for src in skips
        ]
    elif rule is CellRule.SB_NO_SHORTCUT_CELL_OUTPUT:
        m_terms = [
            _realize_gate(tape, ctx, src.gate, src.gate.w, x, prev.h, src.h).term
            for src in skips
        ]
        h_terms = []
    else:
        raise ConfigError(f"unhandled cell rule {rule!r}")

    m = ad.sum_nodes(tape, [i_s] + m_terms)
    h = ad.sum_nodes(tape, [ad.mul(tape, o, ad.tanh(tape, m))] + h_terms)
    return CellState(c=None, h=h)


def init_cell_params(
    name: str, n: int, d_in: int, rng: np.random.Generator
) -> CellParams:
    """Gaussian input blocks, orthogonal n x n recurrent blocks, zero bias."""
    w = np.empty((4 * n, d_in + n))
    w[:, :d_in] = linalg.gaussian_init(4 * n, d_in, d_in, rng)
    for k in range(4):
        w[k * n : (k + 1) * n, d_in:] = linalg.orthogonal_init(n, rng)
    return CellParams(
        n=n,
        d_in=d_in,
        W=Parameter(f"{name}.W", w),
        b=Parameter(f"{name}.b", np.zeros(4 * n)),
    )
