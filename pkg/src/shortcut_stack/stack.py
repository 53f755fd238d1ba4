"""Composition of bidirectional recurrent layers with cross-layer skips.

The five topologies generalize the paper's five-layer diagrams to any depth
(layer indices are 1-based, sources always point at strictly lower layers):

    T1: layer 1 feeds every layer l >= 3
    T2: span-1 chain, l-2 -> l
    T3: span-2 chain, l-3 -> l
    T4: nested: 1 -> 3, plus {1, l-2} -> l for odd l >= 5
    T5: dense: {l-2, l-3} -> l

Layers without a skip source (always layers 1 and 2) run the plain LSTM
update.  Directions are handled symmetrically: each direction's skips come
from the same direction, and between layers the two directions are combined
("sum" by default, or concatenated and projected back to width n).  The
stack output per token is [forward_top; backward_top], width 2n.

Dropout placement: the per-direction outputs of the first and last hidden
layers pass through the context's hidden-dropout site, so every consumer
(next layer, skip routing, top concatenation) sees the same regularized
vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from . import linalg
from .autodiff import Node, Parameter, Tape
from .cells import (
    CellParams,
    CellRule,
    CellState,
    ForwardCtx,
    GateKind,
    RULES_WITH_CELL_STATE,
    SkipGateParams,
    SkipSource,
    gate_weight_names,
    init_cell_params,
    shortcut_block_step,
)
from .errors import ConfigError, UsageError


class Topology(str, Enum):
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"
    T5 = "T5"


def skip_sources(
    topology: Topology, layer: int, num_layers: int | None = None
) -> list[int]:
    """Skip source layers feeding `layer` (1-based), all strictly lower."""
    if layer < 1 or (num_layers is not None and layer > num_layers):
        raise UsageError(f"layer {layer} out of range 1..{num_layers}")
    if topology is Topology.T1:
        return [1] if layer >= 3 else []
    if topology is Topology.T2:
        return [layer - 2] if layer >= 3 else []
    if topology is Topology.T3:
        return [layer - 3] if layer >= 4 else []
    if topology is Topology.T4:
        if layer == 3:
            return [1]
        if layer >= 5 and layer % 2 == 1:
            return [1, layer - 2]
        return []
    if topology is Topology.T5:
        return [s for s in (layer - 2, layer - 3) if s >= 1] if layer >= 3 else []
    raise ConfigError(f"unknown topology {topology!r}")


@dataclass
class StackConfig:
    layers: int
    width: int
    topology: Topology = Topology.T2
    rule: CellRule = CellRule.SHORTCUT_BLOCK
    gate: GateKind = GateKind.NONLINEAR_PREV
    combine: str = "sum"  # "sum" | "concat-project"
    bernoulli_p: float = 0.5

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.width < 1:
            raise ConfigError(f"width must be >= 1, got {self.width}")
        if self.combine not in ("sum", "concat-project"):
            raise ConfigError(f"unknown combine mode {self.combine!r}")

    def layer_sources(self, layer: int) -> list[int]:
        """Skip map, empty for the plain-LSTM baseline rule."""
        if self.rule is CellRule.PLAIN_LSTM:
            return []
        return skip_sources(self.topology, layer, self.layers)


@dataclass
class LayerParams:
    fwd: CellParams
    bwd: CellParams
    proj: Parameter | None = None  # concat-project combination, shared by both


@dataclass
class StackParams:
    layers: list[LayerParams] = field(default_factory=list)

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for layer in self.layers:
            for cell in (layer.fwd, layer.bwd):
                out.extend([cell.W, cell.b])
                for g in cell.gates:
                    if g.w is not None:
                        out.append(g.w)
                    if g.w_c is not None:
                        out.append(g.w_c)
            if layer.proj is not None:
                out.append(layer.proj)
        return out


def _init_gate(
    name: str, config: StackConfig, rng: np.random.Generator, init_weights: bool
) -> SkipGateParams:
    n = config.width
    weights = {}
    for wname in gate_weight_names(config.rule, config.gate):
        if not init_weights:
            w = np.zeros((n, n))
        elif config.gate is GateKind.NONLINEAR_RECURRENT:
            # Multiplies the previous time step's state: orthogonal, like
            # the recurrent blocks of W.
            w = linalg.orthogonal_init(n, rng)
        else:
            w = linalg.gaussian_init(n, n, n, rng)
        weights[wname] = Parameter(f"{name}.{wname}", w)
    return SkipGateParams(
        kind=config.gate,
        p=config.bernoulli_p,
        w=weights.get("w"),
        w_c=weights.get("w_c"),
    )


def init_stack(
    config: StackConfig,
    d_in: int,
    rng: np.random.Generator,
    init_weights: bool = True,
) -> StackParams:
    params = StackParams()
    for l in range(1, config.layers + 1):
        d = d_in if l == 1 else config.width
        cells = {}
        for dirname in ("fwd", "bwd"):
            name = f"stack.l{l}.{dirname}"
            if init_weights:
                cell = init_cell_params(name, config.width, d, rng)
            else:
                cell = CellParams(
                    n=config.width,
                    d_in=d,
                    W=Parameter(f"{name}.W", np.zeros((4 * config.width, d + config.width))),
                    b=Parameter(f"{name}.b", np.zeros(4 * config.width)),
                )
            for j, _src in enumerate(config.layer_sources(l)):
                cell.gates.append(
                    _init_gate(f"{name}.gate{j}", config, rng, init_weights)
                )
            cells[dirname] = cell
        proj = None
        if config.combine == "concat-project" and l < config.layers:
            w = (
                linalg.gaussian_init(config.width, 2 * config.width, 2 * config.width, rng)
                if init_weights
                else np.zeros((config.width, 2 * config.width))
            )
            proj = Parameter(f"stack.l{l}.proj", w)
        params.layers.append(LayerParams(fwd=cells["fwd"], bwd=cells["bwd"], proj=proj))
    return params


def stack_forward(
    tape: Tape,
    params: StackParams,
    config: StackConfig,
    ctx: ForwardCtx,
    xs: list[Node],
) -> list[Node]:
    """Run all layers over the sequence; per-token output is width 2n."""
    if len(params.layers) != config.layers:
        raise UsageError(
            f"stack has {len(params.layers)} layers, config says {config.layers}"
        )
    T = len(xs)
    n = config.width
    zero = ad.constant(tape, np.zeros(n))
    h_seqs: dict[tuple[int, str], list[Node]] = {}
    c_seqs: dict[tuple[int, str], list[Node]] = {}

    layer_in = xs
    for l in range(1, config.layers + 1):
        sources = config.layer_sources(l)
        rule = config.rule if sources else CellRule.PLAIN_LSTM
        lp = params.layers[l - 1]
        for dirname, cell in (("fwd", lp.fwd), ("bwd", lp.bwd)):
            order = range(T) if dirname == "fwd" else range(T - 1, -1, -1)
            state = CellState(
                c=zero if rule in RULES_WITH_CELL_STATE else None, h=zero
            )
            hs: list[Node | None] = [None] * T
            cs: list[Node | None] = [None] * T
            for t in order:
                skips = []
                for j, src_l in enumerate(sources):
                    src_c_seq = c_seqs.get((src_l, dirname))
                    skips.append(
                        SkipSource(
                            h=h_seqs[(src_l, dirname)][t],
                            c=src_c_seq[t] if src_c_seq is not None else None,
                            gate=cell.gates[j],
                        )
                    )
                state = shortcut_block_step(
                    tape, cell, rule, ctx, layer_in[t], state, skips
                )
                hs[t] = state.h
                cs[t] = state.c
            if l == 1 or l == config.layers:
                hs = [ctx.dropout(tape, h, ctx.hidden_drop) for h in hs]
            h_seqs[(l, dirname)] = hs
            if cs[0] is not None:
                c_seqs[(l, dirname)] = cs
        if l < config.layers:
            f, b = h_seqs[(l, "fwd")], h_seqs[(l, "bwd")]
            if config.combine == "sum":
                layer_in = [ad.add(tape, f[t], b[t]) for t in range(T)]
            else:
                proj = tape.leaf(lp.proj)
                layer_in = [
                    ad.affine(tape, proj, None, f[t], b[t]) for t in range(T)
                ]

    top_f = h_seqs[(config.layers, "fwd")]
    top_b = h_seqs[(config.layers, "bwd")]
    return [ad.concat(tape, [top_f[t], top_b[t]]) for t in range(T)]
