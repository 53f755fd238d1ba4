"""Reverse-mode differentiation on an explicit tape.

A forward pass records one `Node` per vector-level primitive (affine map,
elementwise product, nonlinearity, slice, concat, ...).  `Tape.backward`
walks the records in reverse, calling each node's vector-Jacobian product,
which accumulates (never overwrites) into the parents' `grad` buffers --
multi-use nodes such as skip sources therefore sum their contributions.

Parameters are leaves.  One leaf node is created per `Parameter` per tape;
after the backward walk its accumulated gradient is added into
`Parameter.grad`.

The tape records at vector granularity, so every VJP is a couple of numpy
calls and the tape for a whole sentence stays in the low thousands of nodes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import linalg
from .errors import GradCheckError, ShapeError, UsageError


class Parameter:
    """A named weight array with an accumulated gradient of the same shape."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Node:
    """One recorded value: the result array plus enough state for its VJP."""

    __slots__ = ("value", "grad", "vjp")

    def __init__(self, value: np.ndarray, vjp: Callable | None = None):
        self.value = value
        self.grad = None
        self.vjp = vjp


class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._param_leaves: dict[int, tuple[Parameter, Node]] = {}
        self._consumed = False

    def leaf(self, param: Parameter) -> Node:
        """The (cached) leaf node for `param` on this tape."""
        entry = self._param_leaves.get(id(param))
        if entry is None:
            node = Node(param.value)
            self._param_leaves[id(param)] = (param, node)
            return node
        return entry[1]

    def emit(self, value: np.ndarray, vjp: Callable | None) -> Node:
        node = Node(value, vjp)
        self._nodes.append(node)
        return node

    def backward(self, loss: Node, seed: float = 1.0) -> None:
        """Accumulate d(loss)/d(param) into every parameter's `grad`.

        The tape is consumed: a second backward raises `UsageError`.
        """
        if self._consumed:
            raise UsageError("tape already consumed by a previous backward")
        if not self._nodes:
            raise UsageError("backward before any forward was recorded")
        if np.ndim(loss.value) != 0:
            raise UsageError("backward requires a scalar loss node")
        self._consumed = True
        loss.grad = np.asarray(float(seed))
        for node in reversed(self._nodes):
            if node.grad is not None and node.vjp is not None:
                node.vjp(node.grad)
        for param, node in self._param_leaves.values():
            if node.grad is not None:
                param.grad += node.grad


def _acc(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64)
    else:
        node.grad += g


def _grad_buf(node: Node) -> np.ndarray:
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    return node.grad


# ---------------------------------------------------------------------------
# primitives


def constant(tape: Tape, value: np.ndarray) -> Node:
    """A leaf with no gradient flow (initial states, sampled masks)."""
    return Node(np.asarray(value, dtype=np.float64))


def add(tape: Tape, a: Node, b: Node) -> Node:
    def vjp(u):
        _acc(a, u)
        _acc(b, u)

    return tape.emit(a.value + b.value, vjp)


def sub(tape: Tape, a: Node, b: Node) -> Node:
    def vjp(u):
        _acc(a, u)
        _acc(b, -u)

    return tape.emit(a.value - b.value, vjp)


def sum_nodes(tape: Tape, nodes: Sequence[Node]) -> Node:
    """Elementwise sum of same-shaped nodes."""
    if len(nodes) == 1:
        return nodes[0]
    value = nodes[0].value.copy()
    for n in nodes[1:]:
        value += n.value

    def vjp(u):
        for n in nodes:
            _acc(n, u)

    return tape.emit(value, vjp)


def mul(tape: Tape, a: Node, b: Node) -> Node:
    av, bv = a.value, b.value

    def vjp(u):
        _acc(a, u * bv)
        _acc(b, u * av)

    return tape.emit(av * bv, vjp)


def scale(tape: Tape, a: Node, c: float) -> Node:
    def vjp(u):
        _acc(a, u * c)

    return tape.emit(a.value * c, vjp)


def scale_by(tape: Tape, a: Node, arr: np.ndarray) -> Node:
    """Multiply by a constant array (dropout masks, frozen gate masks)."""

    def vjp(u):
        _acc(a, u * arr)

    return tape.emit(a.value * arr, vjp)


def sigmoid(tape: Tape, x: Node) -> Node:
    y = linalg.sigmoid(x.value)

    def vjp(u):
        _acc(x, u * (y * (1.0 - y)))

    return tape.emit(y, vjp)


def tanh(tape: Tape, x: Node) -> Node:
    y = np.tanh(x.value)

    def vjp(u):
        _acc(x, u * (1.0 - y * y))

    return tape.emit(y, vjp)


def gate_block(tape: Tape, pre: Node, n_sigmoid: int) -> Node:
    """Blockwise activation: sigmoid on [:n_sigmoid], tanh on the rest."""
    y = np.empty_like(pre.value)
    y[:n_sigmoid] = linalg.sigmoid(pre.value[:n_sigmoid])
    y[n_sigmoid:] = np.tanh(pre.value[n_sigmoid:])

    def vjp(u):
        g = np.empty_like(y)
        ys = y[:n_sigmoid]
        g[:n_sigmoid] = u[:n_sigmoid] * (ys * (1.0 - ys))
        yt = y[n_sigmoid:]
        g[n_sigmoid:] = u[n_sigmoid:] * (1.0 - yt * yt)
        _acc(pre, g)

    return tape.emit(y, vjp)


def seg(tape: Tape, x: Node, start: int, stop: int) -> Node:
    def vjp(u):
        _grad_buf(x)[start:stop] += u

    return tape.emit(x.value[start:stop], vjp)


def matvec(tape: Tape, w: Node, x: Node) -> Node:
    if w.value.shape[1] != x.value.shape[0]:
        raise ShapeError(
            f"matvec: incompatible shapes {w.value.shape} x {x.value.shape}"
        )
    wv, xv = w.value, x.value

    def vjp(u):
        wg = _grad_buf(w)
        wg += np.outer(u, xv)
        _acc(x, wv.T @ u)

    return tape.emit(wv @ xv, vjp)


def affine(tape: Tape, w: Node, b: Node | None, *xs: Node) -> Node:
    """w @ concat(xs) + b without materializing the concatenation."""
    wv = w.value
    widths = [x.value.shape[0] for x in xs]
    if sum(widths) != wv.shape[1]:
        raise ShapeError(
            f"affine: matrix {wv.shape} vs inputs of total width {sum(widths)}"
        )
    offs = []
    o = 0
    for wd in widths:
        offs.append((o, o + wd))
        o += wd
    value = wv[:, offs[0][0] : offs[0][1]] @ xs[0].value
    for x, (a, c) in zip(xs[1:], offs[1:]):
        value += wv[:, a:c] @ x.value
    if b is not None:
        value = value + b.value

    def vjp(u):
        wg = _grad_buf(w)
        for x, (a, c) in zip(xs, offs):
            wg[:, a:c] += np.outer(u, x.value)
            _acc(x, wv[:, a:c].T @ u)
        if b is not None:
            _acc(b, u)

    return tape.emit(value, vjp)


def concat(tape: Tape, nodes: Sequence[Node]) -> Node:
    widths = [n.value.shape[0] for n in nodes]

    def vjp(u):
        o = 0
        for n, wd in zip(nodes, widths):
            _acc(n, u[o : o + wd])
            o += wd

    return tape.emit(np.concatenate([n.value for n in nodes]), vjp)


def row(tape: Tape, m: Node, i: int) -> Node:
    """Row select (embedding lookup)."""

    def vjp(u):
        _grad_buf(m)[i] += u

    return tape.emit(m.value[i], vjp)


def log_softmax(tape: Tape, x: Node) -> Node:
    s = x.value - x.value.max()
    y = s - np.log(np.exp(s).sum())

    def vjp(u):
        _acc(x, u - np.exp(y) * u.sum())

    return tape.emit(y, vjp)


def pick(tape: Tape, x: Node, i: int) -> Node:
    def vjp(u):
        _grad_buf(x)[i] += u

    return tape.emit(np.asarray(x.value[i]), vjp)


def stochastic_gated_skip(
    tape: Tape, h_skip: Node, mask: np.ndarray, pre: Node | None = None
) -> Node:
    """mask * h_skip, where mask is a sampled Bernoulli gate.

    The mask is a constant in the backward pass.  When `pre` is given (a
    learned gate probability's pre-sigmoid), the gradient to it uses the
    straight-through convention: d(gate)/d(pre) ~ sigmoid'(pre).
    """
    hv = h_skip.value
    if pre is not None:
        p = linalg.sigmoid(pre.value)
        sprime = p * (1.0 - p)

    def vjp(u):
        _acc(h_skip, u * mask)
        if pre is not None:
            _acc(pre, u * hv * sprime)

    return tape.emit(mask * hv, vjp)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    build_loss: Callable[[], tuple[Tape, Node]],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    entries_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    `build_loss` must rebuild the forward pass from the current parameter
    values and return (tape, scalar loss node); it must be deterministic
    (stochastic draws frozen), which is verified by evaluating it twice.

    With `entries_per_param` set, only that many randomly chosen entries of
    each parameter are probed (the full analytic gradient is still used);
    default probes every entry.
    """
    l1 = float(build_loss()[1].value)
    l2 = float(build_loss()[1].value)
    if l1 != l2:
        raise GradCheckError(
            f"loss is not deterministic ({l1!r} != {l2!r}); "
            "freeze stochastic draws before checking"
        )

    for p in params:
        p.zero_grad()
    tape, loss = build_loss()
    tape.backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    def value_at() -> float:
        return float(build_loss()[1].value)

    max_rel = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        ana = analytic[p.name].reshape(-1)
        n = flat.shape[0]
        if entries_per_param is None or entries_per_param >= n:
            idxs = range(n)
        else:
            if rng is None:
                rng = linalg.make_rng(0)
            idxs = rng.choice(n, size=entries_per_param, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = value_at()
            flat[i] = orig - eps
            f_minus = value_at()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(ana[i] - numeric) / max(1e-8, abs(ana[i]) + abs(numeric))
            if rel > max_rel:
                max_rel = rel
    return max_rel
