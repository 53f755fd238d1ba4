"""Online SGD with the halving learning-rate schedule, dropout placement,
and binary checkpointing.

The schedule: start at lr0 and multiply by 0.5 after an epoch whose dev
error e_c satisfies |e_p - e_c| / e_p <= 0.005 while lr >= 0.0005 (e_p is
the previous epoch's dev error).  Training stops at max_epochs or when lr
falls below the halt threshold.

Dropout is applied as binary masks in train mode and as a (1-p) activation
scale at test time, at three sites: the window input (p=0.25 by default)
and the outputs of the first and last hidden layers (p=0.5).

Checkpoints are a format-version line, a JSON header describing config,
vocabularies and every parameter path + shape, then the raw little-endian
float64 arrays in header order; a round trip is bitwise exact.
"""

from __future__ import annotations

import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .cells import CellRule, GateKind
from .data import TaggedCorpus, tags_of, tokens_of
from .errors import CheckpointError, DataError, NonFiniteError
from .features import FeatureDims, Vocab
from .linalg import make_rng
from .model import (
    TaggerModel,
    TagVocab,
    accuracy,
    forward_nodes,
    predict,
)
from .stack import StackConfig, Topology

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr0: float = 0.02
    lr_halt: float = 0.0005
    improve_thresh: float = 0.005
    window_drop: float = 0.25
    hidden_drop: float = 0.5
    max_epochs: int = 50
    seed: int = 1
    shuffle: bool = True


@dataclass
class TrainState:
    epochs_run: int = 0
    lr: float = 0.0
    dev_errors: list[float] = field(default_factory=list)
    best_dev_acc: float = -1.0
    best_params: dict[str, np.ndarray] | None = None
    log_lines: list[str] = field(default_factory=list)


def lr_step(
    e_p: float, e_c: float, lr: float, thresh: float = 0.005, floor: float = 0.0005
) -> float:
    """Halve lr when dev error stalls: |e_p-e_c|/e_p <= thresh and lr >= floor."""
    if e_p <= 0.0:
        return lr  # relative change undefined; skip halving
    if abs(e_p - e_c) / e_p <= thresh and lr >= floor:
        return lr * 0.5
    return lr


def dropout_mask(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Binary keep-mask with drop rate p: entries are 1 with prob 1-p."""
    if not 0.0 <= p < 1.0:
        raise DataError(f"drop rate must be in [0,1), got {p}")
    return (rng.random(n) < 1.0 - p).astype(np.float64)


def sequence_loss_node(model, tokens, gold_ids, ctx):
    tape, logps = forward_nodes(model, tokens, ctx)
    picks = [ad.pick(tape, lp, g) for lp, g in zip(logps, gold_ids)]
    loss = ad.scale(tape, ad.sum_nodes(tape, picks), -1.0 / len(tokens))
    return tape, loss


def sgd_sequence_update(
    model: TaggerModel,
    tokens: list[str],
    gold_ids: list[int],
    lr: float,
    config: TrainConfig,
    rng: np.random.Generator,
) -> float:
    """One online update: forward with fresh masks, backward, theta -= lr*grad.

    Returns the pre-update loss.  Aborts with NonFiniteError if the loss or
    any gradient is not finite.
    """
    model.window_drop = config.window_drop
    model.hidden_drop = config.hidden_drop
    model.zero_grads()
    tape, loss = sequence_loss_node(
        model, tokens, gold_ids, model.make_ctx(train=True, rng=rng)
    )
    tape.backward(loss)
    loss_value = float(loss.value)
    if not np.isfinite(loss_value):
        raise NonFiniteError(f"non-finite loss {loss_value}")
    for p in model.parameters():
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient in {p.name}")
        p.value -= lr * p.grad
    return loss_value


def _thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("SHORTCUT_STACK_THREADS", "1")))
    except ValueError:
        return 1


def evaluate(model: TaggerModel, corpus: TaggedCorpus) -> float:
    """Token accuracy of test-mode predictions over a corpus."""
    sentences = [tokens_of(s) for s in corpus]
    workers = min(_thread_cap(), max(1, len(sentences)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            preds = list(pool.map(lambda toks: predict(model, toks), sentences))
    else:
        preds = [predict(model, toks) for toks in sentences]
    hits = total = 0
    for sent, pred in zip(corpus, preds):
        gold = tags_of(sent)
        hits += sum(1 for p, g in zip(pred, gold) if p == g)
        total += len(gold)
    return hits / total if total else 0.0


def snapshot_params(model: TaggerModel) -> dict[str, np.ndarray]:
    return {p.name: p.value.copy() for p in model.parameters()}


def restore_params(model: TaggerModel, snapshot: dict[str, np.ndarray]) -> None:
    for p in model.parameters():
        p.value[...] = snapshot[p.name]


def train(
    model: TaggerModel,
    train_corpus: TaggedCorpus,
    dev_corpus: TaggedCorpus,
    config: TrainConfig,
    log: Callable[[str], None] | None = None,
) -> TrainState:
    """Epoch loop: shuffled per-sequence updates, dev eval, lr schedule.

    Keeps a snapshot of the best-dev parameters in the returned state; the
    model itself is left at the final epoch's parameters.
    """
    if not train_corpus or not dev_corpus:
        raise DataError("training and dev corpora must be non-empty")
    rng = make_rng(config.seed)
    state = TrainState(lr=config.lr0, best_params=snapshot_params(model))
    gold = [[model.tags.id(t) for t in tags_of(s)] for s in train_corpus]
    prev_error: float | None = None
    lr = config.lr0
    for epoch in range(1, config.max_epochs + 1):
        order = list(range(len(train_corpus)))
        if config.shuffle:
            rng.shuffle(order)
        total_loss = 0.0
        for i in order:
            total_loss += sgd_sequence_update(
                model, tokens_of(train_corpus[i]), gold[i], lr, config, rng
            )
        train_loss = total_loss / len(train_corpus)
        dev_acc = evaluate(model, dev_corpus)
        e_c = 1.0 - dev_acc
        state.epochs_run = epoch
        state.dev_errors.append(e_c)
        line = f"{epoch},{train_loss:.6f},{dev_acc:.6f},{lr:.8g}"
        state.log_lines.append(line)
        if log is not None:
            log(line)
        if dev_acc > state.best_dev_acc:
            state.best_dev_acc = dev_acc
            state.best_params = snapshot_params(model)
        if prev_error is not None:
            lr = lr_step(
                prev_error, e_c, lr, config.improve_thresh, config.lr_halt
            )
        prev_error = e_c
        state.lr = lr
        if lr < config.lr_halt:
            break
    return state


# ---------------------------------------------------------------------------
# checkpointing


def _model_header(model: TaggerModel) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "stack": {
            "layers": model.config.layers,
            "width": model.config.width,
            "topology": model.config.topology.value,
            "rule": model.config.rule.value,
            "gate": model.config.gate.value,
            "combine": model.config.combine,
            "bernoulli_p": model.config.bernoulli_p,
        },
        "dims": {
            "word_dim": model.features.dims.word_dim,
            "cap_dim": model.features.dims.cap_dim,
            "char_dim": model.features.dims.char_dim,
            "chars_per_word": model.features.dims.chars_per_word,
            "window": model.features.dims.window,
        },
        "drops": {"window": model.window_drop, "hidden": model.hidden_drop},
        "words": model.features.vocab.tokens,
        "chars": model.features.char_vocab.tokens,
        "tags": model.tags.tags,
        "params": [[p.name, list(p.value.shape)] for p in model.parameters()],
    }


def checkpoint_save(model: TaggerModel, path: str) -> None:
    header = json.dumps(_model_header(model), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(f"{CHECKPOINT_VERSION}\n".encode("ascii"))
        fh.write(f"{len(header)}\n".encode("ascii"))
        fh.write(header)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def _read_line(fh: io.BufferedReader, what: str) -> int:
    raw = fh.readline(64)
    try:
        return int(raw.strip())
    except ValueError:
        raise CheckpointError(f"corrupt checkpoint: bad {what} line {raw!r}") from None


def checkpoint_load(path: str) -> TaggerModel:
    with open(path, "rb") as fh:
        version = _read_line(fh, "version")
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version}, "
                f"expected {CHECKPOINT_VERSION}"
            )
        header_len = _read_line(fh, "header length")
        blob = fh.read(header_len)
        if len(blob) != header_len:
            raise CheckpointError("corrupt checkpoint: truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from None

        try:
            st = header["stack"]
            dims = FeatureDims(**header["dims"])
            config = StackConfig(
                layers=st["layers"],
                width=st["width"],
                topology=Topology(st["topology"]),
                rule=CellRule(st["rule"]),
                gate=GateKind(st["gate"]),
                combine=st["combine"],
                bernoulli_p=st["bernoulli_p"],
            )
            vocab = Vocab(header["words"])
            char_vocab = Vocab(header["chars"])
            tags = TagVocab(header["tags"])
            drops = header["drops"]
            shapes = header["params"]
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"invalid checkpoint field: {exc}") from None

        model = TaggerModel.build(
            dims,
            config,
            vocab,
            char_vocab,
            tags,
            rng=make_rng(0),
            window_drop=drops["window"],
            hidden_drop=drops["hidden"],
            init_weights=False,
        )
        params = model.parameters()
        if len(params) != len(shapes):
            raise CheckpointError(
                f"checkpoint lists {len(shapes)} parameters, "
                f"model has {len(params)}"
            )
        for p, (name, shape) in zip(params, shapes):
            if p.name != name or list(p.value.shape) != list(shape):
                raise CheckpointError(
                    f"parameter mismatch: checkpoint has {name} {shape}, "
                    f"model expects {p.name} {list(p.value.shape)}"
                )
            nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise CheckpointError(
                    f"corrupt checkpoint: truncated data for {name}"
                )
            p.value[...] = np.frombuffer(raw, dtype="<f8").reshape(p.value.shape)
        return model
