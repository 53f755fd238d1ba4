"""Deep stacked bidirectional recurrent sequence tagger built on gated
cross-layer shortcut blocks, with a from-scratch reverse-mode tape and a
finite-difference gradient oracle."""

from .autodiff import Parameter, Tape, grad_check
from .cells import (
    CellParams,
    CellRule,
    CellState,
    DrawBank,
    ForwardCtx,
    GateKind,
    SkipGateParams,
    SkipSource,
    gate_value,
    lstm_step,
    shortcut_block_step,
)
from .data import SyntheticSpec, gen_synthetic, load_conll, save_conll, split
from .features import (
    CapCategory,
    FeatureDims,
    FeatureParams,
    Vocab,
    cap_category,
    char_ids,
    normalize,
)
from .model import TaggerModel, TagVocab, accuracy, forward, nll_loss, predict
from .stack import StackConfig, StackParams, Topology, skip_sources, stack_forward
from .train import (
    TrainConfig,
    TrainState,
    checkpoint_load,
    checkpoint_save,
    dropout_mask,
    evaluate,
    lr_step,
    sgd_sequence_update,
    train,
)

__all__ = [
    "CapCategory",
    "CellParams",
    "CellRule",
    "CellState",
    "DrawBank",
    "FeatureDims",
    "FeatureParams",
    "ForwardCtx",
    "GateKind",
    "Parameter",
    "SkipGateParams",
    "SkipSource",
    "StackConfig",
    "StackParams",
    "SyntheticSpec",
    "TagVocab",
    "TaggerModel",
    "Tape",
    "Topology",
    "TrainConfig",
    "TrainState",
    "Vocab",
    "accuracy",
    "cap_category",
    "char_ids",
    "checkpoint_load",
    "checkpoint_save",
    "dropout_mask",
    "evaluate",
    "forward",
    "gate_value",
    "gen_synthetic",
    "grad_check",
    "load_conll",
    "lr_step",
    "lstm_step",
    "nll_loss",
    "normalize",
    "predict",
    "save_conll",
    "sgd_sequence_update",
    "shortcut_block_step",
    "skip_sources",
    "split",
    "stack_forward",
    "train",
]
