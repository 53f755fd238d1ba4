"""Command-line entry point.

Commands: train, eval, predict, gradcheck, sweep, gen-data, init-config.

Configuration is a flat "key = value" text file with '#' comments and
module-dotted keys (e.g. "stack.topology = T2"); unknown keys are
rejected.  Defaults follow the reference hyperparameters: window 3, width
465, 9 layers, Type-2 topology, shortcut-block rule, logistic gate on the
layer input, lr0 0.02 with the halving schedule, drop rates 0.25/0.5.

Exit codes: 0 ok, 1 check/accuracy/checkpoint failure, 2 usage/config
error.  SHORTCUT_STACK_THREADS caps evaluation parallelism.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
from dataclasses import dataclass, fields, replace
from multiprocessing import get_context

import numpy as np

from .autodiff import grad_check
from .cells import CellRule, DrawBank, GateKind
from .data import (
    SyntheticSpec,
    TaggedCorpus,
    gen_synthetic,
    load_conll,
    save_conll,
    tokens_of,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    GradCheckError,
    NonFiniteError,
)
from .features import (
    FeatureDims,
    Vocab,
    build_char_vocab,
    build_word_vocab,
    load_pretrained_embeddings,
)
from .linalg import make_rng
from .model import TaggerModel, TagVocab, forward_nodes, predict
from .stack import StackConfig, Topology
from .train import (
    TrainConfig,
    checkpoint_load,
    checkpoint_save,
    evaluate,
    restore_params,
    sequence_loss_node,
    train,
)

GRADCHECK_TOL = 1e-4


@dataclass
class RunConfig:
    word_dim: int = 100
    cap_dim: int = 5
    char_dim: int = 5
    chars_per_word: int = 10
    window: int = 3
    layers: int = 9
    width: int = 465
    topology: str = "T2"
    rule: str = "ShortcutBlock"
    gate: str = "NonlinearPrev"
    combine: str = "sum"
    bernoulli_p: float = 0.5
    lr0: float = 0.02
    lr_halt: float = 0.0005
    improve_thresh: float = 0.005
    window_drop: float = 0.25
    hidden_drop: float = 0.5
    max_epochs: int = 50
    seed: int = 1
    shuffle: bool = True
    data_train: str = ""
    data_dev: str = ""
    data_test: str = ""
    data_embeddings: str = ""
    synth_enabled: bool = False
    synth_vocab_size: int = 12
    synth_tag_count: int = 6
    synth_len_min: int = 9
    synth_len_max: int = 13
    synth_k: int = 8
    synth_train_size: int = 160
    synth_dev_size: int = 48
    synth_test_size: int = 48
    synth_seed: int = 0
    sweep_depths: str = "7,9,11,13"


def _parse_bool(val: str) -> bool:
    low = val.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {val!r}")


def _check_enum(enum_cls):
    def check(val: str) -> str:
        try:
            enum_cls(val)
        except ValueError:
            options = ", ".join(m.value for m in enum_cls)
            raise ValueError(f"must be one of: {options}") from None
        return val

    return check


def _check_combine(val: str) -> str:
    if val not in ("sum", "concat-project"):
        raise ValueError("must be one of: sum, concat-project")
    return val


#: dotted config key -> (RunConfig attribute, parser)
CONFIG_KEYS: dict[str, tuple[str, object]] = {
    "features.word_dim": ("word_dim", int),
    "features.cap_dim": ("cap_dim", int),
    "features.char_dim": ("char_dim", int),
    "features.chars_per_word": ("chars_per_word", int),
    "features.window": ("window", int),
    "stack.layers": ("layers", int),
    "stack.width": ("width", int),
    "stack.topology": ("topology", _check_enum(Topology)),
    "stack.rule": ("rule", _check_enum(CellRule)),
    "stack.gate": ("gate", _check_enum(GateKind)),
    "stack.combine": ("combine", _check_combine),
    "stack.bernoulli_p": ("bernoulli_p", float),
    "train.lr0": ("lr0", float),
    "train.lr_halt": ("lr_halt", float),
    "train.improve_thresh": ("improve_thresh", float),
    "train.window_drop": ("window_drop", float),
    "train.hidden_drop": ("hidden_drop", float),
    "train.max_epochs": ("max_epochs", int),
    "train.seed": ("seed", int),
    "train.shuffle": ("shuffle", _parse_bool),
    "data.train": ("data_train", str),
    "data.dev": ("data_dev", str),
    "data.test": ("data_test", str),
    "data.embeddings": ("data_embeddings", str),
    "synth.enabled": ("synth_enabled", _parse_bool),
    "synth.vocab_size": ("synth_vocab_size", int),
    "synth.tag_count": ("synth_tag_count", int),
    "synth.len_min": ("synth_len_min", int),
    "synth.len_max": ("synth_len_max", int),
    "synth.k": ("synth_k", int),
    "synth.train_size": ("synth_train_size", int),
    "synth.dev_size": ("synth_dev_size", int),
    "synth.test_size": ("synth_test_size", int),
    "synth.seed": ("synth_seed", int),
    "sweep.depths": ("sweep_depths", str),
}


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        attr, parse = CONFIG_KEYS[key]
        try:
            setattr(cfg, attr, parse(val))
        except ValueError as exc:
            raise ConfigError(f"{origin}:{lineno}: {key}: {exc}") from None
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read(), origin=path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    """Effective configuration in the same flat format (round-trips)."""
    lines = ["# shortcut-stack configuration"]
    for key, (attr, _) in CONFIG_KEYS.items():
        lines.append(f"{key} = {_format_value(getattr(cfg, attr))}")
    return "\n".join(lines) + "\n"


def feature_dims(cfg: RunConfig) -> FeatureDims:
    return FeatureDims(
        word_dim=cfg.word_dim,
        cap_dim=cfg.cap_dim,
        char_dim=cfg.char_dim,
        chars_per_word=cfg.chars_per_word,
        window=cfg.window,
    )


def stack_config(cfg: RunConfig) -> StackConfig:
    return StackConfig(
        layers=cfg.layers,
        width=cfg.width,
        topology=Topology(cfg.topology),
        rule=CellRule(cfg.rule),
        gate=GateKind(cfg.gate),
        combine=cfg.combine,
        bernoulli_p=cfg.bernoulli_p,
    )


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr0=cfg.lr0,
        lr_halt=cfg.lr_halt,
        improve_thresh=cfg.improve_thresh,
        window_drop=cfg.window_drop,
        hidden_drop=cfg.hidden_drop,
        max_epochs=cfg.max_epochs,
        seed=cfg.seed,
        shuffle=cfg.shuffle,
    )


def synth_spec(cfg: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(
        vocab_size=cfg.synth_vocab_size,
        tag_count=cfg.synth_tag_count,
        len_min=cfg.synth_len_min,
        len_max=cfg.synth_len_max,
        k=cfg.synth_k,
        train_size=cfg.synth_train_size,
        dev_size=cfg.synth_dev_size,
        test_size=cfg.synth_test_size,
        seed=cfg.synth_seed,
    )


def load_corpora(
    cfg: RunConfig,
) -> tuple[TaggedCorpus, TaggedCorpus, TaggedCorpus | None]:
    if cfg.data_train:
        if not cfg.data_dev:
            raise ConfigError("data.dev is not set")
        train_c = load_conll(cfg.data_train)
        dev_c = load_conll(cfg.data_dev)
        test_c = load_conll(cfg.data_test) if cfg.data_test else None
        return train_c, dev_c, test_c
    if cfg.synth_enabled:
        return gen_synthetic(synth_spec(cfg))
    raise ConfigError("data.train is not set and synth.enabled is false")


def build_model(cfg: RunConfig, train_corpus: TaggedCorpus) -> TaggerModel:
    sentences = [tokens_of(s) for s in train_corpus]
    vocab = build_word_vocab(sentences)
    char_vocab = build_char_vocab(sentences)
    tags = TagVocab.build(tag for s in train_corpus for _, tag in s)
    model = TaggerModel.build(
        feature_dims(cfg),
        stack_config(cfg),
        vocab,
        char_vocab,
        tags,
        rng=make_rng(cfg.seed),
        window_drop=cfg.window_drop,
        hidden_drop=cfg.hidden_drop,
    )
    if cfg.data_embeddings:
        load_pretrained_embeddings(model.features, cfg.data_embeddings)
    return model


# ---------------------------------------------------------------------------
# commands


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        corpora = load_corpora(cfg)
        train_c, dev_c, test_c = corpora
        model = build_model(cfg, train_c)
    except (ConfigError, DataError) as exc:
        _err(str(exc))
        return 2
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "train_log.csv")
    ckpt_path = os.path.join(out_dir, "model.ckpt")
    try:
        with open(log_path, "w", encoding="utf-8") as log_fh:
            state = train(
                model,
                train_c,
                dev_c,
                train_config(cfg),
                log=lambda line: print(line, file=log_fh),
            )
    except NonFiniteError as exc:
        _err(str(exc))
        return 1
    if state.best_params is not None:
        restore_params(model, state.best_params)
    checkpoint_save(model, ckpt_path)
    print(f"checkpoint {ckpt_path}")
    print(f"log {log_path}")
    print(f"dev_accuracy {max(state.best_dev_acc, 0.0):.6f}")
    if test_c:
        print(f"test_accuracy {evaluate(model, test_c):.6f}")
    return 0


def cmd_eval(args) -> int:
    try:
        model = checkpoint_load(args.checkpoint)
        corpus = load_conll(args.data)
        acc = evaluate(model, corpus)
    except (CheckpointError, DataError, OSError) as exc:
        _err(str(exc))
        return 1
    print(f"accuracy {acc:.6f}")
    return 0


def cmd_predict(args) -> int:
    try:
        model = checkpoint_load(args.checkpoint)
        if args.input:
            with open(args.input, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        else:
            lines = sys.stdin.readlines()
    except (CheckpointError, OSError) as exc:
        _err(str(exc))
        return 1
    for line in lines:
        tokens = line.split()
        if not tokens:
            continue
        for token, tag in zip(tokens, predict(model, tokens)):
            print(f"{token} {tag}")
        print()
    return 0


# -- gradcheck ---------------------------------------------------------------

_TINY_SENTENCE = ["The", "cat-22", "sat"]
_TINY_WORDS = ["The", "cat-22", "sat", "on", "a", "Mat", "IBM2000", "dog", "ran", "x"]
_TINY_TAGS = [f"t{i}" for i in range(5)]


def _tiny_model(rule: CellRule, gate: GateKind, topology: Topology) -> TaggerModel:
    dims = FeatureDims(word_dim=3, cap_dim=2, char_dim=2, chars_per_word=4, window=3)
    config = StackConfig(
        layers=5, width=4, topology=topology, rule=rule, gate=gate, bernoulli_p=0.5
    )
    vocab = build_word_vocab([_TINY_WORDS])
    char_vocab = build_char_vocab([_TINY_WORDS])
    tags = TagVocab.build(_TINY_TAGS)
    return TaggerModel.build(
        dims, config, vocab, char_vocab, tags, rng=make_rng(12345)
    )


def gradcheck_combo(
    rule: CellRule,
    gate: GateKind,
    topology: Topology,
    entries: int | None,
) -> float:
    """Max relative gradient error of one tiny end-to-end configuration.

    Stochastic gates are frozen: a recording pass samples every Bernoulli
    mask once, and every later evaluation replays the same masks.
    """
    model = _tiny_model(rule, gate, topology)
    gold = [0, 3, 1]
    bank = DrawBank()
    sequence_loss_node(
        model,
        _TINY_SENTENCE,
        gold,
        model.make_ctx(train=True, rng=make_rng(777), draws=bank),
    )
    bank.start_replay()

    def build():
        bank.rewind()
        return sequence_loss_node(
            model, _TINY_SENTENCE, gold, model.make_ctx(train=True, draws=bank)
        )

    return grad_check(
        build,
        model.parameters(),
        eps=1e-5,
        entries_per_param=entries,
        rng=make_rng(99),
    )


def _combo_worker(job) -> tuple[str, str, str, float]:
    rule, gate, topo, entries = job
    err = gradcheck_combo(CellRule(rule), GateKind(gate), Topology(topo), entries)
    return rule, gate, topo, err


def _proc_cap(requested: int | None) -> int:
    cap = int(os.environ.get("SHORTCUT_STACK_THREADS", os.cpu_count() or 1))
    if requested is not None:
        cap = requested
    return max(1, min(cap, os.cpu_count() or 1))


def cmd_gradcheck(args) -> int:
    entries = None if args.entries == 0 else args.entries
    jobs = [
        (rule.value, gate.value, topo.value, entries)
        for rule, gate, topo in itertools.product(CellRule, GateKind, Topology)
    ]
    procs = _proc_cap(args.procs)
    if procs > 1:
        with get_context("fork").Pool(procs) as pool:
            results = pool.map(_combo_worker, jobs, chunksize=8)
    else:
        results = [_combo_worker(job) for job in jobs]
    failures = 0
    worst = 0.0
    for rule, gate, topo, err in results:
        status = "PASS" if err <= GRADCHECK_TOL else "FAIL"
        worst = max(worst, err)
        if status == "FAIL":
            failures += 1
        print(f"{rule:28s} {gate:20s} {topo:3s} {err:11.3e}  {status}")
    print(
        f"gradcheck: {len(results) - failures}/{len(results)} combinations "
        f"within {GRADCHECK_TOL:g} (max error {worst:.3e})"
    )
    return 0 if failures == 0 else 1


# -- sweep -------------------------------------------------------------------


def _sweep_values(cfg: RunConfig, axis: str) -> list[tuple[str, RunConfig]]:
    if axis == "topology":
        return [(t.value, replace(cfg, topology=t.value)) for t in Topology]
    if axis == "gate":
        return [(g.value, replace(cfg, gate=g.value)) for g in GateKind]
    if axis == "rule":
        return [(r.value, replace(cfg, rule=r.value)) for r in CellRule]
    if axis == "depth":
        try:
            depths = [int(d) for d in cfg.sweep_depths.split(",") if d.strip()]
        except ValueError:
            raise ConfigError(f"sweep.depths: bad list {cfg.sweep_depths!r}") from None
        return [(str(d), replace(cfg, layers=d)) for d in depths]
    raise ConfigError(f"unknown sweep axis {axis!r}")


def _train_once(cfg: RunConfig, seed: int) -> tuple[float, float]:
    cfg = replace(cfg, seed=seed)
    train_c, dev_c, test_c = load_corpora(cfg)
    model = build_model(cfg, train_c)
    state = train(model, train_c, dev_c, train_config(cfg))
    if state.best_params is not None:
        restore_params(model, state.best_params)
    dev_acc = max(state.best_dev_acc, 0.0)
    test_acc = evaluate(model, test_c) if test_c else float("nan")
    return dev_acc, test_acc


def cmd_sweep(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        rows = _sweep_values(cfg, args.axis)
    except (ConfigError, DataError) as exc:
        _err(str(exc))
        return 2
    width = max(len(label) for label, _ in rows)
    print(f"{args.axis:<{width}s}  {'dev':>8s}  {'test':>8s}")
    try:
        for label, row_cfg in rows:
            devs, tests = [], []
            for s in range(args.seeds):
                dev_acc, test_acc = _train_once(row_cfg, row_cfg.seed + s)
                devs.append(dev_acc)
                tests.append(test_acc)
            dev_mean = sum(devs) / len(devs)
            test_mean = sum(tests) / len(tests)
            print(f"{label:<{width}s}  {dev_mean:8.4f}  {test_mean:8.4f}")
    except (ConfigError, DataError) as exc:
        _err(str(exc))
        return 2
    except NonFiniteError as exc:
        _err(str(exc))
        return 1
    return 0


def cmd_gen_data(args) -> int:
    try:
        cfg = load_config(args.config)
        spec = synth_spec(cfg)
        corpora = gen_synthetic(spec)
    except (ConfigError, DataError) as exc:
        _err(str(exc))
        return 2
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    for name, corpus in zip(("train", "dev", "test"), corpora):
        path = os.path.join(out_dir, f"{name}.conll")
        save_conll(corpus, path)
        print(f"{name} {path} ({len(corpus)} sentences)")
    return 0


def cmd_init_config(args) -> int:
    text = dump_config(RunConfig())
    if args.path:
        with open(args.path, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.path}")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shortcut-stack",
        description="Stacked bidirectional recurrent tagger with gated "
        "cross-layer shortcut blocks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a tagger")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="tag sentences (one per line)")
    p.add_argument("checkpoint")
    p.add_argument("input", nargs="?", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser(
        "gradcheck",
        help="check tape gradients against central finite differences "
        "over every rule x gate x topology combination",
    )
    p.add_argument("--entries", type=int, default=6,
                   help="finite-difference probes per parameter (0 = all)")
    p.add_argument("--procs", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train one model per axis value")
    p.add_argument("--config", default=None)
    p.add_argument("--axis", required=True,
                   choices=("topology", "gate", "rule", "depth"))
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-data", help="write synthetic train/dev/test files")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("init-config", help="write the default config file")
    p.add_argument("path", nargs="?", default=None)
    p.set_defaults(func=cmd_init_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (ConfigError, GradCheckError) as exc:
        _err(str(exc))
        return 2
    except (DataError, CheckpointError, NonFiniteError) as exc:
        _err(str(exc))
        return 1


def entry() -> None:  # console-script hook
    sys.exit(main())


if __name__ == "__main__":
    entry()
