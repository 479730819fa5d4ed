"""Command line entry points: train, predict, evaluate, graph, augment, gradcheck, synth."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import torch

from numnet import diffcore as dc
from numnet.estimator import MODEL_FIELDS, TRAIN_FIELDS, NumNet, TrainConfig
from numnet.exceptions import NumNetError
from numnet.graph import GraphConfig, build_graph, dump_graph
from numnet.metrics import evaluate
from numnet.model import ModelConfig, Vocabulary, init_params, instance_loss, make_instance
from numnet.synth import FAMILIES, SyntheticSpec, gen_synthetic, toy_corpus
from numnet.textnum import Split, augment_comparisons, dump_drop_json, load_drop_file

logger = logging.getLogger("numnet")

_FIELD_TYPES = {f.name: f.type for f in fields(ModelConfig)}
_FIELD_TYPES.update({f.name: f.type for f in fields(TrainConfig)})
_DEFAULTS = {name: NumNet().get_params()[name] for name in MODEL_FIELDS + TRAIN_FIELDS}


def _coerce(name: str, value):
    default = _DEFAULTS[name]
    if isinstance(default, bool):
        if isinstance(value, str):
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"config key {name}: expected a boolean, got {value!r}")
            return low in ("true", "1", "yes")
        return bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value)


def read_config_file(path) -> dict:
    """Read a JSON object or ``key = value`` lines (``#`` starts a comment)."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        raw = json.loads(text)
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            raw[key.strip()] = value.strip()
    unknown = sorted(set(raw) - set(_DEFAULTS))
    if unknown:
        raise ValueError(f"{path}: unknown config key {unknown[0]!r}")
    return {k: _coerce(k, v) for k, v in raw.items()}


def effective_config(args) -> dict:
    """Documented defaults, overridden by the config file, overridden by flags."""
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for name in _DEFAULTS:
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()[:12]


def _echo_config(cfg: dict, stream) -> None:
    print(f"# effective config (hash {config_hash(cfg)})", file=stream)
    print(json.dumps(cfg, sort_keys=True), file=stream)


def _add_hyperparameter_flags(parser: argparse.ArgumentParser, names) -> None:
    for name in names:
        flag = "--" + name.replace("_", "-")
        default = _DEFAULTS[name]
        if isinstance(default, bool):
            parser.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None)
        else:
            parser.add_argument(flag, dest=name, type=type(default), default=None,
                                help=f"default: {default}")


def _write_bytes(path, data: bytes) -> None:
    if path in (None, "-"):
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(args) -> int:
    cfg = effective_config(args)
    _echo_config(cfg, sys.stderr)
    train = load_drop_file(args.train, Split.TRAIN)
    dev = load_drop_file(args.dev, Split.DEV) if args.dev else None
    if args.resume:
        est = NumNet.load(args.resume, **{k: v for k, v in cfg.items() if k != "warm_start"})
        est.set_params(warm_start=True)
        print(f"# resuming from {args.resume} after epoch {est.epoch_}", file=sys.stderr)
    else:
        est = NumNet(**cfg)

    def report(est, rec):
        line = f"epoch {rec['epoch']} loss {rec['loss']:.17g}"
        if "dev_em" in rec:
            line += f" dev_em {rec['dev_em']:.4f} dev_f1 {rec['dev_f1']:.4f}"
        print(line, file=sys.stderr, flush=True)

    est.fit(train, dev=dev, checkpoint_path=args.checkpoint, on_epoch_end=report)
    if est.history_ and any("dev_em" in r for r in est.history_):
        best = max((r for r in est.history_ if "dev_em" in r), key=lambda r: r["dev_em"])
        print(f"# best dev EM {best['dev_em']:.4f} at epoch {best['epoch']}", file=sys.stderr)
    print(f"# wrote {args.checkpoint} (epoch {est.epoch_})", file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    overrides = {}
    for name in ("predict_passage_limit", "predict_question_limit", "eval_with_ema"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    est = NumNet.load(args.checkpoint, **overrides)
    _echo_config({k: v for k, v in est.get_params().items() if k in _DEFAULTS}, sys.stderr)
    corpus = load_drop_file(args.corpus, Split.TEST)
    records = est.predict_records(corpus)
    data = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records).encode("utf-8")
    _write_bytes(args.out, data)
    print(f"# {len(records)} predictions", file=sys.stderr)
    return 0


def read_predictions(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as err:
                    raise ValueError(f"{path}:{lineno}: malformed prediction record") from err
    return records


def cmd_evaluate(args) -> int:
    corpus = load_drop_file(args.gold, Split.DEV)
    report = evaluate(read_predictions(args.predictions), corpus)
    print(report.format_table())
    if args.per_example:
        Path(args.per_example).write_text(report.per_example_jsonl(), encoding="utf-8")
    return 0


def cmd_graph(args) -> int:
    corpus = load_drop_file(args.corpus, Split.DEV)
    try:
        example = corpus.by_query_id(args.query_id)
    except KeyError as err:
        raise LookupError(err.args[0]) from None
    config = GraphConfig(
        include_question_numbers=args.include_question_numbers,
        enable_greater_edges=args.enable_greater_edges,
        enable_lower_equal_edges=args.enable_lower_equal_edges,
    )
    graph = build_graph(example.question_numbers, example.passage_numbers, config)
    _write_bytes(args.out, dump_graph(graph, args.format))
    return 0


def cmd_augment(args) -> int:
    corpus = load_drop_file(args.input, Split.TRAIN)
    out = augment_comparisons(corpus, args.seed)
    Path(args.out).write_bytes(dump_drop_json(out))
    print(f"# {len(corpus)} -> {len(out)} examples", file=sys.stderr)
    return 0


def gradcheck_toy(hidden_dim=8, reasoning_steps=2, h=1e-4, tol=1e-3, seed=42, max_entries=200):
    """Finite-difference check of the full loss on a tiny four-example corpus."""
    corpus = toy_corpus()
    vocab = Vocabulary.build(corpus.examples)
    config = ModelConfig(hidden_dim=hidden_dim, embed_dim=hidden_dim, reasoning_steps=reasoning_steps,
                         vocab_size=len(vocab), passage_preferred=False)
    params = init_params(config, seed, torch.float64)
    instances = [make_instance(ex, vocab, config) for ex in corpus.examples]

    def f(p):
        return sum(instance_loss(inst, p, config) for inst in instances)

    return dc.grad_check(f, params, h=h, tol=tol, max_entries=max_entries, seed=seed)


def cmd_gradcheck(args) -> int:
    report = gradcheck_toy(args.hidden_dim, args.reasoning_steps, args.h, args.tol, args.seed, args.max_entries)
    print(report.format())
    return 0 if report.passed else 1


def cmd_synth(args) -> int:
    spec = SyntheticSpec(args.family, args.size, args.min_value, args.max_value, args.seed)
    corpus = gen_synthetic(spec, Split(args.split))
    _write_bytes(args.out, dump_drop_json(corpus))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="numnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write per-epoch checkpoints")
    p.add_argument("--train", required=True, help="DROP-format training file")
    p.add_argument("--dev", help="optional DROP-format dev file scored after every epoch")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--resume", help="checkpoint to continue training from")
    p.add_argument("--config", help="JSON or key=value config file")
    _add_hyperparameter_flags(p, MODEL_FIELDS + TRAIN_FIELDS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write one prediction record per question")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default="-")
    _add_hyperparameter_flags(p, ("predict_passage_limit", "predict_question_limit", "eval_with_ema"))
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold answers")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--per-example")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("graph", help="dump the number graph of one question")
    p.add_argument("--corpus", required=True)
    p.add_argument("--query-id", required=True)
    p.add_argument("--format", choices=("dot", "json"), default="dot")
    p.add_argument("--out", default="-")
    for name in ("include_question_numbers", "enable_greater_edges", "enable_lower_equal_edges"):
        p.add_argument("--" + name.replace("_", "-"), dest=name,
                       action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("augment", help="add candidate-swapped comparing questions")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=dc.DEFAULT_SEED)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model loss")
    p.add_argument("--hidden-dim", type=int, default=8)
    p.add_argument("--reasoning-steps", type=int, default=2)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-entries", type=int, default=200)
    p.add_argument("--seed", type=int, default=dc.DEFAULT_SEED)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic DROP-format corpus")
    p.add_argument("--family", choices=FAMILIES + ("mixed",), default="mixed")
    p.add_argument("--size", type=int, default=100)
    p.add_argument("--min-value", type=int, default=1)
    p.add_argument("--max-value", type=int, default=99)
    p.add_argument("--seed", type=int, default=dc.DEFAULT_SEED)
    p.add_argument("--split", choices=[s.value for s in Split], default="train")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except (NumNetError, OSError, ValueError, LookupError, TypeError) as err:
        msg = str(err).splitlines()[0] if str(err) else type(err).__name__
        print(f"numnet {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
