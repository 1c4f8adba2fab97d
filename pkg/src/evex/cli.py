"""Command-line entry point.

Subcommands cover the whole workflow: synthesize data, train the base LM,
train the relevance classifier, train the prefix stages, predict, score,
sweep prefix hyperparameters, and build the type-transfer split. All
randomness flows from --seed, logs go to stderr, data goes to files, and a
replay manifest is written next to every output artifact.

Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .corpus import generate_synthetic, read_jsonl, stats_table, transfer_split, write_jsonl
from .irrelevance import ICConfig, ICModel, labeled_pairs, train_ic
from .metrics import score_dataset
from .model import ModelConfig, Seq2SeqModel, load_checkpoint, save_checkpoint
from .ontology import (
    EventOntology,
    builtin_ontology,
    load_ontology,
    ontology_from_dict,
    ontology_to_dict,
)
from .pipeline import (
    RunManifest,
    build_pipeline_vocab,
    predict_records,
    predictions_to_instances,
    sweep_csv,
    sweep_prefix,
    write_manifest,
)
from .prefix import DynamicPrefixer, PrefixConfig
from .prompts import build_training_instances
from .training import (
    DESK_STAGES,
    TrainConfig,
    prepare_examples,
    sample_negatives,
    train_stage,
)

STAGE_TAGS = {1: "stage1", 2: "stage2", 3: "stage3"}
AUTO_PREFIX_MODE = {"stage1": "none", "stage2": "static", "static": "static",
                    "stage3": "dynamic"}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _resolve_ontology(name_or_path: str) -> EventOntology:
    p = Path(name_or_path)
    if p.exists():
        return load_ontology(p)
    return builtin_ontology(name_or_path)


def _manifest(args, command: str, inputs, outputs, t0: float) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func" and v is not None}
    write_manifest(RunManifest(
        command=command, config={k: str(v) for k, v in config.items()},
        seed=getattr(args, "seed", None),
        inputs=tuple(str(i) for i in inputs),
        outputs=tuple(str(o) for o in outputs),
        wall_time_s=time.perf_counter() - t0,
    ))


def _train_config(args, stage: int | None = None, lr: float = 1e-3,
                  epochs: int = 10) -> TrainConfig:
    if stage is not None:
        lr, epochs = DESK_STAGES[stage].learning_rate, DESK_STAGES[stage].epochs
    return TrainConfig(
        learning_rate=args.lr if args.lr is not None else lr,
        epochs=args.epochs if args.epochs is not None else epochs,
        batch_size=args.batch_size,
        weight_decay=args.weight_decay,
        grad_clip_norm=args.clip,
        warmup_ratio=args.warmup_ratio,
        seed=args.seed,
        neg_sample_rate=args.neg_rate,
    )


def _add_train_flags(sub) -> None:
    sub.add_argument("--lr", type=float, default=None, help="peak learning rate")
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--batch-size", type=int, default=16)
    sub.add_argument("--weight-decay", type=float, default=1e-5)
    sub.add_argument("--clip", type=float, default=5.0)
    sub.add_argument("--warmup-ratio", type=float, default=0.1)
    sub.add_argument("--neg-rate", type=float, default=0.04,
                     help="negative subtask sampling rate for train and dev")
    sub.add_argument("--eval-every", type=int, default=1)
    sub.add_argument("--log", type=Path, default=None, help="CSV metrics log")


def _load_split(path: Path, ontology: EventOntology):
    sents = read_jsonl(path)
    return sents, build_training_instances(sents, ontology)


def _prepared(args, ontology, vocab, train_path, dev_path, seed):
    _, inst_train = _load_split(train_path, ontology)
    train = prepare_examples(
        sample_negatives(inst_train, args.neg_rate, seed), vocab, ontology)
    dev = []
    if dev_path is not None:
        _, inst_dev = _load_split(dev_path, ontology)
        dev = prepare_examples(
            sample_negatives(inst_dev, args.neg_rate, seed + 1), vocab, ontology)
    return train, dev


# ------------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    t0 = time.perf_counter()
    onto = _resolve_ontology(args.ontology)
    data = generate_synthetic(onto, args.n, args.irrelevant_rate, args.seed)
    write_jsonl(args.out, data)
    _log(stats_table({"generated": data}))
    _manifest(args, "gen-data", [], [args.out], t0)
    return 0


def cmd_split_transfer(args) -> int:
    t0 = time.perf_counter()
    onto = _resolve_ontology(args.ontology)
    data = read_jsonl(args.data)
    parts = transfer_split(data, onto, args.seed)
    names = ("src_train", "src_test", "tgt_train", "tgt_test")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, part in zip(names, parts):
        path = args.out_dir / f"{name}.jsonl"
        write_jsonl(path, part)
        outputs.append(path)
    _log(stats_table(dict(zip(names, parts))))
    _manifest(args, "split-transfer", [args.data], outputs, t0)
    return 0


def cmd_train_base(args) -> int:
    t0 = time.perf_counter()
    onto = _resolve_ontology(args.ontology)
    _, inst_train = _load_split(args.train, onto)
    vocab = build_pipeline_vocab(inst_train)
    cfg = _train_config(args, stage=1)
    train = prepare_examples(
        sample_negatives(inst_train, args.neg_rate, args.seed), vocab, onto)
    dev = []
    if args.dev is not None:
        _, inst_dev = _load_split(args.dev, onto)
        dev = prepare_examples(
            sample_negatives(inst_dev, args.neg_rate, args.seed + 1), vocab, onto)
    model = Seq2SeqModel(ModelConfig(
        vocab_size=len(vocab), d_model=args.d_model, n_layers=args.n_layers,
        n_heads=args.n_heads, d_ff=args.d_ff, max_len=args.max_len), seed=args.seed)
    _log(f"training base model: {len(train)} subtasks, vocab {len(vocab)}")
    res = train_stage(1, model, None, train, dev, cfg, onto, vocab,
                      log_path=args.log, eval_every=args.eval_every)
    _log(f"best epoch {res.best_epoch}, final train loss "
         f"{res.history[-1].train_loss:.4f}, skipped steps {res.skipped_steps}")
    save_checkpoint(args.out, model, vocab, STAGE_TAGS[1], ontology_to_dict(onto))
    outputs = [args.out] + ([args.log] if args.log else [])
    _manifest(args, "train-base", [args.train, args.dev], outputs, t0)
    return 0


def cmd_train_ic(args) -> int:
    t0 = time.perf_counter()
    ck = load_checkpoint(args.checkpoint)
    if ck.ontology_dict is None:
        raise ValueError("checkpoint carries no ontology; retrain the base model")
    onto = ontology_from_dict(ck.ontology_dict)
    train_sents = read_jsonl(args.train)
    dev_sents = read_jsonl(args.dev) if args.dev is not None else []
    cfg = _train_config(args, lr=3e-3, epochs=6)
    ic = ICModel(ICConfig(
        vocab_size=len(ck.vocab), d=args.d, n_layers=args.n_layers,
        n_heads=args.n_heads, d_ff=args.d_ff, max_len=args.max_len,
        head_hidden=args.head_hidden), seed=args.seed)
    res = train_ic(ic, labeled_pairs(train_sents, ck.vocab),
                   labeled_pairs(dev_sents, ck.vocab), cfg)
    _log(f"relevance classifier best dev accuracy {res.best_dev_accuracy:.4f} "
         f"at epoch {res.best_epoch}")
    out = args.out if args.out is not None else args.checkpoint
    save_checkpoint(out, ck.model, ck.vocab, ck.stage, ck.ontology_dict,
                    prefixer=ck.prefixer, ic=ic)
    _manifest(args, "train-ic", [args.train, args.dev, args.checkpoint], [out], t0)
    return 0


def cmd_train_prefix(args) -> int:
    t0 = time.perf_counter()
    ck = load_checkpoint(args.checkpoint)
    if ck.ontology_dict is None:
        raise ValueError("checkpoint carries no ontology; retrain the base model")
    onto = ontology_from_dict(ck.ontology_dict)
    train, dev = _prepared(args, onto, ck.vocab, args.train, args.dev, args.seed)

    if args.mode == "static":
        schedule_stage, tag = 2, "static"
    else:
        schedule_stage, tag = args.stage, STAGE_TAGS[args.stage]

    if schedule_stage == 3:
        if ck.prefixer is None:
            raise ValueError("--stage 3 needs a checkpoint that already has a "
                             "trained prefix (run --stage 2 first)")
        prefixer = ck.prefixer
    else:
        mc = ck.model.config
        prefixer = DynamicPrefixer(PrefixConfig(
            n_types=len(onto), n_layers=mc.n_layers, d_model=mc.d_model,
            vocab_size=len(ck.vocab), prefix_len=args.prefix_len, d_raw=args.d_raw,
            d_ctx=args.d_ctx, ctx_layers=args.ctx_layers, ctx_heads=args.ctx_heads,
            ctx_ff=args.ctx_ff, ctx_max_len=args.ctx_max_len, h_dyn=args.h_dyn,
            mlp_activation=args.mlp_activation), seed=args.seed + 3)

    cfg = _train_config(args, stage=schedule_stage)
    _log(f"training prefix ({tag}): {len(train)} subtasks")
    res = train_stage(schedule_stage, ck.model, prefixer, train, dev, cfg, onto,
                      ck.vocab, log_path=args.log, eval_every=args.eval_every)
    _log(f"best epoch {res.best_epoch}, final train loss "
         f"{res.history[-1].train_loss:.4f}, skipped steps {res.skipped_steps}")
    out = args.out if args.out is not None else args.checkpoint
    save_checkpoint(out, ck.model, ck.vocab, tag, ck.ontology_dict,
                    prefixer=prefixer, ic=ck.ic)
    _manifest(args, "train-prefix", [args.train, args.dev, args.checkpoint], [out], t0)
    return 0


def cmd_predict(args) -> int:
    t0 = time.perf_counter()
    ck = load_checkpoint(args.checkpoint)
    if ck.ontology_dict is None:
        raise ValueError("checkpoint carries no ontology; retrain the base model")
    onto = ontology_from_dict(ck.ontology_dict)
    sents = read_jsonl(args.data)
    mode = args.prefix_mode
    if mode == "auto":
        mode = AUTO_PREFIX_MODE.get(ck.stage)
        if mode is None:
            raise ValueError(f"cannot infer prefix mode from stage {ck.stage!r}; "
                             "pass --prefix-mode explicitly")
    if mode != "none" and ck.prefixer is None:
        raise ValueError(f"prefix mode {mode!r} needs a checkpoint with a prefix")
    if args.ic == "trained" and ck.ic is None:
        raise ValueError("--ic trained needs a checkpoint with a relevance "
                         "classifier (run train-ic first)")
    types = args.types.split(",") if args.types else None
    preds = predict_records(
        ck.model, ck.vocab, onto, sents, prefixer=ck.prefixer, prefix_mode=mode,
        ic_mode=args.ic, ic=ck.ic, beam=args.beam, max_steps=args.max_steps,
        types=types)
    write_jsonl(args.out, predictions_to_instances(sents, preds))
    n_rec = sum(len(v) for v in preds.values())
    n_hit = sum(1 for v in preds.values() if v)
    _log(f"predicted {n_rec} records across {n_hit}/{len(sents)} sentences "
         f"(prefix {mode}, filter {args.ic}, beam {args.beam})")
    _manifest(args, "predict", [args.data, args.checkpoint], [args.out], t0)
    return 0


def cmd_score(args) -> int:
    t0 = time.perf_counter()
    pred_sents = read_jsonl(args.pred, allow_unresolved=True)
    gold_sents = read_jsonl(args.gold)
    preds = {}
    for s in pred_sents:
        if s.sent_id in preds:
            raise ValueError(f"duplicate sentence id {s.sent_id} in predictions")
        preds[s.sent_id] = list(s.events)
    report = score_dataset(preds, gold_sents)
    args.out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    _log(report.table())
    _manifest(args, "score", [args.pred, args.gold], [args.out], t0)
    return 0


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    ck = load_checkpoint(args.checkpoint)
    if ck.ontology_dict is None:
        raise ValueError("checkpoint carries no ontology; retrain the base model")
    onto = ontology_from_dict(ck.ontology_dict)
    train, dev = _prepared(args, onto, ck.vocab, args.train, args.dev, args.seed)
    if not dev:
        raise ValueError("sweep needs a --dev split to evaluate on")
    values = [int(v) for v in args.values.split(",") if v]
    if not values:
        raise ValueError("--values must list at least one integer")
    cfgs = {s: _train_config(args, stage=s) for s in (2, 3)}
    prefix_kw = {"prefix_len": args.prefix_len, "d_raw": args.d_raw,
                 "d_ctx": args.d_ctx, "ctx_layers": args.ctx_layers,
                 "ctx_heads": args.ctx_heads, "ctx_ff": args.ctx_ff,
                 "ctx_max_len": args.ctx_max_len, "h_dyn": args.h_dyn}
    _log(f"sweeping {args.param} over {values}")
    rows = sweep_prefix(args.param, values, ck.model, ck.vocab, onto, train, dev,
                        stage_cfgs=cfgs, prefix_kw=prefix_kw, beam=args.beam,
                        max_steps=args.max_steps, seed=args.seed)
    args.out.write_text(sweep_csv(args.param, rows), encoding="utf-8")
    for v, trg, arg in rows:
        _log(f"  {args.param}={v}: trg_f1={trg:.4f} arg_f1={arg:.4f}")
    _manifest(args, "sweep", [args.train, args.dev, args.checkpoint], [args.out], t0)
    return 0


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="evex",
        description="Template-based event extraction with prefix steering.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic annotated corpus")
    g.add_argument("--ontology", default="toy", help="builtin name or JSON path")
    g.add_argument("--n", type=int, required=True, help="number of sentences")
    g.add_argument("--irrelevant-rate", type=float, default=0.8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_gen_data)

    g = sub.add_parser("split-transfer", help="source/target type-transfer split")
    g.add_argument("--ontology", default="toy")
    g.add_argument("--data", type=Path, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", type=Path, required=True)
    g.set_defaults(func=cmd_split_transfer)

    g = sub.add_parser("train-base", help="stage 1: train the LM, no prefix")
    g.add_argument("--ontology", default="toy")
    g.add_argument("--train", type=Path, required=True)
    g.add_argument("--dev", type=Path, default=None)
    g.add_argument("--out", type=Path, required=True, help="checkpoint directory")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--d-model", type=int, default=32)
    g.add_argument("--n-layers", type=int, default=2)
    g.add_argument("--n-heads", type=int, default=4)
    g.add_argument("--d-ff", type=int, default=64)
    g.add_argument("--max-len", type=int, default=96)
    _add_train_flags(g)
    g.set_defaults(func=cmd_train_base)

    g = sub.add_parser("train-ic", help="train the relevance classifier")
    g.add_argument("--train", type=Path, required=True)
    g.add_argument("--dev", type=Path, default=None)
    g.add_argument("--checkpoint", type=Path, required=True)
    g.add_argument("--out", type=Path, default=None,
                   help="output checkpoint (default: update --checkpoint)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--d", type=int, default=32)
    g.add_argument("--n-layers", type=int, default=1)
    g.add_argument("--n-heads", type=int, default=4)
    g.add_argument("--d-ff", type=int, default=64)
    g.add_argument("--max-len", type=int, default=64)
    g.add_argument("--head-hidden", type=int, default=16)
    _add_train_flags(g)
    g.set_defaults(func=cmd_train_ic)

    g = sub.add_parser("train-prefix", help="stages 2-3 or the static ablation")
    g.add_argument("--train", type=Path, required=True)
    g.add_argument("--dev", type=Path, default=None)
    g.add_argument("--checkpoint", type=Path, required=True)
    g.add_argument("--out", type=Path, default=None,
                   help="output checkpoint (default: update --checkpoint)")
    g.add_argument("--seed", type=int, default=0)
    which = g.add_mutually_exclusive_group(required=True)
    which.add_argument("--stage", type=int, choices=(2, 3))
    which.add_argument("--mode", choices=("static",))
    g.add_argument("--prefix-len", type=int, default=8)
    g.add_argument("--d-raw", type=int, default=32)
    g.add_argument("--d-ctx", type=int, default=32)
    g.add_argument("--ctx-layers", type=int, default=1)
    g.add_argument("--ctx-heads", type=int, default=4)
    g.add_argument("--ctx-ff", type=int, default=64)
    g.add_argument("--ctx-max-len", type=int, default=64)
    g.add_argument("--h-dyn", type=int, default=4)
    g.add_argument("--mlp-activation", choices=("gelu", "linear"), default="gelu")
    _add_train_flags(g)
    g.set_defaults(func=cmd_train_prefix)

    g = sub.add_parser("predict", help="decode records for every sentence")
    g.add_argument("--data", type=Path, required=True)
    g.add_argument("--checkpoint", type=Path, required=True)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--ic", choices=("none", "trained", "gold"), default="none")
    g.add_argument("--beam", type=int, default=6)
    g.add_argument("--max-steps", type=int, default=48)
    g.add_argument("--types", default=None, help="comma-separated type subset")
    g.add_argument("--prefix-mode", choices=("auto", "none", "static", "dynamic"),
                   default="auto")
    g.set_defaults(func=cmd_predict)

    g = sub.add_parser("score", help="trigger/argument P/R/F1 of predictions")
    g.add_argument("--pred", type=Path, required=True)
    g.add_argument("--gold", type=Path, required=True)
    g.add_argument("--out", type=Path, required=True, help="JSON report path")
    g.set_defaults(func=cmd_score)

    g = sub.add_parser("sweep", help="prefix hyperparameter sweep")
    g.add_argument("--param", choices=("L", "Dprime"), required=True)
    g.add_argument("--values", required=True, help="comma-separated integers")
    g.add_argument("--train", type=Path, required=True)
    g.add_argument("--dev", type=Path, required=True)
    g.add_argument("--checkpoint", type=Path, required=True)
    g.add_argument("--out", type=Path, required=True, help="CSV output path")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--beam", type=int, default=1)
    g.add_argument("--max-steps", type=int, default=48)
    g.add_argument("--prefix-len", type=int, default=8)
    g.add_argument("--d-raw", type=int, default=32)
    g.add_argument("--d-ctx", type=int, default=32)
    g.add_argument("--ctx-layers", type=int, default=1)
    g.add_argument("--ctx-heads", type=int, default=4)
    g.add_argument("--ctx-ff", type=int, default=64)
    g.add_argument("--ctx-max-len", type=int, default=64)
    g.add_argument("--h-dyn", type=int, default=4)
    _add_train_flags(g)
    g.set_defaults(func=cmd_sweep)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        _log(f"error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
