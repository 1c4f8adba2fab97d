"""Experiment assembly on top of the trainer.

Wires the pieces end to end: vocabulary over the training prompts,
sentence-level prediction with relevance filtering, the staged training
recipe (base LM, relevance classifier, masked prefix stage, unmasked prefix
stage), the ablation and filter-mode comparisons, prefix hyperparameter
sweeps, and replayable run manifests written next to every output artifact.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import generate_synthetic
from .irrelevance import (
    ICConfig,
    ICModel,
    ICTrainResult,
    filter_contexts,
    gold_relevance,
    labeled_pairs,
    train_ic,
)
from .metrics import ScoreReport, score_dataset
from .model import ModelConfig, Seq2SeqModel, Vocab, build_vocab
from .numeric import no_grad
from .ontology import EventOntology, builtin_ontology
from .prefix import DynamicPrefixer, PrefixConfig
from .prompts import build_training_instances
from .records import SentenceInstance
from .training import (
    TrainConfig,
    TrainResult,
    _prefix_for_example,
    _restore,
    _snapshot,
    decode_subtask,
    evaluate_subtasks,
    prepare_examples,
    sample_negatives,
    stage_config,
    train_stage,
)

PREDICT_PREFIX_MODES = ("none", "static", "dynamic")
IC_MODES = ("none", "trained", "gold")
SWEEP_PARAMS = ("L", "Dprime")


def build_pipeline_vocab(instances) -> Vocab:
    """Vocabulary over the prompt inputs and serialized targets of a split."""
    return build_vocab([i.x for i in instances] + [i.y for i in instances])


def predict_records(
    model: Seq2SeqModel,
    vocab: Vocab,
    ontology: EventOntology,
    sentences: list[SentenceInstance],
    prefixer: DynamicPrefixer | None = None,
    prefix_mode: str = "none",
    ic_mode: str = "none",
    ic: ICModel | None = None,
    gold: dict[str, bool] | None = None,
    beam: int = 6,
    max_steps: int = 48,
    types: list[str] | None = None,
) -> dict[str, list]:
    """Predicted records per sentence id. Sentences filtered out by the
    relevance step contribute empty lists, as do types outside `types`."""
    if prefix_mode not in PREDICT_PREFIX_MODES:
        raise ValueError(f"prefix_mode must be one of {PREDICT_PREFIX_MODES}")
    if ic_mode == "gold" and gold is None:
        gold = gold_relevance(sentences)
    predictions: dict[str, list] = {s.sent_id: [] for s in sentences}
    if len(predictions) != len(sentences):
        raise ValueError("duplicate sentence ids in prediction input")
    wanted = None
    if types is not None:
        wanted = set(types)
        known = {d.type_id for d in ontology.types}
        if wanted - known:
            raise ValueError(f"unknown event types {sorted(wanted - known)}")
    kept = filter_contexts(ic_mode, sentences, model=ic, vocab=vocab, gold=gold)
    mask_mode = "off" if prefix_mode == "dynamic" else "per-type"
    for sent in kept:
        for ex in prepare_examples(build_training_instances([sent], ontology), vocab, ontology):
            if wanted is not None and ex.inst.event_type not in wanted:
                continue
            with no_grad():
                prefix = _prefix_for_example(prefixer, ex, prefix_mode, mask_mode)
                records = decode_subtask(model, vocab, ex, ontology, prefix, beam, max_steps)
            predictions[sent.sent_id].extend(records)
    return predictions


def predictions_to_instances(
    sentences: list[SentenceInstance], predictions: dict[str, list]
) -> list[SentenceInstance]:
    """Sentences with gold events replaced by predicted records, ready for
    the JSONL writer. Every sentence id must have a prediction entry."""
    missing = [s.sent_id for s in sentences if s.sent_id not in predictions]
    if missing:
        raise ValueError(f"predictions missing for sentences {missing[:5]}")
    return [
        SentenceInstance(s.doc_id, s.sent_id, s.tokens, list(predictions[s.sent_id]))
        for s in sentences
    ]


# ------------------------------------------------------------------ experiment


def default_model_kw() -> dict:
    return {"d_model": 32, "n_layers": 2, "n_heads": 4, "d_ff": 64, "max_len": 96}


def default_prefix_kw() -> dict:
    return {"prefix_len": 8, "d_raw": 32, "d_ctx": 32, "ctx_layers": 1,
            "ctx_heads": 4, "ctx_ff": 64, "ctx_max_len": 64, "h_dyn": 4}


def default_ic_kw() -> dict:
    return {"d": 32, "n_layers": 1, "n_heads": 4, "d_ff": 64, "max_len": 64,
            "head_hidden": 16}


@dataclass
class ExperimentResult:
    vocab: Vocab
    model: Seq2SeqModel
    prefixer: DynamicPrefixer
    ic: ICModel
    ic_result: ICTrainResult
    stage_results: dict[int, TrainResult]
    theta_stage2: dict[str, np.ndarray]
    ablation: dict[str, ScoreReport]
    ic_comparison: dict[str, ScoreReport]
    predictions: dict[str, list]
    timings: dict[str, float] = field(default_factory=dict)


def run_experiment(
    ontology: EventOntology,
    train_sents: list[SentenceInstance],
    dev_sents: list[SentenceInstance],
    test_sents: list[SentenceInstance],
    seed: int = 0,
    model_kw: dict | None = None,
    prefix_kw: dict | None = None,
    ic_kw: dict | None = None,
    stage_cfgs: dict[int, TrainConfig] | None = None,
    ic_cfg: TrainConfig | None = None,
    beam: int = 6,
    max_steps: int = 48,
    eval_every: int = 1,
    log_dir=None,
) -> ExperimentResult:
    """Full recipe: base LM training, relevance classifier, masked prefix
    stage, unmasked prefix stage, then the ablation rows (no prefix / masked
    prefix / dynamic prefix, all under the trained filter) and the
    filter-mode comparison (none / trained / gold on the final model)."""
    model_kw = model_kw or default_model_kw()
    prefix_kw = prefix_kw or default_prefix_kw()
    ic_kw = ic_kw or default_ic_kw()
    if stage_cfgs is None:
        stage_cfgs = {}
    stage_cfgs = {s: stage_cfgs.get(s) or stage_config(s, seed=seed) for s in (1, 2, 3)}
    ic_cfg = ic_cfg or TrainConfig(learning_rate=3e-3, epochs=6, batch_size=16, seed=seed)
    log_dir = Path(log_dir) if log_dir is not None else None
    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)

    timings: dict[str, float] = {}
    t_start = time.perf_counter()

    inst_train = build_training_instances(train_sents, ontology)
    inst_dev = build_training_instances(dev_sents, ontology)
    vocab = build_pipeline_vocab(inst_train)
    rate = stage_cfgs[1].neg_sample_rate
    prepared_train = prepare_examples(
        sample_negatives(inst_train, rate, seed), vocab, ontology)
    prepared_dev = prepare_examples(
        sample_negatives(inst_dev, rate, seed + 1), vocab, ontology)

    model = Seq2SeqModel(ModelConfig(vocab_size=len(vocab), **model_kw), seed=seed)

    t0 = time.perf_counter()
    stage_results = {}
    stage_results[1] = train_stage(
        1, model, None, prepared_train, prepared_dev, stage_cfgs[1], ontology, vocab,
        log_path=log_dir / "stage1.csv" if log_dir else None, eval_every=eval_every)
    timings["stage1"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ic = ICModel(ICConfig(vocab_size=len(vocab), **ic_kw), seed=seed + 7)
    ic_result = train_ic(ic, labeled_pairs(train_sents, vocab),
                         labeled_pairs(dev_sents, vocab), ic_cfg)
    timings["ic"] = time.perf_counter() - t0

    prefixer = DynamicPrefixer(
        PrefixConfig(n_types=len(ontology), n_layers=model_kw["n_layers"],
                     d_model=model_kw["d_model"], vocab_size=len(vocab), **prefix_kw),
        seed=seed + 3)

    t0 = time.perf_counter()
    stage_results[2] = train_stage(
        2, model, prefixer, prepared_train, prepared_dev, stage_cfgs[2], ontology, vocab,
        log_path=log_dir / "stage2.csv" if log_dir else None, eval_every=eval_every)
    theta_stage2 = _snapshot(prefixer.parameters())
    timings["stage2"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    stage_results[3] = train_stage(
        3, model, prefixer, prepared_train, prepared_dev, stage_cfgs[3], ontology, vocab,
        log_path=log_dir / "stage3.csv" if log_dir else None, eval_every=eval_every)
    timings["stage3"] = time.perf_counter() - t0

    t0 = time.perf_counter()

    def score(prefix_mode, ic_mode, use_theta2=False):
        current = None
        if use_theta2:
            current = _snapshot(prefixer.parameters())
            _restore(prefixer.parameters(), theta_stage2)
        preds = predict_records(
            model, vocab, ontology, test_sents, prefixer=prefixer,
            prefix_mode=prefix_mode, ic_mode=ic_mode, ic=ic,
            beam=beam, max_steps=max_steps)
        if current is not None:
            _restore(prefixer.parameters(), current)
        return preds, score_dataset(preds, test_sents)

    _, base_report = score("none", "trained")
    _, sta_report = score("static", "trained", use_theta2=True)
    dyn_preds, dyn_report = score("dynamic", "trained")
    _, noic_report = score("dynamic", "none")
    _, gold_report = score("dynamic", "gold")
    timings["predict"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start

    return ExperimentResult(
        vocab=vocab, model=model, prefixer=prefixer, ic=ic, ic_result=ic_result,
        stage_results=stage_results, theta_stage2=theta_stage2,
        ablation={"Base": base_report, "StaPref": sta_report, "DynPref": dyn_report},
        ic_comparison={"none": noic_report, "trained": dyn_report, "gold": gold_report},
        predictions=dyn_preds, timings=timings,
    )


def toy_experiment(
    seed: int = 0,
    n_train: int = 2000,
    n_dev: int = 200,
    n_test: int = 300,
    irrelevant_rate: float = 0.8,
    **kw,
) -> tuple[ExperimentResult, list[SentenceInstance]]:
    """The synthetic end-to-end run on the bundled 5-type ontology. Returns
    the result plus the generated test split (for serialization checks)."""
    onto = builtin_ontology("toy")
    train = generate_synthetic(onto, n_train, irrelevant_rate, seed)
    dev = generate_synthetic(onto, n_dev, irrelevant_rate, seed + 1)
    test = generate_synthetic(onto, n_test, irrelevant_rate, seed + 2)
    result = run_experiment(onto, train, dev, test, seed=seed, **kw)
    return result, test


def ablation_table(reports: dict[str, ScoreReport]) -> str:
    """Aligned text table, one row per configuration."""
    header = f"{'config':<10} {'trg_p':>7} {'trg_r':>7} {'trg_f1':>7} {'arg_p':>7} {'arg_r':>7} {'arg_f1':>7}"
    lines = [header]
    for name, r in reports.items():
        lines.append(
            f"{name:<10} {r.trg.precision:>7.4f} {r.trg.recall:>7.4f} {r.trg.f1:>7.4f}"
            f" {r.arg.precision:>7.4f} {r.arg.recall:>7.4f} {r.arg.f1:>7.4f}")
    return "\n".join(lines)


# ----------------------------------------------------------------------- sweep


def sweep_prefix(
    param: str,
    values: list[int],
    model: Seq2SeqModel,
    vocab: Vocab,
    ontology: EventOntology,
    prepared_train,
    prepared_eval,
    stage_cfgs: dict[int, TrainConfig] | None = None,
    prefix_kw: dict | None = None,
    beam: int = 1,
    max_steps: int = 48,
    seed: int = 0,
) -> list[tuple[int, float, float]]:
    """Train the prefix stages once per hyperparameter value on a fixed base
    LM and report (value, trg_f1, arg_f1) on the eval subtasks. `param` picks
    the swept knob: L = prefix length, Dprime = raw store width."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"param must be one of {SWEEP_PARAMS}")
    if not values:
        raise ValueError("values must not be empty")
    if stage_cfgs is None:
        stage_cfgs = {}
    stage_cfgs = {s: stage_cfgs.get(s) or stage_config(s, seed=seed) for s in (2, 3)}
    base_kw = dict(prefix_kw or default_prefix_kw())
    rows = []
    for value in values:
        kw = dict(base_kw)
        kw["prefix_len" if param == "L" else "d_raw"] = value
        prefixer = DynamicPrefixer(
            PrefixConfig(n_types=len(ontology), n_layers=model.config.n_layers,
                         d_model=model.config.d_model, vocab_size=len(vocab), **kw),
            seed=seed + 3)
        train_stage(2, model, prefixer, prepared_train, [], stage_cfgs[2], ontology, vocab)
        train_stage(3, model, prefixer, prepared_train, [], stage_cfgs[3], ontology, vocab)
        report = evaluate_subtasks(
            model, prepared_eval, ontology, vocab, prefixer=prefixer,
            prefix_mode="dynamic", mask_mode="off", beam=beam, max_steps=max_steps)
        rows.append((value, report.trg.f1, report.arg.f1))
    return rows


def sweep_csv(param: str, rows: list[tuple[int, float, float]]) -> str:
    lines = [f"{param},trg_f1,arg_f1"]
    lines += [f"{v},{t:.4f},{a:.4f}" for v, t, a in rows]
    return "\n".join(lines) + "\n"


# -------------------------------------------------------------------- manifest


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    wall_time_s: float
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "command": self.command, "config": self.config, "seed": self.seed,
            "inputs": list(self.inputs), "outputs": list(self.outputs),
            "wall_time_s": round(self.wall_time_s, 3), "version": self.version,
        }


def manifest_path(output) -> Path:
    out = Path(output)
    if out.is_dir():
        return out / "run.manifest.json"
    return out.with_name(out.name + ".manifest.json")


def write_manifest(manifest: RunManifest) -> list[Path]:
    """One manifest file next to each output, written atomically (temp file
    then rename) so a crash never leaves a half-written manifest."""
    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n"
    written = []
    for output in manifest.outputs:
        path = manifest_path(output)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
        written.append(path)
    return written
