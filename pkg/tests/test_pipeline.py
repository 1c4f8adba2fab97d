import json

import numpy as np
import pytest

from evex.corpus import generate_synthetic, read_jsonl, write_jsonl
from evex.metrics import score_dataset
from evex.model import ModelConfig, Seq2SeqModel
from evex.ontology import builtin_ontology
from evex.pipeline import (
    RunManifest,
    ablation_table,
    build_pipeline_vocab,
    default_model_kw,
    default_prefix_kw,
    manifest_path,
    predict_records,
    predictions_to_instances,
    run_experiment,
    sweep_csv,
    sweep_prefix,
    toy_experiment,
    write_manifest,
)
from evex.prompts import build_training_instances
from evex.training import TrainConfig, prepare_examples


MICRO_KW = dict(
    model_kw={"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "max_len": 96},
    prefix_kw={"prefix_len": 2, "d_raw": 8, "d_ctx": 16, "ctx_layers": 1,
               "ctx_heads": 2, "ctx_ff": 32, "ctx_max_len": 48, "h_dyn": 2},
    ic_kw={"d": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "max_len": 48,
           "head_hidden": 8},
    stage_cfgs={
        1: TrainConfig(learning_rate=1e-3, epochs=2, batch_size=8, seed=0,
                       neg_sample_rate=0.2),
        2: TrainConfig(learning_rate=1e-3, epochs=1, batch_size=8, seed=0),
        3: TrainConfig(learning_rate=1e-3, epochs=1, batch_size=8, seed=0),
    },
    ic_cfg=TrainConfig(learning_rate=3e-3, epochs=2, batch_size=8, seed=0),
    beam=2,
    max_steps=40,
    eval_every=2,
)


@pytest.fixture(scope="module")
def micro_result():
    res, test = toy_experiment(seed=0, n_train=60, n_dev=20, n_test=24,
                               irrelevant_rate=0.5, **MICRO_KW)
    return res, test


@pytest.fixture(scope="module")
def toy_bits():
    onto = builtin_ontology("toy")
    sents = generate_synthetic(onto, 20, 0.5, seed=31)
    insts = build_training_instances(sents, onto)
    vocab = build_pipeline_vocab(insts)
    model = Seq2SeqModel(ModelConfig(vocab_size=len(vocab), d_model=16, n_layers=1,
                                     n_heads=2, d_ff=32, max_len=96), seed=1)
    return onto, sents, vocab, model


def test_vocab_covers_prompts_and_targets(toy_bits):
    onto, sents, vocab, _ = toy_bits
    insts = build_training_instances(sents, onto)
    unk = vocab.id("<unk>")
    for i in insts:
        assert unk not in vocab.encode(i.x)
        assert unk not in vocab.encode(i.y)


# ----------------------------------------------------------- predict_records


def test_predict_covers_every_sentence(toy_bits):
    onto, sents, vocab, model = toy_bits
    preds = predict_records(model, vocab, onto, sents, beam=1, max_steps=8)
    assert set(preds) == {s.sent_id for s in sents}
    assert all(isinstance(v, list) for v in preds.values())


def test_predict_gold_filter_empties_irrelevant(toy_bits):
    onto, sents, vocab, model = toy_bits
    preds = predict_records(model, vocab, onto, sents, ic_mode="gold",
                            beam=1, max_steps=8)
    for s in sents:
        if not s.events:
            assert preds[s.sent_id] == []


def test_predict_type_restriction(toy_bits):
    onto, sents, vocab, model = toy_bits
    only = onto.types[0].type_id
    preds = predict_records(model, vocab, onto, sents, types=[only],
                            beam=1, max_steps=8)
    for records in preds.values():
        assert all(r.event_type == only for r in records)
    with pytest.raises(ValueError, match="unknown event types"):
        predict_records(model, vocab, onto, sents, types=["NoSuch:Type"])


def test_predict_argument_validation(toy_bits):
    onto, sents, vocab, model = toy_bits
    with pytest.raises(ValueError, match="prefix_mode"):
        predict_records(model, vocab, onto, sents, prefix_mode="fancy")
    with pytest.raises(ValueError, match="requires a prefixer"):
        predict_records(model, vocab, onto, sents, prefix_mode="dynamic")


def test_predictions_round_trip_through_jsonl(toy_bits, tmp_path):
    onto, sents, vocab, model = toy_bits
    preds = predict_records(model, vocab, onto, sents, beam=1, max_steps=12)
    out = predictions_to_instances(sents, preds)
    path = tmp_path / "preds.jsonl"
    write_jsonl(path, out)
    back = read_jsonl(path, allow_unresolved=True)
    assert [s.sent_id for s in back] == [s.sent_id for s in sents]
    assert all(list(preds[s.sent_id]) == list(s.events) for s in back)
    with pytest.raises(ValueError, match="missing"):
        predictions_to_instances(sents, {})


# ------------------------------------------------------------------ experiment


def test_experiment_shapes(micro_result):
    res, test = micro_result
    assert set(res.ablation) == {"Base", "StaPref", "DynPref"}
    assert set(res.ic_comparison) == {"none", "trained", "gold"}
    assert res.ic_comparison["trained"] is res.ablation["DynPref"]
    assert set(res.stage_results) == {1, 2, 3}
    assert set(res.predictions) == {s.sent_id for s in test}
    assert res.timings["total"] > 0
    # the stage-2 snapshot covers the full prefix parameter set
    assert set(res.theta_stage2) == set(res.prefixer.parameters())


def test_experiment_scores_match_predictions(micro_result):
    res, test = micro_result
    rep = score_dataset(res.predictions, test)
    assert rep == res.ic_comparison["trained"]


def test_ablation_table_format(micro_result):
    res, _ = micro_result
    table = ablation_table(res.ablation)
    lines = table.splitlines()
    assert len(lines) == 4
    assert lines[0].split() == ["config", "trg_p", "trg_r", "trg_f1",
                                "arg_p", "arg_r", "arg_f1"]
    assert lines[1].startswith("Base")
    assert lines[3].startswith("DynPref")
    assert all(len(l.split()) == 7 for l in lines[1:])


def test_gold_filter_never_hurts_recall(micro_result):
    # gold filtering removes only record-free contexts, so recall is
    # identical to the unfiltered run
    res, _ = micro_result
    assert res.ic_comparison["gold"].trg.recall == res.ic_comparison["none"].trg.recall
    assert res.ic_comparison["gold"].arg.recall == res.ic_comparison["none"].arg.recall


def test_experiment_is_deterministic():
    kw = dict(seed=3, n_train=40, n_dev=12, n_test=12, irrelevant_rate=0.5, **MICRO_KW)
    a, test_a = toy_experiment(**kw)
    b, test_b = toy_experiment(**kw)
    assert test_a == test_b
    assert a.predictions == b.predictions
    assert a.ablation == b.ablation
    assert a.ic_comparison == b.ic_comparison


def test_stage_logs_written(tmp_path):
    toy_experiment(seed=0, n_train=30, n_dev=10, n_test=10, irrelevant_rate=0.5,
                   log_dir=tmp_path, **MICRO_KW)
    for name in ("stage1.csv", "stage2.csv", "stage3.csv"):
        assert (tmp_path / name).exists()


# ----------------------------------------------------------------------- sweep


def test_sweep_rows_and_csv(toy_bits):
    onto, sents, vocab, model = toy_bits
    insts = build_training_instances(sents, onto)
    prepared = prepare_examples(insts[:30], vocab, onto)
    cfgs = {2: TrainConfig(learning_rate=1e-3, epochs=1, batch_size=8),
            3: TrainConfig(learning_rate=1e-3, epochs=1, batch_size=8)}
    rows = sweep_prefix("L", [1, 2], model, vocab, onto, prepared, prepared[:10],
                        stage_cfgs=cfgs, prefix_kw=MICRO_KW["prefix_kw"],
                        max_steps=8)
    assert [r[0] for r in rows] == [1, 2]
    assert all(0.0 <= r[1] <= 1.0 and 0.0 <= r[2] <= 1.0 for r in rows)
    csv_text = sweep_csv("L", rows)
    lines = csv_text.strip().splitlines()
    assert lines[0] == "L,trg_f1,arg_f1"
    assert len(lines) == 3
    with pytest.raises(ValueError, match="param"):
        sweep_prefix("K", [1], model, vocab, onto, prepared, prepared,
                     stage_cfgs=cfgs)
    with pytest.raises(ValueError, match="values"):
        sweep_prefix("L", [], model, vocab, onto, prepared, prepared,
                     stage_cfgs=cfgs)


def test_sweep_dprime_changes_store_width(toy_bits):
    onto, sents, vocab, model = toy_bits
    insts = build_training_instances(sents, onto)
    prepared = prepare_examples(insts[:10], vocab, onto)
    cfgs = {2: TrainConfig(learning_rate=1e-3, epochs=1, batch_size=8),
            3: TrainConfig(learning_rate=1e-3, epochs=1, batch_size=8)}
    rows = sweep_prefix("Dprime", [4], model, vocab, onto, prepared, prepared[:4],
                        stage_cfgs=cfgs, prefix_kw=MICRO_KW["prefix_kw"],
                        max_steps=8)
    assert rows[0][0] == 4


# -------------------------------------------------------------------- manifest


def test_manifest_written_next_to_outputs(tmp_path):
    out1 = tmp_path / "a.jsonl"
    out1.write_text("{}\n")
    sub = tmp_path / "ckpt"
    sub.mkdir()
    m = RunManifest(command="gen-data", config={"n": 5}, seed=1,
                    inputs=(), outputs=(str(out1), str(sub)), wall_time_s=0.51)
    written = write_manifest(m)
    assert written == [tmp_path / "a.jsonl.manifest.json", sub / "run.manifest.json"]
    data = json.loads(written[0].read_text())
    assert data["command"] == "gen-data"
    assert data["seed"] == 1
    assert data["config"] == {"n": 5}
    assert data["wall_time_s"] == 0.51
    assert data["version"]
    assert not list(tmp_path.glob("*.tmp"))


def test_manifest_path_for_file_without_dir():
    p = manifest_path("preds.jsonl")
    assert p.name == "preds.jsonl.manifest.json"
