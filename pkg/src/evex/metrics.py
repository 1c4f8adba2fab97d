"""Trigger and argument classification scores.

A predicted trigger counts iff its (span, event type) equals an unconsumed
gold trigger in the same context; an argument additionally needs the role.
Matching is one-to-one on exact keys, so multiset counting is the whole
algorithm. Scores are micro-averaged corpus-level precision/recall/F1.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

from .records import UNRESOLVED, EventRecord, SentenceInstance


class ScoreError(ValueError):
    pass


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


def _prf(tp: int, n_pred: int, n_gold: int) -> PRF:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return PRF(p, r, f1)


@dataclass(frozen=True)
class ScoreReport:
    trg: PRF
    arg: PRF
    trg_tp: int
    trg_pred: int
    trg_gold: int
    arg_tp: int
    arg_pred: int
    arg_gold: int

    def to_dict(self) -> dict:
        return {
            "trg": {"precision": self.trg.precision, "recall": self.trg.recall,
                    "f1": self.trg.f1,
                    "tp": self.trg_tp, "pred": self.trg_pred, "gold": self.trg_gold},
            "arg": {"precision": self.arg.precision, "recall": self.arg.recall,
                    "f1": self.arg.f1,
                    "tp": self.arg_tp, "pred": self.arg_pred, "gold": self.arg_gold},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def table(self) -> str:
        rows = [
            ("", "P", "R", "F1", "TP", "pred", "gold"),
            ("Trg-C", f"{self.trg.precision:.4f}", f"{self.trg.recall:.4f}",
             f"{self.trg.f1:.4f}", str(self.trg_tp), str(self.trg_pred), str(self.trg_gold)),
            ("Arg-C", f"{self.arg.precision:.4f}", f"{self.arg.recall:.4f}",
             f"{self.arg.f1:.4f}", str(self.arg_tp), str(self.arg_pred), str(self.arg_gold)),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(7)]
        return "\n".join(
            "  ".join(cell.rjust(w) if i else cell.ljust(w)
                      for i, (cell, w) in enumerate(zip(row, widths)))
            for row in rows
        )


def _trigger_key(rec: EventRecord):
    return (rec.event_type, rec.trigger.start, rec.trigger.end)


def match_triggers(pred: list[EventRecord], gold: list[EventRecord]) -> int:
    """One-to-one trigger matches within a single context."""
    available = Counter(_trigger_key(r) for r in gold)
    tp = 0
    for r in pred:
        key = _trigger_key(r)
        if available[key] > 0:
            available[key] -= 1
            tp += 1
    return tp


def _argument_keys(records: list[EventRecord]):
    for rec in records:
        for a in rec.args:
            yield (rec.event_type, a.role, a.start, a.end)


def match_arguments(pred: list[EventRecord], gold: list[EventRecord]) -> int:
    """One-to-one (span, type, role) matches; unresolved spans never match."""
    available = Counter(k for k in _argument_keys(gold) if k[2:] != UNRESOLVED)
    tp = 0
    for key in _argument_keys(pred):
        if key[2:] == UNRESOLVED:
            continue
        if available[key] > 0:
            available[key] -= 1
            tp += 1
    return tp


def score_records(
    predictions: dict[str, list[EventRecord]],
    gold: dict[str, list[EventRecord]],
) -> ScoreReport:
    """Micro-averaged scores over contexts keyed by id."""
    if set(predictions) != set(gold):
        only_p = sorted(set(predictions) - set(gold))[:3]
        only_g = sorted(set(gold) - set(predictions))[:3]
        raise ScoreError(f"context ids differ (pred-only {only_p}, gold-only {only_g})")
    trg_tp = arg_tp = 0
    trg_pred = trg_gold = arg_pred = arg_gold = 0
    for cid, g in gold.items():
        p = predictions[cid]
        trg_tp += match_triggers(p, g)
        arg_tp += match_arguments(p, g)
        trg_pred += len(p)
        trg_gold += len(g)
        arg_pred += sum(len(r.args) for r in p)
        arg_gold += sum(len(r.args) for r in g)
    return ScoreReport(
        trg=_prf(trg_tp, trg_pred, trg_gold),
        arg=_prf(arg_tp, arg_pred, arg_gold),
        trg_tp=trg_tp, trg_pred=trg_pred, trg_gold=trg_gold,
        arg_tp=arg_tp, arg_pred=arg_pred, arg_gold=arg_gold,
    )


def score_dataset(
    predictions: dict[str, list[EventRecord]],
    gold_sentences: list[SentenceInstance],
) -> ScoreReport:
    """Score predicted records against gold sentences (contexts = sent ids)."""
    gold = {s.sent_id: list(s.events) for s in gold_sentences}
    if len(gold) != len(gold_sentences):
        raise ScoreError("duplicate sentence ids in gold data")
    return score_records(predictions, gold)
