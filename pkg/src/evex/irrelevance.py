"""Binary relevance classifier used to filter contexts before generation.

A context is *relevant* when it contains at least one event record. The
classifier reuses the pooled-encoder architecture (separate parameters from
the prefix context encoder) and puts a two-layer head on the pooled vector.
Filtering supports three modes: none (keep everything), trained (keep what
the classifier accepts), gold (keep contexts with gold events).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import PooledEncoder
from .numeric import (
    Tensor,
    add,
    backward,
    concat,
    cross_entropy,
    gelu,
    matmul,
    no_grad,
    reshape,
)
from .records import SentenceInstance
from .training import AdamW, TrainConfig, _restore, _snapshot

IRRELEVANT, RELEVANT = 0, 1
FILTER_MODES = ("none", "trained", "gold")


@dataclass(frozen=True)
class ICConfig:
    vocab_size: int
    d: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_len: int = 256
    head_hidden: int = 32

    def __post_init__(self):
        if self.d % self.n_heads:
            raise ValueError(f"width {self.d} not divisible by {self.n_heads} heads")
        for name in ("vocab_size", "d", "n_layers", "n_heads", "d_ff", "max_len",
                     "head_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "d": self.d, "n_layers": self.n_layers,
            "n_heads": self.n_heads, "d_ff": self.d_ff, "max_len": self.max_len,
            "head_hidden": self.head_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ICConfig":
        return cls(**d)


class ICModel:
    """Pooled encoder plus a two-layer head producing 2-way logits."""

    def __init__(self, config: ICConfig, seed: int = 0):
        self.config = config
        self._enc = PooledEncoder(
            config.vocab_size, config.d, config.n_layers, config.n_heads,
            config.d_ff, config.max_len, seed=seed,
        )
        rng = np.random.default_rng(seed + 1)
        h = config.head_hidden
        self._head = {
            "w1": Tensor(rng.standard_normal((config.d, h)) * 0.02, requires_grad=True),
            "b1": Tensor(np.zeros(h), requires_grad=True),
            "w2": Tensor(rng.standard_normal((h, 2)) * 0.02, requires_grad=True),
            "b2": Tensor(np.zeros(2), requires_grad=True),
        }

    @property
    def truncations(self) -> int:
        return self._enc.truncations

    def parameters(self) -> dict[str, Tensor]:
        out = {f"enc/{n}": t for n, t in self._enc.params.items()}
        out.update({f"head/{n}": t for n, t in self._head.items()})
        return out

    def logits(self, ids) -> Tensor:
        """Unnormalized [irrelevant, relevant] scores, shape [2]."""
        pooled = reshape(self._enc.encode(ids), (1, self.config.d))
        hid = gelu(add(matmul(pooled, self._head["w1"]), self._head["b1"]))
        return reshape(add(matmul(hid, self._head["w2"]), self._head["b2"]), (2,))


def classify(model: ICModel, ids) -> bool:
    """True when the context is judged relevant. Ties resolve to relevant so
    a tie never suppresses generation."""
    with no_grad():
        z = model.logits(ids).data
    return bool(z[RELEVANT] >= z[IRRELEVANT])


def relevance_label(sent: SentenceInstance) -> int:
    return RELEVANT if sent.events else IRRELEVANT


def labeled_pairs(sentences, vocab) -> list[tuple[list[int], int]]:
    """(token ids, label) pairs for the full split; no negative sampling here,
    the classifier needs the natural class balance."""
    return [(vocab.encode(s.text), relevance_label(s)) for s in sentences]


def accuracy(model: ICModel, pairs) -> float:
    if not pairs:
        raise ValueError("cannot score an empty pair list")
    hits = sum((classify(model, ids) == (label == RELEVANT)) for ids, label in pairs)
    return hits / len(pairs)


@dataclass
class ICTrainResult:
    best_epoch: int
    best_dev_accuracy: float
    history: list[tuple[int, float, float]] = field(default_factory=list)
    skipped_steps: int = 0


def train_ic(
    model: ICModel,
    train: list[tuple[list[int], int]],
    dev: list[tuple[list[int], int]],
    config: TrainConfig,
) -> ICTrainResult:
    """Cross-entropy training; keeps the epoch with the best dev accuracy
    (earliest on ties). With no dev pairs the final epoch is kept."""
    if not train:
        raise ValueError("training set is empty")
    labels = {label for _, label in train}
    if len(labels) < 2:
        raise ValueError(f"training set covers a single class {labels}, need both")

    params = model.parameters()
    n_batches = math.ceil(len(train) / config.batch_size)
    opt = AdamW(params, config, total_steps=n_batches * config.epochs)
    rng = np.random.default_rng(config.seed)

    best = (-1.0, 0)
    best_snap = None
    result = ICTrainResult(best_epoch=0, best_dev_accuracy=0.0)
    for epoch in range(config.epochs):
        order = rng.permutation(len(train))
        total, seen = 0.0, 0
        for b in range(n_batches):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch = [train[i] for i in idx]
            zs = concat([reshape(model.logits(ids), (1, 2)) for ids, _ in batch], axis=0)
            loss = cross_entropy(zs, np.array([label for _, label in batch]))
            backward(loss)
            opt.step()
            total += float(loss.data) * len(batch)
            seen += len(batch)
        train_loss = total / seen
        dev_acc = accuracy(model, dev) if dev else float("nan")
        result.history.append((epoch, train_loss, dev_acc))
        if dev and dev_acc > best[0]:
            best = (dev_acc, epoch)
            best_snap = _snapshot(params)
    if best_snap is not None:
        _restore(params, best_snap)
        result.best_epoch = best[1]
        result.best_dev_accuracy = best[0]
    else:
        result.best_epoch = config.epochs - 1
        result.best_dev_accuracy = float("nan")
    result.skipped_steps = opt.skipped_steps
    return result


def filter_contexts(
    mode: str,
    sentences: list[SentenceInstance],
    model: ICModel | None = None,
    vocab=None,
    gold: dict[str, bool] | None = None,
) -> list[SentenceInstance]:
    """Sentences that should go on to generation. Filtered-out sentences are
    meant to contribute zero predicted records downstream."""
    if mode not in FILTER_MODES:
        raise ValueError(f"mode must be one of {FILTER_MODES}, got {mode!r}")
    if mode == "none":
        return list(sentences)
    if mode == "trained":
        if model is None or vocab is None:
            raise ValueError("mode 'trained' requires a model and a vocab")
        return [s for s in sentences if classify(model, vocab.encode(s.text))]
    if gold is None:
        raise ValueError("mode 'gold' requires gold relevance labels")
    missing = [s.sent_id for s in sentences if s.sent_id not in gold]
    if missing:
        raise ValueError(f"gold labels missing for sentences {missing[:5]}")
    return [s for s in sentences if gold[s.sent_id]]


def gold_relevance(sentences) -> dict[str, bool]:
    return {s.sent_id: bool(s.events) for s in sentences}
