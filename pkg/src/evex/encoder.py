"""Small pooled transformer encoder.

A learned pool token is prepended to the embedded input; after pre-LN
self-attention layers and a final layernorm, the hidden state at the pool
position summarizes the sequence. Used twice with separate parameter sets:
as the context encoder feeding the dynamic-prefix query, and as the body
of the relevance classifier.
"""

from __future__ import annotations

import math

import numpy as np

from .numeric import (
    Tensor,
    add,
    concat,
    embedding,
    gelu,
    layernorm,
    matmul,
    reshape,
    scale,
    softmax,
    transpose,
)


def _init(rng, *shape, std=0.02):
    return Tensor(rng.standard_normal(shape) * std, requires_grad=True)


def _zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape):
    return Tensor(np.ones(shape), requires_grad=True)


class PooledEncoder:
    def __init__(self, vocab_size: int, d: int, n_layers: int, n_heads: int,
                 d_ff: int, max_len: int, seed: int = 0):
        if d % n_heads:
            raise ValueError(f"width {d} not divisible by {n_heads} heads")
        self.d = d
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.max_len = max_len
        self.truncations = 0
        rng = np.random.default_rng(seed)
        p: dict[str, Tensor] = {
            "emb": _init(rng, vocab_size, d),
            "pos": _init(rng, max_len + 1, d),  # slot 0 belongs to the pool token
            "pool": _init(rng, 1, d),
        }
        for i in range(n_layers):
            p[f"{i}/ln1/g"] = _ones(d)
            p[f"{i}/ln1/b"] = _zeros(d)
            for w in ("wq", "wk", "wv", "wo"):
                p[f"{i}/attn/{w}"] = _init(rng, d, d)
            # key projection carries no bias (softmax shift invariance)
            for b in ("bq", "bv", "bo"):
                p[f"{i}/attn/{b}"] = _zeros(d)
            p[f"{i}/ln2/g"] = _ones(d)
            p[f"{i}/ln2/b"] = _zeros(d)
            p[f"{i}/ffn/w1"] = _init(rng, d, d_ff)
            p[f"{i}/ffn/b1"] = _zeros(d_ff)
            p[f"{i}/ffn/w2"] = _init(rng, d_ff, d)
            p[f"{i}/ffn/b2"] = _zeros(d)
        p["ln_f/g"] = _ones(d)
        p["ln_f/b"] = _zeros(d)
        self.params = p

    def encode(self, ids) -> Tensor:
        """Pool-token summary vector, shape [d]. Empty input is valid and
        encodes the pool token alone."""
        p = self.params
        ids = list(ids)
        if len(ids) > self.max_len:
            self.truncations += 1
            ids = ids[: self.max_len]
        if ids:
            h = concat([p["pool"], embedding(p["emb"], ids)], axis=0)
        else:
            h = p["pool"]
        t = h.shape[0]
        h = add(h, p["pos"][:t])
        nh = self.n_heads
        dh = self.d // nh
        for i in range(self.n_layers):
            a = layernorm(h, p[f"{i}/ln1/g"], p[f"{i}/ln1/b"])
            q = add(matmul(a, p[f"{i}/attn/wq"]), p[f"{i}/attn/bq"])
            k = matmul(a, p[f"{i}/attn/wk"])
            v = add(matmul(a, p[f"{i}/attn/wv"]), p[f"{i}/attn/bv"])
            qh = transpose(reshape(q, (t, nh, dh)), (1, 0, 2))
            kh = transpose(reshape(k, (t, nh, dh)), (1, 0, 2))
            vh = transpose(reshape(v, (t, nh, dh)), (1, 0, 2))
            w = softmax(scale(matmul(qh, transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(dh)))
            o = reshape(transpose(matmul(w, vh), (1, 0, 2)), (t, self.d))
            h = add(h, add(matmul(o, p[f"{i}/attn/wo"]), p[f"{i}/attn/bo"]))
            a2 = layernorm(h, p[f"{i}/ln2/g"], p[f"{i}/ln2/b"])
            f = add(matmul(gelu(add(matmul(a2, p[f"{i}/ffn/w1"]), p[f"{i}/ffn/b1"])),
                           p[f"{i}/ffn/w2"]), p[f"{i}/ffn/b2"])
            h = add(h, f)
        h = layernorm(h, p["ln_f/g"], p["ln_f/b"])
        return h[0]
