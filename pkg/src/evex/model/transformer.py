"""Encoder-decoder transformer on the autodiff core.

Pre-LN layers, learned absolute positions, single-instance forward (no
batch axis; the trainer accumulates gradients across instances instead).

Prefix steering: an ActivationHistory carries per-layer key/value rows
that are prepended to the self-attention K/V of each stack. Prefix slots
are position-free and emit no outputs; token positions are numbered as
if the prefix were absent, so a model is prefix-length-agnostic at the
embedding level. Cross-attention is untouched unless the config flag
prefix_cross_attention is set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..numeric import (
    Tensor,
    add,
    concat,
    cross_entropy,
    embedding,
    gelu,
    layernorm,
    log_softmax,
    matmul,
    no_grad,
    reshape,
    scale,
    softmax,
    transpose,
)
from .config import ModelConfig
from .vocab import BOS_ID, EOS_ID

NEG_INF = -1e30


@dataclass
class ActivationHistory:
    """Per-layer attention history (length-L key/value sequences) for the
    encoder-self and decoder-self stacks."""

    enc_keys: list = field(default_factory=list)
    enc_values: list = field(default_factory=list)
    dec_keys: list = field(default_factory=list)
    dec_values: list = field(default_factory=list)

    def __post_init__(self):
        lengths = {
            int(t.shape[0])
            for group in (self.enc_keys, self.enc_values, self.dec_keys, self.dec_values)
            for t in group
        }
        if len(lengths) > 1:
            raise ValueError(f"prefix length differs across layers: {sorted(lengths)}")

    @property
    def length(self) -> int:
        for group in (self.enc_keys, self.enc_values, self.dec_keys, self.dec_values):
            if group:
                return int(group[0].shape[0])
        return 0


def _init(rng, *shape, std=0.02):
    return Tensor(rng.standard_normal(shape) * std, requires_grad=True)


def _zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape):
    return Tensor(np.ones(shape), requires_grad=True)


class Seq2SeqModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.truncations = 0  # inputs cut to max_len so far
        self.attn_probe: dict | None = None  # set to {} to capture attention weights
        rng = np.random.default_rng(seed)
        c = config
        p: dict[str, Tensor] = {}
        p["emb/tok"] = _init(rng, c.vocab_size, c.d_model)
        p["emb/pos_enc"] = _init(rng, c.max_len, c.d_model)
        p["emb/pos_dec"] = _init(rng, c.max_len, c.d_model)
        for i in range(c.n_layers):
            for stack, attns in (("enc", ["attn"]), ("dec", ["self", "cross"])):
                base = f"{stack}{i}"
                for j, a in enumerate(attns):
                    p[f"{base}/ln{j + 1}/g"] = _ones(c.d_model)
                    p[f"{base}/ln{j + 1}/b"] = _zeros(c.d_model)
                    for w in ("wq", "wk", "wv", "wo"):
                        p[f"{base}/{a}/{w}"] = _init(rng, c.d_model, c.d_model)
                    # no bias on the key projection: softmax scores are
                    # invariant to a shift shared by every key, so a key
                    # bias would be a dead parameter
                    for b in ("bq", "bv", "bo"):
                        p[f"{base}/{a}/{b}"] = _zeros(c.d_model)
                nln = len(attns) + 1
                p[f"{base}/ln{nln}/g"] = _ones(c.d_model)
                p[f"{base}/ln{nln}/b"] = _zeros(c.d_model)
                p[f"{base}/ffn/w1"] = _init(rng, c.d_model, c.d_ff)
                p[f"{base}/ffn/b1"] = _zeros(c.d_ff)
                p[f"{base}/ffn/w2"] = _init(rng, c.d_ff, c.d_model)
                p[f"{base}/ffn/b2"] = _zeros(c.d_model)
        for stack in ("enc", "dec"):
            p[f"{stack}/ln_f/g"] = _ones(c.d_model)
            p[f"{stack}/ln_f/b"] = _zeros(c.d_model)
        p["out/w"] = _init(rng, c.d_model, c.vocab_size)
        p["out/b"] = _zeros(c.vocab_size)
        self.params = p

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def set_trainable(self, flag: bool) -> None:
        for t in self.params.values():
            t.requires_grad = flag

    # -- building blocks ----------------------------------------------------

    def _heads(self, x: Tensor, n: int) -> Tensor:
        t, d = x.shape
        return transpose(reshape(x, (t, n, d // n)), (1, 0, 2))  # [H, T, dh]

    def _attention(self, q, k, v, mask: np.ndarray | None, probe_key=None):
        h = self.config.n_heads
        dh = self.config.d_model // h
        qh, kh, vh = self._heads(q, h), self._heads(k, h), self._heads(v, h)
        scores = scale(matmul(qh, transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(dh))
        if mask is not None:
            scores = add(scores, Tensor(np.broadcast_to(mask, scores.shape).copy()))
        w = softmax(scores)  # [H, Tq, Tk]
        if self.attn_probe is not None and probe_key is not None:
            self.attn_probe[probe_key] = w.data.copy()
        out = transpose(matmul(w, vh), (1, 0, 2))  # [Tq, H, dh]
        tq = out.shape[0]
        return reshape(out, (tq, self.config.d_model))

    def _attn_block(self, base, name, xq, xkv, pk=None, pv=None, mask=None, probe_key=None):
        p = self.params
        q = add(matmul(xq, p[f"{base}/{name}/wq"]), p[f"{base}/{name}/bq"])
        k = matmul(xkv, p[f"{base}/{name}/wk"])
        v = add(matmul(xkv, p[f"{base}/{name}/wv"]), p[f"{base}/{name}/bv"])
        if pk is not None:
            k = concat([pk, k], axis=0)
            v = concat([pv, v], axis=0)
        out = self._attention(q, k, v, mask, probe_key)
        return add(matmul(out, p[f"{base}/{name}/wo"]), p[f"{base}/{name}/bo"])

    def _ffn(self, base, x):
        p = self.params
        h = gelu(add(matmul(x, p[f"{base}/ffn/w1"]), p[f"{base}/ffn/b1"]))
        return add(matmul(h, p[f"{base}/ffn/w2"]), p[f"{base}/ffn/b2"])

    def _ln(self, base, j, x):
        return layernorm(x, self.params[f"{base}/ln{j}/g"], self.params[f"{base}/ln{j}/b"])

    def _clip_ids(self, ids) -> list[int]:
        ids = list(ids)
        if len(ids) > self.config.max_len:
            self.truncations += 1
            ids = ids[: self.config.max_len]
        return ids

    # -- encoder ------------------------------------------------------------

    def encode(self, x_ids, prefix: ActivationHistory | None = None) -> Tensor:
        x_ids = self._clip_ids(x_ids)
        p = self.params
        t = len(x_ids)
        h = add(embedding(p["emb/tok"], x_ids), p["emb/pos_enc"][:t])
        for i in range(self.config.n_layers):
            base = f"enc{i}"
            pk = prefix.enc_keys[i] if prefix and prefix.enc_keys else None
            pv = prefix.enc_values[i] if prefix and prefix.enc_values else None
            a = self._ln(base, 1, h)
            h = add(h, self._attn_block(base, "attn", a, a, pk, pv, None, ("enc", i)))
            h = add(h, self._ffn(base, self._ln(base, 2, h)))
        return self._ln("enc", "_f", h)

    # -- decoder, full teacher-forced forward --------------------------------

    @staticmethod
    def _causal_mask(tq: int, n_prefix: int) -> np.ndarray:
        mask = np.zeros((tq, n_prefix + tq))
        mask[:, n_prefix:] = np.triu(np.full((tq, tq), NEG_INF), k=1)
        return mask

    def decoder_logits(
        self, y_in_ids, enc_states: Tensor, prefix: ActivationHistory | None = None
    ) -> Tensor:
        y_in_ids = self._clip_ids(y_in_ids)
        p = self.params
        t = len(y_in_ids)
        use_cross_prefix = self.config.prefix_cross_attention and prefix and prefix.dec_keys
        h = add(embedding(p["emb/tok"], y_in_ids), p["emb/pos_dec"][:t])
        for i in range(self.config.n_layers):
            base = f"dec{i}"
            pk = prefix.dec_keys[i] if prefix and prefix.dec_keys else None
            pv = prefix.dec_values[i] if prefix and prefix.dec_values else None
            mask = self._causal_mask(t, pk.shape[0] if pk is not None else 0)
            a = self._ln(base, 1, h)
            h = add(h, self._attn_block(base, "self", a, a, pk, pv, mask, ("dec-self", i)))
            cpk = prefix.dec_keys[i] if use_cross_prefix else None
            cpv = prefix.dec_values[i] if use_cross_prefix else None
            h = add(h, self._attn_block(base, "cross", self._ln(base, 2, h), enc_states,
                                        cpk, cpv, None, ("dec-cross", i)))
            h = add(h, self._ffn(base, self._ln(base, 3, h)))
        h = self._ln("dec", "_f", h)
        return add(matmul(h, p["out/w"]), p["out/b"])

    # -- objective and scoring ----------------------------------------------

    def sequence_nll(self, x_ids, y_ids, prefix: ActivationHistory | None = None) -> Tensor:
        """Teacher-forced token-mean NLL of y (with EOS appended) given x."""
        enc = self.encode(x_ids, prefix)
        dec_in = [BOS_ID] + list(y_ids)
        targets = list(y_ids) + [EOS_ID]
        if len(dec_in) > self.config.max_len:
            self.truncations += 1
            dec_in = dec_in[: self.config.max_len]
            targets = targets[: self.config.max_len]
        logits = self.decoder_logits(dec_in, enc, prefix)
        return cross_entropy(logits, targets, reduction="mean")

    def next_token_logprobs(
        self, y_prefix_ids, enc_states: Tensor, prefix: ActivationHistory | None = None
    ) -> np.ndarray:
        """Log-probability vector for the next token after y_prefix_ids.

        Runs the full decoder (no cache); the incremental decode path is
        checked against this."""
        if not list(y_prefix_ids):
            raise ValueError("y_prefix must contain at least the start token")
        with no_grad():
            logits = self.decoder_logits(y_prefix_ids, enc_states, prefix)
            return log_softmax(logits[-1]).data.copy()

    # -- incremental decoding -----------------------------------------------

    def begin_decode(self, x_ids, prefix: ActivationHistory | None = None) -> "DecodeSession":
        return DecodeSession(self, x_ids, prefix)


class DecodeSession:
    """Encoder output and per-layer projections fixed once per input; step()
    is functional over an immutable cache so hypotheses can share work."""

    def __init__(self, model: Seq2SeqModel, x_ids, prefix: ActivationHistory | None):
        self.model = model
        self.prefix = prefix
        c = model.config
        p = model.params
        with no_grad():
            self.enc = model.encode(x_ids, prefix)
            self.cross_kv = []
            use_cross_prefix = c.prefix_cross_attention and prefix and prefix.dec_keys
            for i in range(c.n_layers):
                base = f"dec{i}"
                k = matmul(self.enc, p[f"{base}/cross/wk"])
                v = add(matmul(self.enc, p[f"{base}/cross/wv"]), p[f"{base}/cross/bv"])
                if use_cross_prefix:
                    k = concat([prefix.dec_keys[i], k], axis=0)
                    v = concat([prefix.dec_values[i], v], axis=0)
                self.cross_kv.append((k.data, v.data))
            self.dec_prefix = None
            if prefix and prefix.dec_keys:
                self.dec_prefix = [
                    (prefix.dec_keys[i].data, prefix.dec_values[i].data) for i in range(c.n_layers)
                ]

    def empty_cache(self) -> tuple:
        return tuple((np.zeros((0, self.model.config.d_model)),) * 2 for _ in range(self.model.config.n_layers))

    def step(self, cache: tuple, token_id: int, pos: int):
        """Feed one token at position pos; returns (logprobs[V], new cache)."""
        m, c, p = self.model, self.model.config, self.model.params
        with no_grad():
            h = add(embedding(p["emb/tok"], [token_id]), p["emb/pos_dec"][pos : pos + 1])
            new_cache = []
            for i in range(c.n_layers):
                base = f"dec{i}"
                a = m._ln(base, 1, h)
                q = add(matmul(a, p[f"{base}/self/wq"]), p[f"{base}/self/bq"])
                k_new = matmul(a, p[f"{base}/self/wk"])
                v_new = add(matmul(a, p[f"{base}/self/wv"]), p[f"{base}/self/bv"])
                ks = np.concatenate([cache[i][0], k_new.data], axis=0)
                vs = np.concatenate([cache[i][1], v_new.data], axis=0)
                new_cache.append((ks, vs))
                if self.dec_prefix is not None:
                    k_all = Tensor(np.concatenate([self.dec_prefix[i][0], ks], axis=0))
                    v_all = Tensor(np.concatenate([self.dec_prefix[i][1], vs], axis=0))
                else:
                    k_all, v_all = Tensor(ks), Tensor(vs)
                attn = m._attention(q, k_all, v_all, None)
                h = add(h, add(matmul(attn, p[f"{base}/self/wo"]), p[f"{base}/self/bo"]))
                ck, cv = self.cross_kv[i]
                q2 = add(
                    matmul(m._ln(base, 2, h), p[f"{base}/cross/wq"]), p[f"{base}/cross/bq"]
                )
                attn2 = m._attention(q2, Tensor(ck), Tensor(cv), None)
                h = add(h, add(matmul(attn2, p[f"{base}/cross/wo"]), p[f"{base}/cross/bo"]))
                h = add(h, m._ffn(base, m._ln(base, 3, h)))
            h = m._ln("dec", "_f", h)
            logits = add(matmul(h, p["out/w"]), p["out/b"])
            return log_softmax(logits[0]).data.copy(), tuple(new_cache)
