"""Type-specific prefixes and their dynamic, context-conditioned mixture.

Each event type owns one trainable row per prefix slot, stored at reduced
width D' and reparametrized by a two-layer MLP up to D = 2 * n_layers *
d_model (a key and a value per LM layer). Slot t of type e is that type's
static prefix vector sp_e^t.

The dynamic prefix for a context attends over all types' vectors at each
slot: the query comes from a context vector c (pool-token output of a
small dedicated transformer), the keys and values are the sp_e^t. Masking
a type suppresses its key with a -inf logit. Restricting the mask to a
single type therefore reduces the mixture to that type's static prefix
passed through the value and output projections, which is the bridge
between type-locked and fully dynamic training stages.

Everything here belongs to the theta parameter group; the language model
is untouched.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .encoder import PooledEncoder
from .numeric import (
    Tensor,
    add,
    concat,
    gelu,
    matmul,
    reshape,
    scale,
    softmax,
    transpose,
)
from .model.transformer import ActivationHistory


@dataclass(frozen=True)
class PrefixConfig:
    n_types: int
    n_layers: int  # LM layers steered
    d_model: int  # LM hidden width
    vocab_size: int  # context encoder shares the LM vocabulary
    prefix_len: int = 8
    d_raw: int = 32
    d_ctx: int = 64
    ctx_layers: int = 2
    ctx_heads: int = 4
    ctx_ff: int = 128
    ctx_max_len: int = 256
    h_dyn: int = 4
    mlp_activation: str = "gelu"  # "linear" turns the reparametrization affine

    @property
    def d_full(self) -> int:
        # one key + one value vector per steered layer
        return 2 * self.n_layers * self.d_model

    def __post_init__(self):
        if self.d_full % self.h_dyn:
            raise ValueError(f"d_full ({self.d_full}) must be divisible by h_dyn ({self.h_dyn})")
        if self.d_ctx % self.ctx_heads:
            raise ValueError("d_ctx must be divisible by ctx_heads")
        if self.mlp_activation not in ("gelu", "linear"):
            raise ValueError(f"unknown mlp_activation {self.mlp_activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PrefixConfig":
        return cls(**d)


def _init(rng, *shape, std=0.02):
    return Tensor(rng.standard_normal(shape) * std, requires_grad=True)


def _zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def activation_sequence(prefix_entries, computed_entries, i: int):
    """History slot lookup: positions below the prefix length read the
    prefix; later positions read what the model computed itself."""
    if i < 0:
        raise IndexError("history index must be nonnegative")
    if i < len(prefix_entries):
        return prefix_entries[i]
    return computed_entries[i - len(prefix_entries)]


class DynamicPrefixer:
    def __init__(self, config: PrefixConfig, seed: int = 0):
        self.config = config
        self.attn_probe: dict | None = None
        rng = np.random.default_rng(seed)
        c = config
        p: dict[str, Tensor] = {}
        for stack in ("enc", "dec"):
            p[f"store/p_{stack}"] = _init(rng, c.n_types, c.prefix_len, c.d_raw)
            p[f"store/mlp_{stack}/w1"] = _init(rng, c.d_raw, c.d_raw)
            p[f"store/mlp_{stack}/b1"] = _zeros(c.d_raw)
            p[f"store/mlp_{stack}/w2"] = _init(rng, c.d_raw, c.d_full)
            p[f"store/mlp_{stack}/b2"] = _zeros(c.d_full)
            for w in ("w_ctx", "wq", "wk", "wv", "wo"):
                dim_in = c.d_ctx if w == "w_ctx" else c.d_full
                p[f"dyn_{stack}/{w}"] = _init(rng, dim_in, c.d_full)
        self._ctx = PooledEncoder(
            c.vocab_size, c.d_ctx, c.ctx_layers, c.ctx_heads, c.ctx_ff,
            c.ctx_max_len, seed=seed + 1,
        )
        for name, t in self._ctx.params.items():
            p[f"ctx/{name}"] = t  # shared objects: loading a checkpoint updates both views
        self.params = p

    @property
    def truncations(self) -> int:
        return self._ctx.truncations

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def set_trainable(self, flag: bool) -> None:
        for t in self.params.values():
            t.requires_grad = flag

    # -- static prefixes ------------------------------------------------------

    def store_rows(self, stack: str) -> Tensor:
        """All types' reparametrized prefix rows for one stack: [E, L, D]."""
        c, p = self.config, self.params
        raw = reshape(p[f"store/p_{stack}"], (c.n_types * c.prefix_len, c.d_raw))
        h = add(matmul(raw, p[f"store/mlp_{stack}/w1"]), p[f"store/mlp_{stack}/b1"])
        if c.mlp_activation == "gelu":
            h = gelu(h)
        full = add(matmul(h, p[f"store/mlp_{stack}/w2"]), p[f"store/mlp_{stack}/b2"])
        return reshape(full, (c.n_types, c.prefix_len, c.d_full))

    def _split_layers(self, row: Tensor) -> tuple[list[Tensor], list[Tensor]]:
        # row: [L, D]; D packs (key, value) per layer in order
        d = self.config.d_model
        keys, values = [], []
        for i in range(self.config.n_layers):
            keys.append(row[:, 2 * i * d : (2 * i + 1) * d])
            values.append(row[:, (2 * i + 1) * d : (2 * i + 2) * d])
        return keys, values

    def static_prefix(self, e: int) -> ActivationHistory:
        """Type e's own prefix, untouched by the mixture attention."""
        if not 0 <= e < self.config.n_types:
            raise IndexError(f"type index {e} out of range for {self.config.n_types} types")
        enc_k, enc_v = self._split_layers(self.store_rows("enc")[e])
        dec_k, dec_v = self._split_layers(self.store_rows("dec")[e])
        return ActivationHistory(enc_k, enc_v, dec_k, dec_v)

    # -- context encoder -------------------------------------------------------

    def context_vector(self, ctx_ids) -> Tensor:
        """Pool-token summary of the context, d_ctx wide."""
        return self._ctx.encode(ctx_ids)

    # -- dynamic mixture ---------------------------------------------------------

    def _mixture(self, stack: str, c_vec: Tensor, mask: set[int] | None) -> Tensor:
        """Per-slot multi-head attention over type prefixes: [L, D]."""
        cfg, p = self.config, self.params
        if mask is not None:
            mask = set(mask)
            if not mask:
                raise ValueError("mask must name at least one type")
            if not mask <= set(range(cfg.n_types)):
                raise ValueError(f"mask contains unknown type indices: {sorted(mask)}")
        rows = self.store_rows(stack)  # [E, L, D]
        e_n, ln, d = cfg.n_types, cfg.prefix_len, cfg.d_full
        flat = reshape(rows, (e_n * ln, d))
        q = matmul(matmul(reshape(c_vec, (1, cfg.d_ctx)), p[f"dyn_{stack}/w_ctx"]),
                   p[f"dyn_{stack}/wq"])  # [1, D]
        k = reshape(matmul(flat, p[f"dyn_{stack}/wk"]), (e_n, ln, d))
        v = reshape(matmul(flat, p[f"dyn_{stack}/wv"]), (e_n, ln, d))

        bias = np.zeros(e_n)
        if mask is not None:
            bias = np.where([e in mask for e in range(e_n)], 0.0, -np.inf)
        bias_t = Tensor(bias)

        dh = d // cfg.h_dyn
        head_outs = []
        for j in range(cfg.h_dyn):
            sl = slice(j * dh, (j + 1) * dh)
            kj = transpose(k[:, :, sl], (1, 0, 2))  # [L, E, dh]
            vj = transpose(v[:, :, sl], (1, 0, 2))
            qj = reshape(q[:, sl], (dh, 1))
            scores = scale(reshape(matmul(kj, qj), (ln, e_n)), 1.0 / math.sqrt(dh))
            w = softmax(add(scores, bias_t))  # [L, E], rows sum to 1
            if self.attn_probe is not None:
                self.attn_probe[(stack, j)] = w.data.copy()
            head_outs.append(reshape(matmul(reshape(w, (ln, 1, e_n)), vj), (ln, dh)))
        mixed = concat(head_outs, axis=1)  # [L, D]
        return matmul(mixed, p[f"dyn_{stack}/wo"])

    def dynamic_prefix(self, c_vec: Tensor, mask: set[int] | None = None) -> ActivationHistory:
        """Context-specific prefix: each slot is an attention mixture of all
        (unmasked) types' static prefix vectors, queried by c_vec."""
        enc_k, enc_v = self._split_layers(self._mixture("enc", c_vec, mask))
        dec_k, dec_v = self._split_layers(self._mixture("dec", c_vec, mask))
        return ActivationHistory(enc_k, enc_v, dec_k, dec_v)

    def prefix_for(self, ctx_ids, mask: set[int] | None = None) -> ActivationHistory:
        """Dynamic prefix for a tokenized context."""
        return self.dynamic_prefix(self.context_vector(ctx_ids), mask)
