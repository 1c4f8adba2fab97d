"""Greedy and beam-search decoding over the incremental decode session.

Scores are length-unnormalized sums of token log-probabilities. All ties
break toward the lexicographically smaller token-id sequence, so decoding
is fully deterministic. Greedy and beam share one stepper, which makes
greedy exactly beam-search with beam 1.
"""

from __future__ import annotations

import numpy as np

from .transformer import ActivationHistory, Seq2SeqModel
from .vocab import BOS_ID, EOS_ID


def _hyp_key(hyp):
    score, ids = hyp[0], hyp[1]
    return (-score, ids)


def greedy_decode(
    model: Seq2SeqModel,
    x_ids,
    prefix: ActivationHistory | None = None,
    max_steps: int = 64,
) -> list[int]:
    """Argmax decoding; ties go to the lowest token id. Stops at EOS."""
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    session = model.begin_decode(x_ids, prefix)
    cache = session.empty_cache()
    tok, pos = BOS_ID, 0
    out: list[int] = []
    for _ in range(max_steps):
        logprobs, cache = session.step(cache, tok, pos)
        nxt = int(np.argmax(logprobs))  # first maximum = lowest id
        if nxt == EOS_ID:
            break
        out.append(nxt)
        tok, pos = nxt, pos + 1
    return out


def beam_search(
    model: Seq2SeqModel,
    x_ids,
    prefix: ActivationHistory | None = None,
    beam: int = 6,
    max_steps: int = 64,
) -> list[int]:
    """Returns the highest-scoring finished hypothesis, or the best
    unfinished one when nothing reaches EOS within max_steps."""
    if beam < 1:
        raise ValueError("beam must be at least 1")
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    session = model.begin_decode(x_ids, prefix)
    live = [(0.0, (), session.empty_cache())]
    finished: list[tuple[float, tuple]] = []
    token_order = None
    for _ in range(max_steps):
        if not live:
            break
        if finished:
            # log-probs are nonpositive, so live scores can only fall
            if max(s for s, _ in finished) > max(h[0] for h in live):
                break
        candidates = []
        for score, ids, cache in live:
            tok = ids[-1] if ids else BOS_ID
            logprobs, new_cache = session.step(cache, tok, len(ids))
            if token_order is None:
                token_order = np.arange(len(logprobs))
            top = np.lexsort((token_order, -logprobs))[:beam]
            for t in top:
                candidates.append((score + float(logprobs[t]), ids + (int(t),), new_cache))
        candidates.sort(key=_hyp_key)
        live = []
        for score, ids, cache in candidates[:beam]:
            if ids[-1] == EOS_ID:
                finished.append((score, ids[:-1]))
            else:
                live.append((score, ids, cache))
    pool = finished if finished else [(s, ids) for s, ids, _ in live]
    best = min(pool, key=_hyp_key)
    return list(best[1])


def sequence_score(
    model: Seq2SeqModel,
    x_ids,
    token_ids,
    prefix: ActivationHistory | None = None,
    include_eos: bool = True,
) -> float:
    """Sum of per-token log-probabilities of token_ids given x_ids, the
    same quantity beam search ranks by."""
    session = model.begin_decode(x_ids, prefix)
    cache = session.empty_cache()
    tok, pos = BOS_ID, 0
    total = 0.0
    targets = list(token_ids) + ([EOS_ID] if include_eos else [])
    for t in targets:
        logprobs, cache = session.step(cache, tok, pos)
        total += float(logprobs[t])
        tok, pos = t, pos + 1
    return total
