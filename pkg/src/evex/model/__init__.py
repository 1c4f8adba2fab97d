from .config import ModelConfig
from .vocab import (
    ARG_ID,
    BOS_ID,
    EOS_ID,
    IN_SEP_ID,
    OUT_SEP_ID,
    PAD_ID,
    RESERVED_TOKENS,
    SEP_ID,
    TRG_ID,
    UNK_ID,
    Vocab,
    build_vocab,
)
from .transformer import ActivationHistory, Seq2SeqModel
from .decoding import beam_search, greedy_decode, sequence_score
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "ARG_ID",
    "ActivationHistory",
    "BOS_ID",
    "EOS_ID",
    "IN_SEP_ID",
    "ModelConfig",
    "OUT_SEP_ID",
    "PAD_ID",
    "RESERVED_TOKENS",
    "SEP_ID",
    "Seq2SeqModel",
    "TRG_ID",
    "UNK_ID",
    "Vocab",
    "beam_search",
    "build_vocab",
    "greedy_decode",
    "load_checkpoint",
    "save_checkpoint",
    "sequence_score",
]
