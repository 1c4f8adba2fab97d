"""Word-level vocabulary with fixed reserved ids.

Tokenization is whitespace splitting; corpora are generated pre-tokenized,
so no normalization happens here. Reserved control and marker tokens get
ids 0-8 in a fixed order; everything else is sorted lexicographically so
a vocabulary is a pure function of the training text set.
"""

from __future__ import annotations

RESERVED_TOKENS = (
    "<pad>",
    "<bos>",
    "<eos>",
    "<unk>",
    "[SEP]",
    "<trg>",
    "<arg>",
    "<IN_SEP>",
    "<OUT_SEP>",
)
PAD_ID, BOS_ID, EOS_ID, UNK_ID, SEP_ID, TRG_ID, ARG_ID, IN_SEP_ID, OUT_SEP_ID = range(9)


class Vocab:
    def __init__(self, tokens: list[str]):
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens in order")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        self.tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token(self, i: int) -> str:
        return self.tokens[i]

    def encode(self, text: str) -> list[int]:
        return [self.id(t) for t in text.split()]

    def decode(self, ids, skip_control: bool = True) -> str:
        skip = {PAD_ID, BOS_ID, EOS_ID} if skip_control else set()
        return " ".join(self.tokens[i] for i in ids if i not in skip)

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(list(d["tokens"]))


def build_vocab(texts) -> Vocab:
    """Reserved tokens, then all other words sorted lexicographically."""
    words = set()
    for text in texts:
        words.update(text.split())
    words -= set(RESERVED_TOKENS)
    return Vocab(list(RESERVED_TOKENS) + sorted(words))


def tokenize(text: str, vocab: Vocab) -> list[int]:
    return vocab.encode(text)
