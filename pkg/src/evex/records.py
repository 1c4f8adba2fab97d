"""Core data shapes: token spans, event records, sentence instances.

Spans are token-indexed and end-exclusive. An argument span of (-1, -1)
marks text the offset resolver could not place in the context; such spans
are only legal where explicitly allowed (prediction files).
"""

from __future__ import annotations

from dataclasses import dataclass, field

UNRESOLVED = (-1, -1)


class RecordError(ValueError):
    """A record violates the span or schema contract."""


@dataclass(frozen=True, order=True)
class Mention:
    start: int
    end: int
    text: str = field(compare=True)

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True, order=True)
class Argument:
    role: str
    start: int
    end: int
    text: str

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class EventRecord:
    event_type: str
    trigger: Mention
    args: tuple[Argument, ...] = ()


@dataclass
class SentenceInstance:
    doc_id: str
    sent_id: str
    tokens: list[str]
    events: list[EventRecord]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def span_text(self, start: int, end: int) -> str:
        return " ".join(self.tokens[start:end])


def _check_span(start, end, n, what, allow_unresolved=False) -> None:
    if allow_unresolved and (start, end) == UNRESOLVED:
        return
    if not (isinstance(start, int) and isinstance(end, int)):
        raise RecordError(f"{what}: span indices must be integers")
    if not (0 <= start < end <= n):
        raise RecordError(f"{what}: span ({start}, {end}) out of range for {n} tokens")


def validate_instance(inst: SentenceInstance, allow_unresolved: bool = False) -> None:
    n = len(inst.tokens)
    for ev in inst.events:
        where = f"{inst.sent_id}/{ev.event_type}"
        _check_span(ev.trigger.start, ev.trigger.end, n, f"{where} trigger")
        for a in ev.args:
            _check_span(a.start, a.end, n, f"{where} arg {a.role}", allow_unresolved)


def instance_to_dict(inst: SentenceInstance) -> dict:
    return {
        "doc_id": inst.doc_id,
        "sent_id": inst.sent_id,
        "tokens": list(inst.tokens),
        "events": [
            {
                "type": ev.event_type,
                "trigger": {"start": ev.trigger.start, "end": ev.trigger.end, "text": ev.trigger.text},
                "args": [
                    {"start": a.start, "end": a.end, "text": a.text, "role": a.role} for a in ev.args
                ],
            }
            for ev in inst.events
        ],
    }


def instance_from_dict(d: dict, allow_unresolved: bool = False) -> SentenceInstance:
    try:
        events = []
        for ev in d["events"]:
            trig = ev["trigger"]
            events.append(
                EventRecord(
                    event_type=ev["type"],
                    trigger=Mention(int(trig["start"]), int(trig["end"]), str(trig["text"])),
                    args=tuple(
                        Argument(str(a["role"]), int(a["start"]), int(a["end"]), str(a["text"]))
                        for a in ev.get("args", [])
                    ),
                )
            )
        inst = SentenceInstance(
            doc_id=str(d["doc_id"]),
            sent_id=str(d["sent_id"]),
            tokens=[str(t) for t in d["tokens"]],
            events=events,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise RecordError(f"malformed instance object: {e}") from e
    validate_instance(inst, allow_unresolved=allow_unresolved)
    return inst


def find_occurrences(tokens: list[str], phrase: str) -> list[int]:
    """Start indices of every token-subsequence match of a whitespace phrase."""
    words = phrase.split()
    if not words:
        return []
    k = len(words)
    return [i for i in range(len(tokens) - k + 1) if tokens[i : i + k] == words]
