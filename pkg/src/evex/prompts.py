"""Prompt construction and ground-truth target serialization.

For every (context, event type) pair there is one seq2seq subtask. Its
input is

    "Event type is <Name>. Trigger <trg> <IN_SEP> <template> [SEP] <context>"

and its target is the template with gold trigger and argument strings
filled in, or the bare "Trigger <trg>" when the context realizes no
event of that type.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ontology import ARG_MARKER, TRG_MARKER, EventOntology, EventTypeDef, slot_order, strip_numeric_labels
from .records import EventRecord, RecordError, SentenceInstance, validate_instance

IN_SEP = "<IN_SEP>"
OUT_SEP = "<OUT_SEP>"
SEP = "[SEP]"

TRIGGER_PREFIX = "Trigger "
EMPTY_TARGET = TRIGGER_PREFIX + TRG_MARKER  # "Trigger <trg>"
AND_JOIN = " and "


@dataclass(frozen=True)
class Prompt:
    event_type: str
    instruction: str
    template: str
    full_text: str


def build_prompt(d: EventTypeDef) -> Prompt:
    instruction = f"Event type is {d.surface_name}."
    template = strip_numeric_labels(d.raw_template)
    full = f"{instruction} {EMPTY_TARGET} {IN_SEP} {template}"
    return Prompt(d.type_id, instruction, template, full)


def _fill_slots(record: EventRecord, d: EventTypeDef) -> str:
    """Render one record's argument part from its template.

    Slots are assigned positionally: same-role arguments, sorted by span,
    go one per slot left to right; any overflow joins the role's last slot
    with " and ". Roles absent from the template are dropped. Unfilled
    slots keep the literal placeholder.
    """
    roles = slot_order(d)
    by_role: dict[str, list] = {}
    for a in sorted(record.args, key=lambda a: (a.start, a.end, a.text)):
        by_role.setdefault(a.role, []).append(a)

    values = [ARG_MARKER] * len(roles)
    for role, args in by_role.items():
        slots = [i for i, r in enumerate(roles) if r == role]
        if not slots:
            continue
        for i, slot in enumerate(slots[:-1]):
            if i < len(args):
                values[slot] = args[i].text
        rest = args[len(slots) - 1 :]
        if rest:
            values[slots[-1]] = AND_JOIN.join(a.text for a in rest)

    segments = strip_numeric_labels(d.raw_template).split(ARG_MARKER)
    out = segments[0]
    for value, seg in zip(values, segments[1:]):
        out += value + seg
    return out


def serialize_ground_truth(
    records: list[EventRecord], d: EventTypeDef, context: list[str]
) -> str:
    if not records:
        return EMPTY_TARGET
    n = len(context)
    for r in records:
        if r.event_type != d.type_id:
            raise RecordError(f"record type {r.event_type!r} does not match {d.type_id!r}")
        if not (0 <= r.trigger.start < r.trigger.end <= n):
            raise RecordError(f"trigger span {r.trigger.span} out of range for {n} tokens")
        for a in r.args:
            if not (0 <= a.start < a.end <= n):
                raise RecordError(f"arg span {a.span} out of range for {n} tokens")
    chunks = []
    for r in sorted(records, key=lambda r: (r.trigger.start, r.trigger.end)):
        chunks.append(f"{TRIGGER_PREFIX}{r.trigger.text} {IN_SEP} {_fill_slots(r, d)}")
    return f" {OUT_SEP} ".join(chunks)


@dataclass(frozen=True)
class TrainingInstance:
    x: str
    y: str
    event_type: str
    sent: SentenceInstance

    @property
    def is_positive(self) -> bool:
        return self.y != EMPTY_TARGET


def build_training_instances(
    dataset: list[SentenceInstance], ontology: EventOntology
) -> list[TrainingInstance]:
    """One instance per (context, event type), ontology order within context."""
    prompts = {d.type_id: build_prompt(d) for d in ontology}
    out = []
    for inst in dataset:
        validate_instance(inst)
        by_type: dict[str, list[EventRecord]] = {}
        for ev in inst.events:
            if ev.event_type not in ontology:
                raise RecordError(f"{inst.sent_id}: unknown event type {ev.event_type!r}")
            by_type.setdefault(ev.event_type, []).append(ev)
        context = inst.text
        for d in ontology:
            y = serialize_ground_truth(by_type.get(d.type_id, []), d, inst.tokens)
            x = f"{prompts[d.type_id].full_text} {SEP} {context}"
            out.append(TrainingInstance(x, y, d.type_id, inst))
    return out
