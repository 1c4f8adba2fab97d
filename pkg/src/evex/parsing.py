"""Parse generated sequences back into event records.

The generator emits filled templates, so parsing is template matching:
the literal text between placeholders acts as ordered anchors, and the
text between anchors is captured as argument values. Malformed output
never raises; it degrades to trigger-only records or skipped chunks.

Offset resolution maps recovered strings back onto the token sequence:
the k-th chunk reusing a trigger string takes the k-th occurrence, and
each argument takes the occurrence closest to its trigger.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ontology import ARG_MARKER, TRG_MARKER, EventTypeDef, slot_order, strip_numeric_labels
from .prompts import AND_JOIN, IN_SEP, OUT_SEP, TRIGGER_PREFIX
from .records import Argument, EventRecord, Mention, find_occurrences

UNRESOLVED_SPAN = (-1, -1)


@dataclass
class ParsedChunk:
    trigger_text: str
    arg_texts: list[list[str]] = field(default_factory=list)  # one list per template slot
    valid: bool = True  # False: argument part missing or misaligned, trigger kept


def align_template(chunk_args: str, template: str) -> list[str] | None:
    """Capture one text per placeholder by locating the template's literal
    segments left to right, each at its earliest position (which makes every
    capture as short as possible). Returns None when an anchor cannot be
    found in order. A trailing literal leaves any text after it ignored; a
    trailing placeholder captures through end of string.
    """
    segments = template.split(ARG_MARKER)
    if len(segments) == 1:
        return []
    if not chunk_args.startswith(segments[0]):
        return None
    pos = len(segments[0])
    captures = []
    for seg in segments[1:-1]:
        at = chunk_args.find(seg, pos) if seg else pos
        if at < 0:
            return None
        captures.append(chunk_args[pos:at])
        pos = at + len(seg)
    last = segments[-1]
    if last:
        at = chunk_args.find(last, pos)
        if at < 0:
            return None
        captures.append(chunk_args[pos:at])
    else:
        captures.append(chunk_args[pos:])
    return captures


def _split_values(capture: str) -> list[str]:
    if capture == ARG_MARKER:
        return []
    return [v for v in capture.split(AND_JOIN) if v and v != ARG_MARKER]


def parse_output(generated: str, d: EventTypeDef) -> list[ParsedChunk]:
    """Split generated text into per-event chunks and align each against
    the type's template. Anything unparseable is skipped or kept
    trigger-only; this function never raises on model output."""
    template = strip_numeric_labels(d.raw_template)
    chunks = []
    for piece in generated.split(f" {OUT_SEP} "):
        if not piece.startswith(TRIGGER_PREFIX):
            continue
        rest = piece[len(TRIGGER_PREFIX) :]
        if f" {IN_SEP} " in rest:
            trigger_text, arg_part = rest.split(f" {IN_SEP} ", 1)
        else:
            trigger_text, arg_part = rest, None
        if trigger_text == TRG_MARKER or not trigger_text:
            continue  # explicit "no event" or degenerate empty trigger
        if arg_part is None:
            chunks.append(ParsedChunk(trigger_text, [], valid=False))
            continue
        captures = align_template(arg_part, template)
        if captures is None:
            chunks.append(ParsedChunk(trigger_text, [], valid=False))
        else:
            chunks.append(ParsedChunk(trigger_text, [_split_values(c) for c in captures]))
    return chunks


def resolve_trigger_offsets(
    chunks: list[ParsedChunk], context: list[str]
) -> list[tuple[ParsedChunk, Mention]]:
    """Assign the k-th chunk sharing a trigger string the k-th occurrence of
    that string; past the last occurrence, reuse the last; with none, drop."""
    seen: dict[str, int] = {}
    out = []
    for chunk in chunks:
        occs = find_occurrences(context, chunk.trigger_text)
        if not occs:
            continue
        k = seen.get(chunk.trigger_text, 0)
        seen[chunk.trigger_text] = k + 1
        start = occs[min(k, len(occs) - 1)]
        n_words = len(chunk.trigger_text.split())
        out.append((chunk, Mention(start, start + n_words, chunk.trigger_text)))
    return out


def resolve_argument_offsets(
    chunk: ParsedChunk, trigger: Mention, roles: list[str], context: list[str]
) -> EventRecord:
    """Pin each argument string to its occurrence nearest the trigger start
    (ties go left). Strings absent from the context keep span (-1, -1)."""
    args = []
    for slot, values in enumerate(chunk.arg_texts):
        role = roles[slot]
        for text in values:
            occs = find_occurrences(context, text)
            if occs:
                start = min(occs, key=lambda s: (abs(s - trigger.start), s))
                end = start + len(text.split())
            else:
                start, end = UNRESOLVED_SPAN
            args.append(Argument(role, start, end, text))
    return EventRecord("", trigger, tuple(args))


def parse_predictions(generated: str, d: EventTypeDef, context: list[str]) -> list[EventRecord]:
    """Full decode path: text -> chunks -> offset-resolved EventRecords."""
    roles = slot_order(d)
    records = []
    for chunk, trigger in resolve_trigger_offsets(parse_output(generated, d), context):
        rec = resolve_argument_offsets(chunk, trigger, roles, context)
        records.append(EventRecord(d.type_id, rec.trigger, rec.args))
    return records
