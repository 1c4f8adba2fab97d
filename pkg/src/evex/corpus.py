"""Dataset I/O, synthetic corpus generation, and the transfer split.

The synthetic generator is a stand-in for licensed event corpora. It
emits whitespace-tokenized sentences whose gold triggers and argument
strings occur exactly once in the sentence, contain no " and ", and
contain no substring of their template's anchor text. Those three
properties are what the output parser needs for exact round trips, so
the generator re-checks them and resamples when a draw violates one.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .ontology import EventOntology, strip_numeric_labels
from .records import (
    Argument,
    EventRecord,
    Mention,
    RecordError,
    SentenceInstance,
    find_occurrences,
    instance_from_dict,
    instance_to_dict,
)


def read_jsonl(path, allow_unresolved: bool = False) -> list[SentenceInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(instance_from_dict(obj, allow_unresolved=allow_unresolved))
            except (json.JSONDecodeError, RecordError) as e:
                raise RecordError(f"{path}: line {lineno}: {e}") from e
    return out


def write_jsonl(path, instances) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_dict(inst), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# synthetic corpus

# Filler pools. Words here must stay clear of template anchor words
# ("place", "vehicle", "instrument", ...) or capture alignment would split
# argument strings mid-phrase.
NAMES = [
    "Maria Santos", "Omar Khalid", "Lucy Chen", "Dana Reyes", "John Park",
    "Ana Sosa", "Peter Novak", "Rosa Ibarra", "Elena Vega", "Marcus Bell",
]
GROUPS = ["bounty hunters", "federal agents", "harbor police", "rebel forces", "border guards"]
PLACES = ["Los Angeles", "Fresno", "Oakland", "Tucson", "Madrid", "Lisbon", "Cairo", "Havana"]
VEHICLES = ["truck", "bus", "ferry", "helicopter"]
INSTRUMENTS = ["rifles", "rockets", "drones", "mortars"]
DAYS = ["Monday", "Tuesday", "Friday", "Sunday"]

TRIGGERS = {
    "Movement:Transport": ["transported", "moved", "shipped", "ferried", "returned"],
    "Justice:Arrest-Jail": ["arrested", "captured", "detained", "jailed"],
    "Contact:Meet": ["met", "gathered", "convened", "huddled"],
    "Conflict:Attack": ["attacked", "bombed", "raided", "ambushed"],
    "Life:Be-Born": ["born"],
}

ROLE_POOLS = {
    ("Movement:Transport", "Agent"): GROUPS,
    ("Movement:Transport", "Artifact"): NAMES,
    ("Movement:Transport", "Vehicle"): VEHICLES,
    ("Movement:Transport", "Origin"): PLACES,
    ("Movement:Transport", "Destination"): PLACES,
    ("Justice:Arrest-Jail", "Agent"): GROUPS,
    ("Justice:Arrest-Jail", "Person"): NAMES,
    ("Justice:Arrest-Jail", "Place"): PLACES,
    ("Contact:Meet", "Entity"): NAMES,
    ("Contact:Meet", "Place"): PLACES,
    ("Conflict:Attack", "Attacker"): GROUPS,
    ("Conflict:Attack", "Target"): NAMES,
    ("Conflict:Attack", "Instrument"): INSTRUMENTS,
    ("Conflict:Attack", "Place"): PLACES,
    ("Conflict:Attack", "Victim"): NAMES,
    ("Life:Be-Born", "Person"): NAMES,
    ("Life:Be-Born", "Place"): PLACES,
}

# Frame elements: ("lit", word) | ("trg",) | ("arg", role) | ("day",)
FRAMES = {
    "Movement:Transport": [
        [("arg", "Agent"), ("trg",), ("arg", "Artifact"), ("lit", "from"), ("arg", "Origin"),
         ("lit", "to"), ("arg", "Destination")],
        [("arg", "Artifact"), ("trg",), ("lit", "to"), ("arg", "Destination"), ("lit", "aboard"),
         ("arg", "Vehicle"), ("lit", "on"), ("day",)],
    ],
    "Justice:Arrest-Jail": [
        [("arg", "Agent"), ("trg",), ("arg", "Person"), ("lit", "in"), ("arg", "Place")],
        [("arg", "Person"), ("lit", "was"), ("trg",), ("lit", "by"), ("arg", "Agent"),
         ("lit", "on"), ("day",)],
    ],
    "Contact:Meet": [
        [("arg", "Entity"), ("trg",), ("lit", "with"), ("arg", "Entity"), ("lit", "in"),
         ("arg", "Place")],
        [("arg", "Entity"), ("lit", "and"), ("arg", "Entity"), ("trg",), ("lit", "in"),
         ("arg", "Place")],
    ],
    "Conflict:Attack": [
        [("arg", "Attacker"), ("trg",), ("arg", "Target"), ("lit", "with"), ("arg", "Instrument"),
         ("lit", "in"), ("arg", "Place")],
        [("arg", "Attacker"), ("trg",), ("arg", "Target"), ("lit", "in"), ("arg", "Place"),
         ("lit", "wounding"), ("arg", "Victim")],
    ],
    "Life:Be-Born": [
        [("arg", "Person"), ("lit", "was"), ("trg",), ("lit", "in"), ("arg", "Place"),
         ("lit", "on"), ("day",)],
        [("arg", "Person"), ("trg",), ("lit", "in"), ("arg", "Place")],
    ],
}

CUES = [
    "festival", "orchestra", "recipe", "garden", "museum",
    "lecture", "painting", "harvest", "sculpture", "bakery",
]
IRRELEVANT_VERBS = ["enjoyed", "visited", "admired", "described"]
CONNECTORS = ["after", "while", "before", "as"]


def _realize_frame(type_id, frame, rng, used):
    """Append one event's tokens; returns (tokens, EventRecord-at-offset-0)."""
    tokens: list[str] = []
    trig = None
    args = []
    for el in frame:
        if el[0] == "lit":
            tokens.append(el[1])
        elif el[0] == "day":
            tokens.append(str(rng.choice(DAYS)))
        elif el[0] == "trg":
            pool = [w for w in TRIGGERS[type_id] if w not in used]
            word = str(pool[rng.integers(len(pool))])
            used.add(word)
            trig = Mention(len(tokens), len(tokens) + 1, word)
            tokens.append(word)
        else:
            role = el[1]
            pool = [p for p in ROLE_POOLS[(type_id, role)] if p not in used]
            phrase = str(pool[rng.integers(len(pool))])
            used.add(phrase)
            words = phrase.split()
            args.append(Argument(role, len(tokens), len(tokens) + len(words), phrase))
            tokens.extend(words)
    return tokens, EventRecord(type_id, trig, tuple(args))


def _shift(ev: EventRecord, offset: int) -> EventRecord:
    return EventRecord(
        ev.event_type,
        Mention(ev.trigger.start + offset, ev.trigger.end + offset, ev.trigger.text),
        tuple(Argument(a.role, a.start + offset, a.end + offset, a.text) for a in ev.args),
    )


def _relevant_sentence(ontology, rng, n_events):
    type_ids = [t for t in ontology.type_ids() if t in FRAMES]
    chosen = rng.choice(len(type_ids), size=n_events, replace=False)
    used: set[str] = set()
    tokens: list[str] = []
    events = []
    for j, ti in enumerate(chosen):
        if j > 0:
            tokens.append(str(rng.choice(CONNECTORS)))
        type_id = type_ids[ti]
        frames = FRAMES[type_id]
        frame = frames[rng.integers(len(frames))]
        ftoks, ev = _realize_frame(type_id, frame, rng, used)
        events.append(_shift(ev, len(tokens)))
        tokens.extend(ftoks)
    return tokens, events


def _irrelevant_sentence(rng):
    cue = str(rng.choice(CUES))
    kind = rng.integers(3)
    if kind == 0:
        name = str(rng.choice(NAMES)).split()
        return name + [str(rng.choice(IRRELEVANT_VERBS)), "the", cue, "on", str(rng.choice(DAYS))]
    if kind == 1:
        return ["the", cue, "in", str(rng.choice(PLACES)), "drew", "crowds", "on", str(rng.choice(DAYS))]
    name = str(rng.choice(NAMES)).split()
    return name + [str(rng.choice(IRRELEVANT_VERBS)), "a", cue, "in", str(rng.choice(PLACES))]


def check_outparse_preconditions(inst: SentenceInstance, ontology: EventOntology) -> list[str]:
    """Violations of what exact parse round trips need: every gold string
    occurs exactly once, no argument contains " and " or template anchor text."""
    problems = []
    for ev in inst.events:
        if len(find_occurrences(inst.tokens, ev.trigger.text)) != 1:
            problems.append(f"{inst.sent_id}: trigger {ev.trigger.text!r} not unique")
        anchors = [
            seg.strip()
            for seg in strip_numeric_labels(ontology.get(ev.event_type).raw_template).split("<arg>")
            if seg.strip()
        ]
        for a in ev.args:
            if len(find_occurrences(inst.tokens, a.text)) != 1:
                problems.append(f"{inst.sent_id}: arg {a.text!r} not unique")
            if " and " in a.text:
                problems.append(f"{inst.sent_id}: arg {a.text!r} contains ' and '")
            for seg in anchors:
                if seg in a.text:
                    problems.append(f"{inst.sent_id}: arg {a.text!r} contains anchor {seg!r}")
    return problems


def generate_synthetic(
    ontology: EventOntology,
    n_sents: int,
    irrelevant_rate: float,
    seed: int,
    two_event_fraction: float = 0.25,
) -> list[SentenceInstance]:
    if not 0.0 <= irrelevant_rate <= 1.0:
        raise ValueError(f"irrelevant_rate must be in [0, 1], got {irrelevant_rate}")
    rng = np.random.default_rng(seed)
    n_irr = int(round(n_sents * irrelevant_rate))
    n_rel = n_sents - n_irr

    drafts = []
    for i in range(n_rel):
        n_events = 2 if rng.random() < two_event_fraction else 1
        for _attempt in range(20):
            tokens, events = _relevant_sentence(ontology, rng, n_events)
            inst = SentenceInstance("", "", tokens, events)
            if not check_outparse_preconditions(inst, ontology):
                break
        else:
            raise RuntimeError("could not draw a sentence meeting parse preconditions")
        drafts.append(inst)
    for i in range(n_irr):
        drafts.append(SentenceInstance("", "", _irrelevant_sentence(rng), []))

    order = rng.permutation(len(drafts))
    out = []
    for k, idx in enumerate(order):
        inst = drafts[idx]
        inst.doc_id = f"d{k // 10:04d}"
        inst.sent_id = f"d{k // 10:04d}-s{k % 10}"
        out.append(inst)
    return out


# ---------------------------------------------------------------------------
# transfer split

MIN_TRANSFER_TOKENS = 8
N_SRC_TYPES = 10


def _filter_events(dataset, keep_types):
    out = []
    for inst in dataset:
        events = [ev for ev in inst.events if ev.event_type in keep_types]
        out.append(SentenceInstance(inst.doc_id, inst.sent_id, list(inst.tokens), events))
    return out


def _ratio_split(items, rng, train_parts: int = 4, test_parts: int = 1):
    idx = rng.permutation(len(items))
    n_train = int(round(len(items) * train_parts / (train_parts + test_parts)))
    train = [items[i] for i in sorted(idx[:n_train])]
    test = [items[i] for i in sorted(idx[n_train:])]
    return train, test


def transfer_split(dataset, ontology: EventOntology, seed: int):
    """Partition by event type frequency into source and target subsets,
    each split 4:1 into train and test. Contexts shorter than 8 tokens are
    dropped. Returns (src_train, src_test, tgt_train, tgt_test)."""
    kept = [inst for inst in dataset if len(inst.tokens) >= MIN_TRANSFER_TOKENS]
    counts: dict[str, int] = {}
    for inst in kept:
        for ev in inst.events:
            counts[ev.event_type] = counts.get(ev.event_type, 0) + 1
    types = sorted(counts)
    if len(types) < 2:
        raise ValueError("transfer split needs at least 2 distinct event types")
    n_src = N_SRC_TYPES
    if len(types) < N_SRC_TYPES + 1:
        n_src = (len(types) + 1) // 2
        warnings.warn(
            f"only {len(types)} event types present; using top-{n_src} as source types",
            stacklevel=2,
        )
    ranked = sorted(types, key=lambda t: (-counts[t], t))
    src_types = set(ranked[:n_src])
    tgt_types = set(ranked[n_src:])

    rng = np.random.default_rng(seed)
    src_pool = [i for i in kept if any(ev.event_type in src_types for ev in i.events)]
    tgt_pool = [i for i in kept if any(ev.event_type in tgt_types for ev in i.events)]
    empty = [i for i in kept if not i.events]
    order = rng.permutation(len(empty))
    src_pool += [empty[i] for i in order[: len(empty) // 2]]
    tgt_pool += [empty[i] for i in order[len(empty) // 2 :]]

    src_train, src_test = _ratio_split(_filter_events(src_pool, src_types), rng)
    tgt_train, tgt_test = _ratio_split(_filter_events(tgt_pool, tgt_types), rng)
    return src_train, src_test, tgt_train, tgt_test


# ---------------------------------------------------------------------------
# statistics

def stats_table(named_datasets: dict[str, list[SentenceInstance]]) -> str:
    """Sentence/event/argument counts per split, plus the no-event rate."""
    rows = [("split", "#sents", "#events", "#args", "%no-event")]
    for name, ds in named_datasets.items():
        n_events = sum(len(i.events) for i in ds)
        n_args = sum(len(ev.args) for i in ds for ev in i.events)
        n_empty = sum(1 for i in ds if not i.events)
        pct = 100.0 * n_empty / len(ds) if ds else 0.0
        rows.append((name, str(len(ds)), str(n_events), str(n_args), f"{pct:.2f}"))
    widths = [max(len(r[c]) for r in rows) for c in range(5)]
    lines = ["  ".join(r[c].rjust(widths[c]) if c else r[c].ljust(widths[c]) for c in range(5)) for r in rows]
    return "\n".join(lines)
