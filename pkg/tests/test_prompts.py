"""Prompt text and ground-truth serialization."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from evex.ontology import builtin_ontology, ontology_from_dict
from evex.prompts import (
    EMPTY_TARGET,
    build_prompt,
    build_training_instances,
    serialize_ground_truth,
)
from evex.records import Argument, EventRecord, Mention, RecordError, SentenceInstance

ACE = builtin_ontology("ace")

# lowercased variant of the two-event example sentence
FIG_TOKENS = (
    "the man returned to Los Angeles from Mexico following "
    "his capture Tuesday by bounty hunters".split()
)
TRANSPORT_RECORD = EventRecord(
    "Movement:Transport",
    Mention(2, 3, "returned"),
    (
        Argument("Artifact", 0, 2, "the man"),
        Argument("Destination", 4, 6, "Los Angeles"),
        Argument("Origin", 7, 8, "Mexico"),
    ),
)
ARREST_RECORD = EventRecord(
    "Justice:Arrest-Jail",
    Mention(10, 11, "capture"),
    (
        Argument("Person", 0, 2, "the man"),
        Argument("Time", 11, 12, "Tuesday"),
        Argument("Agent", 13, 15, "bounty hunters"),
    ),
)


def test_build_prompt_meet():
    p = build_prompt(ACE.get("Contact:Meet"))
    assert p.full_text == (
        "Event type is Meet. Trigger <trg> <IN_SEP> <arg> met with <arg> in <arg> place"
    )
    assert p.instruction == "Event type is Meet."


def test_build_prompt_be_born():
    p = build_prompt(ACE.get("Life:Be-Born"))
    assert p.full_text == (
        "Event type is Be-Born. Trigger <trg> <IN_SEP> <arg> was born in <arg> place"
    )


def test_build_prompt_synthetic_type():
    onto = ontology_from_dict(
        {"name": "t", "types": [{"type": "Toy:Noop", "template": "<arg1> acted", "roles": {"arg1": "A"}}]}
    )
    p = build_prompt(onto.get("Toy:Noop"))
    assert p.full_text == "Event type is Noop. Trigger <trg> <IN_SEP> <arg> acted"


def test_prompt_marker_counts():
    for d in ACE:
        p = build_prompt(d)
        assert p.full_text.count("<trg>") == 1
        assert p.full_text.count("<arg>") == len(d.slot_map)


def test_serialize_transport_example():
    out = serialize_ground_truth([TRANSPORT_RECORD], ACE.get("Movement:Transport"), FIG_TOKENS)
    assert out == (
        "Trigger returned <IN_SEP> <arg> transported the man in <arg> vehicle "
        "from Mexico place to Los Angeles place"
    )


def test_serialize_empty_records():
    assert serialize_ground_truth([], ACE.get("Contact:Meet"), ["x"]) == "Trigger <trg>"
    assert EMPTY_TARGET == "Trigger <trg>"


def test_serialize_drops_roles_without_slots():
    # Arrest-Jail has Agent/Person/Place slots; the Time argument has nowhere to go
    out = serialize_ground_truth([ARREST_RECORD], ACE.get("Justice:Arrest-Jail"), FIG_TOKENS)
    assert out == "Trigger capture <IN_SEP> bounty hunters arrested the man in <arg> place"


def test_serialize_two_records_sorted_by_trigger_span():
    toks = "Ana met Bob later Cal met Dee here".split()
    meet = ACE.get("Contact:Meet")
    first = EventRecord(
        "Contact:Meet",
        Mention(1, 2, "met"),
        (Argument("Entity", 0, 1, "Ana"), Argument("Entity", 2, 3, "Bob")),
    )
    second = EventRecord(
        "Contact:Meet",
        Mention(5, 6, "met"),
        (Argument("Entity", 4, 5, "Cal"), Argument("Entity", 6, 7, "Dee")),
    )
    out = serialize_ground_truth([second, first], meet, toks)
    assert out == (
        "Trigger met <IN_SEP> Ana met with Bob in <arg> place"
        " <OUT_SEP> "
        "Trigger met <IN_SEP> Cal met with Dee in <arg> place"
    )


def test_serialize_same_role_overflow_joins_with_and():
    # three Entity args into two Entity slots: one each, overflow joins the last
    meet = ACE.get("Contact:Meet")
    toks = "Ana Bob Cal met here".split()
    rec = EventRecord(
        "Contact:Meet",
        Mention(3, 4, "met"),
        (
            Argument("Entity", 2, 3, "Cal"),
            Argument("Entity", 0, 1, "Ana"),
            Argument("Entity", 1, 2, "Bob"),
        ),
    )
    out = serialize_ground_truth([rec], meet, toks)
    assert out == "Trigger met <IN_SEP> Ana met with Bob and Cal in <arg> place"


def test_serialize_single_slot_and_join():
    # two Victim args share the one Victim slot
    attack = ACE.get("Conflict:Attack")
    toks = "rebels bombed Ana hurting Bob Cal".split()
    rec = EventRecord(
        "Conflict:Attack",
        Mention(1, 2, "bombed"),
        (
            Argument("Victim", 5, 6, "Cal"),
            Argument("Victim", 4, 5, "Bob"),
            Argument("Attacker", 0, 1, "rebels"),
        ),
    )
    out = serialize_ground_truth([rec], attack, toks)
    assert out == (
        "Trigger bombed <IN_SEP> rebels attacked <arg> hurting Bob and Cal victims "
        "using <arg> instrument at <arg> place"
    )


def test_serialize_span_out_of_range():
    rec = EventRecord("Contact:Meet", Mention(0, 9, "met"), ())
    with pytest.raises(RecordError, match="out of range"):
        serialize_ground_truth([rec], ACE.get("Contact:Meet"), ["met"])


def test_serialize_wrong_type_rejected():
    with pytest.raises(RecordError, match="does not match"):
        serialize_ground_truth([TRANSPORT_RECORD], ACE.get("Contact:Meet"), FIG_TOKENS)


@given(st.permutations(list(range(4))))
def test_serialize_order_insensitive(perm):
    toks = "a b c d e f g h".split()
    meet = ACE.get("Contact:Meet")
    records = [
        EventRecord("Contact:Meet", Mention(i, i + 1, toks[i]), (Argument("Entity", i + 4, i + 5, toks[i + 4]),))
        for i in range(4)
    ]
    shuffled = [records[i] for i in perm]
    out = serialize_ground_truth(shuffled, meet, toks)
    assert out == serialize_ground_truth(records, meet, toks)
    # chunk order equals brute-force trigger-span sort
    chunk_triggers = [c.split(" <IN_SEP> ")[0][len("Trigger ") :] for c in out.split(" <OUT_SEP> ")]
    expected = [r.trigger.text for r in sorted(records, key=lambda r: (r.trigger.start, r.trigger.end))]
    assert chunk_triggers == expected


def test_out_sep_count_matches_record_count():
    toks = "a b c d".split()
    meet = ACE.get("Contact:Meet")
    records = [EventRecord("Contact:Meet", Mention(i, i + 1, toks[i]), ()) for i in range(3)]
    out = serialize_ground_truth(records, meet, toks)
    assert out.count(" <OUT_SEP> ") == 2


def test_build_training_instances_cartesian():
    sent = SentenceInstance("d", "s", ["nothing", "here"], [])
    insts = build_training_instances([sent], ACE)
    assert len(insts) == 33
    assert all(i.y == EMPTY_TARGET for i in insts)
    assert insts[0].x.endswith(" [SEP] nothing here")


def test_build_training_instances_fig_example():
    sent = SentenceInstance("d", "s", FIG_TOKENS, [TRANSPORT_RECORD, ARREST_RECORD])
    insts = build_training_instances([sent], ACE)
    by_type = {i.event_type: i for i in insts}
    assert by_type["Movement:Transport"].y == (
        "Trigger returned <IN_SEP> <arg> transported the man in <arg> vehicle "
        "from Mexico place to Los Angeles place"
    )
    assert by_type["Justice:Arrest-Jail"].y == (
        "Trigger capture <IN_SEP> bounty hunters arrested the man in <arg> place"
    )
    assert by_type["Movement:Transport"].is_positive
    assert not by_type["Contact:Meet"].is_positive


def test_build_training_instances_empty_dataset():
    assert build_training_instances([], ACE) == []


def test_build_training_instances_unknown_type():
    sent = SentenceInstance(
        "d", "s", ["x"], [EventRecord("No:Such", Mention(0, 1, "x"), ())]
    )
    with pytest.raises(RecordError, match="No:Such"):
        build_training_instances([sent], ACE)
