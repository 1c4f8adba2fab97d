"""Event ontology: typed templates with numbered argument slots.

An ontology file is JSON:

    {"name": "ace", "types": [
        {"type": "Contact:Meet",
         "template": "<arg1> met with <arg2> in <arg3> place",
         "roles": {"arg1": "Entity", "arg2": "Entity", "arg3": "Place"}},
        ...]}

Type order in the file is significant: it fixes the integer index used to
address per-type rows in the prefix parameter tensor.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

PLACEHOLDER_RE = re.compile(r"<arg(\d+)>")
ARG_MARKER = "<arg>"
TRG_MARKER = "<trg>"


class OntologyError(ValueError):
    """Ontology file failed validation."""


@dataclass(frozen=True)
class EventTypeDef:
    type_id: str
    raw_template: str
    slot_map: dict[str, str]  # "arg1" -> role name

    @property
    def surface_name(self) -> str:
        # "Justice:Arrest-Jail" -> "Arrest-Jail"
        return self.type_id.rsplit(":", 1)[-1]

    @property
    def roles(self) -> list[str]:
        """Distinct role names, template order."""
        seen = []
        for r in slot_order(self):
            if r not in seen:
                seen.append(r)
        return seen


@dataclass(frozen=True)
class EventOntology:
    name: str
    types: tuple[EventTypeDef, ...]
    _index: dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._index.update({t.type_id: i for i, t in enumerate(self.types)})

    def __len__(self) -> int:
        return len(self.types)

    def __iter__(self):
        return iter(self.types)

    def __contains__(self, type_id: str) -> bool:
        return type_id in self._index

    def get(self, type_id: str) -> EventTypeDef:
        try:
            return self.types[self._index[type_id]]
        except KeyError:
            raise OntologyError(f"unknown event type {type_id!r}") from None

    def index_of(self, type_id: str) -> int:
        try:
            return self._index[type_id]
        except KeyError:
            raise OntologyError(f"unknown event type {type_id!r}") from None

    def type_ids(self) -> list[str]:
        return [t.type_id for t in self.types]


def _validate_def(type_id: str, template: str, roles: dict[str, str]) -> None:
    nums = [int(m) for m in PLACEHOLDER_RE.findall(template)]
    if sorted(nums) != list(range(1, len(nums) + 1)):
        raise OntologyError(
            f"{type_id}: placeholders must be numbered 1..K exactly once, got {sorted(nums)}"
        )
    keys = set(roles)
    expected = {f"arg{n}" for n in nums}
    if keys != expected:
        missing = expected - keys
        extra = keys - expected
        raise OntologyError(
            f"{type_id}: role map does not match placeholders"
            + (f"; missing {sorted(missing)}" if missing else "")
            + (f"; unmapped {sorted(extra)}" if extra else "")
        )


def load_ontology(path) -> EventOntology:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise OntologyError(f"{path}: not valid JSON: {e}") from e
    return ontology_from_dict(raw, source=str(path))


def ontology_from_dict(raw: dict, source: str = "<dict>") -> EventOntology:
    if not isinstance(raw, dict) or "types" not in raw:
        raise OntologyError(f"{source}: expected object with 'name' and 'types'")
    defs = []
    seen: set[str] = set()
    for entry in raw["types"]:
        try:
            type_id = entry["type"]
            template = entry["template"]
            roles = dict(entry["roles"])
        except (KeyError, TypeError) as e:
            raise OntologyError(f"{source}: malformed type entry {entry!r}") from e
        if type_id in seen:
            raise OntologyError(f"{source}: duplicate event type {type_id!r}")
        seen.add(type_id)
        _validate_def(type_id, template, roles)
        defs.append(EventTypeDef(type_id, template, roles))
    return EventOntology(str(raw.get("name", "")), tuple(defs))


def ontology_to_dict(onto: EventOntology) -> dict:
    return {
        "name": onto.name,
        "types": [
            {"type": t.type_id, "template": t.raw_template, "roles": dict(t.slot_map)}
            for t in onto.types
        ],
    }


def save_ontology(path, onto: EventOntology) -> None:
    Path(path).write_text(
        json.dumps(ontology_to_dict(onto), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def strip_numeric_labels(raw_template: str) -> str:
    """Replace every numbered <argN> with the bare marker; all other bytes kept."""
    return PLACEHOLDER_RE.sub(ARG_MARKER, raw_template)


def slot_order(d: EventTypeDef) -> list[str]:
    """Role names in template left-to-right placeholder order.

    This is the order argument values appear in generated output, which
    may differ from numeric order (some templates use e.g. <arg5> early).
    """
    return [d.slot_map[f"arg{n}"] for n in PLACEHOLDER_RE.findall(d.raw_template)]


def builtin_ontology_path(name: str) -> Path:
    """Path of a shipped ontology file ("ace", "ere", "toy")."""
    ref = resources.files("evex.data.ontologies").joinpath(f"{name}.json")
    p = Path(str(ref))
    if not p.exists():
        raise OntologyError(f"no built-in ontology named {name!r}")
    return p


def builtin_ontology(name: str) -> EventOntology:
    return load_ontology(builtin_ontology_path(name))
