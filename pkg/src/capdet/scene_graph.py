"""Scene graphs: objects, attribute pairs, and subject-predicate-object relations.

A graph is an immutable value. Construction goes through :func:`build_graph`
(or :func:`parse_scene_graph` for the serialized form), which normalizes
strings, enforces set semantics, and checks referential integrity. The
canonical document format is a JSON object with three arrays::

    {"objects":    [{"id": "o1", "label": "car"}, ...],
     "attributes": [{"object": "o1", "attribute": "red"}, ...],
     "relations":  [{"subject": "o1", "predicate": "on", "object": "o2"}, ...]}

Attribute and predicate strings are whitespace-normalized and casefolded so
that duplicate detection is insensitive to the noise a language-model parser
tends to produce. Labels keep their original case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Literal

from capdet.errors import (
    DuplicateObjectIdError,
    MalformedDocumentError,
    ReferentialIntegrityError,
    UnknownObjectError,
)
from capdet.util import json_compact

RelationCounting = Literal["subject_only", "both_endpoints"]

DEFAULT_RELATION_COUNTING: RelationCounting = "subject_only"


@dataclass(frozen=True)
class ObjectRef:
    """One object mention; ``id`` is unique within its graph."""

    id: str
    label: str


@dataclass(frozen=True)
class AttributePair:
    object_id: str
    attribute: str


@dataclass(frozen=True)
class RelationTriplet:
    subject_id: str
    predicate: str
    object_id: str


@dataclass(frozen=True)
class SceneGraph:
    """Immutable scene graph with canonically sorted, duplicate-free parts."""

    objects: tuple[ObjectRef, ...]
    attributes: tuple[AttributePair, ...]
    relations: tuple[RelationTriplet, ...]

    def object_ids(self) -> frozenset[str]:
        return frozenset(o.id for o in self.objects)

    def label_of(self, object_id: str) -> str:
        for o in self.objects:
            if o.id == object_id:
                return o.label
        raise UnknownObjectError(f"no object with id {object_id!r}")


def _norm_ws(s: str) -> str:
    return " ".join(s.split())


def _norm_term(s: str) -> str:
    return _norm_ws(s).casefold()


def build_graph(
    objects: Iterable[tuple[str, str]],
    attributes: Iterable[tuple[str, str]] = (),
    relations: Iterable[tuple[str, str, str]] = (),
) -> SceneGraph:
    """Build a validated graph from (id, label), (object, attribute), and
    (subject, predicate, object) tuples.

    Input order never matters: parts are deduplicated with set semantics and
    stored in a canonical sorted order.
    """
    seen_ids: dict[str, str] = {}
    for oid, label in objects:
        if not isinstance(oid, str) or not isinstance(label, str):
            raise MalformedDocumentError("object id and label must be strings")
        oid = oid.strip()
        label = _norm_ws(label)
        if not oid:
            raise MalformedDocumentError("object id is empty")
        if not label:
            raise MalformedDocumentError(f"object {oid!r} has an empty label")
        if oid in seen_ids:
            if seen_ids[oid] != label:
                raise DuplicateObjectIdError(
                    f"object id {oid!r} appears twice with different labels"
                )
            raise DuplicateObjectIdError(f"object id {oid!r} appears twice")
        seen_ids[oid] = label

    attr_set: set[tuple[str, str]] = set()
    for oid, attr in attributes:
        if not isinstance(oid, str) or not isinstance(attr, str):
            raise MalformedDocumentError("attribute entries must be strings")
        oid = oid.strip()
        attr = _norm_term(attr)
        if not attr:
            raise MalformedDocumentError(f"empty attribute on object {oid!r}")
        if oid not in seen_ids:
            raise ReferentialIntegrityError(
                f"attribute {attr!r} references unknown object {oid!r}"
            )
        attr_set.add((oid, attr))

    rel_set: set[tuple[str, str, str]] = set()
    for subj, pred, obj in relations:
        if not (isinstance(subj, str) and isinstance(pred, str) and isinstance(obj, str)):
            raise MalformedDocumentError("relation entries must be strings")
        subj, obj = subj.strip(), obj.strip()
        pred = _norm_term(pred)
        if not pred:
            raise MalformedDocumentError("relation has an empty predicate")
        for endpoint in (subj, obj):
            if endpoint not in seen_ids:
                raise ReferentialIntegrityError(
                    f"relation ({subj!r}, {pred!r}, {obj!r}) references unknown object {endpoint!r}"
                )
        rel_set.add((subj, pred, obj))

    return SceneGraph(
        objects=tuple(ObjectRef(oid, seen_ids[oid]) for oid in sorted(seen_ids)),
        attributes=tuple(AttributePair(o, a) for o, a in sorted(attr_set)),
        relations=tuple(RelationTriplet(s, p, o) for s, p, o in sorted(rel_set)),
    )


def graph_from_document(doc: object) -> SceneGraph:
    """Interpret an already-decoded JSON object as a canonical graph document."""
    if not isinstance(doc, dict):
        raise MalformedDocumentError("graph document must be a JSON object")
    for key in ("objects", "attributes", "relations"):
        if key not in doc:
            raise MalformedDocumentError(f"graph document is missing the {key!r} array")
        if not isinstance(doc[key], list):
            raise MalformedDocumentError(f"graph document field {key!r} must be an array")

    def _entry(item: object, fields: tuple[str, ...], kind: str) -> tuple:
        if not isinstance(item, dict):
            raise MalformedDocumentError(f"{kind} entry must be an object")
        try:
            return tuple(item[f] for f in fields)
        except KeyError as e:
            raise MalformedDocumentError(f"{kind} entry is missing field {e.args[0]!r}") from None

    objects = [_entry(o, ("id", "label"), "object") for o in doc["objects"]]
    attributes = [_entry(a, ("object", "attribute"), "attribute") for a in doc["attributes"]]
    relations = [_entry(r, ("subject", "predicate", "object"), "relation") for r in doc["relations"]]
    return build_graph(objects, attributes, relations)


def parse_scene_graph(data: bytes | str) -> SceneGraph:
    """Parse the canonical serialized form into a validated graph."""
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedDocumentError(f"graph document is not valid UTF-8: {e}") from e
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise MalformedDocumentError(f"graph document is not valid JSON: {e}") from e
    return graph_from_document(doc)


def serialize_scene_graph(g: SceneGraph) -> bytes:
    """Canonical byte form; stable across runs and platforms."""
    doc = {
        "objects": [{"id": o.id, "label": o.label} for o in g.objects],
        "attributes": [{"object": a.object_id, "attribute": a.attribute} for a in g.attributes],
        "relations": [
            {"subject": r.subject_id, "predicate": r.predicate, "object": r.object_id}
            for r in g.relations
        ],
    }
    return json_compact(doc).encode("utf-8")


def graph_warnings(g: SceneGraph) -> list[str]:
    """Non-fatal oddities, currently self-relations (kept, but worth flagging)."""
    warnings = []
    for r in g.relations:
        if r.subject_id == r.object_id:
            warnings.append(
                f"self-relation ({r.subject_id!r}, {r.predicate!r}, {r.object_id!r})"
            )
    return warnings


def _require_object(g: SceneGraph, object_id: str) -> None:
    if object_id not in g.object_ids():
        raise UnknownObjectError(f"no object with id {object_id!r}")


def object_relation_count(
    g: SceneGraph,
    object_id: str,
    relation_counting: RelationCounting = DEFAULT_RELATION_COUNTING,
) -> int:
    """Number of relation triplets counted toward ``object_id``.

    The default counts a triplet toward its subject only. With
    ``both_endpoints`` a triplet counts toward each distinct endpoint;
    a self-relation still counts once.
    """
    _require_object(g, object_id)
    if relation_counting == "subject_only":
        return sum(1 for r in g.relations if r.subject_id == object_id)
    if relation_counting == "both_endpoints":
        return sum(1 for r in g.relations if object_id in (r.subject_id, r.object_id))
    raise ValueError(f"unknown relation_counting mode {relation_counting!r}")


def object_attribute_count(g: SceneGraph, object_id: str) -> int:
    """Number of attribute pairs attached to ``object_id``."""
    _require_object(g, object_id)
    return sum(1 for a in g.attributes if a.object_id == object_id)


def induced_subgraph(g: SceneGraph, keep_objects: Iterable[str]) -> SceneGraph:
    """Restrict to ``keep_objects``: attributes on kept objects, relations with
    both endpoints kept."""
    keep = set(keep_objects)
    unknown = keep - g.object_ids()
    if unknown:
        raise UnknownObjectError(f"unknown object ids: {sorted(unknown)}")
    return SceneGraph(
        objects=tuple(o for o in g.objects if o.id in keep),
        attributes=tuple(a for a in g.attributes if a.object_id in keep),
        relations=tuple(
            r for r in g.relations if r.subject_id in keep and r.object_id in keep
        ),
    )
