"""BIMcore record schema, RI subtype taxonomy and record validation.

A registry entry (:class:`RIRecord`) carries values for the 23 BIMcore
content elements. The element table is fixed; :func:`builtin_element_defs`
returns it and :func:`validate_record` checks records against it.
"""

from __future__ import annotations

import json
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any

UTC = timezone.utc


class StrEnum(str, Enum):
    def __str__(self) -> str:
        return self.value


class ContractViolation(ValueError):
    """Raised when a caller breaks an operation's precondition."""


class SchemaError(ValueError):
    """Raised when a serialized document does not have the expected shape."""


class NotFound(LookupError):
    """Raised when a record, version, property or package is unknown."""


class BimcoreCategory(StrEnum):
    STRUCTURAL_SEMANTIC = "StructuralSemantic"
    TOOLING = "Tooling"
    CONTEXT = "Context"


class ValueKind(StrEnum):
    TEXT = "text"
    STRUCTURED_REFERENCE = "structured-reference"
    EXTERNAL_LINK = "external-link"
    TOOL_DESCRIPTION = "tool-description"
    CONTEXT_ENTRY = "context-entry"


class RISubtype(StrEnum):
    STRUCTURE = "StructureInformation"
    SEMANTIC = "SemanticInformation"
    OTHER = "OtherRepresentationInformation"
    RENDERING_SOFTWARE = "RepresentationRenderingSoftware"
    ACCESS_SOFTWARE = "AccessSoftware"


class RecordStatus(StrEnum):
    DRAFT = "draft"
    PUBLISHED = "published"
    SUPERSEDED = "superseded"
    WITHDRAWN = "withdrawn"


class Relation(StrEnum):
    PREVIOUS_VERSION_OF = "previous-version-of"
    TAILORING_OF = "tailoring-of"
    CONTAINER_MEMBER_OF = "container-member-of"
    SUPERSEDES = "supersedes"
    REQUIRES_RI = "requires-ri"


class ContextKind(StrEnum):
    ORIGIN_CONTEXT = "origin-context"
    BUILDING_SPECIFIC = "building-specific"
    EXTERNAL_USE_CASE_REPO = "external-use-case-repo"
    ACCEPTANCE_PROFILE = "acceptance-profile"
    BACKGROUND = "background"


# one-to-one onto the Context category
CONTEXT_KIND_ELEMENT: dict[ContextKind, int] = {
    ContextKind.ORIGIN_CONTEXT: 19,
    ContextKind.BUILDING_SPECIFIC: 20,
    ContextKind.EXTERNAL_USE_CASE_REPO: 21,
    ContextKind.ACCEPTANCE_PROFILE: 22,
    ContextKind.BACKGROUND: 23,
}
ELEMENT_CONTEXT_KIND: dict[int, ContextKind] = {v: k for k, v in CONTEXT_KIND_ELEMENT.items()}


@dataclass(frozen=True)
class ContentElementDef:
    id: int
    category: BimcoreCategory
    name: str
    value_kind: ValueKind
    repeatable: bool
    required_for_publication: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "category": self.category.value,
            "name": self.name,
            "value_kind": self.value_kind.value,
            "repeatable": self.repeatable,
            "required_for_publication": self.required_for_publication,
        }


_S, _T, _C = BimcoreCategory.STRUCTURAL_SEMANTIC, BimcoreCategory.TOOLING, BimcoreCategory.CONTEXT
_TXT = ValueKind.TEXT
_REF = ValueKind.STRUCTURED_REFERENCE
_LINK = ValueKind.EXTERNAL_LINK
_TOOL = ValueKind.TOOL_DESCRIPTION
_CTX = ValueKind.CONTEXT_ENTRY

# (id, category, short label, value kind)
_ELEMENT_TABLE: tuple[tuple[int, BimcoreCategory, str, ValueKind], ...] = (
    (1, _S, "name, identifier and classifications of a format", _REF),
    (2, _S, "version of a format or reference to other versions", _REF),
    (3, _S, "references to existing repositories or registries", _LINK),
    (4, _S, "forward and backward compatibility issues", _TXT),
    (5, _S, "openness of a format and availability of specifications", _TXT),
    (6, _S, "rights, intellectual property and reengineering tools", _TXT),
    (7, _S, "syntax (formal structure) and semantics", _TXT),
    (8, _S, "encoding of fundamental format elements", _TXT),
    (9, _S, "compression, data reduction and encryption", _TXT),
    (10, _S, "references to external standards or documents", _LINK),
    (11, _S, "self-documentation capabilities", _TXT),
    (12, _S, "resolvability of external references (materialization)", _TXT),
    (13, _S, "dependencies on software and hardware", _TXT),
    (14, _S, "options for tailoring a format to purposes or contexts", _TXT),
    (15, _S, "background and fundamentals (other representation information)", _TXT),
    (16, _T, "software tools for the recognition of formats", _TOOL),
    (17, _T, "software tools for the verification of formats and tailored versions", _TOOL),
    (18, _T, "software tools for inspection and (simplified) presentation", _TOOL),
    (19, _C, "typical contexts of origin and significant properties", _CTX),
    (20, _C, "building-specific context information", _CTX),
    (21, _C, "repositories of use cases or significant properties", _LINK),
    (22, _C, "acceptance and frequency of use within a context", _CTX),
    (23, _C, "sources of background and fundamentals", _LINK),
)

_NON_REPEATABLE = frozenset({1, 2, 5})
_REQUIRED_FOR_PUBLICATION = frozenset({1})

_DEFS: tuple[ContentElementDef, ...] = tuple(
    ContentElementDef(
        id=eid,
        category=cat,
        name=name,
        value_kind=kind,
        repeatable=eid not in _NON_REPEATABLE,
        required_for_publication=eid in _REQUIRED_FOR_PUBLICATION,
    )
    for eid, cat, name, kind in _ELEMENT_TABLE
)
_DEFS_BY_ID: dict[int, ContentElementDef] = {d.id: d for d in _DEFS}


def builtin_element_defs() -> list[ContentElementDef]:
    """Return the 23 BIMcore content element definitions, ordered by id."""
    return list(_DEFS)


def element_def(element_id: int) -> ContentElementDef:
    try:
        return _DEFS_BY_ID[element_id]
    except (KeyError, TypeError):
        raise ContractViolation(f"unknown BIMcore element id: {element_id!r}") from None


def category_elements(category: BimcoreCategory) -> frozenset[int]:
    return frozenset(d.id for d in _DEFS if d.category is category)


_STRUCT_SEM = frozenset({RISubtype.STRUCTURE, RISubtype.SEMANTIC})
_RI_SUBTYPE_TABLE: dict[int, frozenset[RISubtype]] = {
    7: _STRUCT_SEM,
    8: frozenset({RISubtype.STRUCTURE}),
    9: frozenset({RISubtype.STRUCTURE}),
    12: frozenset({RISubtype.SEMANTIC}),
    15: frozenset({RISubtype.OTHER}),
    16: frozenset({RISubtype.OTHER}),
    17: frozenset({RISubtype.OTHER}),
    18: frozenset({RISubtype.ACCESS_SOFTWARE}),
}


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContentElementValue:
    element_id: int
    payload: Any
    language: str | None = None
    source_citation: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "element_id": self.element_id,
            "payload": self.payload,
            "language": self.language,
            "source_citation": self.source_citation,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ContentElementValue:
        _expect_keys(data, {"element_id", "payload"}, "ContentElementValue")
        eid = data["element_id"]
        if not isinstance(eid, int) or isinstance(eid, bool):
            raise SchemaError(f"ContentElementValue.element_id must be an integer, got {eid!r}")
        return cls(
            element_id=eid,
            payload=data["payload"],
            language=_opt_str(data, "language"),
            source_citation=_opt_str(data, "source_citation"),
        )


def classify_ri_subtype(value: ContentElementValue) -> frozenset[RISubtype]:
    """Return the RI subtypes a value contributes, determined by its element id alone."""
    element_def(value.element_id)
    return _RI_SUBTYPE_TABLE.get(value.element_id, frozenset())


@dataclass(frozen=True)
class RelatedRecord:
    relation: Relation
    record_id: str

    def to_dict(self) -> dict[str, str]:
        return {"relation": self.relation.value, "record_id": self.record_id}


@dataclass(frozen=True)
class RIRecord:
    record_id: str
    format_name: str
    version: int = 1
    status: RecordStatus = RecordStatus.DRAFT
    format_version_label: str = ""
    ri_subtype_tags: frozenset[RISubtype] = frozenset()
    elements: tuple[ContentElementValue, ...] = ()
    related_records: tuple[RelatedRecord, ...] = ()
    created: datetime = field(default_factory=lambda: utcnow())
    modified: datetime = field(default_factory=lambda: utcnow())

    def values_for(self, element_id: int) -> list[ContentElementValue]:
        return [v for v in self.elements if v.element_id == element_id]

    def element_ids(self) -> frozenset[int]:
        return frozenset(v.element_id for v in self.elements)

    def targets(self, relation: Relation) -> list[str]:
        return [r.record_id for r in self.related_records if r.relation is relation]

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "version": self.version,
            "status": self.status.value,
            "format_name": self.format_name,
            "format_version_label": self.format_version_label,
            "ri_subtype_tags": sorted(t.value for t in self.ri_subtype_tags),
            "elements": [v.to_dict() for v in self.elements],
            "related_records": [r.to_dict() for r in self.related_records],
            "created": format_timestamp(self.created),
            "modified": format_timestamp(self.modified),
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RIRecord:
        _expect_keys(
            data,
            {"record_id", "version", "status", "format_name", "created", "modified"},
            "RIRecord",
        )
        version = data["version"]
        if not isinstance(version, int) or isinstance(version, bool) or version < 1:
            raise SchemaError(f"RIRecord.version must be a positive integer, got {version!r}")
        record_id = data["record_id"]
        if not isinstance(record_id, str):
            raise SchemaError("RIRecord.record_id must be a string")
        elements = data.get("elements", [])
        related = data.get("related_records", [])
        if not isinstance(elements, list) or not isinstance(related, list):
            raise SchemaError("RIRecord.elements and related_records must be lists")
        rels = []
        for item in related:
            if not isinstance(item, Mapping):
                raise SchemaError("related_records entries must be objects")
            _expect_keys(item, {"relation", "record_id"}, "related_records[]")
            rels.append(
                RelatedRecord(_enum(Relation, item["relation"]), str(item["record_id"]))
            )
        return cls(
            record_id=record_id,
            version=version,
            status=_enum(RecordStatus, data["status"]),
            format_name=str(data["format_name"]),
            format_version_label=str(data.get("format_version_label") or ""),
            ri_subtype_tags=frozenset(_enum(RISubtype, t) for t in data.get("ri_subtype_tags", [])),
            elements=tuple(ContentElementValue.from_dict(e) for e in elements),
            related_records=tuple(rels),
            created=parse_timestamp(data["created"]),
            modified=parse_timestamp(data["modified"]),
        )

    @classmethod
    def from_json(cls, raw: str | bytes) -> RIRecord:
        try:
            data = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise SchemaError(f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise SchemaError("record document root must be an object")
        return cls.from_dict(data)


def derive_ri_subtype_tags(elements: Iterable[ContentElementValue]) -> frozenset[RISubtype]:
    tags: set[RISubtype] = set()
    for value in elements:
        tags |= classify_ri_subtype(value)
    return frozenset(tags)


@dataclass(frozen=True)
class SignificantProperty:
    """A characteristic of an information object to be kept across migrations.

    ``applies_to`` holds record ids and package object identifiers; the
    latter use the ``aip:<aip_id>/<path>`` form.
    """

    property_id: str
    name: str
    statement: str
    assessment_hint: str = ""
    applies_to: tuple[str, ...] = ()
    status: RecordStatus = RecordStatus.PUBLISHED

    def to_dict(self) -> dict[str, Any]:
        return {
            "property_id": self.property_id,
            "name": self.name,
            "statement": self.statement,
            "assessment_hint": self.assessment_hint,
            "applies_to": list(self.applies_to),
            "status": self.status.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SignificantProperty:
        _expect_keys(data, {"property_id", "name", "statement"}, "SignificantProperty")
        applies = data.get("applies_to", [])
        if not isinstance(applies, list):
            raise SchemaError("SignificantProperty.applies_to must be a list")
        return cls(
            property_id=str(data["property_id"]),
            name=str(data["name"]),
            statement=str(data["statement"]),
            assessment_hint=str(data.get("assessment_hint") or ""),
            applies_to=tuple(str(a) for a in applies),
            status=_enum(RecordStatus, data.get("status", "published")),
        )


@dataclass(frozen=True)
class ContextEntry:
    entry_id: str
    kind: ContextKind
    body: str | dict[str, Any]
    provenance_note: str | None = None

    @property
    def element_id(self) -> int:
        return CONTEXT_KIND_ELEMENT[self.kind]

    def to_dict(self) -> dict[str, Any]:
        return {
            "entry_id": self.entry_id,
            "kind": self.kind.value,
            "body": self.body,
            "provenance_note": self.provenance_note,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ContextEntry:
        _expect_keys(data, {"entry_id", "kind", "body"}, "ContextEntry")
        body = data["body"]
        if not isinstance(body, (str, dict)):
            raise SchemaError("ContextEntry.body must be text or an external-link object")
        return cls(
            entry_id=str(data["entry_id"]),
            kind=_enum(ContextKind, data["kind"]),
            body=body,
            provenance_note=_opt_str(data, "provenance_note"),
        )


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    element_id: int | None = None
    relation: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "code": self.code,
            "message": self.message,
            "element_id": self.element_id,
            "relation": self.relation,
        }


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        return {"valid": self.valid, "violations": [v.to_dict() for v in self.violations]}


RECORD_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]{0,127}$")
_LANGUAGE_RE = re.compile(r"^[A-Za-z]{2,3}(-[A-Za-z0-9]{1,8})*$")


def _payload_problem(defn: ContentElementDef, payload: Any) -> str | None:
    kind = defn.value_kind
    if kind is ValueKind.TEXT:
        if not isinstance(payload, str) or not payload.strip():
            return "text payload must be a non-empty string"
        return None
    if not isinstance(payload, dict):
        return f"{kind.value} payload must be an object"
    if kind is ValueKind.STRUCTURED_REFERENCE:
        if not _nonempty_str(payload.get("label")):
            return "structured-reference payload needs a non-empty 'label'"
        for key in ("identifiers", "classifications", "record_ids"):
            items = payload.get(key, [])
            if not isinstance(items, list) or not all(isinstance(i, str) for i in items):
                return f"structured-reference '{key}' must be a list of strings"
        return None
    if kind is ValueKind.EXTERNAL_LINK:
        if not _nonempty_str(payload.get("url")):
            return "external-link payload needs a non-empty 'url'"
        return None
    if kind is ValueKind.TOOL_DESCRIPTION:
        if not _nonempty_str(payload.get("tool")):
            return "tool-description payload needs a non-empty 'tool'"
        return None
    # context-entry
    try:
        entry = ContextEntry.from_dict(payload)
    except (SchemaError, ValueError) as exc:
        return f"context-entry payload malformed: {exc}"
    if entry.element_id != defn.id:
        return f"context kind {entry.kind.value!r} belongs to element {entry.element_id}"
    return None


def validate_record(
    record: RIRecord,
    defs: Iterable[ContentElementDef] | None = None,
    existing_ids: Iterable[str] = (),
) -> ValidationReport:
    """Check ``record`` against the element schema.

    Structural checks (payload kinds, cardinality, identifiers) apply at
    every status. Publication checks (element 1 present, related records
    resolvable, tailorings documented) only apply when the record is
    published. The record's own id always counts as existing.
    """
    by_id = {d.id: d for d in (defs if defs is not None else _DEFS)}
    out: list[Violation] = []

    if not RECORD_ID_RE.match(record.record_id or ""):
        out.append(Violation("record-id", f"record_id {record.record_id!r} is not a safe identifier"))

    counts: dict[int, int] = {}
    for value in record.elements:
        eid = value.element_id
        defn = by_id.get(eid)
        if defn is None:
            out.append(Violation("unknown-element", f"element id {eid!r} is not defined", element_id=eid))
            continue
        counts[eid] = counts.get(eid, 0) + 1
        problem = _payload_problem(defn, value.payload)
        if problem:
            out.append(Violation("payload-kind", problem, element_id=eid))
        if value.language is not None and not _LANGUAGE_RE.match(value.language):
            out.append(Violation("language", f"malformed language tag {value.language!r}", element_id=eid))
    for eid, n in sorted(counts.items()):
        if n > 1 and not by_id[eid].repeatable:
            out.append(Violation("cardinality", f"element {eid} allows one value, found {n}", element_id=eid))

    if record.status is RecordStatus.PUBLISHED:
        for defn in sorted(by_id.values(), key=lambda d: d.id):
            if defn.required_for_publication and defn.id not in counts:
                out.append(
                    Violation("missing-required", f"published record lacks element {defn.id} ({defn.name})", element_id=defn.id)
                )
        known = set(existing_ids)
        known.add(record.record_id)
        for rel in record.related_records:
            if rel.record_id not in known:
                out.append(
                    Violation(
                        "dangling-reference",
                        f"{rel.relation.value} target {rel.record_id!r} does not exist",
                        relation=rel.relation.value,
                    )
                )
        if record.targets(Relation.TAILORING_OF) and 14 not in counts:
            out.append(
                Violation(
                    "tailoring-undocumented",
                    "tailoring-of relation requires element 14 describing the tailoring",
                    element_id=14,
                    relation=Relation.TAILORING_OF.value,
                )
            )
    return ValidationReport(tuple(out))


def validate_property(prop: SignificantProperty) -> ValidationReport:
    out: list[Violation] = []
    if not RECORD_ID_RE.match(prop.property_id or ""):
        out.append(Violation("property-id", f"property_id {prop.property_id!r} is not a safe identifier"))
    if not prop.statement.strip():
        out.append(Violation("statement", "significant property statement is empty"))
    if prop.status is RecordStatus.PUBLISHED and not prop.applies_to:
        out.append(Violation("applies-to", "published significant property applies to nothing"))
    return ValidationReport(tuple(out))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def utcnow() -> datetime:
    return datetime.now(UTC)


def format_timestamp(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=UTC)
    return ts.astimezone(UTC).isoformat().replace("+00:00", "Z")


def parse_timestamp(raw: Any) -> datetime:
    if not isinstance(raw, str):
        raise SchemaError(f"timestamp must be an RFC 3339 string, got {raw!r}")
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        raise SchemaError(f"malformed timestamp {raw!r}") from None
    if ts.tzinfo is None:
        raise SchemaError(f"timestamp {raw!r} lacks a UTC offset")
    return ts.astimezone(UTC)


def canonical_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _nonempty_str(value: Any) -> bool:
    return isinstance(value, str) and bool(value.strip())


def _opt_str(data: Mapping[str, Any], key: str) -> str | None:
    value = data.get(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise SchemaError(f"{key} must be a string or null")
    return value


def _expect_keys(data: Mapping[str, Any], keys: set[str], where: str) -> None:
    if not isinstance(data, Mapping):
        raise SchemaError(f"{where} must be an object")
    missing = sorted(keys - set(data))
    if missing:
        raise SchemaError(f"{where} is missing {', '.join(missing)}")


def _enum(cls: type[Enum], raw: Any) -> Any:
    try:
        return cls(raw)
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise SchemaError(f"{raw!r} is not one of: {allowed}") from None
