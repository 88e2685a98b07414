"""Factories and hypothesis strategies shared by the test modules."""

from __future__ import annotations

import string
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from hypothesis import strategies as st

from bimcore.model import (
    ContentElementValue,
    ContextKind,
    RecordStatus,
    RelatedRecord,
    Relation,
    RIRecord,
    SignificantProperty,
    ValueKind,
    builtin_element_defs,
)

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "corpus"


def value(eid: int, payload: Any, **kw: Any) -> ContentElementValue:
    return ContentElementValue(eid, payload, **kw)


def make_record(
    record_id: str,
    format_name: str = "Plain text",
    *,
    label: str = "",
    status: RecordStatus = RecordStatus.PUBLISHED,
    elements: tuple[ContentElementValue, ...] = (),
    requires: tuple[str, ...] = (),
    related: tuple[RelatedRecord, ...] = (),
) -> RIRecord:
    elems = elements or (value(1, {"label": format_name}),)
    rels = tuple(RelatedRecord(Relation.REQUIRES_RI, r) for r in requires) + related
    return RIRecord(
        record_id=record_id,
        format_name=format_name,
        status=status,
        format_version_label=label,
        elements=elems,
        related_records=rels,
    )


def ifc_record(requires: tuple[str, ...] = ()) -> RIRecord:
    """The IFC4 record of the fire-station archive scenario."""
    return make_record(
        "ifc",
        "IFC",
        label="IFC4",
        requires=requires,
        elements=(
            value(1, {"label": "Industry Foundation Classes", "identifiers": ["step-spf", "ISO 16739-1"],
                      "classifications": ["building information model"]}),
            value(2, {"label": "IFC4"}),
            value(3, {"url": "https://standards.buildingsmart.org/IFC/RELEASE/IFC4/"}),
            value(7, "EXPRESS schema of building elements, spatial structure and relationships."),
            value(8, "Encoded as a STEP physical file (clear text)."),
            value(11, "Read with any IFC4-capable viewer; geometry may be tessellated."),
            value(16, {"tool": "IfcOpenShell", "description": "open-source parser and geometry kernel"}),
            value(17, {"tool": "IFC validation service"}),
            value(18, {"tool": "BIM viewer", "description": "displays spatial structure and fire compartments"}),
            value(19, {"entry_id": "origin-ifc", "kind": "origin-context",
                       "body": "Developed for open exchange of building models between design tools."}),
            value(20, {"entry_id": "station-notes", "kind": "building-specific",
                       "body": "Fire station, modelled for the building permit."}),
        ),
    )


def tiff_record() -> RIRecord:
    return make_record(
        "tiff",
        "TIFF",
        label="6.0",
        elements=(value(1, {"label": "Tagged Image File Format", "identifiers": ["tiff-le", "tiff-be"]}),
                  value(7, "Raster image with tagged header.")),
    )


def fire_property() -> SignificantProperty:
    return SignificantProperty(
        property_id="fire-compartments",
        name="Fire compartment boundaries",
        statement="Fire compartment walls keep their fire-resistance class and geometry after migration.",
        assessment_hint="compare IfcWall fire rating properties before and after",
        applies_to=("ifc",),
    )


# -- hypothesis strategies ---------------------------------------------------

_ID_FIRST = string.ascii_letters + string.digits
_ID_REST = _ID_FIRST + "._-"

record_ids = st.builds(
    lambda first, rest: first + rest,
    st.sampled_from(_ID_FIRST),
    st.text(alphabet=_ID_REST, max_size=20),
)
texts = st.text(min_size=1, max_size=40).filter(lambda s: s.strip() != "")
words = st.text(alphabet=string.ascii_letters, min_size=1, max_size=10)

_CONTEXT_KINDS = {19: ContextKind.ORIGIN_CONTEXT, 20: ContextKind.BUILDING_SPECIFIC,
                  21: ContextKind.EXTERNAL_USE_CASE_REPO, 22: ContextKind.ACCEPTANCE_PROFILE,
                  23: ContextKind.BACKGROUND}
_KINDS = {d.id: d.value_kind for d in builtin_element_defs()}
_REPEATABLE = {d.id: d.repeatable for d in builtin_element_defs()}


def payloads(eid: int) -> st.SearchStrategy[Any]:
    kind = _KINDS[eid]
    if kind is ValueKind.TEXT:
        return texts
    if kind is ValueKind.STRUCTURED_REFERENCE:
        return st.fixed_dictionaries(
            {"label": texts}, optional={"identifiers": st.lists(words, max_size=3)}
        )
    if kind is ValueKind.EXTERNAL_LINK:
        return st.builds(lambda w: {"url": f"https://example.org/{w}"}, words)
    if kind is ValueKind.TOOL_DESCRIPTION:
        return st.fixed_dictionaries({"tool": texts}, optional={"description": texts})
    return st.builds(
        lambda eid_, body: {"entry_id": f"ctx-{eid_}", "kind": _CONTEXT_KINDS[eid_].value, "body": body,
                            "provenance_note": None},
        st.just(eid),
        texts,
    )


@st.composite
def element_values(draw: st.DrawFn, eid: int) -> list[ContentElementValue]:
    n = draw(st.integers(1, 2 if _REPEATABLE[eid] else 1))
    lang = st.one_of(st.none(), st.sampled_from(["en", "de", "de-AT"]))
    return [ContentElementValue(eid, draw(payloads(eid)), language=draw(lang)) for _ in range(n)]


timestamps = st.datetimes(
    min_value=datetime(2000, 1, 1), max_value=datetime(2099, 1, 1), timezones=st.just(timezone.utc)
).map(lambda d: d.replace(microsecond=0))


@st.composite
def valid_records(draw: st.DrawFn, record_id: st.SearchStrategy[str] | None = None) -> RIRecord:
    """Published records that pass validation against an empty store."""
    rid = draw(record_ids if record_id is None else record_id)
    others = draw(st.sets(st.integers(2, 23), max_size=8))
    elements: list[ContentElementValue] = draw(element_values(1))
    for eid in sorted(others):
        elements.extend(draw(element_values(eid)))
    created = draw(timestamps)
    return RIRecord(
        record_id=rid,
        format_name=draw(texts),
        version=draw(st.integers(1, 5)),
        status=RecordStatus.PUBLISHED,
        format_version_label=draw(st.one_of(st.just(""), words)),
        elements=tuple(elements),
        related_records=tuple(RelatedRecord(Relation.REQUIRES_RI, rid) for _ in range(draw(st.integers(0, 1)))),
        created=created,
        modified=created,
    )
