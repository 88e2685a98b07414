"""Draft registry records seeded from identification evidence."""

from __future__ import annotations

import uuid

from bimcore.ident.signatures import UNKNOWN, IdentificationResult
from bimcore.ident.step import StepHeader
from bimcore.model import (
    ContentElementValue,
    ContractViolation,
    RecordStatus,
    RIRecord,
    derive_ri_subtype_tags,
)

TOOL_NAME = "bimcore.ident"


def suggest_record_stub(
    result: IdentificationResult,
    header: StepHeader | None = None,
    record_id: str | None = None,
) -> RIRecord:
    """Build a draft record naming the matched format.

    Element 1 comes from the top match, element 2 from the first
    FILE_SCHEMA entry when a STEP header is given, and element 16 records
    the identification evidence.
    """
    if result.verdict == UNKNOWN or result.top is None:
        raise ContractViolation("cannot suggest a record for an unidentified file")
    top = result.top
    elements = [
        ContentElementValue(1, {"label": top.format_name, "identifiers": [top.signature_id]}),
    ]
    version_label = ""
    if header is not None and header.file_schema:
        version_label = header.file_schema[0]
        elements.append(ContentElementValue(2, {"label": version_label}))
    elements.append(
        ContentElementValue(
            16,
            {
                "tool": TOOL_NAME,
                "description": f"byte-signature match {top.signature_id!r} ({result.verdict})",
                "evidence": top.evidence.to_dict(),
            },
        )
    )
    return RIRecord(
        record_id=record_id or f"stub-{uuid.uuid4().hex[:12]}",
        format_name=top.format_name,
        format_version_label=version_label,
        status=RecordStatus.DRAFT,
        elements=tuple(elements),
        ri_subtype_tags=derive_ri_subtype_tags(elements),
    )
