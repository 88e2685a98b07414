"""Format recognition and STEP verification."""

from bimcore.ident.signatures import (
    IDENTIFIED,
    TENTATIVE,
    UNKNOWN,
    ContainerRule,
    Evidence,
    FormatSignature,
    IdentificationResult,
    Match,
    builtin_signatures,
    check_signature_set,
    dump_signatures,
    identify_bytes,
    identify_path,
    load_signatures,
    merge_signatures,
)
from bimcore.ident.step import (
    FileDescription,
    FileName,
    StepHeader,
    StepParseError,
    parse_step_header,
    verify_step,
    write_step_header,
)
from bimcore.ident.stub import suggest_record_stub

__all__ = [
    "IDENTIFIED",
    "TENTATIVE",
    "UNKNOWN",
    "ContainerRule",
    "Evidence",
    "FileDescription",
    "FileName",
    "FormatSignature",
    "IdentificationResult",
    "Match",
    "StepHeader",
    "StepParseError",
    "builtin_signatures",
    "check_signature_set",
    "dump_signatures",
    "identify_bytes",
    "identify_path",
    "load_signatures",
    "merge_signatures",
    "parse_step_header",
    "suggest_record_stub",
    "verify_step",
    "write_step_header",
]
