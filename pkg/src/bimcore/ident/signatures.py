"""Byte-signature format identification.

Signatures match a magic byte sequence at a fixed offset from the start
(or end) of a file, optionally under a mask. A signature may carry a
container rule that looks one level inside a ZIP archive or sniffs the
root element of an XML document. Only the first and last
:data:`READ_WINDOW` bytes of a file are inspected, plus the ZIP central
directory when a container rule needs it.
"""

from __future__ import annotations

import io
import json
import os
import zipfile
import zlib
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path, PurePath
from typing import Any
from xml.etree import ElementTree

READ_WINDOW = 64 * 1024
MAX_ZIP_ENTRIES = 256

IDENTIFIED = "identified"
TENTATIVE = "tentative"
UNKNOWN = "unknown"

_STRONG = ("magic", "container")
_BASIS_RANK = {"container": 0, "magic": 0, "heuristic": 1, "extension": 2}


@dataclass(frozen=True)
class ContainerRule:
    kind: str  # "zip": inner is a signature_id; "xml": inner is "|"-separated root element names
    inner: str

    def __post_init__(self) -> None:
        if self.kind not in ("zip", "xml"):
            raise ValueError(f"unsupported container kind {self.kind!r}")
        if not self.inner:
            raise ValueError("container rule needs an inner matcher")


@dataclass(frozen=True)
class FormatSignature:
    signature_id: str
    format_name: str
    magic: bytes
    offset: int = 0
    anchor: str = "bof"
    mask: bytes | None = None
    extension_hints: tuple[str, ...] = ()
    container_rule: ContainerRule | None = None
    priority: int = 0
    target_record_id: str | None = None
    tentative_only: bool = False

    def __post_init__(self) -> None:
        if not self.magic:
            raise ValueError(f"{self.signature_id}: magic must not be empty")
        if self.mask is not None and len(self.mask) != len(self.magic):
            raise ValueError(f"{self.signature_id}: mask length differs from magic length")
        if self.anchor not in ("bof", "eof"):
            raise ValueError(f"{self.signature_id}: anchor must be 'bof' or 'eof'")
        if self.offset < 0:
            raise ValueError(f"{self.signature_id}: offset must be >= 0")
        for ext in self.extension_hints:
            if ext != ext.lower() or ext.startswith("."):
                raise ValueError(f"{self.signature_id}: extension hints are lowercase without a dot")

    def to_dict(self) -> dict[str, Any]:
        return {
            "signature_id": self.signature_id,
            "format_name": self.format_name,
            "magic": self.magic.hex().upper(),
            "offset": self.offset,
            "anchor": self.anchor,
            "mask": None if self.mask is None else self.mask.hex().upper(),
            "extension_hints": list(self.extension_hints),
            "container_rule": None
            if self.container_rule is None
            else {"kind": self.container_rule.kind, "inner": self.container_rule.inner},
            "priority": self.priority,
            "target_record_id": self.target_record_id,
            "tentative_only": self.tentative_only,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FormatSignature:
        rule = data.get("container_rule")
        mask = data.get("mask")
        return cls(
            signature_id=str(data["signature_id"]),
            format_name=str(data.get("format_name") or data["signature_id"]),
            magic=_hex(data["magic"]),
            offset=int(data.get("offset", 0)),
            anchor=str(data.get("anchor", "bof")),
            mask=None if mask is None else _hex(mask),
            extension_hints=tuple(str(e).lower().lstrip(".") for e in data.get("extension_hints", [])),
            container_rule=None if rule is None else ContainerRule(str(rule["kind"]), str(rule["inner"])),
            priority=int(data.get("priority", 0)),
            target_record_id=data.get("target_record_id"),
            tentative_only=bool(data.get("tentative_only", False)),
        )

    def matches_at(self, window: bytes | None) -> bool:
        if window is None or len(window) != len(self.magic):
            return False
        if self.mask is None:
            return window == self.magic
        return all((w & m) == (g & m) for w, g, m in zip(window, self.magic, self.mask))


def _hex(raw: Any) -> bytes:
    if not isinstance(raw, str):
        raise ValueError(f"expected a hex string, got {raw!r}")
    return bytes.fromhex(raw)


def builtin_signatures() -> list[FormatSignature]:
    """Signatures shipped with the registry, highest priority first."""
    return [
        FormatSignature(
            "ifczip", "ifcZIP", b"PK\x03\x04",
            extension_hints=("ifczip",),
            container_rule=ContainerRule("zip", "step-spf"),
            priority=90,
        ),
        FormatSignature(
            "ifcxml", "ifcXML", b"<?xml",
            extension_hints=("ifcxml",),
            container_rule=ContainerRule("xml", "ifcXML|iso_10303_28"),
            priority=85,
        ),
        FormatSignature(
            "step-spf", "STEP-SPF", b"ISO-10303-21;",
            extension_hints=("ifc", "stp", "step", "p21"),
            priority=80,
        ),
        FormatSignature("pdf", "PDF", b"%PDF-", extension_hints=("pdf",), priority=70),
        FormatSignature("tiff-be", "TIFF", bytes.fromhex("4D4D002A"), extension_hints=("tif", "tiff"), priority=61),
        FormatSignature("tiff-le", "TIFF", bytes.fromhex("49492A00"), extension_hints=("tif", "tiff"), priority=60),
        FormatSignature("zip", "ZIP", b"PK\x03\x04", extension_hints=("zip",), priority=20),
        FormatSignature("xml", "XML", b"<?xml", extension_hints=("xml",), priority=15),
        FormatSignature(
            "hpgl", "HP-GL", b"IN;",
            extension_hints=("plt", "hpgl", "hgl"),
            priority=5,
            tentative_only=True,
        ),
    ]


def check_signature_set(signatures: Sequence[FormatSignature]) -> None:
    """Raise ValueError on duplicate ids or ambiguous priorities."""
    seen: set[str] = set()
    for sig in signatures:
        if sig.signature_id in seen:
            raise ValueError(f"duplicate signature_id {sig.signature_id!r}")
        seen.add(sig.signature_id)
    for i, a in enumerate(signatures):
        for b in signatures[i + 1 :]:
            if a.priority != b.priority or (a.anchor, a.offset) != (b.anchor, b.offset):
                continue
            shorter, longer = sorted((a.magic, b.magic), key=len)
            if longer.startswith(shorter):
                raise ValueError(
                    f"signatures {a.signature_id!r} and {b.signature_id!r} overlap with equal priority {a.priority}"
                )


def load_signatures(path: str | os.PathLike[str]) -> list[FormatSignature]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError("signature file must hold a JSON list")
    sigs = [FormatSignature.from_dict(item) for item in data]
    check_signature_set(sigs)
    return sigs


def dump_signatures(signatures: Iterable[FormatSignature]) -> str:
    return json.dumps([s.to_dict() for s in signatures], indent=2) + "\n"


def merge_signatures(
    base: Sequence[FormatSignature], extra: Sequence[FormatSignature]
) -> list[FormatSignature]:
    """Overlay ``extra`` on ``base``; an extra signature replaces a base one with the same id."""
    replaced = {s.signature_id for s in extra}
    merged = [s for s in base if s.signature_id not in replaced] + list(extra)
    check_signature_set(merged)
    return merged


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Evidence:
    basis: str  # magic | container | heuristic | extension
    byte_ranges: tuple[tuple[int, int], ...] = ()
    extension_agrees: bool = False
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "basis": self.basis,
            "byte_ranges": [list(r) for r in self.byte_ranges],
            "extension_agrees": self.extension_agrees,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class Match:
    signature_id: str
    format_name: str
    priority: int
    evidence: Evidence
    target_record_id: str | None = None

    @property
    def strong(self) -> bool:
        return self.evidence.basis in _STRONG

    def to_dict(self) -> dict[str, Any]:
        return {
            "signature_id": self.signature_id,
            "format_name": self.format_name,
            "priority": self.priority,
            "target_record_id": self.target_record_id,
            "evidence": self.evidence.to_dict(),
        }


@dataclass(frozen=True)
class IdentificationResult:
    verdict: str
    matches: tuple[Match, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def top(self) -> Match | None:
        strong = [m for m in self.matches if m.strong]
        return (strong or list(self.matches) or [None])[0]

    @property
    def format_name(self) -> str | None:
        top = self.top
        return top.format_name if top else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict,
            "format": self.format_name,
            "matches": [m.to_dict() for m in self.matches],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> IdentificationResult:
        matches = []
        for m in data.get("matches", []):
            ev = m["evidence"]
            matches.append(
                Match(
                    signature_id=m["signature_id"],
                    format_name=m["format_name"],
                    priority=m["priority"],
                    target_record_id=m.get("target_record_id"),
                    evidence=Evidence(
                        basis=ev["basis"],
                        byte_ranges=tuple(tuple(r) for r in ev.get("byte_ranges", [])),
                        extension_agrees=ev.get("extension_agrees", False),
                        detail=ev.get("detail", ""),
                    ),
                )
            )
        return cls(data["verdict"], tuple(matches), tuple(data.get("warnings", [])))


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------


@dataclass
class _Window:
    head: bytes
    tail: bytes
    size: int
    open_zip: Callable[[], zipfile.ZipFile]
    warnings: list[str] = field(default_factory=list)

    def slice(self, sig: FormatSignature) -> tuple[int, bytes | None]:
        length = len(sig.magic)
        start = sig.offset if sig.anchor == "bof" else self.size - sig.offset - length
        if start < 0 or start + length > self.size:
            return start, None
        if start + length <= len(self.head):
            return start, self.head[start : start + length]
        tail_start = self.size - len(self.tail)
        if start >= tail_start:
            return start, self.tail[start - tail_start : start - tail_start + length]
        return start, None


def _extension(name_hint: str | None) -> str | None:
    if not name_hint:
        return None
    suffix = PurePath(name_hint).suffix
    return suffix[1:].lower() if suffix else None


def _zip_rule(window: _Window, rule: ContainerRule, by_id: dict[str, FormatSignature]) -> str | None:
    inner = by_id.get(rule.inner)
    if inner is None:
        window.warnings.append(f"container rule refers to unknown signature {rule.inner!r}")
        return None
    need = inner.offset + len(inner.magic)
    try:
        with window.open_zip() as zf:
            for info in zf.infolist()[:MAX_ZIP_ENTRIES]:
                if info.is_dir():
                    continue
                with zf.open(info) as fh:
                    head = fh.read(need)
                if inner.anchor == "bof" and inner.matches_at(head[inner.offset : need]):
                    return info.filename
    except (zipfile.BadZipFile, zipfile.LargeZipFile, zlib.error, EOFError, OSError,
            RuntimeError, NotImplementedError, ValueError) as exc:
        window.warnings.append(f"unreadable ZIP container, rule skipped: {exc}")
        raise _RuleSkipped from None
    return None


def _xml_root(head: bytes) -> tuple[str, str] | None:
    parser = ElementTree.XMLPullParser(events=("start",))
    parser.feed(head)
    for _event, elem in parser.read_events():
        tag = elem.tag
        if tag.startswith("{"):
            ns, _, local = tag[1:].partition("}")
            return ns, local
        return "", tag
    return None


def _xml_rule(window: _Window, rule: ContainerRule) -> str | None:
    try:
        root = _xml_root(window.head)
    except ElementTree.ParseError as exc:
        window.warnings.append(f"unreadable XML prolog, rule skipped: {exc}")
        raise _RuleSkipped from None
    if root is None:
        window.warnings.append("no XML root element within read window, rule skipped")
        raise _RuleSkipped
    ns, local = root
    names = rule.inner.split("|")
    if local in names or any(n.lower() in ns.lower() for n in names):
        return f"{{{ns}}}{local}" if ns else local
    return None


class _RuleSkipped(Exception):
    pass


def _identify(window: _Window, name_hint: str | None, signatures: Sequence[FormatSignature]) -> IdentificationResult:
    ext = _extension(name_hint)
    by_id = {s.signature_id: s for s in signatures}
    rule_cache: dict[tuple[str, str], str | None | _RuleSkipped] = {}
    matches: list[Match] = []

    for sig in signatures:
        agrees = ext is not None and ext in sig.extension_hints
        start, got = window.slice(sig)
        magic_ok = sig.matches_at(got)
        ranges = ((start, start + len(sig.magic)),) if magic_ok else ()
        evidence: Evidence | None = None
        if magic_ok and sig.container_rule is not None:
            rule = sig.container_rule
            key = (rule.kind, rule.inner)
            if key not in rule_cache:
                try:
                    rule_cache[key] = (
                        _zip_rule(window, rule, by_id) if rule.kind == "zip" else _xml_rule(window, rule)
                    )
                except _RuleSkipped as skipped:
                    rule_cache[key] = skipped
            found = rule_cache[key]
            if isinstance(found, str):
                evidence = Evidence("container", ranges, agrees, f"{rule.kind} inner match: {found}")
        elif magic_ok and sig.tentative_only:
            if agrees:
                evidence = Evidence("heuristic", ranges, agrees, "command prefix with matching extension")
        elif magic_ok:
            evidence = Evidence("magic", ranges, agrees)
        if evidence is None and agrees:
            evidence = Evidence("extension", (), True)
        if evidence is not None:
            matches.append(Match(sig.signature_id, sig.format_name, sig.priority, evidence, sig.target_record_id))

    # stronger evidence first, then priority
    matches.sort(key=lambda m: (_BASIS_RANK[m.evidence.basis], -m.priority, m.signature_id))
    if any(m.strong for m in matches):
        verdict = IDENTIFIED
    elif matches:
        verdict = TENTATIVE
    else:
        verdict = UNKNOWN
    return IdentificationResult(verdict, tuple(matches), tuple(dict.fromkeys(window.warnings)))


def identify_bytes(
    data: bytes,
    name_hint: str | None = None,
    signatures: Sequence[FormatSignature] | None = None,
) -> IdentificationResult:
    """Identify the format of an in-memory byte sequence."""
    sigs = builtin_signatures() if signatures is None else signatures
    window = _Window(
        head=data[:READ_WINDOW],
        tail=data[-READ_WINDOW:] if data else b"",
        size=len(data),
        open_zip=lambda: zipfile.ZipFile(io.BytesIO(data)),
    )
    return _identify(window, name_hint, sigs)


def identify_path(
    path: str | os.PathLike[str],
    signatures: Sequence[FormatSignature] | None = None,
    name_hint: str | None = None,
) -> IdentificationResult:
    """Identify a file on disk, reading only its head and tail windows."""
    p = Path(path)
    sigs = builtin_signatures() if signatures is None else signatures
    with p.open("rb") as fh:
        size = os.fstat(fh.fileno()).st_size
        head = fh.read(READ_WINDOW)
        if size > READ_WINDOW:
            fh.seek(size - READ_WINDOW)
            tail = fh.read(READ_WINDOW)
        else:
            tail = head
    window = _Window(head=head, tail=tail, size=size, open_zip=lambda: zipfile.ZipFile(p))
    return _identify(window, name_hint or p.name, sigs)
