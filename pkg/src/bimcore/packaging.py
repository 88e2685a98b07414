"""Submission, archival and dissemination packages.

An AIP is a directory::

    <aip>/objects/...            payload, original relative paths
    <aip>/metadata/aip.json      content information and preservation description
    <aip>/manifest-sha256.txt    "<digest>  <path>" per file, sorted, LF endings

The manifest covers every file except itself, so the package can be
checked with ``sha256sum -c`` and no other software.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import shutil
import uuid
from collections import deque
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Any

from bimcore import __version__
from bimcore.ident.signatures import IDENTIFIED, FormatSignature, IdentificationResult, identify_path
from bimcore.ident.step import StepParseError, parse_step_header
from bimcore.model import (
    ContextEntry,
    ContractViolation,
    NotFound,
    RIRecord,
    Relation,
    SchemaError,
    builtin_element_defs,
    canonical_json,
    format_timestamp,
    utcnow,
)
from bimcore.report import FAIL, PASS, SKIP, Check, VerificationReport
from bimcore.store import PACKAGE_OBJECT_PREFIX, RegistryStore, payload_text

MANIFEST_NAME = "manifest-sha256.txt"
AIP_METADATA = "metadata/aip.json"
DIP_METADATA = "metadata/dip.json"
AGENT = f"bimcore {__version__}"
HEADER_READ_LIMIT = 256 * 1024
DIP_RENDERED_ELEMENTS = (1, 2, 7, 11, 18, 19, 20)

_MANIFEST_LINE_RE = re.compile(r"^([0-9a-f]{64})  (\S.*)$")


class IngestError(RuntimeError):
    def __init__(self, message: str, paths: Sequence[str] = ()) -> None:
        super().__init__(message + (": " + ", ".join(paths) if paths else ""))
        self.paths = list(paths)


class EmptyDipError(ContractViolation):
    pass


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1024 * 1024), b""):
            digest.update(chunk)
    return digest.hexdigest()


def object_identifier(aip_id: str, path: str) -> str:
    return f"{PACKAGE_OBJECT_PREFIX}{aip_id}/{path}"


# ---------------------------------------------------------------------------
# RI closure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RIClosure:
    roots: tuple[str, ...]
    nodes: frozenset[str]
    edges: tuple[tuple[str, str, str], ...]
    baseline_set: frozenset[str]
    unresolved: frozenset[str]

    def to_dict(self) -> dict[str, Any]:
        return {
            "roots": list(self.roots),
            "nodes": sorted(self.nodes),
            "edges": [list(e) for e in self.edges],
            "baseline_set": sorted(self.baseline_set & self.nodes),
            "unresolved": sorted(self.unresolved),
        }


def resolve_closure(
    roots: Iterable[str],
    requires: Callable[[str], Sequence[str] | None],
    baseline_set: Iterable[str],
) -> RIClosure:
    """Breadth-first ``requires-ri`` traversal with conjunctive resolution.

    ``requires`` returns a node's requirement targets, or None when the node
    does not exist. Traversal does not expand baseline nodes. A node is
    resolved when it is a baseline node, or when it has at least one
    requirement and every requirement is resolved; everything else in the
    closure is unresolved. Cycles that never reach the baseline therefore
    stay unresolved.
    """
    baseline = frozenset(baseline_set)
    root_list = tuple(dict.fromkeys(roots))
    nodes: set[str] = set(root_list)
    queue = deque(root_list)
    edges: list[tuple[str, str, str]] = []
    targets_of: dict[str, set[str]] = {}
    while queue:
        node = queue.popleft()
        if node in baseline:
            continue
        targets = requires(node)
        targets_of[node] = set(targets or ())
        for target in targets or ():
            edges.append((node, Relation.REQUIRES_RI.value, target))
            if target not in nodes:
                nodes.add(target)
                queue.append(target)

    resolved = {n for n in nodes if n in baseline}
    waiting = {n: len(t) for n, t in targets_of.items() if t}
    sources: dict[str, list[str]] = {}
    for node, targets in targets_of.items():
        for target in targets:
            sources.setdefault(target, []).append(node)
    ready = deque(resolved)
    while ready:
        done = ready.popleft()
        for src in sources.get(done, ()):
            waiting[src] -= 1
            if waiting[src] == 0:
                resolved.add(src)
                ready.append(src)
    return RIClosure(
        roots=root_list,
        nodes=frozenset(nodes),
        edges=tuple(edges),
        baseline_set=baseline,
        unresolved=frozenset(nodes - resolved),
    )


def compute_ri_closure(
    roots: Iterable[str],
    store: RegistryStore,
    baseline_set: Iterable[str] | None = None,
) -> RIClosure:
    """Resolve the RI network of ``roots`` from the registry's ``requires-ri`` relations."""
    root_list = list(roots)
    for rid in root_list:
        if rid not in store:
            raise NotFound(f"unknown root record {rid!r}")

    def requires(rid: str) -> list[str] | None:
        if rid not in store:
            return None
        return store.get_record(rid).targets(Relation.REQUIRES_RI)

    baseline = store.baseline_set if baseline_set is None else baseline_set
    return resolve_closure(root_list, requires, baseline)


# ---------------------------------------------------------------------------
# package types
# ---------------------------------------------------------------------------


@dataclass
class SubmissionPackage:
    sip_id: str
    payload: Path
    producer_metadata: dict[str, Any] = field(default_factory=dict)
    declared_context: list[ContextEntry | str] = field(default_factory=list)

    def payload_files(self) -> list[str]:
        files = []
        for current, dirs, names in os.walk(self.payload):
            dirs.sort()
            for name in sorted(names):
                full = Path(current) / name
                rel = full.relative_to(self.payload).as_posix()
                if "\n" in rel or "\r" in rel:
                    raise ContractViolation(f"payload path contains a line break: {rel!r}")
                files.append(rel)
        return sorted(files)


def load_sip(path: str | os.PathLike[str]) -> SubmissionPackage:
    """Read a SIP directory.

    With a ``payload/`` subdirectory, that holds the data objects and an
    optional ``sip.json`` beside it carries ``sip_id``, ``producer_metadata``
    and ``declared_context``. Otherwise every file in the directory is payload.
    """
    root = Path(path)
    if not root.is_dir():
        raise NotFound(f"no SIP directory at {root}")
    meta: dict[str, Any] = {}
    payload = root
    if (root / "payload").is_dir():
        payload = root / "payload"
        if (root / "sip.json").is_file():
            meta = json.loads((root / "sip.json").read_text(encoding="utf-8"))
    context: list[ContextEntry | str] = []
    for item in meta.get("declared_context", []):
        context.append(item if isinstance(item, str) else ContextEntry.from_dict(item))
    return SubmissionPackage(
        sip_id=str(meta.get("sip_id") or root.name),
        payload=payload,
        producer_metadata=dict(meta.get("producer_metadata", {})),
        declared_context=context,
    )


@dataclass(frozen=True)
class RIRef:
    record_id: str
    version: int
    format_name: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"record_id": self.record_id, "version": self.version, "format_name": self.format_name}


@dataclass
class DataObject:
    path: str
    object_id: str
    digest: str
    size: int
    identification: IdentificationResult
    file_schema: tuple[str, ...] = ()
    ri_links: tuple[RIRef, ...] = ()
    ri_closure: dict[str, Any] = field(default_factory=dict)
    unresolved_ri: bool = False
    notes: tuple[str, ...] = ()

    def format_names(self) -> set[str]:
        names = {m.format_name for m in self.identification.matches if m.strong}
        names.update(self.file_schema)
        names.update(ref.format_name for ref in self.ri_links if ref.format_name)
        return names

    def to_dict(self) -> dict[str, Any]:
        return {
            "path": self.path,
            "object_id": self.object_id,
            "digest": self.digest,
            "size": self.size,
            "identification": self.identification.to_dict(),
            "file_schema": list(self.file_schema),
            "ri_links": [r.to_dict() for r in self.ri_links],
            "ri_closure": self.ri_closure,
            "unresolved_ri": self.unresolved_ri,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DataObject:
        return cls(
            path=data["path"],
            object_id=data["object_id"],
            digest=data["digest"],
            size=data["size"],
            identification=IdentificationResult.from_dict(data["identification"]),
            file_schema=tuple(data.get("file_schema", [])),
            ri_links=tuple(RIRef(**r) for r in data.get("ri_links", [])),
            ri_closure=data.get("ri_closure", {}),
            unresolved_ri=bool(data.get("unresolved_ri", False)),
            notes=tuple(data.get("notes", [])),
        )


@dataclass
class PreservationDescription:
    provenance: list[dict[str, Any]] = field(default_factory=list)
    context: list[dict[str, Any]] = field(default_factory=list)
    reference: dict[str, Any] = field(default_factory=dict)
    fixity: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "provenance": self.provenance,
            "context": self.context,
            "reference": self.reference,
            "fixity": self.fixity,
        }


@dataclass
class ArchivalPackage:
    aip_id: str
    path: Path
    sip_id: str
    content_information: list[DataObject]
    pdi: PreservationDescription
    packaging_manifest: dict[str, str]
    significant_property_links: list[str] = field(default_factory=list)
    producer_metadata: dict[str, Any] = field(default_factory=dict)

    def object(self, path: str) -> DataObject:
        for obj in self.content_information:
            if obj.path == path:
                return obj
        raise NotFound(f"AIP {self.aip_id} has no object {path!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "aip_id": self.aip_id,
            "sip_id": self.sip_id,
            "producer_metadata": self.producer_metadata,
            "content_information": [o.to_dict() for o in self.content_information],
            "pdi": self.pdi.to_dict(),
            "packaging_manifest": [
                {"path": p, "sha256": d} for p, d in sorted(self.packaging_manifest.items())
            ],
            "significant_property_links": list(self.significant_property_links),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], path: Path) -> ArchivalPackage:
        try:
            pdi = data["pdi"]
            return cls(
                aip_id=data["aip_id"],
                path=path,
                sip_id=data.get("sip_id", ""),
                content_information=[DataObject.from_dict(o) for o in data["content_information"]],
                pdi=PreservationDescription(
                    provenance=list(pdi.get("provenance", [])),
                    context=list(pdi.get("context", [])),
                    reference=dict(pdi.get("reference", {})),
                    fixity=list(pdi.get("fixity", [])),
                ),
                packaging_manifest={e["path"]: e["sha256"] for e in data.get("packaging_manifest", [])},
                significant_property_links=list(data.get("significant_property_links", [])),
                producer_metadata=dict(data.get("producer_metadata", {})),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed aip.json: {exc}") from None


def load_aip(path: str | os.PathLike[str]) -> ArchivalPackage:
    root = Path(path)
    try:
        data = json.loads((root / AIP_METADATA).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise NotFound(f"no AIP at {root}") from None
    except (ValueError, UnicodeDecodeError) as exc:
        raise SchemaError(f"unreadable aip.json: {exc}") from None
    return ArchivalPackage.from_dict(data, root)


def _aip_root(aip: ArchivalPackage | str | os.PathLike[str]) -> Path:
    return aip.path if isinstance(aip, ArchivalPackage) else Path(aip)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def format_manifest(entries: dict[str, str]) -> str:
    return "".join(f"{digest}  {path}\n" for path, digest in sorted(entries.items()))


def parse_manifest(text: str) -> tuple[dict[str, str], list[str]]:
    """Return (entries, problems) for manifest text."""
    entries: dict[str, str] = {}
    problems: list[str] = []
    if "\r" in text:
        problems.append("manifest uses CR line endings")
    if text and not text.endswith("\n"):
        problems.append("manifest does not end with a line feed")
    previous = ""
    for lineno, line in enumerate(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"), 1):
        m = _MANIFEST_LINE_RE.match(line)
        if m is None:
            problems.append(f"line {lineno} malformed")
            continue
        digest, rel = m.groups()
        parts = PurePosixPath(rel).parts
        if rel.startswith("/") or "\\" in rel or any(p in ("", ".", "..") for p in parts):
            problems.append(f"line {lineno} has an unsafe path {rel!r}")
            continue
        if rel in entries:
            problems.append(f"line {lineno} duplicates {rel!r}")
        elif rel < previous:
            problems.append(f"line {lineno} out of order")
        entries[rel] = digest
        previous = rel
    return entries, problems


def _all_files(root: Path) -> set[str]:
    found = set()
    for current, _dirs, names in os.walk(root):
        for name in names:
            found.add((Path(current) / name).relative_to(root).as_posix())
    return found


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.{uuid.uuid4().hex}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _write_metadata(pkg: ArchivalPackage) -> None:
    meta = pkg.path / AIP_METADATA
    _write_atomic(meta, canonical_json(pkg.to_dict()).encode("utf-8"))
    entries = dict(pkg.packaging_manifest)
    entries[AIP_METADATA] = sha256_file(meta)
    _write_atomic(pkg.path / MANIFEST_NAME, format_manifest(entries).encode("utf-8"))


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


@dataclass
class _Scanned:
    rel: str
    digest: str
    size: int
    identification: IdentificationResult
    file_schema: tuple[str, ...]
    notes: tuple[str, ...]


def _scan(path: Path, rel: str, signatures: Sequence[FormatSignature] | None) -> _Scanned:
    digest = sha256_file(path)
    size = path.stat().st_size
    result = identify_path(path, signatures, name_hint=rel)
    schema: tuple[str, ...] = ()
    notes: list[str] = []
    top = result.top
    if result.verdict == IDENTIFIED and top is not None and top.signature_id == "step-spf":
        with path.open("rb") as fh:
            head = fh.read(HEADER_READ_LIMIT)
        try:
            schema = parse_step_header(head).file_schema
        except StepParseError as exc:
            notes.append(f"STEP header not parsed: {exc}")
    return _Scanned(rel, digest, size, result, schema, tuple(notes))


def _published_records(store: RegistryStore) -> list[RIRecord]:
    out = []
    for rid in store.record_ids():
        record = store.latest_published(rid)
        if record is not None:
            out.append(record)
    return out


def _link_records(scanned: _Scanned, published: list[RIRecord], store: RegistryStore) -> list[RIRecord]:
    """Pick registry records describing an identified object.

    Tried in order, first non-empty wins: records whose version label names
    the STEP schema; the matched signature's target record; records whose
    format name (or element 1 identifiers) match the signature.
    """
    result = scanned.identification
    if result.verdict != IDENTIFIED or result.top is None:
        return []
    top = result.top
    if scanned.file_schema:
        wanted = {s.casefold() for s in scanned.file_schema}
        hits = [r for r in published if r.format_version_label.casefold() in wanted]
        if hits:
            return hits
    if top.target_record_id:
        target = store.latest_published(top.target_record_id) if top.target_record_id in store else None
        if target is not None:
            return [target]
    hits = []
    for record in published:
        identifiers: set[str] = set()
        for value in record.values_for(1):
            if isinstance(value.payload, dict):
                identifiers.update(value.payload.get("identifiers", []))
        if record.format_name.casefold() == top.format_name.casefold() or top.signature_id in identifiers:
            hits.append(record)
    return hits


def ingest(
    sip: SubmissionPackage,
    store: RegistryStore,
    signatures: Sequence[FormatSignature] | None,
    dest_root: str | os.PathLike[str],
    *,
    aip_id: str | None = None,
    actor: str = "ingest",
    baseline_set: Iterable[str] | None = None,
) -> ArchivalPackage:
    """Convert a SIP into an AIP under ``dest_root``.

    Objects whose format is unknown (or has no registry record) are kept
    and flagged ``unresolved_ri``; unreadable payload files abort the ingest.
    """
    payload = Path(sip.payload)
    health = store.integrity_check()
    if not health.healthy:
        raise ContractViolation("registry store failed its integrity check")
    if not payload.is_dir():
        raise IngestError("SIP payload is not a readable directory", [str(payload)])
    rels = sip.payload_files()
    if not rels:
        raise ContractViolation("SIP payload contains no files")

    def scan(rel: str) -> _Scanned | str:
        try:
            return _scan(payload / rel, rel, signatures)
        except OSError:
            return rel

    with ThreadPoolExecutor(max_workers=min(8, len(rels))) as pool:
        scanned_or_failed = list(pool.map(scan, rels))
    unreadable = [s for s in scanned_or_failed if isinstance(s, str)]
    if unreadable:
        raise IngestError("unreadable payload files", unreadable)
    scanned = [s for s in scanned_or_failed if isinstance(s, _Scanned)]

    aip_id = aip_id or f"aip-{uuid.uuid4().hex[:16]}"
    dest = Path(dest_root)
    dest.mkdir(parents=True, exist_ok=True)
    final = dest / aip_id
    if final.exists():
        raise ContractViolation(f"AIP directory already exists: {final}")
    staging = dest / f".{aip_id}.partial"
    staging.mkdir()  # exclusive: a concurrent ingest of the same AIP fails here
    try:
        published = _published_records(store)
        baseline = store.baseline_set if baseline_set is None else frozenset(baseline_set)
        objects: list[DataObject] = []
        fixity: list[dict[str, Any]] = []
        manifest: dict[str, str] = {}
        context_links: list[dict[str, Any]] = []
        seen_context: set[tuple[str, int, int]] = set()

        for item in scanned:
            target = staging / "objects" / item.rel
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(payload / item.rel, target)
            if sha256_file(target) != item.digest:
                raise IngestError("payload changed during ingest", [item.rel])
            linked = _link_records(item, published, store)
            refs = tuple(RIRef(r.record_id, r.version, r.format_name) for r in linked)
            closure = resolve_closure(
                [r.record_id for r in linked],
                lambda rid: store.get_record(rid).targets(Relation.REQUIRES_RI) if rid in store else None,
                baseline,
            )
            for record in linked:
                for value in record.elements:
                    key = (record.record_id, record.version, value.element_id)
                    if 19 <= value.element_id <= 23 and key not in seen_context:
                        seen_context.add(key)
                        context_links.append(
                            {"source": "record", "record_id": record.record_id,
                             "version": record.version, "element_id": value.element_id}
                        )
            objects.append(
                DataObject(
                    path=item.rel,
                    object_id=object_identifier(aip_id, item.rel),
                    digest=item.digest,
                    size=item.size,
                    identification=item.identification,
                    file_schema=item.file_schema,
                    ri_links=refs,
                    ri_closure=closure.to_dict() if refs else {},
                    unresolved_ri=not refs,
                    notes=item.notes,
                )
            )
            rel_obj = f"objects/{item.rel}"
            fixity.append({"path": rel_obj, "algorithm": "sha256", "digest": item.digest})
            manifest[rel_obj] = item.digest

        for declared in sip.declared_context:
            if isinstance(declared, ContextEntry):
                context_links.append({"source": "inline", "entry": declared.to_dict()})
            else:
                try:
                    store.get_context_entry(declared)
                    known = True
                except NotFound:
                    known = False
                context_links.append({"source": "registry", "entry_id": declared, "resolved": known})

        pdi = PreservationDescription(
            provenance=[
                {
                    "event": "ingest",
                    "timestamp": format_timestamp(utcnow()),
                    "agent": AGENT,
                    "actor": actor,
                    "sip_id": sip.sip_id,
                    "object_count": len(objects),
                }
            ],
            context=context_links,
            reference={"aip_id": aip_id, "objects": {o.path: o.object_id for o in objects}},
            fixity=fixity,
        )
        (staging / "metadata").mkdir()
        pkg = ArchivalPackage(
            aip_id=aip_id,
            path=staging,
            sip_id=sip.sip_id,
            content_information=objects,
            pdi=pdi,
            packaging_manifest=manifest,
            producer_metadata=dict(sip.producer_metadata),
        )
        _write_metadata(pkg)
        os.rename(staging, final)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    pkg.path = final
    return pkg


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def verify_aip(aip: ArchivalPackage | str | os.PathLike[str]) -> VerificationReport:
    """Recompute digests and check the structural promises of an AIP."""
    root = _aip_root(aip)
    checks: list[Check] = []
    pkg: ArchivalPackage | None = None
    try:
        pkg = load_aip(root)
        checks.append(Check("metadata", PASS))
    except (NotFound, SchemaError) as exc:
        checks.append(Check("metadata", FAIL, str(exc), paths=(AIP_METADATA,)))

    manifest_path = root / MANIFEST_NAME
    try:
        entries, problems = parse_manifest(manifest_path.read_bytes().decode("utf-8"))
    except (OSError, UnicodeDecodeError) as exc:
        entries, problems = {}, [f"manifest unreadable: {exc}"]
    checks.append(
        Check("manifest-format", FAIL if problems else PASS, "; ".join(problems), paths=(MANIFEST_NAME,) if problems else ())
    )

    bad: list[str] = []
    for rel, digest in sorted(entries.items()):
        path = root / rel
        if path.is_file() and sha256_file(path) != digest:
            bad.append(rel)
    if pkg is not None:
        for item in pkg.pdi.fixity:
            if entries.get(item["path"]) not in (None, item["digest"]) and item["path"] not in bad:
                bad.append(item["path"])
    checks.append(Check("fixity", FAIL if bad else PASS, "digest mismatch" if bad else "", paths=tuple(sorted(bad))))

    on_disk = _all_files(root) - {MANIFEST_NAME}
    missing = sorted(set(entries) - on_disk)
    extra = sorted(on_disk - set(entries))
    if pkg is not None:
        fixity_paths = {f["path"] for f in pkg.pdi.fixity}
        payload_files = {p for p in on_disk if p.startswith("objects/")}
        missing += sorted(fixity_paths - on_disk - set(missing))
        extra += sorted(payload_files - fixity_paths - set(extra))
    detail = "; ".join(
        part for part in (
            f"missing: {', '.join(missing)}" if missing else "",
            f"not in manifest: {', '.join(extra)}" if extra else "",
        ) if part
    )
    checks.append(
        Check("completeness", FAIL if (missing or extra) else PASS, detail, paths=tuple(sorted(set(missing + extra))))
    )

    if pkg is None:
        checks.append(Check("ri-links", SKIP, "metadata unreadable"))
        checks.append(Check("provenance", SKIP, "metadata unreadable"))
        return VerificationReport(tuple(checks), {"aip_id": None})

    silent = [o.path for o in pkg.content_information if not o.ri_links and not o.unresolved_ri]
    checks.append(
        Check("ri-links", FAIL if silent else PASS, "objects without RI links or unresolved flag" if silent else "",
              paths=tuple(silent))
    )
    has_ingest = any(e.get("event") == "ingest" for e in pkg.pdi.provenance)
    checks.append(Check("provenance", PASS if has_ingest else FAIL, "" if has_ingest else "no ingest event recorded"))
    context = {
        "aip_id": pkg.aip_id,
        "object_count": len(pkg.content_information),
        "unresolved_objects": [o.path for o in pkg.content_information if o.unresolved_ri],
        "significant_property_links": list(pkg.significant_property_links),
    }
    return VerificationReport(tuple(checks), context)


# ---------------------------------------------------------------------------
# significant properties
# ---------------------------------------------------------------------------


def attach_significant_properties(
    aip: ArchivalPackage | str | os.PathLike[str],
    property_ids: Iterable[str],
    store: RegistryStore,
    actor: str = "curator",
) -> ArchivalPackage:
    """Link significant properties to an AIP. Repeating a call changes nothing."""
    pkg = load_aip(_aip_root(aip))
    wanted = list(dict.fromkeys(property_ids))
    for pid in wanted:
        store.get_property(pid)
    new = [pid for pid in wanted if pid not in pkg.significant_property_links]
    if not new:
        return pkg
    pkg.significant_property_links.extend(new)
    pkg.pdi.provenance.append(
        {
            "event": "attach-significant-properties",
            "timestamp": format_timestamp(utcnow()),
            "agent": AGENT,
            "actor": actor,
            "property_ids": new,
        }
    )
    _write_metadata(pkg)
    return pkg


# ---------------------------------------------------------------------------
# dissemination
# ---------------------------------------------------------------------------


def select_all(_obj: DataObject) -> bool:
    return True


def select_by_format(term: str) -> Callable[[DataObject], bool]:
    """Select objects whose identified format, STEP schema or linked record matches ``term``."""
    wanted = term.casefold()

    def predicate(obj: DataObject) -> bool:
        if any(name.casefold() == wanted for name in obj.format_names()):
            return True
        return any(s.casefold().startswith(wanted) for s in obj.file_schema)

    return predicate


_PRIMARY_KEYS = ("label", "tool", "url", "body")


def _render_payload(payload: Any) -> list[str]:
    if not isinstance(payload, dict):
        return str(payload).splitlines() or [""]
    lines = [str(payload[k]) for k in _PRIMARY_KEYS if isinstance(payload.get(k), str)]
    for key, item in sorted(payload.items()):
        if key in _PRIMARY_KEYS or item in (None, "", []):
            continue
        shown = ", ".join(map(str, item)) if isinstance(item, list) else payload_text(item)
        lines.append(f"{key.replace('_', ' ')}: {shown}")
    return lines


def render_record(record: RIRecord) -> str:
    """Plain-text rendering of the consumer-facing elements of a record."""
    defs = {d.id: d for d in builtin_element_defs()}
    label = f" ({record.format_version_label})" if record.format_version_label else ""
    lines = [
        f"Format: {record.format_name}{label}",
        f"Record: {record.record_id} version {record.version} [{record.status.value}]",
        "",
    ]
    for eid in DIP_RENDERED_ELEMENTS:
        values = record.values_for(eid)
        if not values:
            continue
        lines.append(f"[{eid}] {defs[eid].name}")
        for value in values:
            lines.extend(f"    {line}" for line in _render_payload(value.payload))
        lines.append("")
    return "\n".join(lines).rstrip("\n") + "\n"


@dataclass
class DisseminationPackage:
    dip_id: str
    path: Path
    source_aip_id: str
    objects: list[dict[str, Any]]
    renderings: list[str]
    fixity: dict[str, str]


def build_dip(
    aip: ArchivalPackage | str | os.PathLike[str],
    selection: Callable[[DataObject], bool],
    store: RegistryStore,
    dest_root: str | os.PathLike[str],
    *,
    dip_id: str | None = None,
) -> DisseminationPackage:
    root = _aip_root(aip)
    report = verify_aip(root)
    if not report.ok:
        failed = ", ".join(c.name for c in report.checks if c.status == FAIL)
        raise ContractViolation(f"AIP does not verify ({failed})")
    pkg = load_aip(root)
    chosen = [o for o in pkg.content_information if selection(o)]
    if not chosen:
        raise EmptyDipError("selection matched no objects")

    dip_id = dip_id or f"dip-{uuid.uuid4().hex[:16]}"
    dest = Path(dest_root)
    dest.mkdir(parents=True, exist_ok=True)
    final = dest / dip_id
    if final.exists():
        raise ContractViolation(f"DIP directory already exists: {final}")
    staging = dest / f".{dip_id}.partial"
    staging.mkdir()
    try:
        fixity: dict[str, str] = {}
        renderings: dict[str, str] = {}
        objects = []
        for obj in chosen:
            rel = f"objects/{obj.path}"
            target = staging / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(root / rel, target)
            digest = sha256_file(target)
            if digest != obj.digest:
                raise IngestError("object digest changed while exporting", [rel])
            fixity[rel] = digest
            names = []
            for ref in obj.ri_links:
                name = f"ri/{ref.record_id}-v{ref.version}.txt"
                if name not in renderings:
                    renderings[name] = render_record(store.get_record(ref.record_id, ref.version))
                names.append(name)
            objects.append({"path": obj.path, "object_id": obj.object_id, "digest": digest,
                            "formats": sorted(obj.format_names()), "ri_renderings": names})
        for name, text in renderings.items():
            target = staging / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding="utf-8")
            fixity[name] = sha256_file(target)
        meta = {
            "dip_id": dip_id,
            "source_aip_id": pkg.aip_id,
            "created": format_timestamp(utcnow()),
            "objects": objects,
            "renderings": sorted(renderings),
            "significant_property_links": list(pkg.significant_property_links),
        }
        (staging / "metadata").mkdir()
        (staging / DIP_METADATA).write_text(canonical_json(meta), encoding="utf-8")
        fixity[DIP_METADATA] = sha256_file(staging / DIP_METADATA)
        (staging / MANIFEST_NAME).write_text(format_manifest(fixity), encoding="utf-8", newline="\n")
        os.rename(staging, final)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return DisseminationPackage(dip_id, final, pkg.aip_id, objects, sorted(renderings), fixity)
