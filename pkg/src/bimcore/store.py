"""Filesystem-backed registry of RI records, significant properties and context entries.

Layout under the store root::

    records/<record_id>/<version>.json   one immutable file per record version
    properties/<property_id>.json        significant properties
    context/<entry_id>.json              context entries
    config.json                          store settings (RI baseline set)
    audit.log                            one JSON object per line, append-only

The in-memory index is rebuilt from these files, so a store can be read
with nothing more than a JSON parser. Writers take an advisory lock on
``<root>/.lock``; readers never lock.
"""

from __future__ import annotations

import contextlib
import fcntl
import hashlib
import json
import logging
import os
import re
import shutil
import uuid
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from bimcore.model import (
    BimcoreCategory,
    ContextEntry,
    ContractViolation,
    RECORD_ID_RE,
    NotFound,
    RecordStatus,
    Relation,
    RIRecord,
    SchemaError,
    SignificantProperty,
    StrEnum,
    ValidationReport,
    Violation,
    canonical_json,
    category_elements,
    format_timestamp,
    utcnow,
    validate_property,
    validate_record,
)

logger = logging.getLogger(__name__)

EXPORT_MANIFEST = "export-manifest.json"
PACKAGE_OBJECT_PREFIX = "aip:"
_VERSION_FILE_RE = re.compile(r"^([1-9][0-9]*)\.json$")


class Role(StrEnum):
    PRODUCER = "producer"
    CONSUMER = "consumer"
    ARCHIVE_MANAGEMENT = "archive-management"
    COMPUTER_EXPERT = "computer-expert"
    HISTORIAN = "historian"


ROLE_ELEMENTS: dict[Role, frozenset[int]] = {
    Role.PRODUCER: frozenset({1, 2, 3, 4, 5, 14}),
    Role.CONSUMER: frozenset({7, 8, 9, 10, 11, 12, 13, 14, 15, 18, 19, 20, 21, 22}),
    Role.ARCHIVE_MANAGEMENT: frozenset({4, 5, 6, 16, 17, 22}),
    Role.COMPUTER_EXPERT: frozenset({6, 7, 8, 9, 10, 13, 15, 16, 17, 18}),
    Role.HISTORIAN: frozenset({15, 19, 23}),
}


class StoreError(RuntimeError):
    pass


class RecordRejected(StoreError):
    def __init__(self, report: ValidationReport) -> None:
        messages = "; ".join(v.message for v in report.violations)
        super().__init__(f"record rejected: {messages}")
        self.report = report


class ImportRejected(StoreError):
    pass


def payload_text(payload: Any) -> str:
    """Flatten every string inside a payload into one search string."""
    parts: list[str] = []

    def walk(node: Any) -> None:
        if isinstance(node, str):
            parts.append(node)
        elif isinstance(node, dict):
            for key in sorted(node):
                walk(node[key])
        elif isinstance(node, list):
            for item in node:
                walk(item)

    walk(payload)
    return "\n".join(parts)


def split_terms(text_terms: str | None) -> tuple[str, ...]:
    return tuple(t.casefold() for t in (text_terms or "").split())


@dataclass(frozen=True)
class QueryView:
    """A role's window onto the registry, optionally narrowed further."""

    role: Role
    categories: frozenset[BimcoreCategory] | None = None
    elements: frozenset[int] | None = None
    relations: frozenset[Relation] | None = None
    include_withdrawn: bool = False

    @classmethod
    def for_role(cls, role: str | Role, **filters: Any) -> QueryView:
        try:
            return cls(Role(role), **filters)
        except ValueError:
            allowed = ", ".join(r.value for r in Role)
            raise ValueError(f"unknown view {role!r}; expected one of: {allowed}") from None

    def element_set(self) -> frozenset[int]:
        chosen = ROLE_ELEMENTS[self.role]
        if self.categories is not None:
            allowed: set[int] = set()
            for cat in self.categories:
                allowed |= category_elements(cat)
            chosen &= allowed
        if self.elements is not None:
            chosen &= self.elements
        return chosen

    def evaluate(self, record: RIRecord, text_terms: str | None = None) -> tuple[int, ...] | None:
        """Return the matched element ids, or None when ``record`` is outside the view."""
        if record.status is RecordStatus.WITHDRAWN and not self.include_withdrawn:
            return None
        if self.relations is not None and not any(r.relation in self.relations for r in record.related_records):
            return None
        wanted = self.element_set()
        matched = tuple(sorted(wanted & record.element_ids()))
        if not matched:
            return None
        terms = split_terms(text_terms)
        if terms:
            haystack = _search_text(record, matched)
            if not all(t in haystack for t in terms):
                return None
        return matched


def _search_text(record: RIRecord, element_ids: Iterable[int]) -> str:
    ids = set(element_ids)
    chunks = [record.format_name, record.format_version_label]
    chunks.extend(payload_text(v.payload) for v in record.elements if v.element_id in ids)
    return "\n".join(chunks).casefold()


@dataclass(frozen=True)
class RecordSummary:
    record_id: str
    format_name: str
    version: int
    status: str
    matched_elements: tuple[int, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "format_name": self.format_name,
            "version": self.version,
            "status": self.status,
            "matched_elements": list(self.matched_elements),
        }


@dataclass
class IntegrityReport:
    dangling: list[dict[str, Any]] = field(default_factory=list)
    orphans: list[dict[str, Any]] = field(default_factory=list)
    mismatches: list[dict[str, Any]] = field(default_factory=list)

    @property
    def healthy(self) -> bool:
        return not (self.dangling or self.orphans or self.mismatches)

    def to_dict(self) -> dict[str, Any]:
        return {
            "healthy": self.healthy,
            "dangling": self.dangling,
            "orphans": self.orphans,
            "mismatches": self.mismatches,
        }


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1024 * 1024), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RegistryStore:
    """Versioned, append-only registry rooted at a directory."""

    def __init__(self, root: str | os.PathLike[str], *, read_only: bool = False, durable: bool = True) -> None:
        self.root = Path(root)
        self.read_only = read_only
        self.durable = durable
        if read_only:
            if not self.root.is_dir():
                raise NotFound(f"no registry store at {self.root}")
        else:
            for sub in ("records", "properties", "context"):
                (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._versions: dict[str, set[int]] = {}
        self._latest: dict[str, RIRecord] = {}
        self._by_element: dict[int, set[str]] = {}
        self._cache: dict[tuple[str, int], RIRecord] = {}
        self._properties: dict[str, SignificantProperty] = {}
        self._context: dict[str, ContextEntry] = {}
        self._lock_depth = 0
        self._lock_fh: Any = None
        self.refresh()

    # -- paths -------------------------------------------------------------

    @property
    def records_dir(self) -> Path:
        return self.root / "records"

    def _version_path(self, record_id: str, version: int) -> Path:
        return self.records_dir / record_id / f"{version}.json"

    # -- index -------------------------------------------------------------

    def refresh(self) -> None:
        """Bring the index up to date with files written by other processes."""
        on_disk = self._scan_versions()
        for rid in list(self._versions):
            if rid not in on_disk:
                self._drop_latest(rid)
                del self._versions[rid]
        for rid, versions in on_disk.items():
            known = self._versions.get(rid)
            if known == versions:
                continue
            self._versions[rid] = set(versions)
            self._reindex_latest(rid)
        self._properties = self._load_dir("properties", SignificantProperty.from_dict)
        self._context = self._load_dir("context", ContextEntry.from_dict)

    def _scan_versions(self) -> dict[str, set[int]]:
        found: dict[str, set[int]] = {}
        if not self.records_dir.is_dir():
            return found
        for rec_dir in self.records_dir.iterdir():
            if not rec_dir.is_dir() or rec_dir.name.startswith("."):
                continue
            versions = {int(m.group(1)) for f in rec_dir.iterdir() if (m := _VERSION_FILE_RE.match(f.name))}
            if versions:
                found[rec_dir.name] = versions
        return found

    def _load_dir(self, sub: str, parse: Any) -> dict[str, Any]:
        out: dict[str, Any] = {}
        base = self.root / sub
        if not base.is_dir():
            return out
        for f in sorted(base.glob("*.json")):
            try:
                item = parse(json.loads(f.read_text(encoding="utf-8")))
            except (OSError, ValueError) as exc:
                logger.warning("skipping unreadable %s: %s", f, exc)
                continue
            out[f.stem] = item
        return out

    def _drop_latest(self, rid: str) -> None:
        old = self._latest.pop(rid, None)
        if old is not None:
            for eid in old.element_ids():
                self._by_element.get(eid, set()).discard(rid)

    def _reindex_latest(self, rid: str) -> None:
        self._drop_latest(rid)
        for version in sorted(self._versions[rid], reverse=True):
            try:
                record = self._read(rid, version)
            except (OSError, ValueError) as exc:
                logger.warning("unreadable record %s v%s: %s", rid, version, exc)
                continue
            self._latest[rid] = record
            for eid in record.element_ids():
                self._by_element.setdefault(eid, set()).add(rid)
            return

    def _read(self, rid: str, version: int) -> RIRecord:
        key = (rid, version)
        cached = self._cache.get(key)
        if cached is None:
            cached = RIRecord.from_json(self._version_path(rid, version).read_bytes())
            if (cached.record_id, cached.version) != key:
                raise SchemaError(f"{rid}/{version}.json holds {cached.record_id} v{cached.version}")
            self._cache[key] = cached
        return cached

    # -- locking / atomic writes ------------------------------------------------

    @contextlib.contextmanager
    def writer(self) -> Iterator[None]:
        """Hold the single-writer lock on the store root."""
        if self.read_only:
            raise StoreError("store opened read-only")
        if self._lock_depth == 0:
            self._lock_fh = (self.root / ".lock").open("a+")
            fcntl.flock(self._lock_fh.fileno(), fcntl.LOCK_EX)
        self._lock_depth += 1
        try:
            yield
        finally:
            self._lock_depth -= 1
            if self._lock_depth == 0:
                fcntl.flock(self._lock_fh.fileno(), fcntl.LOCK_UN)
                self._lock_fh.close()
                self._lock_fh = None

    def _fsync_dir(self, path: Path) -> None:
        if not self.durable:
            return
        fd = os.open(path, os.O_RDONLY)
        try:
            os.fsync(fd)
        finally:
            os.close(fd)

    def _write_tmp(self, path: Path, data: bytes) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.{uuid.uuid4().hex}.tmp")
        with tmp.open("wb") as fh:
            fh.write(data)
            if self.durable:
                fh.flush()
                os.fsync(fh.fileno())
        return tmp

    def _write_new(self, path: Path, data: bytes) -> None:
        """Create ``path`` atomically; never overwrite an existing file."""
        tmp = self._write_tmp(path, data)
        try:
            os.link(tmp, path)
        finally:
            tmp.unlink()
        self._fsync_dir(path.parent)

    def _write_replace(self, path: Path, data: bytes) -> None:
        tmp = self._write_tmp(path, data)
        os.replace(tmp, path)
        self._fsync_dir(path.parent)

    def _audit(self, actor: str, action: str, record_id: str, version: int | None) -> None:
        self._audit_many([(actor, action, record_id, version)])

    def _audit_many(self, events: list[tuple[str, str, str, int | None]]) -> None:
        stamp = format_timestamp(utcnow())
        lines = "".join(
            json.dumps(
                {"timestamp": stamp, "actor": actor, "action": action, "record_id": rid, "version": version},
                sort_keys=True,
            )
            + "\n"
            for actor, action, rid, version in events
        )
        with (self.root / "audit.log").open("a", encoding="utf-8") as fh:
            fh.write(lines)
            if self.durable:
                fh.flush()
                os.fsync(fh.fileno())

    def audit_log(self) -> list[dict[str, Any]]:
        path = self.root / "audit.log"
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]

    # -- records -----------------------------------------------------------

    def record_ids(self) -> list[str]:
        return sorted(self._versions)

    def versions(self, record_id: str) -> list[int]:
        if record_id not in self._versions:
            raise NotFound(f"unknown record {record_id!r}")
        return sorted(self._versions[record_id])

    def __contains__(self, record_id: object) -> bool:
        return record_id in self._versions

    def __len__(self) -> int:
        return len(self._versions)

    def put_record(self, record: RIRecord, actor: str) -> tuple[str, int]:
        """Validate and persist ``record`` as the next version of its id."""
        return self.put_records([record], actor)[0]

    def put_records(self, records: Iterable[RIRecord], actor: str) -> list[tuple[str, int]]:
        """Store a batch under one lock. Relations may point anywhere inside the batch.

        Every record is validated before anything is written, so a rejected
        record leaves the store unchanged.
        """
        batch = list(records)
        with self.writer():
            self.refresh()
            known = set(self._versions) | {r.record_id for r in batch}
            for record in batch:
                report = validate_record(record, existing_ids=known)
                if not report.valid:
                    raise RecordRejected(report)
            next_version = {rid: max(vs) for rid, vs in self._versions.items()}
            staged: list[tuple[RIRecord, Path]] = []
            now = utcnow()
            try:
                for record in batch:
                    rid = record.record_id
                    previous = next_version.get(rid, 0)
                    if previous and 1 in self._versions.get(rid, ()):
                        created = self._read(rid, 1).created
                    else:
                        created = next((r.created for r, _ in staged if r.record_id == rid and r.version == 1),
                                       record.created)
                    stored = replace(record, version=previous + 1, created=created, modified=now)
                    path = self._version_path(rid, stored.version)
                    self._write_new(path, stored.to_json().encode("utf-8"))
                    staged.append((stored, path))
                    next_version[rid] = stored.version
                self._audit_many([(actor, "put", r.record_id, r.version) for r, _ in staged])
            except OSError:
                for _, path in staged:
                    path.unlink(missing_ok=True)
                raise
            out = []
            for stored, _ in staged:
                rid = stored.record_id
                self._versions.setdefault(rid, set()).add(stored.version)
                self._cache[(rid, stored.version)] = stored
                self._drop_latest(rid)
                self._latest[rid] = stored
                for eid in stored.element_ids():
                    self._by_element.setdefault(eid, set()).add(rid)
                logger.info("%s stored %s v%d", actor, rid, stored.version)
                out.append((rid, stored.version))
            return out

    def withdraw(self, record_id: str, actor: str) -> tuple[str, int]:
        return self.put_record(replace(self.get_record(record_id), status=RecordStatus.WITHDRAWN), actor)

    def get_record(self, record_id: str, version: int | None = None) -> RIRecord:
        versions = self._versions.get(record_id)
        if not versions:
            raise NotFound(f"unknown record {record_id!r}")
        wanted = max(versions) if version is None else version
        if wanted not in versions:
            raise NotFound(f"record {record_id!r} has no version {version}")
        try:
            return self._read(record_id, wanted)
        except FileNotFoundError:
            raise NotFound(f"record {record_id!r} v{wanted} missing on disk") from None

    def latest_published(self, record_id: str) -> RIRecord | None:
        """Newest published version, or None when there is none or the record was withdrawn."""
        for version in sorted(self._versions.get(record_id, ()), reverse=True):
            try:
                record = self._read(record_id, version)
            except (OSError, ValueError):
                continue
            if record.status is RecordStatus.WITHDRAWN:
                return None
            if record.status is RecordStatus.PUBLISHED:
                return record
        return None

    def latest_records(self) -> list[RIRecord]:
        return [self._latest[rid] for rid in sorted(self._latest)]

    # -- query -------------------------------------------------------------

    def query(self, view: QueryView, text_terms: str | None = None) -> list[RecordSummary]:
        """Summaries of the latest record versions visible through ``view``."""
        candidates: set[str] = set()
        for eid in view.element_set():
            candidates |= self._by_element.get(eid, set())
        hits = []
        for rid in candidates:
            record = self._latest[rid]
            matched = view.evaluate(record, text_terms)
            if matched is not None:
                hits.append(RecordSummary(rid, record.format_name, record.version, record.status.value, matched))
        hits.sort(key=lambda s: (s.format_name.casefold(), s.format_name, -s.version, s.record_id))
        return hits

    # -- significant properties & context -------------------------------------

    def put_property(self, prop: SignificantProperty, actor: str) -> str:
        with self.writer():
            self.refresh()
            report = validate_property(prop)
            if report.valid and prop.status is RecordStatus.PUBLISHED:
                unknown = [
                    a for a in prop.applies_to
                    if not a.startswith(PACKAGE_OBJECT_PREFIX) and a not in self._versions
                ]
                if unknown:
                    report = ValidationReport(
                        tuple(Violation("applies-to", f"unknown record {a!r}") for a in unknown)
                    )
            if not report.valid:
                raise RecordRejected(report)
            self._write_replace(
                self.root / "properties" / f"{prop.property_id}.json",
                canonical_json(prop.to_dict()).encode("utf-8"),
            )
            self._audit(actor, "put-property", prop.property_id, None)
            self._properties[prop.property_id] = prop
            return prop.property_id

    def get_property(self, property_id: str) -> SignificantProperty:
        try:
            return self._properties[property_id]
        except KeyError:
            raise NotFound(f"unknown significant property {property_id!r}") from None

    def properties(self) -> list[SignificantProperty]:
        return [self._properties[k] for k in sorted(self._properties)]

    def put_context_entry(self, entry: ContextEntry, actor: str) -> str:
        if not RECORD_ID_RE.match(entry.entry_id):
            raise ContractViolation(f"entry_id {entry.entry_id!r} is not a safe identifier")
        with self.writer():
            self._write_replace(
                self.root / "context" / f"{entry.entry_id}.json",
                canonical_json(entry.to_dict()).encode("utf-8"),
            )
            self._audit(actor, "put-context", entry.entry_id, None)
            self._context[entry.entry_id] = entry
            return entry.entry_id

    def get_context_entry(self, entry_id: str) -> ContextEntry:
        try:
            return self._context[entry_id]
        except KeyError:
            raise NotFound(f"unknown context entry {entry_id!r}") from None

    # -- configuration ---------------------------------------------------------

    def _config(self) -> dict[str, Any]:
        path = self.root / "config.json"
        if not path.exists():
            return {}
        return json.loads(path.read_text(encoding="utf-8"))

    @property
    def baseline_set(self) -> frozenset[str]:
        """Records treated as self-describing when resolving RI closures."""
        return frozenset(self._config().get("baseline_set", []))

    def set_baseline(self, record_ids: Iterable[str], actor: str) -> None:
        ids = sorted(set(record_ids))
        with self.writer():
            config = self._config()
            config["baseline_set"] = ids
            self._write_replace(self.root / "config.json", canonical_json(config).encode("utf-8"))
            self._audit(actor, "set-baseline", ",".join(ids), None)

    # -- integrity ---------------------------------------------------------

    def integrity_check(self) -> IntegrityReport:
        """Compare the index to a full rescan and check references."""
        report = IntegrityReport()
        on_disk = self._scan_versions()
        latest_on_disk: dict[str, RIRecord] = {}
        for rid in sorted(set(on_disk) | set(self._versions)):
            disk_versions = on_disk.get(rid, set())
            index_versions = self._versions.get(rid, set())
            for v in sorted(index_versions - disk_versions):
                report.mismatches.append({"kind": "missing-on-disk", "record_id": rid, "version": v})
            for v in sorted(disk_versions - index_versions):
                report.mismatches.append({"kind": "not-indexed", "record_id": rid, "version": v})
            for v in sorted(disk_versions):
                path = self._version_path(rid, v)
                try:
                    record = RIRecord.from_json(path.read_bytes())
                except (OSError, ValueError) as exc:
                    report.mismatches.append({"kind": "unreadable", "record_id": rid, "version": v, "detail": str(exc)})
                    continue
                if (record.record_id, record.version) != (rid, v):
                    report.mismatches.append({"kind": "content-mismatch", "record_id": rid, "version": v})
                    continue
                cached = self._cache.get((rid, v))
                if cached is not None and cached != record:
                    report.mismatches.append({"kind": "modified-on-disk", "record_id": rid, "version": v})
                latest_on_disk[rid] = record
        for rid, record in sorted(latest_on_disk.items()):
            if record.status is RecordStatus.DRAFT:
                continue
            for rel in record.related_records:
                if rel.record_id not in on_disk:
                    report.dangling.append(
                        {"record_id": rid, "version": record.version, "relation": rel.relation.value, "target": rel.record_id}
                    )
        for prop in self.properties():
            for target in prop.applies_to:
                if not target.startswith(PACKAGE_OBJECT_PREFIX) and target not in on_disk:
                    report.orphans.append({"property_id": prop.property_id, "target": target})
        return report

    # -- export / import ---------------------------------------------------------

    def _exportable_files(self, root: Path) -> list[Path]:
        files: list[Path] = []
        for sub in ("records", "properties", "context"):
            base = root / sub
            if base.is_dir():
                files.extend(p for p in base.rglob("*.json") if not p.name.startswith("."))
        for name in ("config.json", "audit.log"):
            if (root / name).is_file():
                files.append(root / name)
        return sorted(files, key=lambda p: p.relative_to(root).as_posix())

    def export_all(self, dest: str | os.PathLike[str]) -> dict[str, Any]:
        """Copy every record version and supporting file to ``dest`` with a checksum manifest."""
        dest_path = Path(dest)
        if dest_path.exists() and any(dest_path.iterdir()):
            raise ContractViolation(f"export destination {dest_path} is not empty")
        health = self.integrity_check()
        if not health.healthy:
            raise ContractViolation("store is not healthy; run integrity_check")
        entries = []
        for src in self._exportable_files(self.root):
            rel = src.relative_to(self.root).as_posix()
            target = dest_path / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, target)
            entries.append({"path": rel, "sha256": sha256_file(target)})
        manifest = {
            "format": "bimcore-registry-export",
            "record_count": len(self._versions),
            "version_count": sum(len(v) for v in self._versions.values()),
            "files": entries,
        }
        dest_path.mkdir(parents=True, exist_ok=True)
        (dest_path / EXPORT_MANIFEST).write_text(canonical_json(manifest), encoding="utf-8")
        return manifest

    def import_all(self, src: str | os.PathLike[str], actor: str = "import") -> int:
        """Load an export produced by :meth:`export_all`; returns the number of records imported.

        Every checksum is verified before anything is written. Any mismatch,
        unlisted file or id collision aborts with the store unchanged.
        """
        src_path = Path(src)
        try:
            manifest = json.loads((src_path / EXPORT_MANIFEST).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ImportRejected(f"unreadable export manifest: {exc}") from None
        listed = {e["path"]: e["sha256"] for e in manifest.get("files", [])}
        present = {p.relative_to(src_path).as_posix() for p in self._exportable_files(src_path)}
        unlisted = sorted(present - set(listed))
        if unlisted:
            raise ImportRejected(f"file not listed in manifest: {unlisted[0]}")
        for rel, digest in sorted(listed.items()):
            path = src_path / rel
            if ".." in Path(rel).parts or not path.is_file():
                raise ImportRejected(f"listed file missing: {rel}")
            if sha256_file(path) != digest:
                raise ImportRejected(f"checksum mismatch: {rel}")

        record_files = sorted(r for r in listed if r.startswith("records/"))
        to_copy = [r for r in sorted(listed) if r != "audit.log"]
        written: list[Path] = []
        with self.writer():
            self.refresh()
            for rel in to_copy:
                if rel.startswith("records/"):
                    if (self.root / rel).exists():
                        raise ImportRejected(f"record version already present: {rel}")
                elif rel.startswith("properties/") and Path(rel).stem in self._properties:
                    raise ImportRejected(f"significant property already present: {rel}")
                elif rel == "config.json" and self._config():
                    raise ImportRejected("store already has a configuration")
            try:
                for rel in to_copy:
                    target = self.root / rel
                    target.parent.mkdir(parents=True, exist_ok=True)
                    tmp = self._write_tmp(target, (src_path / rel).read_bytes())
                    os.replace(tmp, target)
                    written.append(target)
                self._audit_many(
                    [(actor, "import", rel.split("/")[1], int(Path(rel).stem)) for rel in record_files]
                )
            except OSError:
                for path in written:
                    path.unlink(missing_ok=True)
                raise
            self.refresh()
        return len({r.split("/")[1] for r in record_files})
