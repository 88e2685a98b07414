"""Command-line interface: curation, identification, ingest, verification and dissemination.

Exit codes: 0 success, 1 domain failure (rejected record, failed verification,
missing object), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn

from bimcore import __version__
from bimcore.ident import (
    builtin_signatures,
    identify_path,
    load_signatures,
    merge_signatures,
    parse_step_header,
    suggest_record_stub,
    verify_step,
)
from bimcore.ident.signatures import IDENTIFIED, FormatSignature
from bimcore.ident.step import StepParseError
from bimcore.model import (
    ContextEntry,
    ContractViolation,
    NotFound,
    RIRecord,
    SchemaError,
    SignificantProperty,
    validate_record,
)
from bimcore.packaging import (
    IngestError,
    attach_significant_properties,
    build_dip,
    ingest,
    load_sip,
    select_all,
    select_by_format,
    verify_aip,
)
from bimcore.report import VerificationReport
from bimcore.store import ImportRejected, QueryView, RecordRejected, RegistryStore, Role, StoreError

logger = logging.getLogger("bimcore")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(args: argparse.Namespace, data: Any, text: str) -> None:
    if args.json:
        print(json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True))
    else:
        print(text)


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise NotFound(f"no such file: {path}") from None
    except (ValueError, UnicodeDecodeError) as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from None


def _open_store(args: argparse.Namespace, read_only: bool = False) -> RegistryStore:
    root = args.store or os.environ.get("BIMCORE_STORE")
    if not root:
        raise UsageError("no store given; pass --store or set BIMCORE_STORE")
    return RegistryStore(root, read_only=read_only)


def _signatures(args: argparse.Namespace) -> list[FormatSignature]:
    base = builtin_signatures()
    if args.signatures:
        return merge_signatures(base, load_signatures(args.signatures))
    return base


def _report_text(report: VerificationReport) -> str:
    lines = []
    for check in report.checks:
        line = f"{check.status.upper():4}  {check.name}"
        if check.detail:
            line += f": {check.detail}"
        if check.offset is not None:
            line += f" (offset {check.offset})"
        if check.paths:
            line += f" [{', '.join(check.paths)}]"
        lines.append(line)
    lines.append("OK" if report.ok else "FAILED")
    return "\n".join(lines)


# -- record ------------------------------------------------------------------


def cmd_record_add(args: argparse.Namespace) -> int:
    store = _open_store(args)
    record = RIRecord.from_dict(_read_json(args.file))
    rid, version = store.put_record(record, args.actor)
    _emit(args, {"record_id": rid, "version": version}, f"stored {rid} version {version}")
    return EXIT_OK


def cmd_record_get(args: argparse.Namespace) -> int:
    store = _open_store(args, read_only=True)
    record = store.get_record(args.record_id, args.version)
    print(record.to_json(), end="")
    return EXIT_OK


def cmd_record_list(args: argparse.Namespace) -> int:
    store = _open_store(args, read_only=True)
    rows = [
        {"record_id": r.record_id, "format_name": r.format_name, "version": r.version, "status": r.status.value}
        for r in store.latest_records()
    ]
    text = "\n".join(f"{r['record_id']}\tv{r['version']}\t{r['status']}\t{r['format_name']}" for r in rows)
    _emit(args, rows, text or "(no records)")
    return EXIT_OK


def cmd_record_validate(args: argparse.Namespace) -> int:
    record = RIRecord.from_dict(_read_json(args.file))
    existing: Sequence[str] = ()
    if args.store or os.environ.get("BIMCORE_STORE"):
        existing = _open_store(args, read_only=True).record_ids()
    report = validate_record(record, existing_ids=existing)
    text = "valid" if report.valid else "\n".join(f"element {v.element_id}: {v.code}: {v.message}" for v in report.violations)
    _emit(args, report.to_dict(), text)
    return EXIT_OK if report.valid else EXIT_FAILURE


def cmd_record_export(args: argparse.Namespace) -> int:
    manifest = _open_store(args, read_only=True).export_all(args.dest)
    summary = {k: manifest[k] for k in ("record_count", "version_count")} | {"dest": args.dest}
    _emit(args, summary, f"exported {manifest['record_count']} records to {args.dest}")
    return EXIT_OK


def cmd_record_import(args: argparse.Namespace) -> int:
    count = _open_store(args).import_all(args.src, args.actor)
    _emit(args, {"imported": count}, f"imported {count} records")
    return EXIT_OK


# -- identification ----------------------------------------------------------


def cmd_identify(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if not path.is_file():
        raise NotFound(f"no such file: {path}")
    result = identify_path(path, _signatures(args))
    data: dict[str, Any] = result.to_dict() | {"path": str(path)}
    if args.stub:
        header = None
        if result.verdict == IDENTIFIED and result.top and result.top.signature_id == "step-spf":
            try:
                header = parse_step_header(path.read_bytes()[: 256 * 1024])
            except StepParseError:
                header = None
        data["stub"] = suggest_record_stub(result, header).to_dict()
    text = f"{path}: {result.verdict}" + (f" {result.format_name}" if result.format_name else "")
    for warning in result.warnings:
        text += f"\n  warning: {warning}"
    _emit(args, data, text)
    return EXIT_OK


def cmd_verify_format(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if not path.is_file():
        raise NotFound(f"no such file: {path}")
    report = verify_step(path.read_bytes())
    _emit(args, report.to_dict() | {"path": str(path)}, _report_text(report))
    return EXIT_OK if report.ok else EXIT_FAILURE


# -- packages ----------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    store = _open_store(args, read_only=True)
    aip = ingest(load_sip(args.sip), store, _signatures(args), args.dest, aip_id=args.aip_id, actor=args.actor)
    objects = [
        {
            "path": o.path,
            "verdict": o.identification.verdict,
            "format": o.identification.format_name,
            "ri_links": [r.to_dict() for r in o.ri_links],
            "unresolved_ri": o.unresolved_ri,
        }
        for o in aip.content_information
    ]
    lines = [f"AIP {aip.aip_id} written to {aip.path}"]
    for o in objects:
        links = ", ".join(f"{r['record_id']} v{r['version']}" for r in o["ri_links"]) or "unresolved RI"
        lines.append(f"  {o['path']}: {o['verdict']} {o['format'] or ''} -> {links}")
    _emit(args, {"aip_id": aip.aip_id, "path": str(aip.path), "objects": objects}, "\n".join(lines))
    return EXIT_OK


def cmd_aip_verify(args: argparse.Namespace) -> int:
    report = verify_aip(args.aip)
    _emit(args, report.to_dict(), _report_text(report))
    return EXIT_OK if report.ok else EXIT_FAILURE


def cmd_dip_build(args: argparse.Namespace) -> int:
    store = _open_store(args, read_only=True)
    selection = select_by_format(args.format) if args.format else select_all
    dip = build_dip(args.aip, selection, store, args.dest, dip_id=args.dip_id)
    data = {
        "dip_id": dip.dip_id,
        "path": str(dip.path),
        "source_aip_id": dip.source_aip_id,
        "objects": [o["path"] for o in dip.objects],
        "renderings": dip.renderings,
    }
    _emit(args, data, f"DIP {dip.dip_id} with {len(dip.objects)} objects written to {dip.path}")
    return EXIT_OK


def cmd_sigprop_add(args: argparse.Namespace) -> int:
    pid = _open_store(args).put_property(SignificantProperty.from_dict(_read_json(args.file)), args.actor)
    _emit(args, {"property_id": pid}, f"stored property {pid}")
    return EXIT_OK


def cmd_sigprop_attach(args: argparse.Namespace) -> int:
    store = _open_store(args, read_only=True)
    aip = attach_significant_properties(args.aip, args.property_ids, store, args.actor)
    links = aip.significant_property_links
    _emit(args, {"aip_id": aip.aip_id, "significant_property_links": links}, f"{aip.aip_id}: {', '.join(links)}")
    return EXIT_OK


def cmd_context_add(args: argparse.Namespace) -> int:
    eid = _open_store(args).put_context_entry(ContextEntry.from_dict(_read_json(args.file)), args.actor)
    _emit(args, {"entry_id": eid}, f"stored context entry {eid}")
    return EXIT_OK


def cmd_baseline_set(args: argparse.Namespace) -> int:
    store = _open_store(args)
    store.set_baseline(args.record_ids, args.actor)
    ids = sorted(store.baseline_set)
    _emit(args, {"baseline_set": ids}, "baseline: " + (", ".join(ids) or "(empty)"))
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    store = _open_store(args, read_only=True)
    try:
        view = QueryView.for_role(args.view)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    summaries = store.query(view, " ".join(args.terms))
    rows = [s.to_dict() for s in summaries]
    text = "\n".join(
        f"{s.record_id}\tv{s.version}\t{s.format_name}\telements {','.join(map(str, s.matched_elements))}"
        for s in summaries
    )
    _emit(args, rows, text or "(no matches)")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from bimcore.server import make_server

    root = args.store or os.environ.get("BIMCORE_STORE")
    if not root:
        raise UsageError("no store given; pass --store or set BIMCORE_STORE")
    try:
        server = make_server(root, args.listen)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    host, port = server.server_address[:2]
    logger.info("serving %s on http://%s:%s", root, host, port)
    if args.json:
        print(json.dumps({"listening": f"{host}:{port}", "store": str(root)}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--store", default=None, help="registry store directory (default: $BIMCORE_STORE)")
    common.add_argument("--signatures", default=None, help="JSON file of extra format signatures")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    actor = argparse.ArgumentParser(add_help=False)
    actor.add_argument("--actor", default=os.environ.get("USER", "cli"), help="name recorded in the audit log")

    parser = _Parser(prog="bimcore", description="BIMcore RI registry and OAIS packaging tools")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def leaf(group: Any, name: str, handler: Any, help: str, *, writes: bool = False) -> argparse.ArgumentParser:
        parents = [common, actor] if writes else [common]
        p = group.add_parser(name, parents=parents, help=help, description=help)
        p.set_defaults(handler=handler)
        return p

    record = sub.add_parser("record", help="manage RI records")
    rsub = record.add_subparsers(dest="record_command", metavar="ACTION", parser_class=_Parser)
    rsub.required = True
    p = leaf(rsub, "add", cmd_record_add, "store a record from a JSON file as its next version", writes=True)
    p.add_argument("file")
    p = leaf(rsub, "get", cmd_record_get, "print a record as canonical JSON")
    p.add_argument("record_id")
    p.add_argument("--version", type=int, default=None, dest="version")
    leaf(rsub, "list", cmd_record_list, "list the latest version of every record")
    p = leaf(rsub, "validate", cmd_record_validate, "validate a record file without storing it")
    p.add_argument("file")
    p = leaf(rsub, "export", cmd_record_export, "export the whole store to an empty directory")
    p.add_argument("dest")
    p = leaf(rsub, "import", cmd_record_import, "import a store export", writes=True)
    p.add_argument("src")

    p = leaf(sub, "identify", cmd_identify, "identify the format of a file")
    p.add_argument("path")
    p.add_argument("--stub", action="store_true", help="also suggest a draft record")
    p = leaf(sub, "verify-format", cmd_verify_format, "check STEP physical file syntax")
    p.add_argument("path")

    p = leaf(sub, "ingest", cmd_ingest, "convert a SIP directory into an AIP", writes=True)
    p.add_argument("sip")
    p.add_argument("--dest", required=True, help="directory that receives the AIP")
    p.add_argument("--aip-id", default=None)

    aip = sub.add_parser("aip", help="archival packages")
    asub = aip.add_subparsers(dest="aip_command", metavar="ACTION", parser_class=_Parser)
    asub.required = True
    p = leaf(asub, "verify", cmd_aip_verify, "recompute fixity and check AIP structure")
    p.add_argument("aip")

    dip = sub.add_parser("dip", help="dissemination packages")
    dsub = dip.add_subparsers(dest="dip_command", metavar="ACTION", parser_class=_Parser)
    dsub.required = True
    p = leaf(dsub, "build", cmd_dip_build, "export selected AIP objects with RI renderings")
    p.add_argument("aip")
    p.add_argument("--dest", required=True)
    p.add_argument("--format", default=None, help="only objects of this format (e.g. IFC)")
    p.add_argument("--dip-id", default=None)

    sigprop = sub.add_parser("sigprop", help="significant properties")
    ssub = sigprop.add_subparsers(dest="sigprop_command", metavar="ACTION", parser_class=_Parser)
    ssub.required = True
    p = leaf(ssub, "add", cmd_sigprop_add, "store a significant property from a JSON file", writes=True)
    p.add_argument("file")
    p = leaf(ssub, "attach", cmd_sigprop_attach, "link significant properties to an AIP", writes=True)
    p.add_argument("aip")
    p.add_argument("property_ids", nargs="+")

    context = sub.add_parser("context", help="context entries")
    csub = context.add_subparsers(dest="context_command", metavar="ACTION", parser_class=_Parser)
    csub.required = True
    p = leaf(csub, "add", cmd_context_add, "store a context entry from a JSON file", writes=True)
    p.add_argument("file")

    baseline = sub.add_parser("baseline", help="RI baseline set")
    bsub = baseline.add_subparsers(dest="baseline_command", metavar="ACTION", parser_class=_Parser)
    bsub.required = True
    p = leaf(bsub, "set", cmd_baseline_set, "replace the set of self-describing records", writes=True)
    p.add_argument("record_ids", nargs="*")

    p = leaf(sub, "query", cmd_query, "search records through a role view")
    p.add_argument("--view", required=True, choices=[r.value for r in Role])
    p.add_argument("terms", nargs="*")

    p = leaf(sub, "serve", cmd_serve, "run the read-only JSON query endpoint")
    p.add_argument("--listen", default="127.0.0.1:8080", help="host:port")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    def fail(code: int, kind: str, message: str, extra: dict[str, Any] | None = None) -> int:
        if args.json:
            print(json.dumps({"error": kind, "message": message} | (extra or {}), sort_keys=True))
        print(f"bimcore: {kind}: {message}", file=sys.stderr)
        return code

    try:
        return args.handler(args)
    except UsageError as exc:
        return fail(EXIT_USAGE, "usage", str(exc))
    except RecordRejected as exc:
        return fail(EXIT_FAILURE, "rejected", str(exc), {"violations": [v.to_dict() for v in exc.report.violations]})
    except IngestError as exc:
        return fail(EXIT_FAILURE, "ingest", str(exc), {"paths": exc.paths})
    except NotFound as exc:
        return fail(EXIT_FAILURE, "not-found", str(exc.args[0] if exc.args else exc))
    except (ContractViolation, SchemaError, ImportRejected, StoreError, ValueError) as exc:
        return fail(EXIT_FAILURE, type(exc).__name__, str(exc))
    except OSError as exc:
        return fail(EXIT_FAILURE, "io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
