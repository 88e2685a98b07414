import json
import subprocess
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from bimcore.cli import main
from bimcore.model import ContextEntry, ContextKind
from bimcore.store import RegistryStore

from helpers import CORPUS, ROOT, fire_property, ifc_record, make_record, tiff_record, value

ROLES = ["producer", "consumer", "archive-management", "computer-expert", "historian"]


class Cli:
    def __init__(self, capsys, store: Path) -> None:
        self.capsys = capsys
        self.store = store

    def __call__(self, *argv: str, store: bool = True) -> tuple[int, str, str]:
        args = list(argv) + (["--store", str(self.store)] if store else [])
        code = main(args)
        out, err = self.capsys.readouterr()
        return code, out, err

    def json(self, *argv: str, expect: int = 0):
        code, out, err = self(*argv, "--json")
        assert code == expect, err
        return json.loads(out)


@pytest.fixture
def workspace(tmp_path):
    files = tmp_path / "files"
    files.mkdir()
    (files / "txt.json").write_text(make_record("txt").to_json())
    (files / "ifc.json").write_text(ifc_record(requires=("txt",)).to_json())
    (files / "tiff.json").write_text(tiff_record().to_json())
    (files / "bad.json").write_text(make_record("bad", elements=(value(7, "syntax only"),)).to_json())
    (files / "fire.json").write_text(json.dumps(fire_property().to_dict()))
    (files / "permit.json").write_text(json.dumps(ContextEntry("permit", ContextKind.BUILDING_SPECIFIC, "permit set").to_dict()))
    sip = tmp_path / "sip" / "payload"
    (sip / "model").mkdir(parents=True)
    (sip / "model" / "station.ifc").write_bytes((CORPUS / "step" / "minimal.ifc").read_bytes())
    (sip / "plan.tif").write_bytes((CORPUS / "tiff" / "plan-le.tif").read_bytes())
    return tmp_path


@pytest.fixture
def cli(capsys, workspace):
    return Cli(capsys, workspace / "store")


@pytest.fixture
def loaded(cli, workspace):
    files = workspace / "files"
    for name in ("txt", "ifc", "tiff"):
        assert cli("record", "add", str(files / f"{name}.json"))[0] == 0
    assert cli("baseline", "set", "txt")[0] == 0
    assert cli("sigprop", "add", str(files / "fire.json"))[0] == 0
    return cli


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage:" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 2
    assert "usage:" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bimcore"], capture_output=True, text=True, cwd=ROOT)
    assert proc.returncode == 2 and "usage:" in proc.stderr and proc.stdout == ""


def test_identify_json():
    proc = subprocess.run(
        [sys.executable, "-m", "bimcore", "identify", "corpus/step/minimal.ifc", "--json"],
        capture_output=True,
        text=True,
        cwd=ROOT,
    )
    assert proc.returncode == 0
    data = json.loads(proc.stdout)
    assert data["verdict"] == "identified" and data["format"] == "STEP-SPF"


def test_identify_stub(cli):
    data = cli.json("identify", str(CORPUS / "step" / "minimal.ifc"), "--stub")
    assert data["stub"]["status"] == "draft"
    assert data["stub"]["format_version_label"] == "IFC4"


def test_validate_bad_record(loaded, workspace, monkeypatch):
    monkeypatch.delenv("BIMCORE_STORE", raising=False)
    code, out, err = loaded("record", "validate", str(workspace / "files" / "bad.json"), store=False)
    assert code == 1 and "missing-required" in out
    report = loaded.json("record", "validate", str(workspace / "files" / "bad.json"), expect=1)
    assert [v["code"] for v in report["violations"]] == ["missing-required"]


def test_rejected_add_lists_violations(cli, workspace):
    data = cli.json("record", "add", str(workspace / "files" / "bad.json"), expect=1)
    assert data["error"] == "rejected" and data["violations"]


def test_store_from_environment(loaded, monkeypatch):
    monkeypatch.setenv("BIMCORE_STORE", str(loaded.store))
    code, out, _ = loaded("record", "list", "--json", store=False)
    assert code == 0 and {r["record_id"] for r in json.loads(out)} == {"ifc", "tiff", "txt"}


def test_missing_store_is_usage_error(cli, monkeypatch):
    monkeypatch.delenv("BIMCORE_STORE", raising=False)
    assert cli("record", "list", store=False)[0] == 2


def test_record_get_versions(loaded, workspace):
    loaded("record", "add", str(workspace / "files" / "txt.json"))
    assert loaded.json("record", "get", "txt")["version"] == 2
    assert loaded.json("record", "get", "txt", "--version", "1")["version"] == 1
    data = loaded.json("record", "get", "nothing", expect=1)
    assert data["error"] == "not-found"


def test_verify_format_exit_codes(cli, tmp_path):
    assert cli("verify-format", str(CORPUS / "step" / "minimal.ifc"))[0] == 0
    broken = tmp_path / "broken.ifc"
    broken.write_bytes((CORPUS / "step" / "minimal.ifc").read_bytes()[:-20])
    report = cli.json("verify-format", str(broken), expect=1)
    assert report["ok"] is False


def test_full_workflow(loaded, workspace):
    aip = loaded.json("ingest", str(workspace / "sip"), "--dest", str(workspace / "aips"), "--aip-id", "aip-1")
    links = {o["path"]: [r["record_id"] for r in o["ri_links"]] for o in aip["objects"]}
    assert links == {"model/station.ifc": ["ifc"], "plan.tif": ["tiff"]}
    aip_dir = aip["path"]
    assert loaded.json("sigprop", "attach", aip_dir, "fire-compartments")["significant_property_links"] == [
        "fire-compartments"
    ]
    report = loaded.json("aip", "verify", aip_dir)
    assert report["ok"] and report["context"]["significant_property_links"] == ["fire-compartments"]
    dip = loaded.json("dip", "build", aip_dir, "--dest", str(workspace / "dips"), "--format", "IFC")
    assert dip["objects"] == ["model/station.ifc"]
    (Path(aip_dir) / "objects" / "plan.tif").write_bytes(b"changed")
    report = loaded.json("aip", "verify", aip_dir, expect=1)
    fixity = next(c for c in report["checks"] if c["name"] == "fixity")
    assert fixity["paths"] == ["objects/plan.tif"]


def test_export_import(loaded, workspace):
    loaded.json("record", "export", str(workspace / "export"))
    other = Cli(loaded.capsys, workspace / "other")
    assert other.json("record", "import", str(workspace / "export")) == {"imported": 3}
    assert other.json("record", "get", "ifc") == loaded.json("record", "get", "ifc")


def _matrix(workspace: Path) -> list[tuple[list[str], set[int]]]:
    files = workspace / "files"
    aips = workspace / "aips"
    return [
        (["record", "add", str(files / "txt.json")], {0}),
        (["record", "add", str(files / "bad.json")], {1}),
        (["record", "get", "ifc"], {0}),
        (["record", "get", "ghost"], {1}),
        (["record", "list"], {0}),
        (["record", "validate", str(files / "ifc.json")], {0}),
        (["record", "validate", str(files / "bad.json")], {1}),
        (["record", "validate", str(files / "missing.json")], {1}),
        (["record", "export", str(workspace / "exports" / "x")], {0, 1}),
        (["record", "import", str(workspace / "nowhere")], {1}),
        (["identify", str(CORPUS / "tiff" / "plan-be.tif")], {0}),
        (["identify", str(CORPUS / "unknown" / "random.bin"), "--stub"], {1}),
        (["identify", str(files / "missing")], {1}),
        (["verify-format", str(CORPUS / "step" / "part.stp")], {0}),
        (["verify-format", str(CORPUS / "pdf" / "fire-plan.pdf")], {1}),
        (["ingest", str(workspace / "sip"), "--dest", str(aips)], {0}),
        (["ingest", str(workspace / "nowhere"), "--dest", str(aips)], {1}),
        (["aip", "verify", str(aips / "fixed")], {0}),
        (["aip", "verify", str(workspace / "nowhere")], {1}),
        (["dip", "build", str(aips / "fixed"), "--dest", str(workspace / "dips")], {0}),
        (["dip", "build", str(aips / "fixed"), "--dest", str(workspace / "dips"), "--format", "PDF"], {1}),
        (["sigprop", "add", str(files / "fire.json")], {0}),
        (["sigprop", "attach", str(aips / "fixed"), "fire-compartments"], {0}),
        (["sigprop", "attach", str(aips / "fixed"), "ghost"], {1}),
        (["context", "add", str(files / "permit.json")], {0}),
        (["baseline", "set", "txt"], {0}),
        (["baseline", "set", "txt", "later"], {0}),
    ] + [(["query", "--view", role, *terms], {0}) for role in ROLES for terms in ([], ["fire"])]


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture, HealthCheck.too_slow])
@given(st.data())
def test_json_output_for_every_subcommand(loaded, workspace, data):
    """Any sequence of commands keeps stdout parseable as a single JSON document."""
    if not (workspace / "aips" / "fixed").exists():
        loaded("ingest", str(workspace / "sip"), "--dest", str(workspace / "aips"), "--aip-id", "fixed")
    matrix = _matrix(workspace)
    steps = data.draw(st.lists(st.sampled_from(range(len(matrix))), min_size=1, max_size=4))
    for i in steps:
        argv, codes = matrix[i]
        code, out, err = loaded(*argv, "--json")
        assert code in codes, (argv, err)
        parsed = json.loads(out)
        if code and "error" in parsed:
            assert err.startswith("bimcore: ")
        elif code:
            # a failed check prints its report rather than an error object
            assert parsed.get("valid") is False or parsed.get("ok") is False


def test_every_subcommand_covered(workspace):
    """The matrix names every leaf subcommand except serve, which is exercised over HTTP."""
    from bimcore.cli import build_parser

    parser = build_parser()
    leaves = set()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        nested = [a for a in p._actions if getattr(a, "choices", None) and isinstance(a.choices, dict)]
        leaves |= {f"{name} {n}" for n in nested[0].choices} if nested else {name}
    covered = {" ".join(argv[:2]) if argv[0] in {"record", "aip", "dip", "sigprop", "context", "baseline"} else argv[0]
               for argv, _ in _matrix(workspace)}
    assert leaves - covered == {"serve"}


@pytest.mark.parametrize("role", ROLES)
def test_query_matches_store_api(loaded, role):
    from bimcore.store import QueryView

    store = RegistryStore(loaded.store, read_only=True)
    expected = [s.to_dict() for s in store.query(QueryView.for_role(role), "fire")]
    assert loaded.json("query", "--view", role, "fire") == expected


def test_query_bad_view(cli):
    assert cli("query", "--view", "architect")[0] == 2
