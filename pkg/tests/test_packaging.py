import hashlib
import json
import re
import shutil
import tempfile
from pathlib import Path

import networkx as nx
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from bimcore.ident import builtin_signatures
from bimcore.model import ContextEntry, ContextKind, ContractViolation, NotFound, RecordStatus
from bimcore.packaging import (
    EmptyDipError,
    IngestError,
    SubmissionPackage,
    attach_significant_properties,
    build_dip,
    compute_ri_closure,
    ingest,
    load_aip,
    load_sip,
    resolve_closure,
    select_all,
    select_by_format,
    verify_aip,
)
from bimcore.store import RegistryStore

from helpers import CORPUS, fire_property, ifc_record, make_record, tiff_record

SIGS = builtin_signatures()


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def store(tmp_path):
    s = RegistryStore(tmp_path / "store", durable=False)
    s.put_record(make_record("txt", "Plain text"), "curator")
    s.put_record(ifc_record(requires=("txt",)), "curator")
    s.put_record(tiff_record(), "curator")
    s.set_baseline(["txt"], "curator")
    s.put_property(fire_property(), "curator")
    return s


def make_sip(root: Path, files: dict[str, bytes | Path], **meta) -> SubmissionPackage:
    payload = root / "payload"
    for rel, content in files.items():
        target = payload / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, Path):
            shutil.copyfile(content, target)
        else:
            target.write_bytes(content)
    if meta:
        (root / "sip.json").write_text(json.dumps(meta))
    return load_sip(root)


@pytest.fixture
def scenario(tmp_path, store):
    sip = make_sip(
        tmp_path / "sip",
        {"model/station.ifc": CORPUS / "step" / "minimal.ifc", "plans/ground-floor.tif": CORPUS / "tiff" / "plan-le.tif"},
        sip_id="fire-station-2024",
        producer_metadata={"producer": "architects"},
    )
    return ingest(sip, store, SIGS, tmp_path / "aips", aip_id="aip-station")


class TestIngest:
    def test_scenario_links(self, scenario):
        ifc = scenario.object("model/station.ifc")
        assert ifc.identification.verdict == "identified"
        assert ifc.file_schema == ("IFC4",)
        assert [(r.record_id, r.version) for r in ifc.ri_links] == [("ifc", 1)]
        assert ifc.ri_closure["nodes"] == ["ifc", "txt"]
        assert ifc.ri_closure["unresolved"] == []
        tif = scenario.object("plans/ground-floor.tif")
        assert [r.record_id for r in tif.ri_links] == ["tiff"]
        assert not tif.unresolved_ri

    def test_layout(self, scenario):
        root = scenario.path
        assert sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file()) == [
            "manifest-sha256.txt",
            "metadata/aip.json",
            "objects/model/station.ifc",
            "objects/plans/ground-floor.tif",
        ]
        assert not list(root.parent.glob(".*partial"))

    def test_manifest_bytes(self, scenario):
        raw = (scenario.path / "manifest-sha256.txt").read_bytes()
        lines = raw.decode().split("\n")
        assert lines[-1] == "" and b"\r" not in raw
        paths = []
        for line in lines[:-1]:
            m = re.fullmatch(r"([0-9a-f]{64})  (.+)", line)
            assert m
            assert m.group(1) == sha256(scenario.path / m.group(2))
            paths.append(m.group(2))
        assert paths == sorted(paths)

    def test_metadata_fields(self, scenario):
        meta = json.loads((scenario.path / "metadata" / "aip.json").read_text())
        assert meta["aip_id"] == "aip-station"
        assert meta["producer_metadata"] == {"producer": "architects"}
        [event] = meta["pdi"]["provenance"]
        assert event["event"] == "ingest" and event["agent"].startswith("bimcore ") and event["timestamp"].endswith("Z")
        assert meta["pdi"]["reference"]["objects"]["model/station.ifc"] == "aip:aip-station/model/station.ifc"
        assert {f["path"] for f in meta["pdi"]["fixity"]} == {"objects/model/station.ifc", "objects/plans/ground-floor.tif"}
        record_context = {(c["record_id"], c["element_id"]) for c in meta["pdi"]["context"] if c["source"] == "record"}
        assert record_context == {("ifc", 19), ("ifc", 20)}
        assert load_aip(scenario.path).to_dict() == meta

    def test_verifies_clean(self, scenario):
        report = verify_aip(scenario.path)
        assert report.ok, report.to_dict()

    def test_unknown_format_kept(self, tmp_path, store):
        sip = make_sip(tmp_path / "sip", {"blob.bin": (CORPUS / "unknown" / "random.bin")})
        aip = ingest(sip, store, SIGS, tmp_path / "aips")
        [obj] = aip.content_information
        assert obj.identification.verdict == "unknown"
        assert obj.unresolved_ri and obj.ri_links == ()
        assert obj.digest == sha256(CORPUS / "unknown" / "random.bin")
        assert verify_aip(aip.path).ok

    def test_identified_without_record(self, tmp_path, store):
        sip = make_sip(tmp_path / "sip", {"doc.pdf": CORPUS / "pdf" / "fire-plan.pdf"})
        [obj] = ingest(sip, store, SIGS, tmp_path / "aips").content_information
        assert obj.identification.verdict == "identified" and obj.unresolved_ri

    def test_schema_label_beats_format_name(self, tmp_path, store):
        store.put_record(make_record("ifc2x3", "IFC", label="IFC2X3"), "c")
        sip = make_sip(tmp_path / "sip", {"a.ifc": CORPUS / "step" / "ifc2x3.ifc", "b.ifc": CORPUS / "step" / "minimal.ifc"})
        aip = ingest(sip, store, SIGS, tmp_path / "aips")
        assert [r.record_id for r in aip.object("a.ifc").ri_links] == ["ifc2x3"]
        assert [r.record_id for r in aip.object("b.ifc").ri_links] == ["ifc"]

    def test_withdrawn_record_not_linked(self, tmp_path, store):
        store.withdraw("tiff", "c")
        sip = make_sip(tmp_path / "sip", {"p.tif": CORPUS / "tiff" / "plan-be.tif"})
        [obj] = ingest(sip, store, SIGS, tmp_path / "aips").content_information
        assert obj.unresolved_ri

    def test_empty_sip_rejected(self, tmp_path, store):
        (tmp_path / "sip" / "payload").mkdir(parents=True)
        with pytest.raises(ContractViolation):
            ingest(load_sip(tmp_path / "sip"), store, SIGS, tmp_path / "aips")

    def test_unreadable_file_aborts(self, tmp_path, store):
        sip = make_sip(tmp_path / "sip", {"ok.txt": b"fine"})
        (sip.payload / "gone.ifc").symlink_to(tmp_path / "nowhere")
        with pytest.raises(IngestError) as err:
            ingest(sip, store, SIGS, tmp_path / "aips", aip_id="x")
        assert err.value.paths == ["gone.ifc"]
        assert not (tmp_path / "aips" / "x").exists()

    def test_existing_aip_not_overwritten(self, tmp_path, store, scenario):
        sip = make_sip(tmp_path / "sip2", {"a.txt": b"a"})
        with pytest.raises(ContractViolation):
            ingest(sip, store, SIGS, tmp_path / "aips", aip_id="aip-station")

    def test_unhealthy_store_refused(self, tmp_path, store):
        (store.root / "records" / "txt" / "1.json").unlink()
        sip = make_sip(tmp_path / "sip", {"a.txt": b"a"})
        with pytest.raises(ContractViolation):
            ingest(sip, store, SIGS, tmp_path / "aips")

    def test_declared_context(self, tmp_path, store):
        store.put_context_entry(ContextEntry("permit", ContextKind.BUILDING_SPECIFIC, "permit set"), "c")
        inline = ContextEntry("site", ContextKind.BUILDING_SPECIFIC, "site survey 2023")
        sip = make_sip(tmp_path / "sip", {"a.txt": b"a"}, declared_context=["permit", "ghost", inline.to_dict()])
        aip = ingest(sip, store, SIGS, tmp_path / "aips")
        ctx = [c for c in aip.pdi.context if c["source"] != "record"]
        assert ctx == [
            {"source": "registry", "entry_id": "permit", "resolved": True},
            {"source": "registry", "entry_id": "ghost", "resolved": False},
            {"source": "inline", "entry": inline.to_dict()},
        ]

    def test_directory_without_payload_subdir(self, tmp_path, store):
        (tmp_path / "flat").mkdir()
        (tmp_path / "flat" / "a.ifc").write_bytes((CORPUS / "step" / "minimal.ifc").read_bytes())
        sip = load_sip(tmp_path / "flat")
        assert sip.sip_id == "flat" and sip.payload_files() == ["a.ifc"]


class TestVerify:
    def test_flipped_byte_names_file(self, scenario):
        path = scenario.path / "objects" / "plans" / "ground-floor.tif"
        data = bytearray(path.read_bytes())
        data[100] ^= 0x01
        path.write_bytes(bytes(data))
        check = verify_aip(scenario.path).check("fixity")
        assert not check.passed and check.paths == ("objects/plans/ground-floor.tif",)

    def test_added_file(self, scenario):
        (scenario.path / "objects" / "extra.txt").write_text("smuggled")
        report = verify_aip(scenario.path)
        assert report.check("completeness").paths == ("objects/extra.txt",)
        assert report.check("fixity").passed

    def test_removed_file(self, scenario):
        (scenario.path / "objects" / "model" / "station.ifc").unlink()
        assert verify_aip(scenario.path).check("completeness").paths == ("objects/model/station.ifc",)

    def test_metadata_edit_detected(self, scenario):
        meta = scenario.path / "metadata" / "aip.json"
        meta.write_text(meta.read_text().replace("architects", "someone else"))
        assert verify_aip(scenario.path).check("fixity").paths == ("metadata/aip.json",)

    def test_malformed_manifest(self, scenario):
        manifest = scenario.path / "manifest-sha256.txt"
        manifest.write_text(manifest.read_text().replace("\n", "\r\n"))
        assert not verify_aip(scenario.path).check("manifest-format").passed

    def test_silent_object_fails_ri_check(self, scenario):
        pkg = load_aip(scenario.path)
        obj = pkg.object("plans/ground-floor.tif")
        obj.ri_links = ()
        obj.unresolved_ri = False
        from bimcore.packaging import _write_metadata

        _write_metadata(pkg)
        report = verify_aip(scenario.path)
        assert report.check("ri-links").paths == ("plans/ground-floor.tif",)
        assert report.check("fixity").passed

    def test_missing_metadata(self, scenario):
        (scenario.path / "metadata" / "aip.json").unlink()
        report = verify_aip(scenario.path)
        assert report.check("metadata").status == "fail"
        assert report.check("provenance").status == "skip"


class TestSignificantProperties:
    def test_attach_is_idempotent(self, scenario, store):
        attach_significant_properties(scenario.path, ["fire-compartments"], store)
        first = (scenario.path / "metadata" / "aip.json").read_bytes()
        pkg = attach_significant_properties(scenario.path, ["fire-compartments"], store)
        assert (scenario.path / "metadata" / "aip.json").read_bytes() == first
        assert pkg.significant_property_links == ["fire-compartments"]
        events = [e["event"] for e in pkg.pdi.provenance]
        assert events == ["ingest", "attach-significant-properties"]

    def test_link_visible_in_report(self, scenario, store):
        attach_significant_properties(scenario.path, ["fire-compartments"], store)
        report = verify_aip(scenario.path)
        assert report.ok
        on_disk = json.loads((scenario.path / "metadata" / "aip.json").read_text())
        assert report.context["significant_property_links"] == on_disk["significant_property_links"] == [
            "fire-compartments"
        ]

    def test_unknown_property_leaves_aip_untouched(self, scenario, store):
        before = {p: p.read_bytes() for p in scenario.path.rglob("*") if p.is_file()}
        with pytest.raises(NotFound):
            attach_significant_properties(scenario.path, ["fire-compartments", "ghost"], store)
        assert {p: p.read_bytes() for p in scenario.path.rglob("*") if p.is_file()} == before

    def test_attach_does_not_hide_tampering(self, scenario, store):
        path = scenario.path / "objects" / "model" / "station.ifc"
        path.write_bytes(path.read_bytes() + b"\n")
        attach_significant_properties(scenario.path, ["fire-compartments"], store)
        assert verify_aip(scenario.path).check("fixity").paths == ("objects/model/station.ifc",)


class TestDip:
    def test_ifc_selection(self, scenario, store, tmp_path):
        dip = build_dip(scenario.path, select_by_format("IFC"), store, tmp_path / "dips", dip_id="dip-1")
        assert [o["path"] for o in dip.objects] == ["model/station.ifc"]
        copied = dip.path / "objects" / "model" / "station.ifc"
        assert sha256(copied) == scenario.object("model/station.ifc").digest
        assert not (dip.path / "objects" / "plans").exists()
        rendering = (dip.path / "ri" / "ifc-v1.txt").read_text()
        for eid in (1, 2, 7, 11, 18, 19, 20):
            assert f"[{eid}]" in rendering
        for eid in (3, 8, 16, 17):
            assert f"[{eid}]" not in rendering

    def test_select_all_single_object(self, tmp_path, store):
        sip = make_sip(tmp_path / "sip", {"m.ifc": CORPUS / "step" / "minimal.ifc"})
        aip = ingest(sip, store, SIGS, tmp_path / "aips")
        dip = build_dip(aip.path, select_all, store, tmp_path / "dips")
        assert len(dip.objects) == 1 and dip.renderings == ["ri/ifc-v1.txt"]

    def test_dip_manifest_and_conservativity(self, scenario, store, tmp_path):
        dip = build_dip(scenario.path, select_all, store, tmp_path / "dips")
        aip_digests = {sha256(p) for p in (scenario.path / "objects").rglob("*") if p.is_file()}
        for line in (dip.path / "manifest-sha256.txt").read_text().splitlines():
            digest, rel = line.split("  ", 1)
            assert sha256(dip.path / rel) == digest
            if rel.startswith("objects/"):
                assert digest in aip_digests

    def test_empty_selection(self, scenario, store, tmp_path):
        with pytest.raises(EmptyDipError):
            build_dip(scenario.path, select_by_format("PDF"), store, tmp_path / "dips")
        assert not (tmp_path / "dips").exists() or not any((tmp_path / "dips").iterdir())

    def test_refuses_damaged_aip(self, scenario, store, tmp_path):
        (scenario.path / "objects" / "stray").write_text("x")
        with pytest.raises(ContractViolation):
            build_dip(scenario.path, select_all, store, tmp_path / "dips")


# -- RI closure ----------------------------------------------------------------


class TestClosureExamples:
    def put(self, store, edges, nodes):
        store.put_records(
            [make_record(n, status=RecordStatus.DRAFT, requires=tuple(edges.get(n, ()))) for n in nodes], "t"
        )

    def test_baseline_root(self, tmp_path):
        store = RegistryStore(tmp_path, durable=False)
        self.put(store, {}, ["A"])
        closure = compute_ri_closure(["A"], store, {"A"})
        assert closure.nodes == {"A"} and closure.unresolved == set()

    def test_chain_to_baseline(self, tmp_path):
        store = RegistryStore(tmp_path, durable=False)
        self.put(store, {"A": ["B"], "B": ["C"]}, ["A", "B", "C"])
        closure = compute_ri_closure(["A"], store, {"C"})
        assert closure.nodes == {"A", "B", "C"} and closure.unresolved == set()
        assert closure.edges == (("A", "requires-ri", "B"), ("B", "requires-ri", "C"))

    def test_cycle(self, tmp_path):
        store = RegistryStore(tmp_path, durable=False)
        self.put(store, {"A": ["B"], "B": ["A"]}, ["A", "B"])
        closure = compute_ri_closure(["A"], store, set())
        assert closure.nodes == {"A", "B"} and closure.unresolved == {"A", "B"}

    def test_leaf_without_requirements(self, tmp_path):
        store = RegistryStore(tmp_path, durable=False)
        self.put(store, {"A": ["B", "C"]}, ["A", "B", "C"])
        closure = compute_ri_closure(["A"], store, {"C"})
        assert closure.unresolved == {"A", "B"}

    def test_unknown_root(self, tmp_path):
        with pytest.raises(NotFound):
            compute_ri_closure(["ghost"], RegistryStore(tmp_path, durable=False))

    def test_store_baseline_default(self, store):
        assert compute_ri_closure(["ifc"], store).unresolved == set()
        assert compute_ri_closure(["ifc"], store, baseline_set=()).unresolved == {"ifc", "txt"}


def closure_oracle(edges: dict[str, list[str]], roots: list[str], baseline: set[str]) -> tuple[set[str], set[str]]:
    """Reachability and resolvability computed with networkx.

    Baseline nodes keep no outgoing edges. A node is unresolved exactly
    when it can reach a cycle or a non-baseline dead end.
    """
    graph = nx.DiGraph()
    graph.add_nodes_from(roots)
    for src, targets in edges.items():
        if src in baseline:
            continue
        for dst in targets:
            graph.add_edge(src, dst)
    nodes = set(roots)
    for r in roots:
        nodes |= nx.descendants(graph, r)
    sub = graph.subgraph(nodes).copy()
    bad = {n for n in sub if sub.out_degree(n) == 0 and n not in baseline}
    for component in nx.strongly_connected_components(sub):
        if len(component) > 1 or any(sub.has_edge(n, n) for n in component):
            bad |= component
    sink = object()
    sub.add_edges_from((n, sink) for n in bad)
    unresolved = (nx.ancestors(sub, sink) & nodes) if bad else set()
    return nodes, unresolved


@st.composite
def requirement_graphs(draw, max_nodes=60):
    n = draw(st.integers(1, max_nodes))
    names = [f"r{i}" for i in range(n)]
    edges = {
        name: draw(st.lists(st.sampled_from(names + ["missing"]), max_size=3, unique=True)) for name in names
    }
    roots = draw(st.lists(st.sampled_from(names), min_size=1, max_size=3, unique=True))
    baseline = draw(st.sets(st.sampled_from(names), max_size=max(1, n // 4)))
    return edges, roots, baseline


@settings(max_examples=200, deadline=None)
@given(requirement_graphs())
def test_resolve_closure_matches_oracle(graph):
    edges, roots, baseline = graph
    closure = resolve_closure(roots, lambda n: edges.get(n), baseline)
    nodes, unresolved = closure_oracle(edges, roots, baseline)
    assert closure.nodes == nodes
    assert closure.unresolved == unresolved
    for node in closure.nodes - baseline:
        assert node in closure.unresolved or any(e[0] == node for e in closure.edges)


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(requirement_graphs(max_nodes=40))
def test_compute_ri_closure_against_store(graph):
    edges, roots, baseline = graph
    with tempfile.TemporaryDirectory() as tmp:
        store = RegistryStore(tmp, durable=False)
        store.put_records(
            [make_record(n, status=RecordStatus.DRAFT, requires=tuple(t)) for n, t in edges.items()], "t"
        )
        closure = compute_ri_closure(roots, store, baseline)
    nodes, unresolved = closure_oracle(edges, roots, baseline)
    assert (closure.nodes, closure.unresolved) == (nodes, unresolved)


# -- package properties ---------------------------------------------------------

_segment = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789-_. ", min_size=1, max_size=8).filter(
    lambda s: s.strip(" .") == s and s not in (".", "..")
)
_rel_paths = st.lists(_segment, min_size=1, max_size=4).map("/".join)


@st.composite
def payload_trees(draw, max_files=50):
    paths = draw(st.lists(_rel_paths, min_size=1, max_size=max_files, unique=True))
    # no path may be a directory prefix of another
    chosen: list[str] = []
    for p in paths:
        if not any(p.startswith(q + "/") or q.startswith(p + "/") for q in chosen):
            chosen.append(p)
    return {p: draw(st.binary(min_size=0, max_size=200)) for p in chosen}


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
@given(payload_trees())
def test_ingest_totality_and_fixity(store, tree):
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        aip = ingest(make_sip(root / "sip", tree), store, SIGS, root / "aips")
        fixity = {f["path"] for f in aip.pdi.fixity}
        manifest = {line.split("  ", 1)[1] for line in (aip.path / "manifest-sha256.txt").read_text().splitlines()}
        expected = {f"objects/{p}" for p in tree}
        assert fixity == expected == manifest - {"metadata/aip.json"}
        assert verify_aip(aip.path).ok


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
@given(payload_trees(max_files=10).filter(lambda t: any(t.values())), st.data())
def test_any_single_byte_mutation_detected(store, tree, data):
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        aip = ingest(make_sip(root / "sip", tree), store, SIGS, root / "aips")
        victim = data.draw(st.sampled_from(sorted(p for p, b in tree.items() if b)))
        pos = data.draw(st.integers(0, len(tree[victim]) - 1))
        delta = data.draw(st.integers(1, 255))
        path = aip.path / "objects" / victim
        raw = bytearray(path.read_bytes())
        raw[pos] ^= delta
        path.write_bytes(bytes(raw))
        report = verify_aip(aip.path)
        assert not report.ok
        assert report.check("fixity").paths == (f"objects/{victim}",)
