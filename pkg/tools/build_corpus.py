"""Regenerate the exemplar corpus under ``corpus/``.

Output is deterministic: fixed timestamps, seeded random bytes and
reportlab's invariant mode, so rerunning leaves the committed files
unchanged. ``corpus/expected.json`` records what each file was built as.

    python tools/build_corpus.py [--out corpus]
"""

from __future__ import annotations

import argparse
import io
import json
import random
import zipfile
from pathlib import Path

from PIL import Image
from reportlab.lib.pagesizes import A4
from reportlab.pdfgen import canvas

FIXED_ZIP_TIME = (2024, 1, 1, 0, 0, 0)

IFC4_MINIMAL = """ISO-10303-21;
HEADER;
FILE_DESCRIPTION(('ViewDefinition [ReferenceView_V1.2]'),'2;1');
FILE_NAME('minimal.ifc','2024-01-01T00:00:00',('Architect'),('Studio'),'bimcore corpus','bimcore corpus','');
FILE_SCHEMA(('IFC4'));
ENDSEC;
DATA;
#1=IFCPROJECT('0YvctVUKr0kugbFTf53O9L',$,'Fire station',$,$,$,$,$,$);
#2=IFCBUILDING('2FCZDorxHDT8NI01kdXi8P',$,'Station',$,$,$,$,$,.ELEMENT.,$,$,$);
#3=IFCRELAGGREGATES('1kTvXnbbzCWw8lcMd1dR4o',$,$,$,#1,(#2));
ENDSEC;
END-ISO-10303-21;
"""

IFC2X3 = """ISO-10303-21;
HEADER;
FILE_DESCRIPTION(('ViewDefinition [CoordinationView_V2.0]'),'2;1');
FILE_NAME('ifc2x3.ifc','2011-05-17T09:30:00',('Engineer'),('Office'),'Exporter 9.1','Exporter 9.1','');
FILE_SCHEMA(('IFC2X3'));
ENDSEC;
DATA;
#1=IFCPERSON($,'Doe','Jane',$,$,$,$,$);
#2=IFCORGANIZATION($,'Office',$,$,$);
#3=IFCPROJECT('3MD_HkJ6X2EwpfIbCFm0g_',$,'Archive building',$,$,$,$,$,$);
ENDSEC;
END-ISO-10303-21;
"""

IFC4_COMMENTED = """ISO-10303-21;
/* exported for long-term preservation tests */
HEADER;
FILE_DESCRIPTION(('ViewDefinition [DesignTransferView]', 'Comment: it''s quoted'),'2;1');
FILE_NAME('commented.ifc','2023-06-30T12:00:00',('Planner'),('Agency'),'Tool \\X2\\00E4\\X0\\','Tool','');
FILE_SCHEMA(('IFC4'));
ENDSEC;
/* geometry omitted */
DATA;
#10=IFCCARTESIANPOINT((0.,0.,0.));
#11=IFCDIRECTION((0.,0.,1.));
#12=IFCAXIS2PLACEMENT3D(#10,#11,$);
#20=(IFCNAMEDUNIT(*,.LENGTHUNIT.)IFCSIUNIT(*,.LENGTHUNIT.,.MILLI.,.METRE.));
ENDSEC;
END-ISO-10303-21;
"""

AP214_PART = """ISO-10303-21;
HEADER;
FILE_DESCRIPTION(('bracket'),'2;1');
FILE_NAME('part.stp','2020-02-02T02:02:02',('Designer'),('Works'),'CAD 1.0','CAD 1.0','');
FILE_SCHEMA(('AUTOMOTIVE_DESIGN { 1 0 10303 214 1 1 1 1 }'));
ENDSEC;
DATA;
#1=APPLICATION_CONTEXT('automotive design');
#2=PRODUCT('bracket','bracket','',(#3));
#3=PRODUCT_CONTEXT('',#1,'mechanical');
ENDSEC;
END-ISO-10303-21;
"""

IFCXML_ROOT = """<?xml version="1.0" encoding="UTF-8"?>
<ifcXML xmlns="http://www.buildingsmart-tech.org/ifcXML/IFC4/final" header="">
  <IfcProject id="i1" GlobalId="0YvctVUKr0kugbFTf53O9L" Name="Fire station"/>
</ifcXML>
"""

ISO_10303_28_ROOT = """<?xml version="1.0" encoding="UTF-8"?>
<ex:iso_10303_28 xmlns:ex="urn:iso.org:standard:10303:part(28):version(2):xmlschema:common" version="2.0">
  <ex:iso_10303_28_header><ex:name>model.ifcxml</ex:name></ex:iso_10303_28_header>
  <uos id="uos_1"/>
</ex:iso_10303_28>
"""

PLAIN_XML = """<?xml version="1.0" encoding="UTF-8"?>
<catalogue><item>drawing register</item></catalogue>
"""

HPGL = "IN;SP1;PU0,0;PD1000,0,1000,1000,0,1000,0,0;PU;SP0;\n"


def _zip_bytes(entries: dict[str, bytes]) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, data in entries.items():
            zf.writestr(zipfile.ZipInfo(name, FIXED_ZIP_TIME), data, compress_type=zipfile.ZIP_DEFLATED)
    return buf.getvalue()


def _tiff_bytes(big_endian: bool) -> bytes:
    # A small ground-plan raster. Pillow picks byte order from the mode.
    mode = "I;16B" if big_endian else "L"
    image = Image.new(mode, (32, 24), 0)
    for x in range(2, 30):
        image.putpixel((x, 2), 255)
        image.putpixel((x, 21), 255)
    for y in range(2, 22):
        image.putpixel((2, y), 255)
        image.putpixel((29, y), 255)
    buf = io.BytesIO()
    image.save(buf, format="TIFF")
    return buf.getvalue()


def _pdf_bytes() -> bytes:
    buf = io.BytesIO()
    pdf = canvas.Canvas(buf, pagesize=A4, invariant=1)
    pdf.setTitle("Fire protection plan")
    pdf.drawString(72, 770, "Fire protection plan, ground floor")
    pdf.rect(72, 400, 300, 300)
    pdf.showPage()
    pdf.save()
    return buf.getvalue()


def build(out: Path) -> list[dict[str, object]]:
    rng = random.Random(20240101)
    files: list[tuple[str, bytes, dict[str, object]]] = [
        ("step/minimal.ifc", IFC4_MINIMAL.encode("latin-1"),
         {"verdict": "identified", "format": "STEP-SPF", "signature_id": "step-spf", "schema": "IFC4"}),
        ("step/ifc2x3.ifc", IFC2X3.encode("latin-1"),
         {"verdict": "identified", "format": "STEP-SPF", "signature_id": "step-spf", "schema": "IFC2X3"}),
        ("step/commented.ifc", IFC4_COMMENTED.encode("latin-1"),
         {"verdict": "identified", "format": "STEP-SPF", "signature_id": "step-spf", "schema": "IFC4"}),
        ("step/part.stp", AP214_PART.encode("latin-1"),
         {"verdict": "identified", "format": "STEP-SPF", "signature_id": "step-spf",
          "schema": "AUTOMOTIVE_DESIGN { 1 0 10303 214 1 1 1 1 }"}),
        ("ifcxml/model.ifcxml", IFCXML_ROOT.encode("utf-8"),
         {"verdict": "identified", "format": "ifcXML", "signature_id": "ifcxml", "xml_root": "ifcXML"}),
        ("ifcxml/model-part28.ifcxml", ISO_10303_28_ROOT.encode("utf-8"),
         {"verdict": "identified", "format": "ifcXML", "signature_id": "ifcxml", "xml_root": "iso_10303_28"}),
        ("ifczip/model.ifczip", _zip_bytes({"model.ifc": IFC4_MINIMAL.encode("latin-1")}),
         {"verdict": "identified", "format": "ifcZIP", "signature_id": "ifczip", "inner": "model.ifc"}),
        ("tiff/plan-le.tif", _tiff_bytes(big_endian=False),
         {"verdict": "identified", "format": "TIFF", "signature_id": "tiff-le", "byte_order": "II"}),
        ("tiff/plan-be.tif", _tiff_bytes(big_endian=True),
         {"verdict": "identified", "format": "TIFF", "signature_id": "tiff-be", "byte_order": "MM"}),
        ("pdf/fire-plan.pdf", _pdf_bytes(),
         {"verdict": "identified", "format": "PDF", "signature_id": "pdf"}),
        ("zip/drawings.zip", _zip_bytes({"readme.txt": b"drawing register\n"}),
         {"verdict": "identified", "format": "ZIP", "signature_id": "zip"}),
        ("xml/catalogue.xml", PLAIN_XML.encode("utf-8"),
         {"verdict": "identified", "format": "XML", "signature_id": "xml", "xml_root": "catalogue"}),
        ("hpgl/plot.plt", HPGL.encode("ascii"),
         {"verdict": "tentative", "format": "HP-GL", "signature_id": "hpgl"}),
        ("unknown/random.bin", bytes(rng.getrandbits(8) for _ in range(4096)),
         {"verdict": "unknown", "format": None, "signature_id": None}),
        ("unknown/empty.dat", b"",
         {"verdict": "unknown", "format": None, "signature_id": None}),
        ("unknown/notes.txt", b"Site visit notes: hydrant positions checked.\n",
         {"verdict": "unknown", "format": None, "signature_id": None}),
    ]
    manifest = []
    for rel, data, expected in files:
        target = out / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
        manifest.append({"path": rel, **expected})
    (out / "expected.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "corpus")
    args = parser.parse_args()
    for entry in build(args.out):
        print(entry["path"])


if __name__ == "__main__":
    main()
