"""ISO 10303-21 (STEP physical file) header parsing and syntax verification.

Offsets reported in errors are byte offsets into the original input. The
input is decoded as latin-1 so characters and bytes line up one-to-one.
"""

from __future__ import annotations

import re
from collections.abc import Iterator
from dataclasses import dataclass
from typing import Any

from bimcore.report import FAIL, PASS, SKIP, Check, VerificationReport

LEADING_TOKEN = b"ISO-10303-21;"
TRAILER_KEYWORD = "END-ISO-10303-21"

_TOKEN_RE = re.compile(
    r"""
     (?P<ws>\s+)
    |(?P<comment>/\*.*?\*/)
    |(?P<string>'[^']*(?:''[^']*)*')
    |(?P<binary>"[0-9A-Fa-f]*")
    |(?P<ref>\#\d+)
    |(?P<enum>\.[A-Za-z_][A-Za-z0-9_]*\.)
    |(?P<number>[+-]?\d+(?:\.\d*)?(?:[Ee][+-]?\d+)?)
    |(?P<keyword>(?:END-)?ISO-10303-21|!?[A-Za-z_][A-Za-z0-9_]*)
    |(?P<punct>[();,=$*])
    """,
    re.VERBOSE | re.DOTALL,
)


class StepParseError(ValueError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte {offset})")
        self.message = message
        self.offset = offset


@dataclass(frozen=True)
class Token:
    kind: str
    value: str
    offset: int


@dataclass(frozen=True)
class FileDescription:
    description: tuple[str, ...]
    implementation_level: str


@dataclass(frozen=True)
class FileName:
    name: str
    timestamp: str
    authors: tuple[str, ...]
    organizations: tuple[str, ...]
    preprocessor: str
    system: str
    authorization: str


@dataclass(frozen=True)
class StepHeader:
    file_description: FileDescription | None
    file_name: FileName | None
    file_schema: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        fd, fn = self.file_description, self.file_name
        return {
            "file_description": None
            if fd is None
            else {"description": list(fd.description), "implementation_level": fd.implementation_level},
            "file_name": None
            if fn is None
            else {
                "name": fn.name,
                "timestamp": fn.timestamp,
                "authors": list(fn.authors),
                "organizations": list(fn.organizations),
                "preprocessor": fn.preprocessor,
                "system": fn.system,
                "authorization": fn.authorization,
            },
            "file_schema": list(self.file_schema),
        }


@dataclass(frozen=True)
class _Entity:
    name: str
    params: list[Any]
    offset: int


class _Omitted:
    def __repr__(self) -> str:
        return "$"


OMITTED = _Omitted()


class _Literal(str):
    """A decoded string literal, kept apart from bare tokens such as ``#12`` or ``*``."""


# ---------------------------------------------------------------------------
# strings
# ---------------------------------------------------------------------------

_HEX4 = re.compile(r"[0-9A-Fa-f]{4}")
_HEX8 = re.compile(r"[0-9A-Fa-f]{8}")


def decode_step_string(raw: str) -> str:
    """Decode the body of a STEP string literal (outer apostrophes removed)."""
    out: list[str] = []
    i, n = 0, len(raw)
    while i < n:
        ch = raw[i]
        if ch == "'" and raw.startswith("''", i):
            out.append("'")
            i += 2
        elif ch != "\\":
            out.append(ch)
            i += 1
        elif raw.startswith("\\\\", i):
            out.append("\\")
            i += 2
        elif raw.startswith("\\S\\", i) and i + 3 < n:
            out.append(chr(ord(raw[i + 3]) + 128))
            i += 4
        elif raw.startswith("\\P", i) and i + 3 < n and raw[i + 3] == "\\":
            i += 4
        elif raw.startswith("\\X\\", i) and re.fullmatch(r"[0-9A-Fa-f]{2}", raw[i + 3 : i + 5]):
            out.append(chr(int(raw[i + 3 : i + 5], 16)))
            i += 5
        elif raw.startswith(("\\X2\\", "\\X4\\"), i):
            width = 4 if raw[i + 2] == "2" else 8
            pattern = _HEX4 if width == 4 else _HEX8
            end = raw.find("\\X0\\", i + 4)
            body = raw[i + 4 : end] if end >= 0 else ""
            if end < 0 or len(body) % width or not all(
                pattern.fullmatch(body[k : k + width]) for k in range(0, len(body), width)
            ):
                out.append(ch)
                i += 1
                continue
            if width == 4:
                out.append(bytes.fromhex(body).decode("utf-16-be", errors="surrogatepass"))
            else:
                out.extend(chr(int(body[k : k + 8], 16)) for k in range(0, len(body), 8))
            i = end + 4
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def encode_step_string(text: str) -> str:
    """Encode ``text`` as a STEP string literal including the apostrophes."""
    out: list[str] = ["'"]
    run: list[str] = []

    def flush() -> None:
        if not run:
            return
        if all(ord(c) <= 0xFFFF for c in run):
            out.append("\\X2\\" + "".join(f"{ord(c):04X}" for c in run) + "\\X0\\")
        else:
            out.append("\\X4\\" + "".join(f"{ord(c):08X}" for c in run) + "\\X0\\")
        run.clear()

    for c in text:
        if 0x20 <= ord(c) <= 0x7E:
            flush()
            out.append("''" if c == "'" else "\\\\" if c == "\\" else c)
        else:
            run.append(c)
    flush()
    out.append("'")
    return "".join(out)


# ---------------------------------------------------------------------------
# tokenizer / parser
# ---------------------------------------------------------------------------


def _tokenize(text: str, pos: int) -> Iterator[Token]:
    n = len(text)
    match = _TOKEN_RE.match
    while pos < n:
        m = match(text, pos)
        if m is None:
            if text[pos] == "'":
                raise StepParseError("unterminated string", pos)
            if text.startswith("/*", pos):
                raise StepParseError("unterminated comment", pos)
            raise StepParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        assert kind is not None
        if kind not in ("ws", "comment"):
            yield Token(kind, m.group(), pos)
        pos = m.end()


class _Cursor:
    def __init__(self, text: str, pos: int) -> None:
        self.end = len(text)
        self._it = _tokenize(text, pos)
        self._peeked: Token | None = None

    def peek(self) -> Token | None:
        if self._peeked is None:
            self._peeked = next(self._it, None)
        return self._peeked

    def next(self) -> Token | None:
        tok = self.peek()
        self._peeked = None
        return tok

    def expect(self, value: str, what: str) -> Token:
        tok = self.next()
        if tok is None:
            raise StepParseError(f"expected {what}, reached end of input", self.end)
        if tok.value != value:
            raise StepParseError(f"expected {what}, found {tok.value!r}", tok.offset)
        return tok


def _parse_value(cur: _Cursor) -> Any:
    tok = cur.next()
    if tok is None:
        raise StepParseError("unexpected end of input in parameter list", cur.end)
    if tok.kind == "string":
        return _Literal(decode_step_string(tok.value[1:-1]))
    if tok.value == "(":
        return _parse_list(cur)
    if tok.value == "$":
        return OMITTED
    if tok.kind == "keyword":
        cur.expect("(", "'(' after typed parameter")
        return (tok.value, _parse_list(cur))
    if tok.kind in ("number", "enum", "ref", "binary") or tok.value == "*":
        return tok.value
    raise StepParseError(f"unexpected token {tok.value!r} in parameter list", tok.offset)


def _parse_list(cur: _Cursor) -> list[Any]:
    """Parse list items; the opening parenthesis is already consumed."""
    items: list[Any] = []
    tok = cur.peek()
    if tok is not None and tok.value == ")":
        cur.next()
        return items
    while True:
        items.append(_parse_value(cur))
        tok = cur.next()
        if tok is None:
            raise StepParseError("unexpected end of input in parameter list", cur.end)
        if tok.value == ")":
            return items
        if tok.value != ",":
            raise StepParseError(f"expected ',' or ')', found {tok.value!r}", tok.offset)


def _leading_mismatch(data: bytes) -> int | None:
    for i, expected in enumerate(LEADING_TOKEN):
        if i >= len(data) or data[i] != expected:
            return i
    return None


def _parse_header_section(data: bytes) -> tuple[list[_Entity], int, int]:
    """Return header entities, the ENDSEC offset, and the offset just past ``ENDSEC;``."""
    bad = _leading_mismatch(data)
    if bad is not None:
        raise StepParseError("input does not begin with ISO-10303-21;", bad)
    text = data.decode("latin-1")
    cur = _Cursor(text, len(LEADING_TOKEN))
    tok = cur.next()
    if tok is None or tok.value != "HEADER":
        raise StepParseError("missing HEADER section", tok.offset if tok else len(text))
    cur.expect(";", "';' after HEADER")
    entities: list[_Entity] = []
    while True:
        tok = cur.next()
        if tok is None:
            raise StepParseError("HEADER section not terminated by ENDSEC;", len(text))
        if tok.value == "ENDSEC":
            semi = cur.expect(";", "';' after ENDSEC")
            return entities, tok.offset, semi.offset + 1
        if tok.value == "DATA":
            raise StepParseError("HEADER section not terminated by ENDSEC;", tok.offset)
        if tok.kind != "keyword":
            raise StepParseError(f"expected header entity, found {tok.value!r}", tok.offset)
        cur.expect("(", f"'(' after {tok.value}")
        params = _parse_list(cur)
        cur.expect(";", f"';' after {tok.value}(...)")
        entities.append(_Entity(tok.value, params, tok.offset))


def _string_arg(entity: _Entity, index: int) -> str:
    value = entity.params[index] if index < len(entity.params) else OMITTED
    if value is OMITTED or (value == "*" and not isinstance(value, _Literal)):
        return ""
    if not isinstance(value, _Literal):
        raise StepParseError(f"{entity.name} argument {index + 1} must be a string", entity.offset)
    return str(value)


def _string_list_arg(entity: _Entity, index: int) -> tuple[str, ...]:
    value = entity.params[index] if index < len(entity.params) else OMITTED
    if value is OMITTED:
        return ()
    if not isinstance(value, list) or not all(isinstance(v, _Literal) for v in value):
        raise StepParseError(f"{entity.name} argument {index + 1} must be a list of strings", entity.offset)
    return tuple(str(v) for v in value)


def _schema_from(entity: _Entity) -> tuple[str, ...]:
    schemas = _string_list_arg(entity, 0)
    if not schemas:
        raise StepParseError("FILE_SCHEMA is empty", entity.offset)
    return schemas


def _header_from_entities(entities: list[_Entity], endsec_offset: int) -> StepHeader:
    by_name = {e.name: e for e in entities}
    schema = by_name.get("FILE_SCHEMA")
    if schema is None:
        raise StepParseError("missing FILE_SCHEMA", endsec_offset)
    fd = by_name.get("FILE_DESCRIPTION")
    fn = by_name.get("FILE_NAME")
    return StepHeader(
        file_description=None
        if fd is None
        else FileDescription(_string_list_arg(fd, 0), _string_arg(fd, 1)),
        file_name=None
        if fn is None
        else FileName(
            name=_string_arg(fn, 0),
            timestamp=_string_arg(fn, 1),
            authors=_string_list_arg(fn, 2),
            organizations=_string_list_arg(fn, 3),
            preprocessor=_string_arg(fn, 4),
            system=_string_arg(fn, 5),
            authorization=_string_arg(fn, 6),
        ),
        file_schema=_schema_from(schema),
    )


def parse_step_header(data: bytes) -> StepHeader:
    """Parse the HEADER section of a STEP physical file.

    Raises :class:`StepParseError` carrying the byte offset of the problem.
    The DATA section is never read.
    """
    entities, endsec, _ = _parse_header_section(data)
    return _header_from_entities(entities, endsec)


def write_step_header(header: StepHeader) -> bytes:
    def strings(items: tuple[str, ...]) -> str:
        return "(" + ",".join(encode_step_string(s) for s in items) + ")"

    lines = ["ISO-10303-21;", "HEADER;"]
    fd = header.file_description
    if fd is not None:
        lines.append(
            f"FILE_DESCRIPTION({strings(fd.description)},{encode_step_string(fd.implementation_level)});"
        )
    fn = header.file_name
    if fn is not None:
        args = [
            encode_step_string(fn.name),
            encode_step_string(fn.timestamp),
            strings(fn.authors),
            strings(fn.organizations),
            encode_step_string(fn.preprocessor),
            encode_step_string(fn.system),
            encode_step_string(fn.authorization),
        ]
        lines.append(f"FILE_NAME({','.join(args)});")
    lines.append(f"FILE_SCHEMA({strings(header.file_schema)});")
    lines.append("ENDSEC;")
    return ("\n".join(lines) + "\n").encode("ascii")


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def _check_data_sections(text: str, pos: int) -> tuple[str, int] | None:
    """Scan DATA sections and the trailer. Return (problem, offset) or None."""
    cur = _Cursor(text, pos)
    end = len(text)
    try:
        tok = cur.next()
        if tok is None:
            return "missing DATA section", end
        if tok.value != "DATA":
            return f"expected DATA, found {tok.value!r}", tok.offset
        while True:
            # section opener: DATA; or DATA(...);
            tok = cur.next()
            if tok is not None and tok.value == "(":
                _parse_list(cur)
                tok = cur.next()
            if tok is None:
                return "expected ';' after DATA, reached end of input", end
            if tok.value != ";":
                return f"expected ';' after DATA, found {tok.value!r}", tok.offset
            problem = _scan_instances(cur)
            if problem is not None:
                return problem
            tok = cur.next()
            if tok is None:
                return f"missing {TRAILER_KEYWORD};", end
            if tok.value == "DATA":
                continue
            if tok.value != TRAILER_KEYWORD:
                return f"expected DATA or {TRAILER_KEYWORD}, found {tok.value!r}", tok.offset
            tok = cur.next()
            if tok is None:
                return f"expected ';' after {TRAILER_KEYWORD}", end
            if tok.value != ";":
                return f"expected ';' after {TRAILER_KEYWORD}, found {tok.value!r}", tok.offset
            extra = cur.next()
            if extra is not None:
                return f"content after {TRAILER_KEYWORD};", extra.offset
            return None
    except StepParseError as exc:
        return exc.message, exc.offset


def _scan_instances(cur: _Cursor) -> tuple[str, int] | None:
    """Scan ``#<int> = <IDENT>(...);`` lines up to and including ``ENDSEC;``."""
    end = cur.end
    while True:
        tok = cur.next()
        if tok is None:
            return "DATA section not terminated by ENDSEC;", end
        if tok.value == "ENDSEC":
            semi = cur.next()
            if semi is None:
                return "expected ';' after ENDSEC", end
            if semi.value != ";":
                return f"expected ';' after ENDSEC, found {semi.value!r}", semi.offset
            return None
        if tok.kind != "ref":
            return f"instance must start with #<int>, found {tok.value!r}", tok.offset
        eq = cur.next()
        if eq is None:
            return "expected '=', reached end of input", end
        if eq.value != "=":
            return f"expected '=' after {tok.value}, found {eq.value!r}", eq.offset
        head = cur.next()
        if head is None:
            return "expected entity name, reached end of input", end
        if head.kind == "keyword":
            opener = cur.next()
            if opener is None:
                return "expected '(', reached end of input", end
            if opener.value != "(":
                return f"expected '(' after {head.value}, found {opener.value!r}", opener.offset
        elif head.value != "(":
            return f"expected entity name or '(', found {head.value!r}", head.offset
        depth = 1
        while depth:
            inner = cur.next()
            if inner is None:
                return "unbalanced parentheses: reached end of input", end
            if inner.value == "(":
                depth += 1
            elif inner.value == ")":
                depth -= 1
            elif inner.value == ";":
                return "unbalanced parentheses: ';' inside open parenthesis", inner.offset
        semi = cur.next()
        if semi is None:
            return "expected ';' after instance, reached end of input", end
        if semi.value == ")":
            return "unbalanced parentheses: unmatched ')'", semi.offset
        if semi.value != ";":
            return f"expected ';' after instance, found {semi.value!r}", semi.offset


def verify_step(data: bytes) -> VerificationReport:
    """Syntax-level verification of a STEP physical file.

    Checks run in order; a check whose prerequisite failed is skipped.
    No schema (EXPRESS) validation is attempted.
    """
    checks: list[Check] = []
    bad = _leading_mismatch(data)
    if bad is not None:
        checks.append(Check("leading-token", FAIL, "input does not begin with ISO-10303-21;", offset=bad))
        for name in ("header-section", "file-schema", "data-section"):
            checks.append(Check(name, SKIP, "leading token missing"))
        return VerificationReport(tuple(checks))
    checks.append(Check("leading-token", PASS))

    header_problem: StepParseError | None = None
    try:
        entities, endsec, header_end = _parse_header_section(data)
        names = {e.name for e in entities}
        missing = [n for n in ("FILE_DESCRIPTION", "FILE_NAME", "FILE_SCHEMA") if n not in names]
        if missing:
            raise StepParseError(f"HEADER lacks {', '.join(missing)}", endsec)
        # argument shapes; FILE_SCHEMA emptiness is reported by its own check
        for e in entities:
            if e.name == "FILE_DESCRIPTION":
                _string_list_arg(e, 0)
                _string_arg(e, 1)
            elif e.name == "FILE_NAME":
                for i in (0, 1, 4, 5, 6):
                    _string_arg(e, i)
                for i in (2, 3):
                    _string_list_arg(e, i)
    except StepParseError as exc:
        header_problem = exc
    if header_problem is not None:
        checks.append(Check("header-section", FAIL, header_problem.message, offset=header_problem.offset))
        checks.append(Check("file-schema", SKIP, "header not well-formed"))
        checks.append(Check("data-section", SKIP, "header not well-formed"))
        return VerificationReport(tuple(checks))
    checks.append(Check("header-section", PASS))

    schema_entity = next(e for e in entities if e.name == "FILE_SCHEMA")
    try:
        schemas = _schema_from(schema_entity)
    except StepParseError as exc:
        checks.append(Check("file-schema", FAIL, exc.message, offset=exc.offset))
    else:
        checks.append(Check("file-schema", PASS, ", ".join(schemas)))

    problem = _check_data_sections(data.decode("latin-1"), header_end)
    if problem is None:
        checks.append(Check("data-section", PASS))
    else:
        checks.append(Check("data-section", FAIL, problem[0], offset=problem[1]))
    return VerificationReport(tuple(checks))
