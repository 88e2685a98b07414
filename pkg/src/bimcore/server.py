"""Read-only JSON query endpoint over a registry store."""

from __future__ import annotations

import json
import logging
import re
import threading
from collections.abc import Callable
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any
from urllib.parse import parse_qs, unquote, urlsplit

from bimcore.model import NotFound, builtin_element_defs
from bimcore.store import QueryView, RegistryStore

logger = logging.getLogger(__name__)

Response = tuple[int, Any]
Handler = Callable[["QueryService", re.Match[str], dict[str, list[str]]], Response]


def _error(status: HTTPStatus, message: str) -> Response:
    return status.value, {"error": status.phrase.lower(), "message": message}


def _get_record(service: QueryService, match: re.Match[str], params: dict[str, list[str]]) -> Response:
    rid = unquote(match["record_id"])
    version = None
    if "version" in params:
        raw = params["version"][-1]
        if not raw.isdigit() or int(raw) < 1:
            return _error(HTTPStatus.BAD_REQUEST, f"version must be a positive integer, got {raw!r}")
        version = int(raw)
    try:
        record = service.store.get_record(rid, version)
    except NotFound as exc:
        return _error(HTTPStatus.NOT_FOUND, str(exc))
    return HTTPStatus.OK.value, record.to_dict()


def _query_records(service: QueryService, _match: re.Match[str], params: dict[str, list[str]]) -> Response:
    if "view" not in params:
        return _error(HTTPStatus.BAD_REQUEST, "missing required parameter 'view'")
    try:
        view = QueryView.for_role(params["view"][-1])
    except ValueError as exc:
        return _error(HTTPStatus.BAD_REQUEST, str(exc))
    terms = " ".join(params.get("q", []))
    return HTTPStatus.OK.value, [s.to_dict() for s in service.store.query(view, terms)]


def _elements(_service: QueryService, _match: re.Match[str], _params: dict[str, list[str]]) -> Response:
    return HTTPStatus.OK.value, [d.to_dict() for d in builtin_element_defs()]


def _health(service: QueryService, _match: re.Match[str], _params: dict[str, list[str]]) -> Response:
    report = service.store.integrity_check()
    body = report.to_dict()
    body["record_count"] = len(service.store)
    return HTTPStatus.OK.value, body


# (method, path pattern, handler). Nothing here mutates the store.
ROUTES: tuple[tuple[str, re.Pattern[str], Handler], ...] = (
    ("GET", re.compile(r"^/records/(?P<record_id>[^/]+)$"), _get_record),
    ("GET", re.compile(r"^/records/?$"), _query_records),
    ("GET", re.compile(r"^/elements/?$"), _elements),
    ("GET", re.compile(r"^/health/?$"), _health),
)


class QueryService:
    """Routes requests against a read-only store; safe to share between threads."""

    def __init__(self, store_root: str | Path) -> None:
        self.store = RegistryStore(store_root, read_only=True)
        self._lock = threading.Lock()

    def handle(self, method: str, target: str) -> Response:
        parts = urlsplit(target)
        params = parse_qs(parts.query, keep_blank_values=True)
        allowed = False
        for route_method, pattern, handler in ROUTES:
            match = pattern.match(parts.path)
            if match is None:
                continue
            allowed = True
            if route_method != method:
                continue
            with self._lock:
                self.store.refresh()
                return handler(self, match, params)
        if allowed:
            return _error(HTTPStatus.METHOD_NOT_ALLOWED, f"{method} is not supported; the API is read-only")
        return _error(HTTPStatus.NOT_FOUND, f"no route for {parts.path}")


class _RequestHandler(BaseHTTPRequestHandler):
    server: _Server
    protocol_version = "HTTP/1.1"

    def _respond(self, method: str) -> None:
        try:
            status, body = self.server.service.handle("GET" if method == "HEAD" else method, self.path)
        except Exception:  # keep the server up, report as JSON
            logger.exception("request failed: %s %s", method, self.path)
            status, body = _error(HTTPStatus.INTERNAL_SERVER_ERROR, "internal error")
        data = json.dumps(body, ensure_ascii=False, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        if status == HTTPStatus.METHOD_NOT_ALLOWED:
            self.send_header("Allow", "GET")
        self.end_headers()
        if method != "HEAD":
            self.wfile.write(data)

    def do_GET(self) -> None:
        self._respond("GET")

    def do_HEAD(self) -> None:
        self._respond("HEAD")

    def do_POST(self) -> None:
        self._respond("POST")

    def do_PUT(self) -> None:
        self._respond("PUT")

    def do_PATCH(self) -> None:
        self._respond("PATCH")

    def do_DELETE(self) -> None:
        self._respond("DELETE")

    def log_message(self, format: str, *args: Any) -> None:
        logger.info("%s - %s", self.address_string(), format % args)


class _Server(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: QueryService) -> None:
        super().__init__(address, _RequestHandler)
        self.service = service


def parse_listen(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"listen address must be host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


def make_server(store_root: str | Path, address: str = "127.0.0.1:8080") -> ThreadingHTTPServer:
    return _Server(parse_listen(address), QueryService(store_root))
