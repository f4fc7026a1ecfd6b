"""HTTP/JSON binding for :class:`HabilitationService` (stdlib server)."""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Tuple

from .core import HabilitationService

log = logging.getLogger(__name__)

MAX_BODY = 32 * 1024 * 1024


def parse_listen(addr: str) -> Tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        host, port = "127.0.0.1", addr
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ValueError(f"invalid listen address {addr!r}, expected host:port") from None


class _Handler(BaseHTTPRequestHandler):
    service: HabilitationService
    protocol_version = "HTTP/1.1"

    def _dispatch(self, method: str) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            self._send(413, {"code": "MALFORMED_REQUEST", "message": "body too large"})
            return
        body = self.rfile.read(length) if length else b""
        response = self.service.handle(method, self.path, dict(self.headers.items()), body)
        self._send(response.status, response.body)

    def _send(self, status: int, doc: dict) -> None:
        payload = json.dumps(doc, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):  # noqa: N802
        self._dispatch("GET")

    def do_POST(self):  # noqa: N802
        self._dispatch("POST")

    def do_PUT(self):  # noqa: N802
        self._dispatch("PUT")

    def do_DELETE(self):  # noqa: N802
        self._dispatch("DELETE")

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)


def make_server(service: HabilitationService, listen: str = "127.0.0.1:8080") -> ThreadingHTTPServer:
    """Bind (but do not start) a threaded server for ``service``."""
    handler = type("HabilisHandler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer(parse_listen(listen), handler)
    server.daemon_threads = True
    return server


class BackgroundServer:
    """Run a server on a daemon thread; used by tests and the fleet demo."""

    def __init__(self, service: HabilitationService, listen: str = "127.0.0.1:0"):
        self.service = service
        self.server = make_server(service, listen)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)
