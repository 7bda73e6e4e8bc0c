"""HTTP+JSON front of the annotation service.

Serves the queue API consumed by the web workbench and by scripted
annotators in tests:

    GET  /tasks/next?annotator=A&purpose=P     claim an open task (204 if none)
    GET  /tasks/{id}                           task with votes and consensus
    POST /tasks/{id}/vote    {annotator, label}
    POST /tasks/{id}/resolve {label, note}
    GET  /stats/kappa?purpose=P
    GET  /iterations/current
    GET  /taxonomy
    GET  /audit?limit=N
    GET  /healthz

Static files (the built UI) are served from an optional directory for any
path not matching the API.
"""

from __future__ import annotations

import json
import re
import threading
import urllib.parse
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .annotation import AnnotationService, fleiss_kappa
from .errors import (
    DuplicateVote,
    NotInConflict,
    QueueUnavailable,
    RaggedMatrix,
    SecrevError,
    TaskResolved,
    UnknownInstance,
)

_STATUS_BY_ERROR = (
    (UnknownInstance, 404),
    (DuplicateVote, 409),
    (TaskResolved, 409),
    (NotInConflict, 409),
    (RaggedMatrix, 422),
)

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
}


class AnnotationServer:
    def __init__(
        self,
        service: AnnotationService,
        host: str = "127.0.0.1",
        port: int = 0,
        report_provider=None,
        static_dir: str | Path | None = None,
    ):
        self.service = service
        self.report_provider = report_provider or (lambda: None)
        self.static_dir = Path(static_dir) if static_dir else None
        handler = _make_handler(self)
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True  # keep-alive handlers must not block close
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self.httpd.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True
        )
        self._thread.start()

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)


def _make_handler(server: AnnotationServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def _send_json(self, payload, status: int = 200) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_error(self, exc: Exception) -> None:
            status = 400
            for klass, code in _STATUS_BY_ERROR:
                if isinstance(exc, klass):
                    status = code
                    break
            self._send_json({"error": type(exc).__name__, "message": str(exc)}, status)

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            return json.loads(self.rfile.read(length).decode("utf-8"))

        def do_GET(self):
            parts = urllib.parse.urlsplit(self.path)
            query = dict(urllib.parse.parse_qsl(parts.query))
            path = parts.path
            try:
                if path == "/healthz":
                    self._send_json({"ok": True})
                elif path == "/tasks/next":
                    annotator = query.get("annotator")
                    purpose = query.get("purpose", "binary_label")
                    if not annotator:
                        raise ValueError("annotator query parameter required")
                    task = server.service.claim_next(annotator, purpose)
                    if task is None:
                        self.send_response(204)
                        self.send_header("Content-Length", "0")
                        self.end_headers()
                    else:
                        self._send_json(task)
                elif re.fullmatch(r"/tasks/\d+", path):
                    task = server.service.task_view(int(path.rsplit("/", 1)[1]))
                    if task is None:
                        self._send_json({"error": "NotFound"}, 404)
                    else:
                        self._send_json(task)
                elif path == "/stats/kappa":
                    purpose = query.get("purpose", "binary_label")
                    matrix = server.service.vote_matrix(purpose)
                    uniform = [r for r in matrix if len(r) == (len(matrix[0]) if matrix else 0)]
                    if not uniform:
                        self._send_json({"kappa": None, "items": 0})
                    else:
                        try:
                            kappa = fleiss_kappa(uniform)
                        except RaggedMatrix:
                            kappa = None
                        self._send_json({"kappa": kappa, "items": len(uniform)})
                elif path == "/iterations/current":
                    report = server.report_provider()
                    self._send_json(report if report is not None else {})
                elif path == "/taxonomy":
                    self._send_json(list(server.service.taxonomy))
                elif path == "/audit":
                    limit = int(query.get("limit", "100"))
                    self._send_json(server.service.audit_log(limit))
                elif path == "/stats/summary":
                    self._send_json(_summary(server))
                else:
                    self._serve_static(path)
            except SecrevError as exc:
                self._send_error(exc)
            except (ValueError, KeyError) as exc:
                self._send_json({"error": type(exc).__name__, "message": str(exc)}, 400)

        def do_POST(self):
            path = urllib.parse.urlsplit(self.path).path
            try:
                body = self._read_body()
                m = re.fullmatch(r"/tasks/(\d+)/vote", path)
                if m:
                    status = server.service.submit_vote(
                        int(m.group(1)), body["annotator"], body["label"]
                    )
                    self._send_json({"status": status})
                    return
                m = re.fullmatch(r"/tasks/(\d+)/resolve", path)
                if m:
                    record = server.service.resolve_conflict(
                        int(m.group(1)), body["label"], body.get("note", "")
                    )
                    self._send_json({
                        "task_id": record.task_id,
                        "final_label": record.final_label,
                        "method": record.method,
                        "resolved_at": record.resolved_at,
                    })
                    return
                self._send_json({"error": "NotFound"}, 404)
            except SecrevError as exc:
                self._send_error(exc)
            except (ValueError, KeyError) as exc:
                self._send_json({"error": type(exc).__name__, "message": str(exc)}, 400)

        def _serve_static(self, path: str) -> None:
            if server.static_dir is None:
                self._send_json({"error": "NotFound"}, 404)
                return
            rel = path.lstrip("/") or "index.html"
            target = (server.static_dir / rel).resolve()
            root = server.static_dir.resolve()
            if not str(target).startswith(str(root)) or not target.is_file():
                self._send_json({"error": "NotFound"}, 404)
                return
            body = target.read_bytes()
            self.send_response(200)
            ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler


def _summary(server: AnnotationServer) -> dict:
    svc = server.service
    open_by_purpose = {}
    for purpose in ("binary_label", "positive_confirmation", "category_label",
                    "precision_audit"):
        open_by_purpose[purpose] = len(svc.open_tasks(purpose))
    return {
        "backlog": open_by_purpose,
        "report": server.report_provider() or None,
    }


# --- client -----------------------------------------------------------------------


class AnnotationClient:
    """Minimal stdlib client for the queue API (loop + scripted annotators)."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _request(self, method: str, path: str, payload: dict | None = None):
        url = self.base_url + path
        data = json.dumps(payload).encode("utf-8") if payload is not None else None
        req = urllib.request.Request(
            url, data=data, method=method,
            headers={"Content-Type": "application/json"} if data else {},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                if resp.status == 204:
                    return None
                return json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode("utf-8", "replace")
            raise _error_from_response(exc.code, detail)
        except (urllib.error.URLError, OSError) as exc:
            raise QueueUnavailable(f"{url}: {exc}") from exc

    def claim_next(self, annotator: str, purpose: str) -> dict | None:
        query = urllib.parse.urlencode({"annotator": annotator, "purpose": purpose})
        return self._request("GET", f"/tasks/next?{query}")

    def get_task(self, task_id: int) -> dict:
        return self._request("GET", f"/tasks/{task_id}")

    def vote(self, task_id: int, annotator: str, label: str) -> str:
        return self._request("POST", f"/tasks/{task_id}/vote",
                             {"annotator": annotator, "label": label})["status"]

    def resolve(self, task_id: int, label: str, note: str) -> dict:
        return self._request("POST", f"/tasks/{task_id}/resolve",
                             {"label": label, "note": note})

    def kappa(self, purpose: str) -> dict:
        query = urllib.parse.urlencode({"purpose": purpose})
        return self._request("GET", f"/stats/kappa?{query}")

    def current_iteration(self) -> dict:
        return self._request("GET", "/iterations/current")

    def audit(self, limit: int = 100) -> list[dict]:
        return self._request("GET", f"/audit?limit={limit}")


def _error_from_response(status: int, detail: str) -> Exception:
    try:
        payload = json.loads(detail)
        name = payload.get("error", "")
        message = payload.get("message", detail)
    except json.JSONDecodeError:
        name, message = "", detail
    by_name = {
        "DuplicateVote": DuplicateVote,
        "TaskResolved": TaskResolved,
        "NotInConflict": NotInConflict,
        "UnknownInstance": UnknownInstance,
    }
    klass = by_name.get(name)
    if klass is not None:
        return klass(message)
    return SecrevError(f"HTTP {status}: {message}")
