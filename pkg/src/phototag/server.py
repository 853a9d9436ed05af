"""HTTP front of the calibration service.

Endpoints (JSON bodies):
    GET  /classes
    GET  /classes/{tag}/top?n=
    GET  /classes/{tag}/around?p=&n=
    GET  /classes/{tag}/suggest?p=
    POST /classes/{tag}/bias       {"bias": float}
    POST /classes/{tag}/enabled    {"flag": bool}
    POST /classes/{tag}/judgments  {"photo_id": str, "verdict": "correct"|"incorrect"}
    GET  /photos/{photo_id}        (PNG rendered from the corpus directory)

Reads run concurrently; table writes serialize per tag inside the service.
"""

from __future__ import annotations

import json
import struct
import zlib
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, unquote, urlparse

import numpy as np

from .calib import (
    CalibrationService,
    DisabledTagError,
    InsufficientJudgmentsError,
    OneSidedJudgmentsError,
    UnknownTagError,
)


def encode_png(rgb: np.ndarray) -> bytes:
    """Minimal 8-bit RGB PNG encoder (stdlib only)."""
    arr = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    h, w = arr.shape[:2]
    pixels = (arr[:, :, :3] * 255).astype(np.uint8)
    raw = b"".join(b"\x00" + pixels[row].tobytes() for row in range(h))

    def chunk(kind: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + kind
            + payload
            + struct.pack(">I", zlib.crc32(kind + payload) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 6))
        + chunk(b"IEND", b"")
    )


class _Handler(BaseHTTPRequestHandler):
    service: CalibrationService = None  # set by make_server

    def log_message(self, fmt, *args):  # tests stay quiet
        pass

    def _send_json(self, payload, status=200):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status, message):
        self._send_json({"error": message}, status)

    def _read_json(self):
        length = int(self.headers.get("Content-Length", 0))
        return json.loads(self.rfile.read(length) or b"{}")

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_GET(self):
        url = urlparse(self.path)
        parts = [unquote(p) for p in url.path.strip("/").split("/") if p]
        q = parse_qs(url.query)
        try:
            if parts == ["classes"]:
                return self._send_json({"classes": self.service.tags()})
            if len(parts) == 3 and parts[0] == "classes":
                tag, action = parts[1], parts[2]
                if action == "top":
                    n = int(q.get("n", ["10"])[0])
                    rows = self.service.top(tag, n)
                    return self._send_json({"items": [{"photo_id": p, "logit": s} for p, s in rows]})
                if action == "around":
                    p = float(q.get("p", ["0.9"])[0])
                    n = int(q.get("n", ["10"])[0])
                    rows = self.service.around(tag, p, n)
                    bias = self.service.table.get(tag).bias
                    return self._send_json({
                        "bias": bias,
                        "items": [
                            {"photo_id": pid, "logit": s, "posterior": post}
                            for pid, s, post in rows
                        ],
                    })
                if action == "suggest":
                    p = float(q.get("p", ["0.9"])[0])
                    s = self.service.suggest(tag, p)
                    return self._send_json({
                        "bias": s.bias,
                        "window_precision": s.window_precision,
                        "judged_in_window": s.judged_in_window,
                        "unconstrained": s.unconstrained,
                    })
            if len(parts) == 2 and parts[0] == "photos":
                return self._send_photo(parts[1])
            return self._error(404, "unknown route")
        except UnknownTagError as e:
            return self._error(404, f"unknown tag: {e}")
        except DisabledTagError as e:
            return self._error(409, str(e))
        except (InsufficientJudgmentsError, OneSidedJudgmentsError, ValueError) as e:
            return self._error(400, str(e))

    def do_POST(self):
        url = urlparse(self.path)
        parts = [unquote(p) for p in url.path.strip("/").split("/") if p]
        try:
            body = self._read_json()
            if len(parts) == 3 and parts[0] == "classes":
                tag, action = parts[1], parts[2]
                if action == "bias":
                    self.service.set_bias(tag, float(body["bias"]))
                    return self._send_json({"tag": tag, "bias": self.service.table.get(tag).bias})
                if action == "enabled":
                    self.service.set_enabled(tag, bool(body["flag"]))
                    return self._send_json({"tag": tag, "enabled": self.service.table.get(tag).enabled})
                if action == "judgments":
                    j = self.service.judge(tag, str(body["photo_id"]), str(body["verdict"]))
                    return self._send_json({"tag": tag, "photo_id": j.photo_id, "verdict": j.verdict})
            return self._error(404, "unknown route")
        except UnknownTagError as e:
            return self._error(404, f"unknown tag: {e}")
        except (KeyError, ValueError) as e:
            return self._error(400, str(e))

    def _send_photo(self, photo_id):
        root = self.service.corpus_dir
        if root is None:
            return self._error(404, "no corpus directory configured")
        if "/" in photo_id or ".." in photo_id:
            return self._error(400, "bad photo id")
        png = root / f"{photo_id}.png"
        npy = root / f"{photo_id}.npy"
        if png.exists():
            body = png.read_bytes()
        elif npy.exists():
            body = encode_png(np.load(npy))
        else:
            return self._error(404, f"no photo {photo_id}")
        self.send_response(200)
        self.send_header("Content-Type", "image/png")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)


def make_server(service: CalibrationService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(service: CalibrationService, host: str, port: int):
    server = make_server(service, host, port)
    print(f"calibration service listening on http://{host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
