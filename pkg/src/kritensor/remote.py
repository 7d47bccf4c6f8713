"""JSON-over-HTTP model protocol: a threaded reference server and a client.

POST /v1/predict   {"inputs": [[...], ...]}                         -> {"logits": [[...], ...]}
POST /v1/gradient  {"inputs": [...], "labels": [...], "loss": "cross_entropy"}
                   -> {"gradients": [[...], ...], "losses": [...]}, or 501 for black-box models
Malformed bodies get 400. Floats travel as JSON numbers (shortest repr), so
values survive the round trip exactly.
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .errors import BlackBoxModelError, DataError, ModelError, TransportError

log = logging.getLogger(__name__)

PREDICT_PATH = "/v1/predict"
GRADIENT_PATH = "/v1/gradient"


class ProtocolError(DataError):
    """The server answered with a body that does not follow the protocol."""


class _BadRequest(Exception):
    pass


def _parse_inputs(body: dict, n_x: int) -> np.ndarray:
    inputs = body.get("inputs")
    if not isinstance(inputs, list) or not inputs:
        raise _BadRequest("inputs must be a nonempty list")
    try:
        x = np.array(inputs, dtype=np.float64)
    except (TypeError, ValueError):
        raise _BadRequest("inputs must be numeric") from None
    if x.ndim != 2 or x.shape[1] != n_x:
        raise _BadRequest(f"inputs must have shape (n, {n_x})")
    if not np.all(np.isfinite(x)):
        raise _BadRequest("inputs must be finite")
    return x


def make_handler(model, gradients: bool = True):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("%s - " + fmt, self.address_string(), *args)

        def _send(self, status: int, obj: dict) -> None:
            data = json.dumps(obj).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length)
            if self.path not in (PREDICT_PATH, GRADIENT_PATH):
                self._send(404, {"error": f"unknown path {self.path}"})
                return
            if self.path == GRADIENT_PATH and not gradients:
                self._send(501, {"error": "gradients not supported"})
                return
            try:
                body = json.loads(raw)
                if not isinstance(body, dict):
                    raise _BadRequest("body must be a JSON object")
                x = _parse_inputs(body, model.input_dim)
                if self.path == PREDICT_PATH:
                    self._send(200, {"logits": model.logits(x).tolist()})
                    return
                if body.get("loss", "cross_entropy") != "cross_entropy":
                    raise _BadRequest("only cross_entropy is supported")
                labels = body.get("labels")
                if (
                    not isinstance(labels, list)
                    or len(labels) != len(x)
                    or not all(isinstance(v, int) and not isinstance(v, bool) for v in labels)
                ):
                    raise _BadRequest("labels must be one integer per input")
                try:
                    losses, grads = model.loss_and_input_gradient_batch(x, labels)
                except ModelError as exc:
                    raise _BadRequest(str(exc)) from None
                self._send(200, {"gradients": grads.tolist(), "losses": losses.tolist()})
            except (json.JSONDecodeError, UnicodeDecodeError, _BadRequest) as exc:
                self._send(400, {"error": str(exc)})

    return Handler


def serve_model(model, host: str = "127.0.0.1", port: int = 0, gradients: bool = True) -> ThreadingHTTPServer:
    """Bind a threaded server for ``model``; call ``serve_forever`` (or use :func:`start_background`)."""
    server = ThreadingHTTPServer((host, port), make_handler(model, gradients))
    server.daemon_threads = True
    return server


def start_background(model, host: str = "127.0.0.1", port: int = 0, gradients: bool = True):
    server = serve_model(model, host, port, gradients)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    h, p = server.server_address[:2]
    return server, f"http://{h}:{p}"


def _post(url: str, body: dict, timeout: float) -> dict:
    req = urllib.request.Request(
        url,
        data=json.dumps(body).encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            payload = resp.read()
    except urllib.error.HTTPError as exc:
        if exc.code == 501:
            raise BlackBoxModelError(f"{url}: model does not provide gradients (501)") from None
        raise TransportError(f"{url}: HTTP {exc.code}: {exc.read()[:200]!r}") from None
    except (urllib.error.URLError, OSError) as exc:
        raise TransportError(f"{url}: {exc}") from None
    try:
        return json.loads(payload)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"{url}: response is not JSON") from exc


def _batch(batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("batch must be a nonempty 2-D array of inputs")
    return x


def _matrix(obj: dict, key: str, rows: int) -> np.ndarray:
    try:
        out = np.array(obj[key], dtype=np.float64)
    except (KeyError, TypeError, ValueError):
        raise ProtocolError(f"response lacks a numeric {key!r}") from None
    if out.ndim != 2 or out.shape[0] != rows:
        raise ProtocolError(f"{key!r} has shape {out.shape}, expected {rows} rows")
    return out


def remote_predict(endpoint: str, batch, timeout: float = 30.0) -> np.ndarray:
    x = _batch(batch)
    resp = _post(endpoint.rstrip("/") + PREDICT_PATH, {"inputs": x.tolist()}, timeout)
    return _matrix(resp, "logits", len(x))


def remote_gradient(endpoint: str, batch, labels, timeout: float = 30.0) -> tuple[np.ndarray, np.ndarray]:
    """Returns (gradients (n, n_x), losses (n,))."""
    x = _batch(batch)
    labels = [int(v) for v in labels]
    if len(labels) != len(x):
        raise ValueError("one label per input required")
    body = {"inputs": x.tolist(), "labels": labels, "loss": "cross_entropy"}
    resp = _post(endpoint.rstrip("/") + GRADIENT_PATH, body, timeout)
    grads = _matrix(resp, "gradients", len(x))
    if grads.shape[1] != x.shape[1]:
        raise ProtocolError("gradient length differs from input length")
    try:
        losses = np.array(resp["losses"], dtype=np.float64).reshape(-1)
    except (KeyError, TypeError, ValueError):
        raise ProtocolError("response lacks numeric 'losses'") from None
    if losses.shape != (len(x),):
        raise ProtocolError("one loss per input expected")
    return grads, losses


class RemoteClassifier:
    """Model adapter speaking the HTTP protocol; usable wherever a local model is."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def logits(self, x: np.ndarray) -> np.ndarray:
        return remote_predict(self.endpoint, x, self.timeout)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.logits(np.asarray(x, dtype=np.float64)[None, :])[0]

    def predict_class(self, x: np.ndarray) -> int:
        return int(np.argmax(self.predict(x)))

    def loss_and_input_gradient_batch(self, x: np.ndarray, y) -> tuple[np.ndarray, np.ndarray]:
        grads, losses = remote_gradient(self.endpoint, x, y, self.timeout)
        return losses, grads

    def loss_and_input_gradient(self, x: np.ndarray, y: int) -> tuple[float, np.ndarray]:
        losses, grads = self.loss_and_input_gradient_batch(np.asarray(x, dtype=np.float64)[None, :], [y])
        return float(losses[0]), grads[0]
