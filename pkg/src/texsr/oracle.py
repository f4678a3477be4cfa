"""Super-resolution oracles: the pluggable stand-ins for a pretrained image
restoration model.

Built-in oracles are pure functions of their input and bit-reproducible.
The sidecar client speaks a newline-delimited JSON header followed by a raw
little-endian float32 payload over TCP; one request is in flight per
connection at a time.

Oracles consume and produce sRGB-encoded values in [0, 1]; the optimization
pipeline converts to and from linear light around each call.
"""
from __future__ import annotations

import dataclasses
import json
import socket

import numpy as np

from .texture import bicubic_resize

SUPPORTED_SCALES = (1, 2, 4, 8)

GAUSS_SIGMA = 1.0
GAUSS_RADIUS = 3
UNSHARP_AMOUNT = 0.6


class OracleError(Exception):
    """Base class for oracle failures."""


class OracleUnsupportedScale(OracleError):
    pass


class OracleTransportError(OracleError):
    """Connection-level failure: refused, reset, or timed out."""


class OracleProtocolError(OracleError):
    """The sidecar broke the wire contract (bad header, wrong dimensions)."""


class OracleFailure(OracleError):
    """The sidecar reported an error status for the request."""


@dataclasses.dataclass(frozen=True)
class SrRequest:
    """One upscale request; view_id < 0 marks texture-space (non-view) input."""

    image: np.ndarray  # (H, W, 3) float in [0, 1], sRGB-encoded
    scale: int
    view_id: int = -1
    prompt: str | None = None

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise OracleError(f"request image must be HxWx3, got {img.shape}")
        if self.scale not in SUPPORTED_SCALES:
            raise OracleUnsupportedScale(f"scale must be one of {SUPPORTED_SCALES}, got {self.scale}")
        object.__setattr__(self, "image", img)


class SrOracle:
    """Interface: upscale an image by an integer factor."""

    capability: tuple = SUPPORTED_SCALES
    deterministic: bool = True

    def upscale(self, req: SrRequest) -> np.ndarray:
        raise NotImplementedError

    def _check_scale(self, req: SrRequest) -> None:
        if req.scale not in self.capability:
            raise OracleUnsupportedScale(
                f"{type(self).__name__} supports scales {self.capability}, got {req.scale}")


class BicubicOracle(SrOracle):
    """Catmull-Rom bicubic upscaling, clamped to [0, 1]."""

    def upscale(self, req: SrRequest) -> np.ndarray:
        self._check_scale(req)
        if req.scale == 1:
            return req.image.copy()
        h, w = req.image.shape[:2]
        return bicubic_resize(req.image, h * req.scale, w * req.scale)


def _gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float = GAUSS_SIGMA, radius: int = GAUSS_RADIUS) -> np.ndarray:
    """Separable Gaussian with clamp-to-edge padding; fixed discrete kernel."""
    k = _gaussian_kernel(sigma, radius)
    pad = np.pad(img, ((radius, radius), (0, 0), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for i, kv in enumerate(k):
        out += kv * pad[i:i + img.shape[0]]
    pad = np.pad(out, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for i, kv in enumerate(k):
        out += kv * pad[:, i:i + img.shape[1]]
    return out


class SharpenOracle(SrOracle):
    """Bicubic upscale followed by an unsharp mask, so the optimization sees
    some injected high-frequency detail without any learned model."""

    def upscale(self, req: SrRequest) -> np.ndarray:
        self._check_scale(req)
        if req.scale == 1:
            return req.image.copy()
        h, w = req.image.shape[:2]
        up = bicubic_resize(req.image, h * req.scale, w * req.scale)
        blurred = gaussian_blur(up)
        return np.clip(up + UNSHARP_AMOUNT * (up - blurred), 0.0, 1.0)


class CheatOracle(SrOracle):
    """Replays precomputed ground-truth renderings keyed by view id.

    Bounds the recovery achievable by the optimization. Texture-space
    requests (view_id < 0) fall through to the fallback oracle; a missing
    positive view id is an error.
    """

    def __init__(self, store, fallback: SrOracle | None = None):
        self.store = store
        self.fallback = fallback if fallback is not None else BicubicOracle()

    def upscale(self, req: SrRequest) -> np.ndarray:
        self._check_scale(req)
        if req.view_id < 0:
            return self.fallback.upscale(req)
        try:
            img = self.store[req.view_id]
        except KeyError:
            raise OracleFailure(f"cheat store has no image for view {req.view_id}") from None
        img = np.asarray(img, dtype=np.float64)
        want = (req.image.shape[0] * req.scale, req.image.shape[1] * req.scale, 3)
        if img.shape != want:
            raise OracleFailure(
                f"cheat store image for view {req.view_id} has shape {img.shape}, expected {want}")
        return img.copy()


class DirectoryGtStore:
    """Maps view ids to sRGB-encoded PNGs named view_<id>.png in a directory."""

    def __init__(self, directory):
        from pathlib import Path
        self.directory = Path(directory)

    def __getitem__(self, view_id: int) -> np.ndarray:
        from .texture import read_png
        path = self.directory / f"view_{view_id:04d}.png"
        if not path.exists():
            raise KeyError(view_id)
        return read_png(path)


# ---------------------------------------------------------------------------
# sidecar client

def _read_exact(sock: socket.socket, count: int) -> bytes:
    buf = bytearray()
    while len(buf) < count:
        try:
            chunk = sock.recv(min(1 << 20, count - len(buf)))
        except socket.timeout as exc:
            raise OracleTransportError(f"sidecar timed out mid-payload: {exc}") from exc
        if not chunk:
            raise OracleProtocolError(
                f"sidecar closed the connection with {count - len(buf)} payload bytes missing")
        buf.extend(chunk)
    return bytes(buf)


def _read_line(sock: socket.socket, limit: int = 1 << 16) -> bytes:
    buf = bytearray()
    while not buf.endswith(b"\n"):
        if len(buf) > limit:
            raise OracleProtocolError("sidecar header line exceeds limit")
        try:
            chunk = sock.recv(1)
        except socket.timeout as exc:
            raise OracleTransportError(f"sidecar timed out reading header: {exc}") from exc
        if not chunk:
            raise OracleProtocolError("sidecar closed the connection before a header line")
        buf.extend(chunk)
    return bytes(buf)


class SidecarOracle(SrOracle):
    """Client for the out-of-process SR service.

    Wire format per request: one JSON line
      {"id":u64,"op":"upscale","width":W,"height":H,"channels":3,"scale":S,"prompt":str?}
    followed by W*H*3 little-endian float32 values, row-major and
    channel-interleaved. The response mirrors this framing. Byte-exact, no
    compression; a single request is in flight per connection.
    """

    def __init__(self, host: str, port: int, timeout: float = 120.0, prompt: str | None = None):
        self.host = host
        self.port = port
        self.timeout = timeout
        self.prompt = prompt
        self._sock: socket.socket | None = None
        self._next_id = 0

    @property
    def endpoint(self) -> str:
        return f"{self.host}:{self.port}"

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
            except OSError as exc:
                raise OracleTransportError(f"cannot reach sidecar at {self.endpoint}: {exc}") from exc
        return self._sock

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def upscale(self, req: SrRequest) -> np.ndarray:
        self._check_scale(req)
        h, w = req.image.shape[:2]
        req_id = self._next_id
        self._next_id += 1
        header = {
            "id": req_id,
            "op": "upscale",
            "width": w,
            "height": h,
            "channels": 3,
            "scale": req.scale,
        }
        prompt = req.prompt if req.prompt is not None else self.prompt
        if prompt is not None:
            header["prompt"] = prompt
        payload = np.ascontiguousarray(req.image, dtype="<f4").tobytes()
        sock = self._connect()
        try:
            sock.sendall(json.dumps(header).encode() + b"\n" + payload)
            line = _read_line(sock)
        except (OracleError,):
            self.close()
            raise
        except OSError as exc:
            self.close()
            raise OracleTransportError(f"sidecar {self.endpoint} transport failure: {exc}") from exc
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as exc:
            self.close()
            raise OracleProtocolError(f"sidecar sent a malformed response header: {exc}") from exc
        if resp.get("id") != req_id:
            self.close()
            raise OracleProtocolError(
                f"sidecar answered request {resp.get('id')} while {req_id} was in flight")
        if resp.get("status") == "error":
            raise OracleFailure(f"sidecar error: {resp.get('message', 'unspecified')}")
        if resp.get("status") != "ok":
            self.close()
            raise OracleProtocolError(f"sidecar sent unknown status {resp.get('status')!r}")
        rw, rh, rc = resp.get("width"), resp.get("height"), resp.get("channels")
        if (rw, rh, rc) != (w * req.scale, h * req.scale, 3):
            self.close()
            raise OracleProtocolError(
                f"sidecar returned {rw}x{rh}x{rc}, expected {w * req.scale}x{h * req.scale}x3")
        try:
            raw = _read_exact(sock, rw * rh * 3 * 4)
        except OracleError:
            self.close()
            raise
        except OSError as exc:
            self.close()
            raise OracleTransportError(f"sidecar {self.endpoint} transport failure: {exc}") from exc
        img = np.frombuffer(raw, dtype="<f4").reshape(rh, rw, 3).astype(np.float64)
        if not np.all(np.isfinite(img)):
            raise OracleProtocolError("sidecar payload contains non-finite values")
        return np.clip(img, 0.0, 1.0)


def parse_oracle_spec(spec: str, prompt: str | None = None) -> SrOracle:
    """Build an oracle from a CLI selector: bicubic | sharpen | cheat:DIR |
    sidecar:HOST:PORT."""
    if spec == "bicubic":
        return BicubicOracle()
    if spec == "sharpen":
        return SharpenOracle()
    if spec.startswith("cheat:"):
        return CheatOracle(DirectoryGtStore(spec[len("cheat:"):]))
    if spec.startswith("sidecar:"):
        rest = spec[len("sidecar:"):]
        host, sep, port = rest.rpartition(":")
        if not sep or not host:
            raise ValueError(f"sidecar oracle needs HOST:PORT, got {rest!r}")
        return SidecarOracle(host, int(port), prompt=prompt)
    raise ValueError(f"unknown oracle {spec!r}")
