"""Color-inpainting and depth-estimation backends.

Built-in mocks are deterministic closed forms so the rest of the pipeline
has ground truth. Real models attach out of process through a
length-prefixed JSON protocol over the child's stdin/stdout.
"""

from __future__ import annotations

import base64
import colorsys
import json
import logging
import os
import selectors
import shlex
import struct
import subprocess
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import Camera, ColorMap, DepthMap, SemanticMap, intrinsics_camera
from .io import (color_from_png_bytes, color_to_png_bytes, depth_from_png_bytes, depth_to_png_bytes,
                 mask_from_png_bytes, mask_to_png_bytes, semantic_from_png_bytes, semantic_to_png_bytes)
from .layout import BACKGROUND_IDS

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    def __init__(self, msg: str, transcript=()):
        super().__init__(msg)
        self.transcript = list(transcript)


class ConfigurationError(ValueError):
    pass


def _make_palette() -> np.ndarray:
    # 24 hues 15 degrees apart; distinct chromaticities, max channel 0.9
    return np.array([colorsys.hsv_to_rgb(((7 * i) % 24) / 24.0, 0.75, 0.9) for i in range(24)])


PALETTE = _make_palette()


def palette_color(category_id) -> np.ndarray:
    return PALETTE[np.asarray(category_id) % len(PALETTE)]


def chromaticity(rgb: np.ndarray) -> np.ndarray:
    s = rgb.sum(axis=-1, keepdims=True)
    return rgb / np.where(s > 0, s, 1.0)


def palette_match(colors: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """True where a color's nearest palette chromaticity is its label's entry."""
    ref = chromaticity(PALETTE)
    c = chromaticity(np.asarray(colors, dtype=np.float64))
    d = ((c[:, None, :] - ref[None, :, :]) ** 2).sum(axis=-1)
    return d.argmin(axis=1) == (np.asarray(labels) % len(PALETTE))


@dataclass(frozen=True)
class SynthesisRequest:
    color: ColorMap
    mask: np.ndarray
    """True where content must be generated."""
    semantic: SemanticMap
    depth: DepthMap
    prompt: str = ""
    seed: int = 0
    camera: Camera | None = None
    """In-process only; not part of the wire format."""

    def __post_init__(self):
        res = self.color.resolution
        if not (self.semantic.resolution == res and self.depth.resolution == res
                and self.mask.shape == (res[1], res[0])):
            raise ValueError("request maps must share one resolution")


def surface_normals(depth: DepthMap, cam: Camera) -> np.ndarray:
    """Camera-frame normals from a depth map by central differences, facing the camera."""
    h, w = depth.values.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    z = depth.values
    P = np.stack([z * (u - cam.cx) / cam.fx, z * (v - cam.cy) / cam.fy, z], axis=-1)
    du = np.gradient(P, axis=1)
    dv = np.gradient(P, axis=0)
    n = np.cross(du, dv)
    n /= np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-12)
    flip = (n * P).sum(axis=-1) > 0
    n[flip] *= -1
    return n


def _camera_rays(cam: Camera) -> np.ndarray:
    v, u = np.mgrid[0 : cam.height, 0 : cam.width].astype(np.float64)
    d = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def texture_field(category_ids: np.ndarray, seed: int) -> np.ndarray:
    """Per-pixel procedural modulation in [-1, 1], seeded per category."""
    h, w = category_ids.shape
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((h, w))
    for cid in np.unique(category_ids):
        rng = np.random.default_rng([seed, int(cid)])
        fu, fv = rng.uniform(0.01, 0.06, 2)
        phase = rng.uniform(0, 2 * np.pi)
        sel = category_ids == cid
        out[sel] = np.sin(2 * np.pi * (fu * u[sel] + fv * v[sel]) + phase)
    return out


@dataclass
class MockBackend:
    """Palette inpainting and analytically distorted depth."""

    gamma: float = 1.25
    beta: float = 0.2
    ripple: float = 0.03
    periods: float = 2.0
    strength: float = 1.0
    texture: float = 0.1

    def inpaint(self, req: SynthesisRequest) -> ColorMap:
        cam = req.camera or intrinsics_camera(*req.color.resolution)
        ids = req.semantic.ids
        n = surface_normals(req.depth, cam)
        shade = 0.4 + 0.6 * np.clip(-(n * _camera_rays(cam)).sum(axis=-1), 0.0, None)
        mod = 1.0 + self.texture * texture_field(ids, req.seed)
        gen = palette_color(ids) * (shade * mod)[..., None]
        return ColorMap(np.where(req.mask[..., None], gen, req.color.rgb))

    def distortion(self) -> tuple[float, float, float]:
        s = self.strength
        return 1.0 + s * (self.gamma - 1.0), s * self.beta, s * self.ripple

    def ripple_field(self, width: int, height: int, seed: int) -> np.ndarray:
        phase = np.random.default_rng(seed).uniform(0, 2 * np.pi)
        u = np.arange(width, dtype=np.float64)
        row = np.sin(2 * np.pi * self.periods * u / width + phase)
        return np.broadcast_to(row, (height, width))

    def estimate(self, color: ColorMap, context: DepthMap | None = None, seed: int = 0) -> DepthMap:
        if context is None:
            raise ConfigurationError("mock depth backend needs the condition depth as context")
        g, b, a = self.distortion()
        w, h = context.resolution
        vals = (context.values - b) / g + a * self.ripple_field(w, h, seed)
        return DepthMap(vals, context.mask & (vals > 0))

    def close(self) -> None:
        pass


def synthesize(req: SynthesisRequest, backend) -> ColorMap:
    out = backend.inpaint(req)
    if out.resolution != req.color.resolution:
        raise BackendError(f"backend returned {out.resolution}, expected {req.color.resolution}")
    keep = ~req.mask
    if not np.array_equal(out.rgb[keep], req.color.rgb[keep]):
        log.warning("backend modified pixels outside the inpaint mask; restoring them")
    return ColorMap(np.where(keep[..., None], req.color.rgb, out.rgb))


def estimate_depth(color: ColorMap, backend, context: DepthMap | None = None, seed: int = 0) -> DepthMap:
    return backend.estimate(color, context, seed)


def build_prompt(semantic: SemanticMap, registry: dict[str, int], global_prompt: str) -> str:
    ids = semantic.ids
    valid = ids != 0
    total = int(valid.sum())
    names = {v: k for k, v in registry.items()}
    rows = []
    if total:
        cids, counts = np.unique(ids[valid], return_counts=True)
        for cid, cnt in zip(cids.tolist(), counts.tolist()):
            if cid in BACKGROUND_IDS or cnt < 0.01 * total:
                continue
            rows.append((-cnt, cid, names.get(cid, str(cid))))
    if not rows:
        return f"{global_prompt}, walls and floor"
    rows.sort()
    return f"{global_prompt}, containing " + ", ".join(r[2] for r in rows)


# --------------------------------------------------------------------------- wire protocol


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(s) -> bytes:
    if not isinstance(s, str):
        raise BackendError(f"expected base64 string, got {type(s).__name__}")
    try:
        return base64.b64decode(s.encode("ascii"), validate=True)
    except ValueError as exc:
        raise BackendError(f"invalid base64 payload: {exc}") from None


def _png(decoder, payload):
    try:
        return decoder(_unb64(payload))
    except BackendError:
        raise
    except Exception as exc:  # PIL raises a variety of errors on corrupt images
        raise BackendError(f"undecodable image payload: {exc}") from None


def encode_message(obj: dict) -> bytes:
    body = json.dumps(obj, separators=(",", ":")).encode("utf-8")
    return struct.pack(">I", len(body)) + body


def decode_message(data: bytes) -> dict:
    if len(data) < 4:
        raise BackendError("truncated length prefix")
    (n,) = struct.unpack(">I", data[:4])
    if len(data) - 4 != n:
        raise BackendError(f"length prefix {n} does not match payload size {len(data) - 4}")
    try:
        obj = json.loads(data[4:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BackendError(f"malformed JSON message: {exc}") from None
    if not isinstance(obj, dict):
        raise BackendError("message must be a JSON object")
    return obj


def encode_inpaint_request(req: SynthesisRequest) -> dict:
    return {
        "op": "inpaint",
        "color": _b64(color_to_png_bytes(req.color)),
        "mask": _b64(mask_to_png_bytes(req.mask)),
        "semantic": _b64(semantic_to_png_bytes(req.semantic)),
        "depth": _b64(depth_to_png_bytes(req.depth)),
        "prompt": req.prompt,
        "seed": int(req.seed),
    }


def decode_inpaint_request(msg: dict) -> SynthesisRequest:
    try:
        return SynthesisRequest(
            color=_png(color_from_png_bytes, msg["color"]),
            mask=_png(mask_from_png_bytes, msg["mask"]),
            semantic=_png(semantic_from_png_bytes, msg["semantic"]),
            depth=_png(depth_from_png_bytes, msg["depth"]),
            prompt=str(msg["prompt"]),
            seed=int(msg["seed"]),
        )
    except KeyError as exc:
        raise BackendError(f"inpaint request missing field {exc}") from None


def encode_color_response(color: ColorMap) -> dict:
    return {"color": _b64(color_to_png_bytes(color))}


def decode_color_response(msg: dict) -> ColorMap:
    if "color" not in msg:
        raise BackendError("response missing 'color'")
    return _png(color_from_png_bytes, msg["color"])


def encode_depth_request(color: ColorMap) -> dict:
    return {"op": "depth", "color": _b64(color_to_png_bytes(color))}


def encode_depth_response(depth: DepthMap) -> dict:
    return {"depth": _b64(depth_to_png_bytes(depth))}


def decode_depth_response(msg: dict) -> DepthMap:
    if "depth" not in msg:
        raise BackendError("response missing 'depth'")
    return _png(depth_from_png_bytes, msg["depth"])


@dataclass
class ProtocolBackend:
    """Child-process backend speaking length-prefixed JSON on stdin/stdout."""

    command: str | list[str]
    timeout: float = 300.0
    transcript: list[str] = field(default_factory=list)
    _proc: subprocess.Popen | None = field(default=None, repr=False)

    def _note(self, line: str) -> None:
        self.transcript.append(line)
        del self.transcript[:-50]

    def _start(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            argv = shlex.split(self.command) if isinstance(self.command, str) else list(self.command)
            self._note(f"spawn {argv}")
            self._proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          stderr=subprocess.PIPE, bufsize=0)
        return self._proc

    def _fail(self, msg: str):
        proc = self._proc
        if proc is not None:
            if proc.poll() is None:
                proc.kill()
            proc.wait()
            err = proc.stderr.read() if proc.stderr else b""
            if err:
                self._note("stderr: " + err.decode("utf-8", "replace")[-2000:])
            self._proc = None
        self._note("error: " + msg)
        raise BackendError(msg, self.transcript)

    def _read_exact(self, proc, n: int, deadline: float) -> bytes:
        buf = b""
        fd = proc.stdout.fileno()
        with selectors.DefaultSelector() as sel:
            sel.register(fd, selectors.EVENT_READ)
            while len(buf) < n:
                left = deadline - time.monotonic()
                if left <= 0 or not sel.select(left):
                    self._fail(f"backend timed out after {self.timeout:g} s")
                chunk = os.read(fd, n - len(buf))
                if not chunk:
                    self._fail("backend closed its output stream")
                buf += chunk
        return buf

    def call(self, message: dict) -> dict:
        proc = self._start()
        self._note(f"send op={message.get('op')}")
        try:
            proc.stdin.write(encode_message(message))
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._fail(f"could not write to backend: {exc}")
        deadline = time.monotonic() + self.timeout
        head = self._read_exact(proc, 4, deadline)
        (n,) = struct.unpack(">I", head)
        if n > 1 << 30:
            self._fail(f"implausible message length {n}")
        body = self._read_exact(proc, n, deadline)
        try:
            reply = decode_message(head + body)
        except BackendError as exc:
            self._fail(str(exc))
        if "error" in reply:
            self._fail(f"backend reported error: {reply['error']}")
        self._note(f"recv {n} bytes")
        return reply

    def inpaint(self, req: SynthesisRequest) -> ColorMap:
        reply = self.call(encode_inpaint_request(req))
        try:
            return decode_color_response(reply)
        except BackendError as exc:
            self._fail(str(exc))

    def estimate(self, color: ColorMap, context: DepthMap | None = None, seed: int = 0) -> DepthMap:
        reply = self.call(encode_depth_request(color))
        try:
            return decode_depth_response(reply)
        except BackendError as exc:
            self._fail(str(exc))

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait()
            self._proc = None


def make_backend(spec: str, timeout: float = 300.0, **mock_kwargs):
    """'mock' or 'proto:<command line>'."""
    if spec == "mock":
        return MockBackend(**mock_kwargs)
    if spec.startswith("proto:"):
        return ProtocolBackend(spec[len("proto:"):], timeout=timeout)
    raise ConfigurationError(f"unknown backend {spec!r}")
