"""Per-level warp networks with hand-written reverse-mode gradients.

Each level is a 2-hidden-layer tanh MLP on a sinusoidal encoding of the
(normalized) point position. In ray mode it predicts a scalar step along
each point's camera ray; in free mode an axis-angle rotation plus a
translation per point.
"""

from __future__ import annotations

import numpy as np

HIDDEN = 64
INIT_STD = 1e-4


def encode(x: np.ndarray, level: int) -> np.ndarray:
    f = (2.0**level) * np.pi
    return np.concatenate([x, np.sin(f * x), np.cos(f * x)], axis=1)


class WarpLevel:
    """One pyramid level. `mode` is "ndr" (ray step) or "ndp" (6-DoF)."""

    def __init__(self, level: int, mode: str, rng: np.random.Generator, max_step: float = np.inf):
        if mode not in ("ndr", "ndp"):
            raise ValueError(f"unknown warp mode {mode!r}")
        self.level = level
        self.mode = mode
        self.max_step = max_step
        out = 1 if mode == "ndr" else 6
        shapes = {"W1": (9, HIDDEN), "b1": (HIDDEN,), "W2": (HIDDEN, HIDDEN), "b2": (HIDDEN,),
                  "W3": (HIDDEN, out), "b3": (out,)}
        self.params = {k: rng.normal(0.0, INIT_STD, s) for k, s in shapes.items()}

    def reset_identity(self) -> None:
        self.params["W3"][:] = 0.0
        self.params["b3"][:] = 0.0

    # ---------------------------------------------------------------- network

    def _mlp(self, x):
        e = encode(x, self.level)
        p = self.params
        h1 = np.tanh(e @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        o = h2 @ p["W3"] + p["b3"]
        return o, (e, h1, h2)

    def _mlp_backward(self, cache, d_o):
        e, h1, h2 = cache
        p = self.params
        g = {"W3": h2.T @ d_o, "b3": d_o.sum(axis=0)}
        d_a2 = (d_o @ p["W3"].T) * (1.0 - h2 * h2)
        g["W2"] = h1.T @ d_a2
        g["b2"] = d_a2.sum(axis=0)
        d_a1 = (d_a2 @ p["W2"].T) * (1.0 - h1 * h1)
        g["W1"] = e.T @ d_a1
        g["b1"] = d_a1.sum(axis=0)
        return g

    # ---------------------------------------------------------------- warp

    def step(self, o):
        """Ray step from raw output, saturated smoothly at +-max_step."""
        if np.isinf(self.max_step):
            return o[:, 0], np.ones(len(o))
        c = self.max_step
        t = np.tanh(o[:, 0] / c)
        return c * t, 1.0 - t * t

    def forward(self, x: np.ndarray, rays: np.ndarray):
        """Warp points x (n, 3); returns warped points and a cache for backward."""
        o, cache = self._mlp(x)
        if self.mode == "ndr":
            delta, dstep = self.step(o)
            return x + delta[:, None] * rays, (cache, o, x, rays, dstep)
        w, t = o[:, :3], o[:, 3:]
        return _rotate(w, x) + t, (cache, o, x, rays, None)

    def backward(self, fcache, g_out: np.ndarray) -> dict:
        cache, o, x, rays, dstep = fcache
        if self.mode == "ndr":
            d_o = (np.einsum("ij,ij->i", g_out, rays) * dstep)[:, None]
        else:
            d_o = np.concatenate([_rotate_vjp(o[:, :3], x, g_out), g_out], axis=1)
        return self._mlp_backward(cache, d_o)

    def delta(self, x: np.ndarray) -> np.ndarray:
        o, _ = self._mlp(x)
        return self.step(o)[0]


def _coeffs(th):
    """a = sin(th)/th, b = (1-cos th)/th^2 and their (d/dth)/th, stable near 0."""
    small = th < 1e-3
    ts = np.where(small, 1.0, th)
    t2 = th * th
    a = np.where(small, 1 - t2 / 6 + t2 * t2 / 120, np.sin(ts) / ts)
    b = np.where(small, 0.5 - t2 / 24 + t2 * t2 / 720, (1 - np.cos(ts)) / (ts * ts))
    da = np.where(small, -1 / 3 + t2 / 30, (ts * np.cos(ts) - np.sin(ts)) / ts**3)
    db = np.where(small, -1 / 12 + t2 / 180, (ts * np.sin(ts) - 2 * (1 - np.cos(ts))) / ts**4)
    return a, b, da, db


def _rotate(w, x):
    """Rodrigues rotation of each x by its axis-angle w."""
    th = np.linalg.norm(w, axis=1)
    a, b, _, _ = _coeffs(th)
    wx = np.cross(w, x)
    wwx = np.cross(w, wx)
    return x + a[:, None] * wx + b[:, None] * wwx


def _rotate_vjp(w, x, g):
    """g^T d(R(w) x)/dw for each row."""
    th = np.linalg.norm(w, axis=1)
    a, b, da, db = _coeffs(th)
    wx = np.cross(w, x)
    wwx = np.cross(w, wx)
    wdotx = np.einsum("ij,ij->i", w, x)
    gdotw = np.einsum("ij,ij->i", g, w)
    gdotx = np.einsum("ij,ij->i", g, x)
    term_a = a[:, None] * np.cross(x, g) + (da * np.einsum("ij,ij->i", g, wx))[:, None] * w
    term_b = b[:, None] * (wdotx[:, None] * g + gdotw[:, None] * x - 2 * gdotx[:, None] * w)
    term_b += (db * np.einsum("ij,ij->i", g, wwx))[:, None] * w
    return term_a + term_b


class Adam:
    def __init__(self, params: dict, lr: float = 0.01, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-12):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            self.params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
