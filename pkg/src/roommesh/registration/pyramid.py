"""Hierarchical non-rigid registration of an aligned depth map to target clouds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ..geometry import Camera, DepthMap, PointCloud, unproject
from .chamfer import chamfer_with, nearest
from .network import Adam, WarpLevel


class RegistrationError(RuntimeError):
    def __init__(self, msg: str, level: int):
        super().__init__(f"level {level}: {msg}")
        self.level = level


@dataclass(frozen=True)
class RegistrationParams:
    levels: int = 6
    lr: float = 0.01
    max_iters: int = 300
    patience: int = 20
    min_rel_improvement: float = 1e-4
    trunc: float = 0.3
    max_step: float = 0.5
    max_points: int = 3000
    """Optimization uses a seeded subsample of covered pixels of this size."""


@dataclass
class DeformationPyramid:
    levels: list[WarpLevel]
    mode: str
    center: np.ndarray
    scale: float

    def normalize(self, p):
        return (p - self.center) / self.scale

    def denormalize(self, p):
        return p * self.scale + self.center

    def warp(self, points: np.ndarray, rays: np.ndarray, upto: int | None = None) -> np.ndarray:
        """Apply the composed field to world points (rays are unit world directions)."""
        x = self.normalize(points)
        for lvl in self.levels[:upto]:
            x, _ = lvl.forward(x, rays)
        return self.denormalize(x)


@dataclass
class RegistrationResult:
    depth: DepthMap
    level_losses: list[float]
    """Loss (m^2) at the end of each level; index 0 is the unwarped loss."""
    iterations: list[int]
    mode: str
    noop: bool = False
    source_index: np.ndarray | None = None
    """(h, w) flat index of the source pixel whose point landed here, -1 if none."""
    points: np.ndarray | None = None
    """Warped world points, one per valid input pixel (row-major order)."""
    source: PointCloud | None = None
    loss_curves: list[list[float]] = field(default_factory=list)
    accepted: list[bool] = field(default_factory=list)


def _noop(est: DepthMap, cam: Camera, mode: str) -> RegistrationResult:
    h, w = est.values.shape
    idx = np.where(est.mask, np.arange(h * w).reshape(h, w), -1)
    src = unproject(est, cam)
    return RegistrationResult(est, [], [], mode, True, idx, src.points, src)


def _fit_level(level: WarpLevel, x, rays, tgt, tree, trunc, params: RegistrationParams, start_loss: float):
    opt = Adam(level.params, lr=params.lr)
    best = (start_loss, None)
    curve, best_curve = [], []
    it = 0
    for it in range(1, params.max_iters + 1):
        y, cache = level.forward(x, rays)
        corr = nearest(y, tgt, tree)
        loss, g = chamfer_with(y, tgt, corr, trunc)
        if not np.isfinite(loss):
            raise RegistrationError("loss is not finite", level.level)
        curve.append(loss)
        if loss < best[0]:
            best = (loss, {k: v.copy() for k, v in level.params.items()})
        best_curve.append(best[0])
        # progress is judged on the best loss so far; Adam's early overshoot is not "no progress"
        if it > params.patience:
            ref = best_curve[-1 - params.patience]
            if ref <= 0 or (ref - best[0]) / ref < params.min_rel_improvement:
                break
        opt.step(level.backward(cache, g))
    if best[1] is None:
        level.reset_identity()
        return start_loss, curve, it, False
    for k, v in best[1].items():
        level.params[k][:] = v
    y, _ = level.forward(x, rays)
    final, _ = chamfer_with(y, tgt, nearest(y, tgt, tree), trunc)
    if final > start_loss:
        level.reset_identity()
        return start_loss, curve, it, False
    return final, curve, it, True


def register(est_aligned: DepthMap, cam: Camera, targets, mode: str = "ndr",
             params: RegistrationParams = RegistrationParams(), seed: int = 0) -> RegistrationResult:
    """Warp `est_aligned` toward the union of target clouds (from the same camera)."""
    if mode not in ("ndr", "ndp"):
        raise ValueError(f"unknown registration mode {mode!r}")
    targets = [t for t in targets if len(t)]
    h, w = est_aligned.values.shape
    if not est_aligned.mask.any() or not targets:
        return _noop(est_aligned, cam, mode)
    covered = np.zeros((h, w), bool)
    for t in targets:
        covered[t.pixels[:, 1], t.pixels[:, 0]] = True
    src = unproject(est_aligned, cam)
    flat_src = src.pixels[:, 1] * w + src.pixels[:, 0]
    usable = np.nonzero(covered[src.pixels[:, 1], src.pixels[:, 0]])[0]
    if usable.size == 0:
        return _noop(est_aligned, cam, mode)

    all_pts = np.concatenate([src.points] + [t.points for t in targets])
    lo, hi = all_pts.min(axis=0), all_pts.max(axis=0)
    scale = float(max((hi - lo).max(), 1e-6))
    pyr = DeformationPyramid([], mode, (lo + hi) / 2, scale)

    rng = np.random.default_rng(seed)
    if usable.size > params.max_points:
        usable = np.sort(rng.choice(usable, params.max_points, replace=False))
    chosen = np.zeros(h * w, bool)
    chosen[flat_src[usable]] = True
    tgt_parts = []
    for t in targets:
        keep = chosen[t.pixels[:, 1] * w + t.pixels[:, 0]]
        tgt_parts.append(t.points[keep] if keep.any() else t.points)
    tgt = pyr.normalize(np.concatenate(tgt_parts))
    tree = cKDTree(tgt)
    x = pyr.normalize(src.points[usable])
    rays = src.rays[usable]
    trunc = params.trunc / scale

    loss, _ = chamfer_with(x, tgt, nearest(x, tgt, tree), trunc)
    losses, iters, curves, accepted = [loss * scale**2], [], [], []
    for k in range(params.levels):
        level = WarpLevel(k, mode, np.random.default_rng([seed, k]), max_step=params.max_step / scale)
        loss, curve, n_it, ok = _fit_level(level, x, rays, tgt, tree, trunc, params, loss)
        x, _ = level.forward(x, rays)
        pyr.levels.append(level)
        losses.append(loss * scale**2)
        iters.append(n_it)
        curves.append([c * scale**2 for c in curve])
        accepted.append(ok)

    warped = pyr.warp(src.points, src.rays)
    if mode == "ndr":
        z = (warped - cam.origin) @ cam.forward
        vals = np.zeros((h, w))
        vals[src.pixels[:, 1], src.pixels[:, 0]] = z
        mask = est_aligned.mask & (vals > 0)
        index = np.where(mask, np.arange(h * w).reshape(h, w), -1)
        depth = DepthMap(vals, mask)
    else:
        depth, index = _splat(warped, flat_src, cam, est_aligned.mask)
    return RegistrationResult(depth, losses, iters, mode, False, index, warped, src, curves, accepted)


def _splat(points, flat_src, cam: Camera, mask: np.ndarray):
    """Nearest-pixel z-min splat restricted to `mask`; in-mask holes take the nearest splat."""
    h, w = mask.shape
    local = cam.world_to_camera(points)
    z = local[:, 2]
    ok = z > 1e-6
    u = np.rint(cam.fx * local[:, 0] / np.where(ok, z, 1) + cam.cx).astype(np.int64)
    v = np.rint(cam.fy * local[:, 1] / np.where(ok, z, 1) + cam.cy).astype(np.int64)
    ok &= (u >= 0) & (u < w) & (v >= 0) & (v < h)
    ok[ok] &= mask[v[ok], u[ok]]
    zbuf = np.full(h * w, np.inf)
    index = np.full(h * w, -1, np.int64)
    # stable order: sort by depth then source index, first write per pixel wins
    cand = np.nonzero(ok)[0]
    pix = v[cand] * w + u[cand]
    order = np.lexsort((flat_src[cand], z[cand]))
    pix_o = pix[order]
    _, first = np.unique(pix_o, return_index=True)
    sel = cand[order[first]]
    zbuf[pix_o[first]] = z[sel]
    index[pix_o[first]] = flat_src[sel]
    zbuf = zbuf.reshape(h, w)
    index = index.reshape(h, w)
    hit = np.isfinite(zbuf)
    holes = mask & ~hit
    if holes.any() and hit.any():
        _, (iy, ix) = ndimage.distance_transform_edt(~hit, return_indices=True)
        zbuf[holes] = zbuf[iy[holes], ix[holes]]
        index[holes] = index[iy[holes], ix[holes]]
    vals = np.where(mask & np.isfinite(zbuf), zbuf, 0.0)
    return DepthMap(vals, mask & (vals > 0)), np.where(mask, index, -1)
