"""Symmetric truncated Chamfer distance with nearest neighbors from a k-d tree."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..geometry import PointCloud


@dataclass(frozen=True)
class Correspondences:
    src_to_tgt: np.ndarray
    """index into tgt for every src point"""
    tgt_to_src: np.ndarray
    """index into src for every tgt point"""


def nearest(src: np.ndarray, tgt: np.ndarray, tgt_tree: cKDTree | None = None) -> Correspondences:
    tgt_tree = cKDTree(tgt) if tgt_tree is None else tgt_tree
    _, s2t = tgt_tree.query(src)
    _, t2s = cKDTree(src).query(tgt)
    return Correspondences(np.asarray(s2t), np.asarray(t2s))


def chamfer_with(src: np.ndarray, tgt: np.ndarray, corr: Correspondences, trunc: float):
    """Loss and d(loss)/d(src) for fixed correspondences."""
    t2 = trunc * trunc
    d_st = src - tgt[corr.src_to_tgt]
    q_st = np.einsum("ij,ij->i", d_st, d_st)
    d_ts = src[corr.tgt_to_src] - tgt
    q_ts = np.einsum("ij,ij->i", d_ts, d_ts)
    ns, nt = len(src), len(tgt)
    loss = 0.5 * (np.minimum(q_st, t2).mean() + np.minimum(q_ts, t2).mean())
    grad = np.where((q_st < t2)[:, None], d_st, 0.0) * (1.0 / ns)
    contrib = np.where((q_ts < t2)[:, None], d_ts, 0.0) * (1.0 / nt)
    np.add.at(grad, corr.tgt_to_src, contrib)
    return float(loss), grad


def truncated_chamfer(src, tgt, trunc: float) -> float:
    """Mean of the two directional means of min(squared NN distance, trunc^2)."""
    a = src.points if isinstance(src, PointCloud) else np.asarray(src, dtype=np.float64)
    b = tgt.points if isinstance(tgt, PointCloud) else np.asarray(tgt, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer needs two nonempty clouds")
    loss, _ = chamfer_with(a, b, nearest(a, b), trunc)
    return loss
