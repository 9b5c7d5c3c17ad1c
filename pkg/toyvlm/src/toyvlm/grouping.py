"""Deterministic point grouping: farthest-point centers plus nearest members."""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import TooFewPoints


@dataclasses.dataclass(frozen=True)
class PointGroups:
    """Index and row views of one grouping.

    ``member_index[:, 0]`` is always the center itself, so a group of size
    one is exactly its center.
    """

    center_index: np.ndarray
    member_index: np.ndarray
    centers: np.ndarray
    members: np.ndarray


def group_points(points: np.ndarray, groups: int, neighbors: int, *, seed: int) -> PointGroups:
    """Pick ``groups`` farthest-point centers, then fill each group with the
    center plus its ``neighbors - 1`` nearest other rows.

    The walk starts at index ``seed % N`` and is fully deterministic: argmax
    and argsort ties resolve to the lowest index, and coincident rows never
    produce a repeated center index. Distances use xyz only.
    """
    if groups < 1 or neighbors < 1:
        raise ValueError("groups and neighbors must be positive")
    pts = np.asarray(points, dtype=np.float32)
    if pts.ndim != 2 or pts.shape[1] != 6:
        raise ValueError(f"points must be (N, 6), got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("points contain non-finite values")
    n = pts.shape[0]
    if n < groups:
        raise TooFewPoints(f"{n} points cannot supply {groups} distinct centers")
    if n < neighbors:
        raise TooFewPoints(f"{n} points cannot fill groups of {neighbors}")

    xyz = pts[:, :3].astype(np.float64)
    chosen = np.empty(groups, dtype=np.int64)
    taken = np.zeros(n, dtype=bool)
    chosen[0] = int(seed % n)
    taken[chosen[0]] = True
    dist = ((xyz - xyz[chosen[0]]) ** 2).sum(axis=1)
    for g in range(1, groups):
        # taken rows are masked below any real squared distance
        far = int(np.argmax(np.where(taken, -1.0, dist)))
        chosen[g] = far
        taken[far] = True
        dist = np.minimum(dist, ((xyz - xyz[far]) ** 2).sum(axis=1))

    member = np.empty((groups, neighbors), dtype=np.int64)
    for g, c in enumerate(chosen):
        d = ((xyz - xyz[c]) ** 2).sum(axis=1)
        d[c] = np.inf
        order = np.argsort(d, kind="stable")
        member[g, 0] = c
        member[g, 1:] = order[: neighbors - 1]
    return PointGroups(
        center_index=chosen,
        member_index=member,
        centers=pts[chosen].copy(),
        members=pts[member].copy(),
    )
