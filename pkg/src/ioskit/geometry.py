"""Mesh-to-point-cloud geometry: centroids, pseudo-color, pose, sampling.

The conversion pipeline turns a triangle mesh into an N x 6 point cloud:
per-face centroids and (unnormalized) normals, optional pose
canonicalization, unit-ball normalization, seeded random downsampling, and
finally a geometry-derived pseudo-color channel per point.

The pseudo-color mapping takes the absolute value of the unit normal,
|n / ||n||_2|, which is invariant to normal orientation flips -- the same
surface scanned inside-out gets the same color. Zero-length normals
(degenerate faces) fall back to the uniform direction (1/sqrt(3), ...) so the
mapping is total.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._seeding import fisher_yates_select
from .meshio import TriangleMesh

EPS_ZERO_NORMAL = 1e-12
_RANK_RTOL = 1e-12


class GeometryError(Exception):
    """Base class for geometry pipeline failures."""


class EmptyMesh(GeometryError):
    """The mesh has no faces to convert."""


class DegenerateConfiguration(GeometryError):
    """The point set is rank-deficient (coincident or colinear), so a
    principal-axes frame is undefined."""


class ZeroExtent(GeometryError):
    """All points coincide; there is no scale to normalize by."""


class EmptyInput(GeometryError):
    """An operation that needs at least one point got none."""


@dataclass
class OrientedPointSet:
    """Positions with per-point normals, both (N, 3) float64.

    Normals are carried unnormalized (face-area weighted, as produced by the
    cross product) and may be zero for degenerate faces. Positions must be
    finite.
    """

    positions: np.ndarray
    normals: np.ndarray

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(self.positions, dtype=np.float64)
        n = np.ascontiguousarray(self.normals, dtype=np.float64)
        if p.size == 0:
            p = p.reshape(0, 3)
        if n.size == 0:
            n = n.reshape(0, 3)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {p.shape}")
        if n.shape != p.shape:
            raise ValueError(
                f"normals shape {n.shape} does not match positions {p.shape}"
            )
        if not np.isfinite(p).all() or not np.isfinite(n).all():
            raise ValueError("positions and normals must be finite")
        self.positions = p
        self.normals = n

    def __len__(self) -> int:
        return len(self.positions)


@dataclass
class RigidTransform:
    """Proper rigid motion: x -> rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.ascontiguousarray(self.rotation, dtype=np.float64)
        t = np.ascontiguousarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be (3, 3), got {r.shape}")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        self.rotation = r
        self.translation = t

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def apply_normals(self, normals: np.ndarray) -> np.ndarray:
        return normals @ self.rotation.T


@dataclass
class Normalization:
    """Record of the unit-ball normalization: original centroid and scale."""

    centroid: np.ndarray
    scale: float

    def __post_init__(self) -> None:
        self.centroid = np.ascontiguousarray(self.centroid, dtype=np.float64).reshape(3)
        self.scale = float(self.scale)


@dataclass
class PointCloud:
    """Final N x 6 cloud: columns x, y, z, g1, g2, g3 (float32).

    The g-channels are the pseudo-color triple: non-negative, componentwise
    <= 1, unit Euclidean norm up to float32 rounding.
    """

    points: np.ndarray
    normalization: Normalization = field(
        default_factory=lambda: Normalization(np.zeros(3), 1.0)
    )
    seed: int = 0

    def __post_init__(self) -> None:
        pts = np.ascontiguousarray(self.points, dtype=np.float32)
        if pts.size == 0:
            pts = pts.reshape(0, 6)
        if pts.ndim != 2 or pts.shape[1] != 6:
            raise ValueError(f"points must be (N, 6), got {pts.shape}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        self.points = pts
        self.seed = int(self.seed)

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def color(self) -> np.ndarray:
        return self.points[:, 3:]

    def validate(self, tol: float = 1e-6) -> None:
        """Check the pseudo-color invariants (range and unit norm)."""
        g = self.points[:, 3:].astype(np.float64)
        if g.size == 0:
            return
        if g.min() < -tol or g.max() > 1 + tol:
            raise ValueError("pseudo-color channel outside [0, 1]")
        norms = np.linalg.norm(g, axis=1)
        if np.abs(norms - 1.0).max() > tol:
            raise ValueError("pseudo-color norm deviates from 1 beyond tolerance")


# ---------------------------------------------------------------------------


def face_centroids(mesh: TriangleMesh) -> OrientedPointSet:
    """Per-face centroid (mean of the 3 vertices) and cross-product normal.

    Normals are NOT normalized here; degenerate (zero-area) faces yield a
    zero normal, which the pseudo-color mapping later absorbs. Raises
    EmptyMesh for a mesh with no faces.
    """
    if mesh.n_faces == 0:
        raise EmptyMesh("mesh has no faces")
    tri = mesh.vertices[mesh.faces]  # (F, 3, 3)
    centroids = tri.mean(axis=1)
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return OrientedPointSet(centroids, normals)


def gcp(normals: np.ndarray) -> np.ndarray:
    """Map normals to the pseudo-color triple |n / ||n||_2|.

    Accepts a single (3,) vector or an (N, 3) batch and returns the same
    shape. Vectors with norm <= 1e-12 map to the uniform fallback
    (1/sqrt(3), 1/sqrt(3), 1/sqrt(3)). The output is flip-invariant
    (bit-exact for n vs -n), componentwise in [0, 1], and has unit norm.
    """
    arr = np.asarray(normals, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"normals must be (3,) or (N, 3), got {np.shape(normals)}")
    # pre-scale by the max component so the squared sum cannot overflow;
    # |n|/||n|| is invariant under the scaling
    mags = np.abs(arr)
    m = mags.max(axis=1, keepdims=True)
    safe_m = np.where(m > 0, m, 1.0)
    scaled = arr / safe_m
    scaled_norms = np.linalg.norm(scaled, axis=1, keepdims=True)
    small = m * scaled_norms <= EPS_ZERO_NORMAL
    safe = np.where(small | (scaled_norms == 0), 1.0, scaled_norms)
    out = np.abs(scaled) / safe
    fallback = 1.0 / np.sqrt(3.0)
    out = np.where(small, fallback, out)
    return out[0] if single else out


def _principal_axes(positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Principal axes (rows, descending variance) and the centroid.

    The sign of the first two axes is fixed so the point with the largest
    absolute projection projects positively (ties resolved to the lowest
    point index by argmax); the third axis is their cross product, which
    keeps the frame a proper rotation.
    """
    n = len(positions)
    if n == 0:
        raise DegenerateConfiguration("no points")
    centroid = positions.mean(axis=0)
    centered = positions - centroid
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    axes = eigvecs[:, order].T
    if eigvals[0] <= 0.0 or eigvals[1] <= eigvals[0] * _RANK_RTOL:
        raise DegenerateConfiguration(
            "points are coincident or colinear; principal frame is undefined"
        )
    for k in (0, 1):
        proj = centered @ axes[k]
        i = int(np.argmax(np.abs(proj)))
        if proj[i] < 0:
            axes[k] = -axes[k]
    axes[2] = np.cross(axes[0], axes[1])
    return axes, centroid


def canonicalize_pose(
    points: OrientedPointSet, transform: RigidTransform | None = None
) -> tuple[OrientedPointSet, RigidTransform]:
    """Put a point set into a canonical (or externally supplied) pose.

    With a transform given, it is simply applied (rotation also rotates the
    normals). Without one, a deterministic principal-axes frame is computed:
    the set is centered at its centroid and rotated so the axes of
    descending variance align with x, y, z. The resulting canonical
    coordinates are invariant (up to float tolerance) to any proper rigid
    motion of the input.

    Raises DegenerateConfiguration when no transform is given and the points
    are coincident or colinear.
    """
    if transform is None:
        axes, centroid = _principal_axes(points.positions)
        transform = RigidTransform(axes, -axes @ centroid)
    return (
        OrientedPointSet(
            transform.apply_points(points.positions),
            transform.apply_normals(points.normals),
        ),
        transform,
    )


def normalize_unit(points: OrientedPointSet) -> tuple[OrientedPointSet, Normalization]:
    """Center at the centroid and scale by the max distance from it.

    The result fits in the unit ball with at least one point on the sphere.
    A single-point set has no extent; by convention its scale is 1 (the
    point just moves to the origin). Two or more coincident points raise
    ZeroExtent. Normals are untouched.
    """
    n = len(points)
    if n == 0:
        raise EmptyInput("cannot normalize an empty point set")
    centroid = points.positions.mean(axis=0)
    centered = points.positions - centroid
    scale = float(np.linalg.norm(centered, axis=1).max())
    if scale == 0.0:
        if n >= 2:
            raise ZeroExtent("all points coincide")
        scale = 1.0
    return (
        OrientedPointSet(centered / scale, points.normals),
        Normalization(centroid, scale),
    )


def downsample_random(
    points: OrientedPointSet, n_target: int, seed: int
) -> OrientedPointSet:
    """Select exactly n_target points with a seeded generator.

    When the set has at least n_target points, n_target distinct indices are
    drawn without replacement by a partial Fisher-Yates pass, and the output
    is in draw order. Smaller sets keep every point (input order) and top up
    with uniform draws with replacement. Deterministic in
    (points, n_target, seed).
    """
    if n_target < 1:
        raise ValueError(f"n_target must be >= 1, got {n_target}")
    n = len(points)
    if n == 0:
        raise EmptyInput("cannot downsample an empty point set")
    rng = np.random.default_rng(seed)
    if n >= n_target:
        idx = fisher_yates_select(n, n_target, rng)
    else:
        extra = rng.integers(0, n, size=n_target - n)
        idx = np.concatenate([np.arange(n, dtype=np.int64), extra])
    return OrientedPointSet(points.positions[idx], points.normals[idx])


def mesh_to_pointcloud(
    mesh: TriangleMesh,
    n_target: int,
    seed: int,
    transform: RigidTransform | None = None,
    *,
    canonicalize: bool = True,
    normalize: bool = True,
) -> PointCloud:
    """Full mesh -> N x 6 cloud pipeline.

    Order: face centroids + normals, pose (supplied transform, or principal
    axes when canonicalize is True), unit-ball normalization (unless
    disabled), seeded downsampling to n_target, pseudo-color from the
    surviving normals. When the principal-axes frame is undefined (meshes
    whose centroids are coincident or colinear, e.g. a single face) the pose
    step degrades to the identity; normalization still centers the cloud.

    The output is finite for any finite input mesh.
    """
    pts = face_centroids(mesh)
    if transform is not None:
        pts, _ = canonicalize_pose(pts, transform)
    elif canonicalize:
        try:
            pts, _ = canonicalize_pose(pts)
        except DegenerateConfiguration:
            pass  # keep the input pose; normalization below still centers
    if normalize:
        pts, norm = normalize_unit(pts)
    else:
        norm = Normalization(np.zeros(3), 1.0)
    pts = downsample_random(pts, n_target, seed)
    color = gcp(pts.normals)
    data = np.hstack([pts.positions, color]).astype(np.float32)
    return PointCloud(data, norm, seed)
