"""Shared generators and independent oracles used across the test modules.

The oracles here deliberately avoid the library's own code paths: dedup is a
plain dict walk, centroids/normals are per-face Python arithmetic, and STL
bytes are hand-packed with struct. Library results are compared against
these, not the other way around.
"""

from __future__ import annotations

import struct

import numpy as np
import pytest

from ioskit.geometry import Normalization, PointCloud
from ioskit.meshio import TriangleMesh


def random_indexed_mesh(seed: int, n_faces: int = 30) -> TriangleMesh:
    """Arbitrary valid indexed mesh (may contain unreferenced vertices)."""
    rng = np.random.default_rng(seed)
    nv = max(4, n_faces // 2 + 3)
    verts = rng.normal(scale=rng.uniform(0.5, 20.0), size=(nv, 3))
    faces = np.array(
        [rng.choice(nv, size=3, replace=False) for _ in range(n_faces)],
        dtype=np.int64,
    )
    return TriangleMesh(verts, faces)


def random_soup(seed: int, n_faces: int = 30) -> np.ndarray:
    """Triangle soup (F, 3, 3) float32 with vertex sharing across faces."""
    rng = np.random.default_rng(seed)
    soup = rng.normal(scale=5.0, size=(n_faces, 3, 3)).astype(np.float32)
    for i in range(1, n_faces):
        if rng.random() < 0.5:  # share an edge with the previous face
            j = int(rng.integers(0, i))
            soup[i, 0] = soup[j, 1]
            soup[i, 1] = soup[j, 2]
    return soup


def soup_to_mesh_oracle(soup: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reference dedup: exact byte equality, first-occurrence order,
    degenerate faces dropped, unreferenced vertices compacted."""
    index: dict[bytes, int] = {}
    verts: list[np.ndarray] = []
    faces: list[list[int]] = []
    for tri in soup:
        face = []
        for v in tri:
            key = np.ascontiguousarray(v).tobytes()
            if key not in index:
                index[key] = len(verts)
                verts.append(np.frombuffer(key, dtype=soup.dtype).astype(np.float64))
            face.append(index[key])
        faces.append(face)
    faces = [f for f in faces if len(set(f)) == 3]
    used = sorted({i for f in faces for i in f})
    remap = {old: new for new, old in enumerate(used)}
    verts = [verts[i] for i in used]
    faces = [[remap[i] for i in f] for f in faces]
    return (
        np.array(verts, dtype=np.float64).reshape(len(verts), 3),
        np.array(faces, dtype=np.int64).reshape(len(faces), 3),
    )


def soup_to_stl_binary(soup: np.ndarray, header: bytes = b"oracle") -> bytes:
    """Hand-packed binary STL for a float32 soup (normals zeroed)."""
    out = [header.ljust(80, b"\x00"), struct.pack("<I", len(soup))]
    for tri in soup:
        out.append(struct.pack("<3f", 0.0, 0.0, 0.0))
        for v in tri:
            out.append(struct.pack("<3f", *(float(x) for x in v)))
        out.append(struct.pack("<H", 0))
    return b"".join(out)


def random_cloud(seed: int, n: int = 50) -> PointCloud:
    """Valid 6-channel cloud with unit-norm pseudo-color rows."""
    rng = np.random.default_rng(seed)
    xyz = rng.normal(size=(n, 3))
    g = np.abs(rng.normal(size=(n, 3))) + 1e-3
    g = g / np.linalg.norm(g, axis=1, keepdims=True)
    pts = np.hstack([xyz, g]).astype(np.float32)
    return PointCloud(
        pts,
        Normalization(rng.normal(size=3), float(rng.uniform(0.5, 4.0))),
        int(rng.integers(0, 2**63)),
    )


def random_rigid(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random proper rotation (QR with sign fix) and translation."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q, rng.normal(scale=10.0, size=3)


@pytest.fixture
def tetra_mesh() -> TriangleMesh:
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
    f = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]], dtype=np.int64)
    return TriangleMesh(v, f)
