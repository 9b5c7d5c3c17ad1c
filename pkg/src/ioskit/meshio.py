"""Triangle mesh reading and writing for intraoral scan files.

Supported on-disk formats: binary and ASCII STL, Wavefront OBJ (v/f records),
and PLY 1.0 (ascii / binary_little_endian). Parsers are strict about size
laws and index ranges so corrupted files fail with a typed error instead of
propagating junk geometry downstream.

Format tags used throughout: "stl-ascii", "stl-binary", "obj", "ply-ascii",
"ply-binary-le".
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

STL_ASCII = "stl-ascii"
STL_BINARY = "stl-binary"
OBJ = "obj"
PLY_ASCII = "ply-ascii"
PLY_BINARY_LE = "ply-binary-le"

FORMATS = (STL_ASCII, STL_BINARY, OBJ, PLY_ASCII, PLY_BINARY_LE)

# binary STL record: 12 f32 normal, 9x f32 vertices, u16 attribute = 50 bytes
_STL_TRI_DTYPE = np.dtype(
    [("normal", "<f4", (3,)), ("verts", "<f4", (3, 3)), ("attr", "<u2")]
)
assert _STL_TRI_DTYPE.itemsize == 50

_PLY_TYPES = {
    "char": "b", "int8": "b",
    "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h",
    "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i",
    "uint": "I", "uint32": "I",
    "float": "f", "float32": "f",
    "double": "d", "float64": "d",
}
_PLY_FLOAT_CODES = ("f", "d")
_PLY_INDEX_CODES = ("b", "B", "h", "H", "i", "I")


class MeshIoError(Exception):
    """Base class for every mesh I/O failure."""


class UnknownFormat(MeshIoError):
    """No detection rule matched the input bytes."""


class UnsupportedFormat(MeshIoError):
    """The format was recognized but is not implemented (e.g. big-endian PLY)."""


class MalformedFile(MeshIoError):
    """The file violates its format's grammar or size law."""


class DegenerateTopology(MeshIoError):
    """A face repeats a vertex index and the reject policy is active."""


@dataclass
class Provenance:
    """Where a mesh came from: format tag and the original path, if any."""

    source_format: str | None = None
    path: str | None = None


@dataclass(eq=False)
class TriangleMesh:
    """Indexed triangle mesh with float64 vertices.

    Invariants enforced on construction: faces index into the vertex list,
    no face repeats a vertex, and the face list may be empty only when the
    vertex list is empty too.
    """

    vertices: np.ndarray
    faces: np.ndarray
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.size == 0:
            v = v.reshape(0, 3)
        if f.size == 0:
            f = f.reshape(0, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (N, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (M, 3), got {f.shape}")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise ValueError("face index out of range")
            if _degenerate_mask(f).any():
                raise ValueError("degenerate face (repeated vertex index)")
        elif len(v):
            raise ValueError("mesh has vertices but no faces")
        self.vertices = v
        self.faces = f

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def __eq__(self, other: object) -> bool:
        # geometry only, bit-exact; provenance is deliberately ignored
        if not isinstance(other, TriangleMesh):
            return NotImplemented
        return (
            self.vertices.shape == other.vertices.shape
            and self.faces.shape == other.faces.shape
            and self.vertices.tobytes() == other.vertices.tobytes()
            and self.faces.tobytes() == other.faces.tobytes()
        )


def _degenerate_mask(faces: np.ndarray) -> np.ndarray:
    return (
        (faces[:, 0] == faces[:, 1])
        | (faces[:, 1] == faces[:, 2])
        | (faces[:, 0] == faces[:, 2])
    )


# ---------------------------------------------------------------------------
# detection


def detect_format(data: bytes, path_hint: str = "") -> str:
    """Classify raw bytes as one of the supported format tags.

    The full file contents should be passed: the binary-STL rule needs the
    total length to check the size law 84 + 50 * triangle_count. A leading
    "solid" keyword marks ASCII STL unless the size law also holds, in which
    case the file is treated as binary (exporters commonly put "solid" in
    the 80-byte binary header; an ASCII file matching the law is implausible).

    Raises UnknownFormat when no rule matches and UnsupportedFormat for
    recognized-but-unsupported variants (big-endian PLY).
    """
    if data[:3] == b"ply" and (len(data) == 3 or data[3:4] in (b"\n", b"\r")):
        head = data[:1024].decode("latin-1", errors="replace")
        for line in head.splitlines()[1:]:
            line = line.strip()
            if line.startswith("format"):
                if "binary_little_endian" in line:
                    return PLY_BINARY_LE
                if "binary_big_endian" in line:
                    raise UnsupportedFormat("big-endian PLY is not supported")
                if "ascii" in line:
                    return PLY_ASCII
                break
            if line and not line.startswith(("comment", "obj_info")):
                break
        raise UnknownFormat("ply magic without a recognizable format line")

    size_law = False
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        size_law = len(data) == 84 + 50 * count

    if data.lstrip()[:5] == b"solid":
        return STL_BINARY if size_law else STL_ASCII
    if size_law:
        return STL_BINARY

    if path_hint.lower().endswith(".obj"):
        return OBJ
    for raw in data[:4096].decode("latin-1", errors="replace").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.split(None, 1)[0] in (
            "v", "vn", "vt", "f", "o", "g", "s", "mtllib", "usemtl",
        ):
            return OBJ
        break
    hint = f" (path hint {path_hint!r})" if path_hint else ""
    raise UnknownFormat(f"no format rule matched{hint}")


# ---------------------------------------------------------------------------
# parsing


def parse_mesh(
    data: bytes,
    fmt: str,
    *,
    triangulate: bool = True,
    degenerate_policy: str = "drop",
    path: str | None = None,
) -> TriangleMesh:
    """Parse bytes in the given format into a TriangleMesh.

    Faces that repeat a vertex index are dropped with a counted warning under
    degenerate_policy="drop" (the default) or raise DegenerateTopology under
    "reject". OBJ/PLY faces with more than three vertices are fan-triangulated
    as (v0,v1,v2), (v0,v2,v3), ... unless triangulate is False, which makes
    them a MalformedFile error.

    When every face of an indexed file is dropped as degenerate, the now
    unreferenced vertices are dropped too and the result is an empty mesh;
    a file that declares vertices but no faces at all is malformed.
    """
    if degenerate_policy not in ("drop", "reject"):
        raise ValueError(f"unknown degenerate_policy {degenerate_policy!r}")
    parser = _PARSERS.get(fmt)
    if parser is None:
        raise UnsupportedFormat(f"no parser for format {fmt!r}")
    try:
        return parser(data, triangulate, degenerate_policy, path)
    except MeshIoError:
        raise
    except (ValueError, struct.error, OverflowError, IndexError, MemoryError) as exc:
        raise MalformedFile(f"{fmt}: {exc}") from exc


def _dedupe_first_occurrence(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Collapse a (3F, 3) vertex soup to unique vertices plus index triples.

    Equality is exact bit equality (the rows are compared as raw bytes), and
    the output vertex order is the order of first occurrence in the soup.
    """
    flat = np.ascontiguousarray(raw)
    if flat.size == 0:
        return flat.reshape(0, 3), np.zeros((0, 3), dtype=np.int64)
    key = flat.view(np.dtype((np.void, flat.dtype.itemsize * 3))).ravel()
    _, first, inverse = np.unique(key, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty(len(first), dtype=np.int64)
    rank[order] = np.arange(len(first))
    vertices = flat[first[order]]
    faces = rank[inverse.ravel()].reshape(-1, 3)
    return vertices, faces


def _apply_degenerate_policy(
    vertices: np.ndarray,
    faces: np.ndarray,
    degenerate_policy: str,
    compact: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Drop or reject degenerate faces; optionally compact unused vertices.

    With compact=False, vertices are only dropped when no face survives
    (keeps indexed-format round-trips exact while honoring the
    faces-empty-implies-vertices-empty invariant).
    """
    deg = _degenerate_mask(faces) if faces.size else np.zeros(0, dtype=bool)
    n_deg = int(deg.sum())
    if n_deg:
        if degenerate_policy == "reject":
            raise DegenerateTopology(f"{n_deg} degenerate face(s)")
        logger.warning("dropped %d degenerate face(s)", n_deg)
        faces = faces[~deg]
    if n_deg and len(faces) == 0:
        return vertices[:0], faces
    if n_deg and compact:
        used = np.unique(faces)
        if len(used) < len(vertices):
            remap = np.full(len(vertices), -1, dtype=np.int64)
            remap[used] = np.arange(len(used))
            vertices = vertices[used]
            faces = remap[faces]
    return vertices, faces


def _finish_soup(
    raw: np.ndarray, degenerate_policy: str, fmt: str, path: str | None
) -> TriangleMesh:
    vertices, faces = _dedupe_first_occurrence(raw)
    vertices, faces = _apply_degenerate_policy(vertices, faces, degenerate_policy, True)
    if len(faces) == 0:
        vertices = vertices[:0]
    return TriangleMesh(vertices.astype(np.float64), faces, Provenance(fmt, path))


def _to_float(token: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise MalformedFile(f"line {lineno}: {token!r} is not a number") from None


def _parse_stl_ascii(
    data: bytes, triangulate: bool, degenerate_policy: str, path: str | None
) -> TriangleMesh:
    text = data.decode("latin-1")
    verts: list[tuple[float, float, float]] = []
    loop_count = -1  # -1 = outside a loop
    for lineno, rawline in enumerate(text.splitlines(), 1):
        tokens = rawline.split()
        if not tokens:
            continue
        kw = tokens[0].lower()
        if kw == "vertex":
            if loop_count < 0:
                raise MalformedFile(f"line {lineno}: vertex outside a loop")
            if len(tokens) != 4:
                raise MalformedFile(f"line {lineno}: vertex needs 3 coordinates")
            verts.append(tuple(_to_float(t, lineno) for t in tokens[1:4]))
            loop_count += 1
        elif kw == "outer":
            if loop_count >= 0:
                raise MalformedFile(f"line {lineno}: nested loop")
            loop_count = 0
        elif kw == "endloop":
            if loop_count != 3:
                raise MalformedFile(
                    f"line {lineno}: loop closed with {max(loop_count, 0)} vertices"
                )
            loop_count = -1
        elif kw in ("solid", "endsolid", "facet", "endfacet"):
            continue
        else:
            raise MalformedFile(f"line {lineno}: unexpected token {tokens[0]!r}")
    if loop_count >= 0:
        raise MalformedFile("file ends inside a vertex loop")
    raw = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    return _finish_soup(raw, degenerate_policy, STL_ASCII, path)


def _parse_stl_binary(
    data: bytes, triangulate: bool, degenerate_policy: str, path: str | None
) -> TriangleMesh:
    if len(data) < 84:
        raise MalformedFile("binary STL shorter than the 84-byte preamble")
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + 50 * count
    if len(data) != expected:
        raise MalformedFile(
            f"binary STL size law violated: {len(data)} bytes for "
            f"{count} triangles (expected {expected})"
        )
    tri = np.frombuffer(data, dtype=_STL_TRI_DTYPE, count=count, offset=84)
    # keep the stored f32 bits for dedup, widen to f64 afterwards
    raw = np.array(tri["verts"], dtype=np.float32).reshape(-1, 3)
    return _finish_soup(raw, degenerate_policy, STL_BINARY, path)


def _resolve_obj_index(token: str, current_count: int, lineno: int) -> int:
    part = token.split("/", 1)[0]
    try:
        i = int(part)
    except ValueError:
        raise MalformedFile(f"line {lineno}: bad face index {token!r}") from None
    if i == 0:
        raise MalformedFile(f"line {lineno}: OBJ indices are 1-based, got 0")
    if i < 0:
        j = current_count + i
        if j < 0:
            raise MalformedFile(f"line {lineno}: negative index {i} out of range")
        return j
    return i - 1


def _fan_triangulate(
    idx: list[int], triangulate: bool, lineno: int
) -> list[tuple[int, int, int]]:
    if len(idx) == 3:
        return [(idx[0], idx[1], idx[2])]
    if not triangulate:
        raise MalformedFile(
            f"line {lineno}: {len(idx)}-gon face with triangulation disabled"
        )
    return [(idx[0], a, b) for a, b in zip(idx[1:-1], idx[2:])]


def _finish_indexed(
    verts: list | np.ndarray,
    faces: list | np.ndarray,
    degenerate_policy: str,
    fmt: str,
    path: str | None,
) -> TriangleMesh:
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise MalformedFile(f"face index out of range (have {len(v)} vertices)")
    if len(f) == 0 and len(v) > 0:
        raise MalformedFile("mesh declares vertices but no faces")
    v, f = _apply_degenerate_policy(v, f, degenerate_policy, False)
    return TriangleMesh(v, f, Provenance(fmt, path))


def _parse_obj(
    data: bytes, triangulate: bool, degenerate_policy: str, path: str | None
) -> TriangleMesh:
    text = data.decode("utf-8", errors="replace")
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, rawline in enumerate(text.splitlines(), 1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kw = tokens[0]
        if kw == "v":
            if len(tokens) < 4:
                raise MalformedFile(f"line {lineno}: vertex needs 3 coordinates")
            verts.append(tuple(_to_float(t, lineno) for t in tokens[1:4]))
        elif kw == "f":
            if len(tokens) < 4:
                raise MalformedFile(f"line {lineno}: face needs at least 3 indices")
            idx = [_resolve_obj_index(t, len(verts), lineno) for t in tokens[1:]]
            faces.extend(_fan_triangulate(idx, triangulate, lineno))
        # vn / vt / o / g / s / mtllib / usemtl and unknown records are skipped
    return _finish_indexed(verts, faces, degenerate_policy, OBJ, path)


@dataclass
class _PlyProperty:
    name: str
    code: str  # struct code of the scalar, or of the list index type
    count_code: str | None = None  # set only for list properties

    @property
    def is_list(self) -> bool:
        return self.count_code is not None


@dataclass
class _PlyElement:
    name: str
    count: int
    properties: list[_PlyProperty]


def _parse_ply_header(data: bytes) -> tuple[str, list[_PlyElement], bytes]:
    end = data.find(b"end_header")
    if end < 0:
        raise MalformedFile("ply: missing end_header")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise MalformedFile("ply: missing newline after end_header")
    header = data[:nl].decode("latin-1")
    body = data[nl + 1:]

    lines = [ln.strip() for ln in header.splitlines()]
    if not lines or lines[0] != "ply":
        raise MalformedFile("ply: missing magic line")
    encoding: str | None = None
    elements: list[_PlyElement] = []
    for line in lines[1:]:
        if not line or line.startswith(("comment", "obj_info")):
            continue
        tokens = line.split()
        kw = tokens[0]
        if kw == "format":
            if len(tokens) != 3 or tokens[2] != "1.0":
                raise UnsupportedFormat(f"ply: unsupported format line {line!r}")
            if tokens[1] == "ascii":
                encoding = "ascii"
            elif tokens[1] == "binary_little_endian":
                encoding = "binary-le"
            elif tokens[1] == "binary_big_endian":
                raise UnsupportedFormat("big-endian PLY is not supported")
            else:
                raise UnsupportedFormat(f"ply: unknown encoding {tokens[1]!r}")
        elif kw == "element":
            if len(tokens) != 3:
                raise MalformedFile(f"ply: bad element line {line!r}")
            try:
                count = int(tokens[2])
            except ValueError:
                raise MalformedFile(f"ply: bad element count in {line!r}") from None
            if count < 0:
                raise MalformedFile(f"ply: negative element count in {line!r}")
            elements.append(_PlyElement(tokens[1], count, []))
        elif kw == "property":
            if not elements:
                raise MalformedFile("ply: property before any element")
            if len(tokens) >= 5 and tokens[1] == "list":
                count_code = _PLY_TYPES.get(tokens[2])
                idx_code = _PLY_TYPES.get(tokens[3])
                if count_code is None or idx_code is None:
                    raise UnsupportedFormat(f"ply: unknown list types in {line!r}")
                elements[-1].properties.append(
                    _PlyProperty(tokens[4], idx_code, count_code)
                )
            elif len(tokens) == 3:
                code = _PLY_TYPES.get(tokens[1])
                if code is None:
                    raise UnsupportedFormat(f"ply: unknown type {tokens[1]!r}")
                elements[-1].properties.append(_PlyProperty(tokens[2], code))
            else:
                raise MalformedFile(f"ply: bad property line {line!r}")
        elif kw == "end_header":
            break
        else:
            raise MalformedFile(f"ply: unexpected header keyword {kw!r}")
    if encoding is None:
        raise MalformedFile("ply: missing format line")
    return encoding, elements, body


def _ply_locate(elements: list[_PlyElement]) -> tuple[_PlyElement, _PlyElement]:
    vertex = face = None
    for el in elements:
        if el.name == "vertex":
            vertex = el
        elif el.name == "face":
            face = el
        else:
            raise UnsupportedFormat(f"ply: element {el.name!r} is not supported")
    if vertex is None:
        raise MalformedFile("ply: no vertex element")
    if face is None:
        raise MalformedFile("ply: no face element")
    for prop in vertex.properties:
        if prop.is_list:
            raise UnsupportedFormat("ply: list property on the vertex element")
    names = [p.name for p in vertex.properties]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise MalformedFile(f"ply: vertex element lacks property {axis!r}")
        if vertex.properties[names.index(axis)].code not in _PLY_FLOAT_CODES:
            raise UnsupportedFormat(f"ply: vertex {axis!r} must be float or double")
    lists = [p for p in face.properties if p.is_list]
    if len(lists) != 1:
        raise (
            MalformedFile("ply: face element lacks an index list")
            if not lists
            else UnsupportedFormat("ply: multiple list properties on face element")
        )
    if lists[0].code not in _PLY_INDEX_CODES:
        raise UnsupportedFormat("ply: face index type must be an integer")
    return vertex, face


def _parse_ply(
    data: bytes, triangulate: bool, degenerate_policy: str, path: str | None,
    expect: str,
) -> TriangleMesh:
    encoding, elements, body = _parse_ply_header(data)
    if encoding != expect:
        raise MalformedFile(
            f"ply: header declares {encoding!r}, parsed as {expect!r}"
        )
    vertex_el, face_el = _ply_locate(elements)
    fmt = PLY_ASCII if encoding == "ascii" else PLY_BINARY_LE
    if encoding == "ascii":
        verts, faces = _read_ply_ascii(body, elements, vertex_el, face_el, triangulate)
    else:
        verts, faces = _read_ply_binary(body, elements, vertex_el, face_el, triangulate)
    return _finish_indexed(verts, faces, degenerate_policy, fmt, path)


def _read_ply_ascii(
    body: bytes,
    elements: list[_PlyElement],
    vertex_el: _PlyElement,
    face_el: _PlyElement,
    triangulate: bool,
) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    tokens = body.decode("latin-1").split()
    pos = 0

    def take(n: int) -> list[str]:
        nonlocal pos
        if pos + n > len(tokens):
            raise MalformedFile("ply: unexpected end of ascii data")
        out = tokens[pos:pos + n]
        pos += n
        return out

    verts = np.zeros((vertex_el.count, 3), dtype=np.float64)
    faces: list[tuple[int, int, int]] = []
    names = [p.name for p in vertex_el.properties]
    xi, yi, zi = (names.index(a) for a in ("x", "y", "z"))
    for el in elements:
        if el is vertex_el:
            width = len(el.properties)
            for i in range(el.count):
                row = take(width)
                verts[i, 0] = _to_float(row[xi], 0)
                verts[i, 1] = _to_float(row[yi], 0)
                verts[i, 2] = _to_float(row[zi], 0)
        else:
            for _ in range(el.count):
                for prop in el.properties:
                    if not prop.is_list:
                        take(1)
                        continue
                    (n_tok,) = take(1)
                    try:
                        n = int(n_tok)
                    except ValueError:
                        raise MalformedFile(
                            f"ply: bad list count {n_tok!r}"
                        ) from None
                    if n < 3:
                        raise MalformedFile(f"ply: face with {n} indices")
                    idx = []
                    for tok in take(n):
                        try:
                            idx.append(int(tok))
                        except ValueError:
                            raise MalformedFile(
                                f"ply: bad face index {tok!r}"
                            ) from None
                    faces.extend(_fan_triangulate(idx, triangulate, 0))
    if pos != len(tokens):
        raise MalformedFile("ply: trailing data after the last element")
    return verts, faces


def _read_ply_binary(
    body: bytes,
    elements: list[_PlyElement],
    vertex_el: _PlyElement,
    face_el: _PlyElement,
    triangulate: bool,
) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    offset = 0
    verts: np.ndarray | None = None
    faces: list[tuple[int, int, int]] = []
    for el in elements:
        if el is vertex_el:
            fields = [(p.name if p.name else f"_p{i}", "<" + p.code)
                      for i, p in enumerate(el.properties)]
            # guard duplicate property names for the structured dtype
            seen: dict[str, int] = {}
            named = []
            for name, code in fields:
                n = seen.get(name, 0)
                seen[name] = n + 1
                named.append((f"{name}__{n}" if n else name, code))
            dtype = np.dtype(named)
            need = dtype.itemsize * el.count
            if offset + need > len(body):
                raise MalformedFile("ply: binary vertex data truncated")
            block = np.frombuffer(body, dtype=dtype, count=el.count, offset=offset)
            offset += need
            verts = np.column_stack(
                [block["x"].astype(np.float64),
                 block["y"].astype(np.float64),
                 block["z"].astype(np.float64)]
            ) if el.count else np.zeros((0, 3))
        else:
            for _ in range(el.count):
                for prop in el.properties:
                    if not prop.is_list:
                        size = struct.calcsize("<" + prop.code)
                        if offset + size > len(body):
                            raise MalformedFile("ply: binary data truncated")
                        offset += size
                        continue
                    csize = struct.calcsize("<" + prop.count_code)
                    if offset + csize > len(body):
                        raise MalformedFile("ply: binary data truncated")
                    (n,) = struct.unpack_from("<" + prop.count_code, body, offset)
                    offset += csize
                    if n < 3:
                        raise MalformedFile(f"ply: face with {n} indices")
                    isize = struct.calcsize("<" + prop.code)
                    if offset + isize * n > len(body):
                        raise MalformedFile("ply: binary face data truncated")
                    idx = list(
                        struct.unpack_from(f"<{n}{prop.code}", body, offset)
                    )
                    offset += isize * n
                    faces.extend(_fan_triangulate(idx, triangulate, 0))
    if offset != len(body):
        raise MalformedFile("ply: trailing data after the last element")
    assert verts is not None
    return verts, faces


# ---------------------------------------------------------------------------
# writing


def _fmt_float(x: float) -> str:
    # repr gives the shortest string that round-trips the exact double
    return repr(float(x))


def _face_unit_normals(mesh: TriangleMesh) -> np.ndarray:
    if mesh.n_faces == 0:
        return np.zeros((0, 3))
    tri = mesh.vertices[mesh.faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, n / safe, 0.0)


def _write_stl_ascii(mesh: TriangleMesh) -> bytes:
    out = ["solid ioskit"]
    normals = _face_unit_normals(mesh)
    tri = mesh.vertices[mesh.faces]
    for i in range(mesh.n_faces):
        nx, ny, nz = (_fmt_float(v) for v in normals[i])
        out.append(f"facet normal {nx} {ny} {nz}")
        out.append("  outer loop")
        for v in tri[i]:
            out.append(
                f"    vertex {_fmt_float(v[0])} {_fmt_float(v[1])} {_fmt_float(v[2])}"
            )
        out.append("  endloop")
        out.append("endfacet")
    out.append("endsolid ioskit")
    return ("\n".join(out) + "\n").encode("ascii")


def _write_stl_binary(mesh: TriangleMesh) -> bytes:
    header = b"ioskit binary stl".ljust(80, b"\x00")
    arr = np.zeros(mesh.n_faces, dtype=_STL_TRI_DTYPE)
    arr["normal"] = _face_unit_normals(mesh).astype(np.float32)
    arr["verts"] = mesh.vertices[mesh.faces].astype(np.float32)
    return header + struct.pack("<I", mesh.n_faces) + arr.tobytes()


def _write_obj(mesh: TriangleMesh) -> bytes:
    out = []
    for v in mesh.vertices:
        out.append(f"v {_fmt_float(v[0])} {_fmt_float(v[1])} {_fmt_float(v[2])}")
    for f in mesh.faces:
        out.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    return ("\n".join(out) + "\n").encode("ascii") if out else b""


def _ply_header(mesh: TriangleMesh, encoding: str) -> bytes:
    lines = [
        "ply",
        f"format {encoding} 1.0",
        f"element vertex {mesh.n_vertices}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    return ("\n".join(lines) + "\n").encode("ascii")


def _write_ply_ascii(mesh: TriangleMesh) -> bytes:
    out = []
    for v in mesh.vertices:
        out.append(f"{_fmt_float(v[0])} {_fmt_float(v[1])} {_fmt_float(v[2])}")
    for f in mesh.faces:
        out.append(f"3 {f[0]} {f[1]} {f[2]}")
    body = ("\n".join(out) + "\n").encode("ascii") if out else b""
    return _ply_header(mesh, "ascii") + body


def _write_ply_binary(mesh: TriangleMesh) -> bytes:
    vert_bytes = mesh.vertices.astype("<f8").tobytes()
    face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    faces = np.zeros(mesh.n_faces, dtype=face_dtype)
    faces["n"] = 3
    faces["idx"] = mesh.faces
    return _ply_header(mesh, "binary_little_endian") + vert_bytes + faces.tobytes()


_PARSERS = {
    STL_ASCII: _parse_stl_ascii,
    STL_BINARY: _parse_stl_binary,
    OBJ: _parse_obj,
    PLY_ASCII: lambda d, t, g, p: _parse_ply(d, t, g, p, "ascii"),
    PLY_BINARY_LE: lambda d, t, g, p: _parse_ply(d, t, g, p, "binary-le"),
}

_WRITERS = {
    STL_ASCII: _write_stl_ascii,
    STL_BINARY: _write_stl_binary,
    OBJ: _write_obj,
    PLY_ASCII: _write_ply_ascii,
    PLY_BINARY_LE: _write_ply_binary,
}


def write_mesh(mesh: TriangleMesh, fmt: str) -> bytes:
    """Serialize a mesh to bytes in the given format.

    Binary STL stores positions as float32; every other format preserves the
    float64 values exactly (ASCII via shortest-round-trip decimal strings,
    binary PLY as little-endian doubles).
    """
    writer = _WRITERS.get(fmt)
    if writer is None:
        raise UnsupportedFormat(f"no writer for format {fmt!r}")
    return writer(mesh)


# ---------------------------------------------------------------------------
# path-level helpers


_SUFFIX_DEFAULTS = {".stl": STL_BINARY, ".obj": OBJ, ".ply": PLY_BINARY_LE}


def load_mesh(path: str | Path, fmt: str | None = None, **parse_kwargs) -> TriangleMesh:
    """Read a mesh file, auto-detecting the format unless one is given."""
    p = Path(path)
    data = p.read_bytes()
    if fmt is None:
        fmt = detect_format(data, str(p))
    return parse_mesh(data, fmt, path=str(p), **parse_kwargs)


def save_mesh(mesh: TriangleMesh, path: str | Path, fmt: str | None = None) -> None:
    """Write a mesh to a file, inferring the format from the suffix if needed."""
    p = Path(path)
    if fmt is None:
        fmt = _SUFFIX_DEFAULTS.get(p.suffix.lower())
        if fmt is None:
            raise UnsupportedFormat(f"cannot infer format from suffix {p.suffix!r}")
    p.write_bytes(write_mesh(mesh, fmt))
