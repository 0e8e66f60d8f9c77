"""PLY 1.0 reading and writing for meshes and point clouds.

Supports ASCII and binary-little-endian encodings, a ``vertex`` element with
``x``/``y``/``z`` float properties (extra scalar properties are skipped) and an
optional ``face`` element holding vertex-index lists.  Faces with more than
three indices are fan-triangulated on read; the writer emits triangles only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import MeshIntegrityError, PlyFormatError

_SCALAR_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass(frozen=True)
class Mesh:
    """Vertices (N, 3) in mm plus triangle faces (M, 3); faces may be empty."""

    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int32))

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int32).reshape(-1, 3))
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise MeshIntegrityError("face index out of range")


@dataclass(frozen=True)
class PointCloud:
    """Point positions (N, 3) in mm."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.isfinite(pts).all():
            raise MeshIntegrityError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class _Property:
    name: str
    dtype: str            # numpy dtype code for scalars, or item dtype for lists
    count_dtype: str | None = None   # set for list properties

    @property
    def is_list(self) -> bool:
        return self.count_dtype is not None


@dataclass
class _Element:
    name: str
    count: int
    properties: list[_Property]


def _parse_header(data: bytes) -> tuple[str, list[_Element], int]:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyFormatError("not a PLY stream")
    body_start = data.find(b"\n", end) + 1
    header_text = data[:end].decode("ascii", errors="replace")

    fmt = None
    elements: list[_Element] = []
    for line in header_text.splitlines():
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append(_Element(parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise PlyFormatError("property declared before any element")
            if parts[1] == "list":
                count_t, item_t, name = parts[2], parts[3], parts[4]
                elements[-1].properties.append(
                    _Property(name, _SCALAR_TYPES[item_t], _SCALAR_TYPES[count_t])
                )
            else:
                elements[-1].properties.append(_Property(parts[2], _SCALAR_TYPES[parts[1]]))

    if fmt == "ascii":
        encoding = "ascii"
    elif fmt == "binary_little_endian":
        encoding = "binary"
    else:
        raise PlyFormatError(f"unsupported PLY format {fmt!r}")
    return encoding, elements, body_start


def _read_ascii_element(lines, element: _Element):
    rows = []
    for _ in range(element.count):
        rows.append(next(lines).split())
    return rows


def _fan(indices) -> list[tuple[int, int, int]]:
    if len(indices) < 3:
        raise PlyFormatError(f"face with {len(indices)} indices")
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def read_ply(data: bytes) -> Mesh:
    """Parse PLY bytes into a :class:`Mesh` (faces empty for point clouds)."""
    encoding, elements, offset = _parse_header(data)
    names = [e.name for e in elements]
    if "vertex" not in names:
        raise PlyFormatError("PLY stream has no vertex element")

    vertices = None
    face_lists: list[list[int]] = []

    if encoding == "ascii":
        lines = iter(data[offset:].decode("ascii").splitlines())
        for element in elements:
            rows = _read_ascii_element(lines, element)
            if element.name == "vertex":
                cols = {p.name: (i, p.dtype) for i, p in enumerate(element.properties)}
                for axis in ("x", "y", "z"):
                    if axis not in cols:
                        raise PlyFormatError(f"vertex element lacks property {axis!r}")
                vertices = np.zeros((element.count, 3), dtype=np.float64)
                for j, axis in enumerate(("x", "y", "z")):
                    i, dtype = cols[axis]
                    # honor the declared precision so text values round-trip
                    vertices[:, j] = np.array([r[i] for r in rows], dtype=dtype)
            elif element.name == "face":
                list_pos = next(
                    (i for i, p in enumerate(element.properties) if p.is_list), None
                )
                if list_pos is None:
                    raise PlyFormatError("face element has no index list property")
                for r in rows:
                    n = int(r[list_pos])
                    face_lists.append([int(v) for v in r[list_pos + 1 : list_pos + 1 + n]])
    else:
        cursor = offset
        for element in elements:
            if not any(p.is_list for p in element.properties):
                dtype = np.dtype([(p.name, "<" + p.dtype) for p in element.properties])
                block = np.frombuffer(data, dtype=dtype, count=element.count, offset=cursor)
                cursor += dtype.itemsize * element.count
                if element.name == "vertex":
                    for axis in ("x", "y", "z"):
                        if axis not in dtype.names:
                            raise PlyFormatError(f"vertex element lacks property {axis!r}")
                    vertices = np.stack(
                        [block["x"], block["y"], block["z"]], axis=1
                    ).astype(np.float64)
            else:
                for _ in range(element.count):
                    values = {}
                    for prop in element.properties:
                        if prop.is_list:
                            cnt_dt = np.dtype("<" + prop.count_dtype)
                            n = int(np.frombuffer(data, cnt_dt, 1, cursor)[0])
                            cursor += cnt_dt.itemsize
                            item_dt = np.dtype("<" + prop.dtype)
                            values[prop.name] = np.frombuffer(data, item_dt, n, cursor)
                            cursor += item_dt.itemsize * n
                        else:
                            dt = np.dtype("<" + prop.dtype)
                            values[prop.name] = np.frombuffer(data, dt, 1, cursor)[0]
                            cursor += dt.itemsize
                    if element.name == "face":
                        lst = next(v for k, v in values.items() if isinstance(v, np.ndarray))
                        face_lists.append([int(v) for v in lst])

    if vertices is None:
        raise PlyFormatError("vertex element carries no x/y/z data")

    triangles: list[tuple[int, int, int]] = []
    for indices in face_lists:
        triangles.extend(_fan(indices))
    faces = np.array(triangles, dtype=np.int32).reshape(-1, 3)
    if faces.size and faces.max() >= len(vertices):
        raise MeshIntegrityError(
            f"face index {int(faces.max())} out of range for {len(vertices)} vertices"
        )
    return Mesh(vertices=vertices, faces=faces)


def write_ply(mesh: Mesh, ascii: bool = False) -> bytes:
    """Serialize a mesh (or point cloud, when faces are empty) to PLY bytes.

    Coordinates are written as 32-bit floats (with enough digits in ASCII mode
    to round-trip float32 exactly); faces as ``uchar 3`` + int32 indices.
    """
    if len(mesh.vertices) == 0:
        raise PlyFormatError("refusing to write a mesh with no vertices")

    fmt = "ascii" if ascii else "binary_little_endian"
    header = [
        "ply",
        f"format {fmt} 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if len(mesh.faces):
        header.append(f"element face {len(mesh.faces)}")
        header.append("property list uchar int vertex_indices")
    header.append("end_header")

    verts32 = mesh.vertices.astype(np.float32)
    out = bytearray(("\n".join(header) + "\n").encode("ascii"))
    if ascii:
        for vx, vy, vz in verts32:
            out += f"{float(vx):.9g} {float(vy):.9g} {float(vz):.9g}\n".encode("ascii")
        for a, b, c in mesh.faces:
            out += f"3 {a} {b} {c}\n".encode("ascii")
    else:
        out += verts32.astype("<f4").tobytes()
        for a, b, c in mesh.faces:
            out += struct.pack("<B3i", 3, a, b, c)
    return bytes(out)


def read_point_cloud(data: bytes) -> PointCloud:
    """Read a PLY stream, keeping vertices only."""
    return PointCloud(points=read_ply(data).vertices)


def write_point_cloud(cloud: PointCloud, ascii: bool = False) -> bytes:
    """Write points as a faceless PLY stream."""
    return write_ply(Mesh(vertices=cloud.points), ascii=ascii)
