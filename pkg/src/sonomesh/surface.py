"""Isosurface extraction (classic marching cubes) and diagnostic rendering.

Each grid cell is triangulated independently from the 256-case tables with
linear interpolation along crossed edges; shared edge vertices are merged so
faces index a common vertex buffer.  Vertex coordinates are physical
(``index * spacing``), and triangles are wound so normals point outward from
the high-valued region, i.e. along decreasing scalar value.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import ValidationError
from .mc_tables import EDGE_TABLE, TRI_TABLE
from .mesh_io import Mesh

# Local edge -> (axis, corner offset) under the table's cube convention;
# axis 0/1/2 = x/y/z.
_EDGE_SPECS = np.array(
    [
        [0, 0, 0, 0],   # e0:  v0-v1
        [1, 1, 0, 0],   # e1:  v1-v2
        [0, 0, 1, 0],   # e2:  v3-v2
        [1, 0, 0, 0],   # e3:  v0-v3
        [0, 0, 0, 1],   # e4:  v4-v5
        [1, 1, 0, 1],   # e5:  v5-v6
        [0, 0, 1, 1],   # e6:  v7-v6
        [1, 0, 0, 1],   # e7:  v4-v7
        [2, 0, 0, 0],   # e8:  v0-v4
        [2, 1, 0, 0],   # e9:  v1-v5
        [2, 1, 1, 0],   # e10: v2-v6
        [2, 0, 1, 0],   # e11: v3-v7
    ],
    dtype=np.int64,
)

# Corner offsets (x, y, z) for cube index bits 0..7.
_CORNERS = np.array(
    [
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ],
    dtype=np.int64,
)


def marching_cubes(vol: np.ndarray, iso: float, spacing=(1.0, 1.0, 1.0)) -> Mesh:
    """Extract the ``iso`` level set of a ``[z, y, x]`` scalar grid as a mesh.

    Returns an empty mesh when the iso value is outside the data range.
    """
    vol = np.asarray(vol, dtype=np.float64)
    if vol.ndim != 3 or min(vol.shape) < 2:
        raise ValidationError(f"volume must be 3-D with every dim >= 2, got shape {vol.shape}")
    nz, ny, nx = vol.shape
    sx, sy, sz = (float(s) for s in spacing)

    cube_index = np.zeros((nz - 1, ny - 1, nx - 1), dtype=np.uint16)
    for bit, (cx, cy, cz) in enumerate(_CORNERS):
        corner = vol[cz : cz + nz - 1, cy : cy + ny - 1, cx : cx + nx - 1]
        cube_index |= (corner < iso).astype(np.uint16) << bit

    active = np.nonzero(EDGE_TABLE[cube_index] != 0)
    if len(active[0]) == 0:
        return Mesh(vertices=np.zeros((0, 3)), faces=np.zeros((0, 3), dtype=np.int32))
    az, ay, ax = (a.astype(np.int64) for a in active)

    tri_rows = TRI_TABLE[cube_index[active]].astype(np.int64)  # (M, 16)
    valid = tri_rows >= 0
    cube_of_entry, _ = np.nonzero(valid)         # row-major: preserves triple grouping
    local_edges = tri_rows[valid]

    spec = _EDGE_SPECS[local_edges]              # (K, 4): axis, ox, oy, oz
    ex = ax[cube_of_entry] + spec[:, 1]
    ey = ay[cube_of_entry] + spec[:, 2]
    ez = az[cube_of_entry] + spec[:, 3]
    axis = spec[:, 0]
    keys = ((ez * ny + ey) * nx + ex) * 3 + axis

    ukeys, inverse = np.unique(keys, return_inverse=True)
    faces = inverse.reshape(-1, 3).astype(np.int32)

    ua = ukeys % 3
    rest = ukeys // 3
    ux = rest % nx
    rest //= nx
    uy = rest % ny
    uz = rest // ny

    v1 = vol[uz, uy, ux]
    v2 = vol[uz + (ua == 2), uy + (ua == 1), ux + (ua == 0)]
    denom = v2 - v1
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom != 0.0, (iso - v1) / denom, 0.5)
    t = np.clip(t, 0.0, 1.0)

    verts = np.empty((len(ukeys), 3), dtype=np.float64)
    verts[:, 0] = (ux + t * (ua == 0)) * sx
    verts[:, 1] = (uy + t * (ua == 1)) * sy
    verts[:, 2] = (uz + t * (ua == 2)) * sz
    return Mesh(vertices=verts, faces=faces)


def face_normals(mesh: Mesh) -> np.ndarray:
    """Unnormalized face normals from the winding order."""
    v = mesh.vertices
    a, b, c = v[mesh.faces[:, 0]], v[mesh.faces[:, 1]], v[mesh.faces[:, 2]]
    return np.cross(b - a, c - a)


def render_screenshot(mesh: Mesh, out_path, figsize: float = 6.0):
    """Write an orthographic flat-shaded PNG of the mesh (fixed camera).

    A best-effort diagnostic: warns and writes nothing for an empty mesh.
    Returns the output path, or None when skipped.
    """
    if len(mesh.vertices) == 0 or len(mesh.faces) == 0:
        warnings.warn("empty mesh; no screenshot written", stacklevel=2)
        return None

    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt
    from matplotlib.collections import PolyCollection

    # Fixed camera: azimuth 45 deg, elevation 30 deg, orthographic.
    az, el = np.deg2rad(45.0), np.deg2rad(30.0)
    rz = np.array([[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]])
    rx = np.array([[1, 0, 0], [0, np.cos(el), -np.sin(el)], [0, np.sin(el), np.cos(el)]])
    rot = rx @ rz

    verts = (mesh.vertices - mesh.vertices.mean(axis=0)) @ rot.T
    tris = verts[mesh.faces]                       # (M, 3, 3)
    depth = tris[:, :, 2].mean(axis=1)
    order = np.argsort(depth)

    normals = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    norms = np.linalg.norm(normals, axis=1)
    norms[norms == 0] = 1.0
    shade = 0.25 + 0.75 * np.abs(normals[:, 2] / norms)

    fig, ax = plt.subplots(figsize=(figsize, figsize))
    polys = PolyCollection(
        tris[order, :, :2],
        facecolors=[(s, s, s) for s in shade[order]],
        edgecolors="none",
    )
    ax.add_collection(polys)
    ax.set_aspect("equal")
    ax.autoscale()
    ax.axis("off")
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out_path
