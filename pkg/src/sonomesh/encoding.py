"""Mesh-to-label-volume encoding and its inverse (probability-to-points).

A mesh vertex lands on the voxel nearest to ``coordinate_mm / spacing_mm``
(round half away from zero, then clip into the grid).  Three encodings are
supported:

- ``binary``: vertex voxels and everything within Chebyshev radius ``r`` set to 1;
- ``soft``: value ``1 - d/(r+1)`` at Chebyshev distance ``d <= r`` (1 at the
  vertex voxel, fading linearly to 0 just past the radius);
- ``solid``: the binary mask closed and hole-filled slice by slice.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .mesh_io import Mesh, PointCloud
from .volume_io import Volume

ENCODING_MODES = ("binary", "soft", "solid")

# Integer codes used in run tags.
_MODE_CODES = {0: "binary", 1: "soft", 2: "solid"}
_MODE_ALIASES = {
    "binary": "binary",
    "binary-dilated": "binary",
    "soft": "soft",
    "soft-edged": "soft",
    "saturated": "soft",
    "solid": "solid",
}


def canonical_mode(mode) -> str:
    """Normalize an encoding-mode name or integer code."""
    if isinstance(mode, (int, np.integer)) and not isinstance(mode, bool):
        try:
            return _MODE_CODES[int(mode)]
        except KeyError:
            raise ValidationError(f"unknown encoding mode code {mode!r}") from None
    try:
        return _MODE_ALIASES[str(mode).lower()]
    except KeyError:
        raise ValidationError(f"unknown encoding mode {mode!r}") from None


@dataclass(frozen=True)
class LabelVolume:
    """Per-voxel supervision values in [0, 1] on the grid of a paired Volume."""

    data: np.ndarray
    encoding_mode: str
    dilation_radius: int

    def __post_init__(self):
        self.data.flags.writeable = False


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def vertex_voxels(
    vertices: np.ndarray,
    shape_zyx: tuple[int, int, int],
    spacing: tuple[float, float, float],
) -> tuple[np.ndarray, int]:
    """Map mm coordinates to clipped voxel indices.

    Returns an ``(N, 3)`` integer array of ``(iz, iy, ix)`` rows plus the
    number of vertices that had to be clipped.
    """
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    sx, sy, sz = spacing
    raw = _round_half_away(vertices / np.array([sx, sy, sz]))
    nz, ny, nx = shape_zyx
    bounds = np.array([nx, ny, nz], dtype=np.int64) - 1
    clipped = np.clip(raw, 0, bounds).astype(np.int64)
    n_out = int((raw != clipped).any(axis=1).sum())
    return clipped[:, ::-1], n_out  # (ix, iy, iz) -> (iz, iy, ix)


def encode_mesh(mesh: Mesh, grid: Volume, mode="soft", radius: int = 2) -> LabelVolume:
    """Embed mesh vertices into a label volume aligned with ``grid``.

    Warns (but still returns the clipped result) when every vertex fell
    outside the grid.
    """
    mode = canonical_mode(mode)
    if radius < 0:
        raise ValidationError(f"dilation radius must be >= 0, got {radius}")
    if any(s <= 0 for s in grid.spacing):
        raise ValidationError(f"grid spacing must be positive, got {grid.spacing}")

    shape = grid.data.shape
    idx, n_out = vertex_voxels(mesh.vertices, shape, grid.spacing)
    if len(idx) and n_out == len(idx):
        warnings.warn(
            "all mesh vertices fall outside the volume; label is clipped to the border",
            stacklevel=2,
        )

    seed = np.zeros(shape, dtype=bool)
    if len(idx):
        seed[idx[:, 0], idx[:, 1], idx[:, 2]] = True

    if mode == "soft":
        data = _soft_mask(seed, radius)
    else:
        mask = seed
        if radius > 0 and seed.any():
            mask = ndimage.binary_dilation(seed, structure=np.ones((2 * radius + 1,) * 3, bool))
        if mode == "solid":
            mask = _solidify(mask)
        data = mask.astype(np.float32)

    return LabelVolume(data=data, encoding_mode=mode, dilation_radius=int(radius))


def _soft_mask(seed: np.ndarray, radius: int) -> np.ndarray:
    if not seed.any():
        return np.zeros(seed.shape, dtype=np.float32)
    # Chebyshev distance to the nearest vertex voxel; values beyond the
    # radius fall to zero under the linear ramp.
    dist = ndimage.distance_transform_cdt(~seed, metric="chessboard").astype(np.float32)
    return np.clip(1.0 - dist / (radius + 1.0), 0.0, 1.0)


def _solidify(mask: np.ndarray) -> np.ndarray:
    out = np.empty_like(mask)
    structure = np.ones((3, 3), dtype=bool)
    for z in range(mask.shape[0]):
        closed = ndimage.binary_closing(mask[z], structure=structure)
        out[z] = ndimage.binary_fill_holes(closed)
    return out


def decode_points(prob: np.ndarray, threshold: float, spacing) -> PointCloud:
    """Return mm positions of voxels with ``prob >= threshold``.

    ``threshold`` is clamped into [0, 1]; the cloud may be empty.
    """
    threshold = float(min(max(threshold, 0.0), 1.0))
    prob = np.asarray(prob)
    if prob.ndim != 3:
        raise ValidationError(f"probability volume must be 3-D, got shape {prob.shape}")
    zyx = np.argwhere(prob >= threshold)
    sx, sy, sz = spacing
    points = np.empty((len(zyx), 3), dtype=np.float64)
    points[:, 0] = zyx[:, 2] * sx
    points[:, 1] = zyx[:, 1] * sy
    points[:, 2] = zyx[:, 0] * sz
    return PointCloud(points=points)
