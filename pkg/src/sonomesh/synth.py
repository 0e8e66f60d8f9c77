"""Synthetic hollow-pipe dataset for end-to-end exercises.

Each volume images a hollow cylinder (a pipe wall) along the z axis: a bright
Gaussian ridge at the wall radius over speckle background noise, with the wall
spanning only part of the slice range so that sample selection has something
to filter.  The paired reference mesh is the analytic wall surface.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .mesh_io import Mesh, write_ply
from .volume_io import Volume, make_header, write_volume


@dataclass(frozen=True)
class PipeSpec:
    center_mm: tuple[float, float]
    radius_mm: float
    z_range_mm: tuple[float, float]


def pipe_mesh(spec: PipeSpec, ring_step_mm: float = 0.4, segments: int = 100) -> Mesh:
    """Triangulated cylinder wall for the analytic pipe."""
    cx, cy = spec.center_mm
    z0, z1 = spec.z_range_mm
    zs = np.arange(z0, z1 + 1e-9, ring_step_mm)
    theta = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    ring = np.stack([cx + spec.radius_mm * np.cos(theta), cy + spec.radius_mm * np.sin(theta)], axis=1)

    verts = np.empty((len(zs) * segments, 3), dtype=np.float64)
    for i, z in enumerate(zs):
        verts[i * segments : (i + 1) * segments, :2] = ring
        verts[i * segments : (i + 1) * segments, 2] = z

    faces = []
    for i in range(len(zs) - 1):
        base = i * segments
        for j in range(segments):
            a = base + j
            b = base + (j + 1) % segments
            faces.append((a, b, b + segments))
            faces.append((a, b + segments, a + segments))
    return Mesh(vertices=verts, faces=np.array(faces, dtype=np.int32))


def pipe_volume(
    spec: PipeSpec,
    dim_size: tuple[int, int, int] = (64, 64, 96),
    spacing: tuple[float, float, float] = (0.5, 0.5, 0.4),
    noise_scale: float = 2500.0,
    wall_amplitude: float = 45000.0,
    wall_sigma_mm: float = 0.5,
    rng: np.random.Generator | None = None,
    data_file: str = "volume.raw",
) -> Volume:
    """Render the pipe into a uint16 ultrasound-like volume."""
    rng = rng or np.random.default_rng(0)
    nx, ny, nz = dim_size
    sx, sy, sz = spacing
    cx, cy = spec.center_mm

    ys, xs = np.mgrid[0:ny, 0:nx]
    radial = np.sqrt((xs * sx - cx) ** 2 + (ys * sy - cy) ** 2)
    ridge = wall_amplitude * np.exp(-((radial - spec.radius_mm) ** 2) / (2.0 * wall_sigma_mm**2))

    z0, z1 = spec.z_range_mm
    data = rng.rayleigh(scale=noise_scale, size=(nz, ny, nx))
    z_mm = np.arange(nz) * sz
    in_span = (z_mm >= z0) & (z_mm <= z1)
    data[in_span] += ridge[None, :, :]
    data = np.clip(data, 0, 65535).astype(np.uint16)

    header = make_header((nz, ny, nx), spacing, data_file)
    return Volume(data=data, spacing=tuple(spacing), header=header)


def make_pipe_dataset(
    n_volumes: int = 3,
    dim_size: tuple[int, int, int] = (64, 64, 96),
    spacing: tuple[float, float, float] = (0.5, 0.5, 0.4),
    seed: int = 0,
    noise_scale: float = 2500.0,
) -> list[tuple[int, Volume, Mesh]]:
    """Generate ``(volume_id, Volume, Mesh)`` triples with varied pipes."""
    nx, ny, nz = dim_size
    sx, sy, sz = spacing
    plane_mm = (min(nx * sx, ny * sy)) / 2.0
    z_extent = (nz - 1) * sz

    out = []
    root = np.random.SeedSequence(seed)
    for i, child in enumerate(root.spawn(n_volumes)):
        rng = np.random.default_rng(child)
        radius = plane_mm * (0.42 + 0.08 * (i % 3)) + rng.uniform(-0.3, 0.3)
        center = (
            nx * sx / 2.0 + rng.uniform(-0.8, 0.8),
            ny * sy / 2.0 + rng.uniform(-0.8, 0.8),
        )
        z0 = 0.1 * z_extent + rng.uniform(0.0, 0.05 * z_extent)
        z1 = 0.9 * z_extent - rng.uniform(0.0, 0.05 * z_extent)
        spec = PipeSpec(center_mm=center, radius_mm=radius, z_range_mm=(z0, z1))
        volume = pipe_volume(
            spec, dim_size=dim_size, spacing=spacing, rng=rng,
            noise_scale=noise_scale, data_file=f"pipe_{i + 1:03d}.raw",
        )
        out.append((i + 1, volume, pipe_mesh(spec)))
    return out


def write_pipe_dataset(out_dir, **kwargs) -> list[tuple[int, str, str]]:
    """Generate the dataset and write .mhd/.raw volumes plus .ply meshes."""
    out_dir = os.fspath(out_dir)
    vol_dir = os.path.join(out_dir, "volumes")
    mesh_dir = os.path.join(out_dir, "meshes")
    os.makedirs(vol_dir, exist_ok=True)
    os.makedirs(mesh_dir, exist_ok=True)

    entries = []
    for vid, volume, mesh in make_pipe_dataset(**kwargs):
        mhd = os.path.join(vol_dir, f"pipe_{vid:03d}.mhd")
        ply = os.path.join(mesh_dir, f"pipe_{vid:03d}.ply")
        write_volume(mhd, volume)
        with open(ply, "wb") as fh:
            fh.write(write_ply(mesh))
        entries.append((vid, mhd, ply))
    return entries
