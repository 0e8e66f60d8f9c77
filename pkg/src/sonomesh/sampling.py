"""Slice-triplet sample construction, augmentation, and volume splits.

Each training sample pairs three consecutive normalized slices (as a 3-channel
image) with the matching three label slices.  Scheme ``SE1`` keeps every
window; ``SE2`` keeps only windows whose target contains part of the mesh.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .encoding import LabelVolume
from .errors import ValidationError
from .volume_io import Volume


@dataclass(frozen=True)
class Sample:
    """One 3-channel input/target pair; arrays are (H, W, 3) in [0, 1]."""

    input: np.ndarray
    target: np.ndarray
    volume_id: int
    center_slice: int


@dataclass(frozen=True)
class Split:
    """Disjoint train/validation/test volume ids; val and test are single volumes."""

    train_ids: tuple[int, ...]
    val_id: int
    test_id: int


@dataclass(frozen=True)
class AugmentPolicy:
    """On-the-fly geometric augmentation settings.

    Rotation is treated as a reorientation and withheld until
    ``reorientation_start_epoch`` whenever ``max_rotation`` exceeds 10 degrees;
    small-angle policies (<= 10) are applied from the first epoch.  Set
    ``max_rotation=180`` for full reorientation after the start epoch.
    ``combine_mode`` is ``"simultaneous"`` (compose every enabled transform) or
    ``"exclusive"`` (draw exactly one transform family per call).
    """

    max_translation: int = 10
    max_rotation: float = 15.0
    mirror_x: bool = True
    mirror_y: bool = True
    combine_mode: str = "simultaneous"
    reorientation_start_epoch: int = 0

    def __post_init__(self):
        if self.combine_mode not in ("simultaneous", "exclusive"):
            raise ValidationError(f"unknown combine_mode {self.combine_mode!r}")
        if self.reorientation_start_epoch < 0:
            raise ValidationError("reorientation_start_epoch must be >= 0")
        if self.max_translation < 0 or self.max_rotation < 0:
            raise ValidationError("transform magnitudes must be >= 0")


def _as_array(obj) -> np.ndarray:
    if isinstance(obj, Volume):
        return obj.data
    if isinstance(obj, LabelVolume):
        return obj.data
    return np.asarray(obj)


def make_samples(volume, label, scheme: str = "SE1", volume_id: int = 0) -> list[Sample]:
    """Window a volume/label pair into samples centered on slices 1..Z-2."""
    vol = _as_array(volume)
    lab = _as_array(label)
    if vol.shape != lab.shape:
        raise ValidationError(f"volume shape {vol.shape} != label shape {lab.shape}")
    if vol.ndim != 3 or vol.shape[0] < 3:
        raise ValidationError(f"need a 3-D volume with at least 3 slices, got shape {vol.shape}")
    if scheme not in ("SE1", "SE2"):
        raise ValidationError(f"unknown selection scheme {scheme!r}")
    if float(vol.min()) < 0.0 or float(vol.max()) > 1.0:
        raise ValidationError("volume must be normalized to [0, 1] before sampling")

    samples = []
    for c in range(1, vol.shape[0] - 1):
        target = np.stack([lab[c - 1], lab[c], lab[c + 1]], axis=-1).astype(np.float32)
        if scheme == "SE2" and not target.any():
            continue
        inp = np.stack([vol[c - 1], vol[c], vol[c + 1]], axis=-1).astype(np.float32)
        samples.append(Sample(input=inp, target=target, volume_id=volume_id, center_slice=c))
    if scheme == "SE2" and not samples:
        warnings.warn("label volume is empty; SE2 selected no samples", stacklevel=2)
    return samples


def split_volumes(ids, val_id: int, test_id: int) -> Split:
    """Partition volume ids into train / single-val / single-test."""
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValidationError(f"volume ids contain duplicates: {ids}")
    if val_id == test_id:
        raise ValidationError(f"validation and test volume must differ, both are {val_id}")
    for vid, role in ((val_id, "validation"), (test_id, "test")):
        if vid not in ids:
            raise ValidationError(f"{role} volume {vid} not among ids {ids}")
    train = tuple(i for i in ids if i not in (val_id, test_id))
    return Split(train_ids=train, val_id=val_id, test_id=test_id)


def _shift2d(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer shift with zero fill: a peak at (row, col) moves to (row+dy, col+dx)."""
    out = np.zeros_like(img)
    h, w = img.shape[:2]
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = img[ys_src, xs_src]
    return out


def _rotate(img: np.ndarray, angle: float, order: int) -> np.ndarray:
    return ndimage.rotate(
        img, angle, axes=(1, 0), reshape=False, order=order, mode="constant",
        cval=0.0, prefilter=False,
    )


def augment(
    sample: Sample,
    policy: AugmentPolicy,
    epoch: int,
    seed,
    target_interpolation: str = "bilinear",
) -> Sample:
    """Apply one random geometric perturbation, identically to input and target.

    Deterministic for a fixed ``seed``.  ``target_interpolation`` should be
    ``"nearest"`` for binary targets so label values stay in {0, 1}.
    """
    if target_interpolation not in ("bilinear", "nearest"):
        raise ValidationError(f"unknown target interpolation {target_interpolation!r}")
    rng = np.random.default_rng(seed)

    rotation_allowed = policy.max_rotation > 0 and (
        policy.max_rotation <= 10.0 or epoch >= policy.reorientation_start_epoch
    )
    families = []
    if policy.max_translation > 0:
        families.append("translate")
    if rotation_allowed:
        families.append("rotate")
    if policy.mirror_x or policy.mirror_y:
        families.append("mirror")

    if policy.combine_mode == "exclusive":
        chosen = [rng.choice(families)] if families else []
    else:
        chosen = families

    inp = sample.input
    tgt = sample.target
    t_order = 1 if target_interpolation == "bilinear" else 0

    if "mirror" in chosen:
        axes = [a for a, on in (("x", policy.mirror_x), ("y", policy.mirror_y)) if on]
        if policy.combine_mode == "exclusive":
            flips = [rng.choice(axes)]
        else:
            flips = [a for a in axes if rng.random() < 0.5]
        for axis in flips:
            flip_axis = 1 if axis == "x" else 0
            inp = np.flip(inp, axis=flip_axis)
            tgt = np.flip(tgt, axis=flip_axis)

    if "rotate" in chosen:
        angle = float(rng.uniform(-policy.max_rotation, policy.max_rotation))
        inp = _rotate(inp, angle, order=1)
        tgt = _rotate(tgt, angle, order=t_order)

    if "translate" in chosen:
        dx = int(rng.integers(-policy.max_translation, policy.max_translation + 1))
        dy = int(rng.integers(-policy.max_translation, policy.max_translation + 1))
        inp = _shift2d(inp, dx, dy)
        tgt = _shift2d(tgt, dx, dy)

    inp = np.clip(np.ascontiguousarray(inp, dtype=np.float32), 0.0, 1.0)
    tgt = np.clip(np.ascontiguousarray(tgt, dtype=np.float32), 0.0, 1.0)
    return Sample(input=inp, target=tgt, volume_id=sample.volume_id, center_slice=sample.center_slice)
