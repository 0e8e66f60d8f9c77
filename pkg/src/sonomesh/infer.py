"""Full-volume prediction by sliding the 3-slice window and aggregating.

Each window centered on slice ``c`` predicts maps for slices ``c-1, c, c+1``,
so interior slices receive up to three candidate maps.  Aggregation modes:
``mean`` (average of candidates), ``max`` (voxelwise maximum) and ``single``
(center-channel prediction only).  Boundary slices use whatever candidates the
nearest windows provide.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .encoding import decode_points
from .errors import ShapeError, ValidationError
from .mesh_io import PointCloud
from .nets import Net
from .volume_io import Volume

AGGREGATION_MODES = ("mean", "max", "single")
AG_CODES = {"mean": 0, "max": 1, "single": 2}
_AG_FROM_CODE = {v: k for k, v in AG_CODES.items()}

# Windows are always evaluated through this fixed compute batch: oneDNN picks
# shape-dependent conv kernels, so a varying batch layout would not be
# bit-reproducible across requested batch sizes.
_MICRO_BATCH = 8


def canonical_aggregation(agg) -> str:
    if isinstance(agg, (int, np.integer)) and not isinstance(agg, bool):
        try:
            return _AG_FROM_CODE[int(agg)]
        except KeyError:
            raise ValidationError(f"unknown aggregation code {agg!r}") from None
    agg = str(agg).lower()
    if agg not in AGGREGATION_MODES:
        raise ValidationError(f"unknown aggregation mode {agg!r}")
    return agg


@dataclass(frozen=True)
class ThresholdRule:
    """Threshold selection: an absolute cut ``t`` or a fraction ``f`` of the map maximum."""

    kind: str = "absolute"
    value: float = 0.4

    def __post_init__(self):
        if self.kind not in ("absolute", "fraction_of_max"):
            raise ValidationError(f"unknown threshold kind {self.kind!r}")
        if self.kind == "absolute" and not 0.0 <= self.value <= 1.0:
            raise ValidationError(f"absolute threshold must be in [0, 1], got {self.value}")
        if self.kind == "fraction_of_max" and not 0.0 < self.value <= 1.0:
            raise ValidationError(f"threshold fraction must be in (0, 1], got {self.value}")


def _volume_data(vol) -> np.ndarray:
    return vol.data if isinstance(vol, Volume) else np.asarray(vol)


def predict_volume(net: Net, vol, agg="mean", batch_size: int = 8) -> np.ndarray:
    """Aggregate sliding-window predictions into a ``(Z, H, W)`` map.

    ``batch_size`` is a throughput hint only: windows always flow through the
    fixed compute micro-batch, so the output is deterministic and bit-identical
    for any requested batch size.
    """
    agg = canonical_aggregation(agg)
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    data = _volume_data(vol)
    h, w, _ = net.spec.in_shape
    if data.ndim != 3 or data.shape[1:] != (h, w):
        raise ShapeError(
            f"volume planes {data.shape[1:] if data.ndim == 3 else data.shape} "
            f"do not match network input {h}x{w}"
        )
    nz = data.shape[0]
    if nz < 3:
        raise ValidationError(f"need at least 3 slices, got {nz}")

    centers = np.arange(1, nz - 1)
    out = np.zeros((nz, h, w), dtype=np.float32)
    if agg == "mean":
        counts = np.zeros(nz, dtype=np.int32)
    elif agg == "max":
        filled = np.zeros(nz, dtype=bool)

    for start in range(0, len(centers), _MICRO_BATCH):
        chunk = centers[start : start + _MICRO_BATCH]
        batch = np.stack(
            [np.stack([data[c - 1], data[c], data[c + 1]], axis=-1) for c in chunk]
        ).astype(np.float32)
        pred = net.forward(batch)  # (B, H, W, 3)
        for b, c in enumerate(chunk):
            if agg == "single":
                out[c] = pred[b, :, :, 1]
                if c == 1:
                    out[0] = pred[b, :, :, 0]
                if c == nz - 2:
                    out[nz - 1] = pred[b, :, :, 2]
                continue
            for ch, z in enumerate((c - 1, c, c + 1)):
                if agg == "mean":
                    out[z] += pred[b, :, :, ch]
                    counts[z] += 1
                else:
                    if filled[z]:
                        np.maximum(out[z], pred[b, :, :, ch], out=out[z])
                    else:
                        out[z] = pred[b, :, :, ch]
                        filled[z] = True
    if agg == "mean":
        out /= counts[:, None, None]
    return out


def resolve_threshold(prob: np.ndarray, rule: ThresholdRule) -> float:
    """Turn a threshold rule into a concrete cut value for this map."""
    prob = np.asarray(prob)
    if prob.size == 0:
        raise ValidationError("probability volume is empty")
    if rule.kind == "absolute":
        return float(rule.value)
    peak = float(prob.max())
    if peak <= 0.0:
        warnings.warn(
            "probability volume has no positive values; "
            "fraction-of-max threshold degenerates to 0",
            stacklevel=2,
        )
        return 0.0
    return rule.value * peak


def reconstruct(
    net: Net,
    vol,
    agg="mean",
    rule: ThresholdRule = ThresholdRule(),
    spacing=None,
    batch_size: int = 8,
    range_map: str = "none",
) -> PointCloud:
    """Predict, threshold, and decode a volume into a physical point cloud.

    ``range_map="unit"`` remaps raw outputs from [-1, 1] to [0, 1] (for tanh
    networks whose thresholds are expressed on the unit scale); the default
    thresholds the raw output directly.
    """
    if range_map not in ("none", "unit"):
        raise ValidationError(f"unknown range_map {range_map!r}")
    if spacing is None:
        if not isinstance(vol, Volume):
            raise ValidationError("spacing is required when vol is a bare array")
        spacing = vol.spacing
    prob = predict_volume(net, vol, agg=agg, batch_size=batch_size)
    if range_map == "unit":
        prob = (prob + 1.0) * 0.5
    t = resolve_threshold(prob, rule)
    return decode_points(prob, t, spacing)
