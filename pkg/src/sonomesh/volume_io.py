"""MetaImage (.mhd/.raw) parsing, writing, and volume preprocessing.

Headers are plain-text ``Key = Value`` lines.  Only 3-D unsigned 16-bit
volumes are supported; the header's ``ElementSpacing``/``DimSize`` are kept in
the file's native ``x y z`` order while the voxel array is indexed
``[z, y, x]`` (x fastest in the raw stream).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    MetaParseError,
    PayloadSizeError,
    UnsupportedElementTypeError,
    ValidationError,
)

# Canonical tag order used by the writer.
KNOWN_TAGS = (
    "ObjectType",
    "NDims",
    "BinaryData",
    "BinaryDataByteOrderMSB",
    "CompressedData",
    "TransformMatrix",
    "Offset",
    "CenterOfRotation",
    "AnatomicalOrientation",
    "ElementSpacing",
    "DimSize",
    "ElementType",
    "ElementDataFile",
)

_REQUIRED_TAGS = ("NDims", "DimSize", "ElementSpacing", "ElementDataFile")


@dataclass(frozen=True)
class MetaHeader:
    """Parsed MetaImage header.

    ``dim_size`` and ``element_spacing`` are ``(x, y, z)`` triples as written
    in the file.  Unrecognized tags are preserved verbatim, in order, in
    ``extra_tags``.
    """

    dim_size: tuple[int, int, int]
    element_spacing: tuple[float, float, float]
    data_file: str
    ndims: int = 3
    element_type: str = "MET_USHORT"
    byte_order_msb: bool = False
    object_type: str = "Image"
    binary_data: bool = True
    compressed_data: bool = False
    transform_matrix: tuple[float, ...] = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    center_of_rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    anatomical_orientation: str = "RAI"
    extra_tags: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.ndims != 3:
            raise MetaParseError(f"NDims must be 3, got {self.ndims}")
        if len(self.dim_size) != 3 or any(d <= 0 for d in self.dim_size):
            raise MetaParseError(f"DimSize must be three positive integers, got {self.dim_size}")
        if len(self.element_spacing) != 3 or any(s <= 0 for s in self.element_spacing):
            raise MetaParseError(
                f"ElementSpacing must be three positive reals, got {self.element_spacing}"
            )
        if not self.data_file:
            raise MetaParseError("ElementDataFile must be nonempty")


@dataclass(frozen=True)
class Volume:
    """A 3-D scalar grid with physical spacing and header provenance.

    ``data`` is indexed ``[z, y, x]``; ``spacing`` is ``(sx, sy, sz)`` in
    mm/voxel.  Instances are treated as immutable: the wrapped array is marked
    read-only on construction.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    header: MetaHeader = field(repr=False)

    def __post_init__(self):
        self.data.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def _parse_bool(tag: str, raw: str) -> bool:
    if raw == "True":
        return True
    if raw == "False":
        return False
    raise MetaParseError(f"{tag} must be True or False, got {raw!r}")


def _parse_floats(tag: str, raw: str, n: int) -> tuple[float, ...]:
    parts = raw.split()
    if len(parts) != n:
        raise MetaParseError(f"{tag} must have {n} values, got {len(parts)}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise MetaParseError(f"{tag} contains a non-numeric value: {raw!r}") from exc


def parse_meta(text: str) -> MetaHeader:
    """Parse a MetaImage header from ``Key = Value`` lines.

    Recognized tags may appear in any order; unknown tags are preserved.
    Raises :class:`MetaParseError` when a required tag is missing and
    :class:`UnsupportedElementTypeError` for voxel types other than
    ``MET_USHORT``.
    """
    tags: dict[str, str] = {}
    extras: list[tuple[str, str]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise MetaParseError(f"line {lineno} is not a 'Key = Value' pair: {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in KNOWN_TAGS:
            tags[key] = value
        else:
            extras.append((key, value))

    for tag in _REQUIRED_TAGS:
        if tag not in tags:
            raise MetaParseError(f"missing required tag {tag}")

    element_type = tags.get("ElementType", "MET_USHORT")
    if element_type != "MET_USHORT":
        raise UnsupportedElementTypeError(
            f"unsupported ElementType {element_type!r}; only MET_USHORT is supported"
        )
    if _parse_bool("CompressedData", tags.get("CompressedData", "False")):
        raise UnsupportedElementTypeError("compressed payloads are not supported")

    try:
        ndims = int(tags["NDims"])
    except ValueError as exc:
        raise MetaParseError(f"NDims is not an integer: {tags['NDims']!r}") from exc
    dim_parts = tags["DimSize"].split()
    try:
        dim_size = tuple(int(p) for p in dim_parts)
    except ValueError as exc:
        raise MetaParseError(f"DimSize contains a non-integer: {tags['DimSize']!r}") from exc

    return MetaHeader(
        dim_size=dim_size,
        element_spacing=_parse_floats("ElementSpacing", tags["ElementSpacing"], 3),
        data_file=tags["ElementDataFile"],
        ndims=ndims,
        element_type=element_type,
        byte_order_msb=_parse_bool(
            "BinaryDataByteOrderMSB", tags.get("BinaryDataByteOrderMSB", "False")
        ),
        object_type=tags.get("ObjectType", "Image"),
        binary_data=_parse_bool("BinaryData", tags.get("BinaryData", "True")),
        compressed_data=False,
        transform_matrix=_parse_floats(
            "TransformMatrix", tags.get("TransformMatrix", "1.0 0.0 0.0 0.0 1.0 0.0 0.0 0.0 1.0"), 9
        ),
        offset=_parse_floats("Offset", tags.get("Offset", "0.0 0.0 0.0"), 3),
        center_of_rotation=_parse_floats(
            "CenterOfRotation", tags.get("CenterOfRotation", "0.0 0.0 0.0"), 3
        ),
        anatomical_orientation=tags.get("AnatomicalOrientation", "RAI"),
        extra_tags=tuple(extras),
    )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _fmt_seq(values) -> str:
    return " ".join(_fmt(v) for v in values)


def write_meta(header: MetaHeader) -> str:
    """Serialize a header back to text, recognized tags first in canonical order.

    Round-trips byte-exactly with :func:`parse_meta` for recognized tags.
    """
    lines = [
        f"ObjectType = {header.object_type}",
        f"NDims = {header.ndims}",
        f"BinaryData = {_fmt(header.binary_data)}",
        f"BinaryDataByteOrderMSB = {_fmt(header.byte_order_msb)}",
        f"CompressedData = {_fmt(header.compressed_data)}",
        f"TransformMatrix = {_fmt_seq(header.transform_matrix)}",
        f"Offset = {_fmt_seq(header.offset)}",
        f"CenterOfRotation = {_fmt_seq(header.center_of_rotation)}",
        f"AnatomicalOrientation = {header.anatomical_orientation}",
        f"ElementSpacing = {_fmt_seq(header.element_spacing)}",
        f"DimSize = {_fmt_seq(header.dim_size)}",
        f"ElementType = {header.element_type}",
        f"ElementDataFile = {header.data_file}",
    ]
    lines.extend(f"{k} = {v}" for k, v in header.extra_tags)
    return "\n".join(lines) + "\n"


def load_volume(header: MetaHeader, payload: bytes) -> Volume:
    """Attach a raw voxel payload to a parsed header.

    The payload is little-endian unless ``byte_order_msb`` says otherwise, with
    voxel ``(x, y, z)`` at linear index ``x + y*NX + z*NX*NY``.  Values are
    kept as raw integers; see :func:`normalize`.
    """
    nx, ny, nz = header.dim_size
    expected = nx * ny * nz * 2
    if len(payload) != expected:
        raise PayloadSizeError(
            f"payload has {len(payload)} bytes, expected {expected} "
            f"({nx}x{ny}x{nz} 16-bit voxels)"
        )
    dtype = ">u2" if header.byte_order_msb else "<u2"
    data = np.frombuffer(payload, dtype=dtype).reshape(nz, ny, nx)
    return Volume(data=data.copy(), spacing=header.element_spacing, header=header)


def downsample(volume: Volume, factor: int, method: str = "stride") -> Volume:
    """Reduce in-plane resolution by an integer factor; slice count is unchanged.

    ``stride`` keeps every ``factor``-th voxel (default); ``mean`` block-averages
    ``factor x factor`` tiles.  In-plane dims become ``floor(dim / factor)`` and
    in-plane spacing is multiplied by ``factor``.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValidationError(f"downsample factor must be an integer >= 1, got {factor!r}")
    if method not in ("stride", "mean"):
        raise ValidationError(f"unknown downsample method {method!r}")
    if factor == 1:
        return volume

    nz, ny, nx = volume.data.shape
    ny2, nx2 = ny // factor, nx // factor
    if method == "stride":
        data = volume.data[:, : ny2 * factor : factor, : nx2 * factor : factor].copy()
    else:
        cropped = volume.data[:, : ny2 * factor, : nx2 * factor].astype(np.float64)
        data = cropped.reshape(nz, ny2, factor, nx2, factor).mean(axis=(2, 4)).astype(np.float32)

    sx, sy, sz = volume.spacing
    spacing = (sx * factor, sy * factor, sz)
    header = replace(volume.header, dim_size=(nx2, ny2, nz), element_spacing=spacing)
    return Volume(data=data, spacing=spacing, header=header)


def normalize(volume: Volume) -> Volume:
    """Rescale intensities to [0, 1]; an all-constant volume maps to zeros."""
    data = volume.data.astype(np.float32)
    lo = float(data.min())
    hi = float(data.max())
    if hi == lo:
        out = np.zeros_like(data)
    else:
        out = (data - lo) / (hi - lo)
    return Volume(data=out, spacing=volume.spacing, header=volume.header)


def read_volume(mhd_path) -> Volume:
    """Read an ``.mhd`` header plus its raw payload from disk."""
    mhd_path = os.fspath(mhd_path)
    with open(mhd_path, "r", encoding="ascii") as fh:
        header = parse_meta(fh.read())
    raw_path = os.path.join(os.path.dirname(mhd_path), header.data_file)
    with open(raw_path, "rb") as fh:
        payload = fh.read()
    return load_volume(header, payload)


def write_volume(mhd_path, volume: Volume) -> None:
    """Write a uint16 volume as ``.mhd`` header plus sibling raw payload."""
    if volume.data.dtype != np.uint16:
        raise ValidationError(
            f"only uint16 volumes can be written, got dtype {volume.data.dtype}"
        )
    mhd_path = os.fspath(mhd_path)
    data_file = volume.header.data_file
    header = volume.header
    nz, ny, nx = volume.data.shape
    if header.dim_size != (nx, ny, nz):
        header = replace(header, dim_size=(nx, ny, nz))
    with open(mhd_path, "w", encoding="ascii") as fh:
        fh.write(write_meta(header))
    dtype = ">u2" if header.byte_order_msb else "<u2"
    raw_path = os.path.join(os.path.dirname(mhd_path), data_file)
    volume.data.astype(dtype).tofile(raw_path)


def quantize_unit(data: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] onto the full uint16 range (for volume export)."""
    return np.round(np.clip(data, 0.0, 1.0) * 65535.0).astype(np.uint16)


def make_header(
    shape_zyx: tuple[int, int, int],
    spacing: tuple[float, float, float],
    data_file: str,
) -> MetaHeader:
    """Build a fresh header for an in-memory ``[z, y, x]`` array."""
    nz, ny, nx = shape_zyx
    return MetaHeader(dim_size=(nx, ny, nz), element_spacing=tuple(spacing), data_file=data_file)
