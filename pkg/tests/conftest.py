import numpy as np
import pytest

from sonomesh.volume_io import MetaHeader, Volume, make_header

# Header layout used by the scanner exports this pipeline ingests.
REFERENCE_MHD = """ObjectType = Image
NDims = 3
BinaryData = True
BinaryDataByteOrderMSB = False
CompressedData = False
TransformMatrix = 1.0 0.0 0.0 0.0 1.0 0.0 0.0 0.0 1.0
Offset = 0.0 0.0 0.0
CenterOfRotation = 0.0 0.0 0.0
AnatomicalOrientation = RAI
ElementSpacing = 0.49479 0.49479 0.3125
DimSize = 768 768 1280
ElementType = MET_USHORT
ElementDataFile = scan_001.raw
"""


@pytest.fixture
def reference_mhd_text() -> str:
    return REFERENCE_MHD


def make_volume(data: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> Volume:
    """Wrap an array (indexed [z, y, x]) as a Volume with a synthetic header."""
    data = np.asarray(data)
    header = make_header(data.shape, spacing, "test.raw")
    return Volume(data=data, spacing=tuple(spacing), header=header)


@pytest.fixture
def volume_factory():
    return make_volume


def random_header(rng: np.random.Generator) -> MetaHeader:
    return MetaHeader(
        dim_size=tuple(int(v) for v in rng.integers(1, 2000, size=3)),
        element_spacing=tuple(float(v) for v in rng.uniform(0.01, 3.0, size=3)),
        data_file=f"scan_{rng.integers(0, 999):03d}.raw",
        byte_order_msb=bool(rng.integers(0, 2)),
        transform_matrix=tuple(float(v) for v in rng.normal(size=9)),
        offset=tuple(float(v) for v in rng.normal(size=3)),
        center_of_rotation=tuple(float(v) for v in rng.normal(size=3)),
        anatomical_orientation=str(rng.choice(["RAI", "LPS", "ASL"])),
        extra_tags=tuple(
            (f"Tag{i}", f"value{rng.integers(0, 100)}") for i in range(rng.integers(0, 3))
        ),
    )
