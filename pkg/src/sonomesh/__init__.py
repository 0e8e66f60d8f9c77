"""Surface mesh reconstruction from 3D ultrasound volumes.

The pipeline encodes reference meshes as soft voxel masks, trains U-Net
family segmenters on slice triplets, aggregates sliding-window predictions
into probability volumes, decodes thresholded point clouds, extracts
isosurface meshes, and scores reconstructions with sampled Chamfer distance.
"""

from .encoding import LabelVolume, decode_points, encode_mesh
from .errors import SonomeshError
from .estimator import MeshReconstructor
from .harness import RunConfig, TrialRecord, expand_grid, run_trial
from .infer import ThresholdRule, predict_volume, reconstruct, resolve_threshold
from .checkpoint import load_checkpoint, save_checkpoint
from .mesh_io import Mesh, PointCloud, read_ply, write_ply
from .metrics import ChamferResult, chamfer_exact, chamfer_sampled
from .nets import Net, NetSpec, build, count_params, param_report
from .sampling import AugmentPolicy, Sample, Split, augment, make_samples, split_volumes
from .surface import marching_cubes, render_screenshot
from .train import TrainConfig, TrainReport, fit, loss, lr_at
from .volume_io import (
    MetaHeader,
    Volume,
    downsample,
    load_volume,
    normalize,
    parse_meta,
    read_volume,
    write_meta,
    write_volume,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy",
    "ChamferResult",
    "LabelVolume",
    "Mesh",
    "MeshReconstructor",
    "MetaHeader",
    "Net",
    "NetSpec",
    "PointCloud",
    "RunConfig",
    "Sample",
    "SonomeshError",
    "Split",
    "ThresholdRule",
    "TrainConfig",
    "TrainReport",
    "TrialRecord",
    "Volume",
    "augment",
    "build",
    "chamfer_exact",
    "chamfer_sampled",
    "count_params",
    "decode_points",
    "downsample",
    "encode_mesh",
    "expand_grid",
    "fit",
    "load_checkpoint",
    "load_volume",
    "loss",
    "lr_at",
    "make_samples",
    "marching_cubes",
    "normalize",
    "param_report",
    "parse_meta",
    "predict_volume",
    "read_ply",
    "read_volume",
    "reconstruct",
    "render_screenshot",
    "resolve_threshold",
    "run_trial",
    "save_checkpoint",
    "split_volumes",
    "write_meta",
    "write_ply",
    "write_volume",
]
