"""Scikit-learn style estimator wrapping the full reconstruction pipeline.

``MeshReconstructor.fit`` takes ultrasound volumes (X) and their reference
meshes (y), encodes the meshes as soft label volumes, and trains a slice
segmenter; ``predict`` turns volumes into point clouds.  Hyper-parameters
follow sklearn conventions (stored verbatim in ``__init__``, fitted state in
trailing-underscore attributes), so the estimator composes with ``clone``,
``get_params``/``set_params``, and friends.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .encoding import encode_mesh
from .errors import ValidationError
from .infer import ThresholdRule, reconstruct
from .mesh_io import Mesh, PointCloud
from .metrics import chamfer_sampled
from .nets import NetSpec, build
from .sampling import make_samples
from .train import TrainConfig, fit
from .volume_io import Volume, downsample, normalize


class MeshReconstructor(BaseEstimator):
    """Volume-to-point-cloud estimator built on a U-Net family segmenter.

    Parameters mirror the pipeline knobs: architecture/width/activation of the
    segmenter, loss and schedule of the trainer, mesh encoding, window
    aggregation, and the decoding threshold.  The last ``n_val_volumes``
    training volumes are held out for early stopping.
    """

    def __init__(
        self,
        arch: str = "unet",
        nf: int = 16,
        ac: str = "sigmoid",
        loss: str = "bce",
        lr0: float = 1e-3,
        schedule: str = "cosine",
        batch_size: int = 8,
        max_epochs: int = 300,
        patience: int = 20,
        encoding: str = "soft",
        dilation_radius: int = 2,
        scheme: str = "SE2",
        aggregation: str = "mean",
        threshold_kind: str = "absolute",
        threshold: float = 0.4,
        downsample_factor: int = 1,
        augment=None,
        n_val_volumes: int = 1,
        seed: int = 0,
    ):
        self.arch = arch
        self.nf = nf
        self.ac = ac
        self.loss = loss
        self.lr0 = lr0
        self.schedule = schedule
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.encoding = encoding
        self.dilation_radius = dilation_radius
        self.scheme = scheme
        self.aggregation = aggregation
        self.threshold_kind = threshold_kind
        self.threshold = threshold
        self.downsample_factor = downsample_factor
        self.augment = augment
        self.n_val_volumes = n_val_volumes
        self.seed = seed

    def _prepare(self, volume: Volume) -> Volume:
        return normalize(downsample(volume, self.downsample_factor))

    def fit(self, X, y):
        """Train on volumes ``X`` and reference meshes ``y``."""
        volumes = list(X)
        meshes = list(y)
        if len(volumes) != len(meshes):
            raise ValidationError(f"got {len(volumes)} volumes but {len(meshes)} meshes")
        if len(volumes) < 2:
            raise ValidationError("need at least two volumes (one is held out for validation)")
        if not 0 < self.n_val_volumes < len(volumes):
            raise ValidationError(
                f"n_val_volumes must be in (0, {len(volumes)}), got {self.n_val_volumes}"
            )

        train_samples, val_samples = [], []
        plane = None
        n_train = len(volumes) - self.n_val_volumes
        for i, (vol, mesh) in enumerate(zip(volumes, meshes)):
            v = self._prepare(vol)
            if plane is None:
                plane = v.data.shape[1:]
            elif v.data.shape[1:] != plane:
                raise ValidationError("volumes disagree on in-plane shape after downsampling")
            label = encode_mesh(mesh, v, mode=self.encoding, radius=self.dilation_radius)
            samples = make_samples(v, label, scheme=self.scheme, volume_id=i)
            (train_samples if i < n_train else val_samples).extend(samples)

        spec = NetSpec(arch=self.arch, nf=self.nf, ac=self.ac, in_shape=(*plane, 3))
        net = build(spec, seed=self.seed)
        cfg = TrainConfig(
            loss=self.loss,
            lr0=self.lr0,
            schedule=self.schedule,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
            augment=self.augment,
            target_interpolation="bilinear" if self.encoding == "soft" else "nearest",
        )
        self.report_ = fit(net, train_samples, val_samples, cfg)
        self.net_ = net
        self.in_plane_ = plane
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("MeshReconstructor must be fitted before predicting")

    def predict(self, X):
        """Reconstruct point clouds; a single Volume yields a single cloud."""
        self._check_fitted()
        single = isinstance(X, Volume)
        volumes = [X] if single else list(X)
        rule = ThresholdRule(kind=self.threshold_kind, value=self.threshold)
        range_map = "unit" if self.ac == "tanh" and self.threshold_kind == "absolute" else "none"
        clouds = [
            reconstruct(
                self.net_, self._prepare(vol), agg=self.aggregation, rule=rule,
                range_map=range_map,
            )
            for vol in volumes
        ]
        return clouds[0] if single else clouds

    def score(self, X, y) -> float:
        """Negative mean sampled Chamfer distance against reference meshes."""
        self._check_fitted()
        clouds = self.predict(X)
        if isinstance(clouds, PointCloud):
            clouds = [clouds]
        total = 0.0
        for cloud, mesh in zip(clouds, list(y)):
            ref = PointCloud(points=mesh.vertices if isinstance(mesh, Mesh) else np.asarray(mesh))
            total += chamfer_sampled(cloud, ref, seed=self.seed).value
        return -total / len(clouds)
