"""Ablation orchestration: config grids, run tags, trials, and reports.

A :class:`RunConfig` gathers every knob of a single experiment and serializes
to a canonical ``run_tag`` string (which round-trips back to an equal config).
``run_trial`` prepares the data per the config, trains, sweeps the threshold
set, scores Chamfer distance per volume, and selects the threshold on the
validation volume only.  Divergent training is recorded, not raised.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field, replace

from .checkpoint import load_checkpoint
from .encoding import canonical_mode, decode_points, encode_mesh
from .errors import DivergenceError, EmptyCloudError, ValidationError
from .infer import ThresholdRule, canonical_aggregation, predict_volume, resolve_threshold
from .mesh_io import PointCloud
from .metrics import chamfer_sampled
from .nets import NetSpec, build
from .sampling import AugmentPolicy, make_samples, split_volumes
from .train import TrainConfig, fit
from .volume_io import downsample, normalize

_ARCH_TAGS = {
    "unet": "unet",
    "att_unet": "attunet",
    "r2_unet": "r2unet",
    "se_unet": "seunet",
    "unetpp": "unetpp",
    "wnet": "wnet",
}
_TAG_ARCHS = {v: k for k, v in _ARCH_TAGS.items()}
_COMBINE_TAGS = {"simultaneous": "sim", "exclusive": "exc"}
_TAG_COMBINE = {v: k for k, v in _COMBINE_TAGS.items()}
_KIND_TAGS = {"absolute": "abs", "fraction_of_max": "frac"}
_TAG_KIND = {v: k for k, v in _KIND_TAGS.items()}

_TAG_KEYS = (
    "AR", "NF", "AC", "NR", "NC", "LS", "LR", "SC", "BS", "EP", "PA", "SD",
    "AU", "TR", "RO", "MX", "MY", "CM", "RT", "IR", "EN", "RD", "SE", "AG",
    "TK", "TH", "SP",
)


@dataclass(frozen=True)
class RunConfig:
    """Full coordinate of one ablation cell."""

    # architecture
    arch: str = "unet"
    nf: int = 16
    ac: str = "sigmoid"
    nr: int = 2
    nc: int = 2
    # optimization
    loss: str = "bce"
    lr0: float = 1e-3
    schedule: str = "cosine"
    batch_size: int = 8
    max_epochs: int = 300
    patience: int = 20
    seed: int = 0
    # augmentation
    max_translation: int = 10
    max_rotation: float = 15.0
    mirror_x: bool = True
    mirror_y: bool = True
    combine_mode: str = "simultaneous"
    reorientation_start_epoch: int = 0
    use_augment: bool = False
    # data preparation
    ir: int = 1
    en: str = "soft"
    radius: int = 2
    scheme: str = "SE2"
    # inference
    agg: str = "mean"
    threshold_kind: str = "absolute"
    thresholds: tuple[float, ...] = (0.2, 0.3, 0.4)
    # split
    train_ids: tuple[int, ...] = (1, 2, 3)
    val_id: int = 4
    test_id: int = 5
    # opaque passthrough tokens kept in the tag
    extra_tags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "en", canonical_mode(self.en))
        object.__setattr__(self, "agg", canonical_aggregation(self.agg))
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        object.__setattr__(self, "train_ids", tuple(int(i) for i in self.train_ids))
        object.__setattr__(self, "extra_tags", tuple(self.extra_tags))
        if self.arch not in _ARCH_TAGS:
            raise ValidationError(f"unknown arch {self.arch!r}")
        if self.scheme not in ("SE1", "SE2"):
            raise ValidationError(f"unknown selection scheme {self.scheme!r}")
        if not self.thresholds:
            raise ValidationError("thresholds must be nonempty")
        if self.val_id in self.train_ids or self.test_id in self.train_ids:
            raise ValidationError(
                f"train ids {self.train_ids} overlap val/test ({self.val_id}/{self.test_id})"
            )
        for token in self.extra_tags:
            if "_" in token or not token:
                raise ValidationError(f"bad extra tag {token!r}")
            if any(token.startswith(k) for k in _TAG_KEYS):
                raise ValidationError(f"extra tag {token!r} collides with a known key")

    @property
    def run_tag(self) -> str:
        parts = [
            f"AR{_ARCH_TAGS[self.arch]}",
            f"NF{self.nf}",
            f"AC{self.ac.replace('_', '')}",
            f"NR{self.nr}",
            f"NC{self.nc}",
            f"LS{self.loss}",
            f"LR{self.lr0!r}",
            f"SC{self.schedule}",
            f"BS{self.batch_size}",
            f"EP{self.max_epochs}",
            f"PA{self.patience}",
            f"SD{self.seed}",
            f"AU{int(self.use_augment)}",
            f"TR{self.max_translation}",
            f"RO{self.max_rotation!r}",
            f"MX{int(self.mirror_x)}",
            f"MY{int(self.mirror_y)}",
            f"CM{_COMBINE_TAGS[self.combine_mode]}",
            f"RT{self.reorientation_start_epoch}",
            f"IR{self.ir}",
            f"EN{self.en}",
            f"RD{self.radius}",
            f"SE{self.scheme[2:]}",
            f"AG{self.agg}",
            f"TK{_KIND_TAGS[self.threshold_kind]}",
            "TH" + ",".join(repr(t) for t in self.thresholds),
            "SP" + ",".join(str(i) for i in self.train_ids) + f"v{self.val_id}t{self.test_id}",
        ]
        parts.extend(self.extra_tags)
        return "_".join(parts)

    @classmethod
    def from_run_tag(cls, tag: str) -> "RunConfig":
        values: dict[str, str] = {}
        extras: list[str] = []
        for token in tag.split("_"):
            key = token[:2]
            if key in _TAG_KEYS and key not in values:
                values[key] = token[2:]
            else:
                extras.append(token)
        missing = [k for k in _TAG_KEYS if k not in values]
        if missing:
            raise ValidationError(f"run tag misses keys {missing}: {tag!r}")

        ac = values["AC"]
        ac = {"hardsigmoid": "hard_sigmoid"}.get(ac, ac)
        train_part, rest = values["SP"].split("v")
        val_part, test_part = rest.split("t")
        return cls(
            arch=_TAG_ARCHS[values["AR"]],
            nf=int(values["NF"]),
            ac=ac,
            nr=int(values["NR"]),
            nc=int(values["NC"]),
            loss=values["LS"],
            lr0=float(values["LR"]),
            schedule=values["SC"],
            batch_size=int(values["BS"]),
            max_epochs=int(values["EP"]),
            patience=int(values["PA"]),
            seed=int(values["SD"]),
            use_augment=bool(int(values["AU"])),
            max_translation=int(values["TR"]),
            max_rotation=float(values["RO"]),
            mirror_x=bool(int(values["MX"])),
            mirror_y=bool(int(values["MY"])),
            combine_mode=_TAG_COMBINE[values["CM"]],
            reorientation_start_epoch=int(values["RT"]),
            ir=int(values["IR"]),
            en=values["EN"],
            radius=int(values["RD"]),
            scheme="SE" + values["SE"],
            agg=values["AG"],
            threshold_kind=_TAG_KIND[values["TK"]],
            thresholds=tuple(float(t) for t in values["TH"].split(",")),
            train_ids=tuple(int(i) for i in train_part.split(",")),
            val_id=int(val_part),
            test_id=int(test_part),
            extra_tags=tuple(extras),
        )

    def net_spec(self, in_shape) -> NetSpec:
        return NetSpec(arch=self.arch, nf=self.nf, ac=self.ac, in_shape=in_shape,
                       nr=self.nr, nc=self.nc)

    def train_config(self) -> TrainConfig:
        policy = None
        if self.use_augment:
            policy = AugmentPolicy(
                max_translation=self.max_translation,
                max_rotation=self.max_rotation,
                mirror_x=self.mirror_x,
                mirror_y=self.mirror_y,
                combine_mode=self.combine_mode,
                reorientation_start_epoch=self.reorientation_start_epoch,
            )
        return TrainConfig(
            loss=self.loss,
            lr0=self.lr0,
            schedule=self.schedule,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
            augment=policy,
            target_interpolation="bilinear" if self.en == "soft" else "nearest",
        )


@dataclass
class TrialRecord:
    run_tag: str
    status: str                       # "converged" or "divergent"
    val_id: int
    test_id: int
    threshold_values: tuple[float, ...] = ()
    cds: dict[float, dict[int, float]] = field(default_factory=dict)
    chosen_t: float | None = None
    stopped_epoch: int = 0
    best_val_loss: float = math.nan


def expand_grid(axes: dict[str, list], base: RunConfig = RunConfig()) -> list[RunConfig]:
    """Cartesian product over config axes, in deterministic (sorted-key) order."""
    if not axes:
        return [base]
    keys = sorted(axes)
    for k in keys:
        if not axes[k]:
            raise ValidationError(f"grid axis {k!r} is empty")
    configs = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        configs.append(replace(base, **dict(zip(keys, combo))))
    return configs


def select_threshold(cds: dict[float, dict[int, float]], val_id: int) -> float:
    """Lowest validation Chamfer distance wins; ties go to the smaller threshold."""
    best_t, best_cd = None, math.inf
    for t in sorted(cds):
        cd = cds[t].get(val_id, math.inf)
        if cd < best_cd:
            best_t, best_cd = t, cd
    if best_t is None:
        best_t = min(cds)
    return best_t


def _prepare(volumes, cfg: RunConfig):
    prepared = {}
    for vid, (vol, mesh) in volumes.items():
        v = normalize(downsample(vol, cfg.ir))
        label = encode_mesh(mesh, v, mode=cfg.en, radius=cfg.radius)
        prepared[vid] = (v, label, mesh)
    return prepared


def run_trial(cfg: RunConfig, volumes, workdir=None, chamfer_v: int = 10_000) -> TrialRecord:
    """Train one configuration and score the threshold sweep on every volume.

    ``volumes`` maps volume id to ``(Volume, Mesh)`` (a list of
    ``(id, Volume, Mesh)`` triples is also accepted).  When ``workdir`` is
    given, the checkpoint is stored under the run tag and an existing
    checkpoint is reused instead of retraining.
    """
    if not isinstance(volumes, dict):
        volumes = {vid: (vol, mesh) for vid, vol, mesh in volumes}
    split = split_volumes(sorted(volumes), cfg.val_id, cfg.test_id)

    prepared = _prepare(volumes, cfg)
    planes = {v.data.shape[1:] for v, _, _ in prepared.values()}
    if len(planes) != 1:
        raise ValidationError(f"volumes disagree on plane shape: {sorted(planes)}")
    h, w = planes.pop()
    spec = cfg.net_spec((h, w, 3))

    train_samples = []
    for vid in cfg.train_ids:
        v, label, _ = prepared[vid]
        train_samples.extend(make_samples(v, label, scheme=cfg.scheme, volume_id=vid))
    v_val, label_val, _ = prepared[split.val_id]
    val_samples = make_samples(v_val, label_val, scheme=cfg.scheme, volume_id=split.val_id)

    record = TrialRecord(
        run_tag=cfg.run_tag, status="converged",
        val_id=split.val_id, test_id=split.test_id,
        threshold_values=cfg.thresholds,
    )

    ckpt_path = None
    if workdir is not None:
        trial_dir = os.path.join(os.fspath(workdir), cfg.run_tag)
        os.makedirs(trial_dir, exist_ok=True)
        ckpt_path = os.path.join(trial_dir, "checkpoint.bin")

    if ckpt_path is not None and os.path.exists(ckpt_path):
        net = load_checkpoint(ckpt_path, expected_spec=spec)
    else:
        net = build(spec, seed=cfg.seed)
        try:
            report = fit(
                net, train_samples, val_samples, cfg.train_config(),
                checkpoint_path=ckpt_path,
                log_path=None if ckpt_path is None else ckpt_path + ".log",
            )
        except DivergenceError as exc:
            record.status = "divergent"
            record.stopped_epoch = len(exc.val_curve)
            return record
        record.stopped_epoch = report.stopped_epoch
        record.best_val_loss = report.best_val_loss

    range_map = "unit" if cfg.ac == "tanh" and cfg.threshold_kind == "absolute" else "none"
    for vid, (v, _, mesh) in prepared.items():
        prob = predict_volume(net, v, agg=cfg.agg)
        if range_map == "unit":
            prob = (prob + 1.0) * 0.5
        reference = PointCloud(points=mesh.vertices)
        for value in cfg.thresholds:
            rule = ThresholdRule(kind=cfg.threshold_kind, value=value)
            t = resolve_threshold(prob, rule)
            cloud = decode_points(prob, t, v.spacing)
            try:
                cd = chamfer_sampled(cloud, reference, v=chamfer_v, seed=cfg.seed).value
            except EmptyCloudError:
                cd = math.inf
            record.cds.setdefault(value, {})[vid] = cd

    record.chosen_t = select_threshold(record.cds, split.val_id)
    return record


def report(records: list[TrialRecord]) -> str:
    """Aligned text table, one row per (trial, threshold)."""
    if not records:
        return "run_tag | t | (no trials)\n"
    vol_ids = sorted({vid for r in records for cds in r.cds.values() for vid in cds})
    header = ["run_tag", "status", "t"] + [f"vol{v}" for v in vol_ids]
    rows = [header]
    for r in records:
        if r.status != "converged":
            rows.append([r.run_tag, r.status, "-"] + ["-" for _ in vol_ids])
            continue
        for t in r.threshold_values:
            cells = []
            for vid in vol_ids:
                cd = r.cds.get(t, {}).get(vid)
                cell = "-" if cd is None else ("NIL" if math.isinf(cd) else f"{cd:.2f}")
                if vid == r.val_id and cd is not None:
                    cell += " (val)"
                elif vid == r.test_id and cd is not None:
                    cell += " (tst)"
                cells.append(cell)
            mark = "*" if t == r.chosen_t else " "
            rows.append([r.run_tag, r.status, f"{mark}{t!r}"] + cells)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"


def report_csv(records: list[TrialRecord]) -> str:
    """Machine-readable sidecar: one line per (trial, threshold, volume)."""
    lines = ["run_tag,status,threshold,chosen,volume_id,role,chamfer"]
    for r in records:
        if r.status != "converged":
            lines.append(f"{r.run_tag},{r.status},,,,,")
            continue
        for t in r.threshold_values:
            for vid, cd in sorted(r.cds.get(t, {}).items()):
                role = "val" if vid == r.val_id else ("tst" if vid == r.test_id else "trn")
                chosen = 1 if t == r.chosen_t else 0
                cd_txt = "" if math.isinf(cd) else f"{cd!r}"
                lines.append(f"{r.run_tag},{r.status},{t!r},{chosen},{vid},{role},{cd_txt}")
    return "\n".join(lines) + "\n"
