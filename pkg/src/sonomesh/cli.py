"""Command-line entry point.

Subcommands: ``encode``, ``train``, ``predict``, ``evaluate``, ``mesh``,
``trial``, ``synth``.  Exit codes: 0 success, 1 validation/usage error,
2 runtime failure.  ``train`` and ``trial`` read flat ``key = value`` config
files (grid axes as comma-separated lists); command-line flags win over
config-file values.
"""

from __future__ import annotations

import argparse
import glob
import os
import re
import sys
import warnings
from dataclasses import fields

import numpy as np

from . import harness
from .checkpoint import load_checkpoint
from .encoding import decode_points, encode_mesh
from .errors import ShapeError, SonomeshError
from .harness import RunConfig, TrialRecord, expand_grid, run_trial
from .infer import ThresholdRule, predict_volume, reconstruct, resolve_threshold
from .mesh_io import read_ply, read_point_cloud, write_ply, write_point_cloud
from .metrics import chamfer_sampled
from .nets import build
from .sampling import make_samples
from .surface import marching_cubes, render_screenshot
from .synth import write_pipe_dataset
from .train import fit
from .volume_io import (
    Volume,
    downsample,
    make_header,
    normalize,
    quantize_unit,
    read_volume,
    write_volume,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{message}\n{self.format_usage()}")


def _read_config(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise _UsageError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


_CONFIG_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    if name not in _CONFIG_FIELDS:
        raise _UsageError(f"unknown config key {name!r}")
    current = RunConfig.__dataclass_fields__[name].default
    if name == "thresholds":
        return tuple(float(v) for v in raw.split(","))
    if name in ("train_ids", "extra_tags"):
        items = [v.strip() for v in raw.split(",") if v.strip()]
        return tuple(int(v) for v in items) if name == "train_ids" else tuple(items)
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def _config_from_file(path, overrides: dict) -> tuple[RunConfig, dict[str, str]]:
    raw = _read_config(path) if path else {}
    special = {k: raw.pop(k) for k in ("data_dir",) if k in raw}
    kwargs = {k: _coerce(k, v) for k, v in raw.items()}
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**kwargs), special


def _load_dataset(data_dir):
    """Pair volumes/*.mhd with meshes/*.ply by trailing integer in the stem."""

    def index(paths):
        out = {}
        for i, p in enumerate(sorted(paths)):
            m = re.search(r"(\d+)\D*$", os.path.splitext(os.path.basename(p))[0])
            out[int(m.group(1)) if m else i + 1] = p
        return out

    vols = index(glob.glob(os.path.join(data_dir, "volumes", "*.mhd")))
    meshes = index(glob.glob(os.path.join(data_dir, "meshes", "*.ply")))
    if not vols:
        raise _UsageError(f"no volumes found under {data_dir}/volumes")
    common = sorted(set(vols) & set(meshes))
    if not common:
        raise _UsageError(f"no volume/mesh id pairs found under {data_dir}")
    out = {}
    for vid in common:
        with open(meshes[vid], "rb") as fh:
            mesh = read_ply(fh.read())
        out[vid] = (read_volume(vols[vid]), mesh)
    return out


def _write_prob_volume(prob: np.ndarray, spacing, out_path) -> None:
    data_file = os.path.splitext(os.path.basename(out_path))[0] + ".raw"
    header = make_header(prob.shape, spacing, data_file)
    write_volume(out_path, Volume(data=quantize_unit(prob), spacing=tuple(spacing), header=header))


def _cmd_encode(args) -> int:
    volume = read_volume(args.volume)
    with open(args.mesh, "rb") as fh:
        mesh = read_ply(fh.read())
    label = encode_mesh(mesh, volume, mode=args.mode, radius=args.radius)
    _write_prob_volume(label.data, volume.spacing, args.out)
    print(f"encoded {len(mesh.vertices)} vertices -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    overrides = {k: getattr(args, k) for k in ("seed",)}
    cfg, special = _config_from_file(args.config, overrides)
    data_dir = args.data or special.get("data_dir")
    if not data_dir:
        raise _UsageError("train needs --data or a data_dir config entry")
    volumes = _load_dataset(data_dir)

    prepared = harness._prepare(volumes, cfg)
    planes = {v.data.shape[1:] for v, _, _ in prepared.values()}
    if len(planes) != 1:
        raise _UsageError(f"volumes disagree on plane shape: {sorted(planes)}")
    h, w = planes.pop()

    train_samples = []
    for vid in cfg.train_ids:
        v, label, _ = prepared[vid]
        train_samples.extend(make_samples(v, label, scheme=cfg.scheme, volume_id=vid))
    v_val, label_val, _ = prepared[cfg.val_id]
    val_samples = make_samples(v_val, label_val, scheme=cfg.scheme, volume_id=cfg.val_id)

    net = build(cfg.net_spec((h, w, 3)), seed=cfg.seed)
    report = fit(
        net, train_samples, val_samples, cfg.train_config(),
        checkpoint_path=args.out, log_path=args.log,
    )
    print(
        f"trained {cfg.run_tag}: stopped at epoch {report.stopped_epoch}, "
        f"best val loss {report.best_val_loss:.6g} (epoch {report.best_epoch}) -> {args.out}"
    )
    return 0


def _cmd_predict(args) -> int:
    net = load_checkpoint(args.ckpt)
    volume = read_volume(args.volume)
    volume = normalize(downsample(volume, args.ir))
    h, w, _ = net.spec.in_shape
    if volume.data.shape[1:] != (h, w):
        raise ShapeError(
            f"checkpoint spec mismatch: network expects {h}x{w} planes but volume "
            f"has {volume.data.shape[1:]} (after --ir {args.ir})"
        )
    if args.fraction is not None:
        rule = ThresholdRule(kind="fraction_of_max", value=args.fraction)
    else:
        rule = ThresholdRule(kind="absolute", value=args.threshold)
    range_map = "unit" if net.spec.ac == "tanh" and rule.kind == "absolute" else "none"

    prob = predict_volume(net, volume, agg=args.agg)
    if range_map == "unit":
        prob = (prob + 1.0) * 0.5
    if args.prob_out:
        _write_prob_volume(prob, volume.spacing, args.prob_out)
    t = resolve_threshold(prob, rule)
    cloud = decode_points(prob, t, volume.spacing)
    with open(args.out, "wb") as fh:
        fh.write(write_point_cloud(cloud))
    print(f"decoded {len(cloud)} points at t={t:.4g} -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    with open(args.pred, "rb") as fh:
        pred = read_point_cloud(fh.read())
    with open(args.ref, "rb") as fh:
        ref = read_point_cloud(fh.read())
    result = chamfer_sampled(pred, ref, v=args.v, seed=args.seed)
    threshold = "-" if args.threshold is None else f"{args.threshold:g}"
    print(f"{args.volume_id}, {threshold}, {result.value:.6g}")
    return 0


def _cmd_mesh(args) -> int:
    volume = read_volume(args.prob)
    prob = volume.data.astype(np.float32) / 65535.0
    mesh = marching_cubes(prob, args.iso, spacing=volume.spacing)
    if len(mesh.vertices) == 0:
        warnings.warn("iso value produced an empty mesh; nothing written")
        return 0
    with open(args.out, "wb") as fh:
        fh.write(write_ply(mesh))
    print(f"extracted {len(mesh.vertices)} vertices / {len(mesh.faces)} faces -> {args.out}")
    if args.screenshot:
        render_screenshot(mesh, args.screenshot)
    return 0


def _cmd_trial(args) -> int:
    raw = _read_config(args.grid)
    data_dir = args.data or raw.get("data_dir")
    raw.pop("data_dir", None)
    if not data_dir:
        raise _UsageError("trial needs --data or a data_dir grid entry")

    axes: dict[str, list] = {}
    base_kwargs: dict = {}
    for key, value in raw.items():
        if key == "thresholds":
            base_kwargs[key] = _coerce(key, value)
        elif "," in value and key not in ("train_ids", "extra_tags"):
            axes[key] = [_coerce(key, v.strip()) for v in value.split(",")]
        else:
            base_kwargs[key] = _coerce(key, value)
    if args.seed is not None:
        base_kwargs["seed"] = args.seed
    base = RunConfig(**base_kwargs)

    volumes = _load_dataset(data_dir)
    records: list[TrialRecord] = []
    for cfg in expand_grid(axes, base):
        print(f"running {cfg.run_tag} ...", flush=True)
        records.append(run_trial(cfg, volumes, workdir=args.workdir))

    text = harness.report(records)
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        sidecar = os.path.splitext(args.out)[0] + ".csv"
        with open(sidecar, "w", encoding="utf-8") as fh:
            fh.write(harness.report_csv(records))
        print(f"report -> {args.out} (+ {os.path.basename(sidecar)})")
    return 0


def _cmd_synth(args) -> int:
    if args.kind != "pipe":
        raise _UsageError(f"unknown synthetic dataset kind {args.kind!r}")
    dims = tuple(int(v) for v in args.dim.split("x"))
    if len(dims) != 3:
        raise _UsageError(f"--dim must look like 64x64x96, got {args.dim!r}")
    entries = write_pipe_dataset(
        args.out, n_volumes=args.volumes, dim_size=dims, seed=args.seed,
        noise_scale=args.noise,
    )
    for vid, mhd, ply in entries:
        print(f"volume {vid}: {mhd} + {ply}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="sonomesh", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="embed a mesh into a label volume")
    p.add_argument("--mesh", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--mode", default="soft", help="binary | soft | solid")
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("train", help="train a segmenter from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None, help="dataset directory (volumes/ + meshes/)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="progress log path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="reconstruct a point cloud from a volume")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--agg", default="mean", help="mean | max | single")
    p.add_argument("--threshold", type=float, default=0.4)
    p.add_argument("--fraction", type=float, default=None, help="threshold as fraction of map max")
    p.add_argument("--ir", type=int, default=1, help="in-plane down-sampling factor")
    p.add_argument("--prob-out", default=None, help="also dump the probability volume (.mhd)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="Chamfer distance between two point clouds")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--v", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--volume-id", default="-")
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("mesh", help="extract an isosurface from a probability volume")
    p.add_argument("--prob", required=True)
    p.add_argument("--iso", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--screenshot", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_mesh)

    p = sub.add_parser("trial", help="expand a config grid and run every trial")
    p.add_argument("--grid", required=True, help="flat key=value file; comma lists become axes")
    p.add_argument("--data", default=None)
    p.add_argument("--workdir", default=None, help="checkpoint/resume directory")
    p.add_argument("--out", default=None, help="report path (.csv sidecar added)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_trial)

    p = sub.add_parser("synth", help="generate the synthetic pipe dataset")
    p.add_argument("--kind", default="pipe")
    p.add_argument("--out", required=True)
    p.add_argument("--volumes", type=int, default=3)
    p.add_argument("--dim", default="64x64x96")
    p.add_argument("--noise", type=float, default=2500.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SonomeshError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
