"""Training loop: losses, learning-rate schedules, early stopping.

Optimization uses ADAM with default moment parameters.  Validation loss (same
criterion as training) is evaluated once per epoch; training stops when it
fails to improve for ``patience`` epochs or at ``max_epochs``, and the
best-validation snapshot is restored bitwise.  A non-finite validation loss
aborts with :class:`DivergenceError` so ablation runs can record the failure.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .errors import DivergenceError, ShapeError, ValidationError
from .nets import Net
from .sampling import AugmentPolicy, Sample, augment

LOSSES = ("bce", "bfce", "dice", "mse", "mae")
SCHEDULES = ("cyclical", "cosine", "polynomial")

_EPS = 1e-7            # cross-entropy probability clamp
_DICE_SMOOTH = 1.0
_BFCE_GAMMA = 2.0
_CYCLE_PERIOD = 20     # epochs per cyclical-schedule cycle
_CYCLE_FLOOR = 0.1     # lr floor as a fraction of lr0
_CYCLE_DECAY = 0.5     # amplitude decay per cycle


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "bce"
    lr0: float = 1e-3
    schedule: str = "cosine"
    batch_size: int = 8
    max_epochs: int = 300
    patience: int = 20
    seed: int = 0
    augment: AugmentPolicy | None = None
    target_interpolation: str = "bilinear"

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValidationError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.schedule not in SCHEDULES:
            raise ValidationError(f"unknown schedule {self.schedule!r}")
        if self.lr0 <= 0:
            raise ValidationError(f"lr0 must be > 0, got {self.lr0}")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValidationError("patience, max_epochs and batch_size must be >= 1")


@dataclass
class TrainReport:
    train_curve: list[float]
    val_curve: list[float]
    stopped_epoch: int
    best_epoch: int
    best_val_loss: float
    checkpoint_path: str | None = None
    run_tag: str = ""


def loss(pred, target, kind: str):
    """Scalar loss between prediction and target (same shapes).

    Accepts torch tensors (differentiable) or numpy arrays (returns float).
    ``bfce`` uses focusing exponent 2 without class balancing; ``dice`` is
    ``1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s)`` with smoothing ``s = 1``.
    """
    numpy_in = not isinstance(pred, torch.Tensor)
    p = torch.as_tensor(pred, dtype=torch.float32) if numpy_in else pred
    t = torch.as_tensor(target, dtype=p.dtype if not numpy_in else torch.float32)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {tuple(p.shape)} != target shape {tuple(t.shape)}")

    if kind == "bce":
        pc = torch.clamp(p, _EPS, 1.0 - _EPS)
        value = -(t * torch.log(pc) + (1.0 - t) * torch.log(1.0 - pc)).mean()
    elif kind == "bfce":
        pc = torch.clamp(p, _EPS, 1.0 - _EPS)
        pt = torch.where(t > 0.5, pc, 1.0 - pc)
        value = ((1.0 - pt) ** _BFCE_GAMMA * -torch.log(pt)).mean()
    elif kind == "dice":
        inter = (p * t).sum()
        value = 1.0 - (2.0 * inter + _DICE_SMOOTH) / (p.sum() + t.sum() + _DICE_SMOOTH)
    elif kind == "mse":
        value = ((p - t) ** 2).mean()
    elif kind == "mae":
        value = (p - t).abs().mean()
    else:
        raise ValidationError(f"unknown loss {kind!r}")
    return float(value.item()) if numpy_in else value


def lr_at(schedule: str, lr0: float, epoch: int, max_epochs: int) -> float:
    """Learning rate for a 0-based epoch index.

    cosine:     lr0 * 0.5 * (1 + cos(pi * epoch / max_epochs))
    polynomial: lr0 * (1 - epoch / max_epochs)**2
    cyclical:   triangular wave between lr0/10 and lr0, period 20 epochs,
                amplitude halved every cycle
    """
    if not 0 <= epoch < max_epochs:
        raise ValidationError(f"epoch {epoch} outside [0, {max_epochs})")
    if schedule == "cosine":
        return lr0 * 0.5 * (1.0 + np.cos(np.pi * epoch / max_epochs))
    if schedule == "polynomial":
        return lr0 * (1.0 - epoch / max_epochs) ** 2
    if schedule == "cyclical":
        cycle, phase = divmod(epoch, _CYCLE_PERIOD)
        frac = phase / _CYCLE_PERIOD
        tri = 1.0 - 2.0 * frac if frac < 0.5 else 2.0 * (frac - 0.5)
        floor = lr0 * _CYCLE_FLOOR
        return floor + (lr0 - floor) * tri * (_CYCLE_DECAY**cycle)
    raise ValidationError(f"unknown schedule {schedule!r}")


def _to_batches(samples: list[Sample], order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        x = np.stack([samples[i].input for i in chunk])
        t = np.stack([samples[i].target for i in chunk])
        yield (
            torch.from_numpy(x).permute(0, 3, 1, 2).contiguous(),
            torch.from_numpy(t).permute(0, 3, 1, 2).contiguous(),
        )


def _eval_loss(module, samples, kind, batch_size) -> float:
    module.eval()
    total, count = 0.0, 0
    order = np.arange(len(samples))
    with torch.no_grad():
        for x, t in _to_batches(samples, order, batch_size):
            total += float(loss(module(x), t, kind).item()) * len(x)
            count += len(x)
    return total / count


def fit(
    net: Net,
    train_samples: list[Sample],
    val_samples: list[Sample],
    cfg: TrainConfig,
    checkpoint_path=None,
    log_path=None,
) -> TrainReport:
    """Train ``net`` in place and restore the best-validation snapshot."""
    if not train_samples or not val_samples:
        raise ValidationError("train and validation sample sets must be nonempty")

    torch.manual_seed(cfg.seed)
    module = net.module
    optimizer = torch.optim.Adam(module.parameters(), lr=cfg.lr0)
    shuffle_rng = np.random.default_rng(cfg.seed)

    train_curve: list[float] = []
    val_curve: list[float] = []
    best_val = float("inf")
    best_epoch = 0
    best_state = None
    bad_epochs = 0
    stopped_epoch = 0
    log_fh = open(os.fspath(log_path), "a") if log_path is not None else None

    try:
        for epoch in range(cfg.max_epochs):
            lr = lr_at(cfg.schedule, cfg.lr0, epoch, cfg.max_epochs)
            for group in optimizer.param_groups:
                group["lr"] = lr

            batch_samples = train_samples
            if cfg.augment is not None:
                batch_samples = [
                    augment(
                        s,
                        cfg.augment,
                        epoch,
                        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(epoch, i)),
                        target_interpolation=cfg.target_interpolation,
                    )
                    for i, s in enumerate(train_samples)
                ]

            module.train()
            order = shuffle_rng.permutation(len(batch_samples))
            total, count = 0.0, 0
            for x, t in _to_batches(batch_samples, order, cfg.batch_size):
                optimizer.zero_grad()
                batch_loss = loss(module(x), t, cfg.loss)
                batch_loss.backward()
                optimizer.step()
                total += float(batch_loss.item()) * len(x)
                count += len(x)
            train_loss = total / count
            val_loss = _eval_loss(module, val_samples, cfg.loss, cfg.batch_size)
            train_curve.append(train_loss)
            val_curve.append(val_loss)
            stopped_epoch = epoch + 1
            if log_fh is not None:
                log_fh.write(f"{epoch + 1}, {lr:.8g}, {train_loss:.8g}, {val_loss:.8g}\n")
                log_fh.flush()

            if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch + 1} "
                    f"(train={train_loss}, val={val_loss})",
                    train_curve=train_curve,
                    val_curve=val_curve,
                )

            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch + 1
                best_state = {k: v.detach().clone() for k, v in module.state_dict().items()}
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    break
    finally:
        if log_fh is not None:
            log_fh.close()

    if best_state is not None:
        module.load_state_dict(best_state)

    ckpt = None
    if checkpoint_path is not None:
        save_checkpoint(net, checkpoint_path)
        ckpt = os.fspath(checkpoint_path)

    return TrainReport(
        train_curve=train_curve,
        val_curve=val_curve,
        stopped_epoch=stopped_epoch,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        checkpoint_path=ckpt,
    )
