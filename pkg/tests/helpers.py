"""Shared test utilities."""

import numpy as np
import torch

from sonomesh.nets import Net
from sonomesh.train import loss as loss_fn


def finite_difference_errors(
    net: Net,
    loss_kind: str = "bce",
    n_params: int = 12,
    seed: int = 0,
    h: float = 1e-6,
) -> np.ndarray:
    """Relative errors between autograd and central-difference gradients.

    Runs the module in double precision and eval mode (running BN statistics),
    samples ``n_params`` parameter entries with the largest-magnitude analytic
    gradients from a random subset, and perturbs each by ``+-h``.  Biases are
    first nudged off their zero init: exact zeros flowing out of upstream
    ReLUs otherwise pin ReLU kinks to the evaluation point, where the loss is
    genuinely non-differentiable.
    """
    module = net.module.double().eval()
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith(".bias"):
                p += torch.from_numpy(rng.uniform(-0.05, 0.05, size=p.shape))
    hgt, wid, _ = net.spec.in_shape
    x = torch.from_numpy(rng.uniform(0.05, 0.95, size=(2, 3, hgt, wid)))
    t = torch.from_numpy((rng.uniform(size=(2, 3, hgt, wid)) > 0.8).astype(np.float64))

    params = [p for p in module.parameters() if p.requires_grad]
    module.zero_grad()
    loss_fn(module(x), t, loss_kind).backward()

    candidates = []
    for pi, p in enumerate(params):
        flat = p.grad.detach().reshape(-1)
        take = min(20, flat.numel())
        for fi in rng.choice(flat.numel(), size=take, replace=False):
            candidates.append((abs(float(flat[fi])), pi, int(fi)))
    candidates.sort(reverse=True)
    picked = candidates[:n_params]

    errors = []
    with torch.no_grad():
        for _, pi, fi in picked:
            p = params[pi]
            flat = p.reshape(-1)
            orig = float(flat[fi])
            analytic = float(params[pi].grad.reshape(-1)[fi])

            flat[fi] = orig + h
            up = float(loss_fn(module(x), t, loss_kind))
            flat[fi] = orig - h
            down = float(loss_fn(module(x), t, loss_kind))
            flat[fi] = orig

            numeric = (up - down) / (2 * h)
            scale = max(abs(analytic), abs(numeric), 1e-8)
            errors.append(abs(analytic - numeric) / scale)
    return np.array(errors)
