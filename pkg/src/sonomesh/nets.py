"""U-Net family segmentation networks operating on 3-channel slice triplets.

All variants share the same skeleton: a 5-level encoder with filter widths
``nf * {1, 2, 4, 8, 16}``, two 3x3 conv+BN+ReLU layers per block, 2x2
max-pooling between levels, and a decoder of stride-2 2x2 transpose
convolutions (each with BN+ReLU) whose output is concatenated with the
matching encoder feature and re-convolved.  A final 1x1 convolution maps to 3
output channels followed by the configured activation.

Variants:
- ``att_unet``: a gate (1x1 convs on the upsampled path and the skip, add,
  ReLU, 1x1 conv to one channel, sigmoid) multiplies its mask onto the
  upsampled path before each concatenation;
- ``se_unet``: each conv block ends with a squeeze-excitation gate
  (global average pool, half-width bottleneck, sigmoid channel weights);
- ``r2_unet``: conv blocks become recurrent-residual blocks (``nc`` conv
  layers, each applied ``nr`` times with additive feedback of its input,
  wrapped in a residual add of the first layer's output);
- ``unetpp``: a nested dense-skip lattice with a single re-convolution at
  every grid node;
- ``wnet``: two half-width U-Net branches in cascade; the second consumes the
  first's 3-channel pre-activation map (plus the first branch's same-scale
  encoder features) and the output activation is applied once at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .errors import ShapeError, ValidationError

ARCHS = ("unet", "att_unet", "r2_unet", "se_unet", "unetpp", "wnet")
ACTIVATIONS = ("sigmoid", "hard_sigmoid", "tanh", "linear")

ACTIVATION_RANGES = {
    "sigmoid": (0.0, 1.0),
    "hard_sigmoid": (0.0, 1.0),
    "tanh": (-1.0, 1.0),
    "linear": (-math.inf, math.inf),
}


def hard_sigmoid(x):
    return torch.clamp(0.2 * x + 0.5, 0.0, 1.0)


_ACT_FNS = {
    "sigmoid": torch.sigmoid,
    "hard_sigmoid": hard_sigmoid,
    "tanh": torch.tanh,
    "linear": lambda x: x,
}


@dataclass(frozen=True)
class NetSpec:
    """Declarative architecture description."""

    arch: str = "unet"
    nf: int = 16
    ac: str = "sigmoid"
    in_shape: tuple[int, int, int] = (256, 256, 3)
    out_channels: int = 3
    nr: int = 2
    nc: int = 2
    deep_supervision: bool = False

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValidationError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.ac not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.ac!r}; expected one of {ACTIVATIONS}")
        if self.nf < 1:
            raise ValidationError(f"nf must be >= 1, got {self.nf}")
        h, w, ch = self.in_shape
        if h % 16 != 0 or w % 16 != 0:
            raise ShapeError(f"input plane {h}x{w} must be divisible by 16 (four pooling stages)")
        if ch != 3:
            raise ShapeError(f"input must have 3 channels (slice triplet), got {ch}")
        if self.nr < 1 or self.nc < 1:
            raise ValidationError(f"nr and nc must be >= 1, got nr={self.nr} nc={self.nc}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["in_shape"] = list(self.in_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        d = dict(d)
        d["in_shape"] = tuple(d["in_shape"])
        return cls(**d)


def _widths(nf: int) -> list[int]:
    return [nf, nf * 2, nf * 4, nf * 8, nf * 16]


class ConvBlock(nn.Module):
    def __init__(self, cin, c):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, c, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(c)
        self.conv2 = nn.Conv2d(c, c, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(c)

    def forward(self, x):
        x = torch.relu(self.bn1(self.conv1(x)))
        return torch.relu(self.bn2(self.conv2(x)))


class DeconvBlock(nn.Module):
    def __init__(self, cin, c):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(cin, c, 2, stride=2)
        self.bn = nn.BatchNorm2d(c)

    def forward(self, x):
        return torch.relu(self.bn(self.deconv(x)))


class AttentionGate(nn.Module):
    """Additive gate producing a [0, 1] mask applied to the upsampled path."""

    def __init__(self, c):
        super().__init__()
        self.theta = nn.Conv2d(c, c, 1)
        self.bn_x = nn.BatchNorm2d(c)
        self.phi = nn.Conv2d(c, c, 1)
        self.bn_g = nn.BatchNorm2d(c)
        self.psi = nn.Conv2d(c, 1, 1)

    def mask(self, x, gate):
        a = torch.relu(self.bn_x(self.theta(x)) + self.bn_g(self.phi(gate)))
        return torch.sigmoid(self.psi(a))

    def forward(self, x, gate):
        return x * self.mask(x, gate)


class SEGate(nn.Module):
    """Channel recalibration: squeeze to a half-width bottleneck, excite back."""

    def __init__(self, c):
        super().__init__()
        hidden = max(c // 2, 1)
        self.fc1 = nn.Linear(c, hidden, bias=False)
        self.fc2 = nn.Linear(hidden, c)

    def weights(self, x):
        squeezed = x.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(squeezed))))

    def forward(self, x):
        return x * self.weights(x)[:, :, None, None]


class SEConvBlock(nn.Module):
    def __init__(self, cin, c):
        super().__init__()
        self.block = ConvBlock(cin, c)
        self.se = SEGate(c)

    def forward(self, x):
        return self.se(self.block(x))


class R2Block(nn.Module):
    """Recurrent-residual block.

    The first conv layer adapts channels; every following layer is applied
    ``nr`` times, feeding ``state + layer_input`` back through the same conv.
    The final state is added to the first layer's output.
    """

    def __init__(self, cin, c, nr, nc):
        super().__init__()
        self.nr = nr
        self.convs = nn.ModuleList(
            [nn.Conv2d(cin if i == 0 else c, c, 3, padding=1) for i in range(nc)]
        )
        self.bns = nn.ModuleList([nn.BatchNorm2d(c) for _ in range(nc)])

    def forward(self, x):
        first = torch.relu(self.bns[0](self.convs[0](x)))
        h = first
        for conv, bn in zip(list(self.convs)[1:], list(self.bns)[1:]):
            s = h
            out = torch.relu(bn(conv(s)))
            for _ in range(self.nr - 1):
                out = torch.relu(bn(conv(s + out)))
            h = out
        if len(self.convs) == 1:
            return first
        return h + first


class _Node(nn.Module):
    """Single re-convolution at a nested-skip grid node."""

    def __init__(self, cin, c):
        super().__init__()
        self.conv = nn.Conv2d(cin, c, 3, padding=1)
        self.bn = nn.BatchNorm2d(c)

    def forward(self, x):
        return torch.relu(self.bn(self.conv(x)))


class UNet(nn.Module):
    def __init__(self, nf, in_ch=3, out_ch=3, ac="sigmoid", block=ConvBlock):
        super().__init__()
        c = _widths(nf)
        self.enc = nn.ModuleList(
            [block(in_ch, c[0])] + [block(c[i - 1], c[i]) for i in range(1, 5)]
        )
        self.pool = nn.MaxPool2d(2)
        self.up = nn.ModuleList([DeconvBlock(c[4 - i], c[3 - i]) for i in range(4)])
        self.dec = nn.ModuleList([block(2 * c[3 - i], c[3 - i]) for i in range(4)])
        self.head = nn.Conv2d(c[0], out_ch, 1)
        self.act = _ACT_FNS[ac]

    def encode(self, x):
        feats = []
        for i, block in enumerate(self.enc):
            x = block(x if i == 0 else self.pool(x))
            feats.append(x)
        return feats

    def decode(self, feats):
        d = feats[-1]
        for i in range(4):
            u = self.up[i](d)
            d = self.dec[i](torch.cat([u, feats[3 - i]], dim=1))
        return self.head(d)

    def forward(self, x):
        return self.act(self.decode(self.encode(x)))


class AttUNet(UNet):
    def __init__(self, nf, in_ch=3, out_ch=3, ac="sigmoid"):
        super().__init__(nf, in_ch, out_ch, ac)
        c = _widths(nf)
        self.att = nn.ModuleList([AttentionGate(c[3 - i]) for i in range(4)])

    def decode(self, feats):
        d = feats[-1]
        for i in range(4):
            u = self.up[i](d)
            skip = feats[3 - i]
            d = self.dec[i](torch.cat([self.att[i](u, skip), skip], dim=1))
        return self.head(d)


def _r2_factory(nr, nc):
    def make(cin, c):
        return R2Block(cin, c, nr, nc)

    return make


class UNetPP(nn.Module):
    def __init__(self, nf, in_ch=3, out_ch=3, ac="sigmoid", deep_supervision=False):
        super().__init__()
        c = _widths(nf)
        self.enc = nn.ModuleList(
            [ConvBlock(in_ch, c[0])] + [ConvBlock(c[i - 1], c[i]) for i in range(1, 5)]
        )
        self.pool = nn.MaxPool2d(2)
        self.ups = nn.ModuleDict()
        self.nodes = nn.ModuleDict()
        for i in range(4):
            for j in range(1, 5 - i):
                self.ups[f"{i}{j}"] = DeconvBlock(c[i + 1], c[i])
                self.nodes[f"{i}{j}"] = _Node((j + 1) * c[i], c[i])
        self.deep_supervision = deep_supervision
        n_heads = 4 if deep_supervision else 1
        self.heads = nn.ModuleList([nn.Conv2d(c[0], out_ch, 1) for _ in range(n_heads)])
        self.act = _ACT_FNS[ac]

    def forward(self, x):
        grid: dict[tuple[int, int], torch.Tensor] = {}
        for i, block in enumerate(self.enc):
            x = block(x if i == 0 else self.pool(x))
            grid[(i, 0)] = x
        for j in range(1, 5):
            for i in range(0, 5 - j):
                up = self.ups[f"{i}{j}"](grid[(i + 1, j - 1)])
                cat = torch.cat([grid[(i, k)] for k in range(j)] + [up], dim=1)
                grid[(i, j)] = self.nodes[f"{i}{j}"](cat)
        if self.deep_supervision:
            logits = sum(h(grid[(0, j + 1)]) for j, h in enumerate(self.heads)) / len(self.heads)
        else:
            logits = self.heads[0](grid[(0, 4)])
        return self.act(logits)


class WNet(nn.Module):
    def __init__(self, nf, in_ch=3, out_ch=3, ac="sigmoid"):
        super().__init__()
        b = max(nf // 2, 1)
        c = _widths(b)
        self.branch1 = UNet(b, in_ch=in_ch, out_ch=out_ch, ac="linear")
        self.enc2 = nn.ModuleList(
            [ConvBlock(out_ch + c[0], c[0])]
            + [ConvBlock(c[i - 1] + c[i], c[i]) for i in range(1, 5)]
        )
        self.pool = nn.MaxPool2d(2)
        self.up2 = nn.ModuleList([DeconvBlock(c[4 - i], c[3 - i]) for i in range(4)])
        self.dec2 = nn.ModuleList([ConvBlock(2 * c[3 - i], c[3 - i]) for i in range(4)])
        self.head = nn.Conv2d(c[0], out_ch, 1)
        self.act = _ACT_FNS[ac]

    def forward(self, x):
        feats1 = self.branch1.encode(x)
        mid = self.branch1.decode(feats1)  # 3-channel pre-activation map
        feats2 = []
        h = mid
        for i, block in enumerate(self.enc2):
            if i > 0:
                h = self.pool(h)
            h = block(torch.cat([h, feats1[i]], dim=1))
            feats2.append(h)
        d = feats2[-1]
        for i in range(4):
            u = self.up2[i](d)
            d = self.dec2[i](torch.cat([u, feats2[3 - i]], dim=1))
        return self.act(self.head(d))


def _make_module(spec: NetSpec) -> nn.Module:
    out_ch = spec.out_channels
    if spec.arch == "unet":
        return UNet(spec.nf, out_ch=out_ch, ac=spec.ac)
    if spec.arch == "att_unet":
        return AttUNet(spec.nf, out_ch=out_ch, ac=spec.ac)
    if spec.arch == "se_unet":
        return UNet(spec.nf, out_ch=out_ch, ac=spec.ac, block=SEConvBlock)
    if spec.arch == "r2_unet":
        return UNet(spec.nf, out_ch=out_ch, ac=spec.ac, block=_r2_factory(spec.nr, spec.nc))
    if spec.arch == "unetpp":
        return UNetPP(spec.nf, out_ch=out_ch, ac=spec.ac, deep_supervision=spec.deep_supervision)
    if spec.arch == "wnet":
        return WNet(spec.nf, out_ch=out_ch, ac=spec.ac)
    raise ValidationError(f"unknown arch {spec.arch!r}")


def _init_parameters(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            k = m.kernel_size[0] * m.kernel_size[1]
            bound = math.sqrt(6.0 / (m.in_channels * k + m.out_channels * k))
            m.weight.data.uniform_(-bound, bound, generator=gen)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.Linear):
            bound = math.sqrt(6.0 / (m.in_features + m.out_features))
            m.weight.data.uniform_(-bound, bound, generator=gen)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            m.reset_parameters()
            m.reset_running_stats()


class Net:
    """An instantiated network: spec plus trainable torch module."""

    def __init__(self, spec: NetSpec, module: nn.Module):
        self.spec = spec
        self.module = module

    def named_tensors(self) -> list[tuple[str, torch.Tensor]]:
        """Flat list of all state tensors (parameters and buffers)."""
        return list(self.module.state_dict().items())

    def num_params(self) -> int:
        return sum(p.numel() for p in self.module.parameters() if p.requires_grad)

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """Run inference on a channels-last batch ``(B, H, W, 3)``."""
        batch = np.asarray(batch, dtype=np.float32)
        h, w, _ = self.spec.in_shape
        if batch.ndim != 4 or batch.shape[1:] != (h, w, 3):
            raise ShapeError(
                f"expected batch of shape (B, {h}, {w}, 3), got {batch.shape}"
            )
        x = torch.from_numpy(np.ascontiguousarray(batch)).permute(0, 3, 1, 2)
        self.module.eval()
        with torch.no_grad():
            y = self.module(x)
        return y.permute(0, 2, 3, 1).contiguous().numpy()


def forward(net: Net, batch: np.ndarray) -> np.ndarray:
    return net.forward(batch)


def build(spec: NetSpec, seed: int = 0) -> Net:
    """Instantiate a network with deterministic Glorot-uniform initialization."""
    module = _make_module(spec)
    _init_parameters(module, seed)
    return Net(spec=spec, module=module)


# ---------------------------------------------------------------------------
# Closed-form parameter accounting (independent of torch), one row per layer.


def _conv(name, cin, c, k, rows, bias=True):
    rows.append((f"{name} conv{k}x{k} {cin}->{c}", k * k * cin * c + (c if bias else 0)))


def _bn(name, c, rows):
    rows.append((f"{name} bn({c})", 2 * c))


def _deconv(name, cin, c, rows):
    rows.append((f"{name} deconv2x2 {cin}->{c}", 4 * cin * c + c))
    _bn(name, c, rows)


def _conv_block(name, cin, c, rows):
    _conv(f"{name}.1", cin, c, 3, rows)
    _bn(f"{name}.1", c, rows)
    _conv(f"{name}.2", c, c, 3, rows)
    _bn(f"{name}.2", c, rows)


def _se_gate(name, c, rows):
    hidden = max(c // 2, 1)
    rows.append((f"{name} se-fc1 {c}->{hidden} (no bias)", c * hidden))
    rows.append((f"{name} se-fc2 {hidden}->{c}", hidden * c + c))


def _r2_block(name, cin, c, nc, rows):
    for i in range(nc):
        _conv(f"{name}.{i + 1}", cin if i == 0 else c, c, 3, rows)
        _bn(f"{name}.{i + 1}", c, rows)


def _att_gate(name, c, rows):
    _conv(f"{name}.theta", c, c, 1, rows)
    _bn(f"{name}.theta", c, rows)
    _conv(f"{name}.phi", c, c, 1, rows)
    _bn(f"{name}.phi", c, rows)
    _conv(f"{name}.psi", c, 1, 1, rows)


def _unet_plan(nf, in_ch, out_ch, rows, prefix="", block="conv", nc=2, se=False, att=False):
    c = _widths(nf)
    for i in range(5):
        cin = in_ch if i == 0 else c[i - 1]
        name = f"{prefix}enc{i + 1}"
        if block == "r2":
            _r2_block(name, cin, c[i], nc, rows)
        else:
            _conv_block(name, cin, c[i], rows)
        if se:
            _se_gate(name, c[i], rows)
    for i in range(4):
        _deconv(f"{prefix}up{i + 1}", c[4 - i], c[3 - i], rows)
        if att:
            _att_gate(f"{prefix}att{i + 1}", c[3 - i], rows)
        name = f"{prefix}dec{i + 1}"
        if block == "r2":
            _r2_block(name, 2 * c[3 - i], c[3 - i], nc, rows)
        else:
            _conv_block(name, 2 * c[3 - i], c[3 - i], rows)
        if se:
            _se_gate(name, c[3 - i], rows)
    _conv(f"{prefix}head", c[0], out_ch, 1, rows)


def param_table(spec: NetSpec) -> list[tuple[str, int]]:
    """Per-layer parameter counts derived from the spec alone."""
    rows: list[tuple[str, int]] = []
    out_ch = spec.out_channels
    if spec.arch in ("unet", "att_unet", "se_unet", "r2_unet"):
        _unet_plan(
            spec.nf, 3, out_ch, rows,
            block="r2" if spec.arch == "r2_unet" else "conv",
            nc=spec.nc,
            se=spec.arch == "se_unet",
            att=spec.arch == "att_unet",
        )
    elif spec.arch == "unetpp":
        c = _widths(spec.nf)
        for i in range(5):
            _conv_block(f"enc{i + 1}", 3 if i == 0 else c[i - 1], c[i], rows)
        for i in range(4):
            for j in range(1, 5 - i):
                _deconv(f"up{i}{j}", c[i + 1], c[i], rows)
                _conv(f"node{i}{j}", (j + 1) * c[i], c[i], 3, rows)
                _bn(f"node{i}{j}", c[i], rows)
        for h in range(4 if spec.deep_supervision else 1):
            _conv(f"head{h + 1}", c[0], out_ch, 1, rows)
    elif spec.arch == "wnet":
        b = max(spec.nf // 2, 1)
        c = _widths(b)
        _unet_plan(b, 3, out_ch, rows, prefix="b1.")
        for i in range(5):
            cin = out_ch + c[0] if i == 0 else c[i - 1] + c[i]
            _conv_block(f"b2.enc{i + 1}", cin, c[i], rows)
        for i in range(4):
            _deconv(f"b2.up{i + 1}", c[4 - i], c[3 - i], rows)
            _conv_block(f"b2.dec{i + 1}", 2 * c[3 - i], c[3 - i], rows)
        _conv("b2.head", c[0], out_ch, 1, rows)
    else:
        raise ValidationError(f"unknown arch {spec.arch!r}")
    return rows


def count_params(spec: NetSpec) -> int:
    """Closed-form trainable parameter count; matches ``build(spec)`` exactly."""
    return sum(n for _, n in param_table(spec))


def param_report(spec: NetSpec, target: int | None = None) -> str:
    """Human-readable per-layer parameter table (optionally vs. a target size)."""
    rows = param_table(spec)
    total = sum(n for _, n in rows)
    width = max(len(name) for name, _ in rows)
    lines = [f"{spec.arch} nf={spec.nf} nr={spec.nr} nc={spec.nc}"]
    lines += [f"  {name:<{width}}  {n:>12,}" for name, n in rows]
    lines.append(f"  {'total':<{width}}  {total:>12,}")
    if target is not None:
        dev = 100.0 * (total - target) / target
        lines.append(f"  {'target':<{width}}  {target:>12,}  ({dev:+.2f}%)")
    return "\n".join(lines)
