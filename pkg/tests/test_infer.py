import numpy as np
import pytest
import torch
from torch import nn

from conftest import make_volume
from sonomesh.errors import ShapeError, ValidationError
from sonomesh.infer import (
    AG_CODES,
    ThresholdRule,
    canonical_aggregation,
    predict_volume,
    reconstruct,
    resolve_threshold,
)
from sonomesh.nets import Net, NetSpec, build

SPEC = NetSpec(arch="unet", nf=2, in_shape=(32, 32, 3))


class _ChannelConstant(nn.Module):
    """Returns fixed values per output channel, ignoring the input."""

    def __init__(self, values):
        super().__init__()
        self.values = values

    def forward(self, x):
        out = torch.empty_like(x)
        for ch, v in enumerate(self.values):
            out[:, ch] = v
        return out


class _Identity(nn.Module):
    def forward(self, x):
        return x


def stub_net(module) -> Net:
    return Net(spec=SPEC, module=module)


def normalized_volume(nz=8, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.uniform(size=(nz, 32, 32)).astype(np.float32)
    return make_volume(data, spacing=(0.5, 0.5, 0.25))


class TestPredictVolume:
    @pytest.mark.parametrize("agg", ["mean", "max", "single"])
    def test_constant_net_constant_output(self, agg):
        net = stub_net(_ChannelConstant([0.7, 0.7, 0.7]))
        prob = predict_volume(net, normalized_volume(), agg=agg)
        assert prob.shape == (8, 32, 32)
        assert np.allclose(prob, 0.7)

    def test_candidate_combination(self):
        # channels contribute 0.2 / 0.4 / 0.9 to slices c-1 / c / c+1
        net = stub_net(_ChannelConstant([0.2, 0.4, 0.9]))
        vol = normalized_volume(nz=5)
        mean = predict_volume(net, vol, agg="mean")
        vmax = predict_volume(net, vol, agg="max")
        single = predict_volume(net, vol, agg="single")
        # interior slice: one candidate per channel
        assert np.allclose(mean[2], (0.2 + 0.4 + 0.9) / 3)
        assert np.allclose(vmax[2], 0.9)
        assert np.allclose(single[2], 0.4)
        # boundaries: slice 0 only seen by window 1's first channel
        assert np.allclose(mean[0], 0.2)
        assert np.allclose(vmax[0], 0.2)
        assert np.allclose(single[0], 0.2)
        assert np.allclose(mean[4], 0.9)
        assert np.allclose(single[4], 0.9)
        # one step in: two candidates for mean/max
        assert np.allclose(mean[1], (0.2 + 0.4) / 2)
        assert np.allclose(vmax[1], 0.4)
        assert np.allclose(single[1], 0.4)

    def test_identity_net_reproduces_volume(self):
        net = stub_net(_Identity())
        vol = normalized_volume(nz=6, seed=3)
        for agg in ("mean", "max", "single"):
            prob = predict_volume(net, vol, agg=agg)
            assert np.allclose(prob, vol.data, atol=1e-6)

    def test_max_dominates_mean(self):
        net = build(SPEC, seed=0)
        vol = normalized_volume(nz=6, seed=4)
        mean = predict_volume(net, vol, agg="mean")
        vmax = predict_volume(net, vol, agg="max")
        assert np.all(vmax >= mean - 1e-7)

    def test_bit_identical_across_batch_sizes(self):
        net = build(SPEC, seed=1)
        vol = normalized_volume(nz=12, seed=5)
        outs = [predict_volume(net, vol, agg="mean", batch_size=b) for b in (1, 8, 32)]
        assert np.array_equal(outs[0], outs[1])
        assert np.array_equal(outs[1], outs[2])
        again = predict_volume(net, vol, agg="mean", batch_size=8)
        assert np.array_equal(outs[1], again)

    def test_plane_mismatch(self):
        net = build(SPEC, seed=0)
        with pytest.raises(ShapeError):
            predict_volume(net, make_volume(np.zeros((5, 48, 48), dtype=np.float32)))

    def test_too_few_slices(self):
        net = build(SPEC, seed=0)
        with pytest.raises(ValidationError):
            predict_volume(net, make_volume(np.zeros((2, 32, 32), dtype=np.float32)))

    def test_aggregation_codes(self):
        assert AG_CODES == {"mean": 0, "max": 1, "single": 2}
        assert canonical_aggregation(0) == "mean"
        assert canonical_aggregation("MAX") == "max"
        with pytest.raises(ValidationError):
            canonical_aggregation("median")


class TestResolveThreshold:
    def test_absolute(self):
        assert resolve_threshold(np.ones((2, 2, 2)), ThresholdRule("absolute", 0.32)) == 0.32

    def test_fraction_of_max(self):
        prob = np.zeros((2, 2, 2))
        prob[0, 0, 0] = 0.46
        t = resolve_threshold(prob, ThresholdRule("fraction_of_max", 0.9))
        assert t == pytest.approx(0.414)

    def test_fraction_of_one_keeps_a_point(self):
        rng = np.random.default_rng(0)
        prob = rng.uniform(size=(3, 3, 3))
        t = resolve_threshold(prob, ThresholdRule("fraction_of_max", 1.0))
        assert (prob >= t).sum() >= 1

    def test_degenerate_all_zero(self):
        with pytest.warns(UserWarning, match="degenerates"):
            t = resolve_threshold(np.zeros((2, 2, 2)), ThresholdRule("fraction_of_max", 0.9))
        assert t == 0.0

    def test_rule_validation(self):
        with pytest.raises(ValidationError):
            ThresholdRule("absolute", 1.5)
        with pytest.raises(ValidationError):
            ThresholdRule("fraction_of_max", 0.0)
        with pytest.raises(ValidationError):
            ThresholdRule("quantile", 0.5)


class TestReconstruct:
    def test_constant_zero_net_empty_cloud(self):
        net = stub_net(_ChannelConstant([0.0, 0.0, 0.0]))
        cloud = reconstruct(net, normalized_volume(), rule=ThresholdRule("absolute", 0.5))
        assert len(cloud) == 0

    def test_delta_net_single_point(self):
        class Delta(nn.Module):
            def forward(self, x):
                out = torch.zeros_like(x)
                if x.shape[0] >= 3:  # window centered on slice 3 in an 8-slice volume
                    out[2, 1, 4, 6] = 0.9
                return out

        net = stub_net(Delta())
        vol = normalized_volume(nz=8)
        cloud = reconstruct(net, vol, agg="max", rule=ThresholdRule("absolute", 0.5))
        assert len(cloud) == 1
        x, y, z = cloud.points[0]
        assert (x, y, z) == (6 * 0.5, 4 * 0.5, 3 * 0.25)

    def test_unit_range_map(self):
        net = stub_net(_ChannelConstant([-0.2, -0.2, -0.2]))  # tanh-style raw output
        vol = normalized_volume()
        raw = reconstruct(net, vol, rule=ThresholdRule("absolute", 0.3), range_map="none")
        mapped = reconstruct(net, vol, rule=ThresholdRule("absolute", 0.3), range_map="unit")
        assert len(raw) == 0
        assert len(mapped) == vol.data.size  # (-0.2 + 1) / 2 = 0.4 >= 0.3

    def test_monotone_point_count_for_tanh_outputs(self):
        net = build(NetSpec(arch="unet", nf=2, in_shape=(32, 32, 3), ac="tanh"), seed=2)
        vol = normalized_volume(nz=6, seed=7)
        counts = [
            len(reconstruct(net, vol, rule=ThresholdRule("absolute", t), range_map="unit"))
            for t in (0.2, 0.4, 0.6, 0.8)
        ]
        assert counts == sorted(counts, reverse=True)

    def test_spacing_required_for_bare_arrays(self):
        net = stub_net(_ChannelConstant([1.0, 1.0, 1.0]))
        with pytest.raises(ValidationError):
            reconstruct(net, np.zeros((5, 32, 32), dtype=np.float32))
