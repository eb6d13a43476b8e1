"""Backbone structure, output contract and end-to-end gradients."""

import numpy as np
import pytest
import torch

from hrcenternet.core.codec import encode_targets
from hrcenternet.core.errors import ConfigError, ShapeError
from hrcenternet.core.geometry import BBox
from hrcenternet.core.grid import TensorGrid
from hrcenternet.core.loss import LossWeights
from hrcenternet.core.model import (
    PRESETS,
    ModelConfig,
    NetOutput,
    build_model,
    count_parameters,
    forward,
)
from hrcenternet.core.training import batch_loss

from tests.helpers import TINY, TOY


def census(cfg: ModelConfig) -> int:
    """Parameter count by layer-by-layer accounting"""
    c = cfg.base_channels
    widths = [c * 2**i for i in range(4)]

    def conv(k, cin, cout):
        return k * k * cin * cout

    def bn(ch):
        return 2 * ch

    total = conv(3, cfg.input_channels, 2 * c) + bn(2 * c) + conv(3, 2 * c, 2 * c) + bn(2 * c)

    cin = 2 * c
    for _ in range(cfg.stage1_bottlenecks):
        total += conv(1, cin, c) + bn(c) + conv(3, c, c) + bn(c) + conv(1, c, 4 * c) + bn(4 * c)
        if cin != 4 * c:
            total += conv(1, cin, 4 * c) + bn(4 * c)
        cin = 4 * c

    total += conv(3, 4 * c, widths[0]) + bn(widths[0]) + conv(3, 4 * c, widths[1]) + bn(widths[1])

    for s, n_modules in enumerate(cfg.stage_block_counts):
        n_branches = s + 2
        for m in range(n_modules):
            last_output = n_branches == 4 and m == n_modules - 1
            for w in widths[:n_branches]:
                total += cfg.blocks_per_branch * 2 * (conv(3, w, w) + bn(w))
            for i in range(1 if last_output else n_branches):
                for j in range(n_branches):
                    if j > i:
                        total += conv(1, widths[j], widths[i]) + bn(widths[i])
                    elif j < i:
                        for k in range(i - j):
                            out = widths[i] if k == i - j - 1 else widths[j]
                            total += conv(3, widths[j], out) + bn(out)
        if n_branches < 4:
            total += conv(3, widths[n_branches - 1], widths[n_branches]) + bn(widths[n_branches])

    total += widths[0] * cfg.head_channels + cfg.head_channels
    return total


class TestModelConfig:
    def test_branch_widths(self):
        assert ModelConfig(base_channels=32).branch_channels() == [32, 64, 128, 256]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"base_channels": 0},
            {"stage_block_counts": (1, 1)},
            {"input_channels": 2},
            {"head_channels": 4},
            {"blocks_per_branch": 0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ModelConfig(**kwargs)

    def test_presets(self):
        w32 = PRESETS["paper-w32"]
        assert w32.base_channels == 32
        assert w32.stage_block_counts == (1, 4, 3)
        assert w32.blocks_per_branch == 4
        assert w32.stage1_bottlenecks == 4
        assert PRESETS["toy"] == ModelConfig()

    def test_dict_roundtrip(self):
        assert ModelConfig.from_dict(PRESETS["paper-w32"].to_dict()) == PRESETS["paper-w32"]


class TestBuild:
    def test_toy_census(self, toy_model):
        assert count_parameters(toy_model) == census(TOY)

    @pytest.mark.parametrize("cfg", [TINY, ModelConfig(input_channels=3), ModelConfig(base_channels=6, stage_block_counts=(2, 1, 2))])
    def test_census_other_configs(self, cfg):
        assert count_parameters(build_model(cfg)) == census(cfg)

    def test_w32_scale_order_of_magnitude(self):
        n = count_parameters(build_model(PRESETS["paper-w32"]))
        assert n == census(PRESETS["paper-w32"])
        assert 0.95e6 < n < 95e6

    def test_same_seed_bit_identical(self):
        a = build_model(TOY, seed=5).state_dict()
        b = build_model(TOY, seed=5).state_dict()
        assert a.keys() == b.keys()
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_different_seed_differs(self):
        a = build_model(TOY, seed=1).head.weight
        b = build_model(TOY, seed=2).head.weight
        assert not torch.equal(a, b)

    def test_build_leaves_global_rng_alone(self):
        torch.manual_seed(99)
        expected = torch.rand(3)
        torch.manual_seed(99)
        build_model(TINY, seed=0)
        assert torch.equal(torch.rand(3), expected)

    def test_zero_biases(self, toy_model):
        assert not toy_model.head.bias.any()


class TestForward:
    @pytest.mark.parametrize("size,out", [(128, 32), (512, 128)])
    def test_output_shape(self, toy_model, size, out):
        result = forward(toy_model, TensorGrid.zeros(1, size, size))
        assert result.heatmap.shape == (1, out, out)
        assert result.size.shape == (2, out, out)
        assert result.offset.shape == (2, out, out)

    def test_non_square(self, toy_model):
        result = forward(toy_model, TensorGrid.zeros(1, 64, 160))
        assert result.heatmap.shape == (1, 16, 40)

    def test_zero_input_in_open_unit_interval(self, toy_model):
        stacked = forward(toy_model, TensorGrid.zeros(1, 128, 128)).stacked()
        assert np.isfinite(stacked).all()
        assert stacked.min() > 0.0 and stacked.max() < 1.0

    def test_rejects_non_divisible_input(self, toy_model):
        with pytest.raises(ShapeError):
            forward(toy_model, TensorGrid.zeros(1, 100, 128))
        with pytest.raises(ShapeError):
            toy_model(torch.zeros(1, 1, 128, 48))

    def test_rejects_wrong_channel_count(self, toy_model):
        with pytest.raises(ShapeError):
            forward(toy_model, TensorGrid.zeros(3, 64, 64))

    def test_color_input(self):
        model = build_model(ModelConfig(input_channels=3), seed=0)
        assert forward(model, TensorGrid.zeros(3, 64, 64)).heatmap.shape == (1, 16, 16)

    def test_branch_width_and_resolution_law(self, toy_model):
        seen = {}
        module = toy_model.stages[1][0]
        module.register_forward_hook(lambda m, i, o: seen.setdefault("xs", o))
        forward(toy_model, TensorGrid.zeros(1, 128, 128))
        c = TOY.base_channels
        for i, x in enumerate(seen["xs"]):
            assert x.shape[1] == c * 2**i
            assert x.shape[-1] == 128 // (4 * 2**i)

    def test_fusion_exchange(self, toy_model, rng):
        image = TensorGrid(rng.random((1, 128, 128), dtype=np.float32))
        baseline = forward(toy_model, image).stacked()
        lowest = toy_model.stages[-1][-1].fuse_layers[0][3]
        handle = lowest.register_forward_hook(lambda m, i, o: torch.zeros_like(o))
        try:
            cut = forward(toy_model, image).stacked()
        finally:
            handle.remove()
        assert np.abs(baseline - cut).max() > 0.0

    def test_net_output_from_tensor(self):
        out = NetOutput.from_tensor(torch.full((1, 5, 4, 4), 1.0))
        assert out.heatmap.data.max() < 1.0
        with pytest.raises(ShapeError):
            NetOutput.from_tensor(torch.zeros(2, 5, 4, 4))
        with pytest.raises(ShapeError):
            NetOutput.from_tensor(torch.zeros(4, 4, 4))


class TestEndToEndGradient:
    def test_sampled_parameters_match_finite_differences(self, rng):
        model = build_model(TINY, seed=0).double()
        model.train()
        images = torch.from_numpy(rng.random((2, 1, 32, 32)))
        targets = [
            encode_targets([BBox(10.0, 12.0, 9.0, 11.0), BBox(22.0, 20.0, 8.0, 8.0)], 32, 32),
            encode_targets([BBox(16.0, 16.0, 12.0, 10.0)], 32, 32),
        ]
        weights = LossWeights()

        def loss() -> torch.Tensor:
            return batch_loss(model(images), targets, weights)[0]

        model.zero_grad()
        loss().backward()

        params = [p for p in model.parameters() if p.requires_grad]
        sizes = np.array([p.numel() for p in params])
        picks = rng.choice(sizes.sum(), size=20, replace=False)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        step = 1e-3
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            p, idx = params[k], int(flat - offsets[k])
            analytic = p.grad.reshape(-1)[idx].item()
            with torch.no_grad():
                view = p.data.view(-1)
                orig = view[idx].item()
                view[idx] = orig + step
                up = loss().item()
                view[idx] = orig - step
                down = loss().item()
                view[idx] = orig
            numeric = (up - down) / (2 * step)
            assert abs(analytic - numeric) <= 1e-2 * max(abs(analytic), abs(numeric)) + 1e-6
