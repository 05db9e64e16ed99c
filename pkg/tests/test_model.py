"""Tests for udun.model."""

import dataclasses

import jaxtyping
import numpy as np
import pytest
import torch
import torch.nn.functional as F
from beartype.roar import BeartypeException

from udun.config import ModelConfig
from udun.labels import decouple
from udun.losses import LabelTensors, total_loss
from udun.model import (
    UDUN,
    AddAggregation,
    Aggregation,
    CascadeFuse,
    ConcatAggregation,
    StructureFilter,
    build_backbone,
    count_flops,
    count_params,
    dcm_regroup,
    param_breakdown,
    reduce_channels,
    routing,
)

REJECTED = (
    ValueError, TypeError, BeartypeException, jaxtyping.TypeCheckError)

# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

@pytest.fixture
def config():
    """Desk-scale configuration."""
    return ModelConfig(
        backbone="tiny", hr_size=256, lr_size=64, trunk_channels=16,
        structure_channels=8, head_channels=8)


@pytest.fixture
def images(config):
    torch.manual_seed(0)
    return (
        torch.randn(2, 3, config.hr_size, config.hr_size),
        torch.randn(2, 3, config.lr_size, config.lr_size))


def replace(cfg, **kwargs):
    return dataclasses.replace(cfg, **kwargs)


def _randomize_bn(module: torch.nn.Module, seed: int = 1) -> None:
    """Give every batch norm non-trivial statistics and affine parameters."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, torch.nn.BatchNorm2d):
            n = m.num_features
            m.running_mean.copy_(torch.randn(n, generator=gen))
            m.running_var.copy_(torch.rand(n, generator=gen) + 0.5)
            m.weight.data.copy_(torch.randn(n, generator=gen))
            m.bias.data.copy_(torch.randn(n, generator=gen))


def _c1(block, x):
    bn = block.bn
    return F.batch_norm(
        F.conv2d(x, block.conv.weight), bn.running_mean, bn.running_var,
        bn.weight, bn.bias, False, 0.0, bn.eps)


def _c3(block, x):
    bn = block.bn
    return torch.relu(F.batch_norm(
        F.conv2d(x, block.conv.weight, padding=1), bn.running_mean,
        bn.running_var, bn.weight, bn.bias, False, 0.0, bn.eps))


# ---------------------------------------------------------------------------
# Backbone and encoder
# ---------------------------------------------------------------------------

def test_tiny_backbone():
    net = build_backbone("tiny").eval()
    taps = net(torch.zeros(1, 3, 256, 256))
    assert [tuple(t.shape[1:]) for t in taps] == [
        (16, 128, 128), (16, 64, 64), (32, 32, 32), (64, 16, 16), (128, 8, 8)]
    with pytest.raises(ValueError):
        net(torch.zeros(1, 3, 100, 100))


def test_unknown_backbone():
    with pytest.raises(ValueError):
        build_backbone("101")


def _pyramid(size: int, channels: int = 4) -> list[torch.Tensor]:
    return [torch.randn(1, channels, size >> i, size >> i) for i in range(5)]


def test_routing():
    trunk, structure = routing(True)
    assert trunk == [("lr", 5), ("lr", 4), ("hr", 5), ("hr", 4), ("hr", 3)]
    assert structure == [("lr", 3), ("lr", 2), ("lr", 1), ("hr", 2), ("hr", 1)]
    trunk, structure = routing(False)
    assert {s for s, _ in trunk} == {"lr"}
    assert {s for s, _ in structure} == {"hr"}


def test_dcm_regroup():
    hr, lr = _pyramid(128), _pyramid(32)
    hr0 = torch.randn(1, 4, 256, 256)
    out = dcm_regroup(hr, lr, hr0)
    assert [t.shape[-1] for t in out.trunk_inputs] == [2, 4, 8, 16, 32]
    assert [t.shape[-1] for t in out.structure_inputs] == [
        8, 16, 32, 64, 128, 256]
    assert out.trunk_inputs[0] is lr[4]
    assert out.trunk_inputs[2] is hr[4]
    assert out.structure_inputs[0] is lr[2]
    assert out.structure_inputs[-1] is hr0


def test_dcm_regroup_disabled():
    hr, lr = _pyramid(128), _pyramid(32)
    out = dcm_regroup(hr, lr, None, use_dcm=False)
    assert all(any(t is x for x in lr) for t in out.trunk_inputs)
    assert all(any(t is x for x in hr) for t in out.structure_inputs)
    assert [t.shape[-1] for t in out.structure_inputs] == [8, 16, 32, 64, 128]


def test_dcm_regroup_invalid():
    hr, lr = _pyramid(128), _pyramid(32)
    with pytest.raises(ValueError):
        dcm_regroup(hr[::-1], lr)
    with pytest.raises(ValueError):
        dcm_regroup(hr, lr, torch.randn(1, 4, 128, 128))
    with pytest.raises(ValueError):
        dcm_regroup(hr, _pyramid(32, channels=3))


def test_reduce_channels():
    out = reduce_channels(_pyramid(64, channels=6), 3)
    assert [tuple(t.shape[1:]) for t in out] == [
        (3, 64, 64), (3, 32, 32), (3, 16, 16), (3, 8, 8), (3, 4, 4)]


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------

def test_cascade_fuse_shape():
    fuse = CascadeFuse(8)
    out = fuse(torch.randn(1, 8, 8, 8), torch.randn(1, 8, 16, 16))
    assert out.shape == (1, 8, 16, 16)
    with pytest.raises(ValueError):
        fuse(torch.randn(1, 8, 8, 8), torch.randn(1, 8, 32, 32))


def test_cascade_fuse_zero():
    fuse = CascadeFuse(4).eval()
    with torch.no_grad():
        fuse.deep.conv.weight.zero_()
        fuse.shallow.conv.weight.zero_()
    out = fuse(torch.randn(1, 4, 4, 4), torch.randn(1, 4, 8, 8))
    assert torch.all(out == 0)


def test_cascade_fuse_identity():
    fuse = CascadeFuse(4).eval()
    eye = torch.eye(4)[..., None, None]
    with torch.no_grad():
        fuse.deep.conv.weight.copy_(eye)
        fuse.shallow.conv.weight.copy_(eye)
    fuse.deep.bn.eps = 0.0
    fuse.shallow.bn.eps = 0.0
    deeper, shallower = torch.randn(1, 4, 4, 4), torch.randn(1, 4, 8, 8)
    expected = F.interpolate(
        deeper, size=(8, 8), mode="bilinear", align_corners=False) + shallower
    assert torch.allclose(fuse(deeper, shallower), expected, atol=1e-6)


def test_structure_filter():
    torch.manual_seed(0)
    filt = StructureFilter(16, 8).eval()
    _randomize_bn(filt)
    lr, tap = torch.randn(2, 8, 32, 32), torch.randn(2, 16, 32, 32)
    with torch.no_grad():
        expected = lr - _c1(filt.proj, tap)
        assert torch.allclose(filt(lr, tap), expected, atol=1e-6)

        filt.proj.conv.weight.zero_()
        filt.proj.bn.bias.zero_()
        filt.proj.bn.running_mean.zero_()
        assert torch.allclose(filt(lr, tap), lr)


def test_aggregation():
    torch.manual_seed(0)
    agg = Aggregation(16, 8).eval()
    _randomize_bn(agg)
    guide, structure = torch.randn(2, 16, 8, 8), torch.randn(2, 8, 8, 8)
    with torch.no_grad():
        a = torch.sigmoid(_c1(agg.attention, guide))
        x = _c3(agg.gated, structure * a) + _c1(agg.structure_proj, structure)
        expected = _c3(agg.out, _c3(agg.mixed, x) + _c1(agg.guide_proj, guide))
        assert torch.allclose(agg(guide, structure), expected, atol=1e-5)


def test_aggregation_gradcheck():
    torch.manual_seed(0)
    agg = Aggregation(4, 4).double().eval()
    guide = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
    structure = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(agg, (guide, structure))


@pytest.mark.parametrize("seed", range(100))
def test_blocks_reference(seed):
    """Filter, aggregation and cascade fusion against their definitions."""
    gen = torch.Generator().manual_seed(seed)
    cg, c, h = (int(v) for v in torch.randint(1, 9, (3,), generator=gen))
    torch.manual_seed(seed)
    filt = StructureFilter(cg, c).double().eval()
    agg = Aggregation(cg, c).double().eval()
    fuse = CascadeFuse(c).double().eval()
    for block in (filt, agg, fuse):
        _randomize_bn(block, seed)

    def _randn(*shape):
        return torch.randn(*shape, dtype=torch.float64, generator=gen)

    guide, structure = _randn(2, cg, h, h), _randn(2, c, h, h)
    shallower = _randn(2, c, 2 * h, 2 * h)
    with torch.no_grad():
        expected = structure - _c1(filt.proj, guide)
        assert torch.allclose(filt(structure, guide), expected, atol=1e-9)

        a = torch.sigmoid(_c1(agg.attention, guide))
        x = _c3(agg.gated, structure * a) + _c1(agg.structure_proj, structure)
        expected = _c3(agg.out, _c3(agg.mixed, x) + _c1(agg.guide_proj, guide))
        assert torch.allclose(agg(guide, structure), expected, atol=1e-9)

        up = F.interpolate(
            structure, size=(2 * h, 2 * h), mode="bilinear",
            align_corners=False)
        expected = _c1(fuse.deep, up) + _c1(fuse.shallow, shallower)
        assert torch.allclose(fuse(structure, shallower), expected, atol=1e-9)


def test_add_concat_aggregation():
    x = torch.randn(1, 8, 4, 4)
    assert torch.equal(AddAggregation(8, 8)(x, x), 2 * x)
    assert AddAggregation(16, 8)(torch.randn(1, 16, 4, 4), x).shape == x.shape
    assert ConcatAggregation(16, 8)(torch.randn(1, 16, 4, 4), x).shape == x.shape


# ---------------------------------------------------------------------------
# UDUN
# ---------------------------------------------------------------------------

def test_forward(config, images):
    model = UDUN(config).eval()
    with torch.no_grad():
        out = model(*images, return_features=True)
    for logits in (out.mask_logits, out.trunk_logits, out.structure_logits):
        assert logits is not None
        assert logits.shape == (2, 1, 256, 256)
    assert out.features is not None
    assert out.features["T54"].shape == (2, 16, 32, 32)
    assert out.features["S65"].shape == (2, 8, 256, 256)
    assert out.features["F"].shape == (2, 8, 256, 256)


def test_deterministic(config, images):
    a, b = UDUN(config).eval(), UDUN(config).eval()
    for (ka, va), (kb, vb) in zip(
            a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    with torch.no_grad():
        assert torch.equal(a(*images).mask_logits, a(*images).mask_logits)
        assert torch.equal(a(*images).mask_logits, b(*images).mask_logits)


def test_init_seed(config):
    a = UDUN(config)
    b = UDUN(replace(config, init_seed=config.init_seed + 1))
    assert not torch.equal(
        a.union.head[1].weight, b.union.head[1].weight)


@pytest.mark.parametrize("kwargs", [
    {"use_dcm": False},
    {"use_hr0": False},
    {"use_filtering": False},
    {"aggregation": "add"},
    {"aggregation": "concat"},
    {"shared_backbone": False},
])
def test_ablations(config, images, kwargs):
    model = UDUN(replace(config, **kwargs)).eval()
    with torch.no_grad():
        out = model(*images)
    assert out.mask_logits.shape == (2, 1, 256, 256)
    assert out.trunk_logits is not None
    assert out.structure_logits is not None


def test_single_input(config, images):
    model = UDUN(replace(config, dual_input=False)).eval()
    with torch.no_grad():
        out = model(images[0])
    assert out.mask_logits.shape == (2, 1, 256, 256)
    with pytest.raises(ValueError):
        model(*images)
    with pytest.raises(ValueError):
        UDUN(config)(images[0])


@pytest.mark.parametrize("trunk, structure", [(False, True), (True, False)])
def test_decoder_ablation(config, images, trunk, structure):
    model = UDUN(replace(
        config, use_trunk_decoder=trunk, use_structure_decoder=structure))
    with torch.no_grad():
        out = model.eval()(*images)
    assert (out.trunk_logits is not None) == trunk
    assert (out.structure_logits is not None) == structure
    assert out.mask_logits.shape == (2, 1, 256, 256)


def test_invalid_config(config):
    with pytest.raises(ValueError):
        UDUN(replace(config, use_trunk_decoder=False,
                     use_structure_decoder=False))
    with pytest.raises(ValueError):
        UDUN(replace(config, lr_size=128))


def test_wrong_input_size(config, images):
    model = UDUN(config).eval()
    with pytest.raises(REJECTED):
        model(torch.zeros(1, 3, 128, 128), torch.zeros(1, 3, 32, 32))
    with pytest.raises(REJECTED):
        model(images[0], torch.zeros(2, 3, 32, 32))


def test_gradients(config, images):
    model = UDUN(config).train()
    out = model(*images)
    (out.mask_logits.mean() + out.trunk_logits.mean()
     + out.structure_logits.mean()).backward()
    for name, p in model.named_parameters():
        assert p.grad is not None, name


def _smooth(model: torch.nn.Module) -> torch.nn.Module:
    """Swap ReLU and max pooling for smooth counterparts, in place."""
    for parent in list(model.modules()):
        for name, child in list(parent.named_children()):
            if isinstance(child, torch.nn.ReLU):
                setattr(parent, name, torch.nn.Softplus())
            elif isinstance(child, torch.nn.MaxPool2d):
                setattr(parent, name, torch.nn.AvgPool2d(
                    child.kernel_size, child.stride, child.padding))
    return model


def test_loss_finite_differences():
    """Backpropagated loss gradients match central differences."""
    config = ModelConfig(
        backbone="tiny", hr_size=128, lr_size=32, trunk_channels=16,
        structure_channels=8, head_channels=8)
    model = _smooth(UDUN(config)).double().eval()
    torch.manual_seed(0)
    image_hr = torch.randn(1, 3, 128, 128, dtype=torch.float64)
    image_lr = F.interpolate(
        image_hr, size=(32, 32), mode="bilinear", align_corners=False)
    mask = np.zeros((128, 128), dtype=bool)
    mask[32:96, 40:100] = True
    labels = LabelTensors.from_triplets([decouple(mask, 2)])
    labels = LabelTensors(
        labels.mask.double(), labels.trunk.double(), labels.structure.double())

    def loss() -> torch.Tensor:
        out = model(image_hr, image_lr)
        report = total_loss(
            out.mask_logits, out.trunk_logits, out.structure_logits, labels)
        return report.total

    loss().backward()
    params = list(model.parameters())
    sizes = torch.tensor([p.numel() for p in params])
    starts = torch.cumsum(sizes, 0) - sizes
    picks = torch.randperm(
        int(sizes.sum()), generator=torch.Generator().manual_seed(0))[:50]

    eps = 1e-3
    for flat in picks.tolist():
        i = int(torch.searchsorted(starts, flat, right=True)) - 1
        k = flat - int(starts[i])
        weight = params[i].data.view(-1)
        original = float(weight[k])
        with torch.no_grad():
            weight[k] = original + eps
            up = float(loss())
            weight[k] = original - eps
            down = float(loss())
            weight[k] = original
        grad = float(params[i].grad.view(-1)[k])
        assert grad == pytest.approx(
            (up - down) / (2 * eps), rel=1e-3, abs=1e-6), (i, k)


def test_parameter_groups(config):
    model = UDUN(config)
    backbone = {id(p) for p in model.backbone_parameters()}
    head = {id(p) for p in model.head_parameters()}
    assert not backbone & head
    assert backbone | head == {id(p) for p in model.parameters()}


def test_shared_backbone(config):
    shared = UDUN(config)
    assert shared.encoder.backbone_lr is None
    twin = UDUN(replace(config, shared_backbone=False))
    assert twin.encoder.backbone_lr is not twin.encoder.backbone
    single = sum(p.numel() for p in shared.encoder.backbone.parameters())
    assert count_params(replace(config, shared_backbone=False)) == (
        count_params(config) + single)


# ---------------------------------------------------------------------------
# Model size
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("backbone, shared, expected", [
    ("18", True, 12.33e6),
    ("34", True, 22.45e6),
    ("50", True, 25.05e6),
    ("50", False, 48.65e6),
])
def test_param_count(backbone, shared, expected):
    config = ModelConfig(backbone=backbone, shared_backbone=shared)
    assert count_params(config) == pytest.approx(expected, rel=0.05)


def test_param_breakdown(config):
    parts = param_breakdown(config)
    assert set(parts) == {"backbone", "reduction", "trunk", "structure", "union"}
    assert sum(parts.values()) == count_params(config)
    assert sum(p.numel() for p in UDUN(config).parameters()) == (
        count_params(config))


FLOPS = [
    # dual_input, hr_size, lr_size, double, reference, tolerance
    (True, 1024, 256, False, 142.3, 0.10),
    (False, 1024, 256, False, 131.9, 0.10),
    # the small-input-only figure is quoted in 2 × MACs
    (False, 256, 64, True, 16.4, 0.15),
]


@pytest.mark.parametrize(
    "dual_input, hr_size, lr_size, double, reference, tolerance", FLOPS)
def test_flops(dual_input, hr_size, lr_size, double, reference, tolerance):
    config = ModelConfig(dual_input=dual_input)
    flops = count_flops(config, hr_size=hr_size, lr_size=lr_size, double=double)
    assert flops == pytest.approx(reference, rel=tolerance)


def test_flops_double(config):
    assert count_flops(config, double=True) == pytest.approx(
        2 * count_flops(config))
    assert count_flops(config, hr_size=512, lr_size=128) > count_flops(config)
