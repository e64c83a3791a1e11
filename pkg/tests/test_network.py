import math

import numpy as np
import pytest
import torch
from torchvision.ops import roi_align as tv_roi_align

from kwspot.errors import ConfigError, DegenerateBox
from kwspot.network import AnchorConfig, KeywordSpotter, ModelConfig, load_checkpoint, save_checkpoint
from kwspot.network import anchors as A
from kwspot.network.heads import BoxHead, MaskTower, tower_parameter_count
from kwspot.network.roi_align import roi_align

from oracles import directional_grad_error


@pytest.fixture(scope="module")
def model():
    return KeywordSpotter(ModelConfig(num_keywords=5)).eval()


def test_anchor_config_validation():
    with pytest.raises(ConfigError):
        AnchorConfig(ratios=(1, 2))
    with pytest.raises(ConfigError):
        AnchorConfig(scales=(16, 32))


def test_level_with_4x4_map_has_112_anchors():
    cfg = AnchorConfig()
    levels = A.generate_anchors(cfg, [(4, 4)] * 5, torch.float64)
    assert levels[0].shape == (112, 4)


def test_anchor_areas_and_ratios():
    cfg = AnchorConfig()
    dims = [(8, 8), (4, 4), (2, 2), (1, 1), (1, 1)]
    for lvl, (a, scale, stride, (h, w)) in enumerate(zip(A.generate_anchors(cfg, dims, torch.float64),
                                                           cfg.scales, cfg.strides, dims)):
        aw, ah = a[:, 2] - a[:, 0], a[:, 3] - a[:, 1]
        assert torch.allclose(aw * ah / scale ** 2, torch.ones_like(aw), rtol=1e-6, atol=0)
        ratios = torch.tensor(cfg.ratios, dtype=torch.float64).repeat(h * w)
        assert torch.allclose(aw / ah, ratios, rtol=1e-6, atol=0)
        centers = ((a[:, :2] + a[:, 2:]) / 2).reshape(h, w, 7, 2)
        assert torch.allclose(centers[1 if h > 1 else 0, 0, 0],
                              torch.tensor([0.5 * stride, (1.5 if h > 1 else 0.5) * stride], dtype=torch.float64))


def test_ratio_one_scale_32():
    a = A.cell_anchors((1.0,), 32)
    assert torch.allclose(a[0, 2:] - a[0, :2], torch.tensor([32.0, 32.0], dtype=torch.float64))


def test_delta_coding():
    ref = torch.tensor([[10.0, 20.0, 50.0, 40.0]], dtype=torch.float64)
    assert torch.allclose(A.decode(ref, torch.zeros(1, 4, dtype=torch.float64)), ref)
    out = A.decode(ref, torch.tensor([[0, 0, math.log(2), math.log(2)]], dtype=torch.float64))
    assert torch.allclose(out[0, 2:] - out[0, :2], 2 * (ref[0, 2:] - ref[0, :2]))
    boxes = torch.tensor([[12.0, 18.0, 60.0, 45.0]], dtype=torch.float64)
    assert torch.allclose(A.decode(ref, A.encode(ref, boxes)), boxes)


def test_proposal_nms_matches_reference():
    from oracles import reference_nms

    boxes = torch.tensor([[0, 0, 10, 10], [1, 1, 11, 11], [20, 20, 30, 30], [0, 0, 9, 10], [21, 19, 30, 31]],
                         dtype=torch.float32)
    scores = torch.tensor([0.9, 0.8, 0.7, 0.95, 0.6])
    iou = A.box_iou(boxes, boxes).numpy()
    ref = reference_nms(scores.numpy(), lambda i, j: iou[i, j], 0.7)
    assert A.nms(boxes, scores, 0.7).tolist() == list(ref)


@pytest.mark.parametrize("size", [(256, 256), (192, 320), (100, 130)])
def test_pyramid_shapes(model, size):
    feats = model.features(torch.rand(1, 3, *size))
    ph, pw = (math.ceil(s / 64) * 64 for s in size)
    assert [tuple(f.shape[-2:]) for f in feats] == [(ph // s, pw // s) for s in (4, 8, 16, 32, 64)]
    assert all(f.shape[1] == 64 for f in feats)


def test_256_gives_64_to_4(model):
    feats = model.features(torch.rand(1, 3, 256, 256))
    assert [f.shape[-1] for f in feats] == [64, 32, 16, 8, 4]


def test_doubling_input_doubles_levels(model):
    rng = np.random.default_rng(0)
    for _ in range(10):
        h, w = (int(v) * 64 for v in rng.integers(1, 4, 2))
        f1 = model.features(torch.rand(1, 3, h, w))
        f2 = model.features(torch.rand(1, 3, 2 * h, 2 * w))
        for a, b in zip(f1, f2):
            assert b.shape[-2] == 2 * a.shape[-2] and b.shape[-1] == 2 * a.shape[-1]


def test_zero_input_finite(model):
    with torch.no_grad():
        feats = model.features(torch.zeros(1, 3, 128, 128))
        logits, deltas = model.rpn(feats)
    assert all(torch.isfinite(f).all() for f in feats)
    assert all(torch.isfinite(t).all() for t in logits + deltas)


def test_roi_align_constant_map():
    feats = torch.full((1, 3, 8, 8), 2.5, dtype=torch.float64)
    rois = torch.tensor([[0, 3.3, 4.1, 20.7, 17.9], [0, 0.5, 0.5, 31.0, 30.0]], dtype=torch.float64)
    out = roi_align(feats, rois, 7, 0.25)
    assert out.shape == (2, 3, 7, 7) and torch.allclose(out, torch.full_like(out, 2.5))


def test_roi_align_single_cell():
    feats = torch.tensor([[[[3.75]]]], dtype=torch.float64)
    out = roi_align(feats, torch.tensor([[0, 0.0, 0.0, 4.0, 4.0]], dtype=torch.float64), 7, 0.25)
    assert torch.allclose(out, torch.full_like(out, 3.75))


def test_roi_align_matches_torchvision():
    g = torch.Generator().manual_seed(0)
    feats = torch.rand(2, 4, 16, 20, generator=g, dtype=torch.float64)
    rois = torch.tensor([[0, 3.2, 5.5, 40.1, 30.7], [1, 0.0, 0.0, 79.0, 63.0], [1, 50.5, 10.0, 52.0, 70.0],
                         [0, -3.0, -2.0, 10.0, 8.0]], dtype=torch.float64)
    ours = roi_align(feats, rois, 7, 0.25, 2)
    ref = tv_roi_align(feats, rois, 7, 0.25, 2, aligned=True)
    assert torch.allclose(ours, ref, atol=1e-12)


def test_roi_align_degenerate():
    with pytest.raises(DegenerateBox):
        roi_align(torch.rand(1, 1, 4, 4), torch.tensor([[0, 1.0, 1.0, 1.0000001, 3.0]]), 7, 1.0)


def test_roi_align_gradient():
    rng = np.random.default_rng(1)
    feats = torch.from_numpy(rng.standard_normal((1, 2, 6, 7))).requires_grad_()
    rois = torch.tensor([[0, 2.3, 1.7, 19.1, 21.0], [0, 0.4, 5.0, 8.0, 11.9]], dtype=torch.float64)
    w = torch.from_numpy(rng.standard_normal((2, 2, 7, 7)))
    err = directional_grad_error(lambda: (roi_align(feats, rois, 7, 0.25) * w).sum(), [feats], rng, 5)
    assert err < 1e-4
    assert torch.autograd.gradcheck(lambda f: roi_align(f, rois, 3, 0.25), (feats,), eps=1e-6, atol=1e-8)


def test_box_head_shapes_and_uniform():
    head = BoxHead(64)
    cls, reg = head(torch.rand(5, 64, 7, 7))
    assert cls.shape == (5, 2) and reg.shape == (5, 4)
    for p in head.parameters():
        torch.nn.init.zeros_(p)
    cls, _ = head(torch.rand(3, 64, 7, 7))
    assert torch.allclose(torch.softmax(cls, 1), torch.full((3, 2), 0.5))


def test_box_head_gradient():
    torch.manual_seed(0)
    head = BoxHead(8, 16).double()
    x = torch.randn(3, 8, 7, 7, dtype=torch.float64, requires_grad=True)
    rng = np.random.default_rng(2)
    w1, w2 = torch.randn(3, 2, dtype=torch.float64), torch.randn(3, 4, dtype=torch.float64)

    def loss():
        c, r = head(x)
        return (c * w1).sum() + (r * w2).sum()

    assert directional_grad_error(loss, [x] + list(head.parameters()), rng, 5) < 1e-4


def test_mask_head_shapes(model):
    patches = torch.rand(4, 64, 14, 14)
    out = model.mask_heads(patches)
    assert out.keyword_logits.shape == (4, 6, 28, 28)
    assert out.line_logits.shape == (4, 2, 28, 28)
    again = model.mask_heads(patches.clone())
    assert torch.equal(out.keyword_logits, again.keyword_logits) and torch.equal(out.line_logits, again.line_logits)


def test_towers_share_no_weights(model):
    a = {id(p) for p in model.line_head.parameters()}
    b = {id(p) for p in model.keyword_head.parameters()}
    assert not a & b


@pytest.mark.parametrize("maps", [2, 6])
def test_mask_tower_gradient(maps):
    torch.manual_seed(1)
    tower = MaskTower(8, maps, width=8).double()
    with torch.no_grad():  # zero-init biases put exact zeros on ReLU kinks; check at a generic point
        for p in tower.parameters():
            p.add_(0.05 * torch.randn_like(p))
    x = torch.randn(2, 8, 14, 14, dtype=torch.float64, requires_grad=True)
    w = torch.randn(2, maps, 28, 28, dtype=torch.float64)
    rng = np.random.default_rng(3)
    assert directional_grad_error(lambda: (tower(x) * w).sum(), [x] + list(tower.parameters()), rng, 4, eps=1e-8) < 1e-4


def test_parameter_count_formula():
    for k in (1, 5, 30):
        m = KeywordSpotter(ModelConfig(num_keywords=k))
        n = sum(p.numel() for p in m.keyword_head.parameters())
        assert n == tower_parameter_count(64, k + 1, 64)
    assert tower_parameter_count(64, 7) - tower_parameter_count(64, 6) == 64 + 1


def test_eval_determinism_and_finiteness(model):
    x = torch.rand(1, 3, 128, 128, generator=torch.Generator().manual_seed(5))
    d1 = model.detect(x)[0]
    d2 = model.detect(x)[0]
    assert torch.equal(d1.proposals, d2.proposals) and torch.equal(d1.boxes, d2.boxes)
    assert torch.equal(d1.masks.keyword_logits, d2.masks.keyword_logits)
    assert torch.isfinite(d1.masks.keyword_logits).all() and torch.isfinite(d1.masks.line_logits).all()
    with torch.no_grad():
        logits, _ = model.rpn(model.features(x))
    props = model.propose(logits, _, model.anchors_for(model.features(x)), (128, 128), training=False)[0]
    assert len(props.boxes) <= 300
    b = props.boxes
    assert (b[:, 2] > b[:, 0]).all() and (b[:, 3] > b[:, 1]).all()
    assert b.min() >= 0 and b[:, 2].max() <= 128 and b[:, 3].max() <= 128
    assert ((props.objectness >= 0) & (props.objectness <= 1)).all()


def test_checkpoint_round_trip(tmp_path, model):
    opt = torch.optim.SGD(model.parameters(), lr=0.1, momentum=0.9)
    for p in model.parameters():
        opt.state[p]["momentum_buffer"] = torch.randn_like(p)
    path = save_checkpoint(tmp_path / "m.ckpt", model, opt, step=7, extra={"note": "x"})
    m2, meta = load_checkpoint(path)
    assert meta["step"] == 7 and meta["note"] == "x"
    for (n, a), (_, b) in zip(model.state_dict().items(), m2.state_dict().items()):
        assert torch.equal(a, b), n
    opt2 = torch.optim.SGD(m2.parameters(), lr=0.1, momentum=0.9)
    load_checkpoint(path, m2, opt2)
    for p, q in zip(model.parameters(), m2.parameters()):
        assert torch.equal(opt.state[p]["momentum_buffer"], opt2.state[q]["momentum_buffer"])
    again = save_checkpoint(tmp_path / "m2.ckpt", m2, opt2, step=7, extra={"note": "x"})
    assert path.read_bytes() == again.read_bytes()
