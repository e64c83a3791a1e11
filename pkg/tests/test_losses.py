import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from kwspot.errors import ShapeError
from kwspot.losses import (CSV_HEADER, LossReport, TERMS, detector_losses, keyword_mask_loss, line_mask_loss,
                           semi_gate, smooth_l1)
from oracles import directional_grad_error, naive_mask_ce


def test_uniform_logits():
    X = torch.zeros(6, 28, 28, dtype=torch.float64)
    Y = torch.randint(0, 6, (28, 28))
    assert abs(float(keyword_mask_loss(X, Y)) - math.log(6)) < 1e-9
    assert abs(float(line_mask_loss(torch.zeros(2, 28, 28, dtype=torch.float64), Y % 2)) - math.log(2)) < 1e-9


def test_saturated_correct():
    Y = torch.randint(0, 6, (28, 28))
    X = torch.zeros(6, 28, 28, dtype=torch.float64).scatter(0, Y[None], 30.0)
    assert float(keyword_mask_loss(X, Y)) < 1e-9
    M = torch.randint(0, 2, (28, 28))
    L = torch.zeros(2, 28, 28, dtype=torch.float64).scatter(0, M[None], 30.0)
    assert float(line_mask_loss(L, M)) < 1e-9


def test_keyword_loss_matches_naive_loop():
    rng = np.random.default_rng(0)
    for _ in range(100):
        X = rng.normal(0, 3, (6, 28, 28))
        Y = rng.integers(0, 6, (28, 28))
        got = float(keyword_mask_loss(torch.from_numpy(X), torch.from_numpy(Y)))
        assert abs(got - naive_mask_ce(X, Y)) < 1e-6


def test_line_loss_matches_naive_loop():
    rng = np.random.default_rng(1)
    for _ in range(10):
        X = rng.normal(0, 3, (2, 28, 28))
        M = rng.integers(0, 2, (28, 28))
        assert abs(float(line_mask_loss(torch.from_numpy(X), torch.from_numpy(M))) - naive_mask_ce(X, M)) < 1e-6


def test_batch_mean_over_valid():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(3, 4, 28, 28))
    Y = rng.integers(0, 4, (3, 28, 28))
    per = [naive_mask_ce(X[i], Y[i]) for i in range(3)]
    got = float(keyword_mask_loss(torch.from_numpy(X), torch.from_numpy(Y), valid=[True, False, True]))
    assert got == pytest.approx((per[0] + per[2]) / 2, abs=1e-9)


def test_shape_errors():
    with pytest.raises(ShapeError):
        keyword_mask_loss(torch.zeros(6, 28, 28), torch.zeros(14, 14, dtype=torch.long))
    with pytest.raises(ShapeError):
        keyword_mask_loss(torch.zeros(6, 28, 28), torch.full((28, 28), 6))
    with pytest.raises(ShapeError):
        line_mask_loss(torch.zeros(3, 28, 28), torch.zeros(28, 28, dtype=torch.long))


def test_nonnegative_and_permutation_symmetry():
    g = torch.Generator().manual_seed(3)
    X = torch.randn(6, 28, 28, generator=g, dtype=torch.float64)
    Y = torch.randint(0, 6, (28, 28), generator=g)
    base = float(keyword_mask_loss(X, Y))
    assert base >= 0
    perm = torch.randperm(784, generator=g)
    Xp = X.reshape(6, -1)[:, perm].reshape(6, 28, 28)
    Yp = Y.reshape(-1)[perm].reshape(28, 28)
    assert float(keyword_mask_loss(Xp, Yp)) == pytest.approx(base, abs=1e-12)


def test_semi_gate():
    assert semi_gate("synthetic", 0.73) == 0.73
    assert semi_gate("real", 0.73) == 0
    assert semi_gate("synthetic", 0.0) == 0
    x = torch.ones(3, requires_grad=True)
    gated = semi_gate("real", (x * 2).sum())
    assert float(gated) == 0 and not gated.requires_grad
    with pytest.raises(ValueError):
        semi_gate("unknown", 1.0)


def _empty(n=0):
    return torch.zeros(n, 4, dtype=torch.float64)


def test_detector_losses_perfect_and_no_positives():
    labels = torch.tensor([1, 0, 1, 0])
    logits = (labels.double() * 2 - 1) * 40
    deltas = torch.randn(2, 4, dtype=torch.float64)
    cls_logits = torch.stack([-(labels.double() * 2 - 1) * 40, (labels.double() * 2 - 1) * 40], 1)
    out = detector_losses(logits, labels, deltas, deltas.clone(), cls_logits, labels, deltas, deltas.clone())
    assert all(float(v) < 1e-6 for v in out.values())
    out = detector_losses(logits, labels, _empty(), _empty(), cls_logits, labels, _empty(), _empty())
    assert float(out["rpn_box"]) == 0 and float(out["box_reg"]) == 0


def _scalar_reference(rpn_logits, rpn_labels, rpn_d, rpn_t, cls_logits, cls_labels, box_d, box_t):
    def bce(z, y):
        p = 1 / (1 + math.exp(-z))
        return -(y * math.log(p) + (1 - y) * math.log(1 - p))

    def sl1(d):
        d = abs(d)
        return 0.5 * d * d * 9 if d < 1 / 9 else d - 0.5 / 9

    def ce(row, y):
        m = max(row)
        return -(row[y] - m - math.log(sum(math.exp(v - m) for v in row)))

    return {
        "rpn_obj": sum(bce(z, y) for z, y in zip(rpn_logits, rpn_labels)) / len(rpn_logits),
        "rpn_box": sum(sl1(a - b) for ra, rb in zip(rpn_d, rpn_t) for a, b in zip(ra, rb)) / len(rpn_d),
        "box_cls": sum(ce(r, y) for r, y in zip(cls_logits, cls_labels)) / len(cls_logits),
        "box_reg": sum(sl1(a - b) for ra, rb in zip(box_d, box_t) for a, b in zip(ra, rb)) / len(box_d),
    }


def test_detector_losses_match_scalar_reference():
    rng = np.random.default_rng(4)
    for _ in range(10):
        args = [rng.normal(size=8), rng.integers(0, 2, 8), rng.normal(0, 0.2, (3, 4)), rng.normal(0, 0.2, (3, 4)),
                rng.normal(size=(6, 2)), rng.integers(0, 2, 6), rng.normal(0, 0.2, (2, 4)), rng.normal(0, 0.2, (2, 4))]
        got = detector_losses(*[torch.from_numpy(np.asarray(a)) for a in args])
        ref = _scalar_reference(*[a.tolist() for a in args])
        for k in ref:
            assert abs(float(got[k]) - ref[k]) < 1e-6


def test_smooth_l1_continuity():
    d = torch.tensor([1 / 9 - 1e-12, 1 / 9 + 1e-12], dtype=torch.float64)
    v = smooth_l1(d, torch.zeros(2, dtype=torch.float64))
    assert abs(float(v[0] - v[1])) < 1e-9


def test_all_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    g = torch.Generator().manual_seed(5)

    def t(*shape, scale=1.0):
        return (torch.randn(*shape, generator=g, dtype=torch.float64) * scale).requires_grad_(True)

    X, L = t(2, 6, 28, 28), t(2, 2, 28, 28)
    Y = torch.randint(0, 6, (2, 28, 28), generator=g)
    M = torch.randint(0, 2, (2, 28, 28), generator=g)
    assert directional_grad_error(lambda: keyword_mask_loss(X, Y), [X], rng) < 1e-4
    assert directional_grad_error(lambda: line_mask_loss(L, M), [L], rng) < 1e-4
    z, d1, c, d2 = t(8), t(2, 4, scale=0.5), t(2, 2), t(2, 4, scale=0.5)
    tgt1, tgt2 = torch.randn(2, 4, generator=g, dtype=torch.float64), torch.randn(2, 4, generator=g, dtype=torch.float64)
    lab, clab = torch.randint(0, 2, (8,), generator=g), torch.tensor([0, 1])
    for term in ("rpn_obj", "rpn_box", "box_cls", "box_reg"):
        fn = lambda: detector_losses(z, lab, d1, tgt1, c, clab, d2, tgt2)[term]
        assert directional_grad_error(fn, [z, d1, c, d2], rng) < 1e-4, term


def test_loss_report_total_and_row():
    terms = {k: torch.tensor(0.1 * (i + 1), dtype=torch.float64) for i, k in enumerate(TERMS)}
    r = LossReport.from_terms(terms, {"rois": 3})
    assert r.total == pytest.approx(2.1, abs=1e-12) and r.finite()
    row = r.row(7, 0.01)
    assert len(row) == len(CSV_HEADER) and row[0] == 7
    bad = LossReport.from_terms({**terms, "box_reg": torch.tensor(float("nan"))})
    assert not bad.finite()


def test_keyword_loss_matches_torch_cross_entropy():
    X = torch.randn(4, 6, 28, 28, dtype=torch.float64)
    Y = torch.randint(0, 6, (4, 28, 28))
    assert float(keyword_mask_loss(X, Y)) == pytest.approx(float(F.cross_entropy(X, Y)), abs=1e-12)
