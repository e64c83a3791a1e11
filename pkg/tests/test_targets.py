import math

import numpy as np
import pytest
from scipy.ndimage import binary_dilation

from kwspot.datamodel import KeywordAnno, make_vocab
from kwspot.errors import VocabError
from kwspot.geometry import GridSpec, QuadPolygon, RotatedRect, rasterize, shrink_polygon
from kwspot.targets import assign_proposals, make_keyword_target, make_line_target
from oracles import raster_oracle, winding_number_inside


def _rect_quad(x1, y1, x2, y2):
    return QuadPolygon([[x1, y1], [x2, y1], [x2, y2], [x1, y2]])


def _iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def test_assign_identity_and_disjoint():
    gt = np.array([[10, 10, 50, 30], [60, 60, 90, 80]], dtype=float)
    props = np.array([[10, 10, 50, 30], [200, 200, 220, 210]], dtype=float)
    matches, ious = assign_proposals(props, gt)
    assert matches[0] == 0 and ious[0] == pytest.approx(1.0)
    assert matches[1] == -1


def test_assign_matches_exhaustive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        gt = []
        for _ in range(3):
            x, y = rng.uniform(0, 80, 2)
            gt.append([x, y, x + rng.uniform(10, 40), y + rng.uniform(5, 20)])
        gt = np.array(gt)
        props = []
        for _ in range(10):
            g = gt[rng.integers(3)]
            props.append(g + rng.normal(0, 4, 4) * [1, 1, 1, 1])
        props = np.array(props)
        props[:, 2:] = np.maximum(props[:, 2:], props[:, :2] + 1)
        matches, _ = assign_proposals(props, gt)
        for p, m in zip(props, matches):
            vals = [_iou(p, g) for g in gt]
            best = max(range(3), key=lambda k: (vals[k], -k))
            expect = best if vals[best] >= 0.5 else -1
            assert m == expect


def test_assign_tie_goes_to_lower_index():
    gt = np.array([[0, 0, 10, 10], [0, 0, 10, 10]], dtype=float)
    matches, _ = assign_proposals(np.array([[0, 0, 10, 10]], dtype=float), gt)
    assert matches[0] == 0


def test_line_target_full_and_outside():
    quad = _rect_quad(20, 40, 120, 60)
    M = make_line_target((20, 40, 120, 60), quad).M
    assert M.shape == (28, 28) and M.dtype == bool
    assert M.mean() >= 0.9
    assert not make_line_target((200, 200, 240, 230), quad).M.any()


def test_line_target_45_degrees_matches_oracle():
    quad = RotatedRect(60, 60, 80, 20, math.pi / 4).to_quad()
    box = (25.0, 25.0, 95.0, 95.0)
    M = make_line_target(box, quad).M
    grid = GridSpec.for_box(box, 28)
    ref = raster_oracle(grid.to_grid(quad.vertices), 28, 28)
    assert np.array_equal(M, ref)


def test_keyword_target_empty_and_bbox():
    box = (0.0, 0.0, 28.0, 28.0)
    assert not make_keyword_target(box, [], num_keywords=5).Y.any()
    kw = KeywordAnno(_rect_quad(0, 0, 28, 28), 3, 0)
    Y = make_keyword_target(box, [kw], num_keywords=5).Y
    assert set(np.unique(Y)) == {0, 3}
    assert (Y == 3).sum() / Y.size == pytest.approx(0.64, abs=0.05)
    ring = np.ones_like(Y, dtype=bool)
    ring[2:-2, 2:-2] = False
    assert not Y[ring].any()


def test_keyword_target_bad_class():
    kw = KeywordAnno(_rect_quad(0, 0, 10, 10), 7, 0)
    with pytest.raises(VocabError):
        make_keyword_target((0, 0, 10, 10), [kw], vocab=make_vocab(3, 0))
    with pytest.raises(VocabError):
        make_keyword_target((0, 0, 10, 10), [KeywordAnno(_rect_quad(0, 0, 10, 10), 0, 0)], num_keywords=3)


def _cell_oracle(box, keywords, shrink=0.8):
    grid = GridSpec.for_box(box, 28)
    Y = np.zeros((28, 28), dtype=np.int64)
    for i in range(28):
        for j in range(28):
            p = grid.to_image([j + 0.5, i + 0.5])
            hits = [kw for kw in keywords if winding_number_inside(p, shrink_polygon(kw.poly, shrink).vertices)]
            if hits:
                Y[i, j] = min(hits, key=lambda kw: abs(kw.poly.area)).class_id
    return Y


def test_keyword_target_adjacent_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x0 = rng.uniform(0, 10)
        w1, w2 = rng.uniform(20, 50, 2)
        kws = [KeywordAnno(_rect_quad(x0, 10, x0 + w1, 30), 1, 0),
               KeywordAnno(_rect_quad(x0 + w1 - rng.uniform(0, 8), 12, x0 + w1 + w2, 28), 2, 0)]
        box = (0.0, 5.0, x0 + w1 + w2 + 5, 35.0)
        Y = make_keyword_target(box, kws, num_keywords=2).Y
        assert np.array_equal(Y, _cell_oracle(box, kws))


def test_shrunk_count_ratio_and_containment():
    rng = np.random.default_rng(2)
    for _ in range(30):
        line = RotatedRect(50, 50, rng.uniform(60, 90), rng.uniform(12, 20), rng.uniform(-0.5, 0.5))
        c, s = math.cos(line.theta), math.sin(line.theta)
        off = rng.uniform(-0.2, 0.2) * line.w
        kw_rect = RotatedRect(50 + off * c, 50 + off * s, line.w * 0.3, line.h, line.theta)
        kw = KeywordAnno(kw_rect.to_quad(), 1, 0)
        box = line.to_quad().bbox()
        grid = GridSpec.for_box(box, 28)
        Y = make_keyword_target(box, [kw], num_keywords=1).Y
        full = rasterize(kw.poly, grid).grid.sum()
        assert 0.5 <= (Y == 1).sum() / full <= 0.8
        # nothing outside the line quad dilated by one cell
        line_mask = rasterize(line.to_quad(), grid).grid
        dil = binary_dilation(line_mask, structure=np.ones((3, 3), bool))
        assert not (Y.astype(bool) & ~dil).any()


def test_targets_pure():
    kw = KeywordAnno(_rect_quad(3, 4, 20, 12), 2, 0)
    a = make_keyword_target((0, 0, 30, 16), [kw], num_keywords=2).Y
    b = make_keyword_target((0, 0, 30, 16), [kw], num_keywords=2).Y
    assert np.array_equal(a, b)
