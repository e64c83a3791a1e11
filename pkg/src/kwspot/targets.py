"""Training targets: proposal-to-line matching and 28x28 mask labels."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .datamodel import KeywordAnno, KeywordVocab
from .errors import VocabError
from .geometry import GridSpec, QuadPolygon, box_iou, rasterize, shrink_polygon

MASK_SIZE = 28
KEYWORD_SHRINK = 0.8
MATCH_IOU = 0.5


@dataclass
class LineMaskTarget:
    M: np.ndarray  # (28, 28) bool


@dataclass
class KeywordMaskTarget:
    Y: np.ndarray  # (28, 28) int64 in 0..K
    valid: bool = True


def assign_proposals(proposals, gt_boxes, threshold: float = MATCH_IOU):
    """Match each proposal to a line index, or -1 for background.

    Returns ``(matches, ious)`` where ``ious`` is the IoU with the chosen line.
    ``np.argmax`` returns the first maximum, so ties go to the lower line index.
    """
    proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if len(gt_boxes) == 0 or len(proposals) == 0:
        return np.full(len(proposals), -1, dtype=np.int64), np.zeros(len(proposals))
    iou = box_iou(proposals, gt_boxes)
    best = iou.argmax(axis=1)
    best_iou = iou[np.arange(len(proposals)), best]
    matches = np.where(best_iou >= threshold, best, -1).astype(np.int64)
    return matches, best_iou


def proposal_grid(proposal, size: int = MASK_SIZE) -> GridSpec:
    return GridSpec.for_box(proposal, size)


def make_line_target(proposal, line_poly: QuadPolygon, size: int = MASK_SIZE) -> LineMaskTarget:
    """Rasterize the line quad in the proposal's frame (the box maps onto the full grid)."""
    return LineMaskTarget(rasterize(line_poly, proposal_grid(proposal, size)).grid)


def make_keyword_target(proposal, keywords: Sequence[KeywordAnno], shrink: float = KEYWORD_SHRINK,
                        size: int = MASK_SIZE, vocab: Optional[KeywordVocab] = None,
                        num_keywords: Optional[int] = None) -> KeywordMaskTarget:
    """(K+1)-way label map from shrunk keyword quads; smaller keywords win overlaps."""
    k_max = vocab.K if vocab is not None else num_keywords
    grid = proposal_grid(proposal, size)
    Y = np.zeros((size, size), dtype=np.int64)
    for kw in keywords:
        if kw.class_id < 1 or (k_max is not None and kw.class_id > k_max):
            raise VocabError(f"keyword class id {kw.class_id} outside 1..{k_max}")
    # paint largest first so that smaller ones overwrite
    order = sorted(range(len(keywords)), key=lambda i: (-abs(keywords[i].poly.area), i))
    for i in order:
        kw = keywords[i]
        cells = rasterize(shrink_polygon(kw.poly, shrink), grid).grid
        Y[cells] = kw.class_id
    return KeywordMaskTarget(Y, True)
