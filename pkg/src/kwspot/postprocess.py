"""Turn eval-mode network outputs into rotated line and keyword detections."""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import torch

from . import kernels
from .errors import SchemaError
from .geometry import BinaryMask, GridSpec, RotatedRect, min_area_rotated_rect
from .network import anchors as A

LINE_THRESHOLD = 0.5
MIN_COMPONENT_CELLS = 4
KEYWORD_INFLATE = 1.0 / 0.8
KEYWORD_NMS_IOU = 0.5


@dataclass
class LineDetection:
    image_id: str
    confidence: float
    rect: RotatedRect
    box: tuple = ()  # refined axis-aligned box the mask was decoded in


@dataclass
class KeywordDetection:
    image_id: str
    class_id: int
    confidence: float
    rect: RotatedRect
    parent: Optional[RotatedRect] = None

    def to_record(self) -> dict:
        return {"image": self.image_id, "class_id": int(self.class_id), "confidence": float(self.confidence),
                "rect": [float(v) for v in self.rect.astuple()]}


def _np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().double().numpy()
    return np.asarray(x, dtype=np.float64)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def refine_box(proposal, deltas, image_size=None) -> np.ndarray:
    b = A.decode(torch.as_tensor(_np(proposal)).reshape(1, 4), torch.as_tensor(_np(deltas)).reshape(1, 4))
    if image_size is not None:
        b = A.clip_boxes(b, image_size[0], image_size[1])
    return b[0].numpy()


def decode_line(proposal, deltas, line_logits, score: float = 1.0, image_id: str = "",
                image_size=None) -> Optional[LineDetection]:
    """Rotated line rect from the largest foreground component, or None if the mask is empty.

    ``deltas`` is the box-head refinement (None when ``proposal`` is already refined).
    """
    box = _np(proposal) if deltas is None else refine_box(proposal, deltas, image_size)
    if box[2] - box[0] <= 0 or box[3] - box[1] <= 0:
        return None
    probs = _softmax(_np(line_logits))
    fg = probs[1] > LINE_THRESHOLD
    if not fg.any():
        return None
    labels, n = kernels.label_components(fg)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    keep = labels == (int(np.argmax(sizes)) + 1)
    grid = GridSpec.for_box(box, fg.shape[0])
    rect = min_area_rotated_rect(BinaryMask(keep, grid.origin, grid.cell), cover_cells=True)
    return LineDetection(image_id, float(score), rect, tuple(float(v) for v in box))


def keyword_components(keyword_logits):
    """Per-class 8-connected components of the argmax map.

    Yields ``(class_id, cell_mask, mean_probability)`` for components with at
    least ``MIN_COMPONENT_CELLS`` cells, in class then label order.
    """
    probs = _softmax(_np(keyword_logits))
    arg = probs.argmax(axis=0)
    for k in range(1, probs.shape[0]):
        sel = arg == k
        if not sel.any():
            continue
        labels, n = kernels.label_components(sel)
        for c in range(1, n + 1):
            cells = labels == c
            if cells.sum() < MIN_COMPONENT_CELLS:
                continue
            yield k, cells, float(probs[k][cells].mean())


def decode_keywords(box, keyword_logits, line: Optional[LineDetection] = None,
                    image_id: str = "") -> list[KeywordDetection]:
    box = _np(box)
    grid = GridSpec.for_box(box, int(_np(keyword_logits).shape[-1]))
    out = []
    for k, cells, conf in keyword_components(keyword_logits):
        rect = min_area_rotated_rect(BinaryMask(cells, grid.origin, grid.cell), cover_cells=True)
        out.append(KeywordDetection(line.image_id if line else image_id, k, conf, rect.scaled(KEYWORD_INFLATE),
                                    line.rect if line else None))
    return out


def cross_proposal_nms(dets: Sequence[KeywordDetection], iou: float = KEYWORD_NMS_IOU) -> list[KeywordDetection]:
    """Per-class greedy rotated NMS; output ordered by class, then confidence."""
    out = []
    for k in sorted({d.class_id for d in dets}):
        group = [d for d in dets if d.class_id == k]
        corners = np.stack([d.rect.corners() for d in group])
        scores = np.array([d.confidence for d in group], dtype=np.float64)
        keep = kernels.rotated_nms(corners, scores, iou)
        out.extend(group[i] for i in keep)
    return out


@torch.no_grad()
def spot(model, images: torch.Tensor, image_ids: Sequence[str]):
    """Full eval path for a batch: returns per image (line detections, keyword detections)."""
    model.eval()
    h, w = images.shape[-2:]
    results = []
    for img_id, det in zip(image_ids, model.detect(images)):
        lines, kws = [], []
        for j in range(len(det.boxes)):
            line = decode_line(det.boxes[j], None, det.masks.line_logits[j], float(det.scores[j]), img_id)
            if line is None:
                continue
            lines.append(line)
            kws.extend(decode_keywords(det.boxes[j], det.masks.keyword_logits[j], line))
        results.append((lines, cross_proposal_nms(kws)))
    return results


# -- detection interchange ------------------------------------------------------

def write_detections(path, dets: Iterable[KeywordDetection]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        for d in dets:
            fh.write(json.dumps(d.to_record(), sort_keys=True, separators=(",", ":")) + "\n")
    os.replace(tmp, path)
    return path


def read_detections(path) -> list[KeywordDetection]:
    out = []
    with open(path) as fh:
        for n, raw in enumerate(fh):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
                rect = RotatedRect(*[float(v) for v in rec["rect"]])
                out.append(KeywordDetection(str(rec["image"]), int(rec["class_id"]), float(rec["confidence"]), rect))
            except (ValueError, KeyError, TypeError) as exc:
                raise SchemaError(f"bad detection record: {exc}", n) from exc
    return out
