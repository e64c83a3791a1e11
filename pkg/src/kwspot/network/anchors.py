"""Anchor generation, box delta coding and proposal NMS."""
from __future__ import annotations

import math

import torch
from torchvision.ops import batched_nms, box_iou, nms

from .config import AnchorConfig

# keep exp() of size deltas bounded
DELTA_CLAMP = math.log(1000.0 / 16)


def cell_anchors(ratios, scale) -> torch.Tensor:
    """Zero-centered (A, 4) anchors with ``w/h = ratio`` and area ``scale**2``."""
    r = torch.as_tensor(ratios, dtype=torch.float64)
    w = scale * torch.sqrt(r)
    h = scale / torch.sqrt(r)
    return torch.stack([-w / 2, -h / 2, w / 2, h / 2], dim=1)


def generate_anchors(cfg: AnchorConfig, level_dims, dtype=torch.float32) -> list[torch.Tensor]:
    """Per-level (H*W*A, 4) anchors, ordered by (row, column, ratio)."""
    out = []
    for (h, w), stride, scale in zip(level_dims, cfg.strides, cfg.scales):
        base = cell_anchors(cfg.ratios, scale)
        ys = (torch.arange(h, dtype=torch.float64) + 0.5) * stride
        xs = (torch.arange(w, dtype=torch.float64) + 0.5) * stride
        cy, cx = torch.meshgrid(ys, xs, indexing="ij")
        shifts = torch.stack([cx, cy, cx, cy], dim=-1).reshape(-1, 1, 4)
        out.append((shifts + base[None]).reshape(-1, 4).to(dtype))
    return out


def encode(ref: torch.Tensor, boxes: torch.Tensor) -> torch.Tensor:
    """(dx, dy, dw, dh) taking ``ref`` boxes onto ``boxes``; sizes in log space."""
    rw = ref[:, 2] - ref[:, 0]
    rh = ref[:, 3] - ref[:, 1]
    rx = ref[:, 0] + 0.5 * rw
    ry = ref[:, 1] + 0.5 * rh
    bw = boxes[:, 2] - boxes[:, 0]
    bh = boxes[:, 3] - boxes[:, 1]
    bx = boxes[:, 0] + 0.5 * bw
    by = boxes[:, 1] + 0.5 * bh
    return torch.stack([(bx - rx) / rw, (by - ry) / rh, torch.log(bw / rw), torch.log(bh / rh)], dim=1)


def decode(ref: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
    rw = ref[:, 2] - ref[:, 0]
    rh = ref[:, 3] - ref[:, 1]
    rx = ref[:, 0] + 0.5 * rw
    ry = ref[:, 1] + 0.5 * rh
    dx, dy = deltas[:, 0], deltas[:, 1]
    dw = deltas[:, 2].clamp(max=DELTA_CLAMP)
    dh = deltas[:, 3].clamp(max=DELTA_CLAMP)
    cx = rx + dx * rw
    cy = ry + dy * rh
    w = rw * torch.exp(dw)
    h = rh * torch.exp(dh)
    return torch.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=1)


def clip_boxes(boxes: torch.Tensor, height: int, width: int) -> torch.Tensor:
    x = boxes[:, 0::2].clamp(0, width)
    y = boxes[:, 1::2].clamp(0, height)
    return torch.stack([x[:, 0], y[:, 0], x[:, 1], y[:, 1]], dim=1)


def assign_levels(boxes: torch.Tensor, canonical_scale: float, canonical_level: int,
                  min_level: int = 0, max_level: int = 3) -> torch.Tensor:
    """FPN level index per box: floor(l0 + log2(sqrt(wh) / s0)), clamped."""
    w = (boxes[:, 2] - boxes[:, 0]).clamp(min=1e-6)
    h = (boxes[:, 3] - boxes[:, 1]).clamp(min=1e-6)
    lvl = torch.floor(canonical_level + torch.log2(torch.sqrt(w * h) / canonical_scale))
    return lvl.clamp(min_level, max_level).to(torch.int64)


__all__ = [
    "batched_nms", "box_iou", "nms", "cell_anchors", "generate_anchors", "encode", "decode",
    "clip_boxes", "assign_levels",
]
