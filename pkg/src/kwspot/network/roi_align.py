"""RoI alignment by bilinear sampling, written with differentiable tensor ops.

Pixel-center convention: feature cell ``(i, j)`` sits at continuous
coordinate ``(j + 0.5, i + 0.5)`` in feature units, so a box is shifted by
half a cell before sampling (the "aligned" variant). Each output cell averages
``sampling_ratio x sampling_ratio`` bilinear samples; nothing is rounded.
"""
from __future__ import annotations

import torch

from ..errors import DegenerateBox


def _axis_weights(coord: torch.Tensor, size: int):
    """Bilinear low/high indices and weights along one axis, plus validity."""
    valid = (coord >= -1.0) & (coord <= size)
    c = coord.clamp(min=0.0)
    low = torch.floor(c).to(torch.int64)
    at_edge = low >= size - 1
    low = torch.where(at_edge, torch.full_like(low, size - 1), low)
    high = torch.where(at_edge, low, low + 1)
    c = torch.where(at_edge, low.to(c.dtype), c)
    frac = c - low.to(c.dtype)
    w_low = (1.0 - frac) * valid
    w_high = frac * valid
    return low, high, w_low, w_high


def roi_align(features: torch.Tensor, rois: torch.Tensor, output_size: int, spatial_scale: float,
              sampling_ratio: int = 2) -> torch.Tensor:
    """Aligned RoI features.

    Args:
        features: (N, C, H, W) map.
        rois: (R, 5) rows of (batch index, x1, y1, x2, y2) in image pixels.
        output_size: side P of the square output.
        spatial_scale: feature cells per image pixel (1 / stride).

    Returns:
        (R, C, P, P) tensor.
    """
    n, c, h, w = features.shape
    r = rois.shape[0]
    p = int(output_size)
    s = int(sampling_ratio)
    if r == 0:
        return features.new_zeros((0, c, p, p))
    rois = rois.to(features.dtype)
    side = torch.minimum(rois[:, 3] - rois[:, 1], rois[:, 4] - rois[:, 2])
    if bool((side < 1e-3).any()):
        raise DegenerateBox("RoI side shorter than 1e-3 px")
    bidx = rois[:, 0].to(torch.int64)
    x1 = rois[:, 1] * spatial_scale - 0.5
    y1 = rois[:, 2] * spatial_scale - 0.5
    bw = (rois[:, 3] - rois[:, 1]) * spatial_scale / p
    bh = (rois[:, 4] - rois[:, 2]) * spatial_scale / p

    steps = (torch.arange(p * s, dtype=features.dtype, device=features.device) + 0.5) / s
    ys = y1[:, None] + steps[None, :] * bh[:, None]  # (R, P*s)
    xs = x1[:, None] + steps[None, :] * bw[:, None]

    y_lo, y_hi, wy_lo, wy_hi = _axis_weights(ys, h)
    x_lo, x_hi, wx_lo, wx_hi = _axis_weights(xs, w)

    flat = features.permute(0, 2, 3, 1).reshape(n * h * w, c)
    base = (bidx * h)[:, None, None]

    def gather(yi, xi):
        idx = ((base + yi[:, :, None]) * w + xi[:, None, :]).reshape(-1)
        return flat.index_select(0, idx).reshape(r, p * s, p * s, c)

    out = (gather(y_lo, x_lo) * (wy_lo[:, :, None] * wx_lo[:, None, :])[..., None]
           + gather(y_lo, x_hi) * (wy_lo[:, :, None] * wx_hi[:, None, :])[..., None]
           + gather(y_hi, x_lo) * (wy_hi[:, :, None] * wx_lo[:, None, :])[..., None]
           + gather(y_hi, x_hi) * (wy_hi[:, :, None] * wx_hi[:, None, :])[..., None])
    out = out.reshape(r, p, s, p, s, c).mean(dim=(2, 4))
    return out.permute(0, 3, 1, 2).contiguous()
