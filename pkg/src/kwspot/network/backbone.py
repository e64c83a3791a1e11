"""Small residual CNN with a 5-level feature pyramid (strides 4..64)."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


def _gn(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, ch), ch)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.norm1 = _gn(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.norm2 = _gn(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), _gn(cout))

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + skip)


class ResidualFPN(nn.Module):
    """Stem (stride 2), four residual stages (strides 4, 8, 16, 32) and an FPN.

    ``forward`` returns five maps P2..P6 with ``out_channels`` channels; P6 is
    a stride-2 subsampling of P5.
    """

    def __init__(self, widths=(32, 64, 128, 128), blocks: int = 2, out_channels: int = 64):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(3, widths[0], 3, 2, 1, bias=False), _gn(widths[0]), nn.ReLU())
        stages = []
        cin = widths[0]
        for w in widths:
            layers = [BasicBlock(cin, w, 2)] + [BasicBlock(w, w) for _ in range(blocks - 1)]
            stages.append(nn.Sequential(*layers))
            cin = w
        self.stages = nn.ModuleList(stages)
        self.lateral = nn.ModuleList(nn.Conv2d(w, out_channels, 1) for w in widths)
        self.output = nn.ModuleList(nn.Conv2d(out_channels, out_channels, 3, 1, 1) for _ in widths)
        self.out_channels = out_channels

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        lat = [l(f) for l, f in zip(self.lateral, feats)]
        top = lat[-1]
        merged = [top]
        for f in reversed(lat[:-1]):
            top = f + F.interpolate(top, size=f.shape[-2:], mode="nearest")
            merged.insert(0, top)
        outs = [conv(m) for conv, m in zip(self.output, merged)]
        outs.append(F.max_pool2d(outs[-1], kernel_size=1, stride=2))
        return outs
