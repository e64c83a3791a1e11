from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class RPNHead(nn.Module):
    """Shared 3x3 conv, then per-anchor objectness and (dx, dy, dw, dh) deltas."""

    def __init__(self, channels: int, num_anchors: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, 1, 1)
        self.objectness = nn.Conv2d(channels, num_anchors, 1)
        self.deltas = nn.Conv2d(channels, 4 * num_anchors, 1)
        for layer in (self.conv, self.objectness, self.deltas):
            nn.init.normal_(layer.weight, std=0.01)
            nn.init.zeros_(layer.bias)

    def forward(self, feats):
        logits, deltas = [], []
        for f in feats:
            t = F.relu(self.conv(f))
            n, _, h, w = t.shape
            # (N, A, H, W) -> (N, H*W*A) matching anchor order (row, col, ratio)
            logits.append(self.objectness(t).permute(0, 2, 3, 1).reshape(n, -1))
            deltas.append(self.deltas(t).reshape(n, -1, 4, h, w).permute(0, 3, 4, 1, 2).reshape(n, -1, 4))
        return logits, deltas


class BoxHead(nn.Module):
    """Two fully connected layers on 7x7 RoI features, then text/background scores and deltas."""

    def __init__(self, in_channels: int, width: int = 256, pool: int = 7):
        super().__init__()
        self.fc1 = nn.Linear(in_channels * pool * pool, width)
        self.fc2 = nn.Linear(width, width)
        self.cls = nn.Linear(width, 2)
        self.bbox = nn.Linear(width, 4)
        for fc in (self.fc1, self.fc2):
            nn.init.kaiming_uniform_(fc.weight, a=1)
            nn.init.zeros_(fc.bias)
        nn.init.normal_(self.cls.weight, std=0.01)
        nn.init.normal_(self.bbox.weight, std=0.001)
        nn.init.zeros_(self.cls.bias)
        nn.init.zeros_(self.bbox.bias)

    def forward(self, x: torch.Tensor):
        x = F.relu(self.fc1(x.flatten(1)))
        x = F.relu(self.fc2(x))
        return self.cls(x), self.bbox(x)


class MaskTower(nn.Module):
    """Four 3x3 convs (GroupNorm + ReLU), a stride-2 transposed conv (14 -> 28) and a 1x1 classifier."""

    def __init__(self, in_channels: int, num_maps: int, width: int = 64, depth: int = 4):
        super().__init__()
        convs = []
        cin = in_channels
        for _ in range(depth):
            convs.append(nn.Conv2d(cin, width, 3, 1, 1, bias=False))
            cin = width
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(nn.GroupNorm(min(8, width), width) for _ in range(depth))
        self.upsample = nn.ConvTranspose2d(width, width, 2, 2)
        self.classifier = nn.Conv2d(width, num_maps, 1)
        for m in list(self.convs) + [self.upsample]:
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        nn.init.normal_(self.classifier.weight, std=0.01)
        nn.init.zeros_(self.classifier.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv, norm in zip(self.convs, self.norms):
            x = F.relu(norm(conv(x)))
        x = F.relu(self.upsample(x))
        return self.classifier(x)


def tower_parameter_count(in_channels: int, num_maps: int, width: int = 64, depth: int = 4) -> int:
    """Exact parameter count of a MaskTower; only the last term depends on ``num_maps``."""
    convs = in_channels * width * 9 + (depth - 1) * width * width * 9 + depth * 2 * width
    deconv = width * width * 4 + width
    return convs + deconv + (width * num_maps + num_maps)
