from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from ..errors import ConfigError

PAPER_RATIOS = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0)
PAPER_SCALES = (32, 64, 128, 256, 512)
DESK_SCALES = (16, 32, 64, 128, 256)


@dataclass(frozen=True)
class AnchorConfig:
    """Anchor shapes: ``w / h == ratio`` and ``w * h == scale**2`` on each level."""

    ratios: tuple[float, ...] = PAPER_RATIOS
    scales: tuple[float, ...] = DESK_SCALES
    strides: tuple[int, ...] = (4, 8, 16, 32, 64)

    def __post_init__(self):
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.scales) != 5 or len(self.strides) != 5:
            raise ConfigError("anchor config needs exactly 5 levels (one scale and stride per level)")
        if len(self.ratios) != 7:
            raise ConfigError("anchor config needs exactly 7 aspect ratios")
        if min(self.ratios) <= 0 or min(self.scales) <= 0:
            raise ConfigError("anchor ratios and scales must be positive")

    @property
    def num_anchors(self) -> int:
        return len(self.ratios)


@dataclass(frozen=True)
class ModelConfig:
    num_keywords: int = 5
    backbone_widths: tuple[int, ...] = (32, 64, 128, 128)
    blocks_per_stage: int = 2
    fpn_channels: int = 64
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    rpn_nms_iou: float = 0.7
    rpn_pre_nms_topk_train: int = 1000
    rpn_pre_nms_topk_eval: int = 500
    rpn_post_nms_topk_train: int = 1000
    rpn_post_nms_topk_eval: int = 300
    rpn_fg_iou: float = 0.7
    rpn_bg_iou: float = 0.3
    rpn_batch_per_image: int = 256
    rpn_positive_fraction: float = 0.5
    roi_fg_iou: float = 0.5
    roi_batch_per_image: int = 64
    roi_positive_fraction: float = 0.25
    mask_rois_per_image: int = 12
    box_fc_width: int = 256
    mask_width: int = 64
    roi_canonical_scale: float = 224.0
    roi_canonical_level: int = 2
    box_score_threshold: float = 0.05
    box_nms_iou: float = 0.5
    detections_per_image: int = 20
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.anchors, dict):
            object.__setattr__(self, "anchors", AnchorConfig(**self.anchors))
        object.__setattr__(self, "backbone_widths", tuple(int(w) for w in self.backbone_widths))
        if self.num_keywords < 1:
            raise ConfigError("num_keywords must be >= 1")
        if len(self.backbone_widths) != 4:
            raise ConfigError("backbone needs 4 stage widths")

    @property
    def num_keyword_maps(self) -> int:
        return self.num_keywords + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_widths"] = list(self.backbone_widths)
        d["anchors"] = {k: list(v) for k, v in d["anchors"].items()}
        return d

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "ModelConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)
