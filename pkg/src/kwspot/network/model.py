"""The keyword spotter: residual FPN, text-line RPN, box head and two mask towers."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from . import anchors as A
from .backbone import ResidualFPN
from .config import ModelConfig
from .heads import BoxHead, MaskTower, RPNHead
from .roi_align import roi_align

PIXEL_MEAN = 0.5
PIXEL_STD = 0.25
SIZE_DIVISOR = 64
BOX_POOL = 7
MASK_POOL = 14


@dataclass
class MaskLogitsPair:
    line_logits: torch.Tensor  # (R, 2, 28, 28)
    keyword_logits: torch.Tensor  # (R, K + 1, 28, 28)


@dataclass
class Proposals:
    boxes: torch.Tensor  # (P, 4) x1, y1, x2, y2
    objectness: torch.Tensor  # (P,) in [0, 1]
    levels: torch.Tensor  # (P,) pyramid level the anchor came from


@dataclass
class Detections:
    """Eval-mode outputs for one image, before mask decoding."""

    proposals: torch.Tensor  # boxes the box head refined
    boxes: torch.Tensor  # refined boxes
    scores: torch.Tensor  # text probability
    deltas: torch.Tensor  # box-head deltas that map proposals -> boxes
    masks: MaskLogitsPair


def pad_images(images: torch.Tensor, divisor: int = SIZE_DIVISOR) -> torch.Tensor:
    h, w = images.shape[-2:]
    ph = (-h) % divisor
    pw = (-w) % divisor
    if ph or pw:
        images = F.pad(images, (0, pw, 0, ph))
    return images


class KeywordSpotter(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.backbone = ResidualFPN(cfg.backbone_widths, cfg.blocks_per_stage, cfg.fpn_channels)
        self.rpn = RPNHead(cfg.fpn_channels, cfg.anchors.num_anchors)
        self.box_head = BoxHead(cfg.fpn_channels, cfg.box_fc_width, BOX_POOL)
        self.line_head = MaskTower(cfg.fpn_channels, 2, cfg.mask_width)
        self.keyword_head = MaskTower(cfg.fpn_channels, cfg.num_keyword_maps, cfg.mask_width)
        self._anchor_cache: dict = {}

    # -- backbone / RPN ---------------------------------------------------

    def features(self, images: torch.Tensor) -> list[torch.Tensor]:
        """Images (N, 3, H, W) in [0, 1] -> five pyramid levels (strides 4..64)."""
        x = (images - PIXEL_MEAN) / PIXEL_STD
        return self.backbone(pad_images(x))

    def anchors_for(self, feats) -> list[torch.Tensor]:
        dims = tuple(tuple(f.shape[-2:]) for f in feats)
        key = (dims, feats[0].dtype)
        if key not in self._anchor_cache:
            self._anchor_cache[key] = A.generate_anchors(self.cfg.anchors, dims, feats[0].dtype)
        return self._anchor_cache[key]

    @torch.no_grad()
    def propose(self, logits, deltas, anchors, image_size, training: bool) -> list[Proposals]:
        """Decode, clip and NMS the RPN outputs per image."""
        cfg = self.cfg
        pre = cfg.rpn_pre_nms_topk_train if training else cfg.rpn_pre_nms_topk_eval
        post = cfg.rpn_post_nms_topk_train if training else cfg.rpn_post_nms_topk_eval
        h, w = image_size
        out = []
        for i in range(logits[0].shape[0]):
            boxes, scores, levels = [], [], []
            for lvl, (lg, dl, an) in enumerate(zip(logits, deltas, anchors)):
                s = lg[i].detach()
                k = min(pre, s.numel())
                top, idx = s.topk(k, sorted=True)
                b = A.clip_boxes(A.decode(an[idx], dl[i, idx].detach()), h, w)
                boxes.append(b)
                scores.append(top)
                levels.append(torch.full((k,), lvl, dtype=torch.int64))
            boxes = torch.cat(boxes)
            scores = torch.cat(scores)
            levels = torch.cat(levels)
            keep = ((boxes[:, 2] - boxes[:, 0]) >= 1.0) & ((boxes[:, 3] - boxes[:, 1]) >= 1.0)
            boxes, scores, levels = boxes[keep], scores[keep], levels[keep]
            keep = A.batched_nms(boxes, scores, levels, cfg.rpn_nms_iou)[:post]
            out.append(Proposals(boxes[keep], torch.sigmoid(scores[keep]), levels[keep]))
        return out

    # -- RoI heads ----------------------------------------------------------

    def roi_features(self, feats, boxes_per_image: list[torch.Tensor], output_size: int) -> torch.Tensor:
        """RoI-aligned patches from the FPN level chosen by box size; (R, C, P, P)."""
        cfg = self.cfg
        rois = torch.cat([torch.cat([torch.full((len(b), 1), i, dtype=b.dtype), b], dim=1)
                          for i, b in enumerate(boxes_per_image)]) if boxes_per_image else None
        c = feats[0].shape[1]
        if rois is None or rois.shape[0] == 0:
            return feats[0].new_zeros((0, c, output_size, output_size))
        rois = rois.to(feats[0].dtype)
        lvl = A.assign_levels(rois[:, 1:], cfg.roi_canonical_scale, cfg.roi_canonical_level, 0, 3)
        out = feats[0].new_zeros((rois.shape[0], c, output_size, output_size))
        for k in range(4):
            sel = torch.nonzero(lvl == k).flatten()
            if sel.numel() == 0:
                continue
            patch = roi_align(feats[k], rois[sel], output_size, 1.0 / cfg.anchors.strides[k], 2)
            out = out.index_copy(0, sel, patch)
        return out

    def mask_heads(self, patches: torch.Tensor) -> MaskLogitsPair:
        return MaskLogitsPair(self.line_head(patches), self.keyword_head(patches))

    # -- inference ------------------------------------------------------------

    @torch.no_grad()
    def detect(self, images: torch.Tensor) -> list[Detections]:
        cfg = self.cfg
        h, w = images.shape[-2:]
        feats = self.features(images)
        logits, deltas = self.rpn(feats)
        props = self.propose(logits, deltas, self.anchors_for(feats), (h, w), training=False)
        boxes_in = [p.boxes for p in props]
        cls, reg = self.box_head(self.roi_features(feats, boxes_in, BOX_POOL))
        scores_all = F.softmax(cls, dim=1)[:, 1]
        results = []
        start = 0
        per_image = []
        for i, p in enumerate(props):
            n = len(p.boxes)
            sc = scores_all[start:start + n]
            dl = reg[start:start + n]
            start += n
            refined = A.clip_boxes(A.decode(p.boxes, dl), h, w)
            keep = (sc > cfg.box_score_threshold) & ((refined[:, 2] - refined[:, 0]) >= 1) \
                & ((refined[:, 3] - refined[:, 1]) >= 1)
            idx = torch.nonzero(keep).flatten()
            order = A.nms(refined[idx], sc[idx], cfg.box_nms_iou)[:cfg.detections_per_image]
            idx = idx[order]
            per_image.append((p.boxes[idx], refined[idx], sc[idx], dl[idx]))
        masks = self.mask_heads(self.roi_features(feats, [r[1] for r in per_image], MASK_POOL))
        start = 0
        for prop, box, sc, dl in per_image:
            n = len(box)
            results.append(Detections(prop, box, sc, dl, MaskLogitsPair(
                masks.line_logits[start:start + n], masks.keyword_logits[start:start + n])))
            start += n
        return results


def keyword_head_parameters(model: KeywordSpotter):
    return dict(model.keyword_head.named_parameters())
