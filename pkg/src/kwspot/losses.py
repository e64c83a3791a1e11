"""Training losses: detector terms, the two mask cross-entropies and the semi-supervised gate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import ShapeError

TERMS = ("rpn_obj", "rpn_box", "box_cls", "box_reg", "line_mask", "keyword_mask")
SMOOTH_L1_BETA = 1.0 / 9


def _check_mask_shapes(X: torch.Tensor, Y: torch.Tensor, channels=None):
    if X.dim() == 3:
        X = X.unsqueeze(0)
    if Y.dim() == 2:
        Y = Y.unsqueeze(0)
    if X.dim() != 4 or Y.dim() != 3 or X.shape[0] != Y.shape[0] or X.shape[-2:] != Y.shape[-2:]:
        raise ShapeError(f"logits {tuple(X.shape)} do not match labels {tuple(Y.shape)}")
    if channels is not None and X.shape[1] != channels:
        raise ShapeError(f"expected {channels} channels, got {X.shape[1]}")
    return X, Y.long()


def per_proposal_mask_ce(X: torch.Tensor, Y: torch.Tensor) -> torch.Tensor:
    """Pixel-averaged softmax cross-entropy per proposal, shape (R,)."""
    X, Y = _check_mask_shapes(X, Y)
    if bool(((Y < 0) | (Y >= X.shape[1])).any()):
        raise ShapeError(f"labels must lie in 0..{X.shape[1] - 1}")
    logp = F.log_softmax(X, dim=1)
    picked = logp.gather(1, Y.unsqueeze(1)).squeeze(1)
    return -picked.flatten(1).mean(dim=1)


def keyword_mask_loss(X: torch.Tensor, Y: torch.Tensor, valid=None) -> torch.Tensor:
    """L_key averaged over valid proposals; X is (R, K+1, 28, 28) or a single (K+1, 28, 28)."""
    per = per_proposal_mask_ce(X, Y)
    if valid is not None:
        valid = torch.as_tensor(valid, dtype=torch.bool)
        per = per[valid]
    if per.numel() == 0:
        return X.sum() * 0.0
    return per.mean()


def line_mask_loss(logits: torch.Tensor, M: torch.Tensor) -> torch.Tensor:
    logits, M = _check_mask_shapes(logits, torch.as_tensor(M), channels=2)
    per = per_proposal_mask_ce(logits, M)
    if per.numel() == 0:
        return logits.sum() * 0.0
    return per.mean()


def semi_gate(origin: str, loss):
    """Keyword loss for synthetic samples; a constant zero (no graph) otherwise."""
    if origin == "synthetic":
        return loss
    if origin == "real":
        if isinstance(loss, torch.Tensor):
            return torch.zeros((), dtype=loss.dtype)
        return 0.0
    raise ValueError(f"unknown origin {origin!r}")


def smooth_l1(pred: torch.Tensor, target: torch.Tensor, beta: float = SMOOTH_L1_BETA) -> torch.Tensor:
    d = (pred - target).abs()
    return torch.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta)


def detector_losses(rpn_logits, rpn_labels, rpn_deltas, rpn_targets,
                    cls_logits, cls_labels, box_deltas, box_targets) -> dict:
    """Objectness BCE, RPN and head smooth-L1 (positives only) and 2-way head CE.

    ``rpn_labels`` are 0/1 for the sampled anchors; ``rpn_deltas``/``rpn_targets``
    and ``box_deltas``/``box_targets`` hold positives only. Regression terms are
    summed over coordinates and averaged over positives, 0 when there are none.
    """
    out = {}
    if rpn_logits.numel():
        out["rpn_obj"] = F.binary_cross_entropy_with_logits(rpn_logits, rpn_labels.to(rpn_logits.dtype))
    else:
        out["rpn_obj"] = rpn_logits.sum() * 0.0
    if rpn_deltas.shape[0]:
        out["rpn_box"] = smooth_l1(rpn_deltas, rpn_targets).sum() / rpn_deltas.shape[0]
    else:
        out["rpn_box"] = rpn_deltas.sum() * 0.0
    if cls_logits.shape[0]:
        out["box_cls"] = F.cross_entropy(cls_logits, cls_labels.long())
    else:
        out["box_cls"] = cls_logits.sum() * 0.0
    if box_deltas.shape[0]:
        out["box_reg"] = smooth_l1(box_deltas, box_targets).sum() / box_deltas.shape[0]
    else:
        out["box_reg"] = box_deltas.sum() * 0.0
    return out


@dataclass
class LossReport:
    rpn_obj: float = 0.0
    rpn_box: float = 0.0
    box_cls: float = 0.0
    box_reg: float = 0.0
    line_mask: float = 0.0
    keyword_mask: float = 0.0
    total: float = 0.0
    counts: dict = field(default_factory=dict)

    @classmethod
    def from_terms(cls, terms: dict, counts=None) -> "LossReport":
        vals = {k: float(terms[k].detach()) if isinstance(terms[k], torch.Tensor) else float(terms[k])
                for k in TERMS}
        # fixed summation order for reproducible totals
        total = 0.0
        for k in TERMS:
            total += vals[k]
        return cls(**vals, total=total, counts=dict(counts or {}))

    def finite(self) -> bool:
        return all(math.isfinite(getattr(self, k)) for k in TERMS + ("total",))

    def row(self, step: int, lr: float) -> list:
        return [step, repr(lr)] + [repr(getattr(self, k)) for k in TERMS] + [repr(self.total)]


CSV_HEADER = ["step", "lr", *TERMS, "total"]
