"""Detector network: backbone, RPN, RoI heads and checkpoints."""
from .anchors import decode, encode, generate_anchors
from .checkpoint import load_checkpoint, save_checkpoint
from .config import AnchorConfig, ModelConfig
from .model import Detections, KeywordSpotter, MaskLogitsPair, Proposals
from .roi_align import roi_align

__all__ = [
    "AnchorConfig", "ModelConfig", "KeywordSpotter", "MaskLogitsPair", "Proposals", "Detections",
    "generate_anchors", "encode", "decode", "roi_align", "save_checkpoint", "load_checkpoint",
]
