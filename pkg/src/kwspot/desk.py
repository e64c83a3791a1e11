"""Desk-scale experiment recipes: small images, few classes, CPU budgets.

These fix every knob of the overfit, semi-supervised and determinism runs so
the pilot scripts and the acceptance tests train exactly the same models.
"""
import time
from pathlib import Path

import torch

from .datamodel import make_vocab, strip_keywords
from .evalkit import evaluate
from .network import ModelConfig, load_checkpoint
from .postprocess import spot
from .synthgen import SynthConfig, synthesize
from .trainer import TrainConfig, dataset_losses, images_to_tensor, run_phase

NUM_KEYWORDS = 3
OVERFIT_SIZE = 192
SEMI_SIZE = 128

# from-scratch SGD barely moves the mask towers in 300 steps; AdamW does
OVERFIT = dict(iterations=300, batch_size=8, lr=2e-3, lr_decay_step=240, optimizer="adamw",
               shorter_side=None)
# keyword identity emerges late, so no decay; fine-tuning runs at a twentieth of the rate
PRETRAIN = dict(iterations=2000, batch_size=3, lr=2e-3, optimizer="adamw", shorter_side=None)
FINETUNE = dict(phase="finetune", iterations=300, batch_size=3, lr=1e-4, mix=(2, 1), optimizer="adamw",
                shorter_side=None)
# more, cheaper mask RoIs per step: the keyword tower learns per RoI seen
SEMI_MODEL = dict(mask_rois_per_image=16, mask_width=32)

# source: short legible lines on flat or gradient paper
SOURCE_STYLE = dict(glyphs_per_line=[2, 5], lines_per_image=[1, 3], keyword_rate=0.8, glyph_size=[14, 22],
                    background_probs={"flat": 0.5, "gradient": 0.5}, color_min_distance=80)
# the "real" domain: cluttered paper, blurrier, noisier, lower contrast ink
SHIFTED_STYLE = dict(SOURCE_STYLE, background_probs={"noise": 1.0}, blur_sigma=[1.0, 2.0], noise_std=0.05,
                     color_min_distance=60)


def vocab():
    return make_vocab(NUM_KEYWORDS, 0)


def _pool(style, size, n, seed):
    cfg = SynthConfig.from_dict(dict(style, image_height=size, image_width=size, seed=seed))
    return synthesize(cfg, vocab(), n)


def overfit_pool(n=20, seed=1):
    return _pool({}, OVERFIT_SIZE, n, seed)


def source_pool(n, seed):
    return _pool(SOURCE_STYLE, SEMI_SIZE, n, seed)


def shifted_pool(n, seed):
    return _pool(SHIFTED_STYLE, SEMI_SIZE, n, seed)


def detect_keywords(model, samples, batch_size=5):
    dets = []
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            b = samples[i:i + batch_size]
            for _, kws in spot(model, images_to_tensor([s.image for s in b]), [s.image_id for s in b]):
                dets += kws
    return dets


def evaluate_checkpoint(ckpt, samples):
    model, _ = load_checkpoint(ckpt)
    return evaluate(detect_keywords(model, samples), samples, vocab())


def overfit(out_dir, seed=0):
    """Train on 20 images and score on the same 20; returns a summary dict."""
    t0 = time.time()
    samples = overfit_pool()
    cfg = TrainConfig(seed=seed, **OVERFIT)
    ckpt = run_phase(cfg, Path(out_dir), samples, model_cfg=ModelConfig(num_keywords=NUM_KEYWORDS, seed=seed))
    model, _ = load_checkpoint(ckpt)
    report = evaluate(detect_keywords(model, samples), samples, vocab())
    losses = dataset_losses(model, samples)
    return {"mAP": report["mAP"], "line_mask": losses["line_mask"], "seconds": time.time() - t0,
            "checkpoint": ckpt, "report": report}


class SemiData:
    """Source pool, stripped shifted pool and shifted test set, built once."""

    def __init__(self, n_source=200, n_real=100, n_test=50):
        self.synthetic = source_pool(n_source, seed=100)
        self.real = [strip_keywords(s) for s in shifted_pool(n_real, seed=200)]
        self.test = shifted_pool(n_test, seed=300)


def pretrain(data: SemiData, out_dir, seed):
    cfg = TrainConfig(seed=seed, **PRETRAIN)
    return run_phase(cfg, Path(out_dir), data.synthetic,
                     model_cfg=ModelConfig(num_keywords=NUM_KEYWORDS, seed=seed, **SEMI_MODEL))


def finetune(data: SemiData, out_dir, init_checkpoint, seed, **overrides):
    cfg = TrainConfig(seed=seed, **dict(FINETUNE, **overrides))
    return run_phase(cfg, Path(out_dir), data.synthetic, data.real, init_checkpoint=init_checkpoint)
