"""Training loop: synthetic pretraining and semi-supervised fine-tuning."""
from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np
import torch

from . import losses as L
from .datamodel import ImageSample, KeywordAnno, TextLineAnno
from .errors import ConfigError, NonFiniteLoss
from .geometry import QuadPolygon
from .network import anchors as A
from .network.checkpoint import load_checkpoint, save_checkpoint
from .network.config import ModelConfig
from .network.model import BOX_POOL, MASK_POOL, KeywordSpotter
from .targets import assign_proposals, make_keyword_target, make_line_target

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixSchedule:
    synthetic: int = 2
    real: int = 1

    def __post_init__(self):
        if self.synthetic < 0 or self.real < 0 or self.synthetic + self.real < 1:
            raise ConfigError(f"bad mixing ratio {self.synthetic}:{self.real}")

    @property
    def p_synthetic(self) -> float:
        return self.synthetic / (self.synthetic + self.real)


OPTIMIZERS = ("sgd", "adamw")


@dataclass
class TrainConfig:
    phase: str = "pretrain"
    iterations: int = 2000
    batch_size: int = 4
    lr: float = 0.01
    lr_decay_step: Optional[int] = None
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    mix: MixSchedule = field(default_factory=MixSchedule)
    shorter_side: Optional[int] = 256
    checkpoint_every: int = 0
    grad_clip: Optional[float] = 10.0
    warmup_steps: int = 0
    optimizer: str = "sgd"

    def __post_init__(self):
        if isinstance(self.mix, dict):
            self.mix = MixSchedule(**self.mix)
        elif isinstance(self.mix, (list, tuple)):
            self.mix = MixSchedule(*self.mix)
        if self.phase not in ("pretrain", "finetune"):
            raise ConfigError(f"phase must be pretrain or finetune, got {self.phase!r}")
        if self.iterations < 0 or self.batch_size < 1:
            raise ConfigError("iterations must be >= 0 and batch_size >= 1")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigError("lr_decay_factor must be in (0, 1]")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")

    def lr_at(self, step: int) -> float:
        lr = self.lr
        if self.warmup_steps and step < self.warmup_steps:
            lr = lr * (step + 1) / self.warmup_steps
        if self.lr_decay_step is not None and step >= self.lr_decay_step:
            lr = lr * self.lr_decay_factor
        return lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mix"] = [self.mix.synthetic, self.mix.real]
        return d

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "TrainConfig":
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _torch_gen(*key) -> torch.Generator:
    seed = int(np.random.SeedSequence([int(k) for k in key]).generate_state(1, np.uint64)[0] >> 1)
    return torch.Generator().manual_seed(seed)


# -- sample streams -----------------------------------------------------------

class MixedStream:
    """Indexable mixed stream: draw ``t`` depends only on (seed, t)."""

    def __init__(self, synthetic: Sequence[ImageSample], real: Sequence[ImageSample],
                 schedule: MixSchedule, seed: int):
        if schedule.synthetic > 0 and not synthetic:
            raise ConfigError("mixing ratio needs synthetic samples but the pool is empty")
        if schedule.real > 0 and not real:
            raise ConfigError("mixing ratio needs real samples but the pool is empty")
        self.synthetic = list(synthetic)
        self.real = list(real)
        self.schedule = schedule
        self.seed = seed

    def __getitem__(self, t: int) -> ImageSample:
        rng = _rng(self.seed, 0x313, t)
        if rng.random() < self.schedule.p_synthetic:
            return self.synthetic[int(rng.integers(len(self.synthetic)))]
        return self.real[int(rng.integers(len(self.real)))]

    def batch(self, step: int, size: int) -> list[ImageSample]:
        return [self[step * size + i] for i in range(size)]


class EpochStream:
    """Shuffled epochs over one pool; draw ``t`` depends only on (seed, t)."""

    def __init__(self, pool: Sequence[ImageSample], seed: int):
        if not pool:
            raise ConfigError("training pool is empty")
        self.pool = list(pool)
        self.seed = seed
        self._perm: dict = {}

    def __getitem__(self, t: int) -> ImageSample:
        n = len(self.pool)
        epoch = t // n
        if epoch not in self._perm:
            self._perm = {epoch: _rng(self.seed, 0xE90C, epoch).permutation(n)}
        return self.pool[int(self._perm[epoch][t % n])]

    def batch(self, step: int, size: int) -> list[ImageSample]:
        return [self[step * size + i] for i in range(size)]


def mix_batches(synthetic, real, schedule: MixSchedule, seed: int, batch_size: int = 1):
    """Endless deterministic batches drawn by per-sample Bernoulli mixing."""
    stream = MixedStream(synthetic, real, schedule, seed)
    step = 0
    while True:
        yield stream.batch(step, batch_size)
        step += 1


# -- batch assembly -----------------------------------------------------------

def rescale_sample(sample: ImageSample, shorter_side: Optional[int]) -> ImageSample:
    if shorter_side is None or min(sample.height, sample.width) == shorter_side:
        return sample
    f = shorter_side / min(sample.height, sample.width)
    h, w = round(sample.height * f), round(sample.width * f)
    img = cv2.resize(sample.image, (w, h), interpolation=cv2.INTER_AREA if f < 1 else cv2.INTER_LINEAR)
    lines = [TextLineAnno(QuadPolygon(ln.poly.vertices * f), ln.transcription, ln.orientation)
             for ln in sample.lines]
    kws = None if sample.keywords is None else [
        KeywordAnno(QuadPolygon(k.poly.vertices * f), k.class_id, k.parent_line) for k in sample.keywords]
    return ImageSample(sample.image_id, img.astype(np.float32), lines, kws, sample.origin)


def images_to_tensor(images: Sequence[np.ndarray]) -> torch.Tensor:
    h = max(im.shape[0] for im in images)
    w = max(im.shape[1] for im in images)
    out = torch.zeros((len(images), 3, h, w), dtype=torch.float32)
    for i, im in enumerate(images):
        out[i, :, :im.shape[0], :im.shape[1]] = torch.from_numpy(np.ascontiguousarray(im)).permute(2, 0, 1)
    return out


def _sample_indices(pos: torch.Tensor, neg: torch.Tensor, total: int, frac: float, gen):
    n_pos = min(int(total * frac), pos.numel())
    n_neg = min(total - n_pos, neg.numel())
    pos = pos[torch.randperm(pos.numel(), generator=gen)[:n_pos]]
    neg = neg[torch.randperm(neg.numel(), generator=gen)[:n_neg]]
    return pos, neg


def rpn_targets(anchors: torch.Tensor, gt: torch.Tensor, cfg: ModelConfig, gen):
    """Sampled anchor indices with 0/1 labels, plus regression targets for the positives."""
    if gt.shape[0] == 0:
        neg = torch.arange(anchors.shape[0])
        _, neg = _sample_indices(neg[:0], neg, cfg.rpn_batch_per_image, 0.0, gen)
        return neg, torch.zeros(neg.numel()), neg[:0], anchors.new_zeros((0, 4))
    iou = A.box_iou(anchors, gt)
    best, arg = iou.max(dim=1)
    labels = torch.full((anchors.shape[0],), -1, dtype=torch.int64)
    labels[best < cfg.rpn_bg_iou] = 0
    labels[best >= cfg.rpn_fg_iou] = 1
    gt_best = iou.max(dim=0).values
    forced = ((iou == gt_best[None]) & (gt_best[None] > 0)).any(dim=1)
    labels[forced] = 1
    pos, neg = _sample_indices(torch.nonzero(labels == 1).flatten(), torch.nonzero(labels == 0).flatten(),
                               cfg.rpn_batch_per_image, cfg.rpn_positive_fraction, gen)
    idx = torch.cat([pos, neg])
    lab = torch.cat([torch.ones(pos.numel()), torch.zeros(neg.numel())])
    return idx, lab, pos, A.encode(anchors[pos], gt[arg[pos]])


def _sample_tag(samples) -> int:
    h = hashlib.sha256("|".join(s.image_id for s in samples).encode()).digest()
    return int.from_bytes(h[:4], "little")


def compute_losses(model: KeywordSpotter, samples: Sequence[ImageSample], gen: torch.Generator):
    """Forward a batch and return (terms dict of tensors, counts)."""
    cfg = model.cfg
    images = images_to_tensor([s.image for s in samples])
    h, w = images.shape[-2:]
    feats = model.features(images)
    logits, deltas = model.rpn(feats)
    anchors = model.anchors_for(feats)
    all_anchors = torch.cat(anchors)
    all_logits = torch.cat(logits, dim=1)
    all_deltas = torch.cat(deltas, dim=1)
    gts = [torch.as_tensor(s.line_boxes(), dtype=torch.float32) for s in samples]

    obj_l, obj_t, reg_p, reg_t = [], [], [], []
    for i, gt in enumerate(gts):
        idx, lab, pos, tgt = rpn_targets(all_anchors, gt, cfg, gen)
        obj_l.append(all_logits[i, idx])
        obj_t.append(lab)
        reg_p.append(all_deltas[i, pos])
        reg_t.append(tgt)

    props = model.propose(logits, deltas, anchors, (h, w), training=True)
    rois, cls_t, box_pos_idx, box_t = [], [], [], []
    mask_rois, mask_info = [], []
    offset = 0
    for i, (s, p, gt) in enumerate(zip(samples, props, gts)):
        cand = torch.cat([p.boxes, gt]) if gt.shape[0] else p.boxes
        matches, _ = assign_proposals(cand.double().numpy(), gt.double().numpy(), cfg.roi_fg_iou)
        matches = torch.from_numpy(matches)
        pos, neg = _sample_indices(torch.nonzero(matches >= 0).flatten(), torch.nonzero(matches < 0).flatten(),
                                   cfg.roi_batch_per_image, cfg.roi_positive_fraction, gen)
        sel = torch.cat([pos, neg])
        rois.append(cand[sel])
        cls_t.append(torch.cat([torch.ones(pos.numel()), torch.zeros(neg.numel())]).long())
        box_pos_idx.append(torch.arange(pos.numel()) + offset)
        box_t.append(A.encode(cand[pos], gt[matches[pos]]))
        offset += sel.numel()
        for j in pos[:cfg.mask_rois_per_image].tolist():
            mask_rois.append((i, cand[j], int(matches[j])))

    cls, reg = model.box_head(model.roi_features(feats, rois, BOX_POOL))
    box_pos_idx = torch.cat(box_pos_idx)
    terms = L.detector_losses(torch.cat(obj_l), torch.cat(obj_t), torch.cat(reg_p), torch.cat(reg_t),
                              cls, torch.cat(cls_t), reg[box_pos_idx], torch.cat(box_t))

    # mask branches on positive RoIs
    per_image = [[] for _ in samples]
    for i, box, m in mask_rois:
        per_image[i].append((box, m))
    boxes = [torch.stack([b for b, _ in lst]) if lst else feats[0].new_zeros((0, 4)) for lst in per_image]
    patches = model.roi_features(feats, boxes, MASK_POOL)
    line_targets, kw_targets, synth_rows = [], [], []
    row = 0
    for s, lst in zip(samples, per_image):
        for box, m in lst:
            b = box.double().numpy()
            line_targets.append(torch.from_numpy(make_line_target(b, s.lines[m].poly).M))
            if s.origin == "synthetic":
                kws = [k for k in s.keywords if k.parent_line == m]
                kw_targets.append(torch.from_numpy(
                    make_keyword_target(b, kws, num_keywords=cfg.num_keywords).Y))
                synth_rows.append(row)
            row += 1
    if line_targets:
        terms["line_mask"] = L.line_mask_loss(model.line_head(patches), torch.stack(line_targets).long())
    else:
        terms["line_mask"] = patches.sum() * 0.0
    # the gate: keyword tower only ever sees RoIs of synthetic samples
    if synth_rows:
        X = model.keyword_head(patches[torch.as_tensor(synth_rows)])
        terms["keyword_mask"] = L.keyword_mask_loss(X, torch.stack(kw_targets))
    else:
        terms["keyword_mask"] = L.semi_gate("real", terms["line_mask"])
    counts = {"rpn_pos": int(sum(r.shape[0] for r in reg_p)), "roi_pos": int(box_pos_idx.numel()),
              "mask_rois": len(line_targets), "keyword_rois": len(synth_rows)}
    return terms, counts


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    """SGD with momentum, or AdamW with ``momentum`` as its first-moment decay.

    Both skip parameters whose grad is None, which the keyword gate relies on.
    """
    if cfg.optimizer == "adamw":
        return torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=(cfg.momentum, 0.999),
                                 weight_decay=cfg.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay)


def train_step(model: KeywordSpotter, optimizer, samples: Sequence[ImageSample], step: int,
               cfg: TrainConfig) -> L.LossReport:
    model.train()
    lr = cfg.lr_at(step)
    for g in optimizer.param_groups:
        g["lr"] = lr
    gen = _torch_gen(cfg.seed, 0x57E9, step)
    optimizer.zero_grad(set_to_none=True)
    terms, counts = compute_losses(model, samples, gen)
    total = terms["rpn_obj"]
    for k in L.TERMS[1:]:
        total = total + terms[k]
    report = L.LossReport.from_terms(terms, counts)
    if not (report.finite() and math.isfinite(float(total.detach()))):
        raise NonFiniteLoss(f"non-finite loss at step {step}", [s.image_id for s in samples])
    if total.requires_grad:
        total.backward()
        if cfg.grad_clip:
            params = [p for p in model.parameters() if p.grad is not None]
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        optimizer.step()
    return report


def dataset_losses(model: KeywordSpotter, samples: Sequence[ImageSample], batch_size: int = 4,
                   seed: int = 0) -> dict:
    """Mean of each loss term over ``samples`` with no parameter update.

    Sampling inside the loss (anchors, RoIs) uses a generator keyed on
    (seed, batch start), so repeated calls agree exactly.
    """
    model.train()
    sums = dict.fromkeys(L.TERMS, 0.0)
    batches = 0
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            terms, _ = compute_losses(model, samples[i:i + batch_size], _torch_gen(seed, i))
            for k in L.TERMS:
                sums[k] += float(terms[k])
            batches += 1
    return {k: v / max(batches, 1) for k, v in sums.items()}


# -- phases -------------------------------------------------------------------

def _read_log(path: Path, upto: int) -> list[list[str]]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [r for r in rows[1:] if int(r[0]) < upto]


def run_phase(cfg: TrainConfig, out_dir, synthetic: Sequence[ImageSample] = (),
              real: Sequence[ImageSample] = (), model_cfg: Optional[ModelConfig] = None,
              init_checkpoint=None, resume=None) -> Path:
    """Run a full phase, logging every step; returns the final checkpoint path.

    ``init_checkpoint`` seeds the weights (required for finetune) with a fresh
    optimizer; ``resume`` restores weights, optimizer state and step from a checkpoint
    written by this phase.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.phase == "finetune" and init_checkpoint is None and resume is None:
        raise ConfigError("finetune needs a starting checkpoint")
    if cfg.phase == "finetune" and init_checkpoint is not None and not Path(init_checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {init_checkpoint}")
    start = 0
    if resume is not None:
        model, meta = load_checkpoint(resume)
        optimizer = make_optimizer(model, cfg)
        load_checkpoint(resume, model, optimizer)
        start = int(meta["step"])
    elif init_checkpoint is not None:
        model, _ = load_checkpoint(init_checkpoint)
        optimizer = make_optimizer(model, cfg)
    else:
        model = KeywordSpotter(model_cfg or ModelConfig())
        optimizer = make_optimizer(model, cfg)

    if cfg.phase == "pretrain":
        stream = EpochStream([rescale_sample(s, cfg.shorter_side) for s in synthetic], cfg.seed)
    else:
        stream = MixedStream([rescale_sample(s, cfg.shorter_side) for s in synthetic],
                             [rescale_sample(s, cfg.shorter_side) for s in real], cfg.mix, cfg.seed)

    log_path = out / "metrics.csv"
    kept = _read_log(log_path, start)
    extra = {"train_config": cfg.to_dict()}
    with open(log_path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(L.CSV_HEADER)
        wr.writerows(kept)
        for step in range(start, cfg.iterations):
            report = train_step(model, optimizer, stream.batch(step, cfg.batch_size), step, cfg)
            wr.writerow(report.row(step, cfg.lr_at(step)))
            fh.flush()
            if step % 50 == 0:
                log.info("step %d total %.4f line %.4f kw %.4f", step, report.total, report.line_mask,
                         report.keyword_mask)
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 and step + 1 < cfg.iterations:
                save_checkpoint(out / f"step_{step + 1:06d}.ckpt", model, optimizer, step + 1, extra)
    return save_checkpoint(out / "final.ckpt", model, optimizer, max(cfg.iterations, start), extra)
