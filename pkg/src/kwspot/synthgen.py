"""Procedural synthetic text images with full line and keyword annotations.

Glyphs are compositions of strokes from a fixed bank rendered on a 24x24
grid, so neighbouring glyphs abut with no visual gap and related glyphs share
strokes. Lines are laid out horizontally, vertically or rotated, composited on
flat, gradient or value-noise backgrounds and globally blurred.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import cv2
import numpy as np

from .datamodel import (ALPHABET, ImageSample, KeywordAnno, KeywordVocab, TextLineAnno, glyph_ids,
                        quantize)
from .errors import AtlasGenerationError, ConfigError, PlacementError
from .geometry import QuadPolygon, RotatedRect, intersection_area

log = logging.getLogger(__name__)

GLYPH_GRID = 24
NUM_GLYPHS = 64
MIN_HAMMING = 20
MAX_ATLAS_ATTEMPTS = 10_000


def _stroke_bank():
    lo, mid, hi = 2, 12, 21
    pos = (2, 7, 12, 16, 21)
    strokes = []
    for p in pos:
        for a, b in ((lo, hi), (lo, mid - 1), (mid, hi)):
            strokes.append(((a, p), (b, p)))  # horizontal
            strokes.append(((p, a), (p, b)))  # vertical
    strokes += [
        ((lo, lo), (hi, hi)), ((hi, lo), (lo, hi)),
        ((lo, mid), (mid, lo)), ((mid, hi), (hi, mid)),
        ((lo, mid), (mid, hi)), ((mid, lo), (hi, mid)),
        ((5, 5), (9, 9)), ((18, 5), (14, 9)), ((5, 18), (9, 14)), ((18, 18), (14, 14)),
    ]
    return strokes


STROKES = _stroke_bank()


_YY, _XX = np.mgrid[0:GLYPH_GRID, 0:GLYPH_GRID].astype(np.float64)


def _stroke_mask(a, b, radius=1.0) -> np.ndarray:
    # cells whose center lies within `radius` of segment a-b
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    t = np.clip(((_XX - ax) * dx + (_YY - ay) * dy) / float(dx * dx + dy * dy), 0.0, 1.0)
    d2 = (_XX - ax - t * dx) ** 2 + (_YY - ay - t * dy) ** 2
    return d2 <= radius * radius + 1e-9


_STROKE_MASKS = [_stroke_mask(a, b) for a, b in STROKES]


def _draw(stroke_ids) -> np.ndarray:
    g = np.zeros((GLYPH_GRID, GLYPH_GRID), dtype=bool)
    for s in stroke_ids:
        g |= _STROKE_MASKS[s]
    return g


@dataclass(frozen=True, eq=False)
class GlyphAtlas:
    glyphs: np.ndarray  # (64, 24, 24) bool
    strokes: tuple[tuple[int, ...], ...]
    seed: int = 0

    def __len__(self):
        return len(self.glyphs)

    def __eq__(self, other):
        return isinstance(other, GlyphAtlas) and np.array_equal(self.glyphs, other.glyphs)

    def alpha(self, glyph_id: int, size: int) -> np.ndarray:
        g = self.glyphs[glyph_id].astype(np.float32)
        if size == GLYPH_GRID:
            return g
        return cv2.resize(g, (size, size), interpolation=cv2.INTER_AREA)


def _glyph_ok(g: np.ndarray) -> bool:
    cov = g.mean()
    if not 0.08 <= cov <= 0.60:
        return False
    rows = np.nonzero(g.any(axis=1))[0]
    cols = np.nonzero(g.any(axis=0))[0]
    # ink spans the cell up to a 1-pixel margin on every side
    return rows[0] == 1 and rows[-1] == GLYPH_GRID - 2 and cols[0] == 1 and cols[-1] == GLYPH_GRID - 2


def build_atlas(seed: int = 0) -> GlyphAtlas:
    """Deterministic 64-glyph atlas; pairwise Hamming distance >= 20 cells."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA71A5]))
    glyphs, combos = [], []
    for _ in range(MAX_ATLAS_ATTEMPTS):
        if len(glyphs) == NUM_GLYPHS:
            break
        n = int(rng.integers(2, 5))
        ids = tuple(sorted(int(i) for i in rng.choice(len(STROKES), size=n, replace=False)))
        g = _draw(ids)
        if not _glyph_ok(g):
            continue
        if any(int((g ^ o).sum()) < MIN_HAMMING for o in glyphs):
            continue
        glyphs.append(g)
        combos.append(ids)
    if len(glyphs) < NUM_GLYPHS:
        raise AtlasGenerationError(f"only {len(glyphs)} valid glyphs after {MAX_ATLAS_ATTEMPTS} attempts")
    return GlyphAtlas(np.stack(glyphs), tuple(combos), seed)


def _pair(v, name, cast=float):
    if isinstance(v, (int, float)):
        v = (v, v)
    try:
        lo, hi = (cast(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a [lo, hi] pair, got {v!r}") from None
    if hi < lo:
        raise ConfigError(f"{name}: empty range [{lo}, {hi}]")
    return (lo, hi)


@dataclass
class SynthConfig:
    image_height: tuple[int, int] = (256, 256)
    image_width: tuple[int, int] = (256, 256)
    lines_per_image: tuple[int, int] = (1, 4)
    glyphs_per_line: tuple[int, int] = (3, 8)
    glyph_size: tuple[int, int] = (16, 28)
    orientation_probs: dict = field(default_factory=lambda: {"horizontal": 0.5, "oriented": 0.3, "vertical": 0.2})
    oriented_angle_deg: tuple[float, float] = (-60.0, 60.0)
    keyword_rate: float = 0.6
    second_keyword_rate: float = 0.25
    background_probs: dict = field(default_factory=lambda: {"flat": 0.3, "gradient": 0.35, "noise": 0.35})
    color_min_distance: float = 40.0
    opacity: tuple[float, float] = (0.75, 1.0)
    blur_sigma: tuple[float, float] = (0.0, 1.5)
    noise_std: float = 0.01
    line_gap: float = 4.0
    atlas_seed: int = 0
    seed: int = 0

    _INT_PAIRS = ("image_height", "image_width", "lines_per_image", "glyphs_per_line", "glyph_size")
    _FLOAT_PAIRS = ("oriented_angle_deg", "opacity", "blur_sigma")

    def __post_init__(self):
        for name in self._INT_PAIRS:
            setattr(self, name, _pair(getattr(self, name), name, int))
        for name in self._FLOAT_PAIRS:
            setattr(self, name, _pair(getattr(self, name), name, float))
        for name, keys in (("orientation_probs", ("horizontal", "oriented", "vertical")),
                           ("background_probs", ("flat", "gradient", "noise"))):
            probs = dict(getattr(self, name))
            unknown = set(probs) - set(keys)
            if unknown:
                raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
            vals = [float(probs.get(k, 0.0)) for k in keys]
            if min(vals) < 0 or abs(sum(vals) - 1.0) > 1e-6:
                raise ConfigError(f"{name}: probabilities must be non-negative and sum to 1, got {probs}")
            setattr(self, name, dict(zip(keys, vals)))
        if not 0 <= self.keyword_rate <= 1 or not 0 <= self.second_keyword_rate <= 1:
            raise ConfigError("keyword rates must lie in [0, 1]")
        if self.lines_per_image[0] < 0 or self.glyphs_per_line[0] < 1 or self.glyph_size[0] < 4:
            raise ConfigError("line/glyph counts and sizes must be positive")

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "SynthConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


@dataclass
class RenderedLine:
    alpha: np.ndarray  # H x W float32 ink coverage in image frame
    rect: RotatedRect
    quad: QuadPolygon
    glyph_rects: list[RotatedRect]

    @property
    def glyph_quads(self) -> list[QuadPolygon]:
        return [r.to_quad() for r in self.glyph_rects]


def line_layout(n: int, orientation: str, size: float, center, theta: float = 0.0):
    """Line rect and per-glyph rects without rendering."""
    cx, cy = float(center[0]), float(center[1])
    if orientation == "vertical":
        line = RotatedRect(cx, cy, size, n * size, 0.0)
        glyphs = [RotatedRect(cx, cy + (i + 0.5) * size - n * size / 2, size, size, 0.0) for i in range(n)]
        return line, glyphs
    t = theta if orientation == "oriented" else 0.0
    c, s = math.cos(t), math.sin(t)
    line = RotatedRect(cx, cy, n * size, size, t)
    glyphs = []
    for i in range(n):
        off = (i + 0.5) * size - n * size / 2
        glyphs.append(RotatedRect(cx + off * c, cy + off * s, size, size, t))
    return line, glyphs


def render_line(atlas: GlyphAtlas, ids, orientation: str, size: int, center=None, theta: float = 0.0,
                shape=None) -> RenderedLine:
    """Render glyph ids as one abutting line: left-to-right, top-to-bottom or rotated by theta."""
    ids = list(ids)
    if not ids:
        raise ValueError("a line needs at least one glyph")
    n = len(ids)
    if orientation == "vertical":
        canvas = np.concatenate([atlas.alpha(g, size) for g in ids], axis=0)
        rot = 0.0
    else:
        canvas = np.concatenate([atlas.alpha(g, size) for g in ids], axis=1)
        rot = theta if orientation == "oriented" else 0.0
    if shape is None:
        diag = int(math.ceil(math.hypot(*canvas.shape))) + 2
        shape = (diag, diag)
    if center is None:
        center = (shape[1] / 2, shape[0] / 2)
    line, glyph_rects = line_layout(n, orientation, size, center, rot)
    c, s = math.cos(rot), math.sin(rot)
    r = np.array([[c, -s], [s, c]])
    src_c = np.array([canvas.shape[1] / 2, canvas.shape[0] / 2])
    # map source pixel-index coords to destination pixel-index coords
    t = r @ (0.5 - src_c) + np.asarray(center, dtype=np.float64) - 0.5
    m = np.hstack([r, t[:, None]]).astype(np.float64)
    alpha = cv2.warpAffine(canvas, m, (int(shape[1]), int(shape[0])), flags=cv2.INTER_LINEAR,
                           borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    return RenderedLine(np.clip(alpha, 0, 1), line, line.to_quad(), glyph_rects)


def span_rect(glyph_rects: list[RotatedRect], start: int, end: int, orientation: str) -> RotatedRect:
    """Rect covering glyphs ``start..end-1`` of a rendered line."""
    first, last = glyph_rects[start], glyph_rects[end - 1]
    cx, cy = (first.cx + last.cx) / 2, (first.cy + last.cy) / 2
    n = end - start
    if orientation == "vertical":
        return RotatedRect(cx, cy, first.w, n * first.h, 0.0)
    return RotatedRect(cx, cy, n * first.w, first.h, first.theta)


def keyword_occurrences(text: str, vocab: KeywordVocab) -> list[tuple[int, int, int]]:
    """All (start, end, class_id) occurrences of vocabulary keywords in ``text``."""
    out = []
    for k, kw in enumerate(vocab.entries, start=1):
        pos = text.find(kw)
        while pos >= 0:
            out.append((pos, pos + len(kw), k))
            pos = text.find(kw, pos + 1)
    return sorted(out)


def _make_text(rng, n: int, vocab: KeywordVocab, cfg: SynthConfig):
    """Glyph string of about ``n`` symbols plus its planned keyword spans."""
    for _ in range(200):
        planned = []
        if rng.random() < cfg.keyword_rate:
            planned.append(int(rng.integers(1, vocab.K + 1)))
            if rng.random() < cfg.second_keyword_rate:
                planned.append(int(rng.integers(1, vocab.K + 1)))
        kw_len = sum(len(vocab.keyword(k)) for k in planned)
        length = max(n, kw_len)
        filler = length - kw_len
        # split filler into len(planned) + 1 gaps
        cuts = np.sort(rng.integers(0, filler + 1, size=len(planned)))
        gaps = np.diff(np.concatenate([[0], cuts, [filler]])).astype(int)
        parts, spans, pos = [], [], 0
        for i, k in enumerate(planned):
            g = "".join(ALPHABET[j] for j in rng.integers(0, len(ALPHABET), size=gaps[i]))
            parts.append(g)
            pos += len(g)
            kw = vocab.keyword(k)
            parts.append(kw)
            spans.append((pos, pos + len(kw), k))
            pos += len(kw)
        parts.append("".join(ALPHABET[j] for j in rng.integers(0, len(ALPHABET), size=gaps[-1])))
        text = "".join(parts)
        if keyword_occurrences(text, vocab) == spans:
            return text, spans
    raise PlacementError("could not build a line text without accidental keyword matches")


def _background(rng, h: int, w: int, cfg: SynthConfig) -> np.ndarray:
    kinds = list(cfg.background_probs)
    kind = kinds[int(rng.choice(len(kinds), p=[cfg.background_probs[k] for k in kinds]))]
    if kind == "flat":
        return np.broadcast_to(rng.uniform(0, 1, 3), (h, w, 3)).astype(np.float32).copy()
    if kind == "gradient":
        a, b = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
        ang = rng.uniform(0, 2 * math.pi)
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        t = xx * math.cos(ang) + yy * math.sin(ang)
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        return (a * (1 - t[..., None]) + b * t[..., None]).astype(np.float32)
    img = np.zeros((h, w, 3), dtype=np.float64)
    base = rng.uniform(0.15, 0.85, 3)
    amp = 0.35
    for octave in range(3):
        cells = 4 * 2 ** octave
        coarse = rng.uniform(-1, 1, (cells + 1, cells + 1, 3)).astype(np.float32)
        img += amp * cv2.resize(coarse, (w, h), interpolation=cv2.INTER_CUBIC)
        amp /= 2
    return np.clip(base + img, 0, 1).astype(np.float32)


def _text_color(rng, bg_mean: np.ndarray, min_dist: float) -> np.ndarray:
    for _ in range(100):
        col = rng.uniform(0, 1, 3)
        if np.abs(col - bg_mean).mean() * 255 >= min_dist:
            return col
    return np.zeros(3) if bg_mean.mean() > 0.5 else np.ones(3)


def _place_lines(rng, h, w, cfg: SynthConfig, vocab: KeywordVocab, n_lines: int):
    placed = []
    orients = list(cfg.orientation_probs)
    probs = [cfg.orientation_probs[o] for o in orients]
    margin = 2.0
    for _ in range(n_lines):
        for _attempt in range(100):
            orient = orients[int(rng.choice(len(orients), p=probs))]
            size = int(rng.integers(cfg.glyph_size[0], cfg.glyph_size[1] + 1))
            n = int(rng.integers(cfg.glyphs_per_line[0], cfg.glyphs_per_line[1] + 1))
            theta = math.radians(rng.uniform(*cfg.oriented_angle_deg)) if orient == "oriented" else 0.0
            text, spans = _make_text(rng, n, vocab, cfg)
            line, _ = line_layout(len(text), orient, size, (0.0, 0.0), theta)
            cr = line.corners()
            half = np.abs(cr).max(axis=0) + margin
            if 2 * half[0] >= w or 2 * half[1] >= h:
                continue
            center = (rng.uniform(half[0], w - half[0]), rng.uniform(half[1], h - half[1]))
            line = RotatedRect(center[0], center[1], line.w, line.h, line.theta)
            grown = RotatedRect(line.cx, line.cy, line.w + 2 * cfg.line_gap, line.h + 2 * cfg.line_gap, line.theta)
            if any(intersection_area(grown, p[0]) > 0 for p in placed):
                continue
            placed.append((line, orient, size, theta, text, spans, center))
            break
        else:
            raise PlacementError(f"could not place {n_lines} lines on a {h}x{w} image")
    return placed


def synthesize_one(index: int, cfg: SynthConfig, vocab: KeywordVocab, atlas: GlyphAtlas,
                   attempt: int = 0) -> ImageSample:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index, attempt]))
    h = int(rng.integers(cfg.image_height[0], cfg.image_height[1] + 1))
    w = int(rng.integers(cfg.image_width[0], cfg.image_width[1] + 1))
    image = _background(rng, h, w, cfg).astype(np.float64)
    n_lines = int(rng.integers(cfg.lines_per_image[0], cfg.lines_per_image[1] + 1))
    placed = _place_lines(rng, h, w, cfg, vocab, n_lines)
    lines, keywords = [], []
    for li, (rect, orient, size, theta, text, spans, center) in enumerate(placed):
        rendered = render_line(atlas, glyph_ids(text), orient, size, center, theta, (h, w))
        region = rendered.alpha > 0.05
        bg_mean = image[region].mean(axis=0) if region.any() else image.reshape(-1, 3).mean(axis=0)
        color = _text_color(rng, bg_mean, cfg.color_min_distance)
        a = (rendered.alpha * rng.uniform(*cfg.opacity))[..., None]
        image = image * (1 - a) + color * a
        lines.append(TextLineAnno(_rounded_quad(rendered.rect), text, orient))
        for start, end, k in spans:
            kr = span_rect(rendered.glyph_rects, start, end, orient)
            keywords.append(KeywordAnno(_rounded_quad(kr), k, li))
    sigma = rng.uniform(*cfg.blur_sigma)
    if sigma > 1e-3:
        image = cv2.GaussianBlur(image, (0, 0), sigmaX=sigma, sigmaY=sigma)
    if cfg.noise_std > 0:
        image = image + rng.normal(0, cfg.noise_std, image.shape)
    image = quantize(np.clip(image, 0, 1))
    return ImageSample(f"{cfg.seed:04d}_{index:06d}", image, lines, keywords, "synthetic")


def _rounded_quad(rect: RotatedRect) -> QuadPolygon:
    return QuadPolygon(np.round(rect.corners(), 4))


def synthesize(cfg: SynthConfig, vocab: KeywordVocab, count: int,
               atlas: Optional[GlyphAtlas] = None, retries: int = 3) -> list[ImageSample]:
    """``count`` samples; sample i depends only on (cfg.seed, i), so shards can run independently."""
    atlas = atlas or build_atlas(cfg.atlas_seed)
    out = []
    for i in range(count):
        for attempt in range(retries):
            try:
                out.append(synthesize_one(i, cfg, vocab, atlas, attempt))
                break
            except PlacementError as exc:
                log.debug("sample %d attempt %d: %s", i, attempt, exc)
        else:
            log.warning("skipping sample %d: lines could not be placed", i)
    return out
