"""Dataset schema, manifest persistence and the keyword vocabulary.

A dataset directory holds ``manifest.jsonl`` (one JSON record per image) and
the referenced 8-bit RGB PNG files. Real-origin records never carry keyword
annotations.
"""
from __future__ import annotations

import dataclasses
import json
import os
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np
from PIL import Image

from .errors import DegenerateGeometry, InvariantError, IoError, SchemaError, VocabError
from .geometry import QuadPolygon, point_polygon_distance

# 64 glyph symbols; glyph id == index into this string
ALPHABET = string.digits + string.ascii_uppercase + string.ascii_lowercase + "@#"
assert len(ALPHABET) == 64

ORIENTATIONS = ("horizontal", "oriented", "vertical")
ORIGINS = ("synthetic", "real")
MANIFEST_NAME = "manifest.jsonl"
KEYWORD_CONTAINMENT_TOLERANCE = 2.0


def glyph_ids(text: str) -> list[int]:
    try:
        return [ALPHABET.index(ch) for ch in text]
    except ValueError:
        raise VocabError(f"{text!r} uses symbols outside the glyph alphabet") from None


@dataclass(frozen=True)
class KeywordVocab:
    """Ordered keywords; class id ``k`` (1-based) names ``entries[k - 1]``, 0 is background."""

    entries: tuple[str, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise VocabError("vocabulary must hold at least one keyword")
        if len(set(entries)) != len(entries):
            raise VocabError("duplicate keywords in vocabulary")
        for kw in entries:
            if not 2 <= len(kw) <= 4:
                raise VocabError(f"keyword {kw!r} must have 2-4 glyphs")
            glyph_ids(kw)

    @property
    def K(self) -> int:
        return len(self.entries)

    def keyword(self, class_id: int) -> str:
        self.check(class_id)
        return self.entries[class_id - 1]

    def class_id(self, keyword: str) -> int:
        try:
            return self.entries.index(keyword) + 1
        except ValueError:
            raise VocabError(f"unknown keyword {keyword!r}") from None

    def check(self, class_id: int) -> None:
        if not (isinstance(class_id, (int, np.integer)) and 1 <= class_id <= self.K):
            raise VocabError(f"class id {class_id!r} outside 1..{self.K}")

    def to_json(self) -> dict:
        return {"keywords": list(self.entries)}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "KeywordVocab":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise VocabError(f"cannot read vocabulary {path}: {exc}") from exc
        if not isinstance(data, dict) or not isinstance(data.get("keywords"), list):
            raise VocabError(f"{path}: expected an object with a 'keywords' list")
        return cls(tuple(data["keywords"]))


def make_vocab(k: int, seed: int = 0, lengths=(2, 4)) -> KeywordVocab:
    """Random vocabulary of ``k`` keywords, none a substring of another."""
    rng = np.random.default_rng(seed)
    words: list[str] = []
    while len(words) < k:
        n = int(rng.integers(lengths[0], lengths[1] + 1))
        w = "".join(ALPHABET[i] for i in rng.choice(len(ALPHABET), size=n, replace=False))
        if any(w in o or o in w for o in words):
            continue
        words.append(w)
    return KeywordVocab(tuple(words))


@dataclass(frozen=True)
class TextLineAnno:
    poly: QuadPolygon
    transcription: str
    orientation: str = "horizontal"

    def __post_init__(self):
        if not self.transcription:
            raise InvariantError("empty line transcription")
        if self.orientation not in ORIENTATIONS:
            raise InvariantError(f"unknown orientation {self.orientation!r}")


@dataclass(frozen=True)
class KeywordAnno:
    poly: QuadPolygon
    class_id: int
    parent_line: int


@dataclass
class ImageSample:
    image_id: str
    image: np.ndarray  # H x W x 3 float32 in [0, 1]
    lines: list[TextLineAnno]
    keywords: Optional[list[KeywordAnno]] = None
    origin: str = "synthetic"

    def __post_init__(self):
        check_sample(self)

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    def line_boxes(self) -> np.ndarray:
        """Axis-aligned (x1, y1, x2, y2) boxes of the line quads, shape (n, 4)."""
        if not self.lines:
            return np.zeros((0, 4))
        return np.array([ln.poly.bbox() for ln in self.lines], dtype=np.float64)


def check_sample(sample: ImageSample, vocab: Optional[KeywordVocab] = None) -> None:
    img = sample.image
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise InvariantError(f"{sample.image_id}: image must be H x W x 3, got {img.shape}")
    if sample.origin not in ORIGINS:
        raise InvariantError(f"{sample.image_id}: unknown origin {sample.origin!r}")
    if sample.origin == "real" and sample.keywords is not None:
        raise InvariantError(f"{sample.image_id}: real sample must not carry keyword annotations")
    if sample.origin == "synthetic" and sample.keywords is None:
        raise InvariantError(f"{sample.image_id}: synthetic sample needs a keyword list")
    for kw in sample.keywords or ():
        if not 0 <= kw.parent_line < len(sample.lines):
            raise InvariantError(f"{sample.image_id}: keyword parent_line {kw.parent_line} out of range")
        if vocab is not None:
            vocab.check(kw.class_id)
        elif kw.class_id < 1:
            raise VocabError(f"{sample.image_id}: class id {kw.class_id} < 1")
        parent = sample.lines[kw.parent_line].poly
        for v in kw.poly.vertices:
            if point_polygon_distance(v, parent) > KEYWORD_CONTAINMENT_TOLERANCE:
                raise InvariantError(f"{sample.image_id}: keyword vertex {tuple(v)} outside its line")


def strip_keywords(sample: ImageSample) -> ImageSample:
    """Turn a synthetic sample into a line-annotation-only ("real") one."""
    return dataclasses.replace(sample, keywords=None, origin="real")


def retag_synthetic(sample: ImageSample) -> ImageSample:
    return dataclasses.replace(sample, keywords=[], origin="synthetic")


_POLY = {"type": "array", "minItems": 4, "maxItems": 4,
         "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}}}

MANIFEST_RECORD_SCHEMA = {
    "type": "object",
    "required": ["image", "origin", "lines"],
    "additionalProperties": False,
    "properties": {
        "image": {"type": "string", "minLength": 1},
        "origin": {"enum": list(ORIGINS)},
        "lines": {"type": "array", "items": {
            "type": "object",
            "required": ["poly", "text", "orientation"],
            "additionalProperties": False,
            "properties": {
                "poly": _POLY,
                "text": {"type": "string", "minLength": 1},
                "orientation": {"enum": list(ORIENTATIONS)},
            },
        }},
        "keywords": {"type": "array", "items": {
            "type": "object",
            "required": ["poly", "class_id", "parent_line"],
            "additionalProperties": False,
            "properties": {
                "poly": _POLY,
                "class_id": {"type": "integer", "minimum": 1},
                "parent_line": {"type": "integer", "minimum": 0},
            },
        }},
    },
}
_validator = jsonschema.Draft7Validator(MANIFEST_RECORD_SCHEMA)


def image_relpath(image_id: str) -> str:
    return f"images/{image_id}.png"


def sample_to_record(sample: ImageSample) -> dict:
    rec = {
        "image": image_relpath(sample.image_id),
        "origin": sample.origin,
        "lines": [{"poly": ln.poly.tolist(), "text": ln.transcription, "orientation": ln.orientation}
                  for ln in sample.lines],
    }
    if sample.keywords is not None:
        rec["keywords"] = [{"poly": kw.poly.tolist(), "class_id": int(kw.class_id),
                            "parent_line": int(kw.parent_line)} for kw in sample.keywords]
    return rec


def canonical_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def record_to_annotations(rec: dict, index: int):
    try:
        lines = [TextLineAnno(QuadPolygon(ln["poly"]), ln["text"], ln["orientation"]) for ln in rec["lines"]]
        keywords = None
        if "keywords" in rec:
            keywords = [KeywordAnno(QuadPolygon(kw["poly"]), kw["class_id"], kw["parent_line"])
                        for kw in rec["keywords"]]
    except DegenerateGeometry as exc:
        raise SchemaError(f"invalid polygon: {exc}", index) from exc
    return lines, keywords


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap pixel values to the 8-bit grid so PNG storage is lossless."""
    return (to_uint8(image).astype(np.float32) / 255.0).astype(np.float32)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float32) / 255.0


def write_image(path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")


def load_dataset(path, vocab: Optional[KeywordVocab] = None) -> list[ImageSample]:
    """Load samples in manifest order; ``path`` is a manifest file or a dataset dir."""
    path = Path(path)
    manifest = path / MANIFEST_NAME if path.is_dir() else path
    root = manifest.parent
    try:
        text = manifest.read_text()
    except OSError as exc:
        raise IoError(f"cannot read manifest {manifest}: {exc}") from exc
    samples = []
    for index, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}", index) from exc
        errors = sorted(_validator.iter_errors(rec), key=lambda e: list(e.path))
        if errors:
            loc = "/".join(str(p) for p in errors[0].path)
            raise SchemaError(f"{errors[0].message} (at {loc or 'record'})", index)
        if rec["origin"] == "real" and "keywords" in rec:
            raise InvariantError("real sample carries keyword annotations", index)
        if rec["origin"] == "synthetic" and "keywords" not in rec:
            raise InvariantError("synthetic sample lacks a keyword list", index)
        lines, keywords = record_to_annotations(rec, index)
        try:
            image = read_image(root / rec["image"])
        except OSError as exc:
            raise IoError(f"record {index}: cannot read image {rec['image']}: {exc}") from exc
        try:
            sample = ImageSample(Path(rec["image"]).stem, image, lines, keywords, rec["origin"])
            if vocab is not None:
                check_sample(sample, vocab)
        except (InvariantError, VocabError) as exc:
            raise type(exc)(f"record {index}: {exc}") from exc
        samples.append(sample)
    return samples


def save_dataset(samples: Sequence[ImageSample], path) -> Path:
    """Write ``manifest.jsonl`` plus PNG images under directory ``path``."""
    path = Path(path)
    try:
        (path / "images").mkdir(parents=True, exist_ok=True)
        seen = set()
        lines = []
        for sample in samples:
            if sample.image_id in seen:
                raise InvariantError(f"duplicate image id {sample.image_id!r}")
            seen.add(sample.image_id)
            write_image(path / image_relpath(sample.image_id), sample.image)
            lines.append(canonical_json(sample_to_record(sample)))
        tmp = path / (MANIFEST_NAME + ".tmp")
        tmp.write_text("".join(s + "\n" for s in lines))
        os.replace(tmp, path / MANIFEST_NAME)
    except OSError as exc:
        raise IoError(f"cannot write dataset to {path}: {exc}") from exc
    return path / MANIFEST_NAME
