"""Retrieval evaluation: per-keyword average precision over ranked image lists, and mAP."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .datamodel import ImageSample, KeywordVocab
from .errors import EvalError, VocabError

REPORT_SCHEMA = {
    "type": "object",
    "required": ["classes", "mAP", "num_images"],
    "additionalProperties": False,
    "properties": {
        "num_images": {"type": "integer", "minimum": 0},
        "mAP": {"type": ["number", "null"]},
        "classes": {"type": "array", "items": {
            "type": "object",
            "required": ["class_id", "keyword", "ap", "num_relevant", "num_retrieved", "included"],
            "additionalProperties": False,
            "properties": {
                "class_id": {"type": "integer", "minimum": 1},
                "keyword": {"type": "string"},
                "ap": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "num_relevant": {"type": "integer", "minimum": 0},
                "num_retrieved": {"type": "integer", "minimum": 0},
                "included": {"type": "boolean"},
            },
        }},
    },
}


@dataclass
class RankedRetrieval:
    class_id: int
    entries: list  # (image_id, score), score descending then image id ascending
    relevance: list  # 0/1 per entry
    num_relevant: int  # |r| over the whole test set


@dataclass
class ClassAP:
    class_id: int
    ap: float
    num_relevant: int


def relevant_images(ground_truth: Sequence[ImageSample], keyword: str) -> set:
    return {s.image_id for s in ground_truth if any(keyword in ln.transcription for ln in s.lines)}


def build_retrieval(detections: Iterable, ground_truth: Sequence[ImageSample], class_id: int,
                    vocab: KeywordVocab) -> RankedRetrieval:
    """Rank images by their best class-``class_id`` confidence.

    ``detections`` is any iterable of objects with ``image_id``, ``class_id``
    and ``confidence`` (KeywordDetection).
    """
    keyword = vocab.keyword(class_id)  # raises VocabError
    best: dict = {}
    for d in detections:
        if d.class_id == class_id:
            best[d.image_id] = max(best.get(d.image_id, float("-inf")), float(d.confidence))
    entries = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    rel_set = relevant_images(ground_truth, keyword)
    relevance = [1 if img in rel_set else 0 for img, _ in entries]
    return RankedRetrieval(class_id, entries, relevance, len(rel_set))


def average_precision(rr: RankedRetrieval, exact: bool = False):
    """(1/|r|) * sum_j p(j) r(j); returns None for classes with |r| = 0.

    ``exact`` accumulates in Fractions, so ``ap`` is a rational number.
    """
    if rr.num_relevant == 0:
        return None
    div = Fraction if exact else (lambda a, b: a / b)
    hits = 0
    total = div(0, 1)
    for j, r in enumerate(rr.relevance, start=1):
        if r:
            hits += 1
            total += div(hits, j)
    return ClassAP(rr.class_id, total / rr.num_relevant, rr.num_relevant)


def mean_average_precision(aps: Iterable) -> float:
    vals = [a.ap if isinstance(a, ClassAP) else a for a in aps if a is not None]
    if not vals:
        raise EvalError("no class with relevant images; mAP is undefined")
    return sum(vals) / len(vals)


def pr_curve(rr: RankedRetrieval) -> list[tuple[float, float]]:
    """(recall, precision) at each relevant hit of the ranked list."""
    out = []
    hits = 0
    for j, r in enumerate(rr.relevance, start=1):
        if r:
            hits += 1
            out.append((hits / rr.num_relevant, hits / j))
    return out


def evaluate(detections: Sequence, ground_truth: Sequence[ImageSample], vocab: KeywordVocab) -> dict:
    dets = list(detections)
    for d in dets:
        if not 1 <= d.class_id <= vocab.K:
            raise VocabError(f"detection class id {d.class_id} outside 1..{vocab.K}")
    classes, aps = [], []
    for k in range(1, vocab.K + 1):
        rr = build_retrieval(dets, ground_truth, k, vocab)
        ap = average_precision(rr)
        aps.append(ap)
        classes.append({"class_id": k, "keyword": vocab.keyword(k), "ap": None if ap is None else ap.ap,
                        "num_relevant": rr.num_relevant, "num_retrieved": len(rr.entries),
                        "included": ap is not None})
    try:
        m = mean_average_precision(aps)
    except EvalError:
        m = None
    return {"num_images": len(ground_truth), "mAP": m, "classes": classes}


def write_report(report: Mapping, out_dir) -> tuple[Path, Path]:
    """JSON report plus a plain-text table; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath = out / "report.json"
    jpath.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    lines = [f"{'class':>5}  {'keyword':<8} {'|r|':>5} {'found':>5}  AP"]
    for c in report["classes"]:
        ap = "excluded" if c["ap"] is None else f"{c['ap']:.4f}"
        lines.append(f"{c['class_id']:>5}  {c['keyword']:<8} {c['num_relevant']:>5} {c['num_retrieved']:>5}  {ap}")
    m = report["mAP"]
    lines.append(f"mAP: {'undefined' if m is None else f'{m:.4f}'} over {report['num_images']} images")
    tpath = out / "report.txt"
    tpath.write_text("\n".join(lines) + "\n")
    return jpath, tpath


def write_pr_csv(rr: RankedRetrieval, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["recall", "precision"])
        wr.writerows(pr_curve(rr))
    return path
