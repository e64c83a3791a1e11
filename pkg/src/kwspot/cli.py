"""Command line entry point: ``kwspot {synth,train,spot,eval,plot}``.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, DataError, IoError, KwspotError, SchemaError

log = logging.getLogger("kwspot")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
LINE_COLOR = (255, 0, 0)
KEYWORD_COLOR = (0, 200, 0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _seed_all(seed: int) -> None:
    import torch

    np.random.seed(seed)
    torch.manual_seed(seed)


def _read_yaml(path) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise SchemaError(f"config {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise SchemaError(f"config {path} must be a mapping")
    return data


def write_stamp(out_dir, command: str, config: dict, seed) -> Path:
    """Reproducibility stamp; contains no timestamps so reruns are byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    stamp = {"command": command, "config_sha256": hashlib.sha256(blob.encode()).hexdigest(),
             "seed": seed, "version": __version__}
    path = out / "stamp.json"
    path.write_text(json.dumps(stamp, sort_keys=True, indent=2) + "\n")
    return path


def _load_vocab(path):
    from .datamodel import KeywordVocab

    if path is None:
        raise ConfigError("--vocab is required")
    return KeywordVocab.load(path)


# -- synth --------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .datamodel import make_vocab, save_dataset, strip_keywords
    from .synthgen import SynthConfig, synthesize

    raw = _read_yaml(args.config)
    count = int(raw.pop("count", args.count if args.count is not None else 100))
    if args.count is not None:
        count = args.count
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SynthConfig.from_dict(raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.vocab and Path(args.vocab).exists():
        vocab = _load_vocab(args.vocab)
    else:
        vocab = make_vocab(args.num_keywords, cfg.seed)
    vocab.save(out / "vocab.json")
    if args.vocab and not Path(args.vocab).exists():
        vocab.save(args.vocab)
    samples = synthesize(cfg, vocab, count)
    if args.strip_keywords:
        samples = [strip_keywords(s) for s in samples]
    save_dataset(samples, out)
    write_stamp(out, "synth", {"synth": cfg.to_dict(), "count": count, "vocab": list(vocab.entries),
                               "strip_keywords": args.strip_keywords}, cfg.seed)
    log.info("wrote %d samples to %s", len(samples), out)
    return EXIT_OK


# -- train --------------------------------------------------------------------

def cmd_train(args) -> int:
    import torch

    from .datamodel import load_dataset
    from .network.checkpoint import read_tensors
    from .network.config import ModelConfig
    from .trainer import TrainConfig, run_phase

    raw = _read_yaml(args.config)
    unknown = set(raw) - {"model", "train", "data", "init_checkpoint"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    vocab = _load_vocab(args.vocab)
    tcfg = dict(raw.get("train") or {})
    if args.seed is not None:
        tcfg["seed"] = args.seed
    cfg = TrainConfig.from_dict(tcfg)
    mcfg = dict(raw.get("model") or {})
    mcfg.setdefault("num_keywords", vocab.K)
    mcfg.setdefault("seed", cfg.seed)
    model_cfg = ModelConfig.from_dict(mcfg)
    if model_cfg.num_keywords != vocab.K:
        raise ConfigError(f"model has K={model_cfg.num_keywords} but the vocabulary has K={vocab.K}")
    data = raw.get("data") or {}
    base = Path(args.config).parent if args.config else Path(".")

    def _pool(key):
        if not data.get(key):
            return []
        return load_dataset(base / data[key], vocab)

    synthetic, real = _pool("synthetic"), _pool("real")
    init = args.checkpoint or raw.get("init_checkpoint")
    if init is not None and args.checkpoint is None:
        init = base / init
    if init is not None:
        _, meta = read_tensors(init)
        if meta["model_config"]["num_keywords"] != vocab.K:
            raise ConfigError(f"checkpoint has K={meta['model_config']['num_keywords']} but vocabulary K={vocab.K}")
    torch.set_num_threads(max(1, torch.get_num_threads()))
    _seed_all(cfg.seed)
    out = Path(args.out)
    write_stamp(out, "train", {"train": cfg.to_dict(), "model": model_cfg.to_dict(), "data": data,
                               "init_checkpoint": str(init) if init else None}, cfg.seed)
    ckpt = run_phase(cfg, out, synthetic, real, model_cfg, init_checkpoint=init, resume=args.resume)
    log.info("final checkpoint %s", ckpt)
    return EXIT_OK


# -- spot ---------------------------------------------------------------------

def _collect_images(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES))
        else:
            out.append(p)
    return out


def draw_overlay(image: np.ndarray, lines, keywords, vocab) -> np.ndarray:
    import cv2

    from .datamodel import to_uint8

    canvas = np.ascontiguousarray(to_uint8(image))
    for ln in lines:
        pts = np.round(ln.rect.corners()).astype(np.int32)
        cv2.polylines(canvas, [pts], True, LINE_COLOR, 1, cv2.LINE_8)
    for kw in keywords:
        pts = np.round(kw.rect.corners()).astype(np.int32)
        cv2.polylines(canvas, [pts], True, KEYWORD_COLOR, 1, cv2.LINE_8)
        label = f"{vocab.keyword(kw.class_id)} {kw.confidence:.2f}"
        org = (int(pts[:, 0].min()), max(int(pts[:, 1].min()) - 2, 8))
        cv2.putText(canvas, label, org, cv2.FONT_HERSHEY_SIMPLEX, 0.3, KEYWORD_COLOR, 1, cv2.LINE_AA)
    return canvas


def cmd_spot(args) -> int:
    import torch
    from PIL import Image

    from .datamodel import read_image
    from .network.checkpoint import load_checkpoint
    from .postprocess import spot, write_detections

    vocab = _load_vocab(args.vocab)
    if args.checkpoint is None:
        raise ConfigError("--checkpoint is required")
    model, meta = load_checkpoint(args.checkpoint)
    if model.cfg.num_keywords != vocab.K:
        raise ConfigError(f"checkpoint has K={model.cfg.num_keywords} but vocabulary K={vocab.K}")
    _seed_all(args.seed if args.seed is not None else 0)
    out = Path(args.out)
    (out / "overlays").mkdir(parents=True, exist_ok=True)
    paths = _collect_images(args.images)
    if not paths:
        raise UsageError("no input images given")
    all_dets, ok = [], 0
    for p in paths:
        try:
            img = read_image(p)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", p, exc)
            continue
        ok += 1
        t = torch.from_numpy(img).permute(2, 0, 1).unsqueeze(0).contiguous()
        (lines, kws), = spot(model, t, [p.stem])
        all_dets.extend(kws)
        Image.fromarray(draw_overlay(img, lines, kws, vocab)).save(out / "overlays" / f"{p.stem}.png")
    if ok == 0:
        raise IoError("none of the input images could be read")
    write_detections(out / "detections.jsonl", all_dets)
    write_stamp(out, "spot", {"checkpoint": str(args.checkpoint), "images": [str(p) for p in paths],
                              "vocab": list(vocab.entries)}, args.seed)
    log.info("%d keyword detections over %d images", len(all_dets), ok)
    return EXIT_OK


# -- eval ---------------------------------------------------------------------

def cmd_eval(args) -> int:
    from .datamodel import load_dataset
    from .evalkit import build_retrieval, evaluate, pr_curve, write_pr_csv, write_report
    from .postprocess import read_detections

    vocab = _load_vocab(args.vocab)
    dets = read_detections(args.detections)
    gt = load_dataset(args.manifest)
    report = evaluate(dets, gt, vocab)
    out = Path(args.out)
    write_report(report, out)
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        for k in range(1, vocab.K + 1):
            rr = build_retrieval(dets, gt, k, vocab)
            write_pr_csv(rr, out / f"pr_class{k}.csv")
            pts = pr_curve(rr)
            fig, ax = plt.subplots(figsize=(4, 3))
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o")
            ax.set(xlim=(0, 1.02), ylim=(0, 1.02), xlabel="recall", ylabel="precision",
                   title=f"class {k} ({vocab.keyword(k)})")
            fig.tight_layout()
            fig.savefig(out / f"pr_class{k}.png", dpi=80)
            plt.close(fig)
    write_stamp(out, "eval", {"detections": str(args.detections), "manifest": str(args.manifest),
                              "vocab": list(vocab.entries)}, args.seed)
    m = report["mAP"]
    print(f"mAP {'undefined' if m is None else f'{m:.4f}'}")
    return EXIT_OK


# -- plot ---------------------------------------------------------------------

def read_metrics(path):
    from .losses import CSV_HEADER

    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read metrics log {path}: {exc}") from exc
    if not rows or rows[0] != CSV_HEADER:
        raise SchemaError(f"{path}: missing or unexpected header")
    if len(rows) == 1:
        raise SchemaError(f"{path}: log has no rows")
    data = []
    for n, row in enumerate(rows[1:], start=2):
        try:
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"expected {len(CSV_HEADER)} fields, got {len(row)}")
            vals = [float(v) for v in row]
            if not all(math.isfinite(v) for v in vals):
                raise ValueError("non-finite value")
        except ValueError as exc:
            raise SchemaError(f"{path}: malformed row {n}: {exc}") from exc
        data.append(vals)
    return CSV_HEADER, np.array(data)


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    header, data = read_metrics(args.log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    steps = data[:, 0]
    for j, name in enumerate(header[2:], start=2):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(steps, data[:, j], color="tab:blue", linewidth=1)
        ax.set(xlabel="step", ylabel=name, title=name)
        fig.tight_layout()
        fig.savefig(out / f"{name}.png", dpi=80)
        plt.close(fig)
    write_stamp(out, "plot", {"log": str(args.log)}, args.seed)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kwspot", description="Text-line guided keyword spotting.")
    p.add_argument("--version", action="version", version=f"kwspot {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="render a synthetic dataset")
    s.add_argument("--config", help="YAML synthesis config (SynthConfig fields plus optional 'count')")
    s.add_argument("--vocab", help="vocabulary JSON to use; created from --num-keywords if missing")
    s.add_argument("--num-keywords", type=int, default=5, help="K when a new vocabulary is drawn (default 5)")
    s.add_argument("--count", type=int, help="number of images (overrides config)")
    s.add_argument("--strip-keywords", action="store_true",
                   help="drop keyword labels and mark samples as real (line annotations only)")
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--seed", type=int, help="synthesis seed (overrides config)")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="pretrain or fine-tune the spotter")
    t.add_argument("--config", required=True, help="YAML with 'model', 'train' and 'data' sections")
    t.add_argument("--vocab", required=True, help="vocabulary JSON")
    t.add_argument("--checkpoint", help="starting checkpoint (fine-tuning); fresh optimizer")
    t.add_argument("--resume", help="checkpoint of this run to resume from (weights, optimizer state, step)")
    t.add_argument("--out", required=True, help="run directory for checkpoints and metrics.csv")
    t.add_argument("--seed", type=int, help="training seed (overrides config)")
    t.set_defaults(func=cmd_train)

    sp = sub.add_parser("spot", help="detect lines and keywords in images")
    sp.add_argument("images", nargs="+", help="image files or directories")
    sp.add_argument("--checkpoint", required=True, help="trained checkpoint")
    sp.add_argument("--vocab", required=True, help="vocabulary JSON matching the checkpoint")
    sp.add_argument("--out", required=True, help="output directory (detections.jsonl, overlays/)")
    sp.add_argument("--seed", type=int, default=0, help="seed recorded in the stamp (default 0)")
    sp.set_defaults(func=cmd_spot)

    e = sub.add_parser("eval", help="retrieval mAP of a detection dump")
    e.add_argument("--detections", required=True, help="detections.jsonl from 'spot'")
    e.add_argument("--manifest", required=True, help="ground-truth manifest or dataset directory")
    e.add_argument("--vocab", required=True, help="vocabulary JSON")
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--plot", action="store_true", help="also write per-class PR curves (CSV and PNG)")
    e.add_argument("--seed", type=int, default=0, help="seed recorded in the stamp (default 0)")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="plot loss curves from a metrics log")
    pl.add_argument("log", help="metrics.csv written by 'train'")
    pl.add_argument("--out", required=True, help="directory for the plot images")
    pl.add_argument("--seed", type=int, default=0, help="seed recorded in the stamp (default 0)")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"kwspot {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigError) as exc:
        print(f"kwspot {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KwspotError as exc:
        print(f"kwspot {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"kwspot {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
