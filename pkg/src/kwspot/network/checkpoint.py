"""Checkpoint archive: a zip holding ``index.json`` and one raw little-endian tensor blob.

The index maps every tensor name to its shape, dtype and byte offset, and
carries the model config plus any extra JSON metadata (step, train config).
Round trips are bit-exact.
"""
from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError, IoError

FORMAT = "kwspot-ckpt/1"
_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8"), "int64": np.dtype("<i8")}


def write_tensors(path, tensors: dict, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = {"format": FORMAT, "meta": meta, "tensors": {}}
    blob = io.BytesIO()
    for name in sorted(tensors):
        t = tensors[name].detach().cpu()
        dt = str(t.dtype).replace("torch.", "")
        if dt not in _DTYPES:
            raise ConfigError(f"cannot store tensor {name} of dtype {dt}")
        arr = np.ascontiguousarray(t.numpy()).astype(_DTYPES[dt], copy=False)
        index["tensors"][name] = {"shape": list(arr.shape), "dtype": dt, "offset": blob.tell()}
        blob.write(arr.tobytes())
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    os.close(fd)
    # fixed timestamps keep archives byte-identical across runs
    with zipfile.ZipFile(tmp, "w", zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo("index.json", (1980, 1, 1, 0, 0, 0)),
                    json.dumps(index, sort_keys=True, indent=1))
        zf.writestr(zipfile.ZipInfo("tensors.bin", (1980, 1, 1, 0, 0, 0)), blob.getvalue())
    os.replace(tmp, path)
    return path


def read_tensors(path):
    try:
        with zipfile.ZipFile(path) as zf:
            index = json.loads(zf.read("index.json"))
            raw = zf.read("tensors.bin")
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if index.get("format") != FORMAT:
        raise IoError(f"{path}: not a {FORMAT} archive")
    tensors = {}
    for name, spec in index["tensors"].items():
        dt = _DTYPES[spec["dtype"]]
        n = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype=dt, count=n, offset=spec["offset"]).reshape(spec["shape"])
        tensors[name] = torch.from_numpy(arr.copy())
    return tensors, index["meta"]


def save_checkpoint(path, model, optimizer=None, step: int = 0, extra: dict | None = None) -> Path:
    tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                for key, val in optimizer.state.get(p, {}).items():
                    if isinstance(val, torch.Tensor):
                        tensors[f"optim/{names[id(p)]}/{key}"] = val
    meta = {"step": int(step), "model_config": model.cfg.to_dict()}
    if extra:
        meta.update(extra)
    return write_tensors(path, tensors, meta)


def load_checkpoint(path, model=None, optimizer=None):
    """Restore into ``model`` (built from the stored config if None); returns (model, meta)."""
    from .config import ModelConfig
    from .model import KeywordSpotter

    tensors, meta = read_tensors(path)
    if model is None:
        model = KeywordSpotter(ModelConfig.from_dict(meta["model_config"]))
    state = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise ConfigError(f"checkpoint {path} does not fit the model: {exc}") from exc
    if optimizer is not None:
        params = dict(model.named_parameters())
        for k, v in tensors.items():
            if k.startswith("optim/"):
                name, key = k[len("optim/"):].rsplit("/", 1)
                optimizer.state[params[name]][key] = v.clone()
    return model, meta
