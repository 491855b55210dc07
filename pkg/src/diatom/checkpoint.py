"""Single-file checkpoint: config, vocabulary and little-endian float32 tensors in a zip."""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .corpus import Vocabulary
from .model import DIATOM, ModelConfig

_EPOCH = (1980, 1, 1, 0, 0, 0)
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path: str | Path, model: DIATOM, vocab: Vocabulary, extra: dict | None = None) -> None:
    state = model.state_dict()
    manifest = {}
    with zipfile.ZipFile(path, "w") as zf:
        _member(zf, "config.json", json.dumps(
            {"format": FORMAT_VERSION, "model": model.cfg.to_dict(), "extra": extra or {}},
            sort_keys=True, indent=2).encode())
        _member(zf, "vocab.json", json.dumps(list(vocab.tokens)).encode())
        for name in sorted(state):
            arr = state[name].detach().cpu().numpy().astype("<f4")
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            _member(zf, f"tensors/{name}.npy", buf.getvalue())
            manifest[name] = list(arr.shape)
        _member(zf, "manifest.json", json.dumps(manifest, sort_keys=True).encode())


def load_checkpoint(path: str | Path) -> tuple[DIATOM, Vocabulary, dict]:
    """Rebuild the model and vocabulary; every tensor shape is validated against the config."""
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("config.json"))
            tokens = json.loads(zf.read("vocab.json"))
            manifest = json.loads(zf.read("manifest.json"))
            arrays = {
                name: np.lib.format.read_array(io.BytesIO(zf.read(f"tensors/{name}.npy")), allow_pickle=False)
                for name in manifest
            }
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, ValueError, OSError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    try:
        cfg = ModelConfig.from_dict(meta["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid model config in {path}: {exc}") from exc
    vocab = Vocabulary.from_tokens(tokens)
    if vocab.size != cfg.V:
        raise CheckpointError(f"vocabulary has {vocab.size} tokens but config says V={cfg.V}")

    model = DIATOM(cfg)
    expected = model.state_dict()
    if set(expected) != set(arrays):
        missing, unexpected = set(expected) - set(arrays), set(arrays) - set(expected)
        raise CheckpointError(f"tensor names mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
    state = {}
    for name, ref in expected.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(f"tensor {name}: shape {arr.shape} does not match config {tuple(ref.shape)}")
        state[name] = torch.from_numpy(arr.astype(np.float32)).to(ref.dtype)
    model.load_state_dict(state)
    model.eval()
    return model, vocab, meta.get("extra", {})
