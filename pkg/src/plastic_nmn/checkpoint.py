"""Checkpoint serialization: JSON metadata plus packed float32 blobs.

A checkpoint directory holds checkpoint.json (model kind, resolved
config, seed, fold, epoch, optimizer step, and the blob table) and
params.bin (all named arrays as raw little-endian float32, concatenated
in blob-table order).  Arrays come back as float64; since training
rounds state to float32 at every epoch boundary, a load/save round-trip
is bit-exact.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .models import build_model
from .preprocess import DataError
from .training import AdamState, Standardizer, TrainConfig

FORMAT = "plastic-nmn-checkpoint/1"


def save_checkpoint(directory, meta, arrays):
    """Write metadata plus named float32 blobs; meta must be JSON-ready."""
    os.makedirs(directory, exist_ok=True)
    table = []
    offset = 0
    with open(os.path.join(directory, "params.bin"), "wb") as fh:
        for name in sorted(arrays):
            blob = np.ascontiguousarray(arrays[name], dtype="<f4").tobytes()
            fh.write(blob)
            table.append({"name": name, "shape": list(np.shape(arrays[name])),
                          "offset": offset, "dtype": "f32le"})
            offset += len(blob)
    payload = dict(meta)
    payload["format"] = FORMAT
    payload["arrays"] = table
    with open(os.path.join(directory, "checkpoint.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def load_checkpoint(directory):
    """Read back (meta, arrays); every declared blob must be present."""
    path = os.path.join(directory, "checkpoint.json")
    try:
        with open(path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no checkpoint.json in {directory}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint.json is not valid JSON: {exc}") from None
    if meta.get("format") != FORMAT:
        raise DataError(f"unsupported checkpoint format {meta.get('format')!r}")
    raw = np.fromfile(os.path.join(directory, "params.bin"), dtype="<f4")
    arrays = {}
    for spec in meta["arrays"]:
        size = int(np.prod(spec["shape"])) if spec["shape"] else 1
        start = spec["offset"] // 4
        chunk = raw[start: start + size]
        if chunk.size != size:
            raise DataError(f"params.bin is truncated at array {spec['name']!r}")
        arrays[spec["name"]] = chunk.astype(np.float64).reshape(spec["shape"])
    return meta, arrays


# ---------------------------------------------------------------------------
# training-state round trip


def pack_training_state(config, fold, result):
    """(meta, arrays) snapshot of one fold's model, scaler and optimizer."""
    arrays = dict(result.model.arrays())
    arrays["scaler.mean"] = result.scaler.mean
    arrays["scaler.std"] = result.scaler.std
    for name, buf in result.adam.m.items():
        arrays[f"adam.m.{name}"] = buf
    for name, buf in result.adam.v.items():
        arrays[f"adam.v.{name}"] = buf
    meta = {
        "model": config.model,
        "config": config.to_dict(),
        "seed": config.seed,
        "fold": fold,
        "epoch": result.epochs_run,
        "adam_t": result.adam.t,
        "loss_curve": [float(v) for v in result.loss_curve],
    }
    return meta, arrays


def restore_training_state(directory):
    """(config, model, scaler, adam, meta) rebuilt from a checkpoint."""
    meta, arrays = load_checkpoint(directory)
    config = TrainConfig(**meta["config"])
    model = build_model(config.model, np.random.default_rng(0), width=config.k,
                        n_slots=config.l, eta=config.eta,
                        n_classes=config.n_classes)
    model.load_arrays(arrays)
    if "scaler.mean" not in arrays or "scaler.std" not in arrays:
        raise DataError("checkpoint is missing the standardizer arrays")
    scaler = Standardizer(arrays["scaler.mean"], arrays["scaler.std"])
    adam = AdamState(model.trainable())
    adam.t = int(meta.get("adam_t", 0))
    for name in adam.m:
        key_m, key_v = f"adam.m.{name}", f"adam.v.{name}"
        if key_m in arrays:
            adam.m[name][:] = arrays[key_m]
        if key_v in arrays:
            adam.v[name][:] = arrays[key_v]
    return config, model, scaler, adam, meta
