"""Checkpoint files.

Layout: ``b"SLM1"``, a little-endian u32 header length, a UTF-8 JSON
manifest ``{formatVersion, hyperparams, vocab, adam, tensors: [{name, shape,
byteOffset}]}``, then the contiguous little-endian float32 payload.
Optimizer moments are stored as tensors named ``adam.m/<param>`` and
``adam.v/<param>``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..nn.optim import AdamState
from .hyper import Hyperparams
from .network import SLM
from .vocab import Vocab

MAGIC = b"SLM1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(model: SLM, adam: AdamState | None = None) -> bytes:
    tensors = {k: model.params[k] for k in sorted(model.params)}
    adam_meta = None
    if adam is not None:
        adam_meta = {"t": adam.t, "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
                     "decayFactor": adam.decay_factor, "decayEvery": adam.decay_every}
        for k in sorted(adam.m):
            tensors[f"adam.m/{k}"] = adam.m[k]
            tensors[f"adam.v/{k}"] = adam.v[k]
    entries, chunks, off = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "byteOffset": off})
        chunks.append(data)
        off += len(data)
    manifest = {"formatVersion": FORMAT_VERSION, "hyperparams": model.hyper.to_dict(),
                "vocab": model.vocab.words, "adam": adam_meta, "tensors": entries}
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> tuple[SLM, AdamState | None]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    if len(blob) < 8:
        raise CheckpointError("truncated checkpoint")
    (hlen,) = struct.unpack("<I", blob[4:8])
    try:
        manifest = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"bad manifest: {e}") from None
    if manifest.get("formatVersion") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported formatVersion {manifest.get('formatVersion')!r}")
    payload = memoryview(blob)[8 + hlen:]
    tensors = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        start, end = e["byteOffset"], e["byteOffset"] + 4 * n
        if end > len(payload):
            raise CheckpointError(f"payload too short for tensor {e['name']}")
        tensors[e["name"]] = np.frombuffer(payload[start:end], dtype="<f4").reshape(e["shape"]).astype(np.float32)
    hyper = Hyperparams.from_dict(manifest["hyperparams"])
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    model = SLM(hyper, Vocab(manifest["vocab"]), params)
    adam = None
    meta = manifest.get("adam")
    if meta is not None:
        adam = AdamState(lr=meta["lr"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"],
                         decay_factor=meta["decayFactor"], decay_every=meta["decayEvery"], t=meta["t"])
        for k, v in tensors.items():
            if k.startswith("adam.m/"):
                adam.m[k[7:]] = v
            elif k.startswith("adam.v/"):
                adam.v[k[7:]] = v
    return model, adam


def save_checkpoint(path, model: SLM, adam: AdamState | None = None) -> None:
    Path(path).write_bytes(dumps(model, adam))


def load_checkpoint(path) -> tuple[SLM, AdamState | None]:
    return loads(Path(path).read_bytes())
