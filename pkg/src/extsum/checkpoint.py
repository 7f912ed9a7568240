"""Binary model checkpoints: magic + version + JSON header + raw little-endian
tensor blocks. The header carries the hyperparameters, training history,
vocabulary, optimizer scalars, and the RNG state, so a loaded checkpoint
resumes its run bit-identically."""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from extsum.autodiff import Tensor
from extsum.config import RunConfig
from extsum.errors import PipelineError
from extsum.optim import AdamState
from extsum.rng import RngStream
from extsum.textprep import Vocabulary

MAGIC = b"XSUMCKPT"
VERSION = 1
_DTYPES = {"<f4", "<f8"}


def _dtype_tag(arr: np.ndarray) -> str:
    tag = np.dtype(arr.dtype).newbyteorder("<").str
    if tag not in _DTYPES:
        raise PipelineError("checkpoint-mismatch",
                            f"unsupported tensor dtype {arr.dtype}")
    return tag


def _config_dict(config: RunConfig) -> dict:
    d = dataclasses.asdict(config)
    d["kernel_widths"] = list(d["kernel_widths"])
    return d


def save_checkpoint(path, model: dict, rng: RngStream,
                    epoch: int | None = None) -> None:
    """Serialize a trained (or in-training) model dict plus the RNG state."""
    params = model["params"]
    manifest, blocks = [], []
    for name in sorted(params):
        arr = params[name].data
        manifest.append({"name": name, "role": "param",
                         "shape": list(arr.shape),
                         "dtype": _dtype_tag(arr)})
        blocks.append(arr)
    adam = model.get("adam")
    adam_meta = None
    if adam is not None:
        for role, table in (("adam_m", adam.m), ("adam_v", adam.v)):
            for name in sorted(table):
                arr = table[name]
                manifest.append({"name": name, "role": role,
                                 "shape": list(arr.shape),
                                 "dtype": _dtype_tag(arr)})
                blocks.append(arr)
        adam_meta = {"lr": adam.lr, "beta1": adam.beta1,
                     "beta2": adam.beta2, "eps": adam.eps, "t": adam.t}

    header = {
        "kind": model["kind"],
        "epoch": len(model.get("history", [])) if epoch is None else epoch,
        "config": _config_dict(model["config"]),
        "history": model.get("history", []),
        "vocab": model["vocab"].to_dict(),
        "rng": rng.state(),
        "adam": adam_meta,
        "tensors": manifest,
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for arr in blocks:
            fh.write(np.ascontiguousarray(arr).astype(
                _dtype_tag(arr), copy=False).tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise PipelineError("checkpoint-mismatch", "truncated checkpoint")
    return buf


def load_checkpoint(path) -> tuple[dict, RngStream]:
    """Rebuild the model dict and the RNG stream saved by save_checkpoint."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise PipelineError("checkpoint-mismatch", "bad magic bytes")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise PipelineError(
                "checkpoint-mismatch",
                f"format version {version}, expected {VERSION}")
        (hlen,) = struct.unpack("<Q", _read_exact(fh, 8))
        try:
            header = json.loads(_read_exact(fh, hlen).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise PipelineError("checkpoint-mismatch", "corrupt header")

        tensors = {"param": {}, "adam_m": {}, "adam_v": {}}
        for entry in header["tensors"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, count * dtype.itemsize)
            arr = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
            tensors[entry["role"]][entry["name"]] = arr
        if fh.read(1):
            raise PipelineError("checkpoint-mismatch",
                                "trailing bytes after tensor blocks")

    params = {name: Tensor(arr, requires_grad=True)
              for name, arr in tensors["param"].items()}
    model = {
        "kind": header["kind"],
        "params": params,
        "vocab": Vocabulary.from_dict(header["vocab"]),
        "config": RunConfig(**header["config"]),
        "history": header["history"],
    }
    if header["adam"] is not None:
        meta = header["adam"]
        model["adam"] = AdamState(lr=meta["lr"], beta1=meta["beta1"],
                                  beta2=meta["beta2"], eps=meta["eps"],
                                  t=meta["t"], m=tensors["adam_m"],
                                  v=tensors["adam_v"])
    return model, RngStream.from_state(header["rng"])
