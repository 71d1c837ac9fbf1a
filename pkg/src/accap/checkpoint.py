"""Binary checkpoints.

Layout (little-endian)::

    b"ACCAP" u8 version
    u8 len, kind (ascii)             policy | value | reward
    4 x u32                          V, D_h, D_e, D_emb (0 where unused)
    u32 len, metadata (sorted JSON)  stage, epoch, seed, vocab, model extras
    u32 count, then per tensor:      u16 len, name; u8 ndim; ndim x u32; float64 data
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .policy_net import PolicyNet
from .reward import RewardModel
from .value_net import ValueNet

MAGIC = b"ACCAP"
VERSION = 1
KINDS = ("policy", "value", "reward")


class CheckpointError(ValueError):
    pass


def _kind_of(model) -> str:
    if isinstance(model, PolicyNet):
        return "policy"
    if isinstance(model, ValueNet):
        return "value"
    if isinstance(model, RewardModel):
        return "reward"
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def _dims(model) -> tuple[int, int, int, int]:
    if isinstance(model, RewardModel):
        return model.vocab_size, 0, model.d_e, model.d_emb
    return model.vocab_size, model.d_h, model.d_e, 0


def _extras(model) -> dict[str, Any]:
    extras = {"feat_dim": model.feat_dim}
    if isinstance(model, ValueNet):
        extras["hidden_layers"] = model.hidden_layers
    if isinstance(model, RewardModel):
        extras["margin"] = model.margin
        extras["alpha"] = model.alpha
    return extras


def dumps(model, *, stage: str = "", epoch: int = 0, seed: int = 0, vocab: list[str] | None = None) -> bytes:
    kind = _kind_of(model).encode("ascii")
    meta = {"stage": stage, "epoch": epoch, "seed": seed, "vocab": vocab, "model": _extras(model)}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<B", VERSION), struct.pack("<B", len(kind)), kind,
           struct.pack("<4I", *_dims(model)), struct.pack("<I", len(meta_bytes)), meta_bytes,
           struct.pack("<I", len(model.params))]
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        nb = name.encode("utf-8")
        out += [struct.pack("<H", len(nb)), nb, struct.pack("<B", arr.ndim),
                struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_header(data: bytes) -> tuple[dict[str, Any], _Reader]:
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not an ACCAP checkpoint (bad magic)")
    r = _Reader(data)
    r.take(len(MAGIC))
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (klen,) = r.unpack("<B")
    kind = r.take(klen).decode("ascii")
    if kind not in KINDS:
        raise CheckpointError(f"unknown model kind {kind!r}")
    V, d_h, d_e, d_emb = r.unpack("<4I")
    (mlen,) = r.unpack("<I")
    meta = json.loads(r.take(mlen).decode("utf-8"))
    header = {"version": version, "kind": kind, "V": V, "D_h": d_h, "D_e": d_e, "D_emb": d_emb, **meta}
    return header, r


def loads(data: bytes, kind: str | None = None, vocab_size: int | None = None):
    """Rebuild a model; dimension or kind mismatches raise before any tensor
    data is interpreted."""
    header, r = read_header(data)
    if kind is not None and header["kind"] != kind:
        raise CheckpointError(f"expected a {kind} checkpoint, found {header['kind']}")
    if vocab_size is not None and header["V"] != vocab_size:
        raise CheckpointError(f"checkpoint vocabulary size {header['V']} != expected {vocab_size}")
    extras = header["model"]
    cls = {"policy": PolicyNet, "value": ValueNet, "reward": RewardModel}[header["kind"]]
    if cls is PolicyNet:
        shapes = PolicyNet.shapes(header["V"], header["D_h"], header["D_e"], extras["feat_dim"])
    elif cls is ValueNet:
        shapes = ValueNet.shapes(header["V"], header["D_h"], header["D_e"], extras["hidden_layers"], extras["feat_dim"])
    else:
        shapes = RewardModel.shapes(header["V"], header["D_emb"], header["D_e"], extras["feat_dim"])
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        if name not in shapes or tuple(shape) != tuple(shapes[name]):
            raise CheckpointError(f"tensor {name}{tuple(shape)} inconsistent with header dims")
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if set(params) != set(shapes):
        raise CheckpointError(f"missing tensors: {sorted(set(shapes) - set(params))}")
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    if cls is PolicyNet:
        model = PolicyNet(params, header["V"], header["D_h"], header["D_e"], extras["feat_dim"])
    elif cls is ValueNet:
        model = ValueNet(params, header["V"], header["D_h"], header["D_e"], extras["hidden_layers"], extras["feat_dim"])
    else:
        model = RewardModel(params, header["V"], header["D_emb"], header["D_e"], extras["margin"], extras["alpha"],
                            extras["feat_dim"])
    return model, header


def save(path: str | Path, model, **meta) -> None:
    Path(path).write_bytes(dumps(model, **meta))


def load(path: str | Path, kind: str | None = None, vocab_size: int | None = None):
    return loads(Path(path).read_bytes(), kind, vocab_size)


def describe(path: str | Path) -> str:
    data = Path(path).read_bytes()
    header, r = read_header(data)
    lines = [f"{k}: {header[k]}" for k in ("version", "kind", "V", "D_h", "D_e", "D_emb", "stage", "epoch", "seed")]
    lines.append(f"model: {json.dumps(header['model'], sort_keys=True)}")
    vocab = header.get("vocab")
    lines.append(f"vocab: {len(vocab) if vocab else 0} tokens")
    (count,) = r.unpack("<I")
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        r.take(8 * int(np.prod(shape, dtype=np.int64)))
        lines.append(f"  {name} {tuple(shape)}")
    return "\n".join(lines)
