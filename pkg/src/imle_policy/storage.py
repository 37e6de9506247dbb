"""Binary checkpoint and dataset files, plus CSV output.

Both binary formats share one container layout::

    magic            8 bytes   b"IMLEv1\\0\\0" (checkpoint) or b"IMLEDSv1" (dataset)
    header_len       uint32, little-endian
    header           header_len bytes of UTF-8 JSON (keys sorted)
    payload          float64 little-endian arrays, row-major, back to back

Checkpoint payload: W0, b0, W1, b1, ... in layer order; W_k has shape
``[layer_sizes[k], layer_sizes[k+1]]``. Dataset payload: observations
``[N, obs_size]`` then actions ``[N, T_p, action_dim]``, both unnormalized.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .baseline_fm import VelocityNet
from .tensor_nn import GeneratorNet

CKPT_MAGIC = b"IMLEv1\x00\x00"
DATA_MAGIC = b"IMLEDSv1"
_LE_F64 = np.dtype("<f8")


class FormatError(ValueError):
    pass


def _write_container(path, magic: bytes, header: dict, arrays) -> None:
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.writelines(np.ascontiguousarray(a, dtype=_LE_F64).tobytes() for a in arrays)


def _read_container(path, magic: bytes):
    raw = Path(path).read_bytes()
    if raw[:8] != magic:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}, expected {magic!r}")
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + n].decode())
    payload = np.frombuffer(raw, dtype=_LE_F64, offset=12 + n)
    return header, payload


def _take(payload: np.ndarray, offset: int, shape) -> tuple[np.ndarray, int]:
    size = int(np.prod(shape))
    if offset + size > payload.size:
        raise FormatError("payload is truncated")
    return payload[offset:offset + size].reshape(shape).astype(np.float64), offset + size


def save_checkpoint(path, net: GeneratorNet, meta: dict) -> None:
    """``meta`` carries task, horizons, normalizer stats and anything else JSON-able."""
    header = dict(meta)
    header.update(
        kind=net.kind,
        layer_sizes=list(net.layer_sizes),
        activation=net.activation,
        out_shape=list(net.out_shape),
    )
    _write_container(path, CKPT_MAGIC, header, net.params())


def load_checkpoint(path) -> tuple[GeneratorNet, dict]:
    header, payload = _read_container(path, CKPT_MAGIC)
    cls = {"imle": GeneratorNet, "velocity": VelocityNet}.get(header["kind"])
    if cls is None:
        raise FormatError(f"unknown net kind {header['kind']!r}")
    sizes = header["layer_sizes"]
    weights, biases, off = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w, off = _take(payload, off, (fan_in, fan_out))
        b, off = _take(payload, off, (fan_out,))
        weights.append(w)
        biases.append(b)
    if off != payload.size:
        raise FormatError(f"{payload.size - off} trailing values in checkpoint")
    net = cls(sizes, weights, biases, tuple(header["out_shape"]), header["activation"])
    return net, header


def save_dataset(path, header: dict, observations: np.ndarray, actions: np.ndarray) -> None:
    header = dict(header)
    header.update(n_demos=int(observations.shape[0]), obs_size=int(observations.shape[1]),
                  action_shape=list(actions.shape[1:]))
    _write_container(path, DATA_MAGIC, header, [observations, actions])


def load_dataset(path) -> tuple[dict, np.ndarray, np.ndarray]:
    header, payload = _read_container(path, DATA_MAGIC)
    n = header["n_demos"]
    obs, off = _take(payload, 0, (n, header["obs_size"]))
    acts, off = _take(payload, off, (n, *header["action_shape"]))
    if off != payload.size:
        raise FormatError(f"{payload.size - off} trailing values in dataset")
    return header, obs, acts


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path
