"""Binary checkpoint container.

Layout (little-endian)::

    8 bytes   magic b"MMBCKPT\\0"
    u32       format version
    u32       config length H, then H bytes of UTF-8 JSON
              ({"train": ..., "dims": ...}, keys sorted)
    u32       epoch
    u32       parameter count P, then P records:
                u16 name length, UTF-8 name, u32 ndim, u64[ndim] shape,
                f64[prod(shape)] values
    32 bytes  SHA-256 of everything above
"""
import hashlib
import json
import struct
from collections import OrderedDict

import numpy as np

from .autodiff import Tensor
from .errors import BridgeError, CheckpointError
from .model import DataDims, ParamStore

CKPT_MAGIC = b"MMBCKPT\x00"
CKPT_VERSION = 1


def checkpoint_bytes(store, config, epoch):
    header = json.dumps({"train": config.to_dict(), "dims": vars(store.dims)},
                        sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(header)), header,
             struct.pack("<II", epoch, len(store))]
    for name, t in store.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<I", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}Q", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, store, config, epoch):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(store, config, epoch))


def load_checkpoint(path):
    """Return ``(store, train_config, epoch)``."""
    from .trainer import TrainConfig

    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path}: bad magic bytes")
    if len(blob) < len(CKPT_MAGIC) + 8 + 32:
        raise CheckpointError(f"{path}: truncated")
    body, digest = blob[:-32], blob[-32:]
    pos = len(CKPT_MAGIC)
    version, hlen = struct.unpack_from("<II", body, pos)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    pos += 8
    try:
        header = json.loads(body[pos:pos + hlen].decode())
        pos += hlen
        epoch, count = struct.unpack_from("<II", body, pos)
        pos += 8
        arrays = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(body):
                raise CheckpointError(f"{path}: truncated parameter {name}")
            arrays[name] = np.frombuffer(body, "<f8", size, pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except (ValueError, KeyError, struct.error) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    if pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    try:
        config = TrainConfig.from_dict(header["train"])
        dims = DataDims(**header["dims"])
        expected = ParamStore.initialize(config.model, dims, 0)
    except (KeyError, TypeError, BridgeError) as exc:
        raise CheckpointError(f"{path}: invalid header ({exc})") from None
    want = {k: t.data.shape for k, t in expected.items()}
    got = {k: v.shape for k, v in arrays.items()}
    if want != got:
        raise CheckpointError(f"{path}: parameters do not match the stored model config")
    store = ParamStore(config.model, dims,
                       OrderedDict((k, Tensor(v, True)) for k, v in arrays.items()))
    return store, config, epoch
