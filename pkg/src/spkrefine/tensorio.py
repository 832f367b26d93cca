"""Binary file formats.

Tensor container (weights, conditioning sequences), all little-endian::

    magic      4s   b"SPKT"
    version    u16  1
    kind       u8 length + ascii      ("encoder-weights", "conditioning", ...)
    meta       u32 length + utf-8 JSON (config echo, free-form metadata)
    n_tensors  u32
    table      per tensor: u16 name length + utf-8 name, u8 ndim, u32 dims...
    payload    float32 tensors, row-major, in table order

Embedding file::

    magic      4s   b"SPKE"
    version    u16  1
    dim        u32
    normalized u8
    payload    dim x float32
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, EncoderWeights

TENSOR_MAGIC = b"SPKT"
EMBED_MAGIC = b"SPKE"
FORMAT_VERSION = 1
_F32 = np.dtype("<f4")


class TensorFileError(Exception):
    """Base class for unreadable or inconsistent binary files."""


class BadMagicError(TensorFileError):
    pass


class VersionError(TensorFileError):
    pass


class TruncatedError(TensorFileError):
    pass


class ShapeMismatchError(TensorFileError):
    pass


class ConfigMismatchError(TensorFileError):
    pass


class KindError(TensorFileError):
    """Valid container, but holding a different kind of payload."""


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"{self.path}: file truncated at byte {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


def _check_magic_version(r: _Reader, magic):
    got = r.take(4) if len(r.buf) >= 4 else r.buf
    if got != magic:
        raise BadMagicError(f"{r.path}: bad magic {got!r}, expected {magic!r}")
    (version,) = r.unpack("H")
    if version != FORMAT_VERSION:
        raise VersionError(f"{r.path}: format version {version}, this build reads {FORMAT_VERSION}")


# ---------------------------------------------------------------- tensor container

def write_tensors(path, kind: str, tensors: dict, meta: dict | None = None):
    parts = [TENSOR_MAGIC, struct.pack("<H", FORMAT_VERSION)]
    kb = kind.encode("ascii")
    parts.append(struct.pack("<B", len(kb)) + kb)
    mb = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(mb)) + mb)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        shape = np.shape(arr)
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
    for arr in tensors.values():
        parts.append(np.ascontiguousarray(arr, dtype=_F32).tobytes())
    Path(path).write_bytes(b"".join(parts))


def _read_header(path):
    r = _Reader(Path(path).read_bytes(), path)
    _check_magic_version(r, TENSOR_MAGIC)
    (klen,) = r.unpack("B")
    kind = r.take(klen).decode("ascii", errors="replace")
    (mlen,) = r.unpack("I")
    try:
        meta = json.loads(r.take(mlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorFileError(f"{path}: corrupt metadata block") from exc
    (n,) = r.unpack("I")
    table = []
    for _ in range(n):
        (nlen,) = r.unpack("H")
        name = r.take(nlen).decode("utf-8", errors="replace")
        (ndim,) = r.unpack("B")
        shape = r.unpack(f"{ndim}I") if ndim else ()
        table.append((name, tuple(shape)))
    return r, kind, meta, table


def _read_payload(r: _Reader, table):
    out = {}
    for name, shape in table:
        count = int(np.prod(shape)) if shape else 1
        raw = r.take(count * _F32.itemsize)
        out[name] = np.frombuffer(raw, dtype=_F32).reshape(shape).astype(np.float32)
    if r.pos != len(r.buf):
        raise TensorFileError(f"{r.path}: {len(r.buf) - r.pos} unexpected trailing bytes")
    return out


def read_tensors(path, kind: str | None = None):
    """Return ``(kind, meta, tensors)``; optionally insist on ``kind``."""
    r, got_kind, meta, table = _read_header(path)
    if kind is not None and got_kind != kind:
        raise KindError(f"{path}: holds {got_kind!r}, expected {kind!r}")
    return got_kind, meta, _read_payload(r, table)


# ---------------------------------------------------------------- encoder weights

WEIGHTS_KIND = "encoder-weights"


def save_weights(w: EncoderWeights, path):
    """Write weights as float32 (float64 weights are rounded)."""
    w.validate()
    write_tensors(path, WEIGHTS_KIND, w.tensors(), {"config": w.config.as_dict()})


def load_weights(path, expected_config: EncoderConfig | None = None) -> EncoderWeights:
    r, kind, meta, table = _read_header(path)
    if kind != WEIGHTS_KIND:
        raise KindError(f"{path}: holds {kind!r}, not encoder weights")
    try:
        cfg = EncoderConfig(**meta["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigMismatchError(f"{path}: invalid config echo ({exc})") from exc
    if expected_config is not None and cfg != expected_config:
        raise ConfigMismatchError(
            f"{path}: weights were saved for {cfg.as_dict()}, expected {expected_config.as_dict()}"
        )
    expected = {**cfg.param_shapes(), **cfg.buffer_shapes()}
    got = dict(table)
    if set(got) != set(expected):
        raise ShapeMismatchError(f"{path}: tensor table does not match the config echo")
    for name, shape in expected.items():
        if got[name] != tuple(shape):
            raise ShapeMismatchError(f"{path}: {name} has shape {got[name]}, config implies {shape}")
    tensors = _read_payload(r, table)
    params = {k: tensors[k] for k in cfg.param_shapes()}
    buffers = {k: tensors[k] for k in cfg.buffer_shapes()}
    w = EncoderWeights(cfg, params, buffers)
    w.validate()
    return w


# ---------------------------------------------------------------- embeddings

def save_embedding(vec, path, normalized=True):
    vec = np.asarray(vec)
    if vec.ndim != 1:
        raise ValueError("embedding must be a vector")
    header = EMBED_MAGIC + struct.pack("<HIB", FORMAT_VERSION, len(vec), int(bool(normalized)))
    Path(path).write_bytes(header + np.ascontiguousarray(vec, dtype=_F32).tobytes())


def load_embedding(path):
    """Return ``(vector, normalized)``."""
    r = _Reader(Path(path).read_bytes(), path)
    _check_magic_version(r, EMBED_MAGIC)
    dim, normalized = r.unpack("IB")
    vec = np.frombuffer(r.take(4 * dim), dtype=_F32).astype(np.float32)
    if r.pos != len(r.buf):
        raise ShapeMismatchError(f"{path}: payload longer than the declared dimension {dim}")
    return vec, bool(normalized)


def is_embedding_file(path) -> bool:
    with open(path, "rb") as f:
        return f.read(4) == EMBED_MAGIC
