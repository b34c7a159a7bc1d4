"""Binary checkpoint container.

Layout (all integers little-endian unsigned 32-bit unless noted):

    magic      8 bytes, identifies the payload kind
    version    u32
    cfg_len    u32, followed by cfg_len bytes of UTF-8 JSON
    n_tensors  u32
    per tensor:
        name_len u32, name bytes (UTF-8)
        ndim     u32, then ndim u32 dims
        data     float64 little-endian, C order

Readers fail with FormatError on bad magic or version and with
TruncationError when the file ends early.
"""

import json
import struct

import numpy as np

from .errors import FormatError, TruncationError

VERSION = 1

AM_MAGIC = b"LFVAMCK1"
LFV_NET_MAGIC = b"LFVXTRC1"
LM_MAGIC = b"LFVLMCK1"


def _read_exact(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise TruncationError(path, n, len(data))
    return data


def _read_u32(fh, path):
    return struct.unpack("<I", _read_exact(fh, 4, path))[0]


def write_checkpoint(path, magic, config, arrays):
    """Write a checkpoint: config is a JSON-serializable dict, arrays an
    ordered list of (name, float array) pairs."""
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            nm = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nm)))
            fh.write(nm)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.astype("<f8").tobytes())


def read_checkpoint(path, magic):
    """Read a checkpoint written by write_checkpoint. Returns
    (config dict, list of (name, array))."""
    with open(path, "rb") as fh:
        got = _read_exact(fh, 8, path)
        if got != magic:
            raise FormatError(
                "%s: bad magic %r, expected %r" % (path, got, magic)
            )
        version = _read_u32(fh, path)
        if version != VERSION:
            raise FormatError(
                "%s: unsupported checkpoint version %d" % (path, version)
            )
        cfg_len = _read_u32(fh, path)
        try:
            config = json.loads(_read_exact(fh, cfg_len, path).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError("%s: corrupt config block: %s" % (path, exc))
        arrays = []
        n = _read_u32(fh, path)
        for _ in range(n):
            name_len = _read_u32(fh, path)
            name = _read_exact(fh, name_len, path).decode("utf-8")
            ndim = _read_u32(fh, path)
            shape = tuple(_read_u32(fh, path) for _ in range(ndim))
            count = 1
            for d in shape:
                count *= d
            raw = _read_exact(fh, count * 8, path)
            arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
            arrays.append((name, arr.reshape(shape)))
        return config, arrays
