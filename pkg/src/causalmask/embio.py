"""EMB1 embedding files.

Layout (little-endian)::

    offset 0   b"EMB1"
    offset 4   u32 version (1)
    offset 8   u32 n
    offset 12  u32 d
    offset 16  u32 flags   bit0: labels present, bit1: truth mask present
    offset 20  n*d float32 embeddings, row-major
               n label bytes (0/1)           if bit0
               d truth-mask bytes (0/1)      if bit1
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .data import LabeledBatch
from .errors import (
    BadMagicError,
    BadVersionError,
    FlagLengthMismatchError,
    InvalidValueError,
    TruncatedError,
)

MAGIC = b"EMB1"
VERSION = 1
HEADER = struct.Struct("<4sIIII")
FLAG_LABELS = 1
FLAG_TRUTH = 2


def expected_size(n, d, flags):
    return HEADER.size + 4 * n * d + (n if flags & FLAG_LABELS else 0) + (d if flags & FLAG_TRUTH else 0)


def encode_emb(batch: LabeledBatch) -> bytes:
    E = batch.embeddings
    if not np.all(np.isfinite(E)):
        raise ValueError("embeddings must be finite")
    n, d = E.shape
    flags = (FLAG_LABELS if batch.labels is not None else 0) | (
        FLAG_TRUTH if batch.ground_truth is not None else 0
    )
    E32 = E.astype("<f4")
    if not np.all(np.isfinite(E32)):
        raise ValueError("embeddings overflow float32")
    parts = [HEADER.pack(MAGIC, VERSION, n, d, flags), E32.tobytes(order="C")]
    if batch.labels is not None:
        parts.append(batch.labels.astype(np.uint8).tobytes())
    if batch.ground_truth is not None:
        parts.append(batch.truth_mask.astype(np.uint8).tobytes())
    return b"".join(parts)


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_emb(path, batch: LabeledBatch):
    atomic_write(path, encode_emb(batch))


def decode_emb(data: bytes, domain_id="") -> LabeledBatch:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {bytes(data[:4])!r}", 0)
    if len(data) < HEADER.size:
        raise TruncatedError("header ends early", len(data))
    _, version, n, d, flags = HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise BadVersionError(f"unsupported version {version}", 4)
    if flags & ~(FLAG_LABELS | FLAG_TRUTH):
        raise InvalidValueError(f"unknown flag bits {flags:#x}", 16)

    n_floats = n * d
    payload_end = HEADER.size + 4 * n_floats
    if len(data) < payload_end:
        first_missing = (len(data) - HEADER.size) // 4
        raise TruncatedError(f"embedding payload ends after {first_missing} of {n_floats} floats",
                             HEADER.size + 4 * first_missing)
    E = np.frombuffer(data, dtype="<f4", count=n_floats, offset=HEADER.size).astype(np.float64)
    E = E.reshape(n, d)
    if not np.all(np.isfinite(E)):
        bad = int(np.flatnonzero(~np.isfinite(E.reshape(-1)))[0])
        raise InvalidValueError("non-finite embedding value", HEADER.size + 4 * bad)

    pos = payload_end
    labels = truth = None
    if flags & FLAG_LABELS:
        if len(data) < pos + n:
            raise TruncatedError("label bytes end early", len(data))
        raw = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos)
        if np.any(raw > 1):
            raise InvalidValueError("label byte not 0/1", pos + int(np.flatnonzero(raw > 1)[0]))
        labels = raw.astype(np.float64)
        pos += n
    if flags & FLAG_TRUTH:
        if len(data) < pos + d:
            raise TruncatedError("truth-mask bytes end early", len(data))
        raw = np.frombuffer(data, dtype=np.uint8, count=d, offset=pos)
        if np.any(raw > 1):
            raise InvalidValueError("truth-mask byte not 0/1", pos + int(np.flatnonzero(raw > 1)[0]))
        truth = tuple(np.flatnonzero(raw).tolist())
        pos += d
    if len(data) != pos:
        raise FlagLengthMismatchError(
            f"file has {len(data)} bytes but header and flags describe {pos}", pos
        )
    return LabeledBatch(E, labels, domain_id, truth)


def read_emb(path) -> LabeledBatch:
    path = Path(path)
    return decode_emb(path.read_bytes(), domain_id=path.stem)
