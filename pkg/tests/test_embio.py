import struct

import numpy as np
import pytest

from causalmask.data import LabeledBatch
from causalmask.embio import decode_emb, encode_emb, expected_size, read_emb, write_emb
from causalmask.errors import (
    BadMagicError,
    BadVersionError,
    FlagLengthMismatchError,
    InvalidValueError,
    TruncatedError,
)
from causalmask.synthgen import make_benchmark


def batch(rng, n=5, d=3, labels=True, truth=True):
    return LabeledBatch(rng.normal(size=(n, d)), rng.integers(0, 2, n) if labels else None, "x",
                        (0, 2) if truth else None)


@pytest.mark.parametrize("labels,truth", [(True, True), (True, False), (False, True), (False, False)])
def test_round_trip(rng, labels, truth):
    b = batch(rng, labels=labels, truth=truth)
    raw = encode_emb(b)
    assert len(raw) == expected_size(5, 3, int(labels) | (2 * int(truth)))
    back = decode_emb(raw)
    assert np.array_equal(back.embeddings, b.embeddings.astype(np.float32))
    assert encode_emb(back) == raw
    if labels:
        assert np.array_equal(back.labels, b.labels)
    assert back.ground_truth == b.ground_truth


def test_empty_file_is_legal():
    raw = encode_emb(LabeledBatch(np.zeros((0, 4))))
    assert len(raw) == 20
    assert decode_emb(raw).n == 0


def test_canonical_batch_bytes_survive_disk(tmp_path):
    b = make_benchmark(7, sizes=(64, 16, 16)).val
    write_emb(tmp_path / "v.emb", b)
    raw = (tmp_path / "v.emb").read_bytes()
    write_emb(tmp_path / "w.emb", read_emb(tmp_path / "v.emb"))
    assert (tmp_path / "w.emb").read_bytes() == raw
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]


def test_truncation_offset_names_first_missing_float(rng):
    raw = encode_emb(batch(rng, n=4, d=3, labels=False, truth=False))
    for k in (0, 5, 11):
        with pytest.raises(TruncatedError) as exc:
            decode_emb(raw[: 20 + 4 * k + 2])
        assert exc.value.offset == 20 + 4 * k


def test_distinct_errors(rng):
    raw = bytearray(encode_emb(batch(rng)))
    with pytest.raises(BadMagicError) as exc:
        decode_emb(b"EMB2" + bytes(raw[4:]))
    assert exc.value.offset == 0
    bad_version = raw[:4] + struct.pack("<I", 2) + raw[8:]
    with pytest.raises(BadVersionError) as exc:
        decode_emb(bytes(bad_version))
    assert exc.value.offset == 4
    with pytest.raises(FlagLengthMismatchError):
        decode_emb(bytes(raw) + b"\x00")
    no_flags = raw[:16] + struct.pack("<I", 0) + raw[20:]
    with pytest.raises(FlagLengthMismatchError):
        decode_emb(bytes(no_flags))
    with pytest.raises(TruncatedError):
        decode_emb(bytes(raw[:-1]))
    bad_label = bytearray(raw)
    bad_label[20 + 4 * 15] = 7
    with pytest.raises(InvalidValueError) as exc:
        decode_emb(bytes(bad_label))
    assert exc.value.offset == 20 + 60
    with pytest.raises(TruncatedError):
        decode_emb(bytes(raw[:10]))


def test_write_rejects_non_finite(tmp_path):
    with pytest.raises(ValueError):
        write_emb(tmp_path / "x.emb", LabeledBatch(np.array([[np.nan]])))
    assert not list(tmp_path.iterdir())
