import numpy as np
import pytest

from causalmask.checkpoint import _bundle_bytes, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from causalmask.errors import BadMagicError, BadVersionError, TruncatedError
from causalmask.synthgen import make_benchmark
from causalmask.trainer import TrainConfig, fit, initial_state, train_step
from causalmask.trainer import FitProgress, TrainHistory


@pytest.fixture(scope="module")
def small():
    return make_benchmark(3, sizes=(512, 128, 64))


def test_fit_resume_is_bit_exact(small):
    cfg = TrainConfig(max_epochs=4, batch_size=64, seed=5)
    saved = {}

    def grab(progress):
        if progress.epoch == 2:
            saved["raw"] = encode_checkpoint(progress, cfg)

    full, hist = fit(small.train, small.val, cfg, on_epoch=grab)
    cfg2, progress = decode_checkpoint(saved["raw"])
    assert cfg2 == cfg
    steps_before = progress.state.step
    resumed, hist2 = fit(small.train, small.val, cfg2, resume=progress)
    assert progress.state.step - steps_before >= 10
    assert _bundle_bytes(resumed) == _bundle_bytes(full)
    assert hist2.to_dict() == hist.to_dict()


def test_step_level_resume(small, tmp_path):
    cfg = TrainConfig(seed=9)
    state, shuffle, noise = initial_state(small.train.d, cfg)
    E, y = small.train.embeddings[:128], small.train.labels[:128]
    for _ in range(3):
        state, _ = train_step(state, E, y, cfg, noise)
    prog = FitProgress(state, 0, TrainHistory(), state.bundle.copy(), np.inf, 0, shuffle, noise)
    save_checkpoint(tmp_path / "a.ckpt", prog, cfg)
    _, loaded = load_checkpoint(tmp_path / "a.ckpt")
    a, b = state, loaded.state
    for _ in range(12):
        a, _ = train_step(a, E, y, cfg, noise)
        b, _ = train_step(b, E, y, cfg, loaded.noise)
    assert _bundle_bytes(a.bundle) == _bundle_bytes(b.bundle)
    assert all(
        np.array_equal(m1, m2)
        for p in a.optim
        for m1, m2 in zip(a.optim[p].second_moment, b.optim[p].second_moment)
    )


def test_same_seed_same_bytes(small):
    cfg = TrainConfig(max_epochs=2, batch_size=128, seed=1)
    out = []
    for _ in range(2):
        keep = {}
        fit(small.train, small.val, cfg, on_epoch=lambda p: keep.__setitem__("raw", encode_checkpoint(p, cfg)))
        out.append(keep["raw"])
    assert out[0] == out[1]


def test_corrupt_checkpoints(small):
    cfg = TrainConfig(max_epochs=1, batch_size=128)
    keep = {}
    fit(small.train, small.val, cfg, on_epoch=lambda p: keep.__setitem__("raw", encode_checkpoint(p, cfg)))
    raw = keep["raw"]
    with pytest.raises(BadMagicError):
        decode_checkpoint(b"XXXX" + raw[4:])
    with pytest.raises(BadVersionError):
        decode_checkpoint(raw[:4] + (7).to_bytes(4, "little") + raw[8:])
    with pytest.raises(TruncatedError):
        decode_checkpoint(raw[:-5])
