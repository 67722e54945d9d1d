"""CKPT training checkpoints.

Layout (little-endian): ``b"CKPT"``, u32 version, then sections of
``tag (4 bytes) | u64 length | payload``. Sections:

* ``CONF``: TrainConfig as sorted-key JSON
* ``META``: step, epoch, RNG states, early-stopping bookkeeping
  and the history, as sorted-key JSON
* ``PARM`` / ``BEST``: current and best-so-far parameters and mask temperature
* ``ADAM``: one moment pair and step count per player

Arrays are stored as ``u32 ndim, u32 shape..., float64 data``. Encoding is
deterministic, so equal training runs give byte-identical files.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .embio import atomic_write
from .errors import BadMagicError, BadVersionError, FormatError, TruncatedError
from .mask import MaskNet, NoiseSource
from .numcore import AdamState, MlpParams
from .trainer import PLAYERS, FitProgress, ModelBundle, TrainConfig, TrainHistory, TrainState

MAGIC = b"CKPT"
VERSION = 1
_U32 = struct.Struct("<I")
_SECTION = struct.Struct("<4sQ")
_ACT = {"identity": 0, "sigmoid": 1}
_ACT_NAMES = {v: k for k, v in _ACT.items()}


def _put_array(buf, a):
    a = np.ascontiguousarray(a, dtype="<f8")
    buf.write(_U32.pack(a.ndim))
    for k in a.shape:
        buf.write(_U32.pack(k))
    buf.write(a.tobytes())


class _Reader:
    def __init__(self, data, base):
        self.data, self.pos, self.base = data, 0, base

    def take(self, k):
        if self.pos + k > len(self.data):
            raise TruncatedError("section payload ends early", self.base + len(self.data))
        out = self.data[self.pos : self.pos + k]
        self.pos += k
        return out

    def u32(self):
        return _U32.unpack(self.take(4))[0]

    def array(self):
        ndim = self.u32()
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def _put_mlp(buf, p: MlpParams):
    buf.write(_U32.pack(_ACT[p.output_activation]))
    buf.write(_U32.pack(len(p.weights)))
    for a in p.arrays():
        _put_array(buf, a)


def _get_mlp(r: _Reader):
    act = _ACT_NAMES[r.u32()]
    layers = r.u32()
    return MlpParams.from_arrays([r.array() for _ in range(2 * layers)], act)


def _bundle_bytes(b: ModelBundle):
    buf = io.BytesIO()
    buf.write(_U32.pack(int(b.mask_enabled)))
    buf.write(struct.pack("<d", b.mask_net.temperature))
    for p in PLAYERS:
        _put_mlp(buf, b.params(p))
    return buf.getvalue()


def _bundle_from(r: _Reader):
    enabled = bool(r.u32())
    tau = struct.unpack("<d", r.take(8))[0]
    heads = {p: _get_mlp(r) for p in PLAYERS}
    return ModelBundle(MaskNet(heads["mask_net"], tau), heads["classifier"], heads["adversary"], enabled)


def _adam_bytes(optim):
    buf = io.BytesIO()
    for p in PLAYERS:
        st = optim[p]
        buf.write(struct.pack("<Qddd", st.step_count, st.beta1, st.beta2, st.epsilon))
        buf.write(_U32.pack(len(st.first_moment)))
        for m, v in zip(st.first_moment, st.second_moment):
            _put_array(buf, m)
            _put_array(buf, v)
    return buf.getvalue()


def _adam_from(r: _Reader):
    out = {}
    for p in PLAYERS:
        count, b1, b2, eps = struct.unpack("<Qddd", r.take(32))
        k = r.u32()
        m, v = [], []
        for _ in range(k):
            m.append(r.array())
            v.append(r.array())
        out[p] = AdamState(m, v, count, b1, b2, eps)
    return out


def _json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def encode_checkpoint(progress: FitProgress, cfg: TrainConfig) -> bytes:
    meta = {
        "step": progress.state.step,
        "epoch": progress.epoch,
        "best_total": repr(float(progress.best_total)),
        "stale": progress.stale,
        "shuffle_rng": progress.shuffle_rng.bit_generator.state,
        "noise_rng": progress.noise.state,
        "noise_seed": progress.noise.seed if isinstance(progress.noise.seed, int) else None,
        "history": progress.history.to_dict(),
    }
    sections = [
        (b"CONF", _json(cfg.to_dict())),
        (b"META", _json(meta)),
        (b"PARM", _bundle_bytes(progress.state.bundle)),
        (b"ADAM", _adam_bytes(progress.state.optim)),
        (b"BEST", _bundle_bytes(progress.best)),
    ]
    out = [MAGIC, _U32.pack(VERSION)]
    for tag, payload in sections:
        out += [_SECTION.pack(tag, len(payload)), payload]
    return b"".join(out)


def _sections(data):
    if data[:4] != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {bytes(data[:4])!r}", 0)
    if len(data) < 8:
        raise TruncatedError("header ends early", len(data))
    version = _U32.unpack_from(data, 4)[0]
    if version != VERSION:
        raise BadVersionError(f"unsupported checkpoint version {version}", 4)
    pos, out = 8, {}
    while pos < len(data):
        if pos + _SECTION.size > len(data):
            raise TruncatedError("section header ends early", len(data))
        tag, length = _SECTION.unpack_from(data, pos)
        body = pos + _SECTION.size
        if body + length > len(data):
            raise TruncatedError(f"section {tag!r} ends early", len(data))
        out[tag] = (data[body : body + length], body)
        pos = body + length
    missing = [t for t in (b"CONF", b"META", b"PARM", b"ADAM", b"BEST") if t not in out]
    if missing:
        raise FormatError(f"missing sections {missing}", len(data))
    return out


def decode_checkpoint(data: bytes):
    """Return ``(cfg, progress)`` from checkpoint bytes."""
    sec = _sections(data)
    raw_cfg = json.loads(sec[b"CONF"][0])
    cfg = TrainConfig.from_dict(raw_cfg)
    meta = json.loads(sec[b"META"][0])
    bundle = _bundle_from(_Reader(*sec[b"PARM"]))
    best = _bundle_from(_Reader(*sec[b"BEST"]))
    optim = _adam_from(_Reader(*sec[b"ADAM"]))
    shuffle = np.random.Generator(np.random.PCG64())
    shuffle.bit_generator.state = meta["shuffle_rng"]
    noise = NoiseSource(0)
    noise.set_state(meta["noise_rng"])
    noise.seed = meta["noise_seed"]
    progress = FitProgress(
        TrainState(bundle, optim, meta["step"]),
        meta["epoch"],
        TrainHistory.from_dict(meta["history"]),
        best,
        float(meta["best_total"]),
        meta["stale"],
        shuffle,
        noise,
    )
    return cfg, progress


def save_checkpoint(path, progress: FitProgress, cfg: TrainConfig):
    atomic_write(path, encode_checkpoint(progress, cfg))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
