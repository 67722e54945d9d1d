"""Per-dimension relaxed mask over embeddings and the causal/non-causal split.

The mask is ``sigmoid((MLP(E) + g) / tau)`` with a single Gumbel(0, 1) draw
``g`` per entry. This is not the symmetric two-sample Binary Concrete
relaxation: the perturbation has mean ~0.577 and a long right tail, so in
stochastic mode entries are biased towards 1 compared with the noiseless
(deterministic) mask used for evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DimensionError, InvalidTapeError
from .numcore import MlpParams, as_matrix, mlp_backward, mlp_forward

U_CLAMP = 1e-12


class NoiseSource:
    """Seeded random stream for Gumbel, Bernoulli and uniform draws.

    Wraps a PCG64 generator; ``state``/``set_state`` round-trip the stream
    exactly so training can resume bit-for-bit.
    """

    def __init__(self, seed=0):
        self.seed = seed
        self.rng = np.random.Generator(np.random.PCG64(seed))

    def uniform(self, shape):
        return self.rng.random(shape)

    def gumbel(self, shape):
        return gumbel_from_uniform(self.uniform(shape))

    def bernoulli(self, p, shape):
        return (self.uniform(shape) < p).astype(np.float64)

    def spawn(self, key):
        """Independent child stream derived from this source's seed and ``key``."""
        return NoiseSource(np.random.SeedSequence([int(self.seed), int(key)]))

    @property
    def state(self):
        return self.rng.bit_generator.state

    def set_state(self, state):
        self.rng.bit_generator.state = state


def gumbel_from_uniform(u):
    u = np.clip(np.asarray(u, dtype=np.float64), U_CLAMP, 1.0 - U_CLAMP)
    return -np.log(-np.log(u))


def sample_gumbel(noise: NoiseSource, shape):
    if np.prod(shape) <= 0:
        raise ValueError(f"shape must be positive, got {shape}")
    return noise.gumbel(shape)


@dataclass
class MaskNet:
    net: MlpParams
    temperature: float

    def __post_init__(self):
        dims = self.net.layer_dims
        if dims[0] != dims[-1]:
            raise DimensionError(f"mask net must map d -> d, got {dims}")
        if self.net.output_activation != "identity":
            raise ConfigError("mask net must output raw logits")

    @classmethod
    def init(cls, d, rng, temperature=5.0, logit_bias=1.0):
        return cls(MlpParams.init([d, d, d], rng, "identity", output_bias=logit_bias), temperature)

    @property
    def d(self):
        return self.net.layer_dims[0]

    def copy(self):
        return MaskNet(self.net.copy(), self.temperature)


@dataclass
class MaskTape:
    net_tape: object
    mask: np.ndarray
    temperature: float


@dataclass
class SplitFeatures:
    z_c: np.ndarray
    z_nc: np.ndarray
    mask: np.ndarray


def compute_mask(E, net: MaskNet, mode="deterministic", noise=None, gumbel=None):
    """Return ``(mask, tape)``.

    In ``"stochastic"`` mode a fresh Gumbel matrix is drawn from ``noise``
    unless ``gumbel`` is given explicitly (frozen noise). ``"deterministic"``
    mode uses ``g = 0``.
    """
    E = as_matrix(E, "embeddings")
    tau = net.temperature
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if E.shape[1] != net.d:
        raise DimensionError(f"embedding width {E.shape[1]} != mask width {net.d}")
    logits, net_tape = mlp_forward(net.net, E)
    if mode == "stochastic":
        if gumbel is None:
            if noise is None:
                raise ConfigError("stochastic mask needs a NoiseSource or explicit gumbel noise")
            gumbel = sample_gumbel(noise, logits.shape)
        elif np.shape(gumbel) != logits.shape:
            raise DimensionError(f"gumbel noise {np.shape(gumbel)} != logits {logits.shape}")
        logits = logits + gumbel
    elif mode != "deterministic":
        raise ConfigError(f"unknown mask mode {mode!r}")
    mask = expit(logits / tau)
    return mask, MaskTape(net_tape, mask, tau)


def mask_backward(net: MaskNet, tape: MaskTape, upstream):
    """Gradients of a loss w.r.t. the mask net parameters and, through the
    MLP only, the embeddings. Gumbel noise is treated as a constant."""
    if not isinstance(tape, MaskTape):
        raise InvalidTapeError("expected a tape from compute_mask")
    upstream = as_matrix(upstream, "upstream gradient")
    if upstream.shape != tape.mask.shape:
        raise DimensionError(f"upstream {upstream.shape} != mask {tape.mask.shape}")
    m = tape.mask
    d_logits = upstream * m * (1.0 - m) / tape.temperature
    return mlp_backward(net.net, tape.net_tape, d_logits)


def split_features(E, mask):
    E = as_matrix(E, "embeddings")
    mask = as_matrix(mask, "mask")
    if E.shape != mask.shape:
        raise DimensionError(f"embeddings {E.shape} and mask {mask.shape} differ")
    z_nc = E - mask * E
    # |mask * E| <= |E|, so E - z_nc is exact (Fast2Sum) and z_c + z_nc == E
    # holds bitwise; z_c differs from mask * E by at most one rounding.
    z_c = E - z_nc
    return SplitFeatures(z_c, z_nc, mask)


def mask_sparsity(mask):
    """Row L1 norm of the mask averaged over the batch."""
    mask = as_matrix(mask, "mask")
    return float(mask.sum(axis=1).mean())


def annealed_temperature(epoch, max_epochs, tau_start=5.0, tau_min=0.5):
    """Exponential schedule from ``tau_start`` (epoch 0) to ``tau_min`` (last epoch)."""
    if max_epochs <= 1:
        return float(tau_start)
    frac = min(epoch / (max_epochs - 1), 1.0)
    return float(max(tau_min, tau_start * (tau_min / tau_start) ** frac))
