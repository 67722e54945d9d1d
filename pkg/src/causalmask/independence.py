"""Biased empirical HSIC with Gaussian kernels, its gradient, and a
permutation test.

Bandwidths follow the median heuristic on unsquared Euclidean distances and
enter the kernel as ``exp(-r**2 / (2 * sigma**2))``. Each batch gets its own
bandwidth, recomputed on every call and held constant for differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import ConfigError, DimensionError, InsufficientBatchError, InvalidTapeError
from .numcore import as_matrix

BANDWIDTH_FLOOR = 1e-6
MIN_HSIC_BATCH = 4


@dataclass(frozen=True)
class KernelConfig:
    bandwidth_mode: str = "median"  # "median" or "fixed"
    sigma: float = 1.0  # used when bandwidth_mode == "fixed"
    bandwidth_floor: float = BANDWIDTH_FLOOR

    def __post_init__(self):
        if self.bandwidth_mode not in ("median", "fixed"):
            raise ConfigError(f"unknown bandwidth mode {self.bandwidth_mode!r}")
        if not self.bandwidth_floor > 0:
            raise ConfigError("bandwidth floor must be positive")
        if self.bandwidth_mode == "fixed" and not self.sigma > 0:
            raise ConfigError("fixed bandwidth must be positive")

    def bandwidth(self, X, sq_dists=None):
        if self.bandwidth_mode == "fixed":
            return max(float(self.sigma), self.bandwidth_floor)
        return median_bandwidth(X, self.bandwidth_floor, sq_dists)


def median_bandwidth(X, floor=BANDWIDTH_FLOOR, sq_dists=None):
    """Median of the n(n-1)/2 distinct pairwise distances, floored.

    ``sq_dists`` may pass a precomputed condensed squared-distance vector.
    """
    X = as_matrix(X)
    if X.shape[0] < 2:
        raise InsufficientBatchError(f"median heuristic needs at least 2 rows, got {X.shape[0]}")
    if sq_dists is None:
        sq_dists = pdist(X, "sqeuclidean")
    return max(float(np.median(np.sqrt(sq_dists))), floor)


def gaussian_gram(X, sigma, sq_dists=None):
    X = as_matrix(X)
    if not sigma > 0:
        raise ConfigError(f"bandwidth must be positive, got {sigma}")
    if sq_dists is None:
        sq_dists = pdist(X, "sqeuclidean")
    K = squareform(np.exp(-sq_dists / (2.0 * sigma * sigma)))
    np.fill_diagonal(K, 1.0)
    return K


def _double_center(K):
    return K - K.mean(axis=0, keepdims=True) - K.mean(axis=1, keepdims=True) + K.mean()


@dataclass
class HsicTape:
    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    L: np.ndarray
    Kc: np.ndarray
    Lc: np.ndarray
    sigma_a: float
    sigma_b: float


def hsic_biased(A, B, cfg: KernelConfig = KernelConfig()):
    """``tr(K H L H) / (n - 1)**2``; returns ``(value, tape)``."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n = A.shape[0]
    if B.shape[0] != n:
        raise DimensionError(f"batches differ in size: {n} vs {B.shape[0]}")
    if n < MIN_HSIC_BATCH:
        raise InsufficientBatchError(f"HSIC needs at least {MIN_HSIC_BATCH} rows, got {n}")
    sq_a = pdist(A, "sqeuclidean")
    sq_b = pdist(B, "sqeuclidean")
    sigma_a = cfg.bandwidth(A, sq_a)
    sigma_b = cfg.bandwidth(B, sq_b)
    K = gaussian_gram(A, sigma_a, sq_a)
    L = gaussian_gram(B, sigma_b, sq_b)
    Kc = _double_center(K)
    Lc = _double_center(L)
    # tr(KHLH) == <HKH, HLH>_F since H is idempotent and symmetric.
    value = float(np.sum(Kc * Lc)) / (n - 1) ** 2
    return value, HsicTape(A, B, K, L, Kc, Lc, sigma_a, sigma_b)


def _gram_input_grad(X, K, dK, sigma):
    # dK is symmetric; K_ij depends on x_i through both K_ij and K_ji.
    W = dK * K
    return -(2.0 / sigma**2) * (W.sum(axis=1, keepdims=True) * X - W @ X)


def hsic_backward(tape: HsicTape, upstream=1.0):
    """Gradients of ``upstream * HSIC`` w.r.t. A and B, bandwidths fixed."""
    if not isinstance(tape, HsicTape):
        raise InvalidTapeError("expected a tape from hsic_biased")
    n = tape.A.shape[0]
    if tape.K.shape != (n, n) or tape.L.shape != (n, n) or tape.B.shape[0] != n:
        raise InvalidTapeError("tape arrays are inconsistent")
    scale = float(upstream) / (n - 1) ** 2
    grad_a = _gram_input_grad(tape.A, tape.K, scale * tape.Lc, tape.sigma_a)
    grad_b = _gram_input_grad(tape.B, tape.L, scale * tape.Kc, tape.sigma_b)
    return grad_a, grad_b


def permutation_null(A, B, cfg: KernelConfig, permutations, noise, quantile=0.95):
    """Empirical ``quantile`` of HSIC under row shuffles of ``B``.

    Permuting B's rows permutes its Gram matrix symmetrically and leaves the
    median bandwidth unchanged, so the centred Grams are built once.
    """
    if permutations < 100:
        raise ConfigError(f"need at least 100 permutations, got {permutations}")
    _, tape = hsic_biased(A, B, cfg)
    n = tape.A.shape[0]
    Kc, Lc = tape.Kc, tape.Lc
    stats = np.empty(permutations)
    for k in range(permutations):
        perm = noise.rng.permutation(n)
        stats[k] = np.sum(Kc * Lc[np.ix_(perm, perm)]) / (n - 1) ** 2
    return float(np.quantile(stats, quantile))
