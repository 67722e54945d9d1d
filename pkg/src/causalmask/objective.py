"""Loss terms of the disentangle-then-filter objective and their gradients.

total = cls - alpha * adv + lambda1 * ||M||_1 + lambda2 * HSIC(z_c, z_nc) + beta * inv

Expectations are batch means. The two halves of the adversary loss are each
normalised by the full batch size, so ``adv_pos + adv_neg`` equals the
ordinary mean binary cross-entropy.

Players: the adversary ``d`` descends ``adv`` (it learns to predict the label
from ``z_nc``); the mask ascends it through the ``-alpha * adv`` term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, PoisonedLossError
from .independence import KernelConfig, hsic_backward, hsic_biased
from .mask import MaskNet, SplitFeatures, compute_mask, mask_backward, split_features
from .numcore import EPS_CLAMP, MlpParams, mlp_backward, mlp_forward

TERMS = ("cls", "adv", "mask_l1", "mask_hsic", "inv")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    beta: float = 1.0
    lambda1: float = 1e-3
    lambda2: float = 1.0
    drop_p: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "beta", "lambda1", "lambda2", "drop_p"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be a finite non-negative number, got {value}")
        if self.drop_p >= 1:
            raise ConfigError(f"drop_p must be < 1, got {self.drop_p}")


@dataclass
class LossBreakdown:
    cls: float
    adv: float
    mask_l1: float
    mask_hsic: float
    inv: float
    total: float
    adv_pos: float = float("nan")
    adv_neg: float = float("nan")

    def recompose(self, w: LossWeights):
        return (
            self.cls
            - w.alpha * self.adv
            + w.lambda1 * self.mask_l1
            + w.lambda2 * self.mask_hsic
            + w.beta * self.inv
        )

    def as_dict(self):
        return {k: getattr(self, k) for k in TERMS + ("total",)}


def _vec(x):
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _check_pair(a, b, what):
    if a.shape != b.shape:
        raise DimensionError(f"{what}: lengths differ ({a.size} vs {b.size})")
    if a.size == 0:
        raise DimensionError(f"{what}: empty batch")


def _clamped(p):
    pc = np.clip(p, EPS_CLAMP, 1.0 - EPS_CLAMP)
    inside = (p >= EPS_CLAMP) & (p <= 1.0 - EPS_CLAMP)
    return pc, inside


def bce(prob, label):
    p, y = _vec(prob), _vec(label)
    _check_pair(p, y, "bce")
    p, _ = _clamped(p)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def bce_grad(prob, label):
    p, y = _vec(prob), _vec(label)
    _check_pair(p, y, "bce")
    pc, inside = _clamped(p)
    return (-(y / pc) + (1.0 - y) / (1.0 - pc)) * inside / p.size


@dataclass
class AdversaryLoss:
    pos: float
    neg: float

    @property
    def total(self):
        return self.pos + self.neg


def adversary_loss(d_prob, label):
    """Split adversary cross-entropy; both halves are divided by the batch size."""
    q, y = _vec(d_prob), _vec(label)
    _check_pair(q, y, "adversary_loss")
    q, _ = _clamped(q)
    n = q.size
    pos = float(-np.sum(y * np.log(q)) / n)
    neg = float(-np.sum((1.0 - y) * np.log(1.0 - q)) / n)
    return AdversaryLoss(pos, neg)


def counterfactual_drop(z_c, drop_p, noise=None, drop_mask=None):
    """Zero a Bernoulli(``drop_p``) subset of entries; returns ``(z_cf, B)``.

    ``drop_mask`` injects B directly (used for replay and for limit cases).
    """
    z_c = np.asarray(z_c, dtype=np.float64)
    if drop_mask is None:
        if not 0.0 <= drop_p < 1.0:
            raise ConfigError(f"drop_p must lie in [0, 1), got {drop_p}")
        if drop_p == 0.0:
            drop_mask = np.zeros_like(z_c)
        else:
            drop_mask = noise.bernoulli(drop_p, z_c.shape)
    elif np.shape(drop_mask) != z_c.shape:
        raise DimensionError(f"drop mask {np.shape(drop_mask)} != features {z_c.shape}")
    return z_c * (1.0 - drop_mask), drop_mask


def kl_consistency(p, p_cf):
    """Mean Bernoulli KL(p || p_cf)."""
    a, b = _vec(p), _vec(p_cf)
    _check_pair(a, b, "kl_consistency")
    a, _ = _clamped(a)
    b, _ = _clamped(b)
    return float(np.mean(a * np.log(a / b) + (1.0 - a) * np.log((1.0 - a) / (1.0 - b))))


def kl_consistency_grad(p, p_cf):
    """Gradients of :func:`kl_consistency` w.r.t. both arguments."""
    a0, b0 = _vec(p), _vec(p_cf)
    _check_pair(a0, b0, "kl_consistency")
    a, ia = _clamped(a0)
    b, ib = _clamped(b0)
    n = a.size
    ga = (np.log(a / b) - np.log((1.0 - a) / (1.0 - b))) * ia / n
    gb = (-(a / b) + (1.0 - a) / (1.0 - b)) * ib / n
    return ga, gb


def total_loss(parts, w: LossWeights):
    for term in TERMS:
        value = parts[term]
        if not np.isfinite(value):
            raise PoisonedLossError(term)
    out = LossBreakdown(
        cls=float(parts["cls"]),
        adv=float(parts["adv"]),
        mask_l1=float(parts["mask_l1"]),
        mask_hsic=float(parts["mask_hsic"]),
        inv=float(parts["inv"]),
        total=0.0,
        adv_pos=float(parts.get("adv_pos", float("nan"))),
        adv_neg=float(parts.get("adv_neg", float("nan"))),
    )
    out.total = out.recompose(w)
    return out


@dataclass
class ObjectiveResult:
    """Forward values plus gradients of one objective evaluation.

    ``grads`` holds d(total)/d(params) per player; ``adversary_grad`` is
    d(adv)/d(params of d), the quantity the adversary descends.
    """

    breakdown: LossBreakdown
    split: SplitFeatures
    p: np.ndarray
    p_cf: np.ndarray
    q: np.ndarray
    drop_mask: np.ndarray
    grads: dict = field(default_factory=dict)
    adversary_grad: MlpParams = None
    embedding_grad: np.ndarray = None


def evaluate_objective(
    mask_net: MaskNet,
    classifier: MlpParams,
    adversary: MlpParams,
    E,
    y,
    w: LossWeights,
    *,
    gumbel=None,
    drop_mask=None,
    mask_mode="stochastic",
    use_mask=True,
    adversary_on_copy=False,
    kernel=KernelConfig(),
    backward=True,
    mask_grads=True,
    hsic=True,
):
    """Forward (and optionally backward) pass of the full objective.

    Noise is passed in explicitly (``gumbel`` for the mask, ``drop_mask`` for
    the counterfactual), so the result is a deterministic function of its
    arguments. With ``use_mask=False`` the mask is fixed to all ones; the
    adversary then sees zeros, or a copy of ``E`` when ``adversary_on_copy``.
    ``mask_grads=False`` skips the HSIC/mask backward when only the heads'
    gradients are needed; ``hsic=False`` also skips its forward value
    (reported as 0).
    """
    E = np.asarray(E, dtype=np.float64)
    y = _vec(y)
    n = E.shape[0]
    if y.size != n:
        raise DimensionError(f"{n} embeddings but {y.size} labels")

    if use_mask:
        mode = "stochastic" if gumbel is not None else mask_mode
        if mode == "stochastic" and gumbel is None:
            raise ConfigError("stochastic objective evaluation needs explicit gumbel noise")
        M, mtape = compute_mask(E, mask_net, mode, gumbel=gumbel)
        split = split_features(E, M)
    else:
        M = np.ones_like(E)
        mtape = None
        split = SplitFeatures(E.copy(), E.copy() if adversary_on_copy else np.zeros_like(E), M)

    if drop_mask is None:
        drop_mask = np.zeros_like(E)
    z_cf, drop_mask = counterfactual_drop(split.z_c, w.drop_p, drop_mask=drop_mask)

    p, tape_h = mlp_forward(classifier, split.z_c)
    p_cf, tape_cf = mlp_forward(classifier, z_cf)
    q, tape_d = mlp_forward(adversary, split.z_nc)
    p, p_cf, q = p.ravel(), p_cf.ravel(), q.ravel()

    adv = adversary_loss(q, y)
    if hsic and (use_mask or adversary_on_copy):
        hsic_value, htape = hsic_biased(split.z_c, split.z_nc, kernel)
    else:
        hsic_value, htape = 0.0, None
    parts = {
        "cls": bce(p, y),
        "adv": adv.total,
        "adv_pos": adv.pos,
        "adv_neg": adv.neg,
        "mask_l1": float(M.sum(axis=1).mean()),
        "mask_hsic": hsic_value,
        "inv": kl_consistency(p, p_cf),
    }
    result = ObjectiveResult(total_loss(parts, w), split, p, p_cf, q, drop_mask)
    if not backward:
        return result

    g_inv_p, g_inv_pcf = kl_consistency_grad(p, p_cf)
    dp = bce_grad(p, y) + w.beta * g_inv_p
    dpcf = w.beta * g_inv_pcf
    gh, dzc = mlp_backward(classifier, tape_h, dp[:, None])
    gh_cf, dzcf = mlp_backward(classifier, tape_cf, dpcf[:, None])
    gh = MlpParams.from_arrays([a + b for a, b in zip(gh.arrays(), gh_cf.arrays())], classifier.output_activation)
    dzc = dzc + dzcf * (1.0 - drop_mask)

    gd_adv, dznc_adv = mlp_backward(adversary, tape_d, bce_grad(q, y)[:, None])
    result.adversary_grad = gd_adv
    result.grads["classifier"] = gh
    result.grads["adversary"] = MlpParams.from_arrays(
        [-w.alpha * a for a in gd_adv.arrays()], adversary.output_activation
    )
    if not (use_mask and mask_grads):
        return result
    if htape is None:
        raise ConfigError("mask gradients need the HSIC forward pass")

    dznc = -w.alpha * dznc_adv
    if w.lambda2 != 0.0:
        ga, gb = hsic_backward(htape, w.lambda2)
        dzc = dzc + ga
        dznc = dznc + gb
    dM = (dzc - dznc) * E + w.lambda1 / n
    gm, dE_net = mask_backward(mask_net, mtape, dM)
    result.grads["mask_net"] = gm
    result.embedding_grad = dE_net + dzc * M + dznc * (1.0 - M)
    return result
