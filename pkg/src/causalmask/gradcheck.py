"""Finite-difference suite for every hand-written backward pass.

Each check builds a small random instance, wraps the analytic gradient in a
``loss_fn(arrays) -> (value, grads)`` and hands it to
:func:`finite_diff_check`. Kernel bandwidths are frozen at their value on the
unperturbed instance, matching how the trainer treats them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .independence import KernelConfig, hsic_backward, hsic_biased, median_bandwidth
from .mask import MaskNet, compute_mask, mask_backward, split_features
from .numcore import MlpParams, finite_diff_check, mlp_backward, mlp_forward
from .objective import (
    LossWeights,
    adversary_loss,
    bce,
    bce_grad,
    counterfactual_drop,
    evaluate_objective,
    kl_consistency,
    kl_consistency_grad,
)

TOLERANCE = 1e-4


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    n_entries: int

    @property
    def passed(self):
        return bool(self.max_rel_error < TOLERANCE)


def _probs(rng, n):
    return rng.uniform(0.05, 0.95, size=n)


def _labels(rng, n):
    y = rng.integers(0, 2, size=n).astype(np.float64)
    y[:2] = [0.0, 1.0]
    return y


def _mlp_check(rng, dims, act, n):
    params = MlpParams.init(dims, rng, act)
    params.biases = [b + rng.normal(0, 0.1, size=b.shape) for b in params.biases]
    x = rng.normal(size=(n, dims[0]))
    R = rng.normal(size=(n, dims[-1]))

    def fn(arrays):
        p = MlpParams.from_arrays(arrays[:-1], act)
        out, tape = mlp_forward(p, arrays[-1])
        g, gx = mlp_backward(p, tape, R)
        return float(np.sum(R * out)), g.arrays() + [gx]

    return fn, params.arrays() + [x]


def check_mlp_identity(rng, n, d):
    return _mlp_check(rng, [d, d, d], "identity", n)


def check_mlp_sigmoid(rng, n, d):
    return _mlp_check(rng, [d, max(1, d // 4), 1], "sigmoid", n)


def check_mask(rng, n, d):
    net = MaskNet.init(d, rng, temperature=rng.uniform(0.5, 3.0))
    E = rng.normal(size=(n, d))
    g = rng.gumbel(size=(n, d))
    R = rng.normal(size=(n, d))
    tau = net.temperature

    def fn(arrays):
        m_net = MaskNet(MlpParams.from_arrays(arrays[:-1]), tau)
        M, tape = compute_mask(arrays[-1], m_net, "stochastic", gumbel=g)
        gp, gE = mask_backward(m_net, tape, R)
        return float(np.sum(R * M)), gp.arrays() + [gE]

    return fn, net.net.arrays() + [E]


def check_split(rng, n, d):
    E = rng.normal(size=(n, d))
    M = rng.uniform(size=(n, d))
    R1, R2 = rng.normal(size=(2, n, d))

    def fn(arrays):
        s = split_features(arrays[0], arrays[1])
        val = float(np.sum(R1 * s.z_c + R2 * s.z_nc))
        return val, [R1 * arrays[1] + R2 * (1 - arrays[1]), (R1 - R2) * arrays[0]]

    return fn, [E, M]


def check_hsic(rng, n, d):
    A = rng.normal(size=(n, d))
    B = A**2 + 0.5 * rng.normal(size=(n, d))
    kernel = KernelConfig("fixed", sigma=0.5 * (median_bandwidth(A) + median_bandwidth(B)))

    def fn(arrays):
        val, tape = hsic_biased(arrays[0], arrays[1], kernel)
        return val, list(hsic_backward(tape))

    return fn, [A, B]


def check_bce(rng, n, d):
    y = _labels(rng, n)

    def fn(arrays):
        return bce(arrays[0], y), [bce_grad(arrays[0], y)]

    return fn, [_probs(rng, n)]


def check_adversary_loss(rng, n, d):
    y = _labels(rng, n)

    def fn(arrays):
        return adversary_loss(arrays[0], y).total, [bce_grad(arrays[0], y)]

    return fn, [_probs(rng, n)]


def check_kl(rng, n, d):
    def fn(arrays):
        ga, gb = kl_consistency_grad(arrays[0], arrays[1])
        return kl_consistency(arrays[0], arrays[1]), [ga, gb]

    return fn, [_probs(rng, n), _probs(rng, n)]


def check_counterfactual(rng, n, d):
    B = (rng.uniform(size=(n, d)) < 0.3).astype(np.float64)
    R = rng.normal(size=(n, d))

    def fn(arrays):
        z_cf, _ = counterfactual_drop(arrays[0], 0.3, drop_mask=B)
        return float(np.sum(R * z_cf)), [R * (1.0 - B)]

    return fn, [rng.normal(size=(n, d))]


def check_sparsity(rng, n, d):
    def fn(arrays):
        return float(arrays[0].sum(axis=1).mean()), [np.full_like(arrays[0], 1.0 / n)]

    return fn, [rng.uniform(size=(n, d))]


def _objective_instance(rng, n, d):
    net = MaskNet.init(d, rng, temperature=rng.uniform(1.0, 3.0))
    h = MlpParams.init([d, 1], rng, "sigmoid")
    adv = MlpParams.init([d, max(1, d // 4), 1], rng, "sigmoid")
    adv.biases[0] = adv.biases[0] + rng.normal(0, 0.1, size=adv.biases[0].shape)
    E = rng.normal(size=(n, d))
    y = _labels(rng, n)
    g = rng.gumbel(size=(n, d))
    drop = (rng.uniform(size=(n, d)) < 0.2).astype(np.float64)
    w = LossWeights(alpha=0.3, beta=0.7, lambda1=0.05, lambda2=2.0, drop_p=0.2)
    M, _ = compute_mask(E, net, "stochastic", gumbel=g)
    s = split_features(E, M)
    # A frozen bandwidth shared by both inputs keeps the objective smooth in
    # the finite-difference neighbourhood.
    sigma = 0.5 * (median_bandwidth(s.z_c) + median_bandwidth(s.z_nc))
    kernel = KernelConfig("fixed", sigma=sigma)
    return net, h, adv, E, y, g, drop, w, kernel


def _objective_check(rng, n, d, player):
    net, h, adv, E, y, g, drop, w, kernel = _objective_instance(rng, n, d)
    tau = net.temperature
    sizes = {"mask_net": len(net.net.arrays()), "classifier": len(h.arrays()), "adversary": len(adv.arrays())}

    def unpack(arrays):
        parts = {}
        k = 0
        for name, orig in (("mask_net", net.net), ("classifier", h), ("adversary", adv)):
            parts[name] = MlpParams.from_arrays(arrays[k : k + sizes[name]], orig.output_activation)
            k += sizes[name]
        return parts, arrays[k]

    def fn(arrays):
        parts, E_ = unpack(arrays)
        res = evaluate_objective(MaskNet(parts["mask_net"], tau), parts["classifier"], parts["adversary"],
                                 E_, y, w, gumbel=g, drop_mask=drop, kernel=kernel)
        if player == "adversary_only":
            value = res.breakdown.adv
            grads = {"adversary": res.adversary_grad}
        else:
            value = res.breakdown.total
            grads = res.grads
        out = []
        for name in ("mask_net", "classifier", "adversary"):
            src = grads.get(name) or MlpParams.zeros_like(parts[name])
            out += src.arrays()
        out.append(res.embedding_grad)
        return value, out

    full = net.net.arrays() + h.arrays() + adv.arrays() + [E]
    return _restricted(fn, full, player, sizes)


def _restricted(fn, full, player, sizes):
    # Perturb only the arrays belonging to ``player``; the rest stay fixed.
    order = ["mask_net", "classifier", "adversary"]
    if player == "adversary_only":
        player = "adversary"
    if player == "embedding":
        idx = [len(full) - 1]
    else:
        start = sum(sizes[o] for o in order[: order.index(player)])
        idx = list(range(start, start + sizes[player]))

    def sub_fn(arrays):
        merged = list(full)
        for i, a in zip(idx, arrays):
            merged[i] = a
        value, grads = fn(merged)
        return value, [grads[i] for i in idx]

    return sub_fn, [full[i] for i in idx]


def _objective_wrt(player):
    def check(rng, n, d):
        return _objective_check(rng, n, d, player)

    check.__name__ = f"check_objective_{player}"
    return check


CHECKS = {
    "mlp_identity": check_mlp_identity,
    "mlp_sigmoid": check_mlp_sigmoid,
    "mask": check_mask,
    "split_features": check_split,
    "hsic": check_hsic,
    "bce": check_bce,
    "adversary_loss": check_adversary_loss,
    "kl_consistency": check_kl,
    "counterfactual_drop": check_counterfactual,
    "mask_sparsity": check_sparsity,
    "objective_mask_net": _objective_wrt("mask_net"),
    "objective_classifier": _objective_wrt("classifier"),
    "objective_adversary": _objective_wrt("adversary"),
    "objective_adversary_loss": _objective_wrt("adversary_only"),
    "objective_embedding": _objective_wrt("embedding"),
}


def run_gradcheck(seed=0, n=12, d=16, names=None, step=1e-5):
    """Run the suite; returns ``(results, seconds)``."""
    if n > 16 or d > 32 or n < 4 or d < 4:
        raise ValueError("gradcheck instances use 4 <= n <= 16 and 4 <= d <= 32")
    t0 = time.perf_counter()
    results = []
    for i, name in enumerate(names or CHECKS):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), i])))
        fn, arrays = CHECKS[name](rng, n, d)
        err = finite_diff_check(fn, arrays, step=step)
        results.append(GradcheckResult(name, err, int(sum(a.size for a in arrays))))
    return results, time.perf_counter() - t0
