"""Dense float64 building blocks: small MLPs with hand-written backprop, Adam,
and a central finite-difference gradient checker.

Matrices are plain 2-D ``numpy.ndarray`` objects (row-major, float64). Weight
matrices are stored ``(fan_in, fan_out)`` so a layer is ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DimensionError, InvalidTapeError, OracleFailure, PoisonedGradientError

EPS_CLAMP = 1e-7

_ACTIVATIONS = ("identity", "sigmoid")


def as_matrix(x, name="input"):
    """Return ``x`` as a 2-D float64 array, raising DimensionError otherwise."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def clamp_prob(p):
    return np.clip(p, EPS_CLAMP, 1.0 - EPS_CLAMP)


def glorot_uniform(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


@dataclass
class MlpParams:
    """Weights and biases of a ReLU MLP.

    Hidden layers use ReLU; the last layer applies ``output_activation``
    (``"identity"`` for logits or ``"sigmoid"`` for clamped probabilities).
    """

    weights: list
    biases: list
    output_activation: str = "identity"

    def __post_init__(self):
        if self.output_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(
                    f"layer {i}: expects {w.shape[0]} inputs but layer {i - 1} "
                    f"produces {self.weights[i - 1].shape[1]}"
                )

    @classmethod
    def init(cls, layer_dims, rng, output_activation="identity", output_bias=0.0):
        dims = [int(k) for k in layer_dims]
        if len(dims) < 2 or min(dims) < 1:
            raise DimensionError(f"bad layer dims {dims}")
        weights = [glorot_uniform(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
        biases = [np.zeros(b) for b in dims[1:]]
        biases[-1] += output_bias
        return cls(weights, biases, output_activation)

    @classmethod
    def zeros_like(cls, other):
        return cls(
            [np.zeros_like(w) for w in other.weights],
            [np.zeros_like(b) for b in other.biases],
            other.output_activation,
        )

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self):
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def names(self):
        out = []
        for i in range(len(self.weights)):
            out += [f"W{i}", f"b{i}"]
        return out

    @classmethod
    def from_arrays(cls, arrays, output_activation="identity"):
        return cls(list(arrays[0::2]), list(arrays[1::2]), output_activation)

    def copy(self):
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
        )


@dataclass
class GradTape:
    """Activations cached by :func:`mlp_forward` for the matching backward pass."""

    layer_dims: tuple
    output_activation: str
    inputs: list = field(default_factory=list)
    pre_activations: list = field(default_factory=list)
    output: np.ndarray = None


def mlp_forward(params: MlpParams, x):
    x = as_matrix(x)
    dims = params.layer_dims
    if x.shape[1] != dims[0]:
        raise DimensionError(f"layer 0 expects {dims[0]} input columns, got {x.shape[1]}")
    if x.shape[0] < 1:
        raise DimensionError("empty input batch")
    tape = GradTape(tuple(dims), params.output_activation)
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tape.inputs.append(h)
        z = h @ w + b
        tape.pre_activations.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
        elif params.output_activation == "sigmoid":
            h = clamp_prob(expit(z))
        else:
            h = z
    tape.output = h
    return h, tape


def mlp_backward(params: MlpParams, tape: GradTape, upstream):
    """Return ``(param_grads, input_grad)`` for an upstream gradient on the output.

    Inside the probability clamp the sigmoid derivative is the exact one;
    where the clamp is active the derivative is zero.
    """
    if tape is None or tuple(params.layer_dims) != tape.layer_dims or not tape.inputs:
        raise InvalidTapeError("tape was not produced by a forward pass of these parameters")
    if tape.output_activation != params.output_activation:
        raise InvalidTapeError("tape output activation does not match parameters")
    g = as_matrix(upstream, "upstream gradient")
    if g.shape != tape.output.shape:
        raise DimensionError(f"upstream gradient {g.shape} != output {tape.output.shape}")

    last = len(params.weights) - 1
    if params.output_activation == "sigmoid":
        p = tape.output
        inside = (p > EPS_CLAMP) & (p < 1.0 - EPS_CLAMP)
        g = g * p * (1.0 - p) * inside
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.weights)
    for i in range(last, -1, -1):
        if i < last:
            g = g * (tape.pre_activations[i] > 0.0)
        grad_w[i] = tape.inputs[i].T @ g
        grad_b[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return MlpParams(grad_w, grad_b, params.output_activation), g


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: MlpParams, beta1=0.9, beta2=0.999, epsilon=1e-8):
        arrays = params.arrays()
        return cls(
            [np.zeros_like(a) for a in arrays],
            [np.zeros_like(a) for a in arrays],
            0,
            beta1,
            beta2,
            epsilon,
        )

    def copy(self):
        return AdamState(
            [m.copy() for m in self.first_moment],
            [v.copy() for v in self.second_moment],
            self.step_count,
            self.beta1,
            self.beta2,
            self.epsilon,
        )


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr):
    """One bias-corrected Adam update; returns new ``(params, state)``.

    Entries whose gradient is exactly zero are skipped (parameter and both
    moments left as they are), so a zero gradient is a fixed point for any
    state. This matters for frozen inputs and dead ReLU units.
    """
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(g_arrays) or len(p_arrays) != len(state.first_moment):
        raise DimensionError("parameter, gradient and optimizer state layouts differ")
    for name, p, g in zip(params.names(), p_arrays, g_arrays):
        if p.shape != g.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise PoisonedGradientError(name)

    t = state.step_count + 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.first_moment, state.second_moment):
        live = g != 0.0
        m2 = np.where(live, b1 * m + (1.0 - b1) * g, m)
        v2 = np.where(live, b2 * v + (1.0 - b2) * g * g, v)
        m_hat = m2 / (1.0 - b1**t)
        v_hat = v2 / (1.0 - b2**t)
        new_p.append(np.where(live, p - lr * m_hat / (np.sqrt(v_hat) + eps), p))
        new_m.append(m2)
        new_v.append(v2)
    new_params = MlpParams.from_arrays(new_p, params.output_activation)
    return new_params, AdamState(new_m, new_v, t, b1, b2, eps)


def finite_diff_check(loss_fn, params, step=1e-5, abs_floor=1e-7):
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn(arrays) -> (value, grads)`` takes a list of float arrays and
    returns the scalar loss plus analytic gradients in the same layout. Every
    entry of every array is perturbed by ``±step``. Per entry the error is
    ``|a - f| / max(|a|, |f|, abs_floor)``; entries where both are zero score 0.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    arrays = [np.array(a, dtype=np.float64, copy=True) for a in params]
    value, analytic = loss_fn(arrays)
    if not np.isfinite(value):
        raise OracleFailure(f"loss function returned {value}")
    worst = 0.0
    for k, a in enumerate(arrays):
        grad = np.asarray(analytic[k], dtype=np.float64)
        flat = a.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = loss_fn(arrays)
            flat[i] = orig - step
            down, _ = loss_fn(arrays)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise OracleFailure(f"non-finite loss while perturbing array {k} entry {i}")
            fd = (up - down) / (2.0 * step)
            diff = abs(gflat[i] - fd)
            if diff == 0.0:
                continue
            worst = max(worst, diff / max(abs(gflat[i]), abs(fd), abs_floor))
    return worst
