"""Alternating three-player training of mask net, classifier and adversary.

Per batch, with one shared Gumbel draw and one shared counterfactual drop
mask:

A. adversary ``d``: one Adam step descending ``adv`` on ``z_nc``;
B. classifier ``h``: one Adam step on ``cls + beta * inv``;
C. mask net: one Adam step on the full total, evaluated with the updated
   ``h`` and ``d``.

Each player owns its Adam state; only that player's parameters change in its
sub-step.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .data import LabeledBatch
from .errors import ConfigError, DimensionError, InsufficientBatchError, PoisonedLossError
from .mask import MaskNet, NoiseSource, annealed_temperature, compute_mask, split_features
from .numcore import AdamState, MlpParams, adam_step, as_matrix, mlp_backward, mlp_forward
from .objective import TERMS, LossBreakdown, LossWeights, bce_grad, evaluate_objective

log = logging.getLogger(__name__)

PLAYERS = ("adversary", "classifier", "mask_net")


@dataclass
class ModelBundle:
    mask_net: MaskNet
    classifier: MlpParams
    adversary: MlpParams
    mask_enabled: bool = True

    def __post_init__(self):
        d = self.mask_net.d
        if self.classifier.layer_dims[0] != d or self.adversary.layer_dims[0] != d:
            raise DimensionError("mask net, classifier and adversary must share the embedding width")

    @classmethod
    def init(cls, d, rng, tau_start=5.0, mask_logit_bias=1.0, mask_enabled=True):
        mask_net = MaskNet.init(d, rng, tau_start, mask_logit_bias)
        classifier = MlpParams.init([d, 1], rng, "sigmoid")
        adversary = MlpParams.init([d, max(1, d // 4), 1], rng, "sigmoid")
        return cls(mask_net, classifier, adversary, mask_enabled)

    @property
    def d(self):
        return self.mask_net.d

    def params(self, player):
        return self.mask_net.net if player == "mask_net" else getattr(self, player)

    def copy(self):
        return ModelBundle(self.mask_net.copy(), self.classifier.copy(), self.adversary.copy(), self.mask_enabled)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 256
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0
    tau_start: float = 5.0
    tau_min: float = 0.5
    loss_weights: LossWeights = field(default_factory=LossWeights)
    validation_fraction: float = 0.1
    use_mask: bool = True
    adversary_on_copy: bool = False
    mask_logit_bias: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.batch_size < 4:
            raise ConfigError("batch_size must be at least 4 (HSIC needs 4 rows)")
        if self.max_epochs < 0 or self.early_stop_patience < 1:
            raise ConfigError("max_epochs must be >= 0 and early_stop_patience >= 1")
        if not 0 < self.validation_fraction <= 0.5:
            raise ConfigError("validation_fraction must lie in (0, 0.5]")
        if not 0 < self.tau_min <= self.tau_start:
            raise ConfigError("need 0 < tau_min <= tau_start")
        if isinstance(self.loss_weights, dict):
            object.__setattr__(self, "loss_weights", LossWeights(**self.loss_weights))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class TrainState:
    """Everything that evolves during training, for snapshots and resume."""

    bundle: ModelBundle
    optim: dict
    step: int = 0

    @classmethod
    def fresh(cls, bundle, cfg: TrainConfig):
        optim = {
            p: AdamState.fresh(bundle.params(p), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
            for p in PLAYERS
        }
        return cls(bundle, optim, 0)

    def copy(self):
        return TrainState(self.bundle.copy(), {k: v.copy() for k, v in self.optim.items()}, self.step)


@dataclass
class EpochRecord:
    epoch: int
    temperature: float
    train: LossBreakdown
    val: LossBreakdown
    val_accuracy: float
    adversary_accuracy: float
    mask_sparsity: float
    hsic: float

    def to_dict(self):
        out = asdict(self)
        out["train"] = self.train.as_dict()
        out["val"] = self.val.as_dict()
        return out


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def append(self, record: EpochRecord):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must increase")
        self.records.append(record)

    @property
    def best(self):
        for r in self.records:
            if r.epoch == self.best_epoch:
                return r
        return None

    def to_dict(self):
        return {
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, raw):
        def bd(x):
            return LossBreakdown(**x)

        recs = []
        for r in raw["records"]:
            r = dict(r)
            r["train"], r["val"] = bd(r["train"]), bd(r["val"])
            recs.append(EpochRecord(**r))
        return cls(recs, raw["best_epoch"], raw["stopped_early"])


def _batch_noise(noise: NoiseSource, shape, cfg: TrainConfig):
    gumbel = noise.gumbel(shape) if cfg.use_mask else None
    p = cfg.loss_weights.drop_p
    drop = noise.bernoulli(p, shape) if p > 0 else np.zeros(shape)
    return gumbel, drop


def _objective(bundle, E, y, cfg, label, **kw):
    try:
        return evaluate_objective(
            bundle.mask_net,
            bundle.classifier,
            bundle.adversary,
            E,
            y,
            cfg.loss_weights,
            use_mask=cfg.use_mask,
            adversary_on_copy=cfg.adversary_on_copy,
            **kw,
        )
    except PoisonedLossError as exc:
        raise PoisonedLossError(exc.term, label) from None


def train_step(state: TrainState, E, y, cfg: TrainConfig, noise: NoiseSource, trace=None):
    """One A/B/C round on a batch; returns ``(new_state, step-C breakdown)``.

    If ``trace`` is a list, ``(label, bundle)`` is appended after each sub-step.
    """
    E = as_matrix(E, "batch")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if E.shape[0] < 4:
        raise InsufficientBatchError(f"training batches need at least 4 rows, got {E.shape[0]}")
    if y.size != E.shape[0] or not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be a 0/1 vector matching the batch")
    lr = cfg.learning_rate
    gumbel, drop = _batch_noise(noise, E.shape, cfg)
    b = state.bundle
    optim = dict(state.optim)

    # A and B: d's and h's gradients do not depend on each other, so one
    # evaluation serves both; the mask net stays untouched.
    res = _objective(b, E, y, cfg, "A", gumbel=gumbel, drop_mask=drop, mask_grads=False, hsic=False)
    adversary, classifier = b.adversary, b.classifier
    if cfg.use_mask or cfg.adversary_on_copy:
        adversary, optim["adversary"] = adam_step(b.adversary, res.adversary_grad, optim["adversary"], lr)
    b = ModelBundle(b.mask_net, b.classifier, adversary, b.mask_enabled)
    if trace is not None:
        trace.append(("A", b.copy()))
    classifier, optim["classifier"] = adam_step(b.classifier, res.grads["classifier"], optim["classifier"], lr)
    b = ModelBundle(b.mask_net, classifier, b.adversary, b.mask_enabled)
    if trace is not None:
        trace.append(("B", b.copy()))

    # C: mask net against the updated heads.
    if cfg.use_mask:
        res = _objective(b, E, y, cfg, "C", gumbel=gumbel, drop_mask=drop)
        net, optim["mask_net"] = adam_step(b.mask_net.net, res.grads["mask_net"], optim["mask_net"], lr)
        b = ModelBundle(MaskNet(net, b.mask_net.temperature), b.classifier, b.adversary, b.mask_enabled)
    else:
        res = _objective(b, E, y, cfg, "C", gumbel=gumbel, drop_mask=drop, backward=False)
    if trace is not None:
        trace.append(("C", b.copy()))
    return TrainState(b, optim, state.step + 1), res.breakdown


def _mean_breakdown(items, w):
    vals = {k: float(np.mean([getattr(b, k) for b in items])) for k in TERMS}
    out = LossBreakdown(**vals, total=0.0)
    out.total = out.recompose(w)
    return out


def features(bundle: ModelBundle, E):
    """Deterministic ``(mask, z_c, z_nc)`` used for evaluation."""
    E = as_matrix(E, "embeddings")
    if E.shape[1] != bundle.d:
        raise DimensionError(f"embedding width {E.shape[1]} != model width {bundle.d}")
    if not bundle.mask_enabled:
        return np.ones_like(E), E.copy(), np.zeros_like(E)
    mask, _ = compute_mask(E, bundle.mask_net, "deterministic")
    split = split_features(E, mask)
    return mask, split.z_c, split.z_nc


def predict(bundle: ModelBundle, E):
    """Probabilities from ``h`` on the noiseless causal features."""
    _, z_c, _ = features(bundle, E)
    p, _ = mlp_forward(bundle.classifier, z_c)
    return p.ravel()


def _batches(perm, batch_size):
    n = perm.size
    if n <= batch_size:
        return [perm]
    out = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if out[-1].size < 4:
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


def _streams(seed):
    seqs = np.random.SeedSequence(int(seed)).spawn(3)
    return (
        np.random.Generator(np.random.PCG64(seqs[0])),
        np.random.Generator(np.random.PCG64(seqs[1])),
        NoiseSource(seqs[2]),
    )


def _validate(state, val: LabeledBatch, cfg, drop):
    b = state.bundle
    res = _objective(b, val.embeddings, val.labels, cfg, "validation", mask_mode="deterministic",
                     drop_mask=drop, backward=False)
    acc = float(np.mean((predict(b, val.embeddings) >= 0.5) == val.labels))
    adv_acc = float(np.mean((res.q >= 0.5) == val.labels))
    return res.breakdown, acc, adv_acc, float(res.split.mask.sum(axis=1).mean())


def initial_state(d, cfg: TrainConfig):
    init_rng, shuffle_rng, noise = _streams(cfg.seed)
    bundle = ModelBundle.init(d, init_rng, cfg.tau_start, cfg.mask_logit_bias, cfg.use_mask)
    return TrainState.fresh(bundle, cfg), shuffle_rng, noise


@dataclass
class FitProgress:
    """Resumable position of :func:`fit` at an epoch boundary."""

    state: TrainState
    epoch: int
    history: TrainHistory
    best: ModelBundle
    best_total: float
    stale: int
    shuffle_rng: np.random.Generator
    noise: NoiseSource

    @property
    def finished(self):
        return self.history.stopped_early


def _check_sets(train, val):
    for name, ds in (("training", train), ("validation", val)):
        if ds.n == 0:
            raise ValueError(f"{name} set is empty")
        if ds.labels is None:
            raise ValueError(f"{name} set has no labels")
    if train.d != val.d:
        raise DimensionError(f"training width {train.d} != validation width {val.d}")


def start_fit(d, cfg: TrainConfig, noise=None):
    state, shuffle_rng, default_noise = initial_state(d, cfg)
    return FitProgress(state, 0, TrainHistory(), state.bundle.copy(), np.inf, 0, shuffle_rng,
                       noise or default_noise)


def _validation_drop(cfg, shape):
    p = cfg.loss_weights.drop_p
    if p == 0:
        return np.zeros(shape)
    return NoiseSource(np.random.SeedSequence([int(cfg.seed), 7919])).bernoulli(p, shape)


def fit(train: LabeledBatch, val: LabeledBatch, cfg: TrainConfig, noise=None, resume=None,
        on_epoch=None):
    """Train with early stopping on validation total loss.

    Returns ``(bundle, history)`` where ``bundle`` is the snapshot with the
    lowest validation total. ``noise`` overrides the seed-derived stream for
    Gumbel and counterfactual draws. ``resume`` continues from a
    :class:`FitProgress`; ``on_epoch(progress)`` is called after every epoch.
    """
    _check_sets(train, val)
    prog = resume if resume is not None else start_fit(train.d, cfg, noise)
    if prog.state.bundle.d != train.d:
        raise DimensionError(f"resumed model width {prog.state.bundle.d} != data width {train.d}")
    val_drop = _validation_drop(cfg, val.embeddings.shape)
    E, y = train.embeddings, train.labels
    while prog.epoch < cfg.max_epochs and not prog.finished:
        epoch = prog.epoch
        tau = annealed_temperature(epoch, cfg.max_epochs, cfg.tau_start, cfg.tau_min)
        prog.state.bundle.mask_net.temperature = tau
        parts = []
        for idx in _batches(prog.shuffle_rng.permutation(train.n), cfg.batch_size):
            prog.state, bd = train_step(prog.state, E[idx], y[idx], cfg, prog.noise)
            parts.append(bd)
        val_bd, val_acc, adv_acc, sparsity = _validate(prog.state, val, cfg, val_drop)
        prog.history.append(EpochRecord(epoch, tau, _mean_breakdown(parts, cfg.loss_weights), val_bd,
                                        val_acc, adv_acc, sparsity, val_bd.mask_hsic))
        log.debug("epoch %d tau %.3f val total %.5f acc %.4f", epoch, tau, val_bd.total, val_acc)
        if val_bd.total < prog.best_total:
            prog.best, prog.best_total, prog.stale = prog.state.bundle.copy(), val_bd.total, 0
            prog.history.best_epoch = epoch
        else:
            prog.stale += 1
            if prog.stale >= cfg.early_stop_patience:
                prog.history.stopped_early = True
        prog.epoch = epoch + 1
        if on_epoch is not None:
            on_epoch(prog)
    return prog.best.copy(), prog.history


def adversary_probe(bundle: ModelBundle, data: LabeledBatch, seed=0, train_fraction=0.5,
                    steps=300, learning_rate=1e-2):
    """Held-out accuracy of a freshly trained probe (same shape as ``d``) on ``z_nc``.

    The probe is trained full-batch with Adam on half of ``data`` and scored
    on the other half; ``bundle`` is not modified.
    """
    if data.n < 2:
        raise ValueError("probe needs at least two samples")
    _, _, z_nc = features(bundle, data.embeddings)
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(data.n)
    k = max(1, min(data.n - 1, int(round(train_fraction * data.n))))
    tr, te = perm[:k], perm[k:]
    probe = MlpParams.init(bundle.adversary.layer_dims, rng, "sigmoid")
    opt = AdamState.fresh(probe)
    X, y = z_nc[tr], data.labels[tr]
    for _ in range(steps):
        q, tape = mlp_forward(probe, X)
        g, _ = mlp_backward(probe, tape, bce_grad(q, y)[:, None])
        probe, opt = adam_step(probe, g, opt, learning_rate)
    q, _ = mlp_forward(probe, z_nc[te])
    return float(np.mean((q.ravel() >= 0.5) == data.labels[te]))


def with_weights(cfg: TrainConfig, **changes):
    """Copy of ``cfg`` with some loss weights replaced."""
    return replace(cfg, loss_weights=replace(cfg.loss_weights, **changes))
