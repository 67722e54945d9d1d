"""Four-way module ablation: mask factorization on/off x adversarial masking on/off."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .metrics import accuracy, average_precision
from .trainer import TrainConfig, fit, predict, with_weights

ABLATION_ORDER = ("both_off", "factorization_only", "masking_only", "full")

MASKING_ONLY_NOTE = (
    "masking_only keeps the mask fixed at all ones and trains the adversary "
    "and counterfactual losses with a second copy of the embeddings as z_nc"
)


def ablation_configs(base: TrainConfig):
    """The four configurations, all sharing ``base``'s seed and optimiser settings."""
    return {
        "both_off": replace(
            with_weights(base, alpha=0.0, beta=0.0, lambda1=0.0, lambda2=0.0),
            use_mask=False,
            adversary_on_copy=False,
        ),
        "factorization_only": with_weights(base, alpha=0.0, beta=0.0),
        "masking_only": replace(
            with_weights(base, lambda1=0.0, lambda2=0.0), use_mask=False, adversary_on_copy=True
        ),
        "full": base,
    }


@dataclass
class AblationRow:
    name: str
    same_domain_accuracy: float
    shifted_accuracy: float
    shifted_average_precision: float
    epochs: int


def ablation_row(name, bundle, history, bench):
    """Score one trained configuration on the same-domain and shifted test sets."""
    same = bench.test_same_domain
    accs, aps = [], []
    for b in bench.test_shifted:
        p = predict(bundle, b.embeddings)
        accs.append(accuracy(p, b.labels))
        aps.append(average_precision(p, b.labels))
    return AblationRow(
        name,
        accuracy(predict(bundle, same.embeddings), same.labels),
        float(np.mean(accs)),
        float(np.mean(aps)),
        len(history.records),
    )


def run_ablation(bench, base: TrainConfig = None, names=ABLATION_ORDER):
    base = base or TrainConfig()
    configs = ablation_configs(base)
    rows = []
    for name in names:
        bundle, hist = fit(bench.train, bench.val, configs[name])
        rows.append(ablation_row(name, bundle, hist, bench))
    return rows


def ordering_holds(rows):
    """Full strictly best on shifted accuracy, both single-module rows above both-off."""
    acc = {r.name: r.shifted_accuracy for r in rows}
    others = [acc[k] for k in ("both_off", "factorization_only", "masking_only")]
    return (
        acc["full"] > max(others)
        and acc["factorization_only"] > acc["both_off"]
        and acc["masking_only"] > acc["both_off"]
    )


def format_ablation(rows):
    lines = [f"# {MASKING_ONLY_NOTE}",
             f"{'configuration':<22}{'same ACC':>10}{'shift ACC':>11}{'shift AP':>10}{'epochs':>8}"]
    for r in rows:
        lines.append(f"{r.name:<22}{r.same_domain_accuracy:>10.4f}{r.shifted_accuracy:>11.4f}"
                     f"{r.shifted_average_precision:>10.4f}{r.epochs:>8d}")
    return "\n".join(lines)
