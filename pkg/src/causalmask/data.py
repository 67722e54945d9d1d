from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass
class LabeledBatch:
    """Embeddings ``(n, d)`` with optional binary labels and ground truth.

    ``ground_truth`` is the sorted tuple of causal coordinates when known
    (synthetic data), else ``None``.
    """

    embeddings: np.ndarray
    labels: np.ndarray = None
    domain_id: str = ""
    ground_truth: tuple = None

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2:
            raise DimensionError(f"embeddings must be 2-D, got {self.embeddings.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
            if self.labels.size != self.embeddings.shape[0]:
                raise DimensionError(
                    f"{self.embeddings.shape[0]} embeddings but {self.labels.size} labels"
                )
            if not np.all((self.labels == 0) | (self.labels == 1)):
                raise ValueError("labels must be 0 or 1")
        if self.ground_truth is not None:
            self.ground_truth = tuple(sorted(int(i) for i in self.ground_truth))
            if self.ground_truth and not 0 <= self.ground_truth[0] <= self.ground_truth[-1] < self.d:
                raise DimensionError("ground-truth coordinates out of range")

    @property
    def n(self):
        return self.embeddings.shape[0]

    @property
    def d(self):
        return self.embeddings.shape[1]

    @property
    def truth_mask(self):
        if self.ground_truth is None:
            return None
        out = np.zeros(self.d, dtype=bool)
        out[list(self.ground_truth)] = True
        return out

    def subset(self, idx):
        return LabeledBatch(
            self.embeddings[idx],
            None if self.labels is None else self.labels[idx],
            self.domain_id,
            self.ground_truth,
        )

    def split(self, fraction, rng):
        """Random ``(rest, held_out)`` split with ``round(fraction * n)`` held out."""
        perm = rng.permutation(self.n)
        k = int(round(fraction * self.n))
        return self.subset(np.sort(perm[k:])), self.subset(np.sort(perm[:k]))
