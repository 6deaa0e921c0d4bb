"""Within-batch MixUp over frequency tensors (or any equally-shaped arrays)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import RejectedInputError

DEFAULT_MAX_WEIGHT = 0.55
_RESAMPLE_TRIES = 100


@dataclass(frozen=True)
class SoftLabel:
    """Weighted one-hot label as sorted ``(class_id, weight)`` pairs."""

    entries: tuple[tuple[int, float], ...]

    @classmethod
    def from_pairs(cls, classes, weights) -> "SoftLabel":
        merged: dict[int, float] = {}
        for c, w in zip(classes, weights):
            w = float(w)
            if not w > 0:
                raise RejectedInputError(f"label weight {w} is not positive")
            merged[int(c)] = merged.get(int(c), 0.0) + w
        if not merged:
            raise RejectedInputError("a soft label needs at least one entry")
        total = sum(merged.values())
        if abs(total - 1.0) > 1e-9:
            raise RejectedInputError(f"label weights sum to {total}, not 1")
        return cls(tuple(sorted(merged.items())))

    @classmethod
    def hard(cls, class_id: int) -> "SoftLabel":
        return cls(((int(class_id), 1.0),))

    @property
    def classes(self) -> list[int]:
        return [c for c, _ in self.entries]

    @property
    def weights(self) -> list[float]:
        return [w for _, w in self.entries]

    def to_dense(self, class_count: int) -> np.ndarray:
        out = np.zeros(class_count)
        for c, w in self.entries:
            out[c] += w
        return out


def dense_targets(labels, class_count: int) -> np.ndarray:
    """Stack soft labels into a ``(batch, class_count)`` weight matrix."""
    return np.stack([lab.to_dense(class_count) for lab in labels]) if labels else np.zeros((0, class_count))


@dataclass
class MixPlan:
    k: int
    indices: np.ndarray  # (batch, k) int
    coeffs: np.ndarray  # (batch, k) float

    @property
    def batch_size(self) -> int:
        return int(self.indices.shape[0])

    def to_dict(self) -> dict:
        return {
            "k": int(self.k),
            "indices": self.indices.tolist(),
            "coeffs": self.coeffs.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MixPlan":
        return cls(
            k=int(doc["k"]),
            indices=np.asarray(doc["indices"], dtype=np.int64),
            coeffs=np.asarray(doc["coeffs"], dtype=np.float64),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "MixPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class MixedBatch:
    tensors: np.ndarray
    labels: list[SoftLabel]

    def __post_init__(self):
        if len(self.tensors) != len(self.labels):
            raise RejectedInputError(
                f"{len(self.tensors)} tensors but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)

    def targets(self, class_count: int) -> np.ndarray:
        return dense_targets(self.labels, class_count)


def check_feasible(k: int, max_weight: float) -> None:
    """Raise unless k weights summing to 1 can all stay at or below ``max_weight``."""
    if k < 1:
        raise RejectedInputError(f"k must be at least 1, got {k}")
    if not max_weight <= 1.0:
        raise RejectedInputError(f"max_weight {max_weight} exceeds 1")
    if k == 1:
        if max_weight < 1.0:
            raise RejectedInputError("k=1 needs max_weight 1")
    elif not max_weight > 1.0 / k:
        raise RejectedInputError(
            f"max_weight {max_weight} is infeasible for k={k} (must exceed 1/k)"
        )


def _cap_rows(coeffs: np.ndarray, max_weight: float) -> np.ndarray:
    # Water-filling: clamp violators to the cap, rescale the free entries to the rest.
    out = coeffs.copy()
    capped = np.zeros_like(out, dtype=bool)
    for _ in range(out.shape[1]):
        over = out > max_weight
        if not over.any():
            break
        capped |= over
        n_capped = capped.sum(axis=1, keepdims=True)
        free_sum = np.where(capped, 0.0, out).sum(axis=1, keepdims=True)
        budget = 1.0 - n_capped * max_weight
        scale = np.divide(budget, free_sum, out=np.ones_like(free_sum), where=free_sum > 0)
        out = np.where(capped, max_weight, out * scale)
    return out


def sample_coefficients(
    batch_size: int, k: int, max_weight: float, rng: np.random.Generator
) -> np.ndarray:
    """Row-stochastic ``(batch, k)`` weights in ``(0, max_weight]``.

    Rows are normalized uniform draws; offending rows are resampled up to
    100 times and any survivors are capped by water-filling.
    """
    check_feasible(k, max_weight)
    if k == 1:
        return np.ones((batch_size, 1))
    coeffs = 1.0 - rng.random((batch_size, k))
    coeffs /= coeffs.sum(axis=1, keepdims=True)
    for _ in range(_RESAMPLE_TRIES):
        bad = coeffs.max(axis=1) > max_weight
        if not bad.any():
            break
        fresh = 1.0 - rng.random((int(bad.sum()), k))
        coeffs[bad] = fresh / fresh.sum(axis=1, keepdims=True)
    coeffs = _cap_rows(coeffs, max_weight)
    # Exact row sums: push the rounding residue into each row's smallest entry.
    residue = 1.0 - coeffs.sum(axis=1)
    coeffs[np.arange(batch_size), coeffs.argmin(axis=1)] += residue
    return coeffs


def sample_mix_plan(
    batch_size: int,
    k: int,
    max_weight: float = DEFAULT_MAX_WEIGHT,
    rng: np.random.Generator | None = None,
) -> MixPlan:
    if batch_size < 1:
        raise RejectedInputError(f"batch_size must be at least 1, got {batch_size}")
    check_feasible(k, max_weight)
    if rng is None:
        rng = np.random.default_rng()
    cols = [np.arange(batch_size)] + [rng.permutation(batch_size) for _ in range(k - 1)]
    indices = np.stack(cols, axis=1).astype(np.int64)
    coeffs = sample_coefficients(batch_size, k, max_weight, rng)
    return MixPlan(k=k, indices=indices, coeffs=coeffs)


def apply_mix(batch, labels, plan: MixPlan) -> MixedBatch:
    """Row ``r`` becomes ``sum_j coeffs[r, j] * batch[indices[r, j]]``; labels follow."""
    batch = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if batch.shape[0] != plan.batch_size or labels.shape[0] != plan.batch_size:
        raise RejectedInputError(
            f"plan is for {plan.batch_size} samples, got {batch.shape[0]} tensors "
            f"and {labels.shape[0]} labels"
        )
    bshape = (plan.batch_size,) + (1,) * (batch.ndim - 1)
    tensors = plan.coeffs[:, 0].reshape(bshape) * batch[plan.indices[:, 0]]
    for j in range(1, plan.k):
        tensors = tensors + plan.coeffs[:, j].reshape(bshape) * batch[plan.indices[:, j]]
    soft = [
        SoftLabel.from_pairs(labels[row], coeffs)
        for row, coeffs in zip(plan.indices, plan.coeffs)
    ]
    return MixedBatch(tensors=tensors, labels=soft)


def instahide_sign_flip(batch: MixedBatch, rng: np.random.Generator) -> MixedBatch:
    signs = rng.integers(0, 2, size=batch.tensors.shape) * 2 - 1
    return MixedBatch(tensors=batch.tensors * signs, labels=list(batch.labels))
