"""Noisy multilabel training pieces: the randomized softmax loss and the
per-class posterior transform.

Missing labels dominate user-generated annotations, so instead of an explicit
noise model each training visit samples a single target uniformly from the
image's positive tags and applies ordinary softmax cross-entropy. The target
is resampled on every visit. Images with no positive tags are skipped by the
trainer.

The posterior transform maps a raw pre-softmax activation s and a per-class
bias b to 1 / (1 + exp(-s - b)); only s + b matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import softmax


class EmptyLabelSetError(ValueError):
    """Randomized softmax needs at least one positive tag."""


@dataclass(frozen=True)
class LabelSet:
    """Positive tag indices for one image (deduplicated, bounded)."""

    positives: frozenset[int]

    @classmethod
    def of(cls, indices, vocab_size: int | None = None) -> "LabelSet":
        idx = frozenset(int(i) for i in indices)
        if any(i < 0 for i in idx):
            raise ValueError("negative tag index")
        if vocab_size is not None and any(i >= vocab_size for i in idx):
            raise ValueError("tag index exceeds vocabulary size")
        return cls(idx)

    def __len__(self):
        return len(self.positives)


def sample_target(labels: LabelSet | frozenset | set, rng: np.random.Generator) -> int:
    positives = labels.positives if isinstance(labels, LabelSet) else frozenset(labels)
    if not positives:
        raise EmptyLabelSetError("no positive tags to sample from")
    ordered = sorted(positives)
    return ordered[rng.integers(0, len(ordered))]


def _cross_entropy(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    probs = softmax(logits.astype(np.float64))
    loss = -math.log(max(probs[target], 1e-300))
    grad = probs.copy()
    grad[target] -= 1.0
    return loss, grad


def randomized_softmax_loss(logits, labels, rng: np.random.Generator):
    """Sample one positive tag uniformly and score it with cross-entropy.

    Returns (loss, grad wrt logits, chosen tag index).
    """
    logits = np.asarray(logits, dtype=np.float64)
    chosen = sample_target(labels, rng)
    if chosen >= logits.size:
        raise ValueError("label index exceeds logit vector size")
    loss, grad = _cross_entropy(logits, chosen)
    return loss, grad, chosen


def expected_loss_oracle(logits, labels) -> float:
    """Exact mean of cross-entropy over every positive tag."""
    logits = np.asarray(logits, dtype=np.float64)
    positives = labels.positives if isinstance(labels, LabelSet) else frozenset(labels)
    if not positives:
        raise EmptyLabelSetError("no positive tags")
    return sum(_cross_entropy(logits, t)[0] for t in sorted(positives)) / len(positives)


def expected_grad_oracle(logits, labels) -> np.ndarray:
    """Gradient of the expected loss: the equal-weight mean of per-choice grads."""
    logits = np.asarray(logits, dtype=np.float64)
    positives = sorted(labels.positives if isinstance(labels, LabelSet) else frozenset(labels))
    if not positives:
        raise EmptyLabelSetError("no positive tags")
    grads = [_cross_entropy(logits, t)[1] for t in positives]
    return np.mean(grads, axis=0)


def posterior(logit: float, bias: float) -> float:
    """Eq.-style sigmoid posterior in (0, 1); strictly increasing in s + b."""
    z = float(logit) + float(bias)
    if not math.isfinite(z):
        raise ValueError("logit + bias must be finite")
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def posterior_to_logit(p: float) -> float:
    """Inverse of the posterior at bias 0 (the log-odds)."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    return math.log(p / (1.0 - p))


def average_tags_per_image(label_sets) -> float:
    """Reported alongside training runs; randomization matters less near 1."""
    sets = list(label_sets)
    if not sets:
        return 0.0
    return sum(len(s) for s in sets) / len(sets)
