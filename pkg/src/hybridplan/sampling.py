"""Importance sampling of association-hypothesis paths.

Paths are drawn from a uniform proposal over the feasible associations at
each step and carry importance weights correcting back to the true
posterior.  Resampling by weight at every step (sequential importance
resampling) keeps the sample population concentrated on plausible paths.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence, TypeVar

import numpy as np

__all__ = [
    "ImportanceWeightedPath",
    "ProposalConfig",
    "propose_child",
    "lambda_update",
    "self_normalize",
    "sir_resample",
    "frequency_weights",
]

P = TypeVar("P")


@dataclass(frozen=True)
class ImportanceWeightedPath:
    """A hypothesis path with its raw and self-normalized importance weight.

    Fresh root paths start at ``lam = 1``.
    """

    path: object
    lam: float = 1.0
    lam_self_normalized: float = float("nan")

    def scaled(self, factor: float) -> "ImportanceWeightedPath":
        return replace(self, lam=self.lam * factor)


@dataclass(frozen=True)
class ProposalConfig:
    proposal: str = "uniform"
    resample_every_step: bool = True
    scheme: str = "multinomial"  # or "systematic"
    seed: int = 0

    def __post_init__(self):
        if self.proposal != "uniform":
            raise ValueError(f"unsupported proposal {self.proposal!r}")
        if self.scheme not in ("multinomial", "systematic"):
            raise ValueError(f"unsupported resampling scheme {self.scheme!r}")


def propose_child(
    path, feasible: Sequence, rng: np.random.Generator
) -> tuple[object, float]:
    """Uniform draw of one child association; returns it with its proposal
    probability 1/len(feasible)."""
    if len(feasible) == 0:
        raise ValueError("cannot propose from an empty feasible set")
    idx = int(rng.integers(len(feasible)))
    return feasible[idx], 1.0 / len(feasible)


def lambda_update(
    lambda_prev: float,
    zeta: float,
    branching: int,
    eta: Optional[float] = None,
) -> float:
    """One step of the importance-weight recursion.

    ``branching`` is the feasible-set size the uniform proposal drew from,
    so the proposal correction multiplies by it.  With ``eta`` (the
    reciprocal of the step evidence) the recursion is exact; without it the
    result is unnormalized and must be self-normalized across the sample
    population later.
    """
    if lambda_prev < 0 or zeta < 0 or branching < 1:
        raise ValueError("lambda_prev and zeta must be nonnegative, branching >= 1")
    unnormalized = zeta * branching * lambda_prev
    if eta is None:
        return unnormalized
    return eta * unnormalized


def self_normalize(paths: Sequence[ImportanceWeightedPath]) -> list[ImportanceWeightedPath]:
    """Fill ``lam_self_normalized`` so the population sums to one.

    Zero-weight (collapsed) paths stay at zero and are excluded from the
    normalizer.
    """
    total = sum(p.lam for p in paths)
    if total <= 0:
        raise ValueError("all importance weights are zero")
    return [replace(p, lam_self_normalized=p.lam / total) for p in paths]


def sir_resample(
    paths: Sequence[ImportanceWeightedPath],
    rng: np.random.Generator,
    scheme: str = "multinomial",
) -> list[ImportanceWeightedPath]:
    """Resample N paths proportionally to weight and reset the weights.

    Returned paths have ``lam_self_normalized = 1/N`` exactly.  The raw
    ``lam`` is set to the pre-resampling population mean of ``lam`` so that
    weighted sums (1/N) sum lam_m f(path_m) keep their expectation; this is
    what makes resampling introduce no bias into the exact-eta estimator.
    Multinomial draws match the independence assumptions of the estimator
    analysis; systematic resampling is a lower-variance alternative.
    """
    n = len(paths)
    weights = np.array([p.lam for p in paths], dtype=float)
    total = weights.sum()
    if n == 0 or total <= 0:
        raise ValueError("resampling needs at least one positive weight")
    probs = weights / total
    if scheme == "multinomial":
        idx = rng.choice(n, size=n, p=probs)
    elif scheme == "systematic":
        positions = (rng.random() + np.arange(n)) / n
        idx = np.searchsorted(np.cumsum(probs), positions, side="right")
        idx = np.minimum(idx, n - 1)
    else:
        raise ValueError(f"unsupported resampling scheme {scheme!r}")
    mean_lam = total / n
    return [
        replace(paths[i], lam=mean_lam, lam_self_normalized=1.0 / n) for i in idx
    ]


def frequency_weights(samples: Sequence) -> dict:
    """Sample frequency of each path; frequencies sum to one."""
    if len(samples) == 0:
        raise ValueError("no samples")
    counts: dict = {}
    for s in samples:
        counts[s] = counts.get(s, 0) + 1
    n = len(samples)
    return {k: c / n for k, c in counts.items()}
