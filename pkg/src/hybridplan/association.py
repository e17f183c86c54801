"""Data-association hypotheses over landmark observations.

An observation array has one element per mapped landmark: the first ``n_z``
entries are real 2D relative-position measurements, the rest are
out-of-range fillers.  An association vector assigns every landmark either
one real element (injectively) or a canonical filler index.  Likelihoods
follow the ideal-detection model: a landmark inside sensing range always
produces an element, one outside never does, so both observing and *not*
observing carry evidence (negative information).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .belief import (
    GaussianConditionalBelief,
    WorldModel,
    gaussian_logpdf_2d,
    landmark_slot,
    marginal_loglikelihood,
)

__all__ = [
    "ObservationArray",
    "AssociationVector",
    "AssociationPath",
    "StatePoint",
    "HypothesisInconsistencyError",
    "feasible_associations",
    "association_likelihood",
    "observation_likelihood",
    "zeta",
    "da_weight_update",
]


class HypothesisInconsistencyError(RuntimeError):
    """Every hypothesis assigns zero likelihood to the evidence."""


@dataclass(frozen=True)
class ObservationArray:
    """Per-landmark observation slots; ``None`` marks out-of-range fillers.

    ``elements[i]`` is a 2D vector for i < n_z and ``None`` afterwards in a
    well-formed array.  ``classes[i]`` carries the detected class of a real
    element (``None`` for fillers).
    """

    elements: tuple[Optional[np.ndarray], ...]
    classes: tuple[Optional[int], ...]
    n_z_override: Optional[int] = None  # lets tests score impossible rows

    def __post_init__(self):
        elems = []
        for e in self.elements:
            if e is None:
                elems.append(None)
            else:
                a = np.asarray(e, dtype=float).reshape(2)
                a.flags.writeable = False
                elems.append(a)
        object.__setattr__(self, "elements", tuple(elems))
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.elements) != len(self.classes):
            raise ValueError("elements and classes must have equal length")

    @classmethod
    def from_detections(
        cls, detections: Sequence[tuple[np.ndarray, int]], n_landmarks: int
    ) -> "ObservationArray":
        """Build a well-formed array: detections first, fillers after."""
        if len(detections) > n_landmarks:
            raise ValueError("more detections than mapped landmarks")
        elems = [np.asarray(v, dtype=float) for v, _ in detections]
        classes = [c for _, c in detections]
        pad = n_landmarks - len(detections)
        return cls(tuple(elems) + (None,) * pad, tuple(classes) + (None,) * pad)

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def n_z(self) -> int:
        if self.n_z_override is not None:
            return self.n_z_override
        return sum(1 for e in self.elements if e is not None)

    @property
    def is_well_formed(self) -> bool:
        if self.n_z_override is not None:
            return False
        nz = self.n_z
        return all((self.elements[i] is not None) == (i < nz) for i in range(len(self)))

    def key(self, decimals: int = 9) -> Hashable:
        """Hashable identity for storing observations in planner trees."""
        parts = []
        for e, c in zip(self.elements, self.classes):
            if e is None:
                parts.append(None)
            else:
                parts.append((round(float(e[0]), decimals), round(float(e[1]), decimals), c))
        return tuple(parts)


@dataclass(frozen=True)
class AssociationVector:
    """Assignment of each mapped landmark to one observation-array index.

    Indices are 0-based: a value below ``n_z`` claims a real element, a
    value at or above ``n_z`` is a filler slot.  ``landmark_ids`` fixes the
    landmark order of the entries.
    """

    landmark_ids: tuple[int, ...]
    assignment: tuple[int, ...]

    def __post_init__(self):
        if len(self.landmark_ids) != len(self.assignment):
            raise ValueError("one assignment entry per landmark required")
        object.__setattr__(self, "landmark_ids", tuple(self.landmark_ids))
        object.__setattr__(self, "assignment", tuple(int(a) for a in self.assignment))

    def index_for(self, landmark: int) -> int:
        return self.assignment[self.landmark_ids.index(landmark)]

    def claims(self, n_z: int) -> dict[int, int]:
        """Landmark -> real element index, for claimed elements only."""
        return {
            k: a for k, a in zip(self.landmark_ids, self.assignment) if a < n_z
        }


@dataclass(frozen=True)
class AssociationPath:
    """A realization of association vectors up to the current step.

    Paths form a tree: each node extends its parent by one vector.  The
    root carries a label naming the prior hypothesis it grew from.
    """

    root_label: Hashable = 0
    parent: Optional["AssociationPath"] = None
    step: Optional[AssociationVector] = None

    def __post_init__(self):
        if (self.parent is None) != (self.step is None):
            raise ValueError("non-root paths need both a parent and a step vector")
        if self.parent is not None:
            depth = self.parent.depth + 1
            key = self.parent.key + (self.step.assignment,)
            label = self.parent.root_label
        else:
            depth = 0
            key = ()
            label = self.root_label
        object.__setattr__(self, "root_label", label)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "key", (label,) + key)

    def child(self, step: AssociationVector) -> "AssociationPath":
        return AssociationPath(self.root_label, self, step)

    @property
    def steps(self) -> tuple[AssociationVector, ...]:
        out = []
        node = self
        while node.parent is not None:
            out.append(node.step)
            node = node.parent
        return tuple(reversed(out))

    def __hash__(self):
        return hash(self.key)

    def __eq__(self, other):
        return isinstance(other, AssociationPath) and self.key == other.key


@dataclass(frozen=True)
class StatePoint:
    """A concrete realization of the agent pose and landmark positions."""

    pose: np.ndarray
    landmarks: Mapping[int, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=float).reshape(2))
        object.__setattr__(
            self,
            "landmarks",
            {k: np.asarray(v, dtype=float).reshape(2) for k, v in self.landmarks.items()},
        )

    def in_range(self, landmark: int, world: WorldModel) -> bool:
        d = self.landmarks[landmark] - self.pose
        return float(np.hypot(d[0], d[1])) <= world.sensing_range


def _mean_state_point(belief: GaussianConditionalBelief, world: WorldModel) -> StatePoint:
    return StatePoint(
        belief.block_mean(belief.current_pose_slot),
        {k: belief.block_mean(landmark_slot(k)) for k in world.landmark_ids},
    )


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------


def feasible_associations(
    belief: GaussianConditionalBelief, world: WorldModel, obs: ObservationArray
) -> list[AssociationVector]:
    """Enumerate association vectors with nonzero gated probability.

    A landmark may claim a real element only if their classes match and the
    landmark is within sensing range at the belief mean.  Every element
    that has at least one eligible claimant must be claimed (no unexplained
    yet explainable observations); elements nobody can claim stay
    unclaimed, which is the negative-information case.  Landmarks without
    a claim receive canonical filler indices n_z, n_z+1, ... in landmark
    order, so permutations of fillers collapse to one vector.  Output is
    lexicographic.  An empty result means the hypothesis cannot explain
    the observation at all.
    """
    if not obs.is_well_formed:
        raise ValueError("observation array must be well-formed for enumeration")
    lm_ids = world.landmark_ids
    if len(obs) != len(lm_ids):
        raise ValueError("observation array length must equal the number of landmarks")
    point = _mean_state_point(belief, world)
    n_z = obs.n_z

    eligible: dict[int, list[int]] = {}  # element index -> claimant landmarks
    for e in range(n_z):
        eligible[e] = [
            k
            for k in lm_ids
            if world.landmark_class(k) == obs.classes[e] and point.in_range(k, world)
        ]
    must_claim = [e for e in range(n_z) if eligible[e]]

    position = {k: i for i, k in enumerate(lm_ids)}
    vectors: list[AssociationVector] = []
    for chosen in itertools.product(*(eligible[e] for e in must_claim)):
        if len(set(chosen)) != len(chosen):
            continue
        assignment = [-1] * len(lm_ids)
        for e, k in zip(must_claim, chosen):
            assignment[position[k]] = e
        filler = n_z
        for i in range(len(lm_ids)):
            if assignment[i] < 0:
                assignment[i] = filler
                filler += 1
        vectors.append(AssociationVector(lm_ids, tuple(assignment)))
    vectors.sort(key=lambda v: v.assignment)
    return vectors


# ---------------------------------------------------------------------------
# Pointwise likelihood factors
# ---------------------------------------------------------------------------


def _assoc_factor(
    beta_is_filler: bool, in_range: bool, class_ok: bool, n_z: int
) -> float:
    if beta_is_filler:
        return 0.0 if in_range else 1.0
    if not in_range or not class_ok:
        return 0.0
    return 1.0 / n_z


def association_likelihood(
    assignment: AssociationVector,
    obs: ObservationArray,
    state: StatePoint,
    world: WorldModel,
) -> float:
    """Probability of the assignment given a point state.

    Product of per-landmark factors: an in-range landmark claims any one of
    the real elements uniformly (1/n_z, classes permitting); an out-of-range
    landmark sits on a filler slot with probability one; the two mixed cases
    are impossible and zero the product.
    """
    n_z = obs.n_z
    total = 1.0
    for k, a in zip(assignment.landmark_ids, assignment.assignment):
        filler = a >= n_z
        class_ok = filler or obs.classes[a] is None or obs.classes[a] == world.landmark_class(k)
        total *= _assoc_factor(filler, state.in_range(k, world), class_ok, max(n_z, 1))
        if total == 0.0:
            return 0.0
    return total


def observation_likelihood(
    assignment: AssociationVector,
    obs: ObservationArray,
    state: StatePoint,
    world: WorldModel,
) -> float:
    """Density of the observation array given a point state and assignment.

    Real elements assigned to in-range landmarks contribute the Gaussian
    sensor density; filler elements on out-of-range landmarks contribute
    one; contradictions (a filler where a detection is certain, or a real
    element from an out-of-range landmark) contribute zero.
    """
    total = 1.0
    for k, a in zip(assignment.landmark_ids, assignment.assignment):
        element = obs.elements[a]
        in_range = state.in_range(k, world)
        if element is None:
            if in_range:
                return 0.0
            continue
        if not in_range:
            return 0.0
        residual = element - (state.landmarks[k] - state.pose)
        total *= math.exp(gaussian_logpdf_2d(residual, world.obs_noise_cov))
    return total


# ---------------------------------------------------------------------------
# Hypothesis likelihood (zeta)
# ---------------------------------------------------------------------------


def zeta(
    belief: GaussianConditionalBelief,
    obs: ObservationArray,
    assignment: AssociationVector,
    world: WorldModel,
    mode: str = "mean-point",
    n_samples: int = 1024,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Marginal likelihood of (observation, assignment) under one hypothesis.

    The belief must already contain the predicted pose for this step.
    ``mean-point`` evaluates range indicators and the association factors at
    the belief mean and uses the exact Gaussian marginal of the predicted
    joint for the real elements, so it is deterministic.  ``monte-carlo``
    averages the pointwise integrand over ``n_samples`` joint state draws.
    """
    n_z = obs.n_z
    if mode == "mean-point":
        point = _mean_state_point(belief, world)
        log_total = 0.0
        for k, a in zip(assignment.landmark_ids, assignment.assignment):
            filler = a >= n_z or obs.elements[a] is None
            in_range = point.in_range(k, world)
            if filler:
                if in_range:
                    return 0.0
                continue
            class_ok = obs.classes[a] is None or obs.classes[a] == world.landmark_class(k)
            if not in_range or not class_ok:
                return 0.0
            log_total += math.log(1.0 / n_z)
            log_total += marginal_loglikelihood(belief, obs.elements[a], k, world)
        return math.exp(log_total)

    if mode == "monte-carlo":
        if rng is None:
            raise ValueError("monte-carlo mode needs an rng")
        samples = belief.sample(n_samples, rng)
        lm_offsets = {k: belief.offset(landmark_slot(k)) for k in world.landmark_ids}
        pose_off = belief.offset(belief.current_pose_slot)
        total = 0.0
        for row in samples:
            point = StatePoint(
                row[pose_off : pose_off + 2],
                {k: row[off : off + 2] for k, off in lm_offsets.items()},
            )
            v = association_likelihood(assignment, obs, point, world)
            if v > 0.0:
                v *= observation_likelihood(assignment, obs, point, world)
            total += v
        return total / n_samples

    raise ValueError(f"unknown zeta mode {mode!r}")


def table1_rows(obs_sigma: float = 1.0, sensing_range: float = 10.0) -> dict:
    """Evaluate every (z is filler?, index is filler?, in range?) combination.

    Returns a map from the boolean triple to the (observation factor,
    association factor) pair produced by :func:`observation_likelihood` and
    :func:`association_likelihood` on point states.  Built with one real
    element (so the uniform association factor is exactly one) and, where
    needed, deliberately ill-formed arrays that place a filler before a
    real element; those combinations cannot arise from a well-formed array
    but the likelihood model still scores them.
    """
    world = WorldModel(np.eye(2), np.eye(2) * obs_sigma**2, sensing_range, {0: 0})
    rows = {}
    for z_is_filler in (False, True):
        for index_is_filler in (False, True):
            for in_range in (False, True):
                lm_pos = np.array([3.0, 0.0]) if in_range else np.array([5 * sensing_range, 0.0])
                state = StatePoint(np.zeros(2), {0: lm_pos})
                element = None if z_is_filler else np.array([3.0, 0.0])
                obs = ObservationArray(
                    (element,),
                    (None if z_is_filler else 0,),
                    n_z_override=0 if index_is_filler else 1,
                )
                vec = AssociationVector((0,), (0,))
                rows[(z_is_filler, index_is_filler, in_range)] = (
                    observation_likelihood(vec, obs, state, world),
                    association_likelihood(vec, obs, state, world),
                )
    return rows


def da_weight_update(
    prior_weights: Sequence[float],
    zetas: Sequence,
) -> tuple[list[np.ndarray], float]:
    """Posterior hypothesis weights from per-parent child likelihoods.

    ``zetas[j]`` holds the likelihood of each child association of parent
    hypothesis ``j`` (a scalar is treated as a single child).  Returns the
    posterior weights in the same ragged layout together with the evidence
    ``sum_ij zeta_ij * w_j``; the posterior is ``zeta_ij * w_j / evidence``
    and sums to one.  Raises :class:`HypothesisInconsistencyError` when the
    evidence is zero.
    """
    prior = np.asarray(prior_weights, dtype=float)
    if not math.isclose(float(prior.sum()), 1.0, abs_tol=1e-9):
        raise ValueError("prior weights must sum to 1")
    rows = [np.atleast_1d(np.asarray(z, dtype=float)) for z in zetas]
    if len(rows) != prior.size:
        raise ValueError("one zeta row per prior hypothesis required")
    evidence = float(sum(w * row.sum() for w, row in zip(prior, rows)))
    if evidence <= 0.0:
        raise HypothesisInconsistencyError(
            "total hypothesis inconsistency: all zeta values are zero"
        )
    return [w * row / evidence for w, row in zip(prior, rows)], evidence
