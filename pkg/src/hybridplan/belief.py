"""Linear-Gaussian conditional beliefs over agent trajectories and landmarks.

The continuous state is a stack of 2D blocks: one pose block per time step
plus one block per mapped landmark.  Motion is additive (new pose = old pose
+ action + noise) and observations are relative positions (z = landmark -
pose + noise), so prediction and measurement updates are exact Kalman steps
on the joint Gaussian.  A hybrid belief is a weighted set of such Gaussians,
one per data-association hypothesis.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "WorldModel",
    "GaussianConditionalBelief",
    "History",
    "HybridBelief",
    "SingularInnovationError",
    "predict",
    "update",
    "innovation_moments",
    "marginal_likelihood",
    "mixture_moments",
    "a_optimality",
    "state_reward_expectation",
]

_LOG_2PI = math.log(2.0 * math.pi)

_belief_counter = itertools.count()


class SingularInnovationError(ValueError):
    """Innovation covariance is numerically singular.

    Signals a degenerate zero-noise configuration; measurement updates and
    likelihood evaluations refuse to proceed rather than divide by ~0.
    """


def _as_cov(m, dim: int, name: str) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    return a


@dataclass(frozen=True)
class WorldModel:
    """Fixed physical parameters of the 2D world.

    ``landmark_classes`` maps landmark id to a class id; landmarks sharing a
    class are mutually aliased, a landmark with a private class is unique.
    """

    motion_noise_cov: np.ndarray
    obs_noise_cov: np.ndarray
    sensing_range: float
    landmark_classes: Mapping[int, int]

    def __post_init__(self):
        object.__setattr__(
            self, "motion_noise_cov", _as_cov(self.motion_noise_cov, 2, "motion_noise_cov")
        )
        object.__setattr__(
            self, "obs_noise_cov", _as_cov(self.obs_noise_cov, 2, "obs_noise_cov")
        )
        for name in ("motion_noise_cov", "obs_noise_cov"):
            a = getattr(self, name)
            # 2x2 SPD check via leading minors
            if a[0, 0] <= 0 or a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0] <= 0:
                raise ValueError(f"{name} must be positive definite")
        if not self.sensing_range > 0:
            raise ValueError("sensing_range must be positive")
        object.__setattr__(self, "landmark_classes", dict(self.landmark_classes))

    @property
    def landmark_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.landmark_classes))

    def landmark_class(self, k: int) -> int:
        return self.landmark_classes[k]


# A slot is ("x", t) for the pose at time t or ("l", k) for landmark k.
Slot = tuple[str, int]


def pose_slot(t: int) -> Slot:
    return ("x", t)


def landmark_slot(k: int) -> Slot:
    return ("l", k)


@dataclass(frozen=True)
class GaussianConditionalBelief:
    """Joint Gaussian over all pose blocks and instantiated landmark blocks.

    Immutable: every operation returns a new belief.  Pose slots appear in
    time order and are never reordered; landmark slots are appended when
    first referenced.
    """

    slots: tuple[Slot, ...]
    mean: np.ndarray
    cov: np.ndarray
    token: int = field(default_factory=lambda: next(_belief_counter), compare=False, repr=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        n = 2 * len(self.slots)
        if mean.shape != (n,):
            raise ValueError(f"mean must have length {n}, got {mean.shape}")
        if cov.shape != (n, n):
            raise ValueError(f"cov must be {n}x{n}, got {cov.shape}")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "slots", tuple(self.slots))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_offsets", {s: 2 * i for i, s in enumerate(self.slots)})
        object.__setattr__(self, "_chol", None)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_pose_prior(cls, mean, cov) -> "GaussianConditionalBelief":
        """Belief at time 0 holding a single pose block."""
        return cls((pose_slot(0),), np.asarray(mean, dtype=float), _as_cov(cov, 2, "cov"))

    def with_landmark(self, k: int, prior_mean, prior_cov) -> "GaussianConditionalBelief":
        """Append landmark ``k`` as an independent block with its prior."""
        if self.has_slot(landmark_slot(k)):
            raise ValueError(f"landmark {k} already instantiated")
        n = self.dim
        mean = np.concatenate([self.mean, np.asarray(prior_mean, dtype=float).reshape(2)])
        cov = np.zeros((n + 2, n + 2))
        cov[:n, :n] = self.cov
        cov[n:, n:] = _as_cov(prior_cov, 2, "prior_cov")
        return GaussianConditionalBelief(self.slots + (landmark_slot(k),), mean, cov)

    # -- structure --------------------------------------------------------

    @property
    def dim(self) -> int:
        return 2 * len(self.slots)

    def has_slot(self, slot: Slot) -> bool:
        return slot in self._offsets

    def offset(self, slot: Slot) -> int:
        return self._offsets[slot]

    @property
    def current_time(self) -> int:
        return max(t for kind, t in self.slots if kind == "x")

    @property
    def current_pose_slot(self) -> Slot:
        return pose_slot(self.current_time)

    def block_mean(self, slot: Slot) -> np.ndarray:
        i = self.offset(slot)
        return self.mean[i : i + 2]

    def block_cov(self, slot: Slot) -> np.ndarray:
        i = self.offset(slot)
        return self.cov[i : i + 2, i : i + 2]

    def marginal(self, slots: Sequence[Slot]) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the requested blocks, in the given order."""
        idx = np.concatenate([[self.offset(s), self.offset(s) + 1] for s in slots])
        return self.mean[idx], self.cov[np.ix_(idx, idx)]

    # -- sampling and validation -------------------------------------------

    def marginalized_to(self, keep: Sequence[Slot]) -> "GaussianConditionalBelief":
        """Exact marginal over a subset of slots, preserving their order."""
        keep_set = set(keep)
        slots = tuple(s for s in self.slots if s in keep_set)
        if len(slots) != len(keep_set):
            missing = keep_set - set(slots)
            raise KeyError(f"unknown slots {missing}")
        mean, cov = self.marginal(slots)
        return GaussianConditionalBelief(slots, mean.copy(), cov.copy())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` joint samples, shape (n, dim).  Cholesky is cached."""
        chol = self._chol
        if chol is None:
            chol = _stable_cholesky(self.cov)
            object.__setattr__(self, "_chol", chol)
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ chol.T

    def validate(self, atol: float = 1e-8) -> None:
        if not np.allclose(self.cov, self.cov.T, atol=atol):
            raise ValueError("covariance not symmetric")
        w = np.linalg.eigvalsh(self.cov)
        if w.min() < -atol:
            raise ValueError(f"covariance not PSD (min eigenvalue {w.min():.3e})")


def _stable_cholesky(cov: np.ndarray) -> np.ndarray:
    jitter = 0.0
    for _ in range(6):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-12)
    raise np.linalg.LinAlgError("covariance not factorizable even with jitter")


@dataclass(frozen=True)
class History:
    """Action/observation record; one more action than observations means
    the latest action's observation is still pending (predicted stage)."""

    actions: tuple = ()
    observations: tuple = ()

    def __post_init__(self):
        if len(self.actions) not in (len(self.observations), len(self.observations) + 1):
            raise ValueError("history must hold |obs| or |obs|+1 actions")

    @property
    def predicted(self) -> bool:
        return len(self.actions) == len(self.observations) + 1

    def with_action(self, action) -> "History":
        if self.predicted:
            raise ValueError("previous action still awaits its observation")
        return History(self.actions + (action,), self.observations)

    def with_observation(self, obs) -> "History":
        if not self.predicted:
            raise ValueError("no pending action for this observation")
        return History(self.actions, self.observations + (obs,))


# ---------------------------------------------------------------------------
# Gaussian operations
# ---------------------------------------------------------------------------


def predict(
    belief: GaussianConditionalBelief, action, world: WorldModel
) -> GaussianConditionalBelief:
    """Append the next pose block after an additive motion step.

    New pose = current pose + action + noise; cross-covariances with all
    existing blocks carry over exactly because the model is linear.
    """
    action = np.asarray(action, dtype=float).reshape(2)
    if not np.all(np.isfinite(action)):
        raise ValueError("action must be finite")
    n = belief.dim
    p = belief.offset(belief.current_pose_slot)
    mean = np.concatenate([belief.mean, belief.mean[p : p + 2] + action])
    cov = np.zeros((n + 2, n + 2))
    cov[:n, :n] = belief.cov
    cross = belief.cov[:, p : p + 2]
    cov[:n, n:] = cross
    cov[n:, :n] = cross.T
    cov[n:, n:] = belief.cov[p : p + 2, p : p + 2] + world.motion_noise_cov
    return GaussianConditionalBelief(
        belief.slots + (pose_slot(belief.current_time + 1),), mean, cov
    )


def innovation_moments(
    belief: GaussianConditionalBelief, landmark: int, world: WorldModel
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted observation mean and covariance for ``z = l - x + v``."""
    x = belief.offset(belief.current_pose_slot)
    l = belief.offset(landmark_slot(landmark))
    c = belief.cov
    nu_mean = belief.mean[l : l + 2] - belief.mean[x : x + 2]
    s = (
        c[l : l + 2, l : l + 2]
        + c[x : x + 2, x : x + 2]
        - c[l : l + 2, x : x + 2]
        - c[x : x + 2, l : l + 2]
        + world.obs_noise_cov
    )
    return nu_mean, s


def _inv2(s: np.ndarray) -> tuple[np.ndarray, float]:
    det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
    if det <= 0 or not np.isfinite(det):
        raise SingularInnovationError(
            f"innovation covariance singular (det={det:.3e}); "
            "check for zero observation noise on a deterministic block"
        )
    inv = np.array([[s[1, 1], -s[0, 1]], [-s[1, 0], s[0, 0]]]) / det
    return inv, det


def update(
    belief: GaussianConditionalBelief,
    obs_element,
    landmark: int,
    world: WorldModel,
    landmark_prior: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> GaussianConditionalBelief:
    """Exact Kalman measurement update for one observation element.

    If the landmark has no slot yet and ``landmark_prior`` is given, the
    slot is created from that prior first.
    """
    z = np.asarray(obs_element, dtype=float).reshape(2)
    if not np.all(np.isfinite(z)):
        raise ValueError("observation element must be finite")
    if not belief.has_slot(landmark_slot(landmark)):
        if landmark_prior is None:
            raise KeyError(f"landmark {landmark} has no slot and no prior was supplied")
        belief = belief.with_landmark(landmark, *landmark_prior)

    x = belief.offset(belief.current_pose_slot)
    l = belief.offset(landmark_slot(landmark))
    nu_mean, s = innovation_moments(belief, landmark, world)
    s_inv, _ = _inv2(s)

    # P H^T for H = [.. -I at pose .. +I at landmark ..]
    pht = belief.cov[:, l : l + 2] - belief.cov[:, x : x + 2]
    gain = pht @ s_inv
    mean = belief.mean + gain @ (z - nu_mean)
    cov = belief.cov - gain @ pht.T
    cov = 0.5 * (cov + cov.T)
    return GaussianConditionalBelief(belief.slots, mean, cov)


def marginal_loglikelihood(
    belief: GaussianConditionalBelief, obs_element, landmark: int, world: WorldModel
) -> float:
    """Log density of one observation element under the predicted joint."""
    z = np.asarray(obs_element, dtype=float).reshape(2)
    nu_mean, s = innovation_moments(belief, landmark, world)
    return gaussian_logpdf_2d(z - nu_mean, s)


def marginal_likelihood(
    belief: GaussianConditionalBelief, obs_element, landmark: int, world: WorldModel
) -> float:
    """Density of one observation element under the predicted joint.

    The belief must already contain the predicted pose for the step the
    observation belongs to.
    """
    return math.exp(marginal_loglikelihood(belief, obs_element, landmark, world))


def gaussian_logpdf_2d(residual: np.ndarray, cov: np.ndarray) -> float:
    """Log density of a zero-mean 2D Gaussian at ``residual``."""
    inv, det = _inv2(cov)
    quad = residual @ inv @ residual
    return -0.5 * (quad + math.log(det)) - _LOG_2PI


# ---------------------------------------------------------------------------
# Hybrid belief
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HybridBelief:
    """Weighted set of conditional beliefs, one per association hypothesis.

    ``hypotheses`` holds (key, belief, weight) triples; keys identify the
    discrete hypothesis (an association path) and must be pairwise distinct.
    """

    hypotheses: tuple[tuple[Hashable, GaussianConditionalBelief, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))
        keys = [k for k, _, _ in self.hypotheses]
        if len(set(keys)) != len(keys):
            raise ValueError("association hypothesis keys must be pairwise distinct")
        if any(w < 0 for _, _, w in self.hypotheses):
            raise ValueError("weights must be nonnegative")

    def __len__(self) -> int:
        return len(self.hypotheses)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, _, w in self.hypotheses])

    @property
    def beliefs(self) -> tuple[GaussianConditionalBelief, ...]:
        return tuple(b for _, b, _ in self.hypotheses)

    @property
    def keys(self) -> tuple[Hashable, ...]:
        return tuple(k for k, _, _ in self.hypotheses)

    def is_normalized(self, atol: float = 1e-9) -> bool:
        return math.isclose(float(self.weights.sum()), 1.0, abs_tol=atol)

    def normalized(self) -> "HybridBelief":
        total = float(self.weights.sum())
        if total <= 0:
            raise ValueError("cannot normalize: total weight is zero")
        return HybridBelief(tuple((k, b, w / total) for k, b, w in self.hypotheses))

    @classmethod
    def single(cls, key: Hashable, belief: GaussianConditionalBelief) -> "HybridBelief":
        return cls(((key, belief, 1.0),))


def mixture_moments(
    means: Sequence[np.ndarray], covs: Sequence[np.ndarray], weights: Sequence[float]
) -> tuple[np.ndarray, np.ndarray]:
    """Moment-matched mean and covariance of a Gaussian mixture."""
    w = np.asarray(weights, dtype=float)
    mu = np.stack([np.asarray(m, dtype=float) for m in means])
    mbar = w @ mu
    second = np.zeros((mu.shape[1], mu.shape[1]))
    for wi, mi, ci in zip(w, mu, covs):
        second += wi * (np.asarray(ci) + np.outer(mi, mi))
    return mbar, second - np.outer(mbar, mbar)


def a_optimality(hybrid: HybridBelief, scope: str = "full") -> float:
    """Negative trace of the moment-matched mixture covariance.

    ``scope`` is ``"pose"`` (current pose block only) or ``"full"`` (all
    blocks; requires identical slot layouts across hypotheses).
    """
    if not hybrid.is_normalized():
        raise ValueError("hybrid belief must be normalized")
    if scope == "pose":
        parts = [
            (b.block_mean(b.current_pose_slot), b.block_cov(b.current_pose_slot))
            for b in hybrid.beliefs
        ]
    elif scope == "full":
        layout = hybrid.beliefs[0].slots
        for b in hybrid.beliefs:
            if b.slots != layout:
                raise ValueError("full-state scope needs identical slot layouts")
        parts = [(b.mean, b.cov) for b in hybrid.beliefs]
    else:
        raise ValueError(f"unknown scope {scope!r}")
    _, cov = mixture_moments([m for m, _ in parts], [c for _, c in parts], hybrid.weights)
    return -float(np.trace(cov))


def state_reward_expectation(
    hybrid: HybridBelief,
    reward: Callable[[np.ndarray, GaussianConditionalBelief, object], float],
    action,
    n_x: int,
    rng: np.random.Generator,
    lambdas: Optional[Sequence[float]] = None,
) -> float:
    """Importance-weighted Monte Carlo estimate of E[r(X, a)] over the mixture.

    Draws ``n_x`` i.i.d. joint samples per hypothesis and averages
    ``(1/N) sum_j lambda_j * mean_k r(X_jk, a)``.  When ``lambdas`` is not
    given, the hybrid weights are used (lambda_j = N * w_j), which makes the
    estimate the exact mixture expectation in the limit.
    """
    if n_x < 1:
        raise ValueError("n_x must be >= 1")
    n_hyp = len(hybrid)
    if lambdas is None:
        lam = hybrid.weights * n_hyp
    else:
        lam = np.asarray(lambdas, dtype=float)
        if lam.shape != (n_hyp,):
            raise ValueError("one lambda per hypothesis required")
    total = 0.0
    for (key, belief, _), lam_j in zip(hybrid.hypotheses, lam):
        if lam_j == 0.0:
            belief.sample(n_x, rng)  # keep the stream aligned regardless of weight
            continue
        xs = belief.sample(n_x, rng)
        total += lam_j * float(np.mean([reward(x, belief, action) for x in xs]))
    return total / n_hyp
