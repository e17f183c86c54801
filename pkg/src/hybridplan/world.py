"""2D linear-Gaussian world: planner-facing model and ground-truth stepping.

A scenario action is a macro move: ``micro_steps`` straight segments in one
of four cardinal directions, sensing after each segment.  The planners see
the macro abstraction (one prediction with aggregated motion noise and one
observation array at the endpoint); execution integrates all intermediate
observations and keeps the joint at macro pose resolution by marginalizing
intra-macro poses out again (exact for a Gaussian).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .association import (
    AssociationPath,
    HypothesisInconsistencyError,
    ObservationArray,
    da_weight_update,
    feasible_associations,
    zeta,
)
from .belief import (
    GaussianConditionalBelief,
    HybridBelief,
    WorldModel,
    landmark_slot,
    mixture_moments,
    predict,
    update,
)

__all__ = [
    "RewardSpec",
    "LandmarkSpec",
    "ScenarioGeometry",
    "WorldHypothesis",
    "LinearGaussianModel",
    "hybrid_reward",
    "initial_hybrid",
    "inference_step",
    "InferenceState",
]

CARDINAL = {
    "+x": np.array([1.0, 0.0]),
    "-x": np.array([-1.0, 0.0]),
    "+y": np.array([0.0, 1.0]),
    "-y": np.array([0.0, -1.0]),
}


@dataclass(frozen=True)
class RewardSpec:
    """How a hybrid belief is scored.

    ``kind`` is ``a_opt_full``, ``a_opt_pose`` or ``goal``; the goal reward
    is ``-(wt_dist * E[distance to goal] + wt_trace * pose mixture trace)``.
    """

    kind: str = "a_opt_full"
    wt_dist: float = 1.0
    wt_trace: float = 1.0
    goal: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("a_opt_full", "a_opt_pose", "goal"):
            raise ValueError(f"unknown reward kind {self.kind!r}")
        if self.kind == "goal":
            if self.goal is None:
                raise ValueError("goal reward needs a goal position")
            object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float).reshape(2))

    @property
    def scope_is_full(self) -> bool:
        return self.kind == "a_opt_full"


@dataclass(frozen=True)
class LandmarkSpec:
    id: int
    position: np.ndarray
    class_id: int
    prior_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        object.__setattr__(self, "prior_cov", np.asarray(self.prior_cov, dtype=float))


@dataclass(frozen=True)
class ScenarioGeometry:
    """Static description shared by the environment and the agent's model."""

    landmarks: tuple[LandmarkSpec, ...]
    sensing_range: float
    motion_noise_micro: np.ndarray
    obs_noise: np.ndarray
    micro_steps: int
    micro_step_m: float

    def __post_init__(self):
        object.__setattr__(self, "landmarks", tuple(self.landmarks))
        object.__setattr__(
            self, "motion_noise_micro", np.asarray(self.motion_noise_micro, dtype=float)
        )
        object.__setattr__(self, "obs_noise", np.asarray(self.obs_noise, dtype=float))

    @property
    def landmark_classes(self) -> dict[int, int]:
        return {lm.id: lm.class_id for lm in self.landmarks}

    def world(self, macro: bool) -> WorldModel:
        scale = self.micro_steps if macro else 1
        return WorldModel(
            self.motion_noise_micro * scale,
            self.obs_noise,
            self.sensing_range,
            self.landmark_classes,
        )

    def displacement(self, action: str, macro: bool) -> np.ndarray:
        steps = self.micro_steps if macro else 1
        return CARDINAL[action] * self.micro_step_m * steps


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------


def _scope_stats(belief: GaussianConditionalBelief, full: bool) -> tuple[float, np.ndarray]:
    """(trace, mean) of the reward scope: everything or the current pose."""
    if full:
        return float(np.trace(belief.cov)), belief.mean
    slot = belief.current_pose_slot
    return float(np.trace(belief.block_cov(slot))), belief.block_mean(slot)


def hybrid_reward(
    weights: Sequence[float],
    beliefs: Sequence[GaussianConditionalBelief],
    spec: RewardSpec,
) -> float:
    """Parametric reward of a weighted set of conditional beliefs.

    Uncertainty enters through the trace of the moment-matched mixture
    covariance; the goal variant adds the weighted distance of the pose
    means to the goal.
    """
    w = np.asarray(weights, dtype=float)
    full = spec.scope_is_full
    traces = np.empty(len(w))
    means = []
    for i, b in enumerate(beliefs):
        traces[i], mu = _scope_stats(b, full)
        means.append(mu)
    means = np.stack(means)
    mbar = w @ means
    mix_trace = float(w @ traces + w @ (means * means).sum(axis=1) - mbar @ mbar)
    if spec.kind == "goal":
        pose_means = np.stack(
            [b.block_mean(b.current_pose_slot) for b in beliefs]
        )
        dist = float(w @ np.linalg.norm(pose_means - spec.goal, axis=1))
        return -(spec.wt_dist * dist + spec.wt_trace * mix_trace)
    return -mix_trace


# ---------------------------------------------------------------------------
# Planner-facing model
# ---------------------------------------------------------------------------


class WorldHypothesis:
    """One association path with its conditional belief.

    Carries per-action caches of the predicted belief and of the feasible
    association sets; both are deterministic functions of the immutable
    belief, so caching is safe.
    """

    __slots__ = ("path", "belief", "_pred", "_assoc")

    def __init__(self, path: AssociationPath, belief: GaussianConditionalBelief):
        self.path = path
        self.belief = belief
        self._pred: dict = {}
        self._assoc: dict = {}

    @property
    def key(self):
        return self.path.key


class _WorldBank:
    """Incremental sufficient statistics of the accumulated hypotheses."""

    __slots__ = ("n", "sum_trace", "sum_mean", "sum_sq", "sum_dist", "keys")

    def __init__(self):
        self.n = 0
        self.sum_trace = 0.0
        self.sum_mean: Optional[np.ndarray] = None
        self.sum_sq = 0.0
        self.sum_dist = 0.0
        self.keys: list = []


class LinearGaussianModel:
    """Macro-level planning model over the 2D linear-Gaussian scenario."""

    def __init__(self, geometry: ScenarioGeometry, reward_spec: RewardSpec,
                 action_names: Sequence[str] = ("+x", "-x", "+y", "-y")):
        self.geometry = geometry
        self.spec = reward_spec
        self.world = geometry.world(macro=True)
        self._actions = tuple(action_names)
        self.posterior_calls = 0
        self._n_landmarks = len(geometry.landmarks)

    @property
    def actions(self) -> tuple[str, ...]:
        return self._actions

    # -- dynamics -----------------------------------------------------------

    def predicted(self, hyp: WorldHypothesis, action: str) -> GaussianConditionalBelief:
        b = hyp._pred.get(action)
        if b is None:
            b = predict(hyp.belief, self.geometry.displacement(action, macro=True), self.world)
            hyp._pred[action] = b
        return b

    def sample_observation(
        self, hyp: WorldHypothesis, action: str, rng: np.random.Generator
    ) -> ObservationArray:
        pred = self.predicted(hyp, action)
        x = pred.sample(1, rng)[0]
        pose = x[pred.offset(pred.current_pose_slot) :][:2]
        detections = []
        for lm in self.geometry.landmarks:
            off = pred.offset(landmark_slot(lm.id))
            rel = x[off : off + 2] - pose
            if float(np.hypot(rel[0], rel[1])) <= self.world.sensing_range:
                noise = rng.multivariate_normal(np.zeros(2), self.world.obs_noise_cov)
                detections.append((rel + noise, lm.class_id))
        if len(detections) > 1:
            order = rng.permutation(len(detections))
            detections = [detections[i] for i in order]
        return ObservationArray.from_detections(detections, self._n_landmarks)

    def observation_key(self, obs: ObservationArray):
        return obs.key()

    def _feasible(self, hyp: WorldHypothesis, action: str, obs: ObservationArray):
        key = (action, obs.key())
        cached = hyp._assoc.get(key)
        if cached is None:
            pred = self.predicted(hyp, action)
            vectors = feasible_associations(pred, self.world, obs)
            zetas = np.array([zeta(pred, obs, v, self.world) for v in vectors])
            cached = (vectors, zetas)
            hyp._assoc[key] = cached
        return cached

    def children(self, hyp: WorldHypothesis, action: str, obs: ObservationArray) -> np.ndarray:
        return self._feasible(hyp, action, obs)[1]

    def posterior(
        self, hyp: WorldHypothesis, action: str, obs: ObservationArray, branch: int
    ) -> WorldHypothesis:
        self.posterior_calls += 1
        vectors, _ = self._feasible(hyp, action, obs)
        vec = vectors[branch]
        belief = self.predicted(hyp, action)
        for k, e in vec.claims(obs.n_z).items():
            belief = update(belief, obs.elements[e], k, self.world)
        return WorldHypothesis(hyp.path.child(vec), belief)

    # -- rewards ------------------------------------------------------------

    def new_bank(self) -> _WorldBank:
        return _WorldBank()

    def bank_add(self, bank: _WorldBank, hyp: WorldHypothesis, lam: float, n_states: int, rng):
        trace, mean = _scope_stats(hyp.belief, self.spec.scope_is_full)
        if bank.sum_mean is None:
            bank.sum_mean = np.zeros_like(mean)
        bank.n += 1
        bank.sum_trace += trace
        bank.sum_mean += mean
        bank.sum_sq += float(mean @ mean)
        if self.spec.kind == "goal":
            pose = hyp.belief.block_mean(hyp.belief.current_pose_slot)
            bank.sum_dist += float(np.hypot(*(pose - self.spec.goal)))
        bank.keys.append(hyp.key)

    def reward_from_bank(self, bank: _WorldBank, action: str) -> float:
        n = bank.n
        if n == 0:
            return 0.0
        mbar = bank.sum_mean / n
        mix_trace = bank.sum_trace / n + bank.sum_sq / n - float(mbar @ mbar)
        if self.spec.kind == "goal":
            return -(self.spec.wt_dist * bank.sum_dist / n + self.spec.wt_trace * mix_trace)
        return -mix_trace

    def reward_hypothesis(self, hyp: WorldHypothesis, action: str, rng) -> float:
        return hybrid_reward([1.0], [hyp.belief], self.spec)

    def reward_hybrid(self, weights, hyps: Sequence[WorldHypothesis], action: str, rng) -> float:
        return hybrid_reward(weights, [h.belief for h in hyps], self.spec)


# ---------------------------------------------------------------------------
# Execution-side inference
# ---------------------------------------------------------------------------


def initial_hybrid(
    geometry: ScenarioGeometry,
    prior_hypotheses: Sequence[tuple[np.ndarray, np.ndarray, float]],
) -> HybridBelief:
    """Agent's belief at time zero: every prior pose hypothesis paired with
    the full set of landmark priors."""
    entries = []
    for j, (mean, cov, w) in enumerate(prior_hypotheses):
        b = GaussianConditionalBelief.from_pose_prior(mean, cov)
        for lm in geometry.landmarks:
            b = b.with_landmark(lm.id, lm.position, lm.prior_cov)
        entries.append((AssociationPath(root_label=j), b, float(w)))
    return HybridBelief(tuple(entries)).normalized()


@dataclass
class InferenceState:
    """Mutable wrapper around the maintained hybrid belief."""

    hybrid: HybridBelief
    fallbacks: int = 0

    @property
    def n_hypotheses(self) -> int:
        return len(self.hybrid)

    @property
    def max_weight(self) -> float:
        return float(self.hybrid.weights.max())


def inference_step(
    state: InferenceState,
    geometry: ScenarioGeometry,
    micro_action: np.ndarray,
    obs: Optional[ObservationArray],
    cap: int = 64,
    keep_pose_history: bool = False,
) -> None:
    """One micro-step of exact hybrid-belief filtering.

    Predicts every hypothesis, enumerates its feasible associations for the
    observation, reweights by the mean-point hypothesis likelihoods and
    keeps the ``cap`` heaviest children.  When every child of every
    hypothesis scores zero the update degrades to prediction only, which is
    counted in ``state.fallbacks``.  Unless ``keep_pose_history`` is set,
    the pose slot of the previous micro-step is marginalized out so the
    joint keeps one pose per macro boundary.
    """
    world = geometry.world(macro=False)
    entries = state.hybrid.hypotheses
    predicted = []
    for path, belief, w in entries:
        pb = predict(belief, micro_action, world)
        if not keep_pose_history:
            drop = pb.current_time - 1
            keep = [s for s in pb.slots if s != ("x", drop)]
            pb = pb.marginalized_to(keep)
        predicted.append((path, pb, w))

    if obs is None:
        state.hybrid = HybridBelief(tuple(predicted))
        return

    rows = []
    vector_rows = []
    for path, pb, w in predicted:
        vectors = feasible_associations(pb, world, obs)
        zetas = np.array([zeta(pb, obs, v, world) for v in vectors]) if vectors else np.zeros(0)
        rows.append(zetas)
        vector_rows.append(vectors)

    state.hybrid = _reweight(predicted, rows, vector_rows, world, obs, cap, state)


def _reweight(predicted, rows, vector_rows, world, obs, cap, state) -> HybridBelief:
    weights = np.array([w for _, _, w in predicted])
    try:
        posterior_rows, _ = da_weight_update(weights, rows)
    except HypothesisInconsistencyError:
        state.fallbacks += 1
        return HybridBelief(tuple(predicted)).normalized()

    children = []
    for (path, pb, _), post_w, vectors in zip(predicted, posterior_rows, vector_rows):
        for w_i, vec in zip(post_w, vectors):
            if w_i > 0:
                children.append((w_i, path, pb, vec))
    children.sort(key=lambda c: -c[0])
    children = children[:cap]
    total = sum(c[0] for c in children)
    out = []
    for w_i, path, pb, vec in children:
        belief = pb
        for k, e in vec.claims(obs.n_z).items():
            belief = update(belief, obs.elements[e], k, world)
        out.append((path.child(vec), belief, w_i / total))
    return HybridBelief(tuple(out))
