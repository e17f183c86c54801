"""Scenario construction, ground-truth simulation and episode execution.

Three environments: ``aliased_matrix`` (a grid of indistinguishable
landmarks plus one unique landmark that breaks the symmetry),
``kidnapped_robot`` (randomly scattered identical landmarks, pose-only
uncertainty reward) and ``goal_reaching`` (aliased grid plus a goal
position; reward mixes distance to goal and pose uncertainty).

``scale=1`` reproduces the full-size layouts (24 aliased + 1 unique
landmark at 40 m spacing with 10 m sensing; 16 landmarks on a 160 m
square).  Smaller scales shrink the layout for desk-size runs: the grid
side scales to the nearest odd count, spacing scales linearly, and the
sensing range is held at 80% of the spacing so data association stays
ambiguous (a fixed 10 m sensor in a shrunken world would never see two
landmarks at once, which removes the phenomenon under study).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import yaml

from .association import ObservationArray
from .belief import HybridBelief
from .planners import PlannerConfig, solve
from .world import (
    CARDINAL,
    InferenceState,
    LandmarkSpec,
    LinearGaussianModel,
    RewardSpec,
    ScenarioGeometry,
    WorldHypothesis,
    hybrid_reward,
    inference_step,
    initial_hybrid,
)

__all__ = [
    "ScenarioConfig",
    "GroundTruth",
    "StepRecord",
    "TrialRecord",
    "build_scenario",
    "ground_truth_for",
    "env_step",
    "run_trial",
    "scenario_to_dict",
    "scenario_from_dict",
    "save_scenario",
    "load_scenario",
]

SCHEMA_VERSION = 1

SCENARIO_NAMES = ("aliased_matrix", "kidnapped_robot", "goal_reaching")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    geometry: ScenarioGeometry
    prior_hypotheses: tuple[tuple[np.ndarray, np.ndarray, float], ...]
    reward: RewardSpec
    episode_len: int = 10
    hypothesis_cap: int = 64
    update_per_micro_step: bool = True
    scale: float = 1.0

    def __post_init__(self):
        if self.episode_len < 0:
            raise ValueError("episode length must be nonnegative")
        w = sum(w for _, _, w in self.prior_hypotheses)
        if abs(w - 1.0) > 1e-9:
            raise ValueError("prior hypothesis weights must sum to 1")


@dataclass(frozen=True)
class GroundTruth:
    pose: np.ndarray
    landmarks: dict

    def __post_init__(self):
        object.__setattr__(self, "pose", np.asarray(self.pose, dtype=float).reshape(2))
        object.__setattr__(
            self, "landmarks", {int(k): np.asarray(v, dtype=float).reshape(2) for k, v in self.landmarks.items()}
        )


def _odd_grid_side(scale: float) -> int:
    # nearest odd integer to 5*scale, at least 3
    return max(3, 2 * round((5.0 * scale - 1.0) / 2.0) + 1)


def _grid_landmarks(side: int, spacing: float, prior_cov: np.ndarray) -> list[LandmarkSpec]:
    half = side // 2
    out = []
    next_id = 0
    for ix in range(-half, half + 1):
        for iy in range(-half, half + 1):
            if ix == 0 and iy == 0:
                continue  # the agent starts at the removed center
            out.append(LandmarkSpec(next_id, (ix * spacing, iy * spacing), 0, prior_cov))
            next_id += 1
    return out


def build_scenario(
    name: str,
    scale: float = 1.0,
    seed: int = 0,
    episode_len: Optional[int] = None,
) -> tuple[ScenarioConfig, GroundTruth]:
    """Construct a scenario and a matching ground truth.

    The true agent pose realizes the first prior hypothesis and the true
    landmark positions are drawn from their priors, so the remaining
    hypotheses are decoys that only evidence can eliminate.
    """
    rng = np.random.default_rng(np.random.SeedSequence([77, seed]))
    spacing = 40.0 * scale
    # Full scale uses the published 10 m sensor; desk scales keep the range
    # proportional to the spacing so landmark encounters stay plausible.
    sensing = 10.0 if scale >= 1.0 else 0.45 * spacing
    lm_cov = np.eye(2) * 0.64
    motion = np.eye(2) * 0.04
    obs_noise = np.eye(2) * 0.01
    micro_m = 4.0 * scale
    pose_cov = np.eye(2) * 1.44

    if name == "aliased_matrix" or name == "goal_reaching":
        side = _odd_grid_side(scale)
        landmarks = _grid_landmarks(side, spacing, lm_cov)
        unique_id = len(landmarks)
        # unique landmark sits outside the grid, two macro moves from start
        unique_pos = np.array([2 * 12 * micro_m - 0.2 * spacing, 0.0])
        landmarks.append(LandmarkSpec(unique_id, unique_pos, 1, lm_cov))
        # decoy poses sit off-lattice so no decoy starts on top of a
        # landmark it should instantly see
        offsets = [np.zeros(2), np.array([0.0, 1.5 * spacing]), np.array([0.0, -1.5 * spacing])]
        prior = tuple(
            (off, pose_cov.copy(), 1.0 / len(offsets)) for off in offsets
        )
        if name == "aliased_matrix":
            reward = RewardSpec("a_opt_full")
            episode = 10 if episode_len is None else episode_len
        else:
            goal = np.array([0.0, -2 * 12 * micro_m])
            reward = RewardSpec("goal", wt_dist=1.0, wt_trace=0.1, goal=goal)
            episode = 10 if episode_len is None else episode_len
    elif name == "kidnapped_robot":
        side_m = 160.0 * scale
        count = max(4, round(16.0 * scale))
        landmarks = [
            LandmarkSpec(i, rng.uniform(-side_m / 2, side_m / 2, size=2), 0, lm_cov)
            for i in range(count)
        ]
        offsets = [rng.uniform(-side_m / 4, side_m / 4, size=2) for _ in range(3)]
        prior = tuple((off, pose_cov.copy(), 1.0 / 3.0) for off in offsets)
        reward = RewardSpec("a_opt_pose")
        episode = 10 if episode_len is None else episode_len
    else:
        raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIO_NAMES}")

    geometry = ScenarioGeometry(
        landmarks=tuple(landmarks),
        sensing_range=sensing,
        motion_noise_micro=motion,
        obs_noise=obs_noise,
        micro_steps=12,
        micro_step_m=micro_m,
    )
    config = ScenarioConfig(
        name=name,
        geometry=geometry,
        prior_hypotheses=prior,
        reward=reward,
        episode_len=episode,
        scale=scale,
    )
    return config, ground_truth_for(config, seed)


def ground_truth_for(config: ScenarioConfig, seed: int) -> GroundTruth:
    """Sample a ground truth consistent with the scenario priors.

    The true pose realizes the first prior hypothesis (with a quarter of
    its prior spread) and each true landmark position is drawn from its
    prior, so the decoy hypotheses are wrong from the start.
    """
    rng = np.random.default_rng(np.random.SeedSequence([78, seed]))
    mean0, cov0, _ = config.prior_hypotheses[0]
    true_pose = mean0 + rng.multivariate_normal(np.zeros(2), 0.25 * np.asarray(cov0))
    true_landmarks = {
        lm.id: lm.position + rng.multivariate_normal(np.zeros(2), lm.prior_cov)
        for lm in config.geometry.landmarks
    }
    return GroundTruth(true_pose, true_landmarks)


def env_step(
    gt: GroundTruth,
    action: str,
    geometry: ScenarioGeometry,
    rng: np.random.Generator,
) -> tuple[GroundTruth, list[ObservationArray]]:
    """Advance the true pose through one macro action.

    Each of the ``micro_steps`` segments adds motion noise and emits one
    observation array built from the landmarks within sensing range of the
    true pose (ideal detection, noisy relative positions, shuffled order,
    out-of-range fillers).
    """
    micro = geometry.displacement(action, macro=False)
    pose = gt.pose.copy()
    arrays = []
    n_landmarks = len(geometry.landmarks)
    for _ in range(geometry.micro_steps):
        pose = pose + micro + rng.multivariate_normal(np.zeros(2), geometry.motion_noise_micro)
        detections = []
        for lm in geometry.landmarks:
            rel = gt.landmarks[lm.id] - pose
            if float(np.hypot(rel[0], rel[1])) <= geometry.sensing_range:
                noise = rng.multivariate_normal(np.zeros(2), geometry.obs_noise)
                detections.append((rel + noise, lm.class_id))
        if len(detections) > 1:
            order = rng.permutation(len(detections))
            detections = [detections[i] for i in order]
        arrays.append(ObservationArray.from_detections(detections, n_landmarks))
    return GroundTruth(pose, gt.landmarks), arrays


# ---------------------------------------------------------------------------
# Episode execution
# ---------------------------------------------------------------------------


@dataclass
class StepRecord:
    step: int
    action: str
    reward: float
    cumulative_reward: float
    n_hypotheses: int
    max_weight: float
    wall_ms: float
    true_pose: tuple[float, float]
    planner_discarded: int = 0


@dataclass
class TrialRecord:
    scenario: str
    solver: str
    seed: int
    steps: list[StepRecord]
    initial_summary: dict
    planner_defaults: dict
    failure: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    @property
    def cumulative_reward(self) -> float:
        return self.steps[-1].cumulative_reward if self.steps else 0.0

    def to_json(self) -> str:
        doc = {
            "schema_version": self.schema_version,
            "scenario": self.scenario,
            "solver": self.solver,
            "seed": self.seed,
            "failure": self.failure,
            "initial_summary": self.initial_summary,
            "planner_defaults": self.planner_defaults,
            "steps": [
                {
                    "step": s.step,
                    "action": s.action,
                    "reward": s.reward,
                    "cumulative_reward": s.cumulative_reward,
                    "n_hypotheses": s.n_hypotheses,
                    "max_weight": s.max_weight,
                    "wall_ms": s.wall_ms,
                    "true_pose": list(s.true_pose),
                    "planner_discarded": s.planner_discarded,
                }
                for s in self.steps
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def _planner_defaults_dict(cfg: PlannerConfig) -> dict:
    return {
        "ucb_c": cfg.ucb_c,
        "n_particles": cfg.n_particles,
        "horizon": cfg.horizon,
        "k_obs": cfg.k_obs,
        "alpha_obs": cfg.alpha_obs,
        "iterations": cfg.iterations,
        "time_budget_s": cfg.time_budget_s,
        "prune_budget": cfg.prune_budget,
    }


def run_trial(
    config: ScenarioConfig,
    gt: GroundTruth,
    solver: str,
    planner_config: PlannerConfig,
    seed: int,
) -> TrialRecord:
    """One plan / act / observe / infer episode.

    Fully reproducible: the seed feeds a seed tree covering the environment
    noise and one planner seed per macro step.  Solver exceptions terminate
    the episode and tag the record instead of raising.
    """
    ss = np.random.SeedSequence([config_seed_root(config), seed])
    children = ss.spawn(config.episode_len + 1)
    env_rng = np.random.default_rng(children[0])

    state = InferenceState(initial_hybrid(config.geometry, config.prior_hypotheses))
    reward0 = hybrid_reward(state.hybrid.weights, state.hybrid.beliefs, config.reward)
    initial_summary = {
        "n_hypotheses": state.n_hypotheses,
        "max_weight": state.max_weight,
        "reward": reward0,
    }

    steps: list[StepRecord] = []
    failure = None
    cumulative = 0.0
    for step in range(config.episode_len):
        t0 = time.perf_counter()
        model = LinearGaussianModel(config.geometry, config.reward)
        hyps = [WorldHypothesis(p, b) for p, b, _ in state.hybrid.hypotheses]
        weights = state.hybrid.weights
        step_seed = int(children[step + 1].generate_state(1, dtype=np.uint32)[0])
        pc = replace(planner_config, seed=step_seed)
        try:
            result = solve(solver, model, hyps, weights, pc)
        except Exception as exc:  # tagged failure record, episode ends
            failure = f"{type(exc).__name__}: {exc}"
            break
        action = result.action

        gt, arrays = env_step(gt, action, config.geometry, env_rng)
        micro = config.geometry.displacement(action, macro=False)
        for i, obs in enumerate(arrays):
            last = i == len(arrays) - 1
            use = obs if (config.update_per_micro_step or last) else None
            inference_step(
                state,
                config.geometry,
                micro,
                use,
                cap=config.hypothesis_cap,
                keep_pose_history=(i == 0),
            )

        reward = hybrid_reward(state.hybrid.weights, state.hybrid.beliefs, config.reward)
        cumulative += reward
        steps.append(
            StepRecord(
                step=step,
                action=action,
                reward=reward,
                cumulative_reward=cumulative,
                n_hypotheses=state.n_hypotheses,
                max_weight=state.max_weight,
                wall_ms=(time.perf_counter() - t0) * 1000.0,
                true_pose=(float(gt.pose[0]), float(gt.pose[1])),
                planner_discarded=int(result.stats.get("discarded", 0)),
            )
        )

    return TrialRecord(
        scenario=config.name,
        solver=solver,
        seed=seed,
        steps=steps,
        initial_summary=initial_summary,
        planner_defaults=_planner_defaults_dict(planner_config),
        failure=failure,
    )


def config_seed_root(config: ScenarioConfig) -> int:
    """Stable scenario fingerprint mixed into trial seeds."""
    return abs(hash((config.name, config.scale, config.episode_len))) % (2**31)


# ---------------------------------------------------------------------------
# Config file round trip
# ---------------------------------------------------------------------------


def scenario_to_dict(config: ScenarioConfig) -> dict:
    g = config.geometry
    doc = {
        "kind": "scenario",
        "name": config.name,
        "scale": config.scale,
        "episode_len": config.episode_len,
        "hypothesis_cap": config.hypothesis_cap,
        "update_per_micro_step": config.update_per_micro_step,
        "landmarks": [
            {
                "id": lm.id,
                "position": [float(x) for x in lm.position],
                "class_id": lm.class_id,
                "prior_cov": np.asarray(lm.prior_cov).tolist(),
            }
            for lm in g.landmarks
        ],
        "prior_hypotheses": [
            {
                "mean": [float(x) for x in m],
                "cov": np.asarray(c).tolist(),
                "weight": float(w),
            }
            for m, c, w in config.prior_hypotheses
        ],
        "noise": {
            "motion_micro": np.asarray(g.motion_noise_micro).tolist(),
            "observation": np.asarray(g.obs_noise).tolist(),
        },
        "sensing_range": g.sensing_range,
        "actions": {
            "micro_steps": g.micro_steps,
            "micro_step_m": g.micro_step_m,
            "names": sorted(CARDINAL),
        },
        "reward": {
            "kind": config.reward.kind,
            "wt_dist": config.reward.wt_dist,
            "wt_trace": config.reward.wt_trace,
            "goal": None if config.reward.goal is None else [float(x) for x in config.reward.goal],
        },
    }
    return doc


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    if doc.get("kind") != "scenario":
        raise ValueError("not a scenario document")
    geometry = ScenarioGeometry(
        landmarks=tuple(
            LandmarkSpec(d["id"], d["position"], d["class_id"], np.array(d["prior_cov"]))
            for d in doc["landmarks"]
        ),
        sensing_range=float(doc["sensing_range"]),
        motion_noise_micro=np.array(doc["noise"]["motion_micro"]),
        obs_noise=np.array(doc["noise"]["observation"]),
        micro_steps=int(doc["actions"]["micro_steps"]),
        micro_step_m=float(doc["actions"]["micro_step_m"]),
    )
    r = doc["reward"]
    reward = RewardSpec(r["kind"], r.get("wt_dist", 1.0), r.get("wt_trace", 1.0), r.get("goal"))
    return ScenarioConfig(
        name=doc["name"],
        geometry=geometry,
        prior_hypotheses=tuple(
            (np.array(d["mean"]), np.array(d["cov"]), float(d["weight"]))
            for d in doc["prior_hypotheses"]
        ),
        reward=reward,
        episode_len=int(doc["episode_len"]),
        hypothesis_cap=int(doc.get("hypothesis_cap", 64)),
        update_per_micro_step=bool(doc.get("update_per_micro_step", True)),
        scale=float(doc.get("scale", 1.0)),
    )


def save_scenario(config: ScenarioConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(config), fh, sort_keys=False)


def load_scenario(path: str) -> ScenarioConfig:
    with open(path) as fh:
        return scenario_from_dict(yaml.safe_load(fh))
