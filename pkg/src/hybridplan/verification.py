"""Tabular toy hybrid POMDP with brute-force oracles.

Everything here is small enough to enumerate exactly: finite states,
finite observations, a handful of hypothesis branches per step.  The
enumeration results serve as ground truth for the sampling estimators
used by the planners, so the estimator code in this module deliberately
mirrors the planner's sampling scheme while the oracles stay independent
of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import yaml

__all__ = [
    "ToyHybridPOMDP",
    "ExactFilter",
    "EnumerationResult",
    "BiasResult",
    "load_toy",
    "enumerate_exact",
    "value_backward_induction",
    "exact_filter",
    "pruned_bias_gap",
    "bias_experiment",
    "consistency_experiment",
    "ToyPlanningModel",
]


def _row_normalized(a: np.ndarray, name: str, axis: int = -1) -> np.ndarray:
    sums = a.sum(axis=axis)
    if not np.allclose(sums, 1.0, atol=1e-12):
        raise ValueError(f"{name} rows must sum to 1 within 1e-12 (got {sums})")
    return a


@dataclass(frozen=True)
class ToyHybridPOMDP:
    """Tabular hybrid POMDP.

    ``transition[a, x, x']`` is the state transition, ``assoc[x, i]`` the
    probability of discrete branch ``i`` given the new state, and
    ``obs[i, x, z]`` the observation model under branch ``i``.  The prior
    is a weighted set of hypotheses, each with its own state distribution.
    ``history_*`` and ``eval_action`` define the fixture's canonical
    inference-time experiment.
    """

    transition: np.ndarray
    assoc: np.ndarray
    obs: np.ndarray
    reward: np.ndarray
    prior_labels: tuple
    prior_weights: np.ndarray
    prior_dists: np.ndarray
    history_actions: tuple[int, ...] = ()
    history_observations: tuple[int, ...] = ()
    eval_action: int = 0

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=float)
        a_ = np.asarray(self.assoc, dtype=float)
        o = np.asarray(self.obs, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        pw = np.asarray(self.prior_weights, dtype=float)
        pd = np.asarray(self.prior_dists, dtype=float)
        s = t.shape[1]
        if t.shape[1] != t.shape[2] or a_.shape[0] != s or o.shape[1] != s:
            raise ValueError("inconsistent state dimensions")
        if r.shape != (t.shape[0], s):
            raise ValueError("reward must be (actions, states)")
        if o.shape[0] != a_.shape[1]:
            raise ValueError("obs and assoc must agree on the branch count")
        _row_normalized(t, "transition")
        _row_normalized(a_, "assoc")
        _row_normalized(o, "obs")
        _row_normalized(pd, "prior_dists")
        if not math.isclose(float(pw.sum()), 1.0, abs_tol=1e-12):
            raise ValueError("prior weights must sum to 1")
        if len(self.history_actions) != len(self.history_observations):
            raise ValueError("history actions and observations must pair up")
        for arr in (t, a_, o, r, pw, pd):
            arr.flags.writeable = False
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "assoc", a_)
        object.__setattr__(self, "obs", o)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "prior_weights", pw)
        object.__setattr__(self, "prior_dists", pd)
        object.__setattr__(self, "prior_labels", tuple(self.prior_labels))
        object.__setattr__(self, "history_actions", tuple(self.history_actions))
        object.__setattr__(self, "history_observations", tuple(self.history_observations))

    # -- sizes -------------------------------------------------------------

    @property
    def n_states(self) -> int:
        return self.transition.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[0]

    @property
    def n_obs(self) -> int:
        return self.obs.shape[2]

    @property
    def n_branches(self) -> int:
        return self.assoc.shape[1]

    # -- elementary operations ----------------------------------------------

    def predict(self, dist: np.ndarray, action: int) -> np.ndarray:
        return dist @ self.transition[action]

    def zeta_table(self, pred: np.ndarray) -> np.ndarray:
        """zeta[i, z] = sum_x obs[i, x, z] * assoc[x, i] * pred[x]."""
        return np.einsum("ixz,xi,x->iz", self.obs, self.assoc, pred)

    def posterior_dist(self, pred: np.ndarray, branch: int, z: int) -> np.ndarray:
        raw = self.obs[branch, :, z] * self.assoc[:, branch] * pred
        total = raw.sum()
        if total <= 0:
            raise ValueError("zero-probability branch/observation combination")
        return raw / total

    def expected_reward(self, dist: np.ndarray, action: int) -> float:
        return float(dist @ self.reward[action])


def fixture_path(name: str) -> str:
    """Path of a shipped toy fixture, e.g. ``toy_estimators.yaml``."""
    from importlib import resources

    return str(resources.files("hybridplan") / "fixtures" / name)


def load_fixture(name: str) -> "ToyHybridPOMDP":
    return load_toy(fixture_path(name))


def load_toy(source: Union[str, dict]) -> ToyHybridPOMDP:
    """Load a toy fixture from a YAML path or an already-parsed mapping."""
    if isinstance(source, dict):
        doc = source
    else:
        with open(source, "r") as fh:
            doc = yaml.safe_load(fh)
    if doc.get("kind") != "toy_hybrid_pomdp":
        raise ValueError("fixture is not a toy_hybrid_pomdp document")
    prior = doc["prior"]
    hist = doc.get("history", {}) or {}
    return ToyHybridPOMDP(
        transition=np.array(doc["transition"], dtype=float),
        assoc=np.array(doc["assoc"], dtype=float),
        obs=np.array(doc["obs"], dtype=float),
        reward=np.array(doc["reward"], dtype=float),
        prior_labels=tuple(p["label"] for p in prior),
        prior_weights=np.array([p["weight"] for p in prior], dtype=float),
        prior_dists=np.array([p["dist"] for p in prior], dtype=float),
        history_actions=tuple(hist.get("actions", ())),
        history_observations=tuple(hist.get("observations", ())),
        eval_action=int(doc.get("eval_action", 0)),
    )


# ---------------------------------------------------------------------------
# Exact oracles
# ---------------------------------------------------------------------------


@dataclass
class ExactFilter:
    """Exact posterior after conditioning on a fixed history.

    ``weights[t]`` and ``dists[t]`` describe the hybrid belief after
    observing ``observations[:t]``; ``paths[t]`` are the hypothesis keys
    (root label plus branch choices).  ``evidence[t]`` is the step-t
    normalizer sum_ij zeta_ij w_j, whose reciprocal is the exact-eta input
    of the importance-weight recursion.  ``step_rewards`` evaluates the
    expected state reward of each stage under ``eval_action``.
    """

    paths: list[list[tuple]]
    weights: list[np.ndarray]
    dists: list[np.ndarray]
    evidence: list[float]
    step_rewards: list[float]


def exact_filter(
    toy: ToyHybridPOMDP,
    actions: Optional[Sequence[int]] = None,
    observations: Optional[Sequence[int]] = None,
    eval_action: Optional[int] = None,
) -> ExactFilter:
    """Filter the hybrid belief exactly along a fixed action/observation history."""
    if actions is None:
        actions = toy.history_actions
    if observations is None:
        observations = toy.history_observations
    if eval_action is None:
        eval_action = toy.eval_action
    if len(actions) != len(observations):
        raise ValueError("need one observation per action")

    paths = [[(lbl,) for lbl in toy.prior_labels]]
    weights = [toy.prior_weights.copy()]
    dists = [toy.prior_dists.copy()]
    evidence: list[float] = []
    rx = [sum(w * toy.expected_reward(d, eval_action) for w, d in zip(weights[0], dists[0]))]

    for a, z in zip(actions, observations):
        new_paths, new_w, new_d = [], [], []
        for key, w, d in zip(paths[-1], weights[-1], dists[-1]):
            pred = toy.predict(d, a)
            zt = toy.zeta_table(pred)[:, z]
            for i, zeta_i in enumerate(zt):
                if zeta_i <= 0:
                    continue
                new_paths.append(key + (i,))
                new_w.append(w * zeta_i)
                new_d.append(toy.posterior_dist(pred, i, z))
        total = float(np.sum(new_w))
        if total <= 0:
            raise ValueError("history has zero probability under this toy")
        evidence.append(total)
        weights.append(np.array(new_w) / total)
        dists.append(np.array(new_d))
        paths.append(new_paths)
        rx.append(
            float(sum(w * toy.expected_reward(d, eval_action) for w, d in zip(weights[-1], dists[-1])))
        )
    return ExactFilter(paths, weights, dists, evidence, rx)


@dataclass
class EnumerationResult:
    """Full enumeration of the planning tree under a fixed policy."""

    value: float
    step_rewards: list[float]
    leaf_probability: float
    n_leaves: int


def _policy_action(policy, t: int) -> int:
    if callable(policy):
        return int(policy(t))
    return int(policy[t])


def enumerate_exact(
    toy: ToyHybridPOMDP, policy, horizon: int, max_leaves: int = 10**6
) -> EnumerationResult:
    """Expected cumulative reward by summing over every future branch.

    Walks all observation prefixes breadth-first, carrying exact hybrid
    beliefs, and accumulates probability-weighted stage rewards.  Refuses
    combinatorially large instances.
    """
    bound = len(toy.prior_labels) * (toy.n_branches * toy.n_obs) ** horizon
    if bound > max_leaves:
        raise ValueError(f"enumeration would visit ~{bound} leaves (> {max_leaves})")

    frontier = [(1.0, toy.prior_weights.copy(), toy.prior_dists.copy())]
    step_rewards: list[float] = []
    for t in range(horizon):
        a = _policy_action(policy, t)
        stage = sum(
            p * sum(w * toy.expected_reward(d, a) for w, d in zip(ws, ds))
            for p, ws, ds in frontier
        )
        step_rewards.append(float(stage))
        nxt = []
        for p, ws, ds in frontier:
            preds = np.array([toy.predict(d, a) for d in ds])
            # zeta[j, i, z] conditioned on parent j
            zt = np.einsum("ixz,xi,jx->jiz", toy.obs, toy.assoc, preds)
            for z in range(toy.n_obs):
                pz = float(np.einsum("ji,j->", zt[:, :, z], ws))
                if pz <= 0:
                    continue
                new_w, new_d = [], []
                for j in range(len(ws)):
                    for i in range(toy.n_branches):
                        wz = ws[j] * zt[j, i, z]
                        if wz <= 0:
                            continue
                        new_w.append(wz / pz)
                        new_d.append(toy.posterior_dist(preds[j], i, z))
                nxt.append((p * pz, np.array(new_w), np.array(new_d)))
        frontier = nxt
    leaf_probability = float(sum(p for p, _, _ in frontier))
    return EnumerationResult(
        value=float(sum(step_rewards)),
        step_rewards=step_rewards,
        leaf_probability=leaf_probability,
        n_leaves=len(frontier),
    )


def value_backward_induction(toy: ToyHybridPOMDP, policy, horizon: int) -> float:
    """Independent recomputation of the policy value by backward recursion."""

    def recurse(ws: np.ndarray, ds: np.ndarray, t: int) -> float:
        if t == horizon:
            return 0.0
        a = _policy_action(policy, t)
        stage = sum(w * toy.expected_reward(d, a) for w, d in zip(ws, ds))
        preds = np.array([toy.predict(d, a) for d in ds])
        zt = np.einsum("ixz,xi,jx->jiz", toy.obs, toy.assoc, preds)
        total = 0.0
        for z in range(toy.n_obs):
            pz = float(np.einsum("ji,j->", zt[:, :, z], ws))
            if pz <= 0:
                continue
            new_w, new_d = [], []
            for j in range(len(ws)):
                for i in range(toy.n_branches):
                    wz = ws[j] * zt[j, i, z]
                    if wz <= 0:
                        continue
                    new_w.append(wz / pz)
                    new_d.append(toy.posterior_dist(preds[j], i, z))
            total += pz * recurse(np.array(new_w), np.array(new_d), t + 1)
        return float(stage + total)

    return recurse(toy.prior_weights.copy(), toy.prior_dists.copy(), 0)


def pruned_bias_gap(toy: ToyHybridPOMDP, prune_budget: int) -> tuple[float, float]:
    """Analytic bias of the keep-top-M estimator at the fixture's final stage.

    Returns (gap, pruned_mass): the renormalized truncated expectation minus
    the full expectation, and the weight mass that pruning discarded.
    """
    f = exact_filter(toy)
    w, d = f.weights[-1], f.dists[-1]
    order = np.argsort(w)[::-1]
    kept = order[:prune_budget]
    kept_mass = float(w[kept].sum())
    full = sum(wi * toy.expected_reward(di, toy.eval_action) for wi, di in zip(w, d))
    truncated = sum(
        w[i] / kept_mass * toy.expected_reward(d[i], toy.eval_action) for i in kept
    )
    return float(truncated - full), 1.0 - kept_mass


# ---------------------------------------------------------------------------
# Sampling estimators under test
# ---------------------------------------------------------------------------


def _sample_rows(dists: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Categorical draws per row: dists (..., S) -> integer samples (..., n)."""
    cum = np.cumsum(dists, axis=-1)
    u = rng.random(dists.shape[:-1] + (n,))
    return (u[..., None, :] > cum[..., :, None]).sum(axis=-2)


def _resample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Multinomial resampling indices per row of a (rows, n) probability array."""
    rows, n = probs.shape
    u = rng.random((rows, n))
    out = np.empty((rows, n), dtype=np.int64)
    for r in range(rows):
        out[r] = np.searchsorted(np.cumsum(probs[r]), u[r], side="right")
    return np.minimum(out, n - 1)


def _mean_sampled_reward(
    toy: ToyHybridPOMDP, dists: np.ndarray, action: int, n_x: int, rng: np.random.Generator
) -> np.ndarray:
    states = _sample_rows(dists, n_x, rng)
    return toy.reward[action][states].mean(axis=-1)


@dataclass
class BiasResult:
    estimator: str
    runs: int
    mean: float
    std_error: float
    exact: float
    z_score: float


def _summarize(name: str, values: np.ndarray, exact: float) -> BiasResult:
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(len(values)))
    z = (mean - exact) / se if se > 0 else math.inf * np.sign(mean - exact)
    return BiasResult(name, len(values), mean, se, exact, float(z))


def _sir_reward_runs(
    toy: ToyHybridPOMDP,
    runs: int,
    n_paths: int,
    n_x: int,
    rng: np.random.Generator,
    exact_eta: bool,
) -> np.ndarray:
    """Vectorized SIR reward estimator: uniform branch proposal, per-step
    multinomial resampling, lambda recursion with exact or self-normalized
    eta.  Returns one estimate per run."""
    f = exact_filter(toy)
    n_branches = toy.n_branches
    # root hypotheses ~ prior (proposal-prior equals the prior)
    root = _sample_rows(np.broadcast_to(toy.prior_weights, (runs, n_paths, len(toy.prior_weights))), 1, rng)[..., 0]
    dists = toy.prior_dists[root]  # (runs, n_paths, S)
    lam = np.ones((runs, n_paths))
    for t, (a, z) in enumerate(zip(toy.history_actions, toy.history_observations)):
        pred = dists @ toy.transition[a]
        branch = rng.integers(n_branches, size=(runs, n_paths))
        w_iz = toy.obs[:, :, z] * toy.assoc.T  # (B, S)
        raw = pred * w_iz[branch]  # (runs, n_paths, S)
        zeta_v = raw.sum(axis=-1)
        if exact_eta:
            lam = lam * zeta_v * n_branches / f.evidence[t]
        else:
            lam = lam * zeta_v * n_branches
        safe = np.where(zeta_v[..., None] > 0, raw / np.maximum(zeta_v[..., None], 1e-300), 0.0)
        dists = safe
        # multinomial resampling by weight; collapsed runs keep zero weights
        totals = lam.sum(axis=1, keepdims=True)
        if np.any(totals <= 0):
            raise RuntimeError("all sampled paths collapsed; toy tables too sparse")
        idx = _resample_rows(lam / totals, rng)  # (runs, n_paths)
        dists = np.take_along_axis(dists, idx[..., None], axis=1)
        lam = np.broadcast_to(totals / n_paths, lam.shape).copy()
    per_path = _mean_sampled_reward(toy, dists, toy.eval_action, n_x, rng)
    if exact_eta:
        return (lam * per_path).mean(axis=1)
    return (lam * per_path).sum(axis=1) / lam.sum(axis=1)


def _value_estimator_runs(
    toy: ToyHybridPOMDP,
    runs: int,
    horizon: int,
    policy,
    n_x: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Planner-style value estimator: one hypothesis per run, observations
    sampled ancestrally from the carried hypothesis, the posterior branch
    sampled from the normalized conditional weights.  Drawing the branch
    from its own normalized weights is one-sample resampling, so the
    importance weight stays one throughout."""
    root = _sample_rows(np.broadcast_to(toy.prior_weights, (runs, len(toy.prior_weights))), 1, rng)[..., 0]
    dists = toy.prior_dists[root]  # (runs, S)
    total = np.zeros(runs)
    for t in range(horizon):
        a = _policy_action(policy, t)
        total += _mean_sampled_reward(toy, dists, a, n_x, rng)
        pred = dists @ toy.transition[a]
        zt = np.einsum("ixz,xi,rx->riz", toy.obs, toy.assoc, pred)
        pz = zt.sum(axis=1)  # (runs, Z)
        z = _sample_rows(pz / pz.sum(axis=-1, keepdims=True), 1, rng)[..., 0]
        zt_z = np.take_along_axis(zt, z[:, None, None], axis=2)[..., 0]  # (runs, B)
        branch = _sample_rows(zt_z / zt_z.sum(axis=-1, keepdims=True), 1, rng)[..., 0]
        w = toy.obs[branch, :, :][np.arange(runs), :, z] * toy.assoc[:, branch].T  # (runs, S)
        raw = pred * w
        dists = raw / raw.sum(axis=-1, keepdims=True)
    return total


def bias_experiment(
    toy: ToyHybridPOMDP,
    estimator: str,
    runs: int,
    rng: np.random.Generator,
    prune_budget: int = 1,
    n_paths: int = 16,
    n_state_samples: int = 8,
    target: str = "reward",
    horizon: int = 2,
) -> BiasResult:
    """Monte Carlo mean of an estimator against the enumerated truth.

    Estimators: ``pruned`` (keep-top-M posterior, renormalize, sample
    states), ``hbmcp_sir`` (uniform-proposal SIR with exact step
    normalizers), ``self_normalized`` (same chain without the normalizers).
    ``target="value"`` switches hbmcp_sir to the planner-style value
    estimator over ``horizon`` steps of ``eval_action``.
    """
    if target == "value":
        if estimator != "hbmcp_sir":
            raise ValueError("value target is defined for the hbmcp_sir estimator")
        policy = [toy.eval_action] * horizon
        exact = enumerate_exact(toy, policy, horizon).value
        values = _value_estimator_runs(toy, runs, horizon, policy, n_state_samples, rng)
        return _summarize("hbmcp_sir_value", values, exact)

    f = exact_filter(toy)
    exact = f.step_rewards[-1]
    if estimator == "pruned":
        w, d = f.weights[-1], f.dists[-1]
        order = np.argsort(w)[::-1][:prune_budget]
        kept_w = w[order] / w[order].sum()
        kept_d = d[order]
        per_hyp = np.stack(
            [
                _mean_sampled_reward(
                    toy, np.broadcast_to(kd, (runs, toy.n_states)), toy.eval_action, n_state_samples, rng
                )
                for kd in kept_d
            ],
            axis=1,
        )
        values = per_hyp @ kept_w
        return _summarize(f"pruned(M={prune_budget})", values, exact)
    if estimator == "hbmcp_sir":
        values = _sir_reward_runs(toy, runs, n_paths, n_state_samples, rng, exact_eta=True)
        return _summarize("hbmcp_sir", values, exact)
    if estimator == "self_normalized":
        values = _sir_reward_runs(toy, runs, n_paths, n_state_samples, rng, exact_eta=False)
        return _summarize("self_normalized", values, exact)
    raise ValueError(f"unknown estimator {estimator!r}")


# ---------------------------------------------------------------------------
# Consistency of belief-dependent rewards (frequency-weight plug-in)
# ---------------------------------------------------------------------------


def _entropy(weights: np.ndarray) -> float:
    w = weights[weights > 0]
    return float(-(w * np.log(w)).sum())


def _frequency_runs(
    toy: ToyHybridPOMDP, reps: int, n_paths: int, rng: np.random.Generator
) -> tuple[np.ndarray, list[tuple]]:
    """Empirical hypothesis frequencies from the self-normalized SIR chain.

    Returns (reps, n_hyp) frequency rows aligned with the exact posterior
    path list.
    """
    f = exact_filter(toy)
    exact_paths = f.paths[-1]
    index = {p: i for i, p in enumerate(exact_paths)}
    n_branches = toy.n_branches

    root = _sample_rows(np.broadcast_to(toy.prior_weights, (reps, n_paths, len(toy.prior_weights))), 1, rng)[..., 0]
    keys = root[..., None]  # growing (reps, n_paths, t+1) key array
    dists = toy.prior_dists[root]
    lam = np.ones((reps, n_paths))
    for t, (a, z) in enumerate(zip(toy.history_actions, toy.history_observations)):
        pred = dists @ toy.transition[a]
        branch = rng.integers(n_branches, size=(reps, n_paths))
        w_iz = toy.obs[:, :, z] * toy.assoc.T
        raw = pred * w_iz[branch]
        zeta_v = raw.sum(axis=-1)
        lam = lam * zeta_v * n_branches
        totals = lam.sum(axis=1, keepdims=True)
        if np.any(totals <= 0):
            raise RuntimeError("all sampled paths collapsed")
        keys = np.concatenate([keys, branch[..., None]], axis=2)
        dists = np.where(zeta_v[..., None] > 0, raw / np.maximum(zeta_v[..., None], 1e-300), 0.0)
        idx = _resample_rows(lam / totals, rng)
        keys = np.take_along_axis(keys, idx[..., None], axis=1)
        dists = np.take_along_axis(dists, idx[..., None], axis=1)
        lam = np.ones((reps, n_paths))

    # Integer-encode path keys so frequencies reduce to one bincount.
    base = max(toy.n_branches, len(toy.prior_labels))
    steps = keys.shape[2]
    codes = np.zeros(keys.shape[:2], dtype=np.int64)
    for c in range(steps):
        codes = codes * base + keys[:, :, c]
    exact_codes = []
    label_of = {lbl: i for i, lbl in enumerate(toy.prior_labels)}
    for p in exact_paths:
        code = label_of[p[0]]
        for b in p[1:]:
            code = code * base + b
        exact_codes.append(code)
    n_codes = base**steps
    flat = codes + n_codes * np.arange(reps)[:, None]
    counts = np.bincount(flat.ravel(), minlength=n_codes * reps).reshape(reps, n_codes)
    freqs = counts[:, exact_codes].astype(float)
    return freqs / n_paths, exact_paths


def consistency_experiment(
    toy: ToyHybridPOMDP,
    sample_sizes: Sequence[int],
    reps: int,
    rng: np.random.Generator,
    reward: str = "entropy",
    n_particles: int = 64,
) -> list[tuple[int, float]]:
    """RMSE of a belief-dependent reward under plug-in frequency weights.

    ``entropy`` plugs the empirical hypothesis frequencies into the weight
    entropy (parametric conditionals).  ``mean_square`` additionally
    replaces each conditional by a particle estimate of its mean and scores
    the weighted squared means (nonparametric).  ``constant`` always scores
    one, so its error is exactly zero at every sample size.
    """
    f = exact_filter(toy)
    exact_w = f.weights[-1]
    state_values = np.arange(toy.n_states, dtype=float)
    exact_means = f.dists[-1] @ state_values

    if reward == "constant":
        exact = 1.0
    elif reward == "entropy":
        exact = _entropy(exact_w)
    elif reward == "mean_square":
        exact = float(exact_w @ (exact_means**2))
    else:
        raise ValueError(f"unknown reward {reward!r}")

    out = []
    for n in sample_sizes:
        freqs, _ = _frequency_runs(toy, reps, n, rng)
        if reward == "constant":
            estimates = np.ones(reps)
        elif reward == "entropy":
            estimates = np.array([_entropy(row) for row in freqs])
        else:
            # particle estimate of each conditional mean
            particles = _sample_rows(f.dists[-1], n_particles, rng).astype(float)
            est_means = particles.mean(axis=-1)
            estimates = freqs @ (est_means**2)
        rmse = float(np.sqrt(np.mean((estimates - exact) ** 2)))
        out.append((int(n), rmse))
    return out


# ---------------------------------------------------------------------------
# Planner adapter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyHypothesis:
    key: tuple
    dist: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.dist, dtype=float)
        d.flags.writeable = False
        object.__setattr__(self, "dist", d)


class _ToyBank:
    __slots__ = ("entries", "reward_sums", "n_entries")

    def __init__(self, n_actions: int):
        self.entries: list[tuple] = []
        self.reward_sums = np.zeros(n_actions)
        self.n_entries = 0


class ToyPlanningModel:
    """Adapter exposing a :class:`ToyHybridPOMDP` to the tree planners."""

    def __init__(self, toy: ToyHybridPOMDP, n_reward_samples: int = 8):
        self.toy = toy
        self.n_reward_samples = n_reward_samples
        self.posterior_calls = 0

    # -- structure ----------------------------------------------------------

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(range(self.toy.n_actions))

    def root_hypotheses(self) -> tuple[list[ToyHypothesis], np.ndarray]:
        hyps = [
            ToyHypothesis((lbl,), d) for lbl, d in zip(self.toy.prior_labels, self.toy.prior_dists)
        ]
        return hyps, self.toy.prior_weights.copy()

    def observation_key(self, z: int):
        return int(z)

    # -- dynamics -----------------------------------------------------------

    def sample_observation(self, hyp: ToyHypothesis, action: int, rng: np.random.Generator) -> int:
        pred = self.toy.predict(hyp.dist, action)
        pz = self.toy.zeta_table(pred).sum(axis=0)
        return int(rng.choice(self.toy.n_obs, p=pz / pz.sum()))

    def children(self, hyp: ToyHypothesis, action: int, z: int) -> np.ndarray:
        pred = self.toy.predict(hyp.dist, action)
        return self.toy.zeta_table(pred)[:, z]

    def posterior(self, hyp: ToyHypothesis, action: int, z: int, branch: int) -> ToyHypothesis:
        self.posterior_calls += 1
        pred = self.toy.predict(hyp.dist, action)
        return ToyHypothesis(hyp.key + (int(branch),), self.toy.posterior_dist(pred, branch, z))

    # -- rewards ------------------------------------------------------------

    def new_bank(self):
        return _ToyBank(self.toy.n_actions)

    def bank_add(self, bank: _ToyBank, hyp: ToyHypothesis, lam: float, n_states: int, rng):
        states = _sample_rows(hyp.dist[None, :], max(n_states, 1), rng)[0]
        bank.entries.append((hyp.key, lam, states))
        bank.reward_sums += lam * self.toy.reward[:, states].mean(axis=1)
        bank.n_entries += 1

    def reward_from_bank(self, bank: _ToyBank, action: int) -> float:
        if bank.n_entries == 0:
            return 0.0
        return float(bank.reward_sums[action] / bank.n_entries)

    def reward_hypothesis(self, hyp: ToyHypothesis, action: int, rng) -> float:
        states = _sample_rows(hyp.dist[None, :], self.n_reward_samples, rng)[0]
        return float(self.toy.reward[action, states].mean())

    def reward_hybrid(self, weights: np.ndarray, hyps: Sequence[ToyHypothesis], action: int, rng) -> float:
        total = 0.0
        for w, h in zip(weights, hyps):
            if w > 0:
                total += w * self.reward_hypothesis(h, action, rng)
        return float(total)
