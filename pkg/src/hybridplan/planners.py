"""Tree-search planners over hybrid beliefs.

Four solvers share one belief-tree substrate (UCB action selection,
observation progressive widening, incremental Q averaging):

* ``hbmcp``   - carries a single sampled hypothesis per iteration, computes
  the posterior branch weights conditioned on it, resamples one branch and
  updates only that conditional belief.  Node rewards are re-estimated from
  a sample bank accumulated across visits and back-corrected so ancestor
  Q-means always reflect the latest estimate.
* ``vanilla`` - carries the full hybrid belief per node, computing, pruning
  and renormalizing the complete posterior on every expansion.
* ``pftdpw``  - samples one root hypothesis by weight and runs the vanilla
  machinery with a hypothesis budget of one (maximum-likelihood branching).
* ``dabsp``   - open-loop Monte Carlo rollouts that carry the full pruned
  hybrid belief and average returns per root action.

Planners talk to a model object (duck-typed; see
:class:`~hybridplan.verification.ToyPlanningModel` and
:class:`~hybridplan.world.LinearGaussianModel`) providing: ``actions``,
``sample_observation``, ``observation_key``, ``children`` (raw branch
likelihoods), ``posterior``, the sample-bank trio ``new_bank`` /
``bank_add`` / ``reward_from_bank``, plus ``reward_hypothesis`` and
``reward_hybrid``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "PlannerConfig",
    "BeliefTreeNode",
    "ActionEdge",
    "PlanResult",
    "ucb_select",
    "reward_replace_update",
    "HBMCPPlanner",
    "VanillaHBMCTSPlanner",
    "pft_dpw_plan",
    "dabsp_mc_plan",
    "solve",
    "SOLVERS",
]


@dataclass(frozen=True)
class PlannerConfig:
    """Search hyperparameters.

    The shipped defaults are ucb_c=40, n_particles=200, horizon=8,
    k_obs=2.0, alpha_obs=0.014; planning budgets are given either as a
    fixed iteration count (deterministic, used by tests) or a wall-clock
    limit in seconds.
    """

    ucb_c: float = 40.0
    horizon: int = 8
    k_obs: float = 2.0
    alpha_obs: float = 0.014
    n_particles: int = 200
    iterations: Optional[int] = None
    time_budget_s: Optional[float] = None
    prune_budget: int = 8
    rollout_policy: str = "uniform"
    seed: int = 0
    record_returns: bool = False

    def __post_init__(self):
        if self.k_obs <= 0 or self.alpha_obs < 0:
            raise ValueError("k_obs must be positive and alpha_obs nonnegative")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.iterations is not None and self.time_budget_s is not None:
            raise ValueError("iterations and time_budget_s are mutually exclusive")
        if self.rollout_policy != "uniform":
            raise ValueError(f"unknown rollout policy {self.rollout_policy!r}")


class _IterationInconsistent(Exception):
    """The sampled path hit an all-zero branch likelihood; discard it."""


@dataclass
class ObsChild:
    key: object
    obs: object
    node: "BeliefTreeNode"
    reward: Optional[float] = None  # vanilla stores the expansion-time reward
    hybrid: Optional[tuple] = None  # vanilla stores (weights, hypotheses)


class ActionEdge:
    __slots__ = ("n", "q", "children", "returns")

    def __init__(self):
        self.n = 0
        self.q = 0.0
        self.children: list[ObsChild] = []
        self.returns: Optional[list[float]] = None

    def find(self, key) -> Optional[ObsChild]:
        for c in self.children:
            if c.key == key:
                return c
        return None


class BeliefTreeNode:
    """One history node: visit count, per-action edges, sample bank and the
    previous node-reward estimate used by the replacement correction."""

    __slots__ = ("visits", "edges", "bank", "r_prev", "hybrid")

    def __init__(self, bank=None, hybrid=None):
        self.visits = 0
        self.edges: dict = {}
        self.bank = bank
        self.r_prev = 0.0
        self.hybrid = hybrid  # vanilla: (weights, hypotheses)

    def edge(self, action) -> ActionEdge:
        e = self.edges.get(action)
        if e is None:
            e = ActionEdge()
            self.edges[action] = e
        return e

    def walk(self):
        yield self
        for e in self.edges.values():
            for c in e.children:
                yield from c.node.walk()


def ucb_select(node: BeliefTreeNode, actions: Sequence, c: float):
    """UCB1 action choice; unvisited actions first, ties broken by the
    canonical action order."""
    for a in actions:
        e = node.edges.get(a)
        if e is None or e.n == 0:
            return a
    log_n = math.log(node.visits)
    best, best_score = None, -math.inf
    for a in actions:
        e = node.edges[a]
        score = e.q + c * math.sqrt(log_n / e.n)
        if score > best_score:
            best, best_score = a, score
    return best


def reward_replace_update(node: BeliefTreeNode, r: float) -> float:
    """Replace the node's reward estimate and return the corrected value.

    Returns ``r + N(h) * (r - r_prev)``: after the incremental-mean Q update
    at every ancestor, the node's total reward contribution telescopes to
    ``(N(h)+1) * r``, so each ancestor mean carries exactly the latest
    estimate (on linear chains).
    """
    if not math.isfinite(r):
        raise ValueError("reward estimate must be finite")
    corrected = r if node.visits == 0 else r + node.visits * (r - node.r_prev)
    node.r_prev = r
    return corrected


@dataclass
class PlanResult:
    action: object
    root: BeliefTreeNode
    q_values: dict
    visit_counts: dict
    stats: dict
    config: PlannerConfig

    def digest(self) -> tuple:
        """Deterministic summary of the search outcome for equality tests."""

        def node_sig(node):
            return tuple(
                (
                    a,
                    e.n,
                    round(e.q, 12),
                    tuple(node_sig(c.node) for c in e.children),
                )
                for a, e in sorted(node.edges.items(), key=lambda kv: str(kv[0]))
            )

        return (self.action, node_sig(self.root))


def _greedy_action(root: BeliefTreeNode, actions: Sequence):
    best, best_q = None, -math.inf
    for a in actions:
        e = root.edges.get(a)
        if e is not None and e.n > 0 and e.q > best_q:
            best, best_q = a, e.q
    return actions[0] if best is None else best


def _budget_loop(config: PlannerConfig):
    """Yields until the iteration or wall-clock budget runs out."""
    if config.iterations is None and config.time_budget_s is None:
        raise ValueError("set either iterations or time_budget_s")
    if config.iterations is not None:
        count = 0
        while count < config.iterations:
            yield count
            count += 1
    else:
        start = time.perf_counter()
        count = 0
        while time.perf_counter() - start < config.time_budget_s:
            yield count
            count += 1


def _categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    return int(np.searchsorted(np.cumsum(probs), rng.random(), side="right").clip(0, len(probs) - 1))


class _SearchBase:
    """Budgeted iteration driver with the discard-and-retry policy for
    paths whose branch likelihoods all collapse to zero."""

    def __init__(self, model, config: PlannerConfig):
        self.model = model
        self.config = config
        self.discarded = 0
        self.posterior_calls_per_iteration: list[int] = []
        self._fallback = False

    def _retry_budget(self) -> int:
        base = self.config.iterations or 1024
        return 8 * base + 64

    def _run_iterations(self, run_one) -> None:
        attempts = 0
        retry_cap = self._retry_budget()
        for _ in _budget_loop(self.config):
            while True:
                calls0 = getattr(self.model, "posterior_calls", 0)
                try:
                    run_one()
                except _IterationInconsistent:
                    self.discarded += 1
                    attempts += 1
                    if attempts > retry_cap:
                        # Degenerate regime: stop rejecting and let zero-weight
                        # branches be drawn uniformly so planning can finish.
                        self._fallback = True
                    continue
                self.posterior_calls_per_iteration.append(
                    getattr(self.model, "posterior_calls", 0) - calls0
                )
                break

    def _pick_branch(self, zetas: np.ndarray, rng: np.random.Generator) -> int:
        total = float(zetas.sum())
        if total <= 0.0 or len(zetas) == 0:
            if self._fallback and len(zetas) > 0:
                return int(rng.integers(len(zetas)))
            raise _IterationInconsistent
        return _categorical(rng, zetas / total)


class HBMCPPlanner(_SearchBase):
    """Single-hypothesis-per-iteration Monte Carlo planner.

    Each iteration draws a root hypothesis by weight, then walks the tree
    computing, per level, only the branch weights conditioned on the
    carried hypothesis and exactly one conditional-belief posterior: the
    branch resampled from those weights.
    """

    def __init__(self, model, config: PlannerConfig):
        super().__init__(model, config)
        self.root = BeliefTreeNode(bank=model.new_bank())
        self.rng = np.random.default_rng(config.seed)

    def plan(self, root_hypotheses, root_weights) -> PlanResult:
        weights = np.asarray(root_weights, dtype=float)
        weights = weights / weights.sum()

        def run_one():
            j = _categorical(self.rng, weights)
            self.simulate(root_hypotheses[j], self.root, self.config.horizon)

        self._run_iterations(run_one)
        action = _greedy_action(self.root, self.model.actions)
        return PlanResult(
            action,
            self.root,
            {a: e.q for a, e in self.root.edges.items()},
            {a: e.n for a, e in self.root.edges.items()},
            {
                "solver": "hbmcp",
                "discarded": self.discarded,
                "posterior_calls_per_iteration": self.posterior_calls_per_iteration,
            },
            self.config,
        )

    def simulate(self, hyp, node: BeliefTreeNode, depth: int) -> float:
        if depth == 0:
            return 0.0
        cfg = self.config
        a = ucb_select(node, self.model.actions, cfg.ucb_c)
        edge = node.edge(a)
        if cfg.record_returns and edge.returns is None:
            edge.returns = []

        n_new = max(1, cfg.n_particles // (node.visits + 1))
        self.model.bank_add(node.bank, hyp, 1.0, n_new, self.rng)
        r = self.model.reward_from_bank(node.bank, a)
        r = reward_replace_update(node, r)

        if len(edge.children) <= cfg.k_obs * edge.n**cfg.alpha_obs:
            z = self.model.sample_observation(hyp, a, self.rng)
        else:
            z = edge.children[int(self.rng.integers(len(edge.children)))].obs

        zetas = np.asarray(self.model.children(hyp, a, z), dtype=float)
        branch = self._pick_branch(zetas, self.rng)
        child_hyp = self.model.posterior(hyp, a, z, branch)

        key = self.model.observation_key(z)
        existing = edge.find(key)
        if existing is None:
            child = ObsChild(key, z, BeliefTreeNode(bank=self.model.new_bank()))
            edge.children.append(child)
            total = r + self._rollout(child_hyp, depth - 1)
        else:
            total = r + self.simulate(child_hyp, existing.node, depth - 1)

        node.visits += 1
        edge.n += 1
        edge.q += (total - edge.q) / edge.n
        if edge.returns is not None:
            edge.returns.append(total)
        return total

    def _rollout(self, hyp, depth: int) -> float:
        total = 0.0
        actions = self.model.actions
        for remaining in range(depth, 0, -1):
            a = actions[int(self.rng.integers(len(actions)))]
            total += self.model.reward_hypothesis(hyp, a, self.rng)
            if remaining == 1:
                break
            z = self.model.sample_observation(hyp, a, self.rng)
            zetas = np.asarray(self.model.children(hyp, a, z), dtype=float)
            branch = self._pick_branch(zetas, self.rng)
            hyp = self.model.posterior(hyp, a, z, branch)
        return total


class VanillaHBMCTSPlanner(_SearchBase):
    """Full-posterior baseline: every expansion computes the complete set of
    posterior weights, keeps the top ``prune_budget`` hypotheses,
    renormalizes and updates all surviving conditional beliefs."""

    def __init__(self, model, config: PlannerConfig, solver_name: str = "vanilla"):
        super().__init__(model, config)
        self.rng = np.random.default_rng(config.seed)
        self.solver_name = solver_name
        self.root: Optional[BeliefTreeNode] = None

    def plan(self, root_hypotheses, root_weights) -> PlanResult:
        weights = np.asarray(root_weights, dtype=float)
        weights = weights / weights.sum()
        self.root = BeliefTreeNode(hybrid=(weights, tuple(root_hypotheses)))

        def run_one():
            self.simulate(self.root, self.config.horizon)

        self._run_iterations(run_one)
        action = _greedy_action(self.root, self.model.actions)
        return PlanResult(
            action,
            self.root,
            {a: e.q for a, e in self.root.edges.items()},
            {a: e.n for a, e in self.root.edges.items()},
            {
                "solver": self.solver_name,
                "discarded": self.discarded,
                "posterior_calls_per_iteration": self.posterior_calls_per_iteration,
            },
            self.config,
        )

    def simulate(self, node: BeliefTreeNode, depth: int) -> float:
        if depth == 0:
            return 0.0
        cfg = self.config
        a = ucb_select(node, self.model.actions, cfg.ucb_c)
        edge = node.edge(a)
        if cfg.record_returns and edge.returns is None:
            edge.returns = []

        if len(edge.children) <= cfg.k_obs * edge.n**cfg.alpha_obs:
            weights, hyps = node.hybrid
            posterior = self.pruned_posterior(weights, hyps, a)
            r = self.model.reward_hybrid(weights, hyps, a, self.rng)
            child = ObsChild(
                key=len(edge.children),
                obs=None,
                node=BeliefTreeNode(hybrid=posterior),
                reward=r,
            )
            edge.children.append(child)
            total = r + self._rollout(posterior, depth - 1)
        else:
            child = edge.children[int(self.rng.integers(len(edge.children)))]
            total = child.reward + self.simulate(child.node, depth - 1)

        node.visits += 1
        edge.n += 1
        edge.q += (total - edge.q) / edge.n
        if edge.returns is not None:
            edge.returns.append(total)
        return total

    def pruned_posterior(self, weights: np.ndarray, hyps, action):
        """Sample one observation from the hybrid, weight every (parent,
        branch) pair, keep the heaviest ``prune_budget`` and update their
        conditionals."""
        j = _categorical(self.rng, weights)
        z = self.model.sample_observation(hyps[j], action, self.rng)
        candidates = []  # (weight, parent index, branch index)
        for pj, (w, h) in enumerate(zip(weights, hyps)):
            if w <= 0:
                continue
            zetas = np.asarray(self.model.children(h, action, z), dtype=float)
            for i, zv in enumerate(zetas):
                if zv > 0:
                    candidates.append((w * zv, pj, i))
        if not candidates:
            if self._fallback:
                # keep the parents as-is, predicted forward would need an
                # observation; degrade to reusing the current hybrid
                return weights.copy(), tuple(hyps)
            raise _IterationInconsistent
        candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
        kept = candidates[: self.config.prune_budget]
        total = sum(c[0] for c in kept)
        new_weights = np.array([c[0] / total for c in kept])
        new_hyps = tuple(
            self.model.posterior(hyps[pj], action, z, i) for _, pj, i in kept
        )
        return new_weights, new_hyps

    def _rollout(self, hybrid, depth: int) -> float:
        total = 0.0
        weights, hyps = hybrid
        actions = self.model.actions
        for remaining in range(depth, 0, -1):
            a = actions[int(self.rng.integers(len(actions)))]
            total += self.model.reward_hybrid(weights, hyps, a, self.rng)
            if remaining == 1:
                break
            weights, hyps = self.pruned_posterior(weights, hyps, a)
        return total


def pft_dpw_plan(model, root_hypotheses, root_weights, config: PlannerConfig) -> PlanResult:
    """Single-hypothesis baseline: the root hypothesis is sampled by weight
    and the search runs on that unimodal belief with a hypothesis budget of
    one (the argmax branch survives each update)."""
    rng = np.random.default_rng(config.seed)
    weights = np.asarray(root_weights, dtype=float)
    weights = weights / weights.sum()
    j = _categorical(rng, weights)
    sub = replace(config, prune_budget=1, seed=int(rng.integers(2**31)))
    planner = VanillaHBMCTSPlanner(model, sub, solver_name="pftdpw")
    result = planner.plan([root_hypotheses[j]], np.array([1.0]))
    result.stats["root_hypothesis"] = j
    return result


def dabsp_mc_plan(model, root_hypotheses, root_weights, config: PlannerConfig) -> PlanResult:
    """Open-loop Monte Carlo baseline carrying the full pruned hybrid.

    Each trajectory fixes a root action, then follows uniformly random
    actions, updating the pruned hybrid belief at every step; Q of a root
    action is the average trajectory return and the argmax is executed.
    The iteration budget counts belief-update steps, so the trajectory
    count is ``iterations // horizon`` split evenly across root actions.
    """
    rng = np.random.default_rng(config.seed)
    weights = np.asarray(root_weights, dtype=float)
    weights = weights / weights.sum()
    actions = model.actions
    iterations = config.iterations or 0
    per_action = iterations // max(1, config.horizon) // len(actions)
    helper = VanillaHBMCTSPlanner(model, replace(config, seed=int(rng.integers(2**31))))

    q_values: dict = {}
    visit_counts: dict = {}
    discarded = 0
    for a0 in actions:
        returns = []
        trials = 0
        while len(returns) < per_action and trials < 8 * per_action + 8:
            trials += 1
            try:
                w, h = weights.copy(), tuple(root_hypotheses)
                total = 0.0
                act = a0
                for d in range(config.horizon):
                    total += model.reward_hybrid(w, h, act, helper.rng)
                    if d < config.horizon - 1:
                        w, h = helper.pruned_posterior(w, h, act)
                        act = actions[int(helper.rng.integers(len(actions)))]
                returns.append(total)
            except _IterationInconsistent:
                discarded += 1
                if trials > 4 * per_action:
                    helper._fallback = True
                continue
        if returns:
            q_values[a0] = float(np.mean(returns))
            visit_counts[a0] = len(returns)
    if q_values:
        best = max(actions, key=lambda a: q_values.get(a, -math.inf))
    else:
        best = actions[0]
    root = BeliefTreeNode(hybrid=(weights, tuple(root_hypotheses)))
    return PlanResult(
        best,
        root,
        q_values,
        visit_counts,
        {"solver": "dabsp", "discarded": discarded, "posterior_calls_per_iteration": []},
        config,
    )


def _hbmcp_solve(model, hyps, weights, config):
    return HBMCPPlanner(model, config).plan(hyps, weights)


def _vanilla_solve(model, hyps, weights, config):
    return VanillaHBMCTSPlanner(model, config).plan(hyps, weights)


SOLVERS = {
    "hbmcp": _hbmcp_solve,
    "vanilla": _vanilla_solve,
    "pftdpw": pft_dpw_plan,
    "dabsp": dabsp_mc_plan,
}


def solve(solver: str, model, root_hypotheses, root_weights, config: PlannerConfig) -> PlanResult:
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}")
    return fn(model, root_hypotheses, root_weights, config)
