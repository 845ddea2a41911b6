"""Monte-Carlo execution, exact oracles and benchmark experiments.

run_policy estimates a policy's expected cumulative reward over seeded
trials; every trajectory is checked against the hard budget at every step.
dp_oracle solves the joint-state finite-horizon problem exactly (tiny
instances only, size-guarded).  scaling_experiment replicates an instance's
arm classes rho-fold with budget rho*K and tracks how the per-arm
optimality gap and the class-population fractions behave as rho grows.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import lp, policy as policy_mod
from .model import BanditInstance, InvariantViolation, RunRecord
from .rng import child_rng

DP_SIZE_GUARD = 1_000_000


class SizeGuardError(RuntimeError):
    def __init__(self, size: int, guard: int = DP_SIZE_GUARD):
        super().__init__(f"joint DP size {size} exceeds guard {guard}")
        self.size = size
        self.guard = guard


@dataclass(frozen=True)
class GapReport:
    """Optimality gap of one policy against the LP upper bound."""

    policy: str
    trials: int
    mean_reward: float
    stderr: float
    lp_bound: float
    gap: float
    per_arm_gap: float

    def check(self) -> None:
        if self.gap < -2.0 * self.stderr - 1e-9:
            raise InvariantViolation(
                f"policy {self.policy} beats the upper bound beyond noise: "
                f"gap={self.gap:.6g}, stderr={self.stderr:.6g}"
            )


@dataclass
class PolicyStats:
    mean: float
    stderr: float
    totals: np.ndarray
    record: RunRecord


@dataclass(frozen=True)
class ClassCounts:
    """Arm-population counts per class: B[t, n, s] and D[t, n, s, a]."""

    B: np.ndarray
    D: np.ndarray
    rho: int

    def check(self) -> None:
        per_class = self.B.sum(axis=2)
        if np.any(per_class != self.rho):
            raise InvariantViolation("class populations do not sum to rho")
        active = self.D.sum(axis=3)
        if np.any(active > self.B):
            raise InvariantViolation("more activated arms than present arms")


def _mean_stderr(totals: np.ndarray) -> tuple[float, float]:
    mean = float(totals.mean())
    if totals.size < 2:
        return mean, 0.0
    return mean, float(totals.std(ddof=1) / np.sqrt(totals.size))


class _StackedDynamics:
    """Vectorized kernel/reward tables for instances with shared (S, A)."""

    def __init__(self, instance: BanditInstance):
        self.P_cum = np.cumsum(np.stack([a.transition for a in instance.arms]), axis=3)
        self.rewards = np.stack([a.mean_reward for a in instance.arms])
        self.det = np.array([a.deterministic_reward for a in instance.arms])
        self.S = instance.arms[0].num_states

    def step(self, states, actions, rng):
        n = states.size
        idx = (np.arange(n), states, actions)
        means = self.rewards[idx]
        u = rng.random(n)
        realized = np.where(self.det, means, (u < means).astype(np.float64))
        u2 = rng.random(n)
        rows = self.P_cum[idx]
        nxt = np.minimum((rows <= u2[:, None]).sum(axis=1), self.S - 1)
        return realized, nxt.astype(np.int64)


class _PerArmDynamics:
    def __init__(self, instance: BanditInstance):
        self.arms = instance.arms

    def step(self, states, actions, rng):
        n = len(self.arms)
        realized = np.empty(n)
        nxt = np.empty(n, dtype=np.int64)
        u = rng.random(n)
        u2 = rng.random(n)
        for i, arm in enumerate(self.arms):
            s, a = int(states[i]), int(actions[i])
            mean = arm.mean_reward[s, a]
            realized[i] = mean if arm.deterministic_reward else float(u[i] < mean)
            row = np.cumsum(arm.transition[s, a])
            nxt[i] = min(int(np.searchsorted(row, u2[i], side="right")), arm.num_states - 1)
        return realized, nxt


def _draw_initial(instance: BanditInstance, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(instance.num_arms)
    states = np.empty(instance.num_arms, dtype=np.int64)
    for n, dist in enumerate(instance.initial_state):
        states[n] = min(
            int(np.searchsorted(np.cumsum(dist), u[n], side="right")), dist.size - 1
        )
    return states


def run_single(
    instance: BanditInstance,
    executor,
    rng: np.random.Generator,
    horizon: Optional[int] = None,
    seed_label: int = 0,
    class_of_arm: Optional[np.ndarray] = None,
    counts_out: Optional[ClassCounts] = None,
) -> RunRecord:
    """Simulate one trajectory; raises on any budget breach."""
    T = instance.horizon if horizon is None else horizon
    N = instance.num_arms
    dyn = _StackedDynamics(instance) if instance.homogeneous_shape else _PerArmDynamics(instance)
    states = _draw_initial(instance, rng)
    states_log = np.empty((T, N), dtype=np.int64)
    actions_log = np.empty((T, N), dtype=np.int64)
    rewards = np.empty(T)
    spent = np.empty(T, dtype=np.int64)
    for t in range(T):
        decision = executor.decide(states, t, rng)
        if decision.spent > instance.budget:
            raise InvariantViolation(
                f"executor overspent budget at t={t}: {decision.spent} > {instance.budget}"
            )
        actions = decision.chosen_actions
        states_log[t] = states
        actions_log[t] = actions
        spent[t] = decision.spent
        if counts_out is not None:
            np.add.at(counts_out.B[t], (class_of_arm, states), 1)
            active = actions > 0
            if np.any(active):
                np.add.at(
                    counts_out.D[t],
                    (class_of_arm[active], states[active], actions[active]),
                    1,
                )
        realized, states = dyn.step(states, actions, rng)
        rewards[t] = realized.sum()
    return RunRecord(
        states=states_log,
        actions=actions_log,
        rewards=rewards,
        spent_budget=spent,
        seed=seed_label,
        budget=instance.budget,
    )


def run_policy(
    instance: BanditInstance,
    executor,
    trials: int,
    seed: int,
    tag: str = "trial",
    horizon: Optional[int] = None,
) -> PolicyStats:
    """Monte-Carlo estimate of the executor's expected cumulative reward.

    Trial i uses the child stream (seed, tag, i), so trials are independent
    and the whole batch is reproducible from the root seed.
    """
    totals = np.empty(trials)
    sample: Optional[RunRecord] = None
    for i in range(trials):
        record = run_single(instance, executor, child_rng(seed, tag, i), horizon, seed_label=i)
        totals[i] = record.total_reward
        if sample is None:
            sample = record
    mean, stderr = _mean_stderr(totals)
    return PolicyStats(mean=mean, stderr=stderr, totals=totals, record=sample)


@dataclass
class DpOracleResult:
    value: float
    # best_action[t] maps each joint state (ndarray indexed by per-arm states)
    # to an index into `joint_actions`.
    best_action: np.ndarray
    joint_actions: list[tuple[int, ...]]
    joint_size: int


def _feasible_joint_actions(instance: BanditInstance) -> list[tuple[int, ...]]:
    ranges = [range(a.num_actions) for a in instance.arms]
    costs = [a.action_cost for a in instance.arms]
    out = []
    for combo in itertools.product(*ranges):
        if sum(int(costs[n][a]) for n, a in enumerate(combo)) <= instance.budget:
            out.append(combo)
    return out


def dp_oracle(instance: BanditInstance, guard: int = DP_SIZE_GUARD) -> DpOracleResult:
    """Exact finite-horizon backward induction over the joint state space.

    Only budget-feasible joint actions are enumerated.  Refuses instances
    whose joint size prod(S_n) * T exceeds the guard.
    """
    shape = tuple(a.num_states for a in instance.arms)
    size = int(np.prod(shape)) * instance.horizon
    if size > guard:
        raise SizeGuardError(size, guard)
    actions = _feasible_joint_actions(instance)
    T = instance.horizon
    N = instance.num_arms

    reward_of = []
    for combo in actions:
        r = np.zeros(shape)
        for n, a in enumerate(combo):
            vec = instance.arms[n].mean_reward[:, a]
            r = r + vec.reshape([-1 if i == n else 1 for i in range(N)])
        reward_of.append(r)

    V = np.zeros(shape)
    best = np.zeros((T,) + shape, dtype=np.int64)
    for t in range(T - 1, -1, -1):
        best_q = np.full(shape, -np.inf)
        best_a = np.zeros(shape, dtype=np.int64)
        for ai, combo in enumerate(actions):
            ev = V
            for n, a in enumerate(combo):
                ev = np.moveaxis(
                    np.tensordot(instance.arms[n].transition[:, a, :], ev, axes=([1], [n])), 0, n
                )
            q = reward_of[ai] + ev
            improve = q > best_q + 1e-15
            best_q = np.where(improve, q, best_q)
            best_a = np.where(improve, ai, best_a)
        V = best_q
        best[t] = best_a

    value = V
    for n in range(N):
        value = np.tensordot(instance.initial_state[n], value, axes=([0], [0]))
    return DpOracleResult(value=float(value), best_action=best, joint_actions=actions, joint_size=size)


def dp_average_rate(
    instance: BanditInstance, tol: float = 1e-9, max_iter: int = 200_000, guard: int = DP_SIZE_GUARD
) -> float:
    """Optimal long-run average reward of the joint problem (relative VI)."""
    shape = tuple(a.num_states for a in instance.arms)
    size = int(np.prod(shape))
    if size * max(instance.horizon, 1) > guard:
        raise SizeGuardError(size * max(instance.horizon, 1), guard)
    actions = _feasible_joint_actions(instance)
    N = instance.num_arms
    reward_of = []
    for combo in actions:
        r = np.zeros(shape)
        for n, a in enumerate(combo):
            vec = instance.arms[n].mean_reward[:, a]
            r = r + vec.reshape([-1 if i == n else 1 for i in range(N)])
        reward_of.append(r)
    V = np.zeros(shape)
    for _ in range(max_iter):
        best_q = np.full(shape, -np.inf)
        for ai, combo in enumerate(actions):
            ev = V
            for n, a in enumerate(combo):
                ev = np.moveaxis(
                    np.tensordot(instance.arms[n].transition[:, a, :], ev, axes=([1], [n])), 0, n
                )
            best_q = np.maximum(best_q, reward_of[ai] + ev)
        delta = best_q - V
        span = float(delta.max() - delta.min())
        V = best_q - best_q.reshape(-1)[0]  # keep V bounded
        if span < tol:
            return float(0.5 * (delta.max() + delta.min()))
    raise RuntimeError("relative value iteration did not converge")


def exact_policy_value(
    instance: BanditInstance,
    action_distribution: Callable[[np.ndarray, int], dict[tuple[int, ...], float]],
    horizon: Optional[int] = None,
    prune: float = 1e-15,
) -> float:
    """Exact expected cumulative reward of a randomized joint policy.

    `action_distribution(joint_state, t)` returns the policy's distribution
    over joint actions.  Propagates the full joint distribution forward, so
    it is only usable on tiny instances.
    """
    T = instance.horizon if horizon is None else horizon
    shape = tuple(a.num_states for a in instance.arms)
    dist = np.ones(())
    for init in instance.initial_state:
        dist = np.multiply.outer(dist, init)
    dist = dist.reshape(shape)
    total = 0.0
    for t in range(T):
        nxt = np.zeros(shape)
        for s_idx in np.argwhere(dist > prune):
            s = tuple(int(v) for v in s_idx)
            p_state = float(dist[s])
            for combo, pa in action_distribution(np.array(s), t).items():
                if pa <= prune:
                    continue
                w = p_state * pa
                total += w * sum(
                    float(instance.arms[n].mean_reward[s[n], a]) for n, a in enumerate(combo)
                )
                block = np.ones(())
                for n, a in enumerate(combo):
                    block = np.multiply.outer(block, instance.arms[n].transition[s[n], a, :])
                nxt += w * block.reshape(shape)
        dist = nxt
    return total


def gap_report(
    name: str, stats: PolicyStats, bound: float, num_arms: int, trials: int
) -> GapReport:
    gap = bound - stats.mean
    return GapReport(
        policy=name,
        trials=trials,
        mean_reward=stats.mean,
        stderr=stats.stderr,
        lp_bound=bound,
        gap=gap,
        per_arm_gap=gap / num_arms,
    )


@dataclass
class ScalingRow:
    rho: int
    report: GapReport
    lemma_dev_mean: float
    lemma_dev_stderr: float
    mean_counts: np.ndarray  # B averaged over trials, shape (T, classes, S)


def scaling_experiment(
    base: BanditInstance,
    rho_list: Sequence[int],
    trials: int,
    seed: int,
    backend: str = "auto",
) -> list[ScalingRow]:
    """Replicate each base arm rho times (budget rho*K) and run the index policy.

    The base LP is solved once: by symmetry the per-arm occupancy, the
    recovered policy and the scaled bound rho * objective are exact for
    every replication level.  Also reports how far the empirical class
    fractions B[n, s; t] / rho drift from the LP state marginals.
    """
    solution = lp.solve_relaxed(base, backend=backend)
    marginals = np.stack([mu.sum(axis=1) for mu in solution.mu])  # (N, S, T)
    base_policy = policy_mod.make_omr_policy(solution, base)
    N = base.num_arms
    rows = []
    for rho in rho_list:
        inst = base.replicate(rho)
        chi = tuple(base_policy.chi[i % N] for i in range(inst.num_arms))
        idx = tuple(base_policy.indices[i % N] for i in range(inst.num_arms))
        pol = policy_mod.RandomizedPolicy(chi=chi, indices=idx)
        executor = policy_mod.OmrExecutor(inst, pol)
        class_of_arm = np.arange(inst.num_arms) % N
        T = inst.horizon
        S = max(a.num_states for a in inst.arms)
        A = max(a.num_actions for a in inst.arms)
        totals = np.empty(trials)
        devs = np.empty(trials)
        counts_sum = np.zeros((T, N, S))
        sample = None
        for i in range(trials):
            counts = ClassCounts(
                B=np.zeros((T, N, S), dtype=np.int64),
                D=np.zeros((T, N, S, A), dtype=np.int64),
                rho=rho,
            )
            record = run_single(
                inst,
                executor,
                child_rng(seed, f"scale-rho{rho}", i),
                seed_label=i,
                class_of_arm=class_of_arm,
                counts_out=counts,
            )
            counts.check()
            totals[i] = record.total_reward
            frac = counts.B.astype(np.float64) / rho  # (T, N, S)
            devs[i] = float(np.abs(frac - marginals.transpose(2, 0, 1)).max())
            counts_sum += counts.B
            if sample is None:
                sample = record
        mean, stderr = _mean_stderr(totals)
        dev_mean, dev_stderr = _mean_stderr(devs)
        stats = PolicyStats(mean=mean, stderr=stderr, totals=totals, record=sample)
        report = gap_report("omr", stats, rho * solution.objective, rho * N, trials)
        rows.append(
            ScalingRow(
                rho=rho,
                report=report,
                lemma_dev_mean=dev_mean,
                lemma_dev_stderr=dev_stderr,
                mean_counts=counts_sum / trials,
            )
        )
    return rows


def evaluate_baselines(
    instance: BanditInstance,
    trials: int,
    seed: int,
    policies: Sequence[str] = ("omr", "greedy", "random"),
    backend: str = "auto",
) -> list[GapReport]:
    """Gap reports for the index policy and the comparison baselines."""
    solution = lp.solve_relaxed(instance, backend=backend)
    bound = solution.objective
    reports = []
    for name in policies:
        if name == "omr":
            executor = policy_mod.OmrExecutor(instance, policy_mod.make_omr_policy(solution, instance))
        elif name == "greedy":
            executor = policy_mod.GreedyExecutor(instance)
        elif name == "random":
            executor = policy_mod.RandomExecutor(instance)
        elif name == "all-passive":
            executor = policy_mod.AllPassiveExecutor(instance)
        else:
            raise ValueError(f"unknown baseline {name!r}")
        stats = run_policy(instance, executor, trials, seed, tag=f"baseline-{name}")
        reports.append(gap_report(name, stats, bound, instance.num_arms, trials))
    return reports
