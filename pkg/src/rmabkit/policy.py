"""Index-based activation under a per-step budget.

Each arm gets an index equal to its expected active-action planning reward
under the LP-recovered randomized policy.  At each step arms are visited in
decreasing index order (ties shuffled with the caller's rng) and draw an
action from their per-state distribution restricted to what the remaining
budget can afford; zero-index arms stay passive.  The resulting joint
action always respects the hard budget.

Time indices are 0-based throughout (t in range(T)).  Policies whose chi
carries fewer time slices than the execution horizon hold their last slice,
which is how stationary policies (one slice) plug into long runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from math import prod

import numpy as np

from .model import BanditInstance, InvariantViolation, RandomizedPolicy
from . import lp


@dataclass(frozen=True)
class ActivationDecision:
    """Joint action for one step: actions, ordered activation set, spend."""

    chosen_actions: np.ndarray
    activation_set: tuple[int, ...]
    spent: int
    considered: tuple[int, ...] = ()

    def validate(self, budget: int) -> None:
        if self.spent > budget:
            raise InvariantViolation(f"activation spent {self.spent} exceeds budget {budget}")
        active = set(np.nonzero(self.chosen_actions)[0].tolist())
        if active != set(self.activation_set):
            raise InvariantViolation("activation set disagrees with chosen actions")


def index_table(chi: np.ndarray, mean_reward: np.ndarray) -> np.ndarray:
    """Per-state, per-time expected active reward: sum_{a>0} chi * r."""
    return np.einsum("sat,sa->st", chi[:, 1:, :], mean_reward[:, 1:])


def attach_indices(policy: RandomizedPolicy, rewards: list[np.ndarray]) -> RandomizedPolicy:
    tables = tuple(index_table(chi, r) for chi, r in zip(policy.chi, rewards))
    return RandomizedPolicy(chi=policy.chi, indices=tables)


def make_omr_policy(solution: lp.OccupancySolution, instance: BanditInstance) -> RandomizedPolicy:
    """Recover the randomized policy from occupancy and attach its indices."""
    policy = lp.recover_policy(solution)
    return attach_indices(policy, [arm.mean_reward for arm in instance.arms])


def _time_slice(arr: np.ndarray, t: int) -> int:
    return min(t, arr.shape[-1] - 1)


def compute_indices(
    policy: RandomizedPolicy, instance: BanditInstance, joint_state: np.ndarray, t: int
) -> np.ndarray:
    """Indices of every arm at its current state and time t (0-based)."""
    psi = np.empty(instance.num_arms)
    for n, arm in enumerate(instance.arms):
        s = int(joint_state[n])
        if policy.indices is not None:
            tab = policy.indices[n]
            psi[n] = tab[s, _time_slice(tab, t)]
        else:
            chi = policy.chi[n]
            te = _time_slice(chi, t)
            psi[n] = float(chi[s, 1:, te] @ arm.mean_reward[s, 1:])
    return psi


def priority_order(psi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Arms in decreasing index order; tied groups are shuffled."""
    values = np.unique(psi)[::-1]
    chunks = []
    for v in values:
        group = np.nonzero(psi == v)[0]
        if group.size > 1:
            group = rng.permutation(group)
        chunks.append(group)
    return np.concatenate(chunks)


def _restricted_probs(chi_row: np.ndarray, costs: np.ndarray, remaining: int) -> np.ndarray | None:
    """chi restricted to affordable actions (passive always included), renormalized."""
    mask = costs <= remaining
    masked = np.where(mask, chi_row, 0.0)
    total = masked.sum()
    if total <= 1e-15:
        return None
    return masked / total


def select_actions(
    policy: RandomizedPolicy,
    instance: BanditInstance,
    joint_state: np.ndarray,
    t: int,
    rng: np.random.Generator,
    budget: int | None = None,
) -> ActivationDecision:
    """One step of the budgeted activation rule.

    Arms are considered in decreasing index order; a considered arm draws
    from its restricted chi.  Consideration stops once the remaining budget
    drops below the cheapest positive cost; zero-index arms are passive.
    """
    K = instance.budget if budget is None else budget
    psi = compute_indices(policy, instance, joint_state, t)
    order = priority_order(psi, rng)
    min_pos = instance.min_positive_cost()
    actions = np.zeros(instance.num_arms, dtype=np.int64)
    activation: list[int] = []
    considered: list[int] = []
    remaining = int(K)
    for n in order:
        n = int(n)
        if min_pos > 0 and remaining < min_pos:
            break
        if psi[n] <= 0.0:
            continue
        arm = instance.arms[n]
        chi = policy.chi[n]
        row = chi[int(joint_state[n]), :, _time_slice(chi, t)]
        probs = _restricted_probs(row, arm.action_cost, remaining)
        considered.append(n)
        if probs is None:
            continue
        u = rng.random()
        a = int(min(np.searchsorted(np.cumsum(probs), u, side="right"), arm.num_actions - 1))
        if a != 0:
            actions[n] = a
            activation.append(n)
            remaining -= int(arm.action_cost[a])
    decision = ActivationDecision(
        chosen_actions=actions,
        activation_set=tuple(activation),
        spent=int(K) - remaining,
        considered=tuple(considered),
    )
    decision.validate(K)
    return decision


class OmrExecutor:
    """Executes the index policy; decide() is a pure function of its rng."""

    name = "omr"

    def __init__(self, instance: BanditInstance, policy: RandomizedPolicy):
        if policy.indices is None:
            policy = attach_indices(policy, [arm.mean_reward for arm in instance.arms])
        self.instance = instance
        self.policy = policy

    def decide(self, joint_state: np.ndarray, t: int, rng: np.random.Generator) -> ActivationDecision:
        return select_actions(self.policy, self.instance, joint_state, t, rng)


class GreedyExecutor:
    """Myopic baseline: fill the budget in decreasing immediate-gain order.

    Gain of an action is its mean reward advantage over staying passive in
    the current state; arms with no affordable positive-gain action stay
    passive.
    """

    name = "greedy"

    def __init__(self, instance: BanditInstance):
        self.instance = instance

    def decide(self, joint_state, t, rng):
        inst = self.instance
        K = inst.budget
        gains = np.full(inst.num_arms, -np.inf)
        for n, arm in enumerate(inst.arms):
            s = int(joint_state[n])
            adv = arm.mean_reward[s, 1:] - arm.mean_reward[s, 0]
            affordable = arm.action_cost[1:] <= K
            if np.any(affordable):
                gains[n] = np.max(np.where(affordable, adv, -np.inf))
        order = priority_order(gains, rng)
        min_pos = inst.min_positive_cost()
        actions = np.zeros(inst.num_arms, dtype=np.int64)
        activation = []
        remaining = int(K)
        for n in order:
            n = int(n)
            if min_pos > 0 and remaining < min_pos:
                break
            arm = inst.arms[n]
            s = int(joint_state[n])
            adv = arm.mean_reward[s, 1:] - arm.mean_reward[s, 0]
            mask = arm.action_cost[1:] <= remaining
            cand = np.where(mask, adv, -np.inf)
            best = int(np.argmax(cand))
            if cand[best] <= 0.0:
                continue
            actions[n] = best + 1
            activation.append(n)
            remaining -= int(arm.action_cost[best + 1])
        decision = ActivationDecision(actions, tuple(activation), int(K) - remaining)
        decision.validate(K)
        return decision


class RandomExecutor:
    """Uniform-random feasible actions, arms visited in random order."""

    name = "random"

    def __init__(self, instance: BanditInstance):
        self.instance = instance

    def decide(self, joint_state, t, rng):
        inst = self.instance
        K = inst.budget
        actions = np.zeros(inst.num_arms, dtype=np.int64)
        activation = []
        remaining = int(K)
        for n in rng.permutation(inst.num_arms):
            n = int(n)
            arm = inst.arms[n]
            feasible = np.nonzero(arm.action_cost <= remaining)[0]
            a = int(feasible[rng.integers(feasible.size)])
            if a != 0:
                actions[n] = a
                activation.append(n)
                remaining -= int(arm.action_cost[a])
        decision = ActivationDecision(actions, tuple(activation), int(K) - remaining)
        decision.validate(K)
        return decision


class AllPassiveExecutor:
    name = "all-passive"

    def __init__(self, instance: BanditInstance):
        self.instance = instance

    def decide(self, joint_state, t, rng):
        n = self.instance.num_arms
        return ActivationDecision(np.zeros(n, dtype=np.int64), (), 0)


def exact_action_distribution(
    policy: RandomizedPolicy, instance: BanditInstance, joint_state: np.ndarray, t: int
) -> dict[tuple[int, ...], float]:
    """Exact distribution over joint actions produced by select_actions.

    Averages over every tie-breaking order and every sequence of restricted
    draws; exponential in N, intended as a small-instance oracle.
    """
    N = instance.num_arms
    psi = compute_indices(policy, instance, joint_state, t)
    min_pos = instance.min_positive_cost()
    values = np.unique(psi)[::-1]
    groups = [np.nonzero(psi == v)[0].tolist() for v in values]

    rows = []
    for n in range(N):
        chi = policy.chi[n]
        rows.append(chi[int(joint_state[n]), :, _time_slice(chi, t)])

    dist: dict[tuple[int, ...], float] = {}

    def run_order(order: list[int], weight: float) -> None:
        def rec(i: int, remaining: int, p: float, actions: tuple[int, ...]) -> None:
            while i < len(order):
                if min_pos > 0 and remaining < min_pos:
                    break
                n = order[i]
                if psi[n] <= 0.0:
                    i += 1
                    continue
                probs = _restricted_probs(rows[n], instance.arms[n].action_cost, remaining)
                if probs is None:
                    i += 1
                    continue
                for a in np.nonzero(probs > 0)[0]:
                    a = int(a)
                    nxt = list(actions)
                    nxt[n] = a
                    rec(
                        i + 1,
                        remaining - int(instance.arms[n].action_cost[a]),
                        p * float(probs[a]),
                        tuple(nxt),
                    )
                return
            dist[actions] = dist.get(actions, 0.0) + p

        rec(0, instance.budget, weight, tuple([0] * N))

    def expand(gi: int, prefix: list[int], weight: float) -> None:
        if gi == len(groups):
            run_order(prefix, weight)
            return
        g = groups[gi]
        if len(g) == 1:
            expand(gi + 1, prefix + g, weight)
            return
        perms = list(permutations(g))
        w = weight / len(perms)
        for p in perms:
            expand(gi + 1, prefix + list(p), w)

    expand(0, [], 1.0)
    total = sum(dist.values())
    if abs(total - 1.0) > 1e-9:
        raise AssertionError(f"action distribution mass {total} != 1")
    return dist
