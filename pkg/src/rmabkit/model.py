"""Domain types for restless multi-armed multi-action bandit problems.

An arm is a finite controlled MDP with a passive action 0 that earns no
reward; activating it with action ``a`` consumes ``action_cost[a]`` units of
a per-step budget shared by all arms.  Types are immutable after
construction (backing arrays are frozen) and safe to share across threads.

Scenario builders whose natural rewards fall outside [0, 1] (penalty terms)
attach an affine normalization per arm: planning code always sees
``mean_reward`` in [0, 1], while ``raw_reward`` recovers the scenario-scale
value as ``reward_scale * mean_reward + reward_offset``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# Absolute tolerance for stored probabilities (row sums, distributions).
PROB_ATOL = 1e-9


class InvariantViolation(RuntimeError):
    """A hard runtime invariant was breached (e.g. budget overspend)."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ArmModel:
    """One arm's controlled MDP: kernel, mean rewards and action costs.

    Attributes:
        arm_id: index of the arm within its instance.
        transition: tensor ``P[s, a, s']`` of transition probabilities.
        mean_reward: matrix ``r[s, a]`` of planning-scale mean rewards in [0, 1].
        action_cost: integer budget cost per action; ``action_cost[0] == 0``.
        reward_scale / reward_offset: affine map from planning to raw rewards.
        raw_reward_matrix: exact raw rewards when a scenario normalized them;
            None means planning rewards are already raw.
        deterministic_reward: if True the realized reward equals the mean;
            otherwise rewards are Bernoulli draws with the given mean.
    """

    arm_id: int
    transition: np.ndarray
    mean_reward: np.ndarray
    action_cost: np.ndarray
    reward_scale: float = 1.0
    reward_offset: float = 0.0
    raw_reward_matrix: Optional[np.ndarray] = None
    deterministic_reward: bool = False

    def __post_init__(self):
        object.__setattr__(self, "transition", _freeze(np.asarray(self.transition, dtype=np.float64)))
        object.__setattr__(self, "mean_reward", _freeze(np.asarray(self.mean_reward, dtype=np.float64)))
        object.__setattr__(self, "action_cost", _freeze(np.asarray(self.action_cost, dtype=np.int64)))
        if self.raw_reward_matrix is not None:
            object.__setattr__(
                self, "raw_reward_matrix", _freeze(np.asarray(self.raw_reward_matrix, dtype=np.float64))
            )
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise ValueError("transition must have shape (S, A, S)")
        if self.mean_reward.shape != self.transition.shape[:2]:
            raise ValueError("mean_reward must have shape (S, A)")
        if self.action_cost.shape != (self.num_actions,):
            raise ValueError("action_cost must have shape (A,)")

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def is_normalized(self) -> bool:
        return not (self.reward_scale == 1.0 and self.reward_offset == 0.0)

    def raw_reward(self, state: int, action: int) -> float:
        """Scenario-scale mean reward at (state, action)."""
        if self.raw_reward_matrix is not None:
            return float(self.raw_reward_matrix[state, action])
        return float(self.reward_scale * self.mean_reward[state, action] + self.reward_offset)

    def signature(self) -> bytes:
        """Byte-exact model identity, ignoring arm_id (used to pool identical arms)."""
        parts = [
            self.transition.tobytes(),
            self.mean_reward.tobytes(),
            self.action_cost.tobytes(),
            np.float64(self.reward_scale).tobytes(),
            np.float64(self.reward_offset).tobytes(),
            b"det" if self.deterministic_reward else b"ber",
        ]
        return b"|".join(parts)


@dataclass(frozen=True)
class BanditInstance:
    """N arms sharing a per-step activation budget over a finite horizon.

    Attributes:
        arms: the arm models.
        budget: per-step activation budget K.
        horizon: number of decision epochs T.
        initial_state: per-arm initial distribution over that arm's states.
    """

    arms: tuple[ArmModel, ...]
    budget: int
    horizon: int
    initial_state: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        object.__setattr__(
            self,
            "initial_state",
            tuple(_freeze(np.asarray(d, dtype=np.float64)) for d in self.initial_state),
        )
        if len(self.initial_state) != len(self.arms):
            raise ValueError("need one initial distribution per arm")

    @property
    def num_arms(self) -> int:
        return len(self.arms)

    @property
    def homogeneous_shape(self) -> bool:
        shapes = {(a.num_states, a.num_actions) for a in self.arms}
        return len(shapes) == 1

    def min_positive_cost(self) -> int:
        costs = [int(c) for arm in self.arms for c in arm.action_cost if c > 0]
        return min(costs) if costs else 0

    def replicate(self, rho: int) -> "BanditInstance":
        """Replicate every arm rho times and scale the budget to rho*K."""
        if rho < 1:
            raise ValueError("rho must be >= 1")
        arms = []
        initials = []
        for copy in range(rho):
            for arm, init in zip(self.arms, self.initial_state):
                arms.append(
                    ArmModel(
                        arm_id=len(arms),
                        transition=arm.transition,
                        mean_reward=arm.mean_reward,
                        action_cost=arm.action_cost,
                        reward_scale=arm.reward_scale,
                        reward_offset=arm.reward_offset,
                        raw_reward_matrix=arm.raw_reward_matrix,
                        deterministic_reward=arm.deterministic_reward,
                    )
                )
                initials.append(init)
        return BanditInstance(
            arms=tuple(arms),
            budget=self.budget * rho,
            horizon=self.horizon,
            initial_state=tuple(initials),
        )


@dataclass(frozen=True)
class RandomizedPolicy:
    """Per-arm, per-time action distributions and optional activation indices.

    ``chi[n]`` has shape (S_n, A_n, T): the probability of taking each action
    in each state at each time.  ``indices[n]``, when present, has shape
    (S_n, T) and holds the expected active-action planning reward under chi
    (the quantity the activation rule sorts by).
    """

    chi: tuple[np.ndarray, ...]
    indices: Optional[tuple[np.ndarray, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "chi", tuple(_freeze(np.asarray(c, dtype=np.float64)) for c in self.chi))
        if self.indices is not None:
            object.__setattr__(
                self, "indices", tuple(_freeze(np.asarray(i, dtype=np.float64)) for i in self.indices)
            )

    @property
    def horizon(self) -> int:
        return self.chi[0].shape[2]

    @property
    def num_arms(self) -> int:
        return len(self.chi)


@dataclass(frozen=True)
class RunRecord:
    """Trajectory log of one simulated run.

    states/actions have shape (T, N); rewards and spent_budget have shape
    (T,).  Rewards are planning-scale totals, so rewards[t] lies in [0, N].
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    spent_budget: np.ndarray
    seed: int
    budget: int

    def __post_init__(self):
        object.__setattr__(self, "states", _freeze(np.asarray(self.states, dtype=np.int64)))
        object.__setattr__(self, "actions", _freeze(np.asarray(self.actions, dtype=np.int64)))
        object.__setattr__(self, "rewards", _freeze(np.asarray(self.rewards, dtype=np.float64)))
        object.__setattr__(self, "spent_budget", _freeze(np.asarray(self.spent_budget, dtype=np.int64)))
        if np.any(self.spent_budget > self.budget):
            t = int(np.argmax(self.spent_budget > self.budget))
            raise InvariantViolation(
                f"budget overspent at step {t}: {int(self.spent_budget[t])} > {self.budget}"
            )
        n = self.states.shape[1]
        if np.any(self.rewards < -1e-12) or np.any(self.rewards > n + 1e-12):
            raise InvariantViolation("per-step total reward outside [0, N]")

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


def validate_instance(instance: BanditInstance) -> list[str]:
    """Check every stored stochasticity and budget invariant.

    Returns an empty list iff the instance is valid; otherwise one message
    per violation, naming the arm, state, action and failed check.  This is
    diagnostic only; nothing is raised.
    """
    problems: list[str] = []
    for arm in instance.arms:
        n = arm.arm_id
        if np.any(arm.transition < 0):
            s, a, sp = np.unravel_index(int(np.argmin(arm.transition)), arm.transition.shape)
            problems.append(f"arm {n}: negative transition probability at (s={s}, a={a}, s'={sp})")
        row_sums = arm.transition.sum(axis=2)
        bad = np.argwhere(np.abs(row_sums - 1.0) > PROB_ATOL)
        for s, a in bad:
            problems.append(
                f"arm {n}: transition row (s={s}, a={a}) sums to {row_sums[s, a]:.12g}, expected 1"
            )
        if np.any(arm.mean_reward < -0.0) or np.any(arm.mean_reward > 1.0):
            s, a = np.unravel_index(int(np.argmax(np.abs(arm.mean_reward - 0.5))), arm.mean_reward.shape)
            problems.append(f"arm {n}: mean reward at (s={s}, a={a}) outside [0, 1]")
        if not arm.is_normalized:
            # The zero-passive-reward convention applies to raw-scale arms;
            # normalized arms carry the scenario's passive reward shifted into [0, 1].
            nz = np.nonzero(arm.mean_reward[:, 0])[0]
            for s in nz:
                problems.append(
                    f"arm {n}: passive action must earn zero reward, got "
                    f"{arm.mean_reward[s, 0]:.12g} at s={s}"
                )
        if arm.action_cost[0] != 0:
            problems.append(f"arm {n}: action_cost[0] must be 0, got {int(arm.action_cost[0])}")
        if np.any(arm.action_cost < 0):
            a = int(np.argmin(arm.action_cost))
            problems.append(f"arm {n}: negative action cost at a={a}")
    for n, dist in enumerate(instance.initial_state):
        if dist.shape != (instance.arms[n].num_states,):
            problems.append(f"arm {n}: initial distribution has wrong length")
            continue
        if np.any(dist < 0):
            problems.append(f"arm {n}: negative initial probability")
        if abs(dist.sum() - 1.0) > PROB_ATOL:
            problems.append(f"arm {n}: initial distribution sums to {dist.sum():.12g}, expected 1")
    if instance.budget < 1:
        problems.append(f"budget K={instance.budget} must be positive")
    if instance.horizon < 1:
        problems.append(f"horizon T={instance.horizon} must be positive")
    mpc = instance.min_positive_cost()
    if mpc and instance.budget < mpc:
        problems.append(
            f"budget K={instance.budget} below minimum positive action cost {mpc}; "
            "every policy is all-passive"
        )
    return problems


def _check_indices(arm: ArmModel, s: int, a: int) -> None:
    if not (0 <= s < arm.num_states):
        raise ValueError(f"state {s} out of range for arm {arm.arm_id} (S={arm.num_states})")
    if not (0 <= a < arm.num_actions):
        raise ValueError(f"action {a} out of range for arm {arm.arm_id} (A={arm.num_actions})")


def sample_transition(arm: ArmModel, s: int, a: int, rng: np.random.Generator) -> int:
    """Draw the next state from P[s, a, :]; deterministic given the rng state."""
    _check_indices(arm, s, a)
    row = arm.transition[s, a]
    u = rng.random()
    nxt = int(np.searchsorted(np.cumsum(row), u, side="right"))
    return min(nxt, arm.num_states - 1)


def sample_reward(arm: ArmModel, s: int, a: int, rng: np.random.Generator) -> float:
    """Draw a planning-scale reward with mean ``mean_reward[s, a]``.

    Bernoulli by default; deterministic-reward arms return the mean itself.
    The rng is consumed either way so call sequences stay aligned.
    """
    _check_indices(arm, s, a)
    mean = float(arm.mean_reward[s, a])
    u = rng.random()
    if arm.deterministic_reward:
        return mean
    return 1.0 if u < mean else 0.0
