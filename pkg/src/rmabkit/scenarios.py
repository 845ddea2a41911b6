"""Benchmark instance builders.

Four families: birth-death arm classes with Bernoulli rewards, dense random
multi-action instances, an EV-charging deadline-scheduling problem, and
wireless video streaming with a quality-of-experience reward.  The last two
have reward formulas with penalty terms, so their raw rewards are affinely
normalized into [0, 1] per arm for planning; the exact raw matrix and the
(scale, offset) pair are kept on the arm.

Builders are pure functions of their parameters and seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ArmModel, BanditInstance
from .rng import child_rng

BIRTH_DEATH_LAMBDAS = (3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0, 24.0, 27.0, 30.0)

DEADLINE_MAX_D = 12
DEADLINE_MAX_B = 9
DEADLINE_NUM_STATES = DEADLINE_MAX_D * DEADLINE_MAX_B + 1  # 109

# Successful-transmission probability per (quality R, bandwidth index W).
VIDEO_SUCCESS_PROB = {
    (0, 0): 0.0,
    (1, 1): 1.0,
    (2, 1): 0.293,
    (3, 1): 0.01,
    (1, 2): 1.0,
    (2, 2): 0.57,
    (3, 2): 0.01,
    (1, 3): 1.0,
    (2, 3): 1.0,
    (3, 3): 0.6,
}
VIDEO_MBPS = {0: 0, 1: 1, 2: 3, 3: 5}
VIDEO_ACTIONS = [(0, 0)] + [(r, w) for r in (1, 2, 3) for w in (1, 2, 3)]


def _normalized(raw: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Affine map of a raw reward matrix into [0, 1]: planning, scale, offset."""
    offset = float(raw.min())
    scale = float(raw.max() - raw.min())
    if scale == 0.0:
        scale = 1.0
    planning = (raw - offset) / scale
    return np.clip(planning, 0.0, 1.0), scale, offset


def build_birth_death(
    N: int = 100,
    T: int = 100,
    S: int = 10,
    lambdas: tuple[float, ...] = BIRTH_DEATH_LAMBDAS,
    mu: float = 20.0,
    p_range: tuple[float, float] = (0.01, 0.1),
    alpha: float = 0.3,
    seed: int = 0,
) -> BanditInstance:
    """Birth-death arm classes with state-proportional Bernoulli rewards.

    Class k moves up with probability lambda_k / (lambda_k + mu) and down
    with mu / (lambda_k + mu); blocked boundary mass self-loops.  State s
    (1-based level s+1) pays Bernoulli((s+1) * p_k) when activated, with
    p_k drawn uniformly from p_range.  Arms are dealt to classes round
    robin; the budget is alpha * N.
    """
    if min(lambdas) <= 0 or mu <= 0:
        raise ValueError("arrival and departure rates must be positive")
    if S < 2:
        raise ValueError("need at least two states")
    rng = child_rng(seed, "birth-death-p")
    p = rng.uniform(p_range[0], p_range[1], size=len(lambdas))
    if S * p_range[1] > 1.0 + 1e-12:
        raise ValueError(f"reward rate S*p can exceed 1 for p_range={p_range}, S={S}")
    class_models = []
    for lam_k, p_k in zip(lambdas, p):
        up = lam_k / (lam_k + mu)
        down = mu / (lam_k + mu)
        kernel = np.zeros((S, 2, S))
        for s in range(S):
            for a in range(2):
                if s + 1 < S:
                    kernel[s, a, s + 1] = up
                else:
                    kernel[s, a, s] += up
                if s - 1 >= 0:
                    kernel[s, a, s - 1] = down
                else:
                    kernel[s, a, s] += down
        rewards = np.zeros((S, 2))
        rewards[:, 1] = (np.arange(S) + 1) * p_k
        class_models.append((kernel, rewards))
    arms = []
    initials = []
    uniform = np.full(S, 1.0 / S)
    for i in range(N):
        kernel, rewards = class_models[i % len(lambdas)]
        arms.append(
            ArmModel(
                arm_id=i,
                transition=kernel,
                mean_reward=rewards,
                action_cost=np.array([0, 1]),
            )
        )
        initials.append(uniform)
    budget = max(1, round(alpha * N))
    return BanditInstance(tuple(arms), budget, T, tuple(initials))


def build_random_multi_action(
    N: int, S: int, A: int, T: int, K: int, seed: int = 0
) -> BanditInstance:
    """Dense random instance: Dirichlet kernel rows, uniform active rewards.

    Action a costs a units.  Fully reproducible from the seed.
    """
    if A < 2:
        raise ValueError("need the passive action plus at least one active action")
    rng = child_rng(seed, "random-multi-action")
    arms = []
    initials = []
    uniform = np.full(S, 1.0 / S)
    for i in range(N):
        kernel = rng.dirichlet(np.ones(S), size=(S, A))
        rewards = rng.uniform(0.0, 1.0, size=(S, A))
        rewards[:, 0] = 0.0
        arms.append(
            ArmModel(
                arm_id=i,
                transition=kernel,
                mean_reward=rewards,
                action_cost=np.arange(A),
            )
        )
        initials.append(uniform)
    return BanditInstance(tuple(arms), K, T, tuple(initials))


def restrict_actions(instance: BanditInstance, num_actions: int) -> BanditInstance:
    """Sub-instance keeping only the first num_actions actions of every arm."""
    if num_actions < 2:
        raise ValueError("need at least the passive action plus one")
    arms = []
    for arm in instance.arms:
        arms.append(
            ArmModel(
                arm_id=arm.arm_id,
                transition=arm.transition[:, :num_actions, :],
                mean_reward=arm.mean_reward[:, :num_actions],
                action_cost=arm.action_cost[:num_actions],
                reward_scale=arm.reward_scale,
                reward_offset=arm.reward_offset,
                raw_reward_matrix=None
                if arm.raw_reward_matrix is None
                else arm.raw_reward_matrix[:, :num_actions],
                deterministic_reward=arm.deterministic_reward,
            )
        )
    return BanditInstance(tuple(arms), instance.budget, instance.horizon, instance.initial_state)


def deadline_state_index(D: int, B: int) -> int:
    """(0,0) is state 0; (D, B) with D in 1..12, B in 1..9 fill the rest."""
    if D == 0 and B == 0:
        return 0
    if not (1 <= D <= DEADLINE_MAX_D and 1 <= B <= DEADLINE_MAX_B):
        raise ValueError(f"({D}, {B}) is not a deadline state")
    return 1 + (D - 1) * DEADLINE_MAX_B + (B - 1)


def deadline_state_of(index: int) -> tuple[int, int]:
    if index == 0:
        return (0, 0)
    index -= 1
    return (index // DEADLINE_MAX_B + 1, index % DEADLINE_MAX_B + 1)


def deadline_raw_reward(D: int, B: int, a: int) -> float:
    """Charging pays 0.5 per unit; an unfinished battery at the deadline
    costs 0.2 * (residual)^2."""
    if B > 0 and D > 1:
        return 0.5 * a
    if B > 0 and D == 1:
        return 0.5 * a - 0.2 * (B - a) ** 2
    return 0.0


def build_deadline(
    N: int = 100,
    M: int = 30,
    T: int = 100,
    seed: int = 0,
    fresh_prob: float = 0.7,
) -> BanditInstance:
    """EV-charging deadline scheduling: N spots, at most M charged per step.

    State (D, B): D steps until the vehicle leaves, B units still needed.
    While D > 1 the state steps to (D-1, B-a); a fully charged vehicle
    frees the spot.  At D <= 1 a fresh vehicle arrives with probability
    fresh_prob (uniform over the 108 nonempty states), else the spot stays
    empty.  Rewards are deterministic and normalized into [0, 1] for
    planning; raw values are kept on the arm.
    """
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    S = DEADLINE_NUM_STATES
    kernel = np.zeros((S, 2, S))
    arrival = np.zeros(S)
    arrival[0] = 1.0 - fresh_prob
    fresh_each = fresh_prob / (S - 1)
    arrival[1:] = fresh_each
    raw = np.zeros((S, 2))
    for idx in range(S):
        D, B = deadline_state_of(idx)
        for a in range(2):
            raw[idx, a] = deadline_raw_reward(D, B, a)
            if D > 1:
                b_next = B - a
                target = 0 if b_next == 0 else deadline_state_index(D - 1, b_next)
                kernel[idx, a, target] = 1.0
            else:
                kernel[idx, a] = arrival
    planning, scale, offset = _normalized(raw)
    arms = []
    initials = []
    start = np.zeros(S)
    start[0] = 1.0  # spots begin empty
    for i in range(N):
        arms.append(
            ArmModel(
                arm_id=i,
                transition=kernel,
                mean_reward=planning,
                action_cost=np.array([0, 1]),
                reward_scale=scale,
                reward_offset=offset,
                raw_reward_matrix=raw,
                deterministic_reward=True,
            )
        )
        initials.append(start)
    return BanditInstance(tuple(arms), M, T, tuple(initials))


def video_state_index(B: int, gamma: int) -> int:
    return B * 4 + gamma


def video_qoe(B: int, gamma: int, R: int, W: int) -> float:
    """Quality minus rebuffering and quality-switch penalties, in expectation."""
    p = VIDEO_SUCCESS_PROB[(R, W)]
    return R * p - (1.0 if B == 0 else 0.0) - abs(R - gamma) * p


def build_video_streaming(
    N: int = 10,
    total_bandwidth: int = 15,
    T: int = 100,
    B_max: int = 10,
    seed: int = 0,
) -> BanditInstance:
    """Wireless video streaming: choose chunk quality and bandwidth per user.

    State (B, gamma): remaining playtime in seconds and the quality of the
    last received chunk.  Ten actions: passive plus (R, W) for qualities
    R in {1,2,3} and bandwidth levels {1, 3, 5} Mbps; the action cost is
    the bandwidth, the shared budget the total bandwidth.  A successful
    transmission keeps the buffer level (refills what played) and records
    quality R; otherwise the buffer drains by one second.  An empty buffer
    is rebuffering: a success then adds one second.
    """
    if B_max < 1:
        raise ValueError("B_max must be >= 1")
    S = (B_max + 1) * 4
    A = len(VIDEO_ACTIONS)
    kernel = np.zeros((S, A, S))
    raw = np.zeros((S, A))
    costs = np.array([VIDEO_MBPS[w] for (_r, w) in VIDEO_ACTIONS])
    for B in range(B_max + 1):
        for gamma in range(4):
            s = video_state_index(B, gamma)
            drained = video_state_index(max(B - 1, 0), gamma)
            for ai, (R, W) in enumerate(VIDEO_ACTIONS):
                raw[s, ai] = video_qoe(B, gamma, R, W)
                if W == 0:
                    kernel[s, ai, drained] = 1.0
                    continue
                p = VIDEO_SUCCESS_PROB[(R, W)]
                b_success = B if B > 0 else min(1, B_max)
                kernel[s, ai, video_state_index(b_success, R)] += p
                kernel[s, ai, drained] += 1.0 - p
    planning, scale, offset = _normalized(raw)
    arms = []
    initials = []
    start = np.zeros(S)
    start[video_state_index(0, 1)] = 1.0  # streaming starts with an empty buffer
    for i in range(N):
        arms.append(
            ArmModel(
                arm_id=i,
                transition=kernel,
                mean_reward=planning,
                action_cost=costs,
                reward_scale=scale,
                reward_offset=offset,
                raw_reward_matrix=raw,
                deterministic_reward=True,
            )
        )
        initials.append(start)
    return BanditInstance(tuple(arms), total_bandwidth, T, tuple(initials))


@dataclass(frozen=True)
class ScenarioSpec:
    """Named scenario plus builder parameters, addressable from the CLI."""

    kind: str
    seed: int
    params: dict = field(default_factory=dict)


SCENARIO_KINDS = ("birth-death", "random-multi-action", "deadline", "video-streaming")


def build_scenario(spec: ScenarioSpec, horizon: int | None = None) -> BanditInstance:
    params = dict(spec.params)
    if horizon is not None:
        params["T"] = horizon
    if spec.kind == "birth-death":
        return build_birth_death(seed=spec.seed, **params)
    if spec.kind == "random-multi-action":
        params.setdefault("N", 50)
        params.setdefault("S", 5)
        params.setdefault("A", 3)
        params.setdefault("T", 100)
        params.setdefault("K", max(1, params["N"] // 10))
        return build_random_multi_action(seed=spec.seed, **params)
    if spec.kind == "deadline":
        return build_deadline(seed=spec.seed, **params)
    if spec.kind == "video-streaming":
        return build_video_streaming(seed=spec.seed, **params)
    raise ValueError(f"unknown scenario kind {spec.kind!r}")
