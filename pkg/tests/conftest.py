"""Shared fixtures and independent oracles for the test suite.

The oracles here are deliberately written from scratch (plain loops, no
shared code paths with the package) so that LP/policy results can be
checked against something that cannot fail the same way.
"""

from __future__ import annotations

import numpy as np
import pytest

from rmabkit.model import ArmModel, BanditInstance
from rmabkit.rng import child_rng


def make_arm(arm_id, kernel, rewards, costs=None, **kw) -> ArmModel:
    kernel = np.asarray(kernel, dtype=float)
    A = kernel.shape[1]
    if costs is None:
        costs = np.arange(A)
    return ArmModel(
        arm_id=arm_id,
        transition=kernel,
        mean_reward=np.asarray(rewards, dtype=float),
        action_cost=np.asarray(costs),
        **kw,
    )


def random_instance(seed, N=2, S=3, A=2, T=3, K=1) -> BanditInstance:
    """Random dense instance built outside the package's scenario code."""
    rng = np.random.default_rng(seed)
    arms = []
    initials = []
    for n in range(N):
        kernel = rng.dirichlet(np.ones(S), size=(S, A))
        rewards = rng.uniform(0.0, 1.0, size=(S, A))
        rewards[:, 0] = 0.0
        arms.append(make_arm(n, kernel, rewards))
        init = rng.dirichlet(np.ones(S))
        initials.append(init)
    return BanditInstance(tuple(arms), K, T, tuple(initials))


def single_arm_dp(arm: ArmModel, initial: np.ndarray, T: int) -> float:
    """Budget-free finite-horizon DP for one arm, written longhand."""
    S, A = arm.num_states, arm.num_actions
    V = np.zeros(S)
    for _ in range(T):
        newV = np.full(S, -np.inf)
        for s in range(S):
            for a in range(A):
                q = arm.mean_reward[s, a]
                for sp in range(S):
                    q += arm.transition[s, a, sp] * V[sp]
                newV[s] = max(newV[s], q)
        V = newV
    return float(np.dot(initial, V))


def dominant_arm_instance(seed=0, T=100) -> BanditInstance:
    """Two-class instance whose optimal play is robust to model error.

    Kernels are action-independent and one class's active rewards dominate
    the other's by a wide margin, so the exact joint optimum, the relaxed
    optimum and the learned index policy all just activate the strong arm.
    Used where an execution-phase gap would drown the quantity under test.
    """
    rng = child_rng(seed, "dominant-arm-fixture")
    S = 4
    arms = []
    for n, (lo, hi) in enumerate([(0.70, 0.95), (0.05, 0.30)]):
        row = rng.dirichlet(np.ones(S), size=S)
        kernel = np.stack([row, row], axis=1)
        rewards = np.zeros((S, 2))
        rewards[:, 1] = rng.uniform(lo, hi, size=S)
        arms.append(make_arm(n, kernel, rewards))
    init = (np.full(S, 0.25), np.full(S, 0.25))
    return BanditInstance(tuple(arms), budget=1, horizon=T, initial_state=init)


@pytest.fixture
def tiny_instance():
    return random_instance(seed=7, N=2, S=3, A=2, T=3, K=1)
