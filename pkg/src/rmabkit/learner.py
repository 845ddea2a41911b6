"""Generative-model learning of the index policy.

The algorithm has two phases.  Planning: every (arm, state, action) triple
is sampled the same number of times from a one-step simulator, giving
empirical kernels and rewards plus a Hoeffding confidence radius; an
optimistic plan is then computed by a single LP over state-action-state
occupancy variables whose ratio constraints keep the implied kernel inside
the confidence band.  Execution: the recovered randomized policy runs
through the budgeted activation rule for the remaining steps.

The planning LP is time-indexed for short execution horizons.  For long
ones it is solved in stationary (average-reward) form: the finite-horizon
program would grow linearly with the horizon while its middle section
converges to the stationary solution anyway, and the regret benchmark is
itself an average-reward quantity.

Learning requires all arms to share one (S, A) shape; the confidence
radius is a single global constant by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lp, policy as policy_mod, simulate
from .lp import LpProgram, VarLayout, _TripletBuilder
from .model import BanditInstance, InvariantViolation, RandomizedPolicy
from .rng import child_rng


class ConfigError(ValueError):
    """A run was configured outside its valid parameter range."""


def hoeffding_radius(S: int, A: int, N: int, lam: int, eta: float) -> float:
    """Confidence radius sqrt(log(S*A*N*lam/eta) / (2*lam))."""
    if not (0.0 < eta < 1.0):
        raise ConfigError(f"eta must lie in (0, 1), got {eta}")
    if lam < 1:
        raise ConfigError(f"samples per pair must be >= 1, got {lam}")
    return math.sqrt(math.log(S * A * N * lam / eta) / (2.0 * lam))


@dataclass(frozen=True)
class EmpiricalModel:
    """Empirical kernel/reward estimates with one shared confidence radius.

    counts[n, s, a, s'] are transition-tuple tallies (None for injected
    models); p_hat rows are counts / samples_per_pair; delta is identical
    across (n, s, a) because it depends only on global constants.
    """

    p_hat: np.ndarray
    r_hat: np.ndarray
    delta: float
    eta: float
    samples_per_pair: int
    planning_steps: int
    counts: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.counts is not None:
            row_tot = self.counts.sum(axis=3)
            if np.any(row_tot != self.samples_per_pair):
                raise InvariantViolation("every (arm, state, action) must be sampled equally often")
        sums = self.p_hat.sum(axis=3)
        if np.any(np.abs(sums - 1.0) > 1e-12):
            raise InvariantViolation("empirical kernel rows must sum to 1")

    @property
    def num_arms(self) -> int:
        return self.p_hat.shape[0]

    @property
    def num_states(self) -> int:
        return self.p_hat.shape[1]

    @property
    def num_actions(self) -> int:
        return self.p_hat.shape[2]

    def optimistic_reward(self) -> np.ndarray:
        # Rewards are known to be <= 1, so clamping only tightens the bonus.
        return np.minimum(self.r_hat + self.delta, 1.0)


def _require_homogeneous(instance: BanditInstance) -> tuple[int, int]:
    if not instance.homogeneous_shape:
        raise ConfigError("the learner requires all arms to share one (S, A) shape")
    arm = instance.arms[0]
    return arm.num_states, arm.num_actions


def generative_sample(
    instance: BanditInstance, lambda_t: int, rng: np.random.Generator, eta: float = 0.1
) -> EmpiricalModel:
    """Sample every (arm, state, action) exactly lambda_t times.

    Sampling all arms in parallel, covering the S*A pairs costs
    S*A*lambda_t planning time slots, which is what planning_steps records.
    """
    S, A = _require_homogeneous(instance)
    N = instance.num_arms
    if lambda_t < 1:
        raise ConfigError("lambda_t must be >= 1")
    counts = np.zeros((N, S, A, S), dtype=np.int64)
    r_hat = np.zeros((N, S, A))
    for n, arm in enumerate(instance.arms):
        for s in range(S):
            for a in range(A):
                counts[n, s, a] = rng.multinomial(lambda_t, arm.transition[s, a])
                mean = float(arm.mean_reward[s, a])
                if arm.deterministic_reward:
                    r_hat[n, s, a] = mean
                else:
                    r_hat[n, s, a] = rng.binomial(lambda_t, mean) / lambda_t
    return EmpiricalModel(
        p_hat=counts / lambda_t,
        r_hat=r_hat,
        delta=hoeffding_radius(S, A, N, lambda_t, eta),
        eta=eta,
        samples_per_pair=lambda_t,
        planning_steps=S * A * lambda_t,
        counts=counts,
    )


def model_from_truth(instance: BanditInstance, eta: float = 0.1) -> EmpiricalModel:
    """Known-model injection: exact kernel and rewards, zero radius."""
    _require_homogeneous(instance)
    return EmpiricalModel(
        p_hat=np.stack([a.transition for a in instance.arms]),
        r_hat=np.stack([a.mean_reward for a in instance.arms]),
        delta=0.0,
        eta=eta,
        samples_per_pair=0,
        planning_steps=0,
        counts=None,
    )


def model_in_band(instance: BanditInstance, model: EmpiricalModel) -> bool:
    """Whether the true kernel and rewards lie inside the confidence band."""
    for n, arm in enumerate(instance.arms):
        if np.any(np.abs(arm.transition - model.p_hat[n]) > model.delta):
            return False
        if np.any(np.abs(arm.mean_reward - model.r_hat[n]) > model.delta):
            return False
    return True


def _band_rows(builder: _TripletBuilder, layout: VarLayout, col_fn, model: EmpiricalModel) -> None:
    """Linearized confidence-band rows for every (n, s, a, s') of one time slice.

    Upper: z(s,a,s') - ub * sum_y z(s,a,y) <= 0; lower uses lb with signs
    flipped.  Band endpoints are clamped to [0, 1].
    """
    N, S, A = model.num_arms, model.num_states, model.num_actions
    for n in range(N):
        for s in range(S):
            for a in range(A):
                row_cols = [col_fn(n, s, a, y) for y in range(S)]
                for sp in range(S):
                    ub = min(1.0, float(model.p_hat[n, s, a, sp]) + model.delta)
                    lb = max(0.0, float(model.p_hat[n, s, a, sp]) - model.delta)
                    builder.add_row(row_cols + [row_cols[sp]], [-ub] * S + [1.0], 0.0)
                    builder.add_row(row_cols + [row_cols[sp]], [lb] * S + [-1.0], 0.0)


def build_extended_lp(model: EmpiricalModel, instance: BanditInstance, horizon: int) -> LpProgram:
    """Optimistic time-indexed LP over z_n(s, a, s'; t).

    Objective uses r_hat + delta (clamped to 1).  Budget, flow and initial
    constraints mirror the relaxed LP; the two ratio constraints per
    (n, s, a, s', t) are the standard linearization obtained by multiplying
    through by sum_y z(s, a, y; t) >= 0.
    """
    S, A = _require_homogeneous(instance)
    N = instance.num_arms
    T = int(horizon)
    if T < 1:
        raise ConfigError("extended LP horizon must be >= 1")
    block = S * A * S * T
    layout = VarLayout(
        "extended",
        tuple((S, A) for _ in range(N)),
        T,
        tuple(n * block for n in range(N)),
        tuple([1] * N),
        tuple(range(N)),
    )
    total = N * block
    r_tilde = model.optimistic_reward()
    objective = np.zeros(total)
    for n in range(N):
        per_t = np.repeat(r_tilde[n].reshape(S, A, 1), S, axis=2)
        objective[layout.offsets[n] : layout.offsets[n] + block] = np.tile(
            per_t.reshape(1, S, A, S), (T, 1, 1, 1)
        ).reshape(-1)

    eq = _TripletBuilder()
    for n in range(N):
        for s in range(S):
            cols = [layout.col_extended(n, s, a, sp, 0) for a in range(A) for sp in range(S)]
            eq.add_row(cols, [1.0] * len(cols), float(instance.initial_state[n][s]))
        for t0 in range(1, T):
            for s in range(S):
                cols = [layout.col_extended(n, s, a, sp, t0) for a in range(A) for sp in range(S)]
                vals = [1.0] * len(cols)
                cols += [layout.col_extended(n, sp, ap, s, t0 - 1) for sp in range(S) for ap in range(A)]
                vals += [-1.0] * (S * A)
                eq.add_row(cols, vals, 0.0)

    ub = _TripletBuilder()
    costs = instance.arms[0].action_cost
    for t0 in range(T):
        cols, vals = [], []
        for n in range(N):
            for a in range(A):
                c = float(costs[a])
                if c != 0.0:
                    for s in range(S):
                        for sp in range(S):
                            cols.append(layout.col_extended(n, s, a, sp, t0))
                            vals.append(c)
        ub.add_row(cols, vals, float(instance.budget))
    for t0 in range(T):
        _band_rows(ub, layout, lambda n, s, a, y, _t=t0: layout.col_extended(n, s, a, y, _t), model)

    er, ec, ev, erhs = eq.arrays()
    ur, uc, uv, urhs = ub.arrays()
    return LpProgram(layout, total, objective, er, ec, ev, erhs, ur, uc, uv, urhs)


def build_stationary_extended_lp(model: EmpiricalModel, instance: BanditInstance) -> LpProgram:
    """Average-reward variant: one z_n(s, a, s') block per arm.

    Flow becomes stationary balance, the initial condition becomes a unit
    normalization per arm, and the objective is the per-step reward rate.
    """
    S, A = _require_homogeneous(instance)
    N = instance.num_arms
    block = S * A * S
    layout = VarLayout(
        "stationary-extended",
        tuple((S, A) for _ in range(N)),
        0,
        tuple(n * block for n in range(N)),
        tuple([1] * N),
        tuple(range(N)),
    )
    total = N * block
    r_tilde = model.optimistic_reward()
    objective = np.zeros(total)
    for n in range(N):
        objective[layout.offsets[n] : layout.offsets[n] + block] = np.repeat(
            r_tilde[n].reshape(S, A, 1), S, axis=2
        ).reshape(-1)

    eq = _TripletBuilder()
    for n in range(N):
        for s in range(S):
            cols = [layout.col_stationary(n, s, a, sp) for a in range(A) for sp in range(S)]
            vals = [1.0] * len(cols)
            cols += [layout.col_stationary(n, sp, ap, s) for sp in range(S) for ap in range(A)]
            vals += [-1.0] * (S * A)
            eq.add_row(cols, vals, 0.0)
        all_cols = list(range(layout.offsets[n], layout.offsets[n] + block))
        eq.add_row(all_cols, [1.0] * block, 1.0)

    ub = _TripletBuilder()
    costs = instance.arms[0].action_cost
    cols, vals = [], []
    for n in range(N):
        for a in range(A):
            c = float(costs[a])
            if c != 0.0:
                for s in range(S):
                    for sp in range(S):
                        cols.append(layout.col_stationary(n, s, a, sp))
                        vals.append(c)
    ub.add_row(cols, vals, float(instance.budget))
    _band_rows(ub, layout, layout.col_stationary, model)

    er, ec, ev, erhs = eq.arrays()
    ur, uc, uv, urhs = ub.arrays()
    return LpProgram(layout, total, objective, er, ec, ev, erhs, ur, uc, uv, urhs)


@dataclass(frozen=True)
class ExtendedOccupancy:
    """Solution of an extended LP: z tensors, recovered chi and its value."""

    z: np.ndarray  # (N, S, A, S, T) or (N, S, A, S) for stationary programs
    chi: np.ndarray  # (N, S, A, T) or (N, S, A)
    objective: float
    stationary: bool

    def check(self, model: EmpiricalModel, instance: BanditInstance, atol: float = 1e-6) -> None:
        z = self.z if not self.stationary else self.z[..., None]
        if np.any(z < 0):
            raise InvariantViolation("negative extended occupancy")
        mass = z.sum(axis=(1, 2, 3))
        if np.any(np.abs(mass - 1.0) > atol):
            raise InvariantViolation("extended occupancy mass differs from 1")
        costs = instance.arms[0].action_cost.astype(np.float64)
        budget_use = np.einsum("nsayt,a->t", z, costs)
        if np.any(budget_use > instance.budget + atol):
            raise InvariantViolation("extended budget rows violated")
        denom = z.sum(axis=3)  # (N, S, A, T)
        ratio = z / np.where(denom[:, :, :, None, :] > lp.RECOVERY_EPS, denom[:, :, :, None, :], 1.0)
        visited = denom[:, :, :, None, :] > lp.RECOVERY_EPS
        ub = np.minimum(1.0, model.p_hat + model.delta)[..., None]
        lb = np.maximum(0.0, model.p_hat - model.delta)[..., None]
        if np.any(visited & ((ratio > ub + atol) | (ratio < lb - atol))):
            raise InvariantViolation("implied kernel escapes the confidence band")
        row_tot = ratio.sum(axis=3)
        row_visited = denom > lp.RECOVERY_EPS
        if np.any(row_visited & (np.abs(row_tot - 1.0) > atol)):
            raise InvariantViolation("implied kernel rows do not normalize")


def extract_extended(program: LpProgram, x: np.ndarray, objective: float) -> ExtendedOccupancy:
    layout = program.layout
    stationary = layout.kind == "stationary-extended"
    if not stationary and layout.kind != "extended":
        raise ValueError("extract_extended expects an extended program")
    if float(x.min(initial=0.0)) < lp.NEGATIVE_DUST:
        raise InvariantViolation(f"solver returned occupancy below {lp.NEGATIVE_DUST}: {x.min():.3e}")
    x = np.clip(x, 0.0, None)
    N = layout.num_classes
    S, A = layout.shapes[0]
    if stationary:
        z = x.reshape(N, S, A, S)
        chi = _chi_from_z(z[..., None])[..., 0]
    else:
        T = layout.horizon
        z = x.reshape(N, T, S, A, S).transpose(0, 2, 3, 4, 1)
        chi = _chi_from_z(z)
    return ExtendedOccupancy(z=z, chi=chi, objective=float(objective), stationary=stationary)


def _chi_from_z(z: np.ndarray) -> np.ndarray:
    """chi(s, a; t) = sum_s' z / sum_{b, s'} z with passive fallback."""
    marg = z.sum(axis=3)  # (N, S, A, T)
    denom = marg.sum(axis=2, keepdims=True)  # (N, S, 1, T)
    reachable = denom > lp.RECOVERY_EPS
    chi = np.where(reachable, marg / np.where(reachable, denom, 1.0), 0.0)
    passive = np.broadcast_to(~reachable[:, :, 0, :], chi[:, :, 0, :].shape)
    chi[:, :, 0, :] = np.where(passive, 1.0, chi[:, :, 0, :])
    return chi


def recover_learned_policy(ext: ExtendedOccupancy) -> RandomizedPolicy:
    """Per-arm randomized policy from the extended occupancy."""
    chi = ext.chi if not ext.stationary else ext.chi[..., None]
    return RandomizedPolicy(chi=tuple(chi[n] for n in range(chi.shape[0])))


def min_learning_horizon(S: int, A: int) -> int:
    """Smallest T for which the sampling phase S*A*ceil(sqrt(T)) fits inside T."""
    t = 1
    while S * A * math.isqrt(t - 1) + S * A >= t:  # S*A*ceil(sqrt(t)) >= t
        t += 1
        if t > 10**9:
            raise RuntimeError("no feasible learning horizon found")
    return t


def _ceil_sqrt(t: int) -> int:
    r = math.isqrt(t)
    return r if r * r == t else r + 1


@dataclass
class LearnResult:
    policy: RandomizedPolicy
    record: object  # RunRecord of the execution phase
    regret: np.ndarray  # cumulative regret at every t in range(T)
    meta: dict


# Execution horizons above this use the stationary planning LP.
STATIONARY_THRESHOLD = 192


def rmab_ucb(
    instance: BanditInstance,
    total_horizon: int,
    eta: float,
    seed: int,
    index: int = 0,
    *,
    lambda_override: Optional[int] = None,
    injected_model: Optional[EmpiricalModel] = None,
    oracle_rate: Optional[float] = None,
    oracle_kind: str = "unspecified",
    stationary_threshold: int = STATIONARY_THRESHOLD,
    backend: str = "auto",
) -> LearnResult:
    """One learning trial: sample, plan optimistically, execute, account regret.

    With lambda = ceil(sqrt(T)) the sampling phase occupies T1 = S*A*lambda
    slots which earn zero reward in the regret series (worst case); the
    remaining T2 steps execute the learned index policy on the true system.
    Passing injected_model skips sampling entirely (T1 = 0).
    """
    S, A = _require_homogeneous(instance)
    T = int(total_horizon)
    if injected_model is not None:
        model = injected_model
        lam = model.samples_per_pair
        t1 = model.planning_steps
    else:
        lam = lambda_override if lambda_override is not None else _ceil_sqrt(T)
        t1 = S * A * lam
        if t1 >= T:
            raise ConfigError(
                f"horizon {T} too small for the sampling phase (S*A*ceil(sqrt(T)) = {t1}); "
                f"minimum horizon is {min_learning_horizon(S, A)}"
            )
        model = generative_sample(instance, lam, child_rng(seed, "ucb-sample", index), eta)
    t2 = T - t1

    if t2 <= stationary_threshold:
        program = build_extended_lp(model, instance, t2)
        planning = "extended-lp"
    else:
        program = build_stationary_extended_lp(model, instance)
        planning = "stationary-extended-lp"
    res = lp.solve_program(program, backend)
    ext = extract_extended(program, res.x, res.objective)
    ext.check(model, instance)
    learned = recover_learned_policy(ext)
    learned = policy_mod.attach_indices(
        learned, [model.optimistic_reward()[n] for n in range(instance.num_arms)]
    )

    executor = policy_mod.OmrExecutor(instance, learned)
    record = simulate.run_single(
        instance, executor, child_rng(seed, "ucb-exec", index), horizon=t2, seed_label=index
    )

    cum = np.zeros(T)
    cum[t1:] = np.cumsum(record.rewards)
    regret = None
    if oracle_rate is not None:
        regret = oracle_rate * np.arange(1, T + 1) - cum
    meta = {
        "lambda": lam,
        "t1": t1,
        "t2": t2,
        "delta": model.delta,
        "eta": eta,
        "planning": planning,
        "oracle_rate": oracle_rate,
        "oracle_kind": oracle_kind,
        "in_band": model_in_band(instance, model),
    }
    return LearnResult(policy=learned, record=record, regret=regret, meta=meta)
