"""Occupancy-measure linear programming for the relaxed planning problem.

The per-step hard activation budget is relaxed to hold in expectation; the
relaxed problem is an LP whose decision variables are the occupancy
measures mu_n(s, a; t) = P(arm n is in state s and takes action a at time
t).  Its optimum upper-bounds the best achievable expected reward of any
feasible policy, and the optimizer induces a randomized Markov policy by
per-state normalization.

Identical arms can be pooled: the LP is permutation-symmetric across
bit-identical arms, so one set of variables per distinct arm model with a
multiplicity weight solves the same program at a fraction of the size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, TextIO

import numpy as np

from .model import ArmModel, BanditInstance, InvariantViolation, RandomizedPolicy
from . import simplex

# Occupancy entries in [NEGATIVE_DUST, 0) are solver slack and clamped to 0;
# anything below is treated as a solver failure.
NEGATIVE_DUST = -1e-8
# Threshold below which a state is considered unreachable during recovery.
RECOVERY_EPS = 1e-9
FEASIBILITY_ATOL = 1e-6


class LpSolveError(RuntimeError):
    """The LP solver returned something other than an optimal solution."""


@dataclass(frozen=True)
class VarLayout:
    """Column layout of a program over per-class occupancy variables."""

    kind: str  # "relaxed" | "extended" | "stationary-extended"
    shapes: tuple[tuple[int, int], ...]  # per class (S, A)
    horizon: int  # T; 0 for stationary programs
    offsets: tuple[int, ...]
    multiplicity: tuple[int, ...]
    class_of_arm: tuple[int, ...]

    @property
    def num_classes(self) -> int:
        return len(self.shapes)

    def col_relaxed(self, k: int, s: int, a: int, t0: int) -> int:
        S, A = self.shapes[k]
        return self.offsets[k] + (t0 * S + s) * A + a

    def col_extended(self, k: int, s: int, a: int, sp: int, t0: int) -> int:
        S, A = self.shapes[k]
        return self.offsets[k] + (((t0 * S + s) * A + a) * S) + sp

    def col_stationary(self, k: int, s: int, a: int, sp: int) -> int:
        S, A = self.shapes[k]
        return self.offsets[k] + ((s * A + a) * S) + sp


@dataclass
class LpProgram:
    """Sparse-triplet LP over nonnegative variables.

    Equality rows come first in the dump; `objective` is dense.  Column
    semantics are described by `layout`.
    """

    layout: VarLayout
    num_cols: int
    objective: np.ndarray
    eq_rows: np.ndarray
    eq_cols: np.ndarray
    eq_vals: np.ndarray
    eq_rhs: np.ndarray
    ub_rows: np.ndarray
    ub_cols: np.ndarray
    ub_vals: np.ndarray
    ub_rhs: np.ndarray

    @property
    def num_eq_rows(self) -> int:
        return self.eq_rhs.size

    @property
    def num_ub_rows(self) -> int:
        return self.ub_rhs.size

    def eq_matrix(self, sparse: bool):
        return _triplet_matrix(self.eq_rows, self.eq_cols, self.eq_vals, self.num_eq_rows, self.num_cols, sparse)

    def ub_matrix(self, sparse: bool):
        return _triplet_matrix(self.ub_rows, self.ub_cols, self.ub_vals, self.num_ub_rows, self.num_cols, sparse)


def _triplet_matrix(rows, cols, vals, m, n, sparse: bool):
    if m == 0:
        return None
    if sparse:
        from scipy.sparse import coo_matrix

        return coo_matrix((vals, (rows, cols)), shape=(m, n)).tocsr()
    dense = np.zeros((m, n))
    np.add.at(dense, (rows, cols), vals)
    return dense


class _TripletBuilder:
    def __init__(self):
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.rhs: list[float] = []

    def add_row(self, cols: Sequence[int], vals: Sequence[float], rhs: float) -> int:
        r = len(self.rhs)
        self.rows.extend([r] * len(cols))
        self.cols.extend(cols)
        self.vals.extend(vals)
        self.rhs.append(rhs)
        return r

    def arrays(self):
        return (
            np.asarray(self.rows, dtype=np.int64),
            np.asarray(self.cols, dtype=np.int64),
            np.asarray(self.vals, dtype=np.float64),
            np.asarray(self.rhs, dtype=np.float64),
        )


def group_identical_arms(instance: BanditInstance) -> tuple[list[int], list[int], list[int]]:
    """Pool bit-identical arms (model and initial distribution alike).

    Returns (representative arm index per class, multiplicity per class,
    class of each arm).
    """
    keys: dict[bytes, int] = {}
    reps: list[int] = []
    mult: list[int] = []
    class_of_arm: list[int] = []
    for i, (arm, init) in enumerate(zip(instance.arms, instance.initial_state)):
        key = arm.signature() + b"#" + init.tobytes()
        if key in keys:
            k = keys[key]
            mult[k] += 1
        else:
            k = len(reps)
            keys[key] = k
            reps.append(i)
            mult.append(1)
        class_of_arm.append(k)
    return reps, mult, class_of_arm


def _build_relaxed(
    models: Sequence[ArmModel],
    initials: Sequence[np.ndarray],
    multiplicity: Sequence[int],
    class_of_arm: Sequence[int],
    budget: int,
    horizon: int,
) -> LpProgram:
    T = horizon
    shapes = tuple((m.num_states, m.num_actions) for m in models)
    offsets = []
    total = 0
    for S, A in shapes:
        offsets.append(total)
        total += S * A * T
    layout = VarLayout("relaxed", shapes, T, tuple(offsets), tuple(multiplicity), tuple(class_of_arm))

    objective = np.zeros(total)
    for k, m in enumerate(models):
        S, A = shapes[k]
        block = np.tile(m.mean_reward.reshape(1, S, A), (T, 1, 1)) * multiplicity[k]
        objective[offsets[k] : offsets[k] + S * A * T] = block.reshape(-1)

    eq = _TripletBuilder()
    for k, m in enumerate(models):
        S, A = shapes[k]
        # Initial condition: sum_a mu(s, a; 1) = s1(s).
        for s in range(S):
            cols = [layout.col_relaxed(k, s, a, 0) for a in range(A)]
            eq.add_row(cols, [1.0] * A, float(initials[k][s]))
        # Flow: sum_a mu(s, a; t) = sum_{s', a'} mu(s', a'; t-1) P(s', a', s), t = 2..T.
        P = m.transition
        for t0 in range(1, T):
            for s in range(S):
                cols = [layout.col_relaxed(k, s, a, t0) for a in range(A)]
                vals = [1.0] * A
                for sp in range(S):
                    for ap in range(A):
                        p = P[sp, ap, s]
                        if p != 0.0:
                            cols.append(layout.col_relaxed(k, sp, ap, t0 - 1))
                            vals.append(-float(p))
                eq.add_row(cols, vals, 0.0)

    ub = _TripletBuilder()
    for t0 in range(T):
        cols: list[int] = []
        vals: list[float] = []
        for k, m in enumerate(models):
            S, A = shapes[k]
            for a in range(A):
                cost = float(m.action_cost[a]) * multiplicity[k]
                if cost != 0.0:
                    for s in range(S):
                        cols.append(layout.col_relaxed(k, s, a, t0))
                        vals.append(cost)
        ub.add_row(cols, vals, float(budget))

    er, ec, ev, erhs = eq.arrays()
    ur, uc, uv, urhs = ub.arrays()
    return LpProgram(layout, total, objective, er, ec, ev, erhs, ur, uc, uv, urhs)


def build_relaxed_lp(instance: BanditInstance) -> LpProgram:
    """Build the full relaxed LP, one variable block per arm.

    Objective: sum of mu * mean_reward.  T budget inequalities, per-arm flow
    equalities for t = 2..T and initial equalities at t = 1; variables >= 0.
    """
    n = instance.num_arms
    return _build_relaxed(
        instance.arms,
        instance.initial_state,
        [1] * n,
        list(range(n)),
        instance.budget,
        instance.horizon,
    )


def build_relaxed_lp_grouped(instance: BanditInstance) -> LpProgram:
    """Relaxed LP with bit-identical arms pooled into one weighted class each."""
    reps, mult, class_of_arm = group_identical_arms(instance)
    return _build_relaxed(
        [instance.arms[i] for i in reps],
        [instance.initial_state[i] for i in reps],
        mult,
        class_of_arm,
        instance.budget,
        instance.horizon,
    )


def solve_program(program: LpProgram, backend: str = "auto") -> simplex.LpResult:
    """Maximize the program's objective; raises LpSolveError unless optimal.

    Backend "auto" picks the dense Bland simplex for programs it can handle
    and HiGHS otherwise.  Time-indexed extended programs always go to HiGHS:
    their confidence-band rows are degenerate in a way that makes Bland's
    lowest-index entering rule crawl.  The choice depends only on program
    shape, so re-solves are deterministic.
    """
    n = program.num_cols
    m = program.num_eq_rows + program.num_ub_rows
    if backend == "auto":
        dense_ok = m <= simplex.DENSE_MAX_ROWS and m * (n + m) <= simplex.DENSE_MAX_ENTRIES
        backend = "bland" if (dense_ok and program.layout.kind != "extended") else "highs"
    sparse = backend == "highs"
    res = simplex.solve_auto(
        program.objective,
        program.eq_matrix(sparse),
        program.eq_rhs,
        program.ub_matrix(sparse),
        program.ub_rhs,
        maximize=True,
        backend=backend,
    )
    if res.status == simplex.STATUS_INFEASIBLE:
        raise LpSolveError("LP reported infeasible; occupancy programs always admit the all-passive measure")
    if res.status == simplex.STATUS_UNBOUNDED:
        raise LpSolveError("LP reported unbounded; the objective is bounded by N*T")
    return res


@dataclass(frozen=True)
class OccupancySolution:
    """Per-arm occupancy measures mu[n][s, a, t] plus the LP optimum."""

    mu: tuple[np.ndarray, ...]
    objective: float

    def check(self, instance: BanditInstance, atol: float = FEASIBILITY_ATOL) -> None:
        """Assert the solution's probability, flow and budget invariants."""
        T = instance.horizon
        budget_use = np.zeros(T)
        for arm, init, mu in zip(instance.arms, instance.initial_state, self.mu):
            if np.any(mu < 0):
                raise InvariantViolation("negative occupancy after clamping")
            mass = mu.sum(axis=(0, 1))
            if np.any(np.abs(mass - 1.0) > atol):
                raise InvariantViolation(f"arm {arm.arm_id}: occupancy mass differs from 1")
            init_res = np.abs(mu[:, :, 0].sum(axis=1) - init)
            if np.any(init_res > atol):
                raise InvariantViolation(f"arm {arm.arm_id}: initial rows violated")
            P = arm.transition
            for t in range(1, T):
                inflow = np.einsum("ba,bas->s", mu[:, :, t - 1], P)
                res = np.abs(mu[:, :, t].sum(axis=1) - inflow)
                if np.any(res > atol):
                    raise InvariantViolation(f"arm {arm.arm_id}: flow rows violated at t={t + 1}")
            budget_use += np.einsum("sat,a->t", mu, arm.action_cost.astype(np.float64))
        if np.any(budget_use > instance.budget + atol):
            raise InvariantViolation("expected budget rows violated")


def extract_occupancy(program: LpProgram, x: np.ndarray, objective: float) -> OccupancySolution:
    """Read per-arm occupancy tensors out of a relaxed-program solution."""
    if program.layout.kind != "relaxed":
        raise ValueError("extract_occupancy expects a relaxed program")
    if float(x.min(initial=0.0)) < NEGATIVE_DUST:
        raise InvariantViolation(f"solver returned occupancy below {NEGATIVE_DUST}: {x.min():.3e}")
    x = np.clip(x, 0.0, None)
    layout = program.layout
    T = layout.horizon
    per_class = []
    for k, (S, A) in enumerate(layout.shapes):
        block = x[layout.offsets[k] : layout.offsets[k] + S * A * T]
        per_class.append(block.reshape(T, S, A).transpose(1, 2, 0).copy())
    mu = tuple(per_class[k] for k in layout.class_of_arm)
    return OccupancySolution(mu=mu, objective=float(objective))


def solve_lp(program: LpProgram, backend: str = "auto") -> OccupancySolution:
    """Solve a relaxed program and return its occupancy solution."""
    res = solve_program(program, backend)
    return extract_occupancy(program, res.x, res.objective)


def solve_relaxed(
    instance: BanditInstance, *, backend: str = "auto", decompose: bool = True
) -> OccupancySolution:
    """Build and solve the relaxed LP, pooling identical arms when allowed."""
    program = build_relaxed_lp_grouped(instance) if decompose else build_relaxed_lp(instance)
    solution = solve_lp(program, backend)
    solution.check(instance)
    return solution


def relaxed_upper_bound(instance: BanditInstance, *, backend: str = "auto") -> float:
    """LP optimum of the relaxed problem: an upper bound for any feasible policy."""
    return solve_relaxed(instance, backend=backend).objective


def recover_policy(solution: OccupancySolution, eps: float = RECOVERY_EPS) -> RandomizedPolicy:
    """Normalize occupancy into a randomized Markov policy.

    chi_n(s, a; t) = mu_n(s, a; t) / sum_a' mu_n(s, a'; t).  States whose
    occupancy mass at time t falls below eps are unreachable there and map
    to a passive point mass.
    """
    chis = []
    for mu in solution.mu:
        S, A, T = mu.shape
        denom = mu.sum(axis=1, keepdims=True)
        chi = np.zeros_like(mu)
        reachable = denom[:, 0, :] > eps
        safe = np.where(denom > eps, denom, 1.0)
        ratio = mu / safe
        chi[:] = np.where(reachable[:, None, :], ratio, 0.0)
        chi[:, 0, :] = np.where(reachable, chi[:, 0, :], 1.0)
        chis.append(chi)
    return RandomizedPolicy(chi=tuple(chis))


def dump_triplets(program: LpProgram, stream: TextIO) -> None:
    """Plain-text sparse dump for cross-checking against external solvers.

    Format: `rows cols` header; a row-sense line of 'E'/'L' characters;
    `rhs` and `obj` lines (dense, space-separated); then one `row col value`
    line per nonzero.  Equality rows come first, so row i >= num_eq_rows is
    an upper-bound row.
    """
    m = program.num_eq_rows + program.num_ub_rows
    stream.write(f"{m} {program.num_cols}\n")
    stream.write("E" * program.num_eq_rows + "L" * program.num_ub_rows + "\n")
    rhs = np.concatenate([program.eq_rhs, program.ub_rhs])
    stream.write("rhs " + " ".join(f"{v:.17g}" for v in rhs) + "\n")
    stream.write("obj " + " ".join(f"{v:.17g}" for v in program.objective) + "\n")
    for r, c, v in zip(program.eq_rows, program.eq_cols, program.eq_vals):
        stream.write(f"{r} {c} {v:.17g}\n")
    for r, c, v in zip(program.ub_rows, program.ub_cols, program.ub_vals):
        stream.write(f"{int(r) + program.num_eq_rows} {c} {v:.17g}\n")
