"""Lower-obstacle quadratic programs: solvers, oracle, and certification.

The problem is min over {v >= psi} of 0.5*v.(A v) - b.v with A a symmetric
positive definite M-matrix (positive diagonal, nonpositive off-diagonal).
Its unique minimiser u is characterised componentwise by

    u >= psi,    A u >= b,    (A u - b)_i (u - psi)_i = 0,

and additionally satisfies the two-sided bound b <= A u <= max(b, A psi).
All residuals are reported in the infinity norm and compared against
tolerances scaled by max(1, |b|_inf).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .reporting import Report

__all__ = [
    "ObstacleProblem",
    "ObstacleSolution",
    "KKTResiduals",
    "PreconditionError",
    "ConvergenceError",
    "ProblemTooLargeError",
    "kkt_residuals",
    "solve_psor",
    "solve_pdas",
    "enumerate_oracle",
    "verify_conditions",
    "check_comparison",
    "check_minorant",
]

ORACLE_MAX_DIM = 15


class PreconditionError(ValueError):
    """A documented precondition failed; nothing was solved."""


class ConvergenceError(RuntimeError):
    """Solver stopped without meeting the tolerance; carries residuals."""

    def __init__(self, message: str, residuals: "KKTResiduals | None" = None):
        super().__init__(message)
        self.residuals = residuals


class ProblemTooLargeError(ValueError):
    """The enumeration oracle refuses problems beyond its dimension cap."""


class ObstacleProblem:
    """Problem data (A, b, psi) for the lower-obstacle quadratic program.

    `psi_image` may be passed when the caller already holds A @ psi (for
    example from a previous solve against the same matrix); otherwise it is
    computed on first use.
    """

    def __init__(self, a, b, psi, psi_image=None):
        self.a = a if isinstance(a, sp.csr_matrix) else sp.csr_matrix(a)
        self.b = np.asarray(b, dtype=float)
        self.psi = np.asarray(psi, dtype=float)
        n = self.b.shape[0]
        if self.a.shape != (n, n):
            raise PreconditionError(
                f"matrix shape {self.a.shape} does not match load length {n}"
            )
        if self.psi.shape != (n,):
            raise PreconditionError(
                f"obstacle shape {self.psi.shape} does not match load length {n}"
            )
        self._psi_image = None if psi_image is None else np.asarray(
            psi_image, dtype=float)
        self._scale = None

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @property
    def psi_image(self) -> np.ndarray:
        """A @ psi, the load that would make the obstacle unconstrained-optimal."""
        if self._psi_image is None:
            self._psi_image = self.a @ self.psi
        return self._psi_image

    @property
    def scale(self) -> float:
        """Residual scale max(1, |b|_inf)."""
        if self._scale is None:
            self._scale = max(1.0, float(np.abs(self.b).max(initial=0.0)))
        return self._scale

    def dual(self, u) -> np.ndarray:
        """Multiplier estimate A u - b."""
        return self.a @ np.asarray(u, dtype=float) - self.b

    def quadratic_value(self, u) -> float:
        """Objective 0.5*u.(A u) - b.u."""
        u = np.asarray(u, dtype=float)
        return 0.5 * float(np.dot(u, self.a @ u)) - float(np.dot(self.b, u))


@dataclass(frozen=True)
class KKTResiduals:
    """Infinity-norm optimality residuals of a candidate minimiser.

    feasibility      max(psi - u)_+           (obstacle violated)
    dual             max(b - A u)_+           (lower bound violated)
    complementarity  max |(A u - b)_i (u - psi)_i|
    upper_bound      max(A u - max(b, A psi))_+  (two-sided bound violated)

    All four are nonnegative by construction.  `scale` is max(1, |b|_inf);
    `passes(tol)` compares the worst residual against tol * scale.
    """

    feasibility: float
    dual: float
    complementarity: float
    upper_bound: float
    scale: float

    @property
    def worst(self) -> float:
        return max(self.feasibility, self.dual, self.complementarity, self.upper_bound)

    def passes(self, tol: float) -> bool:
        return self.worst <= tol * self.scale

    def to_dict(self) -> dict:
        return {
            "feasibility": self.feasibility,
            "dual": self.dual,
            "complementarity": self.complementarity,
            "upper_bound": self.upper_bound,
            "scale": self.scale,
        }


@dataclass(eq=False)
class ObstacleSolution:
    """Converged minimiser with diagnostics.

    `active_set[i]` flags contact (u_i within feasibility tolerance of
    psi_i).  At exactly degenerate contact (multiplier and gap both zero)
    either flag is acceptable.  `oracle_candidates` is only set by
    enumerate_oracle: the number of active sets that passed the optimality
    test.  `load_image` is A @ u as evaluated for the final residuals,
    reusable as `psi_image` for a follow-up problem with u as obstacle.
    """

    u: np.ndarray
    active_set: np.ndarray
    iterations: int
    kkt: KKTResiduals
    oracle_candidates: int | None = None
    load_image: np.ndarray | None = None


def _kkt_from_dual(problem: ObstacleProblem, u: np.ndarray, lam: np.ndarray) -> KKTResiduals:
    gap = u - problem.psi
    feasibility = max(0.0, -float(gap.min(initial=0.0)))
    dual = max(0.0, -float(lam.min(initial=0.0)))
    complementarity = float(np.abs(lam * gap).max(initial=0.0))
    cap = np.maximum(problem.psi_image - problem.b, 0.0)
    upper = max(0.0, float((lam - cap).max(initial=0.0)))
    return KKTResiduals(feasibility, dual, complementarity, upper, problem.scale)


def kkt_residuals(problem: ObstacleProblem, u) -> KKTResiduals:
    """Optimality residuals of `u` for `problem`, recomputed from scratch."""
    u = np.asarray(u, dtype=float)
    return _kkt_from_dual(problem, u, problem.dual(u))


def _validate_tol(tol: float, max_iter: int | None = None) -> None:
    if not tol > 0.0:
        raise PreconditionError(f"tol must be positive, got {tol!r}")
    if max_iter is not None and max_iter < 1:
        raise PreconditionError(f"max_iter must be >= 1, got {max_iter!r}")


def solve_psor(problem: ObstacleProblem, omega: float = 1.5, tol: float = 1e-10,
               max_iter: int = 50_000, start=None) -> ObstacleSolution:
    """Projected SOR with fixed lexicographic sweep order.

    Each sweep updates the nodes in index order with relaxation factor
    `omega` in (0, 2) and projects onto {v >= psi} immediately, so every
    iterate is feasible.  Convergence is declared when all optimality
    residuals drop below tol * max(1, |b|_inf).
    """
    if not (0.0 < omega < 2.0):
        raise PreconditionError(f"omega must lie in (0, 2), got {omega!r}")
    _validate_tol(tol, max_iter)
    a = problem.a
    b = problem.b
    psi = problem.psi
    diag = a.diagonal()
    if (diag <= 0.0).any():
        raise PreconditionError("matrix diagonal must be positive")
    if start is None:
        u = psi.copy()
    else:
        u = np.maximum(problem.psi, np.asarray(start, dtype=float))

    indptr, indices, data = a.indptr, a.indices, a.data
    n = problem.n
    threshold = tol * problem.scale
    for sweep in range(1, max_iter + 1):
        for i in range(n):
            s, e = indptr[i], indptr[i + 1]
            r = b[i] - np.dot(data[s:e], u[indices[s:e]])
            v = u[i] + omega * r / diag[i]
            p = psi[i]
            u[i] = v if v > p else p
        au = a @ u
        kkt = _kkt_from_dual(problem, u, au - b)
        if kkt.worst <= threshold:
            active = (u - psi) <= threshold
            return ObstacleSolution(u=u, active_set=active, iterations=sweep,
                                    kkt=kkt, load_image=au)
    raise ConvergenceError(
        f"projected SOR did not converge in {max_iter} sweeps "
        f"(worst residual {kkt.worst:.3e}, threshold {threshold:.3e})",
        residuals=kkt,
    )


def _reduced_solve(problem: ObstacleProblem, active: np.ndarray,
                   factor_cache: dict | None) -> np.ndarray:
    """Solve the complementarity system for a fixed active set.

    u = psi on the active set; A_II u_I = b_I - A_IA psi_A on the rest,
    via a sparse LU factorisation.  `factor_cache` keyed by the active-set
    bitmask reuses factorisations across calls with the same matrix.
    """
    if active.all():
        return problem.psi.copy()
    key = active.tobytes()
    entry = factor_cache.get(key) if factor_cache is not None else None
    if entry is None:
        inactive_idx = np.flatnonzero(~active)
        sub = sp.csc_matrix(problem.a[inactive_idx][:, inactive_idx])
        # the operators here are symmetric, so a symmetric fill-reducing
        # ordering gives markedly sparser factors than the default
        lu = spla.splu(sub, permc_spec="MMD_AT_PLUS_A",
                       options={"SymmetricMode": True})
        active_idx = np.flatnonzero(active)
        coupling = problem.a[inactive_idx][:, active_idx].tocsr() if active_idx.size else None
        entry = (lu, inactive_idx, active_idx, coupling)
        if factor_cache is not None:
            factor_cache[key] = entry
    lu, inactive_idx, active_idx, coupling = entry
    if active_idx.size == 0:
        return lu.solve(problem.b)
    u = problem.psi.copy()
    rhs = problem.b[inactive_idx] - coupling @ problem.psi[active_idx]
    u[inactive_idx] = lu.solve(rhs)
    return u


def solve_pdas(problem: ObstacleProblem, tol: float = 1e-10, max_iter: int = 100,
               start=None, initial_active=None,
               factor_cache: dict | None = None) -> ObstacleSolution:
    """Primal-dual active set iteration (semismooth Newton).

    Each iteration pins u = psi on the current active set, solves the
    reduced linear system on the inactive set by direct factorisation, and
    re-derives the active set from the update rule
    {i : (A u - b)_i + (psi - u)_i > 0}.  An iterate is accepted as soon
    as its optimality residuals pass tol; a repeated active set whose
    residuals still fail means the linear solves cannot reach the
    requested tolerance.  `initial_active` seeds the first set (warm start);
    otherwise it is derived from `start` (default: the obstacle).
    `factor_cache` may be shared across solves with the identical matrix.
    """
    _validate_tol(tol, max_iter)
    n = problem.n
    if initial_active is not None:
        active = np.asarray(initial_active, dtype=bool)
        if active.shape != (n,):
            raise PreconditionError("initial_active has wrong shape")
    else:
        u0 = problem.psi if start is None else np.maximum(
            problem.psi, np.asarray(start, dtype=float))
        lam0 = problem.dual(u0)
        active = (lam0 + (problem.psi - u0)) > 0.0

    kkt = None
    for iteration in range(1, max_iter + 1):
        u = _reduced_solve(problem, active, factor_cache)
        au = problem.a @ u
        lam = au - problem.b
        # Accept on residuals, not on the set settling: in degenerate
        # problems (lam and u - psi both at roundoff) the strict-inequality
        # update rule can flip borderline indices forever while every
        # iterate is already optimal to tolerance.
        kkt = _kkt_from_dual(problem, u, lam)
        if kkt.passes(tol):
            return ObstacleSolution(
                u=u, active_set=active.copy(), iterations=iteration, kkt=kkt,
                load_image=au)
        new_active = (lam + (problem.psi - u)) > 0.0
        if np.array_equal(new_active, active):
            raise ConvergenceError(
                f"active set converged but residuals {kkt.worst:.3e} exceed "
                f"{tol:.1e} * scale; the linear solves cannot reach this tolerance",
                residuals=kkt,
            )
        active = new_active
    kkt = _kkt_from_dual(problem, u, lam)
    raise ConvergenceError(
        f"active set did not settle in {max_iter} iterations", residuals=kkt)


def enumerate_oracle(problem: ObstacleProblem, tol: float = 1e-8) -> ObstacleSolution:
    """Independent brute-force reference: try every active set.

    For each of the 2^n candidate active sets the complementarity system
    is solved densely and tested for primal and dual feasibility within
    tol * max(1, |b|_inf).  All passing candidates must agree on the
    minimiser (it is unique); their number is reported in
    `oracle_candidates` (degenerate contact can make several masks pass).
    Refuses n > 15.
    """
    n = problem.n
    if n > ORACLE_MAX_DIM:
        raise ProblemTooLargeError(
            f"enumeration over 2^{n} active sets refused (cap {ORACLE_MAX_DIM})")
    _validate_tol(tol)
    dense = problem.a.toarray()
    b = problem.b
    psi = problem.psi
    eps = tol * problem.scale

    masks = ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1).astype(bool)
    winners = []
    for active in masks:
        u = psi.copy()
        inactive = ~active
        if inactive.any():
            sub = dense[np.ix_(inactive, inactive)]
            rhs = b[inactive]
            if active.any():
                rhs = rhs - dense[np.ix_(inactive, active)] @ psi[active]
            u[inactive] = np.linalg.solve(sub, rhs)
            if not (u[inactive] >= psi[inactive] - eps).all():
                continue
        lam = dense @ u - b
        if active.any() and not (lam[active] >= -eps).all():
            continue
        winners.append((active, u))
    if not winners:
        raise ConvergenceError("no active set passes the optimality test; "
                               "the matrix is likely not an SPD M-matrix")
    reference = winners[0][1]
    for _, u in winners[1:]:
        if np.abs(u - reference).max() > 1e-6 * problem.scale:
            raise ConvergenceError(
                "distinct minimisers passed the optimality test; "
                "the problem is not positive definite")
    active, u = winners[0]
    return ObstacleSolution(
        u=u,
        active_set=(u - psi) <= eps,
        iterations=masks.shape[0],
        kkt=kkt_residuals(problem, u),
        oracle_candidates=len(winners),
    )


def verify_conditions(problem: ObstacleProblem, u, tol: float = 1e-10) -> Report:
    """Re-derive every optimality condition of `u` and report residuals.

    Checks feasibility, dual feasibility, componentwise complementarity and
    the two-sided load bound at tol * scale, plus the summed duality
    pairing |(A u - b) . (u - psi)| at n * tol * scale (a sum of n
    componentwise-bounded terms).
    """
    _validate_tol(tol)
    u = np.asarray(u, dtype=float)
    lam = problem.dual(u)
    kkt = _kkt_from_dual(problem, u, lam)
    pairing = abs(float(np.dot(lam, u - problem.psi)))
    threshold = tol * kkt.scale
    report = Report(title="obstacle optimality conditions")
    report.add("feasibility", kkt.feasibility, threshold)
    report.add("dual", kkt.dual, threshold)
    report.add("complementarity", kkt.complementarity, threshold)
    report.add("upper_bound", kkt.upper_bound, threshold)
    report.add("pairing", pairing, problem.n * threshold)
    return report


def _same_matrix(p1: ObstacleProblem, p2: ObstacleProblem) -> bool:
    if p1.a is p2.a:
        return True
    if p1.a.shape != p2.a.shape:
        return False
    return (p1.a != p2.a).nnz == 0


def _first_violation(lhs: np.ndarray, rhs: np.ndarray) -> int | None:
    bad = np.flatnonzero(lhs > rhs)
    return int(bad[0]) if bad.size else None


def check_comparison(problem1: ObstacleProblem, problem2: ObstacleProblem,
                     u1, u2, tol: float = 1e-10) -> Report:
    """Monotone dependence: ordered data must give ordered minimisers.

    Preconditions: identical matrices, b1 <= b2 and psi1 <= psi2
    componentwise (PreconditionError names the first violating index).
    The report holds max(u1 - u2)_+ against `tol`.
    """
    if not _same_matrix(problem1, problem2):
        raise PreconditionError("comparison needs identical matrices")
    i = _first_violation(problem1.b, problem2.b)
    if i is not None:
        raise PreconditionError(
            f"load order violated at index {i}: {problem1.b[i]!r} > {problem2.b[i]!r}")
    i = _first_violation(problem1.psi, problem2.psi)
    if i is not None:
        raise PreconditionError(
            f"obstacle order violated at index {i}: "
            f"{problem1.psi[i]!r} > {problem2.psi[i]!r}")
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    violation = float(max(0.0, (u1 - u2).max(initial=0.0)))
    report = Report(title="comparison of ordered problems")
    report.add("max_order_violation", violation, tol,
               detail={"max_gap": float((u2 - u1).max(initial=0.0))})
    return report


def check_minorant(problem: ObstacleProblem, u, w, tol: float = 1e-10) -> Report:
    """Any feasible supersolution dominates the minimiser.

    Preconditions: w >= psi - tol and (A w - b) >= -tol componentwise
    (PreconditionError names the first violating inequality).  The report
    holds max(u - w)_+ against `tol`.
    """
    w = np.asarray(w, dtype=float)
    u = np.asarray(u, dtype=float)
    bad = np.flatnonzero(w < problem.psi - tol)
    if bad.size:
        i = int(bad[0])
        raise PreconditionError(
            f"candidate is below the obstacle at index {i}: "
            f"{w[i]!r} < {problem.psi[i]!r} - tol")
    residual = problem.dual(w)
    bad = np.flatnonzero(residual < -tol)
    if bad.size:
        i = int(bad[0])
        raise PreconditionError(
            f"candidate is not a supersolution at index {i}: "
            f"(A w - b)[{i}] = {residual[i]!r} < -tol")
    violation = float(max(0.0, (u - w).max(initial=0.0)))
    report = Report(title="supersolution domination")
    report.add("max_domination_violation", violation, tol)
    return report
