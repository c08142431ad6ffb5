"""Bounded-variable linear programming via the two-phase simplex method.

Minimization convention throughout. Rows carry a sense in {"<=", ">=", "="}
and every variable has a (possibly infinite) box. The solver refactors the
basis each iteration, which keeps it simple and numerically fresh; the MILP
relaxations solved here are dense and of modest size, so correctness and
determinism are worth far more than pivot-level speed. Interior-point
methods, sparse factorization, and dual warm starts are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["LinearProgram", "LpSolution", "solve_lp", "format_lp_text", "dump_lp"]

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-10
SENSES = ("<=", ">=", "=")

# variable states
_BASIC, _AT_LO, _AT_HI, _FREE = 0, 1, 2, 3


@dataclass
class LinearProgram:
    """min c.x  s.t.  A x (<=|>=|=) b,  lo <= x <= hi."""

    c: np.ndarray
    A: np.ndarray
    senses: list
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.A.ndim != 2:
            raise ValueError("A must be 2-D")
        m, v = self.A.shape
        if self.c.shape != (v,) or self.b.shape != (m,):
            raise ValueError("inconsistent LP dimensions")
        if self.lo.shape != (v,) or self.hi.shape != (v,):
            raise ValueError("bounds must have one entry per variable")
        if len(self.senses) != m or any(s not in SENSES for s in self.senses):
            raise ValueError("senses must be one of <=, >=, = per row")
        if np.any(self.lo > self.hi):
            raise ValueError("need lo <= hi for every variable")

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def num_vars(self) -> int:
        return self.A.shape[1]


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    x: Optional[np.ndarray]
    objective_value: Optional[float]
    iterations: int = 0


def format_lp_text(lp: LinearProgram) -> str:
    """Plain-text dump of an LP for fault reproduction.

    Format: one `min` line of objective coefficients, one line per row as
    `coeffs... SENSE rhs`, then one `bounds` line per variable as `lo hi`.
    """
    out = ["min " + " ".join(repr(float(v)) for v in lp.c)]
    for i in range(lp.num_rows):
        coeffs = " ".join(repr(float(v)) for v in lp.A[i])
        out.append(f"{coeffs} {lp.senses[i]} {float(lp.b[i])!r}")
    for j in range(lp.num_vars):
        out.append(f"bounds {float(lp.lo[j])!r} {float(lp.hi[j])!r}")
    return "\n".join(out) + "\n"


def dump_lp(lp: LinearProgram, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_lp_text(lp))


class _Simplex:
    """Bounded-variable simplex on the equality form [A | I] z = b."""

    def __init__(self, lp: LinearProgram, max_iter: int):
        m, v = lp.A.shape
        self.m, self.nv = m, v
        self.max_iter = max_iter
        self.iterations = 0
        self.degenerate = 0
        self.bland = False
        # Bland's rule kicks in after a stall to guarantee termination
        self.stall_threshold = 3 * (m + v)

        slack_lo = np.empty(m)
        slack_hi = np.empty(m)
        for i, s in enumerate(lp.senses):
            if s == "<=":
                slack_lo[i], slack_hi[i] = 0.0, np.inf
            elif s == ">=":
                slack_lo[i], slack_hi[i] = -np.inf, 0.0
            else:
                slack_lo[i], slack_hi[i] = 0.0, 0.0

        # columns: structural | slack | artificial
        self.ncols = v + m + m
        self.T = np.hstack([lp.A, np.eye(m), np.zeros((m, m))])
        self.lo = np.concatenate([lp.lo, slack_lo, np.zeros(m)])
        self.hi = np.concatenate([lp.hi, slack_hi, np.full(m, np.inf)])
        self.b = lp.b.copy()

        # start every non-artificial variable at a finite bound near zero
        self.x = np.zeros(self.ncols)
        self.state = np.full(self.ncols, _AT_LO, dtype=np.int8)
        for j in range(v + m):
            lo, hi = self.lo[j], self.hi[j]
            if np.isfinite(lo) and (not np.isfinite(hi) or abs(lo) <= abs(hi)):
                self.x[j], self.state[j] = lo, _AT_LO
            elif np.isfinite(hi):
                self.x[j], self.state[j] = hi, _AT_HI
            else:
                self.x[j], self.state[j] = 0.0, _FREE

        resid = self.b - self.T[:, : v + m] @ self.x[: v + m]
        sign = np.where(resid >= 0.0, 1.0, -1.0)
        for i in range(m):
            col = v + m + i
            self.T[i, col] = sign[i]
            self.x[col] = abs(resid[i])
            self.state[col] = _BASIC
        self.basis = np.arange(v + m, v + m + m)

    def _solve_phase(self, cost: np.ndarray):
        """Run simplex iterations for one phase. Returns a status string."""
        m = self.m
        while True:
            if self.iterations >= self.max_iter:
                return "iteration_limit"
            B = self.T[:, self.basis]
            nonbasic = np.flatnonzero(self.state != _BASIC)
            rhs = self.b - self.T[:, nonbasic] @ self.x[nonbasic]
            try:
                xb = np.linalg.solve(B, rhs)
                y = np.linalg.solve(B.T, cost[self.basis])
            except np.linalg.LinAlgError:
                return "singular"
            self.x[self.basis] = xb

            red = cost[nonbasic] - self.T[:, nonbasic].T @ y
            st = self.state[nonbasic]
            # a variable can improve by moving up from its lower bound,
            # down from its upper bound, or either way if free
            up = ((st == _AT_LO) | (st == _FREE)) & (red < -PIVOT_TOL)
            dn = ((st == _AT_HI) | (st == _FREE)) & (red > PIVOT_TOL)
            eligible = up | dn
            if not np.any(eligible):
                return "optimal"

            idx = np.flatnonzero(eligible)
            if self.bland:
                pick = idx[np.argmin(nonbasic[idx])]
            else:
                pick = idx[np.argmax(np.abs(red[idx]))]
            q = int(nonbasic[pick])
            direction = 1.0 if (red[pick] < 0) else -1.0

            w = np.linalg.solve(B, self.T[:, q])
            step_w = direction * w
            # limits from basic variables hitting their own bounds
            best_delta = np.inf
            leave_pos = -1
            leave_to = _AT_LO
            for i in range(m):
                bi = self.basis[i]
                if step_w[i] > PIVOT_TOL:
                    lim = self.lo[bi]
                    if np.isfinite(lim):
                        delta = (xb[i] - lim) / step_w[i]
                        if delta < best_delta - 1e-12 or (
                            delta < best_delta + 1e-12
                            and (leave_pos < 0 or self._prefer(bi, i, step_w, leave_pos))
                        ):
                            best_delta, leave_pos, leave_to = max(delta, 0.0), i, _AT_LO
                elif step_w[i] < -PIVOT_TOL:
                    lim = self.hi[bi]
                    if np.isfinite(lim):
                        delta = (lim - xb[i]) / (-step_w[i])
                        if delta < best_delta - 1e-12 or (
                            delta < best_delta + 1e-12
                            and (leave_pos < 0 or self._prefer(bi, i, step_w, leave_pos))
                        ):
                            best_delta, leave_pos, leave_to = max(delta, 0.0), i, _AT_HI

            flip_delta = self.hi[q] - self.lo[q]  # inf unless both bounds finite
            if flip_delta < best_delta - 1e-12:
                # bound flip: q crosses its box without any basis change
                self.x[q] = self.hi[q] if direction > 0 else self.lo[q]
                self.state[q] = _AT_HI if direction > 0 else _AT_LO
                self.iterations += 1
                continue
            if not np.isfinite(best_delta):
                return "unbounded"

            self.iterations += 1
            if best_delta <= 1e-12:
                self.degenerate += 1
                if self.degenerate >= self.stall_threshold:
                    self.bland = True
            leaving = int(self.basis[leave_pos])
            self.x[self.basis] = xb - step_w * best_delta
            self.x[q] = self.x[q] + direction * best_delta
            self.x[leaving] = self.lo[leaving] if leave_to == _AT_LO else self.hi[leaving]
            self.state[leaving] = leave_to
            self.state[q] = _BASIC
            self.basis[leave_pos] = q

    def _prefer(self, bi, i, step_w, cur_pos) -> bool:
        """Tie-break among equal ratio-test limits."""
        if self.bland:
            return bi < self.basis[cur_pos]
        a, b = abs(step_w[i]), abs(step_w[cur_pos])
        if a != b:
            return a > b
        return bi < self.basis[cur_pos]


def solve_lp(lp: LinearProgram, max_iter: Optional[int] = None) -> LpSolution:
    """Solve a bounded-variable LP by the two-phase simplex method.

    Phase 1 drives artificial variables to zero to find a basic feasible
    solution; phase 2 optimizes the real objective. The solver is
    deterministic: re-solving the same LP gives the same answer.
    """
    m, v = lp.A.shape
    if max_iter is None:
        max_iter = 50 * (m + v)
    if m == 0:
        # pure box problem
        x = np.where(lp.c > 0, lp.lo, np.where(lp.c < 0, lp.hi, np.where(np.isfinite(lp.lo), lp.lo, 0.0)))
        if np.any(~np.isfinite(x) & (lp.c != 0)):
            return LpSolution("unbounded", None, None, 0)
        x = np.where(np.isfinite(x), x, 0.0)
        return LpSolution("optimal", x, float(lp.c @ x), 0)

    sx = _Simplex(lp, max_iter)
    ncols = sx.ncols

    phase1_cost = np.zeros(ncols)
    phase1_cost[v + m :] = 1.0
    status = sx._solve_phase(phase1_cost)
    if status == "iteration_limit":
        return LpSolution("iteration_limit", None, None, sx.iterations)
    if status in ("singular", "unbounded"):
        # phase 1 is bounded below by zero, so these signal numerical failure
        return LpSolution("infeasible", None, None, sx.iterations)
    art_sum = float(np.sum(sx.x[v + m :]))
    if art_sum > 1e-7:
        return LpSolution("infeasible", None, None, sx.iterations)

    # pin artificials at zero for phase 2
    sx.lo[v + m :] = 0.0
    sx.hi[v + m :] = 0.0
    phase2_cost = np.zeros(ncols)
    phase2_cost[:v] = lp.c
    status = sx._solve_phase(phase2_cost)
    if status == "iteration_limit":
        return LpSolution("iteration_limit", None, None, sx.iterations)
    if status == "singular":
        return LpSolution("infeasible", None, None, sx.iterations)
    if status == "unbounded":
        return LpSolution("unbounded", None, None, sx.iterations)

    x = sx.x[:v].copy()
    return LpSolution("optimal", x, float(lp.c @ x), sx.iterations)
