import itertools

import numpy as np
import pytest

from deferlab.lp import LinearProgram, LpSolution, dump_lp, format_lp_text, solve_lp


def brute_force_vertex_min(lp, tol=1e-9):
    """Oracle: enumerate vertices as intersections of v active constraints.

    Works on bounded-feasible LPs with few variables. Every basic feasible
    solution lies at the intersection of v linearly independent active
    constraints drawn from rows and variable bounds.
    """
    m, v = lp.A.shape
    cands = []
    for i in range(m):
        cands.append((lp.A[i], lp.b[i]))
    for j in range(v):
        e = np.zeros(v)
        e[j] = 1.0
        if np.isfinite(lp.lo[j]):
            cands.append((e, lp.lo[j]))
        if np.isfinite(lp.hi[j]):
            cands.append((e.copy(), lp.hi[j]))
    best = np.inf
    for combo in itertools.combinations(range(len(cands)), v):
        M = np.array([cands[k][0] for k in combo])
        rhs = np.array([cands[k][1] for k in combo])
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, rhs)
        ax = lp.A @ x
        ok = True
        for i, s in enumerate(lp.senses):
            if s == "<=" and ax[i] > lp.b[i] + tol:
                ok = False
            elif s == ">=" and ax[i] < lp.b[i] - tol:
                ok = False
            elif s == "=" and abs(ax[i] - lp.b[i]) > tol:
                ok = False
        if ok and np.all(x >= lp.lo - tol) and np.all(x <= lp.hi + tol):
            best = min(best, float(lp.c @ x))
    return best


class TestExamples:
    def test_one_variable(self):
        # maximize x s.t. x <= 1, x >= 0, posed as min -x
        lp = LinearProgram(c=[-1.0], A=[[1.0]], senses=["<="], b=[1.0], lo=[0.0], hi=[np.inf])
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        assert sol.x[0] == pytest.approx(1.0)
        assert sol.objective_value == pytest.approx(-1.0)

    def test_symmetric_line(self):
        lp = LinearProgram(
            c=[1.0, 1.0], A=[[1.0, 1.0]], senses=[">="], b=[2.0], lo=[0.0, 0.0], hi=[np.inf, np.inf]
        )
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        assert sol.objective_value == pytest.approx(2.0)

    def test_textbook_lp(self):
        # min -3x - 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18, x, y >= 0
        lp = LinearProgram(
            c=[-3.0, -5.0],
            A=[[1.0, 0.0], [0.0, 2.0], [3.0, 2.0]],
            senses=["<=", "<=", "<="],
            b=[4.0, 12.0, 18.0],
            lo=[0.0, 0.0],
            hi=[np.inf, np.inf],
        )
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        assert sol.x[0] == pytest.approx(2.0)
        assert sol.x[1] == pytest.approx(6.0)
        assert sol.objective_value == pytest.approx(-36.0)
        assert sol.objective_value == pytest.approx(brute_force_vertex_min(lp), abs=1e-7)


class TestStatuses:
    def test_infeasible(self):
        lp = LinearProgram(
            c=[0.0], A=[[1.0], [1.0]], senses=[">=", "<="], b=[2.0, 1.0], lo=[0.0], hi=[np.inf]
        )
        assert solve_lp(lp).status == "infeasible"

    def test_unbounded(self):
        lp = LinearProgram(
            c=[-1.0], A=[[1.0]], senses=[">="], b=[0.0], lo=[0.0], hi=[np.inf]
        )
        assert solve_lp(lp).status == "unbounded"

    def test_iteration_limit(self):
        lp = LinearProgram(
            c=[-3.0, -5.0],
            A=[[1.0, 0.0], [0.0, 2.0], [3.0, 2.0]],
            senses=["<=", "<=", "<="],
            b=[4.0, 12.0, 18.0],
            lo=[0.0, 0.0],
            hi=[np.inf, np.inf],
        )
        assert solve_lp(lp, max_iter=1).status == "iteration_limit"

    def test_equality_rows(self):
        lp = LinearProgram(
            c=[1.0, 2.0],
            A=[[1.0, 1.0]],
            senses=["="],
            b=[3.0],
            lo=[0.0, 0.0],
            hi=[2.0, 2.0],
        )
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        assert sol.objective_value == pytest.approx(4.0)  # x=(2,1)

    def test_fixed_variable(self):
        lp = LinearProgram(
            c=[1.0, 1.0],
            A=[[1.0, 1.0]],
            senses=[">="],
            b=[1.0],
            lo=[0.5, 0.0],
            hi=[0.5, np.inf],
        )
        sol = solve_lp(lp)
        assert sol.status == "optimal"
        assert sol.x[0] == pytest.approx(0.5)
        assert sol.objective_value == pytest.approx(1.0)


class TestAgainstVertexEnumeration:
    def _random_bounded_lp(self, rng, v, m):
        A = rng.normal(size=(m, v))
        x0 = rng.uniform(-1, 1, size=v)  # keep feasibility certain
        b = A @ x0 + rng.uniform(0.0, 2.0, size=m)
        senses = ["<="] * m
        c = rng.normal(size=v)
        lo = np.full(v, -3.0)
        hi = np.full(v, 3.0)
        return LinearProgram(c=c, A=A, senses=senses, b=b, lo=lo, hi=hi)

    def test_random_small_lps(self):
        rng = np.random.default_rng(7)
        for trial in range(40):
            v = int(rng.integers(2, 7))
            m = int(rng.integers(1, 9))
            lp = self._random_bounded_lp(rng, v, m)
            sol = solve_lp(lp)
            assert sol.status == "optimal", f"trial {trial}"
            oracle = brute_force_vertex_min(lp)
            assert sol.objective_value == pytest.approx(oracle, abs=1e-7), f"trial {trial}"

    def test_random_mixed_senses(self):
        rng = np.random.default_rng(11)
        for trial in range(25):
            v = int(rng.integers(2, 5))
            m = int(rng.integers(2, 7))
            A = rng.normal(size=(m, v))
            x0 = rng.uniform(-0.5, 0.5, size=v)
            slack = rng.uniform(0.1, 1.0, size=m)
            senses = [("<=", ">=")[int(rng.integers(0, 2))] for _ in range(m)]
            b = np.array(
                [A[i] @ x0 + (slack[i] if senses[i] == "<=" else -slack[i]) for i in range(m)]
            )
            lp = LinearProgram(
                c=rng.normal(size=v), A=A, senses=senses, b=b, lo=np.full(v, -2.0), hi=np.full(v, 2.0)
            )
            sol = solve_lp(lp)
            assert sol.status == "optimal", f"trial {trial}"
            oracle = brute_force_vertex_min(lp)
            assert sol.objective_value == pytest.approx(oracle, abs=1e-7), f"trial {trial}"


class TestInvariants:
    def test_feasibility_of_optimum(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            v = int(rng.integers(2, 6))
            m = int(rng.integers(1, 8))
            A = rng.normal(size=(m, v))
            b = A @ rng.uniform(-1, 1, size=v) + rng.uniform(0, 1, size=m)
            lp = LinearProgram(
                c=rng.normal(size=v),
                A=A,
                senses=["<="] * m,
                b=b,
                lo=np.full(v, -4.0),
                hi=np.full(v, 4.0),
            )
            sol = solve_lp(lp)
            assert sol.status == "optimal"
            assert np.all(lp.A @ sol.x <= lp.b + 1e-9)
            assert np.all(sol.x >= lp.lo - 1e-9)
            assert np.all(sol.x <= lp.hi + 1e-9)

    def test_deterministic_resolve(self):
        rng = np.random.default_rng(5)
        A = rng.normal(size=(6, 4))
        b = A @ rng.uniform(-1, 1, 4) + rng.uniform(0, 1, 6)
        lp = LinearProgram(
            c=rng.normal(size=4), A=A, senses=["<="] * 6, b=b, lo=np.full(4, -2.0), hi=np.full(4, 2.0)
        )
        a = solve_lp(lp)
        b2 = solve_lp(lp)
        assert a.objective_value == b2.objective_value
        np.testing.assert_array_equal(a.x, b2.x)
        assert a.iterations == b2.iterations


class TestDump:
    def test_format_round_words(self, tmp_path):
        lp = LinearProgram(
            c=[1.0, -1.0], A=[[1.0, 2.0]], senses=["<="], b=[3.0], lo=[0.0, 0.0], hi=[1.0, np.inf]
        )
        text = format_lp_text(lp)
        assert text.startswith("min ")
        assert "<= 3.0" in text
        path = tmp_path / "debug.lp"
        dump_lp(lp, path)
        assert path.read_text() == text
