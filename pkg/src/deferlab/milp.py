"""Exact 0-1 deferral optimization via a big-M mixed-integer linear program.

The binary formulation, per training point i with label y in {-1, +1} and
human-error indicator e_i, over box-bounded weights M, R and variables
phi_i >= 0 (continuous), t_i, r_i (binary):

    minimize   sum_i (phi_i + r_i e_i) / n   [+ lambda * l1(M, R)]
    subject to phi_i >= t_i - r_i
               K_m t_i >= gamma - y_i M . x_i
               R . x_i <= K_r r_i + gamma (r_i - 1)
               R . x_i >= K_r (r_i - 1) + gamma r_i

Features are scaled by the largest training L1 norm and bias-augmented, so
activations stay comparable to the weight box. gamma must be strictly
positive: at gamma = 0 the all-zero rejector satisfies both rejector rows
for either value of r_i and the constraint is void.

The solver is a deterministic best-bound branch-and-bound. Node relaxations
come from one of two engines, both built on :mod:`deferlab.lp`:

* small or side-constrained problems solve the full LP relaxation per node;
* large unconstrained binary problems bound each node by a cutting-plane
  model of the relaxation's value function in (M, R), which is convex
  because it is the partial minimum of the LP over (phi, t, r). Master
  problems stay tiny, every master value is a valid lower bound, and primal
  heuristics supply incumbents. Exactness claims are unaffected: pruning
  only ever uses true lower bounds.

Incumbents are never trusted from relaxation values: every candidate pair
is re-scored through the true 0-1 loss and re-checked against margins, the
weight box, and any coverage or fairness rows before adoption.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import DeferDataset, HalfspacePair, pair_decisions, system_loss_01
from .lp import LinearProgram, solve_lp

__all__ = [
    "MilpConfig",
    "MilpProblem",
    "MilpSolution",
    "build_binary_milp",
    "build_multiclass_milp",
    "add_coverage_constraint",
    "add_fairness_constraint",
    "solve_milp",
    "extract_pair",
]

INT_TOL = 1e-6
FAIRNESS_SLACK = 1e-6
# node LPs beyond this many rows switch to the cutting-plane bound engine
EXACT_ROWS_MAX = 450


@dataclass(frozen=True)
class MilpConfig:
    """Formulation constants and solver knobs.

    Defaults mirror the reference constants: weight box 1, margin 1e-5, and
    big-M values box + gamma. ``abs_gap`` defaults to 0.4/n at solve time;
    with lambda_reg = 0 objective values live on the grid {0, 1, ...}/n, so
    that gap certifies exact optimality.
    """

    gamma: float = 1e-5
    box: float = 1.0
    k_m: Optional[float] = None
    k_r: Optional[float] = None
    lambda_reg: float = 0.0
    coverage_beta: Optional[float] = None
    fairness_groups: Optional[np.ndarray] = None
    time_limit_s: Optional[float] = None
    abs_gap: Optional[float] = None
    node_limit: Optional[int] = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be strictly positive")
        if self.box <= 0:
            raise ValueError("box must be positive")
        km, kr = self.resolved_big_m()
        if km < self.gamma or kr < self.gamma:
            raise ValueError("big-M constants must be at least gamma")
        if self.coverage_beta is not None and not 0.0 <= self.coverage_beta <= 1.0:
            raise ValueError("coverage_beta must lie in [0, 1]")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")

    def resolved_big_m(self):
        km = self.box + self.gamma if self.k_m is None else self.k_m
        kr = self.box + self.gamma if self.k_r is None else self.k_r
        return km, kr


@dataclass
class MilpProblem:
    """A built deferral MILP: data in normalized space plus the var layout."""

    kind: str  # "binary" | "multiclass"
    dataset: DeferDataset
    xt: np.ndarray  # (n, d+1) features / norm_scale with bias appended
    err: np.ndarray  # (n,) human error indicators
    norm_scale: float
    gamma: float
    box: float
    k_m: float
    k_r: float
    lambda_reg: float
    ypm: Optional[np.ndarray] = None  # (n,) labels in {-1, +1}, binary only
    coverage_beta: Optional[float] = None
    fairness_groups: Optional[np.ndarray] = None
    _lp: Optional[LinearProgram] = field(default=None, repr=False, compare=False)

    # ---- variable layout -------------------------------------------------
    @property
    def n(self) -> int:
        return self.xt.shape[0]

    @property
    def d1(self) -> int:
        return self.xt.shape[1]

    @property
    def num_classes(self) -> int:
        return self.dataset.num_classes

    @property
    def _n_weight_rows(self) -> int:
        return 1 if self.kind == "binary" else self.num_classes

    def _layout(self):
        """Slices of the flat LP variable vector, in declaration order."""
        d1, n = self.d1, self.n
        nw = self._n_weight_rows * d1
        out = {"M": slice(0, nw), "R": slice(nw, nw + d1)}
        base = nw + d1
        out["phi"] = slice(base, base + n)
        out["t"] = slice(base + n, base + 2 * n)
        base += 2 * n
        if self.kind == "multiclass":
            ncij = n * (self.num_classes - 1)
            out["c"] = slice(base, base + ncij)
            base += ncij
        out["r"] = slice(base, base + n)
        base += n
        if self.lambda_reg > 0:
            out["aux"] = slice(base, base + nw + d1)
            base += nw + d1
        out["total"] = base
        return out

    @property
    def num_vars(self) -> int:
        return self._layout()["total"]

    @property
    def binary_var_ids(self) -> np.ndarray:
        lay = self._layout()
        ids = [np.arange(lay["t"].start, lay["t"].stop)]
        if "c" in lay:
            ids.append(np.arange(lay["c"].start, lay["c"].stop))
        ids.append(np.arange(lay["r"].start, lay["r"].stop))
        return np.concatenate(ids)

    @property
    def var_roles(self) -> dict:
        lay = self._layout()
        roles = {}
        d1 = self.d1
        for k, j in enumerate(range(lay["M"].start, lay["M"].stop)):
            roles[j] = ("M", k // d1, k % d1) if self.kind == "multiclass" else ("M", k)
        for k, j in enumerate(range(lay["R"].start, lay["R"].stop)):
            roles[j] = ("R", k)
        for name in ("phi", "t", "r"):
            for k, j in enumerate(range(lay[name].start, lay[name].stop)):
                roles[j] = (name, k)
        if "c" in lay:
            cm1 = self.num_classes - 1
            for k, j in enumerate(range(lay["c"].start, lay["c"].stop)):
                roles[j] = ("c", k // cm1, k % cm1)
        if "aux" in lay:
            for k, j in enumerate(range(lay["aux"].start, lay["aux"].stop)):
                roles[j] = ("norm_aux", k)
        return roles

    def _other_classes(self, i: int) -> np.ndarray:
        """Class ids j != y_i, ascending; position order of the c_ij block."""
        y = int(self.dataset.labels[i])
        return np.array([j for j in range(self.num_classes) if j != y])

    # ---- LP relaxation ----------------------------------------------------
    @property
    def lp_relaxation(self) -> LinearProgram:
        if self._lp is None:
            self._lp = self._build_lp()
        return self._lp

    def _build_lp(self) -> LinearProgram:
        lay = self._layout()
        nv, n, d1 = lay["total"], self.n, self.d1
        rows, senses, rhs = [], [], []

        def row():
            rows.append(np.zeros(nv))
            return rows[-1]

        km, kr, g = self.k_m, self.k_r, self.gamma
        for i in range(n):
            a = row()  # phi_i - t_i + r_i >= 0
            a[lay["phi"].start + i] = 1.0
            a[lay["t"].start + i] = -1.0
            a[lay["r"].start + i] = 1.0
            senses.append(">=")
            rhs.append(0.0)
            if self.kind == "binary":
                a = row()  # K_m t_i + y_i M.x_i >= gamma
                a[lay["t"].start + i] = km
                a[lay["M"]] = self.ypm[i] * self.xt[i]
                senses.append(">=")
                rhs.append(g)
            else:
                cm1 = self.num_classes - 1
                a = row()  # t_i + sum_j c_ij / (C-1) >= 1
                a[lay["t"].start + i] = 1.0
                a[lay["c"].start + i * cm1 : lay["c"].start + (i + 1) * cm1] = 1.0 / cm1
                senses.append(">=")
                rhs.append(1.0)
                y = int(self.dataset.labels[i])
                for pos, j in enumerate(self._other_classes(i)):
                    cid = lay["c"].start + i * cm1 + pos
                    diff = np.zeros(nv)
                    diff[lay["M"].start + y * d1 : lay["M"].start + (y + 1) * d1] = self.xt[i]
                    diff[lay["M"].start + j * d1 : lay["M"].start + (j + 1) * d1] = -self.xt[i]
                    up = diff.copy()  # (M_y - M_j).x_i - (2K_m + g) c_ij <= -g
                    up[cid] = -(2 * km + g)
                    rows.append(up)
                    senses.append("<=")
                    rhs.append(-g)
                    lo = diff  # (M_y - M_j).x_i - (2K_m + g) c_ij >= -2K_m
                    lo[cid] = -(2 * km + g)
                    rows.append(lo)
                    senses.append(">=")
                    rhs.append(-2 * km)
            a = row()  # R.x_i - (K_r + g) r_i <= -g
            a[lay["R"]] = self.xt[i]
            a[lay["r"].start + i] = -(kr + g)
            senses.append("<=")
            rhs.append(-g)
            a = row()  # R.x_i - (K_r + g) r_i >= -K_r
            a[lay["R"]] = self.xt[i]
            a[lay["r"].start + i] = -(kr + g)
            senses.append(">=")
            rhs.append(-kr)

        if self.lambda_reg > 0:
            w_ids = list(range(lay["M"].start, lay["M"].stop)) + list(
                range(lay["R"].start, lay["R"].stop)
            )
            for k, wid in enumerate(w_ids):
                for sign in (1.0, -1.0):
                    a = row()  # aux_k >= +-w
                    a[lay["aux"].start + k] = 1.0
                    a[wid] = -sign
                    senses.append(">=")
                    rhs.append(0.0)

        if self.coverage_beta is not None:
            a = row()
            a[lay["r"]] = 1.0
            senses.append("<=")
            rhs.append(self.coverage_beta * n)

        if self.fairness_groups is not None:
            groups = np.asarray(self.fairness_groups)
            for gid in np.unique(groups):
                inside = groups == gid
                w_in, w_out = 1.0 / inside.sum(), 1.0 / (~inside).sum()
                coef = np.where(inside, w_in, -w_out)
                for sense, bound in (("<=", FAIRNESS_SLACK), (">=", -FAIRNESS_SLACK)):
                    a = row()
                    a[lay["phi"]] = coef
                    a[lay["r"]] = coef * self.err
                    senses.append(sense)
                    rhs.append(bound)

        c = np.zeros(nv)
        c[lay["phi"]] = 1.0 / n
        c[lay["r"]] = self.err / n
        lo = np.full(nv, -np.inf)
        hi = np.full(nv, np.inf)
        lo[lay["M"]], hi[lay["M"]] = -self.box, self.box
        lo[lay["R"]], hi[lay["R"]] = -self.box, self.box
        lo[lay["phi"]], hi[lay["phi"]] = 0.0, np.inf
        for name in ("t", "r") + (("c",) if "c" in lay else ()):
            lo[lay[name]], hi[lay[name]] = 0.0, 1.0
        if "aux" in lay:
            c[lay["aux"]] = self.lambda_reg
            lo[lay["aux"]], hi[lay["aux"]] = 0.0, self.box
        return LinearProgram(c=c, A=np.array(rows), senses=senses, b=np.array(rhs), lo=lo, hi=hi)

    @property
    def has_side_constraints(self) -> bool:
        return self.coverage_beta is not None or self.fairness_groups is not None

    @property
    def num_rows_estimate(self) -> int:
        per_point = 3 + (1 if self.kind == "binary" else 2 * (self.num_classes - 1) + 1)
        extra = (2 * (self._n_weight_rows + 1) * self.d1) if self.lambda_reg > 0 else 0
        return per_point * self.n + extra


@dataclass
class MilpSolution:
    """Outcome of solve_milp. ``train_loss`` is always recomputed through the
    true 0-1 system loss of the extracted pair on the unnormalized data."""

    pair: Optional[HalfspacePair]
    objective: float
    train_loss: float
    status: str  # proven_optimal | time_limit_incumbent | infeasible
    nodes_explored: int
    wall_time_s: float
    best_bound: float
    regularization: float = 0.0
    bound_history: list = field(default_factory=list)
    incumbent_history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def _normalize(dataset: DeferDataset):
    x = dataset.features
    norms = np.abs(x).sum(axis=1)
    scale = float(norms.max())
    if scale <= 0.0:
        scale = 1.0  # zero-variance data stays valid
    xt = np.hstack([x / scale, np.ones((dataset.n, 1))])
    return xt, scale


def build_binary_milp(dataset: DeferDataset, config: MilpConfig) -> MilpProblem:
    """Assemble the binary big-M formulation for a 2-class dataset."""
    if dataset.num_classes != 2:
        raise ValueError("binary builder requires num_classes == 2; use the multiclass builder")
    xt, scale = _normalize(dataset)
    km, kr = config.resolved_big_m()
    problem = MilpProblem(
        kind="binary",
        dataset=dataset,
        xt=xt,
        err=(dataset.human_preds != dataset.labels).astype(float),
        norm_scale=scale,
        gamma=config.gamma,
        box=config.box,
        k_m=km,
        k_r=kr,
        lambda_reg=config.lambda_reg,
        ypm=(2 * dataset.labels - 1).astype(float),
    )
    if config.coverage_beta is not None:
        problem = add_coverage_constraint(problem, config.coverage_beta)
    if config.fairness_groups is not None:
        problem = add_fairness_constraint(problem, config.fairness_groups)
    return problem


def build_multiclass_milp(dataset: DeferDataset, config: MilpConfig) -> MilpProblem:
    """Assemble the multiclass formulation (per-class weight vectors)."""
    xt, scale = _normalize(dataset)
    km, kr = config.resolved_big_m()
    problem = MilpProblem(
        kind="multiclass",
        dataset=dataset,
        xt=xt,
        err=(dataset.human_preds != dataset.labels).astype(float),
        norm_scale=scale,
        gamma=config.gamma,
        box=config.box,
        k_m=km,
        k_r=kr,
        lambda_reg=config.lambda_reg,
    )
    if config.coverage_beta is not None:
        problem = add_coverage_constraint(problem, config.coverage_beta)
    if config.fairness_groups is not None:
        problem = add_fairness_constraint(problem, config.fairness_groups)
    return problem


def add_coverage_constraint(problem: MilpProblem, beta: float) -> MilpProblem:
    """Cap the deferral rate: sum_i r_i / n <= beta."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return replace(problem, coverage_beta=float(beta), _lp=None)


def add_fairness_constraint(problem: MilpProblem, groups) -> MilpProblem:
    """Equalize mean per-point system cost across demographic groups.

    For each group the mean of phi_i + r_i I{h_i != y_i} must match the mean
    over its complement, as an equality with +-1e-6 slack.
    """
    groups = np.asarray(groups)
    if groups.shape != (problem.n,):
        raise ValueError("groups must assign one id per training point")
    uniq = np.unique(groups)
    if uniq.size < 2:
        raise ValueError("need at least 2 groups")
    for gid in uniq:
        if not np.any(groups == gid) or not np.any(groups != gid):
            raise ValueError("every group and its complement must be nonempty")
    return replace(problem, fairness_groups=groups, _lp=None)


# ---------------------------------------------------------------------------
# pair extraction and incumbent scoring
# ---------------------------------------------------------------------------


def _unnormalize_pair(problem: MilpProblem, m_norm: np.ndarray, r_norm: np.ndarray) -> HalfspacePair:
    m = np.array(m_norm, dtype=float, copy=True)
    r = np.array(r_norm, dtype=float, copy=True)
    if m.ndim == 1:
        m[:-1] /= problem.norm_scale
    else:
        m[:, :-1] /= problem.norm_scale
    r[:-1] /= problem.norm_scale
    return HalfspacePair(m, r)


def extract_pair(problem: MilpProblem, x: np.ndarray) -> HalfspacePair:
    """Unpack M, R from a full LP variable vector and undo normalization.

    Raises if any binary variable is fractional beyond the integrality
    tolerance; that indicates an invariant breach upstream.
    """
    x = np.asarray(x, dtype=float)
    lay = problem._layout()
    if x.shape != (lay["total"],):
        raise ValueError("solution vector has the wrong length")
    frac = x[problem.binary_var_ids]
    if np.max(np.abs(frac - np.round(frac)), initial=0.0) > INT_TOL:
        raise RuntimeError("fractional binary variables in a supposedly integral solution")
    m = x[lay["M"]]
    if problem.kind == "multiclass":
        m = m.reshape(problem.num_classes, problem.d1)
    return _unnormalize_pair(problem, m, x[lay["R"]])


class _Incumbent:
    __slots__ = ("objective", "m_norm", "r_norm", "train_cost", "reg")

    def __init__(self, objective, m_norm, r_norm, train_cost, reg):
        self.objective = objective
        self.m_norm = m_norm
        self.r_norm = r_norm
        self.train_cost = train_cost
        self.reg = reg


def _incumbent_from_lp_point(problem: MilpProblem, x: np.ndarray) -> _Incumbent:
    """Adopt an integral LP vertex as an incumbent, costs taken from its own
    variable values (phi may legitimately sit above max(0, t - r) when a
    fairness row pads it)."""
    lay = problem._layout()
    phi = x[lay["phi"]]
    r = np.round(x[lay["r"]])
    train_cost = float(np.sum(phi + r * problem.err)) / problem.n
    reg = 0.0
    if problem.lambda_reg > 0:
        reg = problem.lambda_reg * float(np.sum(x[lay["aux"]]))
    m = x[lay["M"]]
    if problem.kind == "multiclass":
        m = m.reshape(problem.num_classes, problem.d1)
    return _Incumbent(train_cost + reg, m, x[lay["R"]], train_cost, reg)


def _score_candidate(problem: MilpProblem, m_norm, r_norm) -> Optional[_Incumbent]:
    """Re-score a weight candidate as a feasible integral MILP solution.

    Scales weights into the box, derives (t, r, phi) honestly from margins,
    and rejects candidates that violate margins or any side constraint.
    Returns None when the candidate cannot be certified feasible.
    """
    m = np.asarray(m_norm, dtype=float)
    r = np.asarray(r_norm, dtype=float)
    xt, g = problem.xt, problem.gamma

    max_m = np.max(np.abs(m), initial=0.0)
    acts = xt @ (m.T if m.ndim == 2 else m)
    max_act = np.max(np.abs(acts), initial=0.0)
    scale_caps = [problem.box / max_m if max_m > 0 else np.inf]
    if problem.kind == "binary":
        # t_i = 1 stays feasible as long as y M.x >= gamma - K_m
        scale_caps.append((problem.k_m - g) / max_act if max_act > 0 else np.inf)
    else:
        scale_caps.append((2 * problem.k_m - g) / (2 * max_act) if max_act > 0 else np.inf)
    s_m = min(scale_caps)
    if not np.isfinite(s_m):
        s_m = 1.0
    m = m * s_m
    acts = acts * s_m

    max_r = np.max(np.abs(r), initial=0.0)
    racts = xt @ r
    max_ract = np.max(np.abs(racts), initial=0.0)
    s_r = min(
        problem.box / max_r if max_r > 0 else np.inf,
        problem.k_r / max_ract if max_ract > 0 else np.inf,
    )
    if not np.isfinite(s_r):
        s_r = 1.0
    r = r * s_r
    racts = racts * s_r
    if np.any(np.abs(racts) < g):
        return None  # rejector puts a point inside the margin band

    r_dec = (racts >= 0).astype(float)
    if problem.kind == "binary":
        t_dec = (problem.ypm * acts < g).astype(float)
    else:
        y = problem.dataset.labels
        diffs = acts[np.arange(problem.n), y][:, None] - acts
        diffs[np.arange(problem.n), y] = np.inf
        # every class-score difference must clear the margin band, or the
        # implied c_ij variables have no feasible value
        finite = np.isfinite(diffs)
        if np.any(np.abs(diffs[finite]) < g):
            return None
        t_dec = (diffs.min(axis=1) < g).astype(float)
    phi = np.maximum(0.0, t_dec - r_dec)
    train_cost = float(np.sum(phi + r_dec * problem.err)) / problem.n

    if problem.coverage_beta is not None and r_dec.mean() > problem.coverage_beta + 1e-9:
        return None
    if problem.fairness_groups is not None:
        cost = phi + r_dec * problem.err
        groups = problem.fairness_groups
        for gid in np.unique(groups):
            inside = groups == gid
            if abs(cost[inside].mean() - cost[~inside].mean()) > FAIRNESS_SLACK + 1e-12:
                return None

    reg = 0.0
    if problem.lambda_reg > 0:
        reg = problem.lambda_reg * (np.abs(m).sum() + np.abs(r).sum())
    return _Incumbent(train_cost + reg, m, r, train_cost, float(reg))


# ---------------------------------------------------------------------------
# primal heuristics
# ---------------------------------------------------------------------------


def _ridge_fit(xt, targets, weights=None, reg=1e-6):
    w = np.ones(len(targets)) if weights is None else weights
    xw = xt * w[:, None]
    gram = xt.T @ xw + reg * np.eye(xt.shape[1])
    return np.linalg.solve(gram, xw.T @ targets)


def _pocket_perceptron(xt, targets, w0, epochs, rng):
    """Pocket perceptron on +-1 targets, full per-sample epochs.

    Converges to an exact separator on separable data given enough epochs;
    otherwise returns the lowest-error weights seen.
    """
    w = w0.copy()
    n = len(targets)
    best_w = w.copy()
    best_wrong = int(np.sum(targets * (xt @ w) <= 0))
    if best_wrong == 0:
        return w
    for _ in range(epochs):
        order = rng.permutation(n)
        updated = False
        for i in order:
            if targets[i] * (xt[i] @ w) <= 0:
                w = w + targets[i] * xt[i]
                updated = True
        wrong = int(np.sum(targets * (xt @ w) <= 0))
        if wrong < best_wrong:
            best_wrong, best_w = wrong, w.copy()
            if wrong == 0:
                return best_w
        if not updated:
            return w
    return best_w


def _irls_logistic(xt, targets, iters=25, ridge=1e-8):
    """Newton (IRLS) steps on logistic loss for +-1 targets.

    The dimension is small, so exact Hessian solves are cheap; on separable
    data the margins grow every step and training separation is usually
    perfect after a handful of iterations.
    """
    w = np.zeros(xt.shape[1])
    for _ in range(iters):
        z = targets * (xt @ w)
        p = 1.0 / (1.0 + np.exp(np.clip(z, -500.0, 500.0)))
        wt = p * (1.0 - p) + 1e-12
        grad = xt.T @ (targets * p)
        hess = (xt * wt[:, None]).T @ xt + ridge * np.eye(xt.shape[1])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        w = w + step
        if np.max(np.abs(step)) > 1e8:
            break
    return w


def _fit_separator(xt, targets, rng, epochs=60):
    """IRLS warm start, pocket-perceptron cleanup; exact on separable data."""
    w = _irls_logistic(xt, targets)
    if int(np.sum(targets * (xt @ w) <= 0)) == 0:
        return w
    scale = np.max(np.abs(w))
    if scale > 0:
        w = w / scale
    return _pocket_perceptron(xt, targets, w, epochs, rng)


def _binary_heuristic_candidates(problem: MilpProblem, rng, rounds=8, restarts=3,
                                 deadline=None):
    """Alternating classifier/rejector fits; yields (M, R) weight proposals.

    A zero-loss pair must keep and correctly classify every point the human
    misses, and defer every kept point the classifier misses when the human
    is right. The alternation fixes one side, derives the other side's
    must-sets, and fits an exact separator on them.
    """
    xt, ypm, err = problem.xt, problem.ypm, problem.err
    n, d1 = xt.shape
    bias_only = np.zeros(d1)
    bias_only[-1] = 1.0

    def out_of_time():
        return deadline is not None and time.monotonic() > deadline

    m_all = _fit_separator(xt, ypm, rng)
    yield m_all, bias_only.copy()  # defer everything
    yield m_all, -bias_only  # defer nothing

    hw = err > 0.5
    if not hw.any() or not (~hw).any():
        return

    # human-wrong points can never be deferred for free; anchor the classifier there
    m_hw = _fit_separator(xt[hw], ypm[hw], rng)

    for start in range(restarts):
        if out_of_time():
            return
        if start == 0:
            m = m_hw.copy()
        elif start == 1:
            m = m_all.copy()
        else:
            m = m_hw + 0.3 * rng.standard_normal(d1)
        r = None
        for _ in range(rounds):
            if out_of_time():
                return
            clf_wrong = ypm * (xt @ m) <= 0
            must_defer = clf_wrong & ~hw
            if not must_defer.any():
                yield m.copy(), -bias_only
                break
            alive = must_defer | hw
            t = np.where(must_defer, 1.0, -1.0)
            r = _fit_separator(xt[alive], t[alive], rng)
            yield m.copy(), r.copy()
            kept = xt @ r < 0
            if not kept.any():
                break
            m = _fit_separator(xt[kept], ypm[kept], rng)
            yield m.copy(), r.copy()


def _coverage_shifted(problem: MilpProblem, r):
    """Bias-shifted rejector variants deferring at most floor(beta*n) points."""
    acts = problem.xt @ r
    budget = int(np.floor(problem.coverage_beta * problem.n + 1e-9))
    ordered = np.sort(acts)[::-1]
    out = []
    if budget >= problem.n:
        return out
    if budget == 0:
        delta = ordered[0] + max(1.0, abs(ordered[0]))
    else:
        hi, lo = ordered[budget - 1], ordered[budget]
        if hi - lo <= 1e-12:
            return out
        delta = 0.5 * (hi + lo)
    shifted = r.copy()
    shifted[-1] -= delta
    out.append(shifted)
    return out


def _multiclass_heuristic_candidates(problem: MilpProblem, rng):
    xt, err = problem.xt, problem.err
    n, d1 = xt.shape
    C = problem.num_classes
    bias_only = np.zeros(d1)
    bias_only[-1] = 1.0
    targets = np.where(problem.dataset.labels[:, None] == np.arange(C)[None, :], 1.0, -1.0)
    m = np.stack([_ridge_fit(xt, targets[:, c]) for c in range(C)])
    yield m, bias_only.copy()
    yield m, -bias_only
    labels = np.argmax(xt @ m.T, axis=1)
    clf_wrong = labels != np.asarray(problem.dataset.labels)
    hw = err > 0.5
    must_defer = clf_wrong & ~hw
    must_keep = ~clf_wrong & hw
    alive = must_defer | must_keep
    if alive.any() and must_defer.any() and must_keep.any():
        t = np.where(must_defer, 1.0, -1.0)
        r = _fit_separator(xt[alive], t[alive], rng)
        yield m, r


# ---------------------------------------------------------------------------
# node relaxations
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    fixed: dict  # var id -> 0.0 or 1.0
    bound: float
    depth: int
    cuts: list = field(default_factory=list)  # cutting-plane engine only


class _ExactRelaxation:
    """Full LP relaxation per node, solved with the bounded simplex."""

    def __init__(self, problem: MilpProblem):
        self.problem = problem
        self.lp = problem.lp_relaxation
        self.lay = problem._layout()

    def solve(self, node: _Node):
        lo = self.lp.lo.copy()
        hi = self.lp.hi.copy()
        for vid, val in node.fixed.items():
            lo[vid] = hi[vid] = val
        lp = LinearProgram(
            c=self.lp.c, A=self.lp.A, senses=self.lp.senses, b=self.lp.b, lo=lo, hi=hi
        )
        sol = solve_lp(lp)
        if sol.status == "infeasible":
            return None
        if sol.status != "optimal":
            # unresolved relaxation: fall back to the parent bound
            return {"bound": node.bound, "x": None}
        return {"bound": max(node.bound, sol.objective_value), "x": sol.x}

    def fractional_values(self, info):
        if info["x"] is None:
            return None
        return info["x"][self.problem.binary_var_ids]

    def weights(self, info):
        if info["x"] is None:
            return None
        x = info["x"]
        m = x[self.lay["M"]]
        if self.problem.kind == "multiclass":
            m = m.reshape(self.problem.num_classes, self.problem.d1)
        return m, x[self.lay["R"]]


class _CutPlaneRelaxation:
    """Cutting-plane lower bounds for large unconstrained binary problems.

    Bounds the node LP's value function V(M, R) = min over (phi, t, r) of
    the objective, which is convex in (M, R). Objective cuts come from exact
    evaluations of V; domain rows (margin implications of fixed binaries
    and the rejector's big-M range) are added lazily when violated. The
    master LP is a relaxation throughout, so its value is a true bound.
    """

    MAX_ITERS = 30
    MAX_CUTS = 160

    def __init__(self, problem: MilpProblem, warm_weights=None):
        self.p = problem
        self.lay = problem._layout()
        self.d1 = problem.d1
        self.nv = 2 * self.d1 + 1  # M, R, theta
        self.warm = warm_weights

    def _node_bounds(self, node: _Node):
        p = self.p
        tlo = np.zeros(p.n)
        thi = np.ones(p.n)
        rlo = np.zeros(p.n)
        rhi = np.ones(p.n)
        t0, r0 = self.lay["t"].start, self.lay["r"].start
        for vid, val in node.fixed.items():
            if t0 <= vid < t0 + p.n:
                tlo[vid - t0] = thi[vid - t0] = val
            else:
                rlo[vid - r0] = rhi[vid - r0] = val
        return tlo, thi, rlo, rhi

    def _value(self, w, tlo, thi, rlo, rhi):
        """Exact V at (M, R) plus a subgradient and branching info."""
        p = self.p
        m, r = w[: self.d1], w[self.d1 : 2 * self.d1]
        a = p.ypm * (p.xt @ m)
        b = p.xt @ r
        g, km, kr = p.gamma, p.k_m, p.k_r

        viol_t = a < g - km * thi - 1e-9
        viol_rhi = b > (kr + g) * rhi - g + 1e-9
        viol_rlo = b < (kr + g) * rlo - kr - 1e-9
        if viol_t.any() or viol_rhi.any() or viol_rlo.any():
            return None, (viol_t, viol_rhi, viol_rlo)

        t_need = (g - a) / km
        t_star = np.clip(t_need, tlo, thi)
        dt = np.where((t_need > tlo) & (t_need < thi), -1.0 / km, 0.0)
        rl_raw = (b + g) / (kr + g)
        ru_raw = (b + kr) / (kr + g)
        rl = np.clip(rl_raw, rlo, rhi)
        ru = np.clip(ru_raw, rlo, rhi)
        drl = np.where((rl_raw > rlo) & (rl_raw < rhi), 1.0 / (kr + g), 0.0)
        dru = np.where((ru_raw > rlo) & (ru_raw < rhi), 1.0 / (kr + g), 0.0)

        err1 = p.err > 0.5
        cost = np.where(err1, np.maximum(t_star, rl), np.maximum(0.0, t_star - ru))
        da = np.zeros(p.n)
        db = np.zeros(p.n)
        keep_t = err1 & (t_star >= rl)
        da[keep_t] = dt[keep_t]
        db[err1 & ~keep_t] = drl[err1 & ~keep_t]
        active0 = ~err1 & (t_star - ru > 0)
        da[active0] = dt[active0]
        db[active0] = -dru[active0]

        value = float(cost.sum()) / p.n
        gm = (p.xt * (da * p.ypm)[:, None]).sum(axis=0) / p.n
        gr = (p.xt * db[:, None]).sum(axis=0) / p.n
        if p.lambda_reg > 0:
            value += p.lambda_reg * (np.abs(m).sum() + np.abs(r).sum())
            gm = gm + p.lambda_reg * np.sign(m)
            gr = gr + p.lambda_reg * np.sign(r)
        r_star = np.where(err1, np.clip(t_star, rl, ru), ru)
        return (value, np.concatenate([gm, gr]), t_star, r_star), None

    def solve(self, node: _Node, prune_level: float, deadline: Optional[float]):
        p = self.p
        tlo, thi, rlo, rhi = self._node_bounds(node)
        cuts = list(node.cuts)
        feas_rows = []
        bound = node.bound
        best = None  # (value, w, t_star, r_star)

        w = None
        if self.warm is not None:
            w = self.warm
        for it in range(self.MAX_ITERS):
            if deadline is not None and time.monotonic() > deadline:
                break
            if w is not None:
                out, viol = self._value(w, tlo, thi, rlo, rhi)
                if out is None:
                    vt, vh, vl = viol
                    g, km, kr = p.gamma, p.k_m, p.k_r
                    for i in np.flatnonzero(vt)[:40]:
                        row = np.zeros(self.nv)
                        row[: self.d1] = p.ypm[i] * p.xt[i]
                        feas_rows.append((row, ">=", g - km * thi[i]))
                    for i in np.flatnonzero(vh)[:40]:
                        row = np.zeros(self.nv)
                        row[self.d1 : 2 * self.d1] = p.xt[i]
                        feas_rows.append((row, "<=", (kr + g) * rhi[i] - g))
                    for i in np.flatnonzero(vl)[:40]:
                        row = np.zeros(self.nv)
                        row[self.d1 : 2 * self.d1] = p.xt[i]
                        feas_rows.append((row, ">=", (kr + g) * rlo[i] - kr))
                else:
                    value, grad, t_star, r_star = out
                    if best is None or value < best[0]:
                        best = (value, w.copy(), t_star, r_star)
                    # theta >= value + grad . (w' - w)
                    row = np.concatenate([-grad, [1.0]])
                    cuts.append((row, ">=", value - float(grad @ w)))
                    if len(cuts) > self.MAX_CUTS:
                        cuts = cuts[-self.MAX_CUTS :]

            rows = [c[0] for c in cuts] + [f[0] for f in feas_rows]
            senses = [c[1] for c in cuts] + [f[1] for f in feas_rows]
            rhs = [c[2] for c in cuts] + [f[2] for f in feas_rows]
            if not rows:
                rows = [np.zeros(self.nv)]
                senses = ["<="]
                rhs = [1.0]
            lo = np.concatenate([np.full(2 * self.d1, -p.box), [0.0]])
            hi = np.concatenate([np.full(2 * self.d1, p.box), [np.inf]])
            c = np.zeros(self.nv)
            c[-1] = 1.0
            master = LinearProgram(
                c=c, A=np.array(rows), senses=senses, b=np.array(rhs), lo=lo, hi=hi
            )
            sol = solve_lp(master)
            if sol.status == "infeasible":
                return None
            if sol.status != "optimal":
                break
            bound = max(bound, sol.objective_value)
            if bound >= prune_level - 1e-12:
                break
            w = sol.x[:-1]
            if best is not None and best[0] - bound <= 1e-7 * max(1.0, abs(best[0])):
                break

        return {"bound": bound, "best": best, "cuts": cuts}

    def fractional_values(self, info):
        if info["best"] is None:
            return None
        _, _, t_star, r_star = info["best"]
        # order matches binary_var_ids: t block then r block
        return np.concatenate([t_star, r_star])

    def weights(self, info):
        if info["best"] is None:
            return None
        w = info["best"][1]
        return w[: self.d1], w[self.d1 : 2 * self.d1]


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------


def solve_milp(problem: MilpProblem, config: Optional[MilpConfig] = None) -> MilpSolution:
    """Best-bound branch-and-bound over the problem's binary variables.

    Branches on the binary with fractional part closest to 0.5 (ties toward
    the lowest variable id). Incumbents are seeded by rounding node
    relaxations into weight candidates and re-scoring them through the true
    0-1 loss, plus alternating-fit primal heuristics at the root. With
    lambda_reg = 0 an incumbent of objective 0 is proven optimal outright
    since every objective term is nonnegative.
    """
    if config is None:
        config = MilpConfig()
    start = time.monotonic()
    deadline = start + config.time_limit_s if config.time_limit_s is not None else None
    n = problem.n
    abs_gap = config.abs_gap if config.abs_gap is not None else 0.4 / n
    rng = np.random.default_rng(0x5EED5EED)

    incumbent: Optional[_Incumbent] = None
    bound_history: list = []
    incumbent_history: list = []

    def consider(cand: Optional[_Incumbent]):
        nonlocal incumbent
        if cand is None:
            return
        if incumbent is None or cand.objective < incumbent.objective - 1e-12:
            incumbent = cand
            incumbent_history.append(cand.objective)

    gen = (
        _binary_heuristic_candidates(problem, rng, deadline=deadline)
        if problem.kind == "binary"
        else _multiclass_heuristic_candidates(problem, rng)
    )
    for m_cand, r_cand in gen:
        consider(_score_candidate(problem, m_cand, r_cand))
        if problem.coverage_beta is not None:
            # shift the rejector bias so the deferral budget holds exactly
            for shifted in _coverage_shifted(problem, r_cand):
                consider(_score_candidate(problem, m_cand, shifted))
        if deadline is not None and time.monotonic() > deadline:
            break

    use_exact = (
        problem.kind == "multiclass"
        or problem.has_side_constraints
        or problem.num_rows_estimate <= EXACT_ROWS_MAX
    )
    if use_exact:
        engine = _ExactRelaxation(problem)
    else:
        warm = None
        if incumbent is not None:
            warm = np.concatenate([incumbent.m_norm, incumbent.r_norm])
        engine = _CutPlaneRelaxation(problem, warm_weights=warm)

    binary_ids = problem.binary_var_ids
    trivial_bound = 0.0  # every objective term is nonnegative
    heap = [(trivial_bound, 0, _Node(fixed={}, bound=trivial_bound, depth=0))]
    seq = 1
    nodes = 0
    global_bound = trivial_bound
    bound_history.append(global_bound)
    status = None
    root_infeasible = False
    dropped_unresolved = False

    def inc_obj():
        return incumbent.objective if incumbent is not None else np.inf

    while heap:
        if deadline is not None and time.monotonic() > deadline:
            status = "time_limit_incumbent"
            break
        if config.node_limit is not None and nodes >= config.node_limit:
            status = "time_limit_incumbent"
            break
        node_bound, _, node = heapq.heappop(heap)
        if node_bound > global_bound:
            global_bound = min(node_bound, inc_obj())
            bound_history.append(global_bound)
        if node_bound >= inc_obj() - abs_gap + 1e-12:
            heap.clear()  # best-first: every open node is at least this bound
            break
        nodes += 1

        if isinstance(engine, _CutPlaneRelaxation):
            info = engine.solve(node, prune_level=inc_obj() - abs_gap, deadline=deadline)
        else:
            info = engine.solve(node)
        if info is None:
            if node.depth == 0:
                root_infeasible = True
            continue
        node_lb = info["bound"]
        if node_lb >= inc_obj() - abs_gap + 1e-12:
            continue

        weights = engine.weights(info)
        if weights is not None:
            consider(_score_candidate(problem, weights[0], weights[1]))
            if node_lb >= inc_obj() - abs_gap + 1e-12:
                continue

        free_mask = np.array([vid not in node.fixed for vid in binary_ids])
        frac = engine.fractional_values(info)
        vid = None
        if frac is not None:
            dist = np.abs(frac - np.round(frac))
            fractional = (dist > INT_TOL) & free_mask
            if fractional.any():
                # most fractional: fractional part closest to 0.5, ties to lowest id
                half_dist = np.where(fractional, np.abs(frac - 0.5), np.inf)
                vid = int(binary_ids[int(np.argmin(half_dist))])
            elif isinstance(engine, _ExactRelaxation) and info["x"] is not None:
                # integral LP vertex: this node is solved exactly
                consider(_incumbent_from_lp_point(problem, info["x"]))
                continue
        if vid is None:
            # unresolved or untrusted relaxation point: never close the node
            # silently, branch on the lowest free binary instead
            free_ids = binary_ids[free_mask]
            if free_ids.size == 0:
                dropped_unresolved = True
                continue
            vid = int(free_ids[0])
        for val in (0.0, 1.0):
            child_fixed = dict(node.fixed)
            child_fixed[vid] = val
            child = _Node(
                fixed=child_fixed,
                bound=node_lb,
                depth=node.depth + 1,
                cuts=info.get("cuts", []) if isinstance(engine, _CutPlaneRelaxation) else [],
            )
            heapq.heappush(heap, (node_lb, seq, child))
            seq += 1

    wall = time.monotonic() - start
    if status is None:
        if incumbent is None:
            status = "infeasible"
        elif dropped_unresolved:
            status = "time_limit_incumbent"  # a node was abandoned unresolved
        else:
            status = "proven_optimal"
            global_bound = incumbent.objective
            bound_history.append(global_bound)

    if incumbent is None:
        return MilpSolution(
            pair=None,
            objective=np.inf,
            train_loss=np.inf,
            status=status if status == "infeasible" else status,
            nodes_explored=nodes,
            wall_time_s=wall,
            best_bound=global_bound,
            bound_history=bound_history,
            incumbent_history=incumbent_history,
        )

    pair = _unnormalize_pair(problem, incumbent.m_norm, incumbent.r_norm)
    deferred, labels, _ = pair_decisions(pair, problem.dataset.features)
    train_loss = system_loss_01(problem.dataset, deferred, labels)
    return MilpSolution(
        pair=pair,
        objective=incumbent.objective,
        train_loss=train_loss,
        status=status,
        nodes_explored=nodes,
        wall_time_s=wall,
        best_bound=min(global_bound, incumbent.objective),
        regularization=incumbent.reg,
        bound_history=bound_history,
        incumbent_history=incumbent_history,
    )
