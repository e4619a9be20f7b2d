"""Sparse Gauss-Newton / Levenberg-Marquardt over SE(2) and the linear translation solve."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .graph import PoseGraph, SolveState, edge_residuals, objective_F
from .se2 import wrap_angle

ANCHOR_WEIGHT = 1e12
STEP_TOL = 1e-10
REL_DECREASE_TOL = 1e-12


class SingularSystemError(RuntimeError):
    pass


@dataclass
class SolveReport:
    final_state: SolveState
    chi2_trace: list[float]
    iterations: int
    wall_time: float
    converged: bool
    method: str = ""
    message: str = ""
    rejected: int = 0

    @property
    def final_chi2(self) -> float:
        return self.chi2_trace[-1]


def _edge_jacobians(graph: PoseGraph, state: SolveState):
    th_i = state.thetas[graph.ei]
    c, s = np.cos(th_i), np.sin(th_i)
    d = state.translations[graph.ej] - state.translations[graph.ei]
    dx, dy = d[:, 0], d[:, 1]
    m = graph.m
    Ji = np.zeros((m, 3, 3))
    Ji[:, 0, 0], Ji[:, 0, 1], Ji[:, 0, 2] = -c, -s, -s * dx + c * dy
    Ji[:, 1, 0], Ji[:, 1, 1], Ji[:, 1, 2] = s, -c, -c * dx - s * dy
    Ji[:, 2, 2] = -1.0
    Jj = np.zeros((m, 3, 3))
    Jj[:, 0, 0], Jj[:, 0, 1] = c, s
    Jj[:, 1, 0], Jj[:, 1, 1] = -s, c
    Jj[:, 2, 2] = 1.0
    return Ji, Jj


def linearize(graph: PoseGraph, state: SolveState, *, anchor: SolveState | None | bool = True):
    """Normal equations ``H = sum J^T L J``, ``b = sum J^T L e`` and the chi2 at ``state``.

    Variables are ordered (x, y, theta) per pose. With ``anchor`` (default: the
    current pose 0), pose 0 gets a 1e12-weighted prior that pins the gauge.
    """
    n = graph.n
    e = edge_residuals(graph, state)
    chi2 = float(np.einsum("ei,eij,ej->", e, graph.info, e))
    Ji, Jj = _edge_jacobians(graph, state)
    L = graph.info

    LJi = L @ Ji
    LJj = L @ Jj
    blocks = {
        ("i", "i"): np.einsum("eki,ekj->eij", Ji, LJi),
        ("i", "j"): np.einsum("eki,ekj->eij", Ji, LJj),
        ("j", "i"): np.einsum("eki,ekj->eij", Jj, LJi),
        ("j", "j"): np.einsum("eki,ekj->eij", Jj, LJj),
    }
    node = {"i": graph.ei, "j": graph.ej}
    off = np.arange(3)
    rows, cols, vals = [], [], []
    for (a, bkey), blk in blocks.items():
        r = (3 * node[a])[:, None, None] + off[None, :, None]
        c = (3 * node[bkey])[:, None, None] + off[None, None, :]
        rows.append(np.broadcast_to(r, blk.shape).ravel())
        cols.append(np.broadcast_to(c, blk.shape).ravel())
        vals.append(blk.ravel())

    Le = np.einsum("eij,ej->ei", L, e)
    b = np.zeros(3 * n)
    np.add.at(b, (3 * graph.ei[:, None] + off).ravel(), np.einsum("eki,ek->ei", Ji, Le).ravel())
    np.add.at(b, (3 * graph.ej[:, None] + off).ravel(), np.einsum("eki,ek->ei", Jj, Le).ravel())

    if anchor is not False and n > 0:
        ref = state if anchor is True or anchor is None else anchor
        rows.append(off)
        cols.append(off)
        vals.append(np.full(3, ANCHOR_WEIGHT))
        dev = np.array([
            state.translations[0, 0] - ref.translations[0, 0],
            state.translations[0, 1] - ref.translations[0, 1],
            wrap_angle(state.thetas[0] - ref.thetas[0]),
        ])
        b[:3] += ANCHOR_WEIGHT * dev

    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * n, 3 * n)
    ).tocsc()
    return H, b, chi2


def _spd_solve(H: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    try:
        lu = splu(sp.csc_matrix(H), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from None
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("non-finite solution of the normal equations")
    return x


def _apply(state: SolveState, delta: np.ndarray) -> SolveState:
    d = delta.reshape(-1, 3)
    return SolveState(wrap_angle(state.thetas + d[:, 2]), state.translations + d[:, :2])


def gauss_newton(graph: PoseGraph, init: SolveState, max_iters: int = 100) -> SolveReport:
    start = time.perf_counter()
    anchor = init.copy()
    state = init.copy()
    trace = [objective_F(graph, state)]
    converged, message, it = False, "max iterations reached", 0
    for it in range(1, max_iters + 1):
        H, b, chi2 = linearize(graph, state, anchor=anchor)
        try:
            delta = _spd_solve(H, -b)
        except SingularSystemError as exc:
            it -= 1
            message = f"factorization failed: {exc}"
            break
        state = _apply(state, delta)
        new = objective_F(graph, state)
        trace.append(new)
        if np.max(np.abs(delta)) < STEP_TOL:
            converged, message = True, "step below tolerance"
            break
        if new == 0.0 or abs(chi2 - new) < REL_DECREASE_TOL * chi2:
            converged, message = True, "relative decrease below tolerance"
            break
    return SolveReport(state, trace, it, time.perf_counter() - start, converged, "gn", message)


def levenberg_marquardt(
    graph: PoseGraph, init: SolveState, max_iters: int = 100, lambda0: float = 1e-4
) -> SolveReport:
    """LM with multiplicative damping ``H + lambda * diag(H)`` and gain-ratio damping updates.

    The damping follows Nielsen's schedule: after an accepted step lambda shrinks
    by up to 3x depending on how well the quadratic model predicted the decrease;
    after a rejected one it grows by a factor that doubles on every consecutive
    rejection. ``max_iters`` counts accepted and rejected iterations alike; the
    trace holds the accepted chi2 after every iteration, so it never increases.
    """
    start = time.perf_counter()
    anchor = init.copy()
    state = init.copy()
    chi2 = objective_F(graph, state)
    trace = [chi2]
    lam, nu = lambda0, 2.0
    converged, message, rejected, it = False, "max iterations reached", 0, 0
    H = b = D = None
    for it in range(1, max_iters + 1):
        if H is None:
            H, b, chi2 = linearize(graph, state, anchor=anchor)
            D = H.diagonal()
        try:
            delta = _spd_solve(H + lam * sp.diags(D), -b)
        except SingularSystemError as exc:
            it -= 1
            message = f"factorization failed: {exc}"
            break
        cand = _apply(state, delta)
        new = objective_F(graph, cand)
        predicted = float(lam * delta @ (D * delta) - b @ delta)
        if new < chi2:
            rho = (chi2 - new) / predicted if predicted > 0 else 1.0
            decrease = chi2 - new
            prev, chi2, state = chi2, new, cand
            lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            H = None
            trace.append(chi2)
            if np.max(np.abs(delta)) < STEP_TOL or chi2 == 0.0 or decrease < REL_DECREASE_TOL * prev:
                converged, message = True, "converged"
                break
        else:
            rejected += 1
            lam *= nu
            nu *= 2.0
            trace.append(chi2)
            if np.max(np.abs(delta)) < STEP_TOL:
                converged, message = True, "step below tolerance"
                break
    return SolveReport(state, trace, it, time.perf_counter() - start, converged, "lm", message, rejected)


def translation_normal_equations(graph: PoseGraph, thetas: np.ndarray):
    """Normal matrix and right-hand side of the orientation-fixed translation problem.

    Unknowns are all 2n translations; anchoring is left to the caller.
    """
    n = graph.n
    th = np.asarray(thetas, dtype=float)
    c, s = np.cos(th[graph.ei]), np.sin(th[graph.ei])
    R = np.empty((graph.m, 2, 2))
    R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1] = c, -s, s, c
    Lt = graph.info[:, :2, :2]
    W = R @ Lt @ np.transpose(R, (0, 2, 1))
    target = np.einsum("eij,ej->ei", R, graph.meas_t)  # t_j - t_i should equal R_i * meas_t
    Wt = np.einsum("eij,ej->ei", W, target)

    off = np.arange(2)
    rows, cols, vals = [], [], []
    for a, bnode, sign in ((graph.ei, graph.ei, 1.0), (graph.ej, graph.ej, 1.0),
                           (graph.ei, graph.ej, -1.0), (graph.ej, graph.ei, -1.0)):
        r = (2 * a)[:, None, None] + off[None, :, None]
        cc = (2 * bnode)[:, None, None] + off[None, None, :]
        rows.append(np.broadcast_to(r, W.shape).ravel())
        cols.append(np.broadcast_to(cc, W.shape).ravel())
        vals.append((sign * W).ravel())
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * n, 2 * n)
    ).tocsc()
    rhs = np.zeros(2 * n)
    np.add.at(rhs, (2 * graph.ej[:, None] + off).ravel(), Wt.ravel())
    np.add.at(rhs, (2 * graph.ei[:, None] + off).ravel(), -Wt.ravel())
    return A, rhs


def translation_lls(graph: PoseGraph, thetas: np.ndarray) -> np.ndarray:
    """Exact weighted least-squares translations for fixed orientations, with t_0 = (0, 0)."""
    th = np.asarray(thetas, dtype=float)
    if len(th) != graph.n:
        raise ValueError(f"got {len(th)} orientations for a graph with {graph.n} nodes")
    n = graph.n
    if n == 1:
        return np.zeros((1, 2))
    adj = sp.coo_matrix((np.ones(graph.m), (graph.ei, graph.ej)), shape=(n, n))
    ncomp, _ = connected_components(adj, directed=False)
    if ncomp != 1:
        raise SingularSystemError(f"translation system is disconnected ({ncomp} components)")
    A, rhs = translation_normal_equations(graph, th)
    A = A[2:, 2:]
    try:
        x = _spd_solve(A, rhs[2:])
    except SingularSystemError as exc:
        raise SingularSystemError(f"translation system is singular: {exc}") from None
    return np.vstack([np.zeros((1, 2)), x.reshape(-1, 2)])


def translation_objective(graph: PoseGraph, thetas: np.ndarray, translations: np.ndarray) -> float:
    """Translation part of the objective for fixed orientations."""
    e = edge_residuals(graph, SolveState(thetas, translations))[:, :2]
    return float(np.einsum("ei,eij,ej->", e, graph.info[:, :2, :2], e))
