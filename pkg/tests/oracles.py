"""Independent reference computations used by several test modules.

Nothing here calls into the solver code paths it checks.
"""

import itertools
import math

import numpy as np
from scipy.optimize import minimize

from rlpgo.graph import EdgeSE2, PoseGraph, SolveState


def wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def dense_translation_lls(graph, thetas):
    """Weighted LS for translations with t_0 = 0, built as a dense stacked system."""
    n, m = graph.n, graph.m
    A = np.zeros((2 * m, 2 * n))
    y = np.zeros(2 * m)
    for k, e in enumerate(graph.edges):
        c, s = math.cos(thetas[e.i]), math.sin(thetas[e.i])
        RiT = np.array([[c, s], [-s, c]])
        Lc = np.linalg.cholesky(e.info[:2, :2] + 0.0).T  # upper factor: L = Lc^T Lc
        A[2 * k:2 * k + 2, 2 * e.j:2 * e.j + 2] = Lc @ RiT
        A[2 * k:2 * k + 2, 2 * e.i:2 * e.i + 2] = -Lc @ RiT
        y[2 * k:2 * k + 2] = Lc @ e.meas_t
    A = A[:, 2:]
    N = A.T @ A
    x = np.linalg.solve(N, A.T @ y)
    return np.vstack([np.zeros((1, 2)), x.reshape(-1, 2)])


def _batched_profile(graph, free_thetas):
    """F minimised over translations for a batch of orientation vectors (theta_0 = 0).

    Requires block-diagonal information matrices (no translation/rotation coupling).
    """
    P = free_thetas.shape[0]
    n, m = graph.n, graph.m
    th = np.concatenate([np.zeros((P, 1)), free_thetas], axis=1)
    A = np.zeros((P, 2 * m, 2 * n))
    y = np.zeros((P, 2 * m))
    rot = np.zeros(P)
    for k, e in enumerate(graph.edges):
        c, s = np.cos(th[:, e.i]), np.sin(th[:, e.i])
        RiT = np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2)
        Lc = np.linalg.cholesky(e.info[:2, :2]).T
        blk = np.einsum("ab,pbc->pac", Lc, RiT)
        A[:, 2 * k:2 * k + 2, 2 * e.j:2 * e.j + 2] += blk
        A[:, 2 * k:2 * k + 2, 2 * e.i:2 * e.i + 2] -= blk
        y[:, 2 * k:2 * k + 2] = Lc @ e.meas_t
        rot += e.info[2, 2] * wrap(th[:, e.j] - th[:, e.i] - e.meas_theta) ** 2
    A = A[:, :, 2:]
    N = np.einsum("pki,pkj->pij", A, A)
    rhs = np.einsum("pki,pk->pi", A, y)
    x = np.linalg.solve(N, rhs[..., None])[..., 0]
    r = np.einsum("pki,pi->pk", A, x) - y
    return rot + np.sum(r * r, axis=1)


def brute_force_minimum(graph, grid=48, refine=4):
    """Global minimum of F: exhaustive angle grid, then Nelder-Mead polish of the best cells."""
    free = graph.n - 1
    axis = np.linspace(-np.pi, np.pi, grid, endpoint=False)
    best = []
    for chunk in _chunks(itertools.product(axis, repeat=free), 20000):
        arr = np.array(chunk)
        vals = _batched_profile(graph, arr)
        order = np.argsort(vals)[:refine]
        best.extend((vals[i], arr[i]) for i in order)
    best.sort(key=lambda t: t[0])

    def f(v):
        return float(_batched_profile(graph, np.asarray(v)[None, :])[0])

    results = []
    for _, start in best[:refine]:
        res = minimize(f, start, method="Nelder-Mead",
                       options={"xatol": 1e-11, "fatol": 1e-12, "maxiter": 4000, "maxfev": 8000})
        results.append((res.fun, res.x))
    fun, x = min(results, key=lambda t: t[0])
    return fun, np.concatenate([[0.0], wrap(x)])


def _chunks(it, size):
    buf = []
    for item in it:
        buf.append(item)
        if len(buf) == size:
            yield buf
            buf = []
    if buf:
        yield buf


def four_pose_graph(seed, sigma_R=0.15, sigma_t=0.1, extent=2.0):
    """Random 4-pose graph with 3 odometry edges and 2 loop closures, unit-ish weights."""
    rng = np.random.default_rng(seed)
    th = np.concatenate([[0.0], rng.uniform(-np.pi, np.pi, 3)])
    t = np.vstack([[0.0, 0.0], rng.uniform(-extent, extent, (3, 2))])
    pairs = [(0, 1), (1, 2), (2, 3), (0, 2), (1, 3)]
    info = np.diag([1 / sigma_t**2, 1 / sigma_t**2, 1 / sigma_R**2])
    edges = []
    for i, j in pairs:
        c, s = math.cos(th[i]), math.sin(th[i])
        rel_t = np.array([[c, s], [-s, c]]) @ (t[j] - t[i]) + rng.normal(0, sigma_t, 2)
        rel_th = float(wrap(th[j] - th[i] + rng.normal(0, sigma_R)))
        edges.append(EdgeSE2(i, j, rel_t, rel_th, info))
    return PoseGraph(SolveState.zeros(4), edges)


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        d = np.zeros_like(x)
        d.flat[k] = h
        g.flat[k] = (f(x + d) - f(x - d)) / (2 * h)
    return g


def probe_gradient(loss, arr, grad, rng, probes=20, h=1e-6):
    """Worst relative error between ``grad`` and central differences of ``loss()``.

    ``arr`` is perturbed in place at ``probes`` random entries and restored.
    """
    flat = arr.reshape(-1)
    g = np.asarray(grad).reshape(-1)
    worst = 0.0
    for k in rng.choice(flat.size, size=min(probes, flat.size), replace=False):
        old = flat[k]
        flat[k] = old + h
        up = loss()
        flat[k] = old - h
        dn = loss()
        flat[k] = old
        num = (up - dn) / (2 * h)
        scale = max(abs(num), abs(g[k]))
        if scale < 1e-7:
            continue
        worst = max(worst, abs(num - g[k]) / scale)
    return worst
