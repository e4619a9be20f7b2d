"""Pose-graph data model, g2o text I/O and the scalar objectives."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .se2 import Pose2, Rotation2, chordal_from_angle, wrap_angle

log = logging.getLogger(__name__)


class G2OParseError(ValueError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line.strip()!r}")
        self.lineno = lineno


@dataclass
class SolveState:
    """Per-node estimate: ``thetas`` (n,) and ``translations`` (n, 2)."""

    thetas: np.ndarray
    translations: np.ndarray

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float).reshape(-1)
        self.translations = np.asarray(self.translations, dtype=float).reshape(-1, 2)
        if len(self.thetas) != len(self.translations):
            raise ValueError(
                f"thetas ({len(self.thetas)}) and translations ({len(self.translations)}) differ in length"
            )

    @property
    def n(self) -> int:
        return len(self.thetas)

    @classmethod
    def zeros(cls, n: int) -> SolveState:
        return cls(np.zeros(n), np.zeros((n, 2)))

    @classmethod
    def from_poses(cls, poses: Iterable[Pose2]) -> SolveState:
        poses = list(poses)
        return cls(np.array([p.theta for p in poses]), np.array([p.t for p in poses]).reshape(-1, 2))

    def copy(self) -> SolveState:
        return SolveState(self.thetas.copy(), self.translations.copy())

    def pose(self, k: int) -> Pose2:
        return Pose2(self.translations[k], Rotation2(self.thetas[k]))

    def poses(self) -> list[Pose2]:
        return [self.pose(k) for k in range(self.n)]

    def as_xyt(self) -> np.ndarray:
        return np.column_stack([self.translations, self.thetas])


@dataclass
class EdgeSE2:
    i: int
    j: int
    meas_t: np.ndarray
    meas_theta: float
    info: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.i, self.j = int(self.i), int(self.j)
        self.meas_t = np.asarray(self.meas_t, dtype=float).reshape(2)
        self.meas_theta = float(self.meas_theta)
        self.info = np.asarray(self.info, dtype=float).reshape(3, 3)
        if self.i == self.j:
            raise ValueError(f"self-loop edge on node {self.i}")
        if not np.allclose(self.info, self.info.T, atol=1e-9, rtol=0):
            raise ValueError(f"information matrix of edge ({self.i},{self.j}) is not symmetric")
        if np.any(np.diag(self.info) < 0):
            raise ValueError(f"information matrix of edge ({self.i},{self.j}) has a negative diagonal")

    @property
    def measurement(self) -> Pose2:
        return Pose2(self.meas_t, Rotation2(self.meas_theta))


class PoseGraph:
    """Nodes (current estimate) plus relative SE(2) measurement edges.

    Edge data is mirrored into flat arrays (``ei``, ``ej``, ``meas_t``,
    ``meas_theta``, ``info``) for the vectorised objective and solvers.
    """

    def __init__(self, estimate: SolveState, edges: list[EdgeSE2]):
        self.estimate = estimate
        self.edges = list(edges)
        n = estimate.n
        for e in self.edges:
            if not (0 <= e.i < n and 0 <= e.j < n):
                raise ValueError(f"edge ({e.i},{e.j}) references a node outside 0..{n - 1}")
        m = len(self.edges)
        self.ei = np.array([e.i for e in self.edges], dtype=np.int64)
        self.ej = np.array([e.j for e in self.edges], dtype=np.int64)
        self.meas_t = np.array([e.meas_t for e in self.edges], dtype=float).reshape(m, 2)
        self.meas_theta = np.array([e.meas_theta for e in self.edges], dtype=float)
        self.info = np.array([e.info for e in self.edges], dtype=float).reshape(m, 3, 3)
        self.skipped_lines = 0

    @property
    def n(self) -> int:
        return self.estimate.n

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def nodes(self) -> list[Pose2]:
        return self.estimate.poses()

    @property
    def odometry_edges(self) -> list[EdgeSE2]:
        return [e for e in self.edges if e.j == e.i + 1]

    def with_estimate(self, state: SolveState) -> PoseGraph:
        g = PoseGraph(state.copy(), self.edges)
        return g

    def __eq__(self, other):
        if not isinstance(other, PoseGraph):
            return NotImplemented
        return (
            np.array_equal(self.estimate.thetas, other.estimate.thetas)
            and np.array_equal(self.estimate.translations, other.estimate.translations)
            and np.array_equal(self.ei, other.ei)
            and np.array_equal(self.ej, other.ej)
            and np.array_equal(self.meas_t, other.meas_t)
            and np.array_equal(self.meas_theta, other.meas_theta)
            and np.array_equal(self.info, other.info)
        )

    def __repr__(self):
        return f"PoseGraph(n={self.n}, m={self.m})"


# --- g2o I/O -----------------------------------------------------------------

_UPPER = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def _floats(tokens, lineno, line, count):
    if len(tokens) < count:
        raise G2OParseError(lineno, line, f"expected {count} numeric fields, got {len(tokens)}")
    try:
        vals = [float(tok) for tok in tokens[:count]]
    except ValueError as exc:
        raise G2OParseError(lineno, line, f"malformed number ({exc})") from None
    if not all(math.isfinite(v) for v in vals):
        raise G2OParseError(lineno, line, "non-finite value")
    return vals


def _int(tok, lineno, line):
    try:
        return int(tok)
    except ValueError:
        raise G2OParseError(lineno, line, f"malformed node id {tok!r}") from None


def parse_g2o(stream: TextIO | str | Path) -> PoseGraph:
    """Read VERTEX_SE2 / EDGE_SE2 records. Node ids are renumbered densely in sorted order."""
    if isinstance(stream, (str, Path)):
        with open(stream) as fh:
            return parse_g2o(fh)

    vertices: dict[int, tuple[float, float, float]] = {}
    raw_edges = []
    skipped = 0
    for lineno, line in enumerate(stream, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        tokens = body.split()
        tag = tokens[0]
        if tag == "VERTEX_SE2":
            if len(tokens) < 2:
                raise G2OParseError(lineno, line, "missing vertex id")
            vid = _int(tokens[1], lineno, line)
            vertices[vid] = tuple(_floats(tokens[2:], lineno, line, 3))
        elif tag == "EDGE_SE2":
            if len(tokens) < 3:
                raise G2OParseError(lineno, line, "missing edge endpoints")
            i, j = _int(tokens[1], lineno, line), _int(tokens[2], lineno, line)
            vals = _floats(tokens[3:], lineno, line, 9)
            if i == j:
                raise G2OParseError(lineno, line, "self-loop edge")
            info = np.zeros((3, 3))
            for (r, c), v in zip(_UPPER, vals[3:]):
                info[r, c] = info[c, r] = v
            raw_edges.append((i, j, vals[0], vals[1], vals[2], info))
        else:
            skipped += 1

    if skipped:
        log.warning("skipped %d unsupported g2o line(s)", skipped)

    ids = set(vertices)
    for i, j, *_ in raw_edges:
        ids.update((i, j))
    order = sorted(ids)
    index = {vid: k for k, vid in enumerate(order)}
    n = len(order)
    thetas = np.zeros(n)
    trans = np.zeros((n, 2))
    for vid, (x, y, th) in vertices.items():
        k = index[vid]
        trans[k] = (x, y)
        thetas[k] = wrap_angle(th)

    edges = [
        EdgeSE2(index[i], index[j], (dx, dy), wrap_angle(dth), info)
        for i, j, dx, dy, dth, info in raw_edges
    ]
    graph = PoseGraph(SolveState(thetas, trans), edges)
    graph.skipped_lines = skipped
    return graph


def loads_g2o(text: str) -> PoseGraph:
    return parse_g2o(io.StringIO(text))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_g2o(graph: PoseGraph, stream: TextIO | None = None, *, state: SolveState | None = None) -> str:
    """Serialise ``graph`` (optionally with a replacement estimate) as g2o text.

    Floats use ``repr`` so a parse/write/parse round trip is exact.
    """
    state = graph.estimate if state is None else state
    lines = []
    for k in range(graph.n):
        x, y = state.translations[k]
        lines.append(f"VERTEX_SE2 {k} {_fmt(x)} {_fmt(y)} {_fmt(state.thetas[k])}")
    for e in graph.edges:
        info = " ".join(_fmt(e.info[r, c]) for r, c in _UPPER)
        lines.append(
            f"EDGE_SE2 {e.i} {e.j} {_fmt(e.meas_t[0])} {_fmt(e.meas_t[1])} {_fmt(e.meas_theta)} {info}"
        )
    text = "".join(line + "\n" for line in lines)
    if stream is not None:
        stream.write(text)
    return text


def save_g2o(graph: PoseGraph, path, *, state: SolveState | None = None) -> None:
    Path(path).write_text(write_g2o(graph, state=state))


# --- initialisation and objectives -----------------------------------------


def odometry_init(graph: PoseGraph) -> SolveState:
    """Chain the (k, k+1) measurements from pose 0 at the origin."""
    odo: dict[int, int] = {}
    for idx, e in enumerate(graph.edges):
        if e.j == e.i + 1 and e.i not in odo:
            odo[e.i] = idx
    thetas = np.zeros(graph.n)
    trans = np.zeros((graph.n, 2))
    for k in range(graph.n - 1):
        if k not in odo:
            raise ValueError(f"odometry gap: no edge ({k}, {k + 1})")
        idx = odo[k]
        c, s = math.cos(thetas[k]), math.sin(thetas[k])
        dx, dy = graph.meas_t[idx]
        trans[k + 1] = trans[k] + (c * dx - s * dy, s * dx + c * dy)
        thetas[k + 1] = wrap_angle(thetas[k] + graph.meas_theta[idx])
    return SolveState(thetas, trans)


def _check_dims(graph: PoseGraph, state: SolveState):
    if state.n != graph.n:
        raise ValueError(f"state has {state.n} poses, graph has {graph.n}")


def edge_angle_residuals(graph: PoseGraph, thetas: np.ndarray) -> np.ndarray:
    """wrap(theta_j - theta_i - meas_theta) for every edge."""
    return wrap_angle(thetas[graph.ej] - thetas[graph.ei] - graph.meas_theta)


def edge_residuals(graph: PoseGraph, state: SolveState) -> np.ndarray:
    """(m, 3) residuals ``[R_i^T (t_j - t_i) - meas_t ; wrapped angle error]``."""
    _check_dims(graph, state)
    th_i = state.thetas[graph.ei]
    c, s = np.cos(th_i), np.sin(th_i)
    d = state.translations[graph.ej] - state.translations[graph.ei]
    ex = c * d[:, 0] + s * d[:, 1] - graph.meas_t[:, 0]
    ey = -s * d[:, 0] + c * d[:, 1] - graph.meas_t[:, 1]
    eth = edge_angle_residuals(graph, state.thetas)
    return np.column_stack([ex, ey, eth]).reshape(-1, 3)


def objective_F(graph: PoseGraph, state: SolveState) -> float:
    """Information-weighted sum of squared edge residuals (g2o's chi2)."""
    e = edge_residuals(graph, state)
    return float(np.einsum("ei,eij,ej->", e, graph.info, e))


def orientation_cost(graph: PoseGraph, state: SolveState | np.ndarray) -> float:
    """Root-sum-square of unweighted chordal rotation residuals."""
    thetas = state.thetas if isinstance(state, SolveState) else np.asarray(state, dtype=float)
    if len(thetas) != graph.n:
        raise ValueError(f"state has {len(thetas)} poses, graph has {graph.n}")
    ch = chordal_from_angle(edge_angle_residuals(graph, thetas))
    return float(np.sqrt(np.sum(ch * ch)))
