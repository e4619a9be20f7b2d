"""Seeded Manhattan-world pose-graph generator.

Randomness comes from :class:`Xoshiro256`, an explicit xoshiro256** stream
seeded through splitmix64, with Gaussians drawn by Marsaglia's polar method.
Both are specified bit-for-bit, so a seed gives the same graph everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import EdgeSE2, PoseGraph, SolveState, odometry_init
from .se2 import Pose2, Rotation2, wrap_angle

_MASK = (1 << 64) - 1
INFO_FLOOR = 1e6


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256:
    """xoshiro256** 1.0 (Blackman & Vigna), seeded by splitmix64."""

    def __init__(self, seed: int):
        x = seed & _MASK
        s = []
        for _ in range(4):
            x = (x + 0x9E3779B97F4A7C15) & _MASK
            z = x
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
            s.append(z ^ (z >> 31))
        self.s = s
        self._spare: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, k: int) -> int:
        """Unbiased integer in [0, k) by rejection on the top bits."""
        if k <= 0:
            raise ValueError("k must be positive")
        bits = max(1, (k - 1).bit_length())
        while True:
            r = self.next_u64() >> (64 - bits)
            if r < k:
                return r

    def normal(self) -> float:
        """Standard normal via the Marsaglia polar method (pairs cached)."""
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        while True:
            u = 2.0 * self.uniform() - 1.0
            v = 2.0 * self.uniform() - 1.0
            q = u * u + v * v
            if 0.0 < q < 1.0:
                break
        f = math.sqrt(-2.0 * math.log(q) / q)
        self._spare = v * f
        return u * f


@dataclass(frozen=True)
class EnvParams:
    n: int = 20
    sigma_R: float = 0.3
    sigma_t: float = 0.01
    d: float = 3.0
    lc: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.sigma_R < 0 or self.sigma_t < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if self.d <= 0:
            raise ValueError("inter-nodal distance d must be positive")
        if not 0.0 <= self.lc <= 1.0:
            raise ValueError("loop-closure probability must lie in [0, 1]")

    def replace(self, **kw) -> EnvParams:
        return EnvParams(**{**self.__dict__, **kw})


# Training environments (n, sigma_R, sigma_t, d, lc) with (cycles, action range).
TRAINING_ENVS = {
    1: (EnvParams(20, 0.3, 0.01, 3.0, 0.5), 7, 0.25),
    2: (EnvParams(20, 0.3, 0.01, 3.0, 0.5), 8, 0.25),
    3: (EnvParams(20, 0.2, 0.1495, 1.0, 0.5), 5, 0.4),
    4: (EnvParams(20, 0.2, 0.1495, 1.0, 0.5), 6, 0.25),
    5: (EnvParams(20, 0.1, 0.01, 10.0, 0.5), 6, 0.25),
}


def _info(sigma_t: float, sigma_R: float) -> np.ndarray:
    wt = 1.0 / sigma_t**2 if sigma_t > 0 else INFO_FLOOR
    wr = 1.0 / sigma_R**2 if sigma_R > 0 else INFO_FLOOR
    return np.diag([wt, wt, wr])


def _walk(rng: Xoshiro256, n: int, d: float) -> list[Pose2]:
    # headings are multiples of pi/2; each step turns left, right or goes straight
    poses = [Pose2.from_xyt(0.0, 0.0, 0.0)]
    heading = 0
    x = y = 0
    for _ in range(n - 1):
        turn = rng.randbelow(3) - 1
        heading = (heading + turn) % 4
        dx, dy = ((1, 0), (0, 1), (-1, 0), (0, -1))[heading]
        x, y = x + dx, y + dy
        poses.append(Pose2.from_xyt(x * d, y * d, wrap_angle(heading * math.pi / 2)))
    return poses


def _noisy(rng: Xoshiro256, rel: Pose2, p: EnvParams) -> tuple[np.ndarray, float]:
    nx = rng.normal() * p.sigma_t
    ny = rng.normal() * p.sigma_t
    nth = rng.normal() * p.sigma_R
    return rel.t + np.array([nx, ny]), wrap_angle(rel.theta + nth)


def generate(params: EnvParams) -> tuple[PoseGraph, SolveState]:
    """Random grid walk with odometry and probabilistic loop closures.

    Returns the graph (estimate = odometry chain) and the ground truth.
    """
    p = params
    rng = Xoshiro256(p.seed)
    gt = _walk(rng, p.n, p.d)
    info = _info(p.sigma_t, p.sigma_R)
    edges: list[EdgeSE2] = []
    for k in range(p.n - 1):
        t, th = _noisy(rng, gt[k].between(gt[k + 1]), p)
        edges.append(EdgeSE2(k, k + 1, t, th, info))
    radius = 1.5 * p.d
    for k in range(2, p.n):
        if rng.uniform() >= p.lc:
            continue
        cand = [
            i for i in range(k - 1)
            if float(np.hypot(*(gt[i].t - gt[k].t))) <= radius + 1e-9
        ]
        if not cand:
            continue
        i = cand[rng.randbelow(len(cand))]
        t, th = _noisy(rng, gt[i].between(gt[k]), p)
        edges.append(EdgeSE2(i, k, t, th, info))

    truth = SolveState.from_poses(gt)
    graph = PoseGraph(SolveState.zeros(p.n), edges)
    graph.estimate = odometry_init(graph)
    return graph, truth


def noiseless_twin(graph: PoseGraph, truth: SolveState) -> PoseGraph:
    """Same topology and weights, measurements replaced by exact relatives of ``truth``."""
    edges = []
    for e in graph.edges:
        rel = truth.pose(e.i).between(truth.pose(e.j))
        edges.append(EdgeSE2(e.i, e.j, rel.t, rel.theta, e.info))
    return PoseGraph(truth.copy(), edges)
