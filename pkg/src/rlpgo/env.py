"""Edge-by-edge orientation refinement posed as an episodic decision process.

A cursor walks the edges in storage order. Each step rotates both endpoints of
the cursor edge by a bounded amount, then advances. Reward is driven by the
orientation cost; translations are recovered by one linear solve at the end.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncoderParams, encode_features
from .graph import PoseGraph, SolveState, edge_angle_residuals, objective_F
from .se2 import chordal_from_angle, wrap_angle
from .solvers import translation_lls

BASE_REWARD = 100.0
BONUS = 25.0
LADDER_SIZE = 6
ABSOLUTE_THRESHOLDS = tuple(10.0 ** -k for k in range(3, 3 + LADDER_SIZE))


@dataclass(frozen=True)
class EpisodeConfig:
    cycles: int = 7
    action_range: float = 0.25
    deterministic_eval: bool = False
    relative_bonus: bool = False  # thresholds at OC0 * 10^-k instead of absolute decades
    symmetric_messages: bool = False
    track_F: bool = False  # profile objective per step (costs one sparse solve per step)

    def __post_init__(self):
        if self.cycles < 1:
            raise ValueError("cycles must be a positive integer")
        if not (self.action_range > 0 and math.isfinite(self.action_range)):
            raise ValueError("action_range must be positive and finite")

    def steps(self, num_edges: int) -> int:
        return self.cycles * num_edges


@dataclass
class EnvStep:
    state: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


@dataclass
class RewardTracker:
    thresholds: tuple[float, ...] = ABSOLUTE_THRESHOLDS
    thresholds_hit: set = field(default_factory=set)

    @classmethod
    def for_episode(cls, initial_oc: float, relative: bool = False) -> RewardTracker:
        if relative:
            return cls(tuple(initial_oc * 10.0 ** -k for k in range(1, 1 + LADDER_SIZE)))
        return cls()


def reward_fn(oc: float, tracker: RewardTracker) -> float:
    """``100 / (OC + 1)`` plus 25 for every ladder threshold OC is below for the first time."""
    if not oc >= 0:
        raise ValueError(f"orientation cost must be non-negative, got {oc!r}")
    r = BASE_REWARD / (oc + 1.0)
    for k, thr in enumerate(tracker.thresholds):
        if oc < thr and k not in tracker.thresholds_hit:
            tracker.thresholds_hit.add(k)
            r += BONUS
    return r


def finalize_estimate(graph: PoseGraph, thetas) -> tuple[SolveState, float]:
    """Full estimate from orientations via the exact translation solve, and its objective."""
    th = wrap_angle(np.array(thetas, dtype=float))
    state = SolveState(th, translation_lls(graph, th))
    return state, objective_F(graph, state)


class PGOEnv:
    def __init__(
        self,
        graph: PoseGraph,
        config: EpisodeConfig | None = None,
        encoder: EncoderParams | None = None,
        init: SolveState | None = None,
        record_trace: bool = False,
    ):
        if graph.m == 0:
            raise ValueError("graph has no edges")
        self.graph = graph
        self.config = config or EpisodeConfig()
        self.encoder = encoder or EncoderParams()
        self.init = (init or graph.estimate).copy()
        self.record_trace = record_trace
        self.trace: list[dict] = []
        self.thetas = self.init.thetas.copy()
        self.cursor = 0
        self.t = 0
        self.done = True
        self.tracker = RewardTracker()
        self.final_F: float | None = None

    @property
    def steps_per_episode(self) -> int:
        return self.config.steps(self.graph.m)

    def _observe(self) -> tuple[np.ndarray, dict]:
        g = self.graph
        res = edge_angle_residuals(g, self.thetas)
        ch = chordal_from_angle(res)
        mult = 2.0 if self.config.symmetric_messages else 1.0
        feature = mult * float(np.sum(ch)) / g.n
        oc = float(np.sqrt(np.sum(ch * ch)))
        state = encode_features(feature, res[self.cursor], self.encoder)
        info = {"oc": oc, "feature": feature, "residual": float(res[self.cursor]),
                "cursor": self.cursor, "step": self.t}
        if self.config.track_F:
            info["F"] = finalize_estimate(g, self.thetas)[1]
        return state, info

    def reset(self, graph: PoseGraph | None = None, init: SolveState | None = None) -> EnvStep:
        if graph is not None:
            if graph.m == 0:
                raise ValueError("graph has no edges")
            self.graph = graph
            self.init = (init or graph.estimate).copy()
        elif init is not None:
            self.init = init.copy()
        self.thetas = self.init.thetas.copy()
        self.cursor = 0
        self.t = 0
        self.done = False
        self.final_F = None
        state, info = self._observe()
        self.tracker = RewardTracker.for_episode(info["oc"], self.config.relative_bonus)
        self.trace = []
        if self.record_trace:
            self.trace.append({"step": 0, "oc": info["oc"], "reward": 0.0, "F": info.get("F", "")})
        return EnvStep(state, 0.0, False, info)

    def applied_action(self, action) -> np.ndarray:
        u = np.asarray(action, dtype=float).reshape(-1)
        if u.shape != (2,) or not np.all(np.isfinite(u)):
            raise ValueError(f"action must be two finite numbers, got {action!r}")
        return self.config.action_range * np.tanh(u)

    def step(self, action) -> EnvStep:
        if self.done:
            raise RuntimeError("episode is done; call reset() first")
        a = self.applied_action(action)
        g = self.graph
        i, j = int(g.ei[self.cursor]), int(g.ej[self.cursor])
        acted = self.cursor
        self.thetas[i] = wrap_angle(self.thetas[i] + a[0])
        self.thetas[j] = wrap_angle(self.thetas[j] + a[1])
        self.t += 1
        self.cursor = (self.cursor + 1) % g.m
        self.done = self.t >= self.steps_per_episode
        state, info = self._observe()
        reward = reward_fn(info["oc"], self.tracker)
        info["acted_edge"] = acted
        info["applied"] = a
        if self.record_trace:
            self.trace.append({"step": self.t, "oc": info["oc"], "reward": reward, "F": info.get("F", "")})
        return EnvStep(state, reward, self.done, info)

    def finalize(self, thetas=None) -> SolveState:
        """Translation solve for ``thetas`` (default: current orientations, episode must be done)."""
        if thetas is None:
            if not self.done:
                raise RuntimeError("episode still running")
            thetas = self.thetas
        state, self.final_F = finalize_estimate(self.graph, thetas)
        return state

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["step", "oc", "reward", "F"])
            w.writeheader()
            for row in self.trace:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
