"""Message-passing graph summary that, together with one edge residual, forms the agent's observation.

Each directed edge (i, j) sends ``beta * ||R_i R_ij - R_j||_F`` to node j; node costs
are the sums of incoming messages. Their mean over nodes goes through a 1 -> 20
linear layer, and the cursor edge's wrapped angular residual is appended.
"""

from __future__ import annotations

import numpy as np

from .diffnet import ParameterBlock, kaiming_init
from .graph import PoseGraph, SolveState, edge_angle_residuals
from .se2 import Rotation2, chordal_from_angle, edge_angular_residual

EMBED_DIM = 20
STATE_DIM = EMBED_DIM + 1


def message(R_i: Rotation2, R_j: Rotation2, R_meas: Rotation2, beta: float) -> float:
    return float(beta * chordal_from_angle(edge_angular_residual(R_i, R_j, R_meas)))


def _thetas(x) -> np.ndarray:
    return x.thetas if isinstance(x, SolveState) else np.asarray(x, dtype=float)


def edge_chordal(graph: PoseGraph, thetas) -> np.ndarray:
    """Unscaled message of every edge (chordal distance of its rotation residual)."""
    return chordal_from_angle(edge_angle_residuals(graph, _thetas(thetas)))


def aggregate(graph: PoseGraph, thetas, beta: float, symmetric: bool = False) -> np.ndarray:
    """Per-node cost: sum of messages over incoming edges (both directions if ``symmetric``)."""
    msg = beta * edge_chordal(graph, thetas)
    cost = np.zeros(graph.n)
    np.add.at(cost, graph.ej, msg)
    if symmetric:
        np.add.at(cost, graph.ei, msg)
    return cost


def mean_cost_feature(graph: PoseGraph, thetas, symmetric: bool = False) -> float:
    """Mean node cost at beta = 1; the encoder output is linear in beta times this."""
    total = float(np.sum(edge_chordal(graph, thetas)))
    return (2.0 if symmetric else 1.0) * total / graph.n


class EncoderParams:
    """Learnable encoder weights: scalar ``beta`` and the 1 -> 20 linear layer."""

    def __init__(self, dim: int = EMBED_DIM, rng: np.random.Generator | None = None, beta: float = 1.0):
        self.dim = dim
        self.params = ParameterBlock({"beta": (), "W": (dim,), "b": (dim,)})
        self.params["beta"][...] = beta
        if rng is not None:
            self.params["W"][...] = kaiming_init((dim,), 1, rng)

    @property
    def beta(self) -> float:
        return float(self.params["beta"])

    @property
    def W(self) -> np.ndarray:
        return self.params["W"]

    @property
    def b(self) -> np.ndarray:
        return self.params["b"]

    def copy(self) -> EncoderParams:
        out = EncoderParams(self.dim)
        out.params.values[:] = self.params.values
        return out


def encode_features(feature, residual, enc: EncoderParams) -> np.ndarray:
    """Observation(s) from raw (mean cost, edge residual) pairs; works on any leading shape."""
    feature = np.asarray(feature, dtype=float)
    residual = np.asarray(residual, dtype=float)
    emb = (enc.beta * feature)[..., None] * enc.W + enc.b
    return np.concatenate([emb, residual[..., None]], axis=-1)


def encode_backward(dstate: np.ndarray, feature, enc: EncoderParams) -> None:
    """Accumulate encoder gradients for upstream ``dstate`` (shape ``(..., dim + 1)``)."""
    feature = np.asarray(feature, dtype=float)
    demb = dstate[..., : enc.dim].reshape(-1, enc.dim)
    f = feature.reshape(-1)
    g = enc.params
    g.grad("b")[...] += demb.sum(axis=0)
    fw = demb.T @ f  # sum over samples of demb * feature
    g.grad("W")[...] += enc.beta * fw
    g.grad("beta")[...] += float(fw @ enc.W)


def encode_state(graph: PoseGraph, state, cursor: int, enc: EncoderParams, symmetric: bool = False) -> np.ndarray:
    """Length-21 observation for the configuration ``state`` with the cursor on edge ``cursor``."""
    if graph.n == 0 or graph.m == 0:
        raise ValueError("cannot encode an empty graph")
    if not 0 <= cursor < graph.m:
        raise IndexError(f"cursor {cursor} outside 0..{graph.m - 1}")
    th = _thetas(state)
    feature = mean_cost_feature(graph, th, symmetric)
    res = edge_angle_residuals(graph, th)[cursor]
    return encode_features(feature, res, enc)
