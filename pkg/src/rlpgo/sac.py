"""Recurrent soft actor-critic over the pose-graph environment.

Networks are ``dense -> LSTM -> heads``: the policy reads ``[s_t ; a_{t-1}]`` and
emits a tanh-squashed Gaussian, the critics read ``[s_t ; a_t ; a_{t-1}]``.
Actions fed to the networks are squashed, ``tanh(u)`` in (-1, 1); the environment
scales them by its action range. Replay keeps whole episodes and trains on
windows cut from them, each unrolled from a zero recurrent state.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .diffnet import (
    AdamState,
    LSTMState,
    ParameterBlock,
    RecurrentNet,
    adam_step,
    ema_update,
    load_checkpoint,
    save_checkpoint,
    tanh_gaussian_backward,
    tanh_gaussian_logprob,
    tanh_gaussian_sample,
)
from .encoder import STATE_DIM, EncoderParams, encode_backward, encode_features
from .env import EpisodeConfig, PGOEnv
from .graph import PoseGraph, SolveState
from .synth import EnvParams, generate

log = logging.getLogger(__name__)

ACT_DIM = 2


@dataclass
class TrainConfig:
    gamma: float = 1.0
    tau: float = 1.0e-2
    lr: float = 3.0e-4
    batch: int = 128
    alpha_init: float = 1.0
    auto_alpha: bool = True
    target_entropy: float = -float(ACT_DIM)
    updates_per_episode: int | None = None  # None: one update per environment step
    bptt_window: int | None = None  # None: whole episodes
    hidden: int = 512
    lstm: int = 512
    twin_critics: bool = True
    reward_scale: float = 1.0
    grad_clip: float | None = None
    buffer_episodes: int = 1000
    warmup_episodes: int = 0
    train_encoder: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch < 1:
            raise ValueError("batch must be at least 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.bptt_window is not None and self.bptt_window < 1:
            raise ValueError("bptt_window must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def desk(cls, seed: int = 0, **overrides) -> TrainConfig:
        """Small networks and short BPTT windows so 300 episodes fit in minutes on one CPU."""
        base = dict(hidden=64, lstm=64, batch=16, bptt_window=16, updates_per_episode=16,
                    reward_scale=0.01, alpha_init=0.1, lr=1e-3, seed=seed)
        base.update(overrides)
        return cls(**base)


# --- replay ---------------------------------------------------------------------------------


@dataclass
class EpisodeRecord:
    """One episode: T actions/rewards and T + 1 observations stored as raw encoder inputs."""

    features: np.ndarray  # (T + 1,) mean node cost at beta = 1
    residuals: np.ndarray  # (T + 1,) cursor-edge angular residual
    actions: np.ndarray  # (T, 2) squashed actions
    rewards: np.ndarray  # (T,)
    dones: np.ndarray  # (T,)

    def __post_init__(self):
        T = len(self.rewards)
        if self.actions.shape != (T, ACT_DIM) or len(self.dones) != T:
            raise ValueError("inconsistent episode arrays")
        if len(self.features) != T + 1 or len(self.residuals) != T + 1:
            raise ValueError("episode needs T + 1 observations")

    @property
    def length(self) -> int:
        return len(self.rewards)


@dataclass
class Batch:
    """Time-major windows. Observation arrays have one more step than action arrays."""

    features: np.ndarray  # (W + 1, B)
    residuals: np.ndarray  # (W + 1, B)
    prev_actions: np.ndarray  # (W + 1, B, 2); prev_actions[k] is the action before obs k
    actions: np.ndarray  # (W, B, 2)
    rewards: np.ndarray  # (W, B)
    dones: np.ndarray  # (W, B)
    mask: np.ndarray  # (W, B)

    @property
    def shape(self):
        return self.rewards.shape


class ReplayBuffer:
    def __init__(self, capacity: int = 1000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.episodes: list[EpisodeRecord] = []
        self._next = 0

    def __len__(self):
        return len(self.episodes)

    def add(self, ep: EpisodeRecord) -> None:
        if len(self.episodes) < self.capacity:
            self.episodes.append(ep)
        else:
            self.episodes[self._next] = ep
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch: int, window: int | None, rng: np.random.Generator) -> Batch:
        """Uniform episodes, then a uniform window inside each; short ones are zero-padded and masked."""
        if not self.episodes:
            raise ValueError("cannot sample from an empty buffer")
        picks = rng.integers(len(self.episodes), size=batch)
        eps = [self.episodes[k] for k in picks]
        W = window if window is not None else max(e.length for e in eps)
        out = Batch(
            np.zeros((W + 1, batch)), np.zeros((W + 1, batch)), np.zeros((W + 1, batch, ACT_DIM)),
            np.zeros((W, batch, ACT_DIM)), np.zeros((W, batch)), np.zeros((W, batch)), np.zeros((W, batch)),
        )
        for b, ep in enumerate(eps):
            T = ep.length
            start = int(rng.integers(T - W + 1)) if T > W else 0
            L = min(W, T - start)
            sl = slice(start, start + L)
            out.features[: L + 1, b] = ep.features[start:start + L + 1]
            out.residuals[: L + 1, b] = ep.residuals[start:start + L + 1]
            out.actions[:L, b] = ep.actions[sl]
            out.rewards[:L, b] = ep.rewards[sl]
            out.dones[:L, b] = ep.dones[sl]
            out.mask[:L, b] = 1.0
            if start > 0:
                out.prev_actions[0, b] = ep.actions[start - 1]
            out.prev_actions[1:L + 1, b] = ep.actions[sl]
        return out


# --- policies -------------------------------------------------------------------------------


class Policy(Protocol):
    def initial_state(self): ...

    def act(self, state: np.ndarray, prev_action: np.ndarray, lstm_state, deterministic: bool = False):
        """Returns ``(u, logprob, lstm_state')`` with ``u`` the pre-squash action."""


class SACAgent:
    def __init__(self, config: TrainConfig | None = None, rng: np.random.Generator | None = None):
        self.config = cfg = config or TrainConfig()
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        r = self.rng
        self.policy = RecurrentNet(STATE_DIM + ACT_DIM, cfg.hidden, cfg.lstm, {"mu": ACT_DIM, "log_std": ACT_DIM}, r)
        n_q = 2 if cfg.twin_critics else 1
        self.critics = [RecurrentNet(STATE_DIM + 2 * ACT_DIM, cfg.hidden, cfg.lstm, {"q": 1}, r) for _ in range(n_q)]
        self.targets = [q.params.copy() for q in self.critics]
        self.encoder = EncoderParams(rng=r)
        self.log_alpha = ParameterBlock({"log_alpha": ()})
        self.log_alpha.values[0] = math.log(cfg.alpha_init)
        kw = dict(lr=cfg.lr)
        self._opt = {
            "policy": AdamState.for_params(self.policy.params, **kw),
            "encoder": AdamState.for_params(self.encoder.params, **kw),
            "alpha": AdamState.for_params(self.log_alpha, **kw),
        }
        for k, q in enumerate(self.critics):
            self._opt[f"q{k}"] = AdamState.for_params(q.params, **kw)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha.values[0])

    # acting ---------------------------------------------------------------------------------

    def initial_state(self) -> LSTMState:
        return self.policy.initial_state(1)

    def act(self, state, prev_action, lstm_state: LSTMState, deterministic: bool = False):
        x = np.concatenate([np.asarray(state, float), np.asarray(prev_action, float)])[None, None, :]
        outs, new_state, _ = self.policy.forward(x, lstm_state)
        mu = outs["mu"][0, 0]
        log_std = outs["log_std"][0, 0]
        if deterministic:
            u = mu.copy()
        else:
            u = mu + np.exp(np.clip(log_std, -20, 2)) * self.rng.normal(size=ACT_DIM)
        return u, float(tanh_gaussian_logprob(mu, log_std, u)), new_state

    # learning -------------------------------------------------------------------------------

    def _blocks(self):
        out = {"policy": self.policy.params, "encoder": self.encoder.params, "alpha": self.log_alpha}
        for k, q in enumerate(self.critics):
            out[f"q{k}"] = q.params
        return out

    def zero_grad(self):
        for b in self._blocks().values():
            b.zero_grad()

    def encode(self, batch: Batch) -> np.ndarray:
        return encode_features(batch.features, batch.residuals, self.encoder)

    def policy_pass(self, S: np.ndarray, batch: Batch, eps: np.ndarray) -> dict:
        X = np.concatenate([S, batch.prev_actions], axis=-1)
        outs, _, cache = self.policy.forward(X)
        u, a, logp, scache = tanh_gaussian_sample(outs["mu"], outs["log_std"], eps)
        return {"u": u, "a": a, "logp": logp, "cache": cache, "scache": scache, "raw_log_std": outs["log_std"]}

    def critic_targets(self, S: np.ndarray, pol: dict, batch: Batch, alpha: float | None = None) -> np.ndarray:
        cfg = self.config
        alpha = self.alpha if alpha is None else alpha
        X = np.concatenate([S[1:], pol["a"][1:], batch.prev_actions[1:]], axis=-1)
        qs = [q.forward(X, params=tp)[0]["q"][..., 0] for q, tp in zip(self.critics, self.targets)]
        soft = np.minimum.reduce(qs) - alpha * pol["logp"][1:]
        return cfg.reward_scale * batch.rewards + cfg.gamma * (1.0 - batch.dones) * soft

    def critic_loss(self, S: np.ndarray, y: np.ndarray, batch: Batch, backward: bool = True):
        """Masked mean squared Bellman error summed over critics; returns ``(loss, dS)``."""
        X = np.concatenate([S[:-1], batch.actions, batch.prev_actions[:-1]], axis=-1)
        n = max(batch.mask.sum(), 1.0)
        loss, dS = 0.0, np.zeros_like(S)
        for q in self.critics:
            outs, _, cache = q.forward(X)
            diff = (outs["q"][..., 0] - y) * batch.mask
            loss += float(np.sum(diff * diff) / n)
            if backward:
                dX = q.backward({"q": (2.0 * diff / n)[..., None]}, cache)
                dS[:-1] += dX[..., :STATE_DIM]
        return loss, dS

    def policy_loss(self, S_pol: np.ndarray, S_q: np.ndarray, pol: dict, batch: Batch,
                    alpha: float | None = None, backward: bool = True):
        """``mean(alpha * logp - min Q)`` over the window. Returns ``(loss, dS_pol)``.

        Critic parameters receive no gradient; the critics' state input ``S_q`` is treated as constant.
        """
        alpha = self.alpha if alpha is None else alpha
        W = batch.rewards.shape[0]
        a = pol["a"][:W]
        X = np.concatenate([S_q[:-1], a, batch.prev_actions[:-1]], axis=-1)
        n = max(batch.mask.sum(), 1.0)
        runs = [q.forward(X) for q in self.critics]
        qs = np.stack([r[0]["q"][..., 0] for r in runs])
        which = np.argmin(qs, axis=0)
        qmin = np.min(qs, axis=0)
        logp = pol["logp"][:W]
        loss = float(np.sum((alpha * logp - qmin) * batch.mask) / n)
        if not backward:
            return loss, None
        da = np.zeros_like(pol["a"])
        for k, (q, r) in enumerate(zip(self.critics, runs)):
            dq = -(batch.mask * (which == k)) / n
            dX = q.backward({"q": dq[..., None]}, r[2], accumulate=False)
            da[:W] += dX[..., STATE_DIM:STATE_DIM + ACT_DIM]
        dlogp = np.zeros(pol["logp"].shape)
        dlogp[:W] = alpha * batch.mask / n
        dmu, dls = tanh_gaussian_backward(dlogp, da, pol["scache"], pol["raw_log_std"])
        dX = self.policy.backward({"mu": dmu, "log_std": dls}, pol["cache"])
        return loss, dX[..., :STATE_DIM]

    def _clip(self, block: ParameterBlock):
        c = self.config.grad_clip
        if c is not None:
            norm = float(np.linalg.norm(block.grads))
            if norm > c:
                block.grads *= c / norm

    def update(self, buffer: ReplayBuffer) -> dict:
        """One gradient step on all networks from a sampled batch, then the target EMA."""
        if len(buffer) == 0:
            return {}
        cfg = self.config
        batch = buffer.sample(cfg.batch, cfg.bptt_window, self.rng)
        eps = self.rng.normal(size=(batch.rewards.shape[0] + 1, batch.rewards.shape[1], ACT_DIM))
        self.zero_grad()
        alpha = self.alpha
        S = self.encode(batch)
        pol = self.policy_pass(S, batch, eps)
        y = self.critic_targets(S, pol, batch, alpha)
        c_loss, dS_c = self.critic_loss(S, y, batch)
        p_loss, dS_p = self.policy_loss(S, S, pol, batch, alpha)
        n = max(batch.mask.sum(), 1.0)
        W = batch.rewards.shape[0]
        mean_logp = float(np.sum(pol["logp"][:W] * batch.mask) / n)
        if cfg.auto_alpha:
            self.log_alpha.grads[0] = -(mean_logp + cfg.target_entropy)
        if cfg.train_encoder:
            encode_backward(dS_c + dS_p, batch.features, self.encoder)
        for name, blk in self._blocks().items():
            if name == "alpha" and not cfg.auto_alpha:
                continue
            if name == "encoder" and not cfg.train_encoder:
                continue
            self._clip(blk)
            adam_step(blk, self._opt[name])
        for q, tp in zip(self.critics, self.targets):
            ema_update(tp, q.params, cfg.tau)
        self.updates += 1
        return {"critic_loss": c_loss, "policy_loss": p_loss, "alpha": alpha, "entropy": -mean_logp}

    # persistence ------------------------------------------------------------------------------

    def save(self, path, meta: dict | None = None) -> None:
        blocks = {"policy": self.policy.params, "encoder": self.encoder.params, "log_alpha": self.log_alpha}
        for k, (q, tp) in enumerate(zip(self.critics, self.targets)):
            blocks[f"q{k}"] = q.params
            blocks[f"q{k}_target"] = tp
        save_checkpoint(path, blocks, {"config": asdict(self.config), **(meta or {})})

    @classmethod
    def load(cls, path) -> SACAgent:
        blocks, meta = load_checkpoint(path)
        cfg = TrainConfig.from_dict(meta["config"])
        agent = cls(cfg, np.random.default_rng(cfg.seed))
        agent.policy.params.load_values(blocks["policy"].values)
        agent.encoder.params.load_values(blocks["encoder"].values)
        agent.log_alpha.load_values(blocks["log_alpha"].values)
        for k, (q, tp) in enumerate(zip(agent.critics, agent.targets)):
            q.params.load_values(blocks[f"q{k}"].values)
            tp.load_values(blocks[f"q{k}_target"].values)
        return agent


# --- rollouts, training, evaluation ------------------------------------------------------------


def rollout(env: PGOEnv, policy: Policy, deterministic: bool = False, graph: PoseGraph | None = None,
            init: SolveState | None = None):
    """Run one full episode. Returns ``(EpisodeRecord, total_reward, first EnvStep, last EnvStep)``."""
    out = first = env.reset(graph, init)
    h = policy.initial_state()
    prev = np.zeros(ACT_DIM)
    feats, ress = [out.info["feature"]], [out.info["residual"]]
    acts, rews, dones = [], [], []
    while not out.done:
        u, _, h = policy.act(out.state, prev, h, deterministic)
        out = env.step(u)
        prev = np.tanh(u)
        acts.append(prev)
        rews.append(out.reward)
        dones.append(float(out.done))
        feats.append(out.info["feature"])
        ress.append(out.info["residual"])
    rec = EpisodeRecord(np.array(feats), np.array(ress), np.array(acts).reshape(-1, ACT_DIM),
                        np.array(rews), np.array(dones))
    return rec, float(np.sum(rec.rewards)), first, out


@dataclass
class EnvFactory:
    """Fresh random graph per episode from fixed generator parameters."""

    params: EnvParams = field(default_factory=EnvParams)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)

    def graph_seed(self, base_seed: int, episode: int) -> int:
        return int(np.random.SeedSequence([base_seed, episode]).generate_state(1)[0])

    def __call__(self, base_seed: int, episode: int) -> tuple[PoseGraph, int]:
        s = self.graph_seed(base_seed, episode)
        return generate(self.params.replace(seed=s))[0], s


class RandomPolicy:
    """Standard-normal pre-squash actions, used for warm-up episodes."""

    def __init__(self, rng):
        self.rng = rng

    def initial_state(self):
        return None

    def act(self, state, prev_action, lstm_state, deterministic=False):
        u = self.rng.normal(size=ACT_DIM)
        return u, float(tanh_gaussian_logprob(np.zeros(2), np.zeros(2), u)), None


CURVE_COLUMNS = ["episode", "graph_seed", "edges", "steps", "cumulative_reward", "initial_oc",
                 "final_oc", "alpha", "critic_loss", "policy_loss"]


@dataclass
class TrainResult:
    agent: SACAgent
    curve: list[dict]
    wall_time: float

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r["cumulative_reward"] for r in self.curve])


def train(factory: EnvFactory, config: TrainConfig, episodes: int, checkpoint: str | Path | None = None,
          curve_csv: str | Path | None = None, agent: SACAgent | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Collect one stochastic episode on a fresh graph, store it, then run the configured updates; repeat."""
    start = time.perf_counter()
    agent = agent or SACAgent(config)
    buffer = ReplayBuffer(config.buffer_episodes)
    curve: list[dict] = []
    env = None
    warm = RandomPolicy(agent.rng)
    for ep in range(episodes):
        graph, gseed = factory(config.seed, ep)
        if env is None:
            env = PGOEnv(graph, factory.episode, agent.encoder)
        policy = warm if ep < config.warmup_episodes else agent
        rec, total, first, last = rollout(env, policy, graph=graph)
        buffer.add(rec)
        n_up = config.updates_per_episode if config.updates_per_episode is not None else rec.length
        diag: dict = {}
        losses = []
        for _ in range(n_up):
            diag = agent.update(buffer)
            losses.append((diag["critic_loss"], diag["policy_loss"]))
        row = {
            "episode": ep, "graph_seed": gseed, "edges": graph.m, "steps": rec.length,
            "cumulative_reward": total, "initial_oc": first.info["oc"],
            "final_oc": last.info["oc"], "alpha": agent.alpha,
            "critic_loss": float(np.mean([c for c, _ in losses])) if losses else float("nan"),
            "policy_loss": float(np.mean([p for _, p in losses])) if losses else float("nan"),
        }
        curve.append(row)
        if progress:
            progress(row)
        log.debug("episode %d reward %.1f", ep, total)
    if checkpoint is not None and episodes > 0:
        agent.save(checkpoint, {"episodes": episodes, "env": asdict(factory.params),
                                "episode_config": asdict(factory.episode)})
    if curve_csv is not None:
        write_curve(curve_csv, curve)
    return TrainResult(agent, curve, time.perf_counter() - start)


def write_curve(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


@dataclass
class EvalResult:
    best_state: SolveState
    best_F: float
    mean_F: float
    mean_time: float
    run_F: list[float]
    run_time: list[float]
    final_oc: list[float]


def evaluate(graph: PoseGraph, policy: Policy, episode: EpisodeConfig, runs: int = 10,
             cycles_multiplier: int = 1, init: SolveState | None = None) -> EvalResult:
    """Deterministic episodes, each finished by the translation solve; reports best and mean F."""
    if runs < 1:
        raise ValueError("runs must be positive")
    cfg = EpisodeConfig(**{**asdict(episode), "cycles": episode.cycles * cycles_multiplier,
                           "deterministic_eval": True})
    enc = getattr(policy, "encoder", None)
    env = PGOEnv(graph, cfg, enc, init=init)
    best, Fs, times, ocs = None, [], [], []
    for _ in range(runs):
        t0 = time.perf_counter()
        _, _, _, last = rollout(env, policy, deterministic=True)
        est = env.finalize()
        times.append(time.perf_counter() - t0)
        Fs.append(env.final_F)
        ocs.append(last.info["oc"])
        if best is None or env.final_F < best[1]:
            best = (est, env.final_F)
    mean_F = Fs[0] if min(Fs) == max(Fs) else math.fsum(Fs) / len(Fs)
    return EvalResult(best[0], best[1], mean_F, float(np.mean(times)), Fs, times, ocs)
