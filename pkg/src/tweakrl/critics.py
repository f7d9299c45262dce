"""Per-task Q-functions: conservative warm-up loss on demonstrations,
standard Bellman loss online, target networks, and the adaptive multi-task
weighting used by the shared actor's Q term."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from .actors import PrimaryActor, TaskEncoder, normalize_action
from .domain import (
    ACTION_DIM,
    OBS_FEATURE_DIM,
    Transition,
    observation_features,
)
from .numerics import (
    MlpSpec,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    mlp_init,
)

DEFAULT_CRITIC_HIDDEN = (64, 64)


def critic_spec(hidden: Sequence[int] = DEFAULT_CRITIC_HIDDEN) -> MlpSpec:
    return MlpSpec((OBS_FEATURE_DIM + ACTION_DIM, *hidden, 1),
                   activation="tanh", output_activation="identity")


@dataclass
class TaskCritic:
    """Online and target parameters for one task's Q-function."""

    task_id: int
    params: np.ndarray
    target_params: np.ndarray
    spec: MlpSpec

    @classmethod
    def init(cls, task_id: int, seed: int,
             hidden: Sequence[int] = DEFAULT_CRITIC_HIDDEN) -> "TaskCritic":
        spec = critic_spec(hidden)
        params = mlp_init(spec, seed)
        return cls(task_id, params, params.copy(), spec)

    def target(self) -> "TaskCritic":
        return TaskCritic(self.task_id, self.target_params,
                          self.target_params, self.spec)


@dataclass
class TaskWeightConfig:
    """Constants of the adaptive per-task weighting."""

    c: float = 0.1
    eps_min: float = 0.8
    eps_max: float = 1.2

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.eps_min >= self.eps_max:
            raise ValueError("eps_min must be below eps_max")


def q_value(critic: TaskCritic, obs_features: np.ndarray,
            action_norm: np.ndarray) -> float:
    """Scalar Q for one (state features, net-space action) pair."""
    x = np.concatenate([obs_features, action_norm])
    return float(mlp_forward(critic.params, critic.spec, x)[0])


def _q_batch(params: np.ndarray, spec: MlpSpec, feats: np.ndarray,
             actions: np.ndarray) -> np.ndarray:
    x = np.concatenate([feats, actions], axis=1)
    return mlp_forward(params, spec, x)[:, 0]


def _policy_actions(actor: PrimaryActor, h: np.ndarray, noise_scale: float,
                    rng: np.random.Generator) -> np.ndarray:
    w = noise_scale * rng.standard_normal((h.shape[0], ACTION_DIM))
    x = np.concatenate([h, w], axis=1)
    return mlp_forward(actor.params, actor.spec, x)


def bellman_targets(critic: TaskCritic, actor: PrimaryActor,
                    encoder: TaskEncoder, batch: Sequence[Transition],
                    gamma: float, noise_scale: float,
                    rng: np.random.Generator) -> np.ndarray:
    """y = r + gamma * (1 - done) * Q_target(s', pi(h', w')); constants."""
    h_next = encoder.encode_batch([tr.next_obs for tr in batch])
    a_next = _policy_actions(actor, h_next, noise_scale, rng)
    feats_next = np.stack([observation_features(tr.next_obs) for tr in batch])
    q_next = _q_batch(critic.target_params, critic.spec, feats_next, a_next)
    r = np.array([tr.reward for tr in batch])
    not_done = np.array([0.0 if tr.done else 1.0 for tr in batch])
    return r + gamma * not_done * q_next


def bellman_loss(critic: TaskCritic, actor: PrimaryActor, encoder: TaskEncoder,
                 batch: Sequence[Transition], gamma: float, noise_scale: float,
                 rng: np.random.Generator):
    """Mean squared TD error; returns (loss, grad wrt online psi)."""
    if not batch:
        raise ValueError("bellman_loss needs a non-empty batch")
    m = len(batch)
    targets = bellman_targets(critic, actor, encoder, batch, gamma,
                              noise_scale, rng)
    feats = np.stack([observation_features(tr.obs) for tr in batch])
    actions = np.stack([normalize_action(tr.action) for tr in batch])
    x = np.concatenate([feats, actions], axis=1)
    q, cache = mlp_forward_cached(critic.params, critic.spec, x)
    err = q[:, 0] - targets
    loss = float(np.mean(err * err))
    upstream = (2.0 * err / m)[:, None]
    grad, _ = mlp_backward(critic.params, critic.spec, cache, upstream)
    return loss, grad


def calql_loss(critic: TaskCritic, actor: PrimaryActor, encoder: TaskEncoder,
               batch: Sequence[Transition], mc_returns: np.ndarray,
               gamma: float, alpha: float, noise_scale: float,
               rng: np.random.Generator, n_action_samples: int = 4):
    """Bellman loss plus the calibrated conservative term.

    Conservative term: alpha * ( E_{s, a~pi}[ max(Q(s, a), mc_return(s)) ]
    - E_{(s,a)~batch}[ Q(s, a) ] ). The max clips the push-down at the
    reference value; where the return branch is active the gradient is zero.
    """
    if mc_returns is None or len(mc_returns) != len(batch):
        raise ValueError("calql_loss needs one Monte-Carlo return per transition")
    m = len(batch)
    loss, grad = bellman_loss(critic, actor, encoder, batch, gamma,
                              noise_scale, rng)
    if alpha == 0.0:
        return loss, grad
    feats = np.stack([observation_features(tr.obs) for tr in batch])
    h = encoder.encode_batch([tr.obs for tr in batch])
    mc = np.asarray(mc_returns, dtype=np.float64)

    push_up_val = 0.0
    for _ in range(n_action_samples):
        a_pi = _policy_actions(actor, h, noise_scale, rng)
        x = np.concatenate([feats, a_pi], axis=1)
        q_pi, cache = mlp_forward_cached(critic.params, critic.spec, x)
        calibrated = np.maximum(q_pi[:, 0], mc)
        push_up_val += float(np.mean(calibrated))
        active = (q_pi[:, 0] > mc).astype(np.float64)
        upstream = (alpha * active / (n_action_samples * m))[:, None]
        g, _ = mlp_backward(critic.params, critic.spec, cache, upstream)
        grad = grad + g
    push_up_val /= n_action_samples

    actions = np.stack([normalize_action(tr.action) for tr in batch])
    x = np.concatenate([feats, actions], axis=1)
    q_data, cache = mlp_forward_cached(critic.params, critic.spec, x)
    push_down_val = float(np.mean(q_data[:, 0]))
    upstream = np.full((m, 1), -alpha / m)
    g, _ = mlp_backward(critic.params, critic.spec, cache, upstream)
    grad = grad + g

    loss += alpha * (push_up_val - push_down_val)
    return loss, grad


def mean_task_q(critic: TaskCritic, actor: PrimaryActor, encoder: TaskEncoder,
                batch: Sequence[Transition], noise_scale: float,
                rng: np.random.Generator) -> float:
    """Monte-Carlo Q-bar estimate over a task batch, fresh noise per state."""
    if not batch:
        raise ValueError("mean_task_q needs a non-empty batch")
    feats = np.stack([observation_features(tr.obs) for tr in batch])
    h = encoder.encode_batch([tr.obs for tr in batch])
    a_pi = _policy_actions(actor, h, noise_scale, rng)
    return float(np.mean(_q_batch(critic.params, critic.spec, feats, a_pi)))


def task_weights(q_bars: Sequence[float],
                 cfg: TaskWeightConfig = TaskWeightConfig()) -> np.ndarray:
    """eps_i = clip( sum_j Qbar_j / (N * Qbar_i + N * c), eps_min, eps_max ).

    A denominator crossing zero (transiently negative Qbar) evaluates to
    +/-inf and clips to the corresponding bound; 0/0 is treated as neutral
    weight 1 before clipping.
    """
    q = np.asarray(q_bars, dtype=np.float64)
    if q.ndim != 1 or q.size < 1:
        raise ValueError("q_bars must be a non-empty 1-d sequence")
    n = q.size
    total = q.sum()
    denom = n * (q + cfg.c)
    raw = np.empty(n)
    for i in range(n):
        if denom[i] != 0.0:
            raw[i] = total / denom[i]
        elif total > 0.0:
            raw[i] = np.inf
        elif total < 0.0:
            raw[i] = -np.inf
        else:
            raw[i] = 1.0
    return np.clip(raw, cfg.eps_min, cfg.eps_max)
