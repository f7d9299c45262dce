"""Dual-actor policy stack: frozen task-embedding encoder, noise-conditioned
single-step primary policy, refinement policy over latent noise means,
prefix-masked KV pooling, and both actors' losses with exact gradients.

Losses and critics operate in a normalized action space: the primary net's
tanh output y in (-1,1)^7 maps to physical deltas as
dpos = 0.01*y[:3], drot = 0.05*y[3:6], grip = (y[6]+1)/2.
Demonstrated actions are normalized with the inverse map before regression.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .domain import (
    ACTION_DIM,
    Action,
    COMMAND_ENCODING_DIM,
    DPOS_LIMIT,
    DROT_LIMIT,
    NULL_COMMAND,
    OBS_FEATURE_DIM,
    Observation,
    RefinementCommand,
    TalkTweakRecord,
    Transition,
    encode_command,
    observation_features,
)
from .numerics import (
    MlpSpec,
    gaussian_sample,
    make_rng,
    mlp_backward,
    mlp_forward,
    mlp_forward_cached,
    mlp_init,
)

DEFAULT_EMBED_DIM = 32
DEFAULT_HIDDEN = (64, 64)

_DELTA_SCALE = np.array([DPOS_LIMIT] * 3 + [DROT_LIMIT] * 3)


def normalize_action(action: Action) -> np.ndarray:
    """Physical action -> net-space vector in [-1, 1]^7."""
    vec = action.to_vector()
    return np.concatenate([vec[:6] / _DELTA_SCALE, [2.0 * vec[6] - 1.0]])


def action_from_normalized(y: np.ndarray) -> Action:
    """Net-space vector -> physical Action (clamped to bounds)."""
    y = np.clip(np.asarray(y, dtype=np.float64), -1.0, 1.0)
    deltas = y[:6] * _DELTA_SCALE
    return Action(tuple(deltas[:3]), tuple(deltas[3:6]), (y[6] + 1.0) / 2.0)


class TaskEncoder:
    """Frozen random affine-plus-tanh map of (normalized obs, one-hot task).

    Stands in for a pretrained backbone: fixed for the lifetime of a run,
    reproducible from (seed, n_tasks, dim).
    """

    def __init__(self, seed: int, n_tasks: int = 3, dim: int = DEFAULT_EMBED_DIM):
        self.seed = seed
        self.n_tasks = n_tasks
        self.dim = dim
        in_dim = OBS_FEATURE_DIM + n_tasks
        rng = make_rng(seed)
        # Pass-through rows keep the raw normalized features recoverable
        # (tanh is near-linear at this scale); extra rows are random mixtures.
        n_eye = min(dim, in_dim)
        eye = np.eye(in_dim)[:n_eye]
        extra = rng.normal(0.0, 1.0 / np.sqrt(in_dim),
                           size=(max(dim - n_eye, 0), in_dim))
        self.weights = np.vstack([eye, extra])
        self._cache: dict = {}

    def _input(self, obs: Observation) -> np.ndarray:
        onehot = np.zeros(self.n_tasks)
        onehot[obs.task_id] = 1.0
        return np.concatenate([observation_features(obs), onehot])

    def encode(self, obs: Observation) -> np.ndarray:
        h = self._cache.get(obs)
        if h is None:
            h = np.tanh(self.weights @ self._input(obs))
            h.flags.writeable = False
            if len(self._cache) < (1 << 17):
                self._cache[obs] = h
        return h

    def encode_batch(self, observations: Sequence[Observation]) -> np.ndarray:
        return np.stack([self.encode(o) for o in observations])


def pooled_prefix_embedding(k_tensor: np.ndarray, v_tensor: np.ndarray,
                            mask: np.ndarray) -> np.ndarray:
    """Mask-guided average pooling over the token axis.

    k_tensor, v_tensor: (T, H, D); mask: (T,) of {0,1} with at least one 1.
    Returns flatten(K_pool) ++ flatten(V_pool), dimension 2*H*D.
    """
    k_tensor = np.asarray(k_tensor, dtype=np.float64)
    v_tensor = np.asarray(v_tensor, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if k_tensor.shape != v_tensor.shape or k_tensor.ndim != 3:
        raise ValueError("K and V must share a (T, H, D) shape")
    if mask.shape != (k_tensor.shape[0],):
        raise ValueError("mask length must equal the token count")
    total = mask.sum()
    if total == 0:
        raise ValueError("prefix mask selects no tokens")
    k_pool = np.tensordot(mask, k_tensor, axes=(0, 0)) / total
    v_pool = np.tensordot(mask, v_tensor, axes=(0, 0)) / total
    return np.concatenate([k_pool.ravel(), v_pool.ravel()])


def primary_spec(embed_dim: int = DEFAULT_EMBED_DIM,
                 hidden: Sequence[int] = DEFAULT_HIDDEN) -> MlpSpec:
    return MlpSpec((embed_dim + ACTION_DIM, *hidden, ACTION_DIM),
                   activation="tanh", output_activation="tanh")


def refiner_spec(hidden: Sequence[int] = DEFAULT_HIDDEN) -> MlpSpec:
    return MlpSpec((OBS_FEATURE_DIM + COMMAND_ENCODING_DIM, *hidden, ACTION_DIM),
                   activation="tanh", output_activation="identity")


@dataclass
class PrimaryActor:
    """Noise-conditioned single-step policy f_theta(h, w) -> action."""

    params: np.ndarray
    spec: MlpSpec

    @classmethod
    def init(cls, seed: int, embed_dim: int = DEFAULT_EMBED_DIM,
             hidden: Sequence[int] = DEFAULT_HIDDEN) -> "PrimaryActor":
        spec = primary_spec(embed_dim, hidden)
        return cls(mlp_init(spec, seed), spec)


@dataclass
class RefinementActor:
    """Predicts the latent noise mean from (state features, command)."""

    params: np.ndarray
    spec: MlpSpec

    @classmethod
    def init(cls, seed: int, hidden: Sequence[int] = DEFAULT_HIDDEN) -> "RefinementActor":
        spec = refiner_spec(hidden)
        return cls(mlp_init(spec, seed), spec)

    def noise_mean(self, obs_features: np.ndarray, cmd: RefinementCommand) -> np.ndarray:
        x = np.concatenate([obs_features, encode_command(cmd)])
        return mlp_forward(self.params, self.spec, x)


def primary_action_raw(actor: PrimaryActor, h: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Net-space action for one (embedding, noise) pair."""
    return mlp_forward(actor.params, actor.spec, np.concatenate([h, w]))


def primary_action(actor: PrimaryActor, h: np.ndarray, w: np.ndarray) -> Action:
    return action_from_normalized(primary_action_raw(actor, h, w))


def sample_primary(actor: PrimaryActor, h: np.ndarray,
                   rng: np.random.Generator, noise_scale: float) -> Action:
    """Primary mode: w ~ N(0, K^2 I)."""
    w = gaussian_sample(rng, np.zeros(ACTION_DIM), noise_scale, ACTION_DIM)
    return primary_action(actor, h, w)


def sample_refined(actor: PrimaryActor, refiner: RefinementActor,
                   h: np.ndarray, obs_features: np.ndarray,
                   cmd: RefinementCommand, rng: np.random.Generator,
                   noise_scale: float) -> Action:
    """Refined mode: w ~ N(pi_phi(s, l_rf), K^2 I).

    Uses the same base-draw call sequence as sample_primary, so a shared rng
    state with a zero mean reproduces the primary-mode action bit-exactly.
    """
    mu = refiner.noise_mean(obs_features, cmd)
    w = gaussian_sample(rng, mu, noise_scale, ACTION_DIM)
    return primary_action(actor, h, w)


def _critic_action_grad(critic, obs_features: np.ndarray, y: np.ndarray):
    """Q values and dQ/daction for a batch; critic params stay frozen.

    Returns (q: (M,), dq_dy: (M, 7)).
    """
    x = np.concatenate([obs_features, y], axis=1)
    q, cache = mlp_forward_cached(critic.params, critic.spec, x)
    ones = np.ones_like(q)
    _, dx = mlp_backward(critic.params, critic.spec, cache, ones)
    return q[:, 0], dx[:, obs_features.shape[1]:]


def primary_loss(actor: PrimaryActor, encoder: TaskEncoder,
                 task_batches: Dict[int, Sequence[Transition]],
                 critics: Dict[int, "object"],
                 lam_bc: float, lam_q: float,
                 noise_scale: float, rng: np.random.Generator,
                 task_weights: Optional[Dict[int, float]] = None):
    """Composite BC + weighted-Q loss for the shared primary actor.

    Critic parameters are frozen; gradients flow through the critic's action
    input into theta. Returns (loss, grad wrt theta).
    """
    if not task_batches or all(len(b) == 0 for b in task_batches.values()):
        raise ValueError("primary_loss needs at least one non-empty batch")
    n_tasks = len(task_batches)
    total = sum(len(b) for b in task_batches.values())
    loss_bc = 0.0
    loss_q = 0.0
    grad = np.zeros_like(actor.params)
    for task_id, batch in task_batches.items():
        if not batch:
            continue
        m = len(batch)
        h = encoder.encode_batch([tr.obs for tr in batch])
        w = noise_scale * rng.standard_normal((m, ACTION_DIM))
        x = np.concatenate([h, w], axis=1)
        y, cache = mlp_forward_cached(actor.params, actor.spec, x)
        a_star = np.stack([normalize_action(tr.action) for tr in batch])
        diff = y - a_star
        loss_bc += np.sum(diff * diff)
        upstream = lam_bc * 2.0 * diff / total
        if lam_q != 0.0:
            eps = 1.0 if task_weights is None else task_weights[task_id]
            feats = np.stack([observation_features(tr.obs) for tr in batch])
            q, dq_dy = _critic_action_grad(critics[task_id], feats, y)
            loss_q += -eps * float(np.mean(q)) / n_tasks
            upstream = upstream + lam_q * (-eps / (n_tasks * m)) * dq_dy
        pgrad, _ = mlp_backward(actor.params, actor.spec, cache, upstream)
        grad += pgrad
    loss = lam_bc * loss_bc / total + lam_q * loss_q
    return loss, grad


def refinement_loss(records: Sequence[TalkTweakRecord], actor: PrimaryActor,
                    refiner: RefinementActor, encoder: TaskEncoder,
                    critics: Dict[int, "object"],
                    eta_bc: float, eta_q: float, eta_reg: float,
                    noise_scale: float, rng: np.random.Generator):
    """BC + Q + null-consistency loss for the refinement actor.

    The primary actor theta is frozen; gradients reach phi through the noise
    mean via the primary network's action/noise Jacobian. The regularization
    branches share one base normal draw per record (reparameterization), and
    its mean comes from the "[null]" command input. Returns (loss, grad phi).
    """
    if not records:
        raise ValueError("refinement_loss needs a non-empty batch")
    m = len(records)
    feats = np.stack([observation_features(r.obs) for r in records])
    h = encoder.encode_batch([r.obs for r in records])
    cmd_enc = np.stack([encode_command(r.command) for r in records])
    null_enc = np.tile(encode_command(NULL_COMMAND), (m, 1))
    a_star = np.stack([normalize_action(r.action) for r in records])
    z = rng.standard_normal((m, ACTION_DIM))

    x_cmd = np.concatenate([feats, cmd_enc], axis=1)
    mu_cmd, ref_cache_cmd = mlp_forward_cached(refiner.params, refiner.spec, x_cmd)
    x_null = np.concatenate([feats, null_enc], axis=1)
    mu_null, ref_cache_null = mlp_forward_cached(refiner.params, refiner.spec, x_null)

    embed_dim = h.shape[1]

    def primary(w):
        return mlp_forward_cached(actor.params, actor.spec,
                                  np.concatenate([h, w], axis=1))

    y_cmd, cache_cmd = primary(mu_cmd + noise_scale * z)
    y_reg, cache_reg = primary(mu_null + noise_scale * z)
    y_base, _ = primary(noise_scale * z)

    diff_bc = y_cmd - a_star
    loss = eta_bc * float(np.mean(np.sum(diff_bc * diff_bc, axis=1)))
    up_y_cmd = eta_bc * 2.0 * diff_bc / m

    if eta_q != 0.0:
        # group by task for the per-task critics
        task_ids = np.array([r.obs.task_id for r in records])
        q_all = np.zeros(m)
        dq_all = np.zeros((m, ACTION_DIM))
        for task_id in np.unique(task_ids):
            idx = np.where(task_ids == task_id)[0]
            q, dq = _critic_action_grad(critics[int(task_id)], feats[idx], y_cmd[idx])
            q_all[idx] = q
            dq_all[idx] = dq
        loss += eta_q * (-float(np.mean(q_all)))
        up_y_cmd = up_y_cmd + eta_q * (-1.0 / m) * dq_all

    diff_reg = y_reg - y_base
    loss += eta_reg * float(np.mean(np.sum(diff_reg * diff_reg, axis=1)))
    up_y_reg = eta_reg * 2.0 * diff_reg / m

    _, dx_cmd = mlp_backward(actor.params, actor.spec, cache_cmd, up_y_cmd)
    d_mu_cmd = dx_cmd[:, embed_dim:]
    _, dx_reg = mlp_backward(actor.params, actor.spec, cache_reg, up_y_reg)
    d_mu_null = dx_reg[:, embed_dim:]

    grad_cmd, _ = mlp_backward(refiner.params, refiner.spec, ref_cache_cmd, d_mu_cmd)
    grad_null, _ = mlp_backward(refiner.params, refiner.spec, ref_cache_null, d_mu_null)
    return loss, grad_cmd + grad_null


@dataclass
class PolicySnapshot:
    """Versioned parameter set synchronized from learner to actors."""

    version: int
    actor_params: np.ndarray
    actor_spec: MlpSpec
    refiner_params: np.ndarray
    refiner_spec: MlpSpec
    encoder_seed: int
    n_tasks: int
    embed_dim: int
    noise_scale: float

    def primary(self) -> PrimaryActor:
        return PrimaryActor(self.actor_params, self.actor_spec)

    def refiner(self) -> RefinementActor:
        return RefinementActor(self.refiner_params, self.refiner_spec)

    def encoder(self) -> TaskEncoder:
        return TaskEncoder(self.encoder_seed, self.n_tasks, self.embed_dim)
