"""Two-phase training orchestration: demo collection, offline warm-up,
online interaction with the intervention oracle, evaluation, and the
long-horizon protocol.

The serialized mode interleaves interaction and learning deterministically
(one episode, then one learner update per collected environment step), so a
full run is bit-reproducible from its seeds. The networked learner reuses
the same Learner object behind a wire protocol (see netlearn).
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .actors import (
    PolicySnapshot,
    PrimaryActor,
    RefinementActor,
    TaskEncoder,
    primary_loss,
    refinement_loss,
    sample_primary,
    sample_refined,
)
from .critics import (
    TaskCritic,
    TaskWeightConfig,
    bellman_loss,
    calql_loss,
    mean_task_q,
    task_weights,
)
from .config import TrainConfig
from .domain import (
    NULL_COMMAND,
    Observation,
    RefinementCommand,
    TalkTweakRecord,
    TaskSpec,
    Transition,
    observation_features,
)
from .env import (
    EpisodeResult,
    InterventionStreak,
    chained_reset,
    default_tasks,
    intervention_oracle,
    reset,
    rollout,
    run_long_horizon,
    scripted_expert,
)
from .numerics import AdamState, adam_step, make_rng, polyak_update
from .replay import (
    TalkTweakBuffer,
    TaskBuffers,
    merge_interventions,
    sample_online,
    sample_warmup,
)
from .talk_tweak import annotate

_MIX = 0x9E3779B97F4A7C15


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from mixed integer/string parts."""
    acc = 0
    for part in parts:
        if isinstance(part, str):
            for ch in part.encode():
                acc = (acc * 1000003 + ch) & 0xFFFFFFFFFFFFFFFF
        else:
            acc = (acc * 1000003 + int(part)) & 0xFFFFFFFFFFFFFFFF
        acc = (acc ^ (acc >> 31)) * _MIX & 0xFFFFFFFFFFFFFFFF
    return acc >> 1


def mc_return_map(episodes: Sequence[Sequence[Transition]],
                  gamma: float) -> Dict[Transition, float]:
    """Discounted return-to-go per transition, from whole demo episodes."""
    out: Dict[Transition, float] = {}
    for episode in episodes:
        ret = 0.0
        for tr in reversed(episode):
            ret = tr.reward + gamma * ret
            out[tr] = ret
    return out


def collect_demos(cfg: TrainConfig, tasks: Optional[Sequence[TaskSpec]] = None):
    """Expert demos per task; failed (noisy) episodes are redrawn.

    Returns (buffers, talk_tweak_buffer, mc_returns).
    """
    tasks = tasks or default_tasks()
    buffers = [TaskBuffers(t.id) for t in tasks]
    episodes: List[List[Transition]] = []
    for task, buf in zip(tasks, buffers):
        collected = 0
        attempt = 0
        while collected < cfg.demos_per_task:
            if attempt > 50 * cfg.demos_per_task:
                raise RuntimeError(
                    f"expert cannot complete task {task.name!r}; check env config"
                )
            seed = derive_seed(cfg.seed, "demo", task.id, attempt)
            exp_rng = make_rng(derive_seed(cfg.seed, "demo-noise", task.id, attempt))
            policy = lambda obs: scripted_expert(obs, cfg.env, exp_rng)
            transitions, result = rollout(policy, task, seed, cfg.env)
            attempt += 1
            if not result.success:
                continue
            for tr in transitions:
                buf.add_demo(tr)
            episodes.append(transitions)
            collected += 1
    return buffers, TalkTweakBuffer(), mc_return_map(episodes, cfg.gamma)


class Learner:
    """Owns all trainable state: actors, critics, optimizers, buffers."""

    def __init__(self, cfg: TrainConfig, buffers: Sequence[TaskBuffers],
                 talk_tweak: TalkTweakBuffer,
                 mc_returns: Optional[Dict[Transition, float]] = None):
        self.cfg = cfg
        self.buffers = list(buffers)
        self.by_task = {b.task_id: b for b in self.buffers}
        self.talk_tweak = talk_tweak
        self.mc_returns = mc_returns or {}
        self.encoder = TaskEncoder(derive_seed(cfg.seed, "encoder"),
                                   cfg.n_tasks, cfg.embed_dim)
        self.actor = PrimaryActor.init(derive_seed(cfg.seed, "actor"),
                                       cfg.embed_dim, cfg.hidden)
        self.refiner = RefinementActor.init(derive_seed(cfg.seed, "refiner"),
                                            cfg.hidden)
        self.critics = {
            b.task_id: TaskCritic.init(b.task_id,
                                       derive_seed(cfg.seed, "critic", b.task_id),
                                       cfg.hidden)
            for b in self.buffers
        }
        self.opt_actor = AdamState.zeros(self.actor.params.size)
        self.opt_refiner = AdamState.zeros(self.refiner.params.size)
        self.opt_critics = {i: AdamState.zeros(c.params.size)
                            for i, c in self.critics.items()}
        self.rng = make_rng(derive_seed(cfg.seed, "learner"))
        self.weight_cfg = TaskWeightConfig(cfg.weight_c, cfg.weight_eps_min,
                                           cfg.weight_eps_max)
        self.version = 0
        self.update_count = 0
        self.env_steps = 0
        self.intervened_steps = 0
        self.metrics: List[dict] = []
        self.last_losses: Dict[str, float] = {}

    # ---- data ingestion -------------------------------------------------

    def ingest_episode(self, task_id: int, episode_id: str,
                       transitions: Sequence[Transition],
                       records: Sequence[TalkTweakRecord]):
        buf = self.by_task[task_id]
        for tr in transitions:
            if tr.intervened:
                buf.add_intervention(tr)
            else:
                buf.add_rollout(tr)
        merge_interventions(buf, self.talk_tweak, episode_id, records)
        self.env_steps += len(transitions)
        self.intervened_steps += sum(tr.intervened for tr in transitions)

    def gate_open(self) -> bool:
        return all(len(b.rollouts) >= self.cfg.online_gate for b in self.buffers)

    # ---- updates ---------------------------------------------------------

    def _epsilons(self, batches: Dict[int, Sequence[Transition]]):
        if self.cfg.disable_epsilon_weighting:
            return {i: 1.0 for i in batches}, {i: 0.0 for i in batches}
        q_bars = {
            i: mean_task_q(self.critics[i], self.actor, self.encoder,
                           batch, self.cfg.noise_scale, self.rng)
            for i, batch in batches.items()
        }
        order = sorted(q_bars)
        eps = task_weights([q_bars[i] for i in order], self.weight_cfg)
        return {i: float(e) for i, e in zip(order, eps)}, q_bars

    def _actor_update(self, batches: Dict[int, Sequence[Transition]],
                      lam: Tuple[float, float]):
        eps, q_bars = self._epsilons(batches)
        loss, grad = primary_loss(self.actor, self.encoder, batches,
                                  self.critics, lam[0], lam[1],
                                  self.cfg.noise_scale, self.rng,
                                  task_weights=eps)
        self.actor.params, self.opt_actor = adam_step(
            self.opt_actor, self.actor.params, grad, self.cfg.lr_actor)
        self.last_losses["actor"] = loss
        self.last_losses["q_bars"] = q_bars
        self.last_losses["epsilons"] = eps
        return loss

    def warmup_step(self):
        """One offline step: per-task conservative critic update, then the
        shared actor at the warm-up loss weights."""
        cfg = self.cfg
        batches = sample_warmup(self.buffers, cfg.batch_size, self.rng)
        critic_losses = {}
        for task_id, batch in batches.items():
            critic = self.critics[task_id]
            mc = np.array([self.mc_returns.get(tr, 0.0) for tr in batch])
            loss, grad = calql_loss(critic, self.actor, self.encoder, batch,
                                    mc, cfg.gamma, cfg.calql_alpha,
                                    cfg.noise_scale, self.rng,
                                    cfg.calql_action_samples)
            critic.params, self.opt_critics[task_id] = adam_step(
                self.opt_critics[task_id], critic.params, grad, cfg.lr_critic)
            critic.target_params = polyak_update(critic.target_params,
                                                 critic.params, cfg.tau)
            critic_losses[task_id] = loss
        self._actor_update(batches, cfg.lambda_warmup)
        self.last_losses["critics"] = critic_losses
        self.update_count += 1

    def online_step(self):
        """One online step: per-task Bellman critic updates, shared actor at
        the online loss weights, refinement actor on talk-tweak batches."""
        cfg = self.cfg
        tagged = sample_online(self.buffers, cfg.batch_size, self.rng)
        batches = {i: [tr for tr, _ in pairs] for i, pairs in tagged.items()}
        critic_losses = {}
        for task_id, batch in batches.items():
            critic = self.critics[task_id]
            loss, grad = bellman_loss(critic, self.actor, self.encoder, batch,
                                      cfg.gamma, cfg.noise_scale, self.rng)
            critic.params, self.opt_critics[task_id] = adam_step(
                self.opt_critics[task_id], critic.params, grad, cfg.lr_critic)
            critic.target_params = polyak_update(critic.target_params,
                                                 critic.params, cfg.tau)
            critic_losses[task_id] = loss
        self._actor_update(batches, cfg.lambda_online)
        self.last_losses["critics"] = critic_losses
        if not cfg.disable_dual_actor and len(self.talk_tweak) > 0:
            idx = self.rng.integers(0, len(self.talk_tweak), size=cfg.batch_size)
            records = [self.talk_tweak.records[i] for i in idx]
            loss, grad = refinement_loss(records, self.actor, self.refiner,
                                         self.encoder, self.critics,
                                         cfg.eta[0], cfg.eta[1], cfg.eta[2],
                                         cfg.noise_scale, self.rng)
            self.refiner.params, self.opt_refiner = adam_step(
                self.opt_refiner, self.refiner.params, grad, cfg.lr_refiner)
            self.last_losses["refiner"] = loss
        self.update_count += 1

    def snapshot(self) -> PolicySnapshot:
        self.version += 1
        return PolicySnapshot(
            version=self.version,
            actor_params=self.actor.params.copy(),
            actor_spec=self.actor.spec,
            refiner_params=self.refiner.params.copy(),
            refiner_spec=self.refiner.spec,
            encoder_seed=self.encoder.seed,
            n_tasks=self.cfg.n_tasks,
            embed_dim=self.cfg.embed_dim,
            noise_scale=self.cfg.noise_scale,
        )

    def log_metrics(self, phase: str):
        entry = {
            "phase": phase,
            "update": self.update_count,
            "env_steps": self.env_steps,
            "intervention_fraction": (self.intervened_steps / self.env_steps
                                      if self.env_steps else 0.0),
            "talk_tweak_records": len(self.talk_tweak),
        }
        entry.update({k: v for k, v in self.last_losses.items()})
        self.metrics.append(entry)

    def write_metrics(self, path):
        with open(path, "a") as f:
            for entry in self.metrics:
                f.write(json.dumps(entry, default=float) + "\n")
        self.metrics.clear()


def warmup_phase(cfg: TrainConfig, learner: Learner,
                 steps: Optional[int] = None) -> PolicySnapshot:
    steps = cfg.warmup_steps if steps is None else steps
    for k in range(steps):
        learner.warmup_step()
        if k % 100 == 0:
            learner.log_metrics("warmup")
    return learner.snapshot()


# ---- interaction side ----------------------------------------------------


def make_policy(snapshot: PolicySnapshot, rng: np.random.Generator):
    """Primary-mode policy closure over a fixed snapshot."""
    actor = snapshot.primary()
    encoder = snapshot.encoder()

    def policy(obs: Observation):
        h = encoder.encode(obs)
        return sample_primary(actor, h, rng, snapshot.noise_scale)

    return policy


def episode_start_state(cfg: TrainConfig, task: TaskSpec, episode_idx: int,
                        prev_state, seed_salt: str = ""):
    """Start state for one online episode.

    Collection alternates round-robin rounds: even rounds reset every task
    fresh, odd rounds chain the tasks in sequence (each episode starts from
    the previous task's end state), covering the carried-over scene states
    long-horizon execution visits between table resets."""
    salt = (seed_salt,) if seed_salt else ()
    env_seed = derive_seed(cfg.seed, "env", *salt, task.id, episode_idx)
    if episode_idx % 2 == 1 and prev_state is not None:
        return chained_reset(task, prev_state, env_seed)
    return reset(task, env_seed, cfg.env)


def run_training_episode(snapshot: PolicySnapshot, task: TaskSpec,
                         cfg: TrainConfig, episode_idx: int,
                         seed_salt: str = "", pace_s: float = 0.0,
                         start_state=None):
    """One oracle-supervised interaction episode.

    ``seed_salt`` decorrelates parallel collectors (empty = the canonical
    single-collector stream); ``pace_s`` sleeps per step to emulate real
    interaction latency; ``start_state``, when given, replaces the fresh
    reset (chained collection) and is advanced in place so the caller can
    chain the next episode from it. Returns (transitions, talk-tweak
    records, EpisodeResult)."""
    salt = (seed_salt,) if seed_salt else ()
    env_seed = derive_seed(cfg.seed, "env", *salt, task.id, episode_idx)
    pol_rng = make_rng(derive_seed(cfg.seed, "policy", *salt, task.id,
                                   episode_idx))
    exp_rng = make_rng(derive_seed(cfg.seed, "expert", *salt, task.id,
                                   episode_idx))
    policy = make_policy(snapshot, pol_rng)
    if pace_s > 0.0:
        inner = policy

        def policy(obs):
            time.sleep(pace_s)
            return inner(obs)

    streak = InterventionStreak()

    def intervene(obs, policy_action, state):
        expert = scripted_expert(obs, cfg.env, exp_rng)
        return intervention_oracle(obs, policy_action, expert, streak, cfg.env)

    transitions, result = rollout(policy, task, env_seed, cfg.env,
                                  intervention=intervene, state=start_state)
    if cfg.disable_talk_annotation:
        records = []
    else:
        records = annotate(transitions, cfg.tt_window, cfg.tt_sigma)
    return transitions, records, result


def online_phase(cfg: TrainConfig, learner: Learner,
                 tasks: Optional[Sequence[TaskSpec]] = None,
                 max_episodes_per_task: Optional[int] = None,
                 max_env_steps: Optional[int] = None,
                 should_stop: Optional[Callable[[Learner, PolicySnapshot], bool]] = None,
                 ) -> PolicySnapshot:
    """Serialized deterministic online loop: one episode per task round-robin,
    then one learner update per collected environment step (after the
    per-task rollout gate is met)."""
    tasks = tasks or default_tasks()
    max_episodes_per_task = max_episodes_per_task or cfg.online_episodes
    max_env_steps = max_env_steps or cfg.max_env_steps
    snapshot = learner.snapshot()
    pending = 0.0
    for episode_idx in range(max_episodes_per_task):
        prev_state = None
        for task in tasks:
            start = episode_start_state(cfg, task, episode_idx, prev_state)
            transitions, records, result = run_training_episode(
                snapshot, task, cfg, episode_idx, start_state=start)
            prev_state = start
            episode_id = f"seed{cfg.seed}-task{task.id}-ep{episode_idx}"
            learner.ingest_episode(task.id, episode_id, transitions, records)
            pending += len(transitions) * cfg.updates_per_env_step
            if learner.gate_open():
                while pending >= 1.0:
                    learner.online_step()
                    pending -= 1.0
                    if learner.update_count % 100 == 0:
                        learner.log_metrics("online")
            snapshot = learner.snapshot()
        if learner.env_steps >= max_env_steps:
            break
        if should_stop is not None and should_stop(learner, snapshot):
            break
    return learner.snapshot()


# ---- evaluation ------------------------------------------------------------


class RefinementCommandOracle:
    """Mechanized evaluation-time operator: issues an axis command when the
    policy stalls (last 5 steps gained < 1 mm while > 5 mm of error remains).
    Command signs follow the remaining positional error with a sigma deadband.
    """

    def __init__(self, window: int = 5, min_progress: float = 0.001,
                 min_error: float = 0.005, deadband: float = 0.001):
        self.window = window
        self.min_progress = min_progress
        self.min_error = min_error
        self.deadband = deadband
        self.history: List[float] = []

    @staticmethod
    def _error_vector(obs: Observation) -> np.ndarray:
        if obs.attached:
            return np.asarray(obs.goal_pose[:3]) - np.asarray(obs.object_pose[:3])
        return np.asarray(obs.object_pose[:3]) - np.asarray(obs.ee_pos)

    def command(self, obs: Observation) -> RefinementCommand:
        err = self._error_vector(obs)
        dist = float(np.linalg.norm(err))
        self.history.append(dist)
        if len(self.history) <= self.window:
            return NULL_COMMAND
        progress = self.history[-1 - self.window] - self.history[-1]
        if progress >= self.min_progress or dist <= self.min_error:
            return NULL_COMMAND
        axes = tuple(0 if abs(e) <= self.deadband else (1 if e > 0 else -1)
                     for e in err)
        if axes == (0, 0, 0):
            return NULL_COMMAND
        return RefinementCommand(axes)


@dataclass
class EvalReport:
    """Success/length summary in the shape of a per-task comparison table."""

    n_trials: int
    use_refinement: bool
    per_task_success: Dict[int, float] = field(default_factory=dict)
    per_task_length: Dict[int, float] = field(default_factory=dict)
    task_names: Dict[int, str] = field(default_factory=dict)
    chain_results: Optional[List[EpisodeResult]] = None

    @property
    def average_success(self) -> float:
        vals = list(self.per_task_success.values())
        return float(np.mean(vals)) if vals else 0.0

    @property
    def average_length(self) -> float:
        vals = list(self.per_task_length.values())
        return float(np.mean(vals)) if vals else 0.0

    def render_table(self) -> str:
        mode = "w/ refinement" if self.use_refinement else "w/o refinement"
        lines = [
            f"Evaluation over {self.n_trials} trials per task ({mode})",
            f"{'Task':<18}{'Success (%)':>14}{'Episode length':>17}",
        ]
        for task_id in sorted(self.per_task_success):
            name = self.task_names.get(task_id, str(task_id))
            lines.append(
                f"{name:<18}{100.0 * self.per_task_success[task_id]:>14.1f}"
                f"{self.per_task_length[task_id]:>17.1f}"
            )
        lines.append(
            f"{'Average':<18}{100.0 * self.average_success:>14.1f}"
            f"{self.average_length:>17.1f}"
        )
        return "\n".join(lines)


def eval_episode(snapshot: PolicySnapshot, task: TaskSpec, seed: int,
                 cfg: TrainConfig, use_refinement: bool,
                 command_log: Optional[List[RefinementCommand]] = None
                 ) -> EpisodeResult:
    actor = snapshot.primary()
    refiner = snapshot.refiner()
    encoder = snapshot.encoder()
    rng = make_rng(derive_seed(seed, "eval-policy"))
    oracle = RefinementCommandOracle(deadband=cfg.tt_sigma)

    def policy(obs: Observation):
        h = encoder.encode(obs)
        if use_refinement:
            cmd = oracle.command(obs)
            if not cmd.is_null:
                if command_log is not None:
                    command_log.append(cmd)
                return sample_refined(actor, refiner, h,
                                      observation_features(obs), cmd, rng,
                                      snapshot.noise_scale)
        return sample_primary(actor, h, rng, snapshot.noise_scale)

    _, result = rollout(policy, task, derive_seed(seed, "eval-env"), cfg.env)
    return result


def evaluate(snapshot: PolicySnapshot, cfg: TrainConfig, n_trials: int = 25,
             use_refinement: bool = False, seed: int = 12345,
             tasks: Optional[Sequence[TaskSpec]] = None) -> EvalReport:
    tasks = tasks or default_tasks()
    report = EvalReport(n_trials=n_trials, use_refinement=use_refinement)
    for task in tasks:
        results = [
            eval_episode(snapshot, task, derive_seed(seed, task.id, k), cfg,
                         use_refinement)
            for k in range(n_trials)
        ]
        report.per_task_success[task.id] = float(np.mean([r.success for r in results]))
        report.per_task_length[task.id] = float(np.mean([r.length for r in results]))
        report.task_names[task.id] = task.name
    return report


def evaluate_long_horizon(snapshot: PolicySnapshot, cfg: TrainConfig,
                          n_bolts: int, n_seeds: int = 10,
                          seed: int = 777) -> List[List[EpisodeResult]]:
    """Chain runs for the long-horizon protocol; one result list per seed."""
    runs = []
    for k in range(n_seeds):
        rng = make_rng(derive_seed(seed, "lh-policy", k))
        policy = make_policy(snapshot, rng)
        runs.append(run_long_horizon(policy, n_bolts,
                                     derive_seed(seed, "lh-env", k), cfg.env))
    return runs


def train(cfg: TrainConfig, out_dir: Optional[str] = None,
          warmup_steps: Optional[int] = None,
          max_episodes_per_task: Optional[int] = None):
    """collect-demos -> warm-up -> online; returns (learner, snapshot)."""
    tasks = default_tasks()
    buffers, talk_tweak, mc = collect_demos(cfg, tasks)
    learner = Learner(cfg, buffers, talk_tweak, mc)
    warmup_phase(cfg, learner, warmup_steps)
    snapshot = online_phase(cfg, learner, tasks,
                            max_episodes_per_task=max_episodes_per_task)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        learner.write_metrics(os.path.join(out_dir, "metrics.log"))
    return learner, snapshot
