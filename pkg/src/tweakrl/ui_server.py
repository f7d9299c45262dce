"""Browser control-panel endpoint hosted by an actor process.

The operator's browser connects over a websocket and exchanges
line-delimited JSON messages:

    inbound:  {"type": "tweak_input", "dpos": [..3], "drot": [..3], "grip": f}
              {"type": "talk_input", "command_text": "move right and up"}
              {"type": "mode_toggle", "intervene": true}
              {"type": "reset_request"}
              {"type": "step_request"}       (lockstep driving, pace = 0)
    outbound: {"type": "scene_state", ...}   (one per environment step)
              {"type": "ack", "ref": <type>, "ok": bool, "error": str?}

While intervention mode is on, a tweak input replaces the policy action for
that step and the transition is flagged intervened. Talk input is validated
against the refinement-command vocabulary and steers sampling through the
refinement actor until cleared with "[null]". All operator events land in
the session log; completed episodes can be annotated and exported.

The session logic lives in :class:`UiBridge`, a plain object the tests can
drive directly; the FastAPI application is a thin websocket adapter that
additionally serves the static control-panel page. One session at a time:
a second concurrent websocket is refused.
"""

import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .actors import PolicySnapshot, sample_primary, sample_refined
from .config import TrainConfig
from .domain import (
    Action,
    NULL_COMMAND,
    Observation,
    RefinementCommand,
    Transition,
    observation_features,
    parse_command,
)
from .env import SceneState, TaskSpec, default_tasks, reset, step
from .numerics import make_rng
from .talk_tweak import annotate
from .trainer import derive_seed


@dataclass
class EpisodeLog:
    """One finished episode plus the talk-tweak records mined from it."""

    episode_id: str
    task_id: int
    transitions: List[Transition]
    records: List = field(default_factory=list)
    success: bool = False


class UiBridge:
    """Operator-session state machine over a live environment.

    Steps are driven either by an external pacing loop or by explicit
    step/tweak messages (lockstep). Policy actions come from the snapshot;
    a tweak input received while intervention mode is on replaces the
    policy action for exactly one step.
    """

    def __init__(self, snapshot: PolicySnapshot, cfg: TrainConfig,
                 task: Optional[TaskSpec] = None, session_seed: int = 0):
        self.snapshot = snapshot
        self.cfg = cfg
        self.task = task or default_tasks()[0]
        self.session_seed = session_seed
        self.actor = snapshot.primary()
        self.refiner = snapshot.refiner()
        self.encoder = snapshot.encoder()
        self.intervene = False
        self.talk_command: RefinementCommand = NULL_COMMAND
        self.episode_idx = 0
        self.transitions: List[Transition] = []
        self.episodes: List[EpisodeLog] = []
        self.event_log: List[dict] = []
        self._reset_episode()

    # -- episode management --

    def _reset_episode(self) -> None:
        env_seed = derive_seed(self.session_seed, "ui-env", self.task.id,
                               self.episode_idx)
        self.rng = make_rng(derive_seed(self.session_seed, "ui-policy",
                                        self.task.id, self.episode_idx))
        self.state: SceneState = reset(self.task, env_seed, self.cfg.env)
        self.transitions = []

    def _finish_episode(self, success: bool) -> None:
        if self.transitions:
            episode_id = f"ui-task{self.task.id}-ep{self.episode_idx}"
            records = annotate(self.transitions, self.cfg.tt_window,
                               self.cfg.tt_sigma)
            self.episodes.append(EpisodeLog(episode_id, self.task.id,
                                            list(self.transitions), records,
                                            success))
        self.episode_idx += 1
        self._reset_episode()

    # -- stepping --

    def _policy_action(self, obs: Observation) -> Action:
        h = self.encoder.encode(obs)
        if self.talk_command.is_null:
            return sample_primary(self.actor, h, self.rng,
                                  self.snapshot.noise_scale)
        return sample_refined(self.actor, self.refiner, h,
                              observation_features(obs), self.talk_command,
                              self.rng, self.snapshot.noise_scale)

    def advance(self, tweak: Optional[Action] = None) -> dict:
        """One environment step; returns the scene-state message."""
        obs = self.state.observation()
        intervened = self.intervene and tweak is not None
        act = tweak if intervened else self._policy_action(obs)
        act = act.clamped()
        next_obs, reward, done = step(self.state, act)
        self.transitions.append(Transition(obs, act, reward, next_obs, done,
                                           intervened, self.task.id))
        scene = self.scene_state()
        if done:
            self._finish_episode(success=reward == 1.0)
        return scene

    def scene_state(self) -> dict:
        s = self.state
        return {
            "type": "scene_state",
            "step": s.observation().step_index,
            "ee_pose": [*map(float, s.ee_pos), *map(float, s.ee_rpy)],
            "grip": bool(s.grip_closed),
            "object_pose": [*map(float, s.object_pos),
                            *map(float, s.object_rpy)],
            "goal_pose": [float(v) for v in s.goal_pose],
            "attached": bool(s.attached),
            "mode": "intervene" if self.intervene else "observe",
            "episode_id": f"ui-task{self.task.id}-ep{self.episode_idx}",
            "task_id": self.task.id,
            "snapshot_version": self.snapshot.version,
        }

    # -- message handling --

    def handle_message(self, msg: dict) -> List[dict]:
        """Apply one inbound message; returns outbound messages in order."""
        kind = msg.get("type")
        self.event_log.append({"t": time.time(), **msg})
        if kind == "mode_toggle":
            self.intervene = bool(msg.get("intervene"))
            return [self._ack(kind)]
        if kind == "tweak_input":
            try:
                act = Action(tuple(msg["dpos"]), tuple(msg["drot"]),
                             float(msg["grip"])).clamped()
            except (KeyError, TypeError, ValueError) as exc:
                return [self._ack(kind, error=f"bad tweak input: {exc}")]
            # Ignored (plain policy step) unless intervention mode is on.
            scene = self.advance(act if self.intervene else None)
            return [self._ack(kind), scene]
        if kind == "step_request":
            return [self._ack(kind), self.advance()]
        if kind == "talk_input":
            try:
                self.talk_command = parse_command(msg.get("command_text", ""))
            except ValueError as exc:
                return [self._ack(kind, error=str(exc))]
            return [self._ack(kind)]
        if kind == "reset_request":
            self._finish_episode(success=False)
            return [self._ack(kind), self.scene_state()]
        return [self._ack(str(kind), error=f"unknown message type {kind!r}")]

    @staticmethod
    def _ack(ref: str, error: Optional[str] = None) -> dict:
        ack = {"type": "ack", "ref": ref, "ok": error is None}
        if error is not None:
            ack["error"] = error
        return ack

    # -- export --

    def all_records(self) -> List:
        return [rec for ep in self.episodes for rec in ep.records]

    def episodes_summary(self) -> List[dict]:
        """JSON-friendly view of finished episodes for session inspection."""
        from .domain import render_command

        out = []
        for ep in self.episodes:
            out.append({
                "episode_id": ep.episode_id,
                "task_id": ep.task_id,
                "success": ep.success,
                "transitions": [
                    {"step": tr.obs.step_index,
                     "intervened": tr.intervened,
                     "action": [float(v) for v in tr.action.to_vector()]}
                    for tr in ep.transitions
                ],
                "records": [render_command(rec.command) for rec in ep.records],
            })
        return out


_PLACEHOLDER_PAGE = """<!doctype html>
<html><head><title>tweakrl intervention panel</title></head>
<body><p>Control panel assets not built. Run the frontend build and point
--ui-assets at its dist/ directory.</p></body></html>
"""


def create_app(bridge: UiBridge, assets_dir: Optional[str] = None,
               pace_s: float = 0.0):
    """FastAPI app: websocket at /ws, static control panel at /."""
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect
    from fastapi.responses import HTMLResponse, FileResponse

    app = FastAPI(title="tweakrl intervention panel")
    session_lock = threading.Lock()
    active = {"session": False}

    @app.get("/")
    def index():
        if assets_dir:
            page = os.path.join(assets_dir, "index.html")
            if os.path.exists(page):
                return FileResponse(page)
        return HTMLResponse(_PLACEHOLDER_PAGE)

    @app.get("/episodes")
    def episodes():
        return bridge.episodes_summary()

    @app.get("/assets/{name}")
    def asset(name: str):
        if assets_dir:
            path = os.path.join(assets_dir, os.path.basename(name))
            if os.path.exists(path):
                return FileResponse(path)
        return HTMLResponse(status_code=404, content="not found")

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        with session_lock:
            if active["session"]:
                await ws.close(code=1013, reason="session already active")
                return
            active["session"] = True
        try:
            await ws.accept()
            await ws.send_text(json.dumps(bridge.scene_state()))
            while True:
                if pace_s > 0 and not bridge.intervene:
                    # Autonomous pacing: keep stepping while the operator
                    # just watches.
                    import asyncio
                    try:
                        raw = await asyncio.wait_for(ws.receive_text(),
                                                     timeout=pace_s)
                    except asyncio.TimeoutError:
                        await ws.send_text(json.dumps(bridge.advance()))
                        continue
                else:
                    raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps(
                        {"type": "ack", "ref": "?", "ok": False,
                         "error": "not valid JSON"}))
                    continue
                for out in bridge.handle_message(msg):
                    await ws.send_text(json.dumps(out))
        except WebSocketDisconnect:
            pass
        finally:
            with session_lock:
                active["session"] = False

    return app


def serve_ui(bridge: UiBridge, host: str = "127.0.0.1", port: int = 8800,
             assets_dir: Optional[str] = None, pace_s: float = 0.1):
    """Blocking uvicorn server around the control-panel app."""
    import uvicorn

    app = create_app(bridge, assets_dir=assets_dir, pace_s=pace_s)
    uvicorn.run(app, host=host, port=port, log_level="warning")
