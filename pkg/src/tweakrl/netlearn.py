"""Centralized learner service with decentralized actor clients.

One learner process owns the replay buffers and runs the update loop; any
number of actor processes collect episodes and ship them upstream, receiving
versioned policy snapshots downstream. Transport is a single persistent TCP
connection per actor carrying length-prefixed messages:

    4-byte big-endian length  (covers tag + payload)
    2-byte big-endian type tag
    payload

Transitions and talk-tweak records travel in the same framed encoding used
by ``.httd`` dataset files; snapshots travel as snapshot blobs; small
control payloads are JSON. Episode ingestion is exactly-once (the learner
deduplicates on episode id), so an actor may safely resend everything it has
buffered after a reconnect.

A serialized deterministic mode interleaves collection and learning in the
exact order of the in-process online loop, so a single networked actor
reproduces in-process training byte for byte.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .actors import PolicySnapshot
from .checkpoints import snapshot_from_bytes, snapshot_to_bytes
from .config import TrainConfig
from .datafiles import decode_record, encode_record
from .domain import TalkTweakRecord, Transition
from .env import TaskSpec, default_tasks
from .trainer import (
    Learner,
    episode_start_state,
    evaluate,
    run_training_episode,
)

PROTOCOL_VERSION = 1

MSG_HELLO = 1
MSG_HELLO_ACK = 2
MSG_TRANSITIONS = 3
MSG_TALK_TWEAK = 4
MSG_SNAPSHOT_REQUEST = 5
MSG_SNAPSHOT = 6
MSG_METRICS = 7
MSG_SHUTDOWN = 8
MSG_REFUSED = 9

HEARTBEAT_PERIOD_S = 2.0
STALE_AFTER_S = 10.0
ACTOR_OUTBOX_CAP = 256

_HEADER = struct.Struct(">IH")


# ---- framing ---------------------------------------------------------------


def send_message(sock: socket.socket, tag: int, payload: bytes = b"") -> None:
    sock.sendall(_HEADER.pack(len(payload) + 2, tag) + payload)


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            return None
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def recv_message(sock: socket.socket):
    """Read one framed message; returns (tag, payload) or None on EOF."""
    head = _recv_exact(sock, _HEADER.size)
    if head is None:
        return None
    length, tag = _HEADER.unpack(head)
    payload = _recv_exact(sock, length - 2) if length > 2 else b""
    if payload is None:
        return None
    return tag, payload


# ---- payload codecs --------------------------------------------------------


def _pack_records(records: Sequence) -> bytes:
    return struct.pack(">I", len(records)) + b"".join(
        encode_record(r) for r in records)


def _unpack_records(buf: bytes, off: int = 0):
    (count,) = struct.unpack_from(">I", buf, off)
    off += 4
    out = []
    for _ in range(count):
        rec, off = decode_record(buf, off)
        out.append(rec)
    return out, off


def encode_transition_batch(task_id: int, episode_id: str,
                            transitions: Sequence[Transition]) -> bytes:
    header = json.dumps({"task_id": task_id, "episode_id": episode_id}).encode()
    return (struct.pack(">I", len(header)) + header
            + _pack_records(transitions))


def decode_transition_batch(payload: bytes):
    (n,) = struct.unpack_from(">I", payload, 0)
    header = json.loads(payload[4:4 + n])
    transitions, _ = _unpack_records(payload, 4 + n)
    return header["task_id"], header["episode_id"], transitions


def encode_talk_tweak_batch(episode_id: str,
                            records: Sequence[TalkTweakRecord]) -> bytes:
    header = json.dumps({"episode_id": episode_id}).encode()
    return struct.pack(">I", len(header)) + header + _pack_records(records)


def decode_talk_tweak_batch(payload: bytes):
    (n,) = struct.unpack_from(">I", payload, 0)
    header = json.loads(payload[4:4 + n])
    records, _ = _unpack_records(payload, 4 + n)
    return header["episode_id"], records


def _json_payload(**kwargs) -> bytes:
    return json.dumps(kwargs).encode()


# ---- registry --------------------------------------------------------------


@dataclass
class ActorStatus:
    last_heartbeat: float
    snapshot_version: int = 0
    transitions: int = 0


@dataclass
class ActorRegistry:
    """Who is connected, how fresh they are, and what they have sent."""

    actors: Dict[str, ActorStatus] = field(default_factory=dict)

    def touch(self, actor_id: str) -> None:
        status = self.actors.setdefault(actor_id, ActorStatus(time.monotonic()))
        status.last_heartbeat = time.monotonic()

    def record_version(self, actor_id: str, version: int) -> None:
        status = self.actors.get(actor_id)
        if status is not None:
            status.snapshot_version = max(status.snapshot_version, version)

    def record_transitions(self, actor_id: str, count: int) -> None:
        status = self.actors.get(actor_id)
        if status is not None:
            status.transitions += count

    def stale(self) -> List[str]:
        cutoff = time.monotonic() - STALE_AFTER_S
        return [aid for aid, s in self.actors.items()
                if s.last_heartbeat < cutoff]


# ---- learner service -------------------------------------------------------


class LearnerService:
    """Socket server around a Learner.

    Serialized mode handles one connection synchronously and performs the
    in-process online schedule (ingest an episode, then run one update per
    collected step once the gate opens, then publish a fresh snapshot).
    Threaded mode runs one ingestion thread per connection plus a learning
    thread; they meet only at the learner lock.
    """

    def __init__(self, cfg: TrainConfig, learner: Learner,
                 serialized: bool = False):
        self.cfg = cfg
        self.learner = learner
        self.serialized = serialized
        self.registry = ActorRegistry()
        self.lock = threading.Lock()
        self.stop_event = threading.Event()
        self.seen_episodes: set = set()
        self.pending = 0.0
        self._conns: Dict[str, socket.socket] = {}
        self._send_locks: Dict[str, threading.Lock] = {}
        self._server: Optional[socket.socket] = None
        self._threads: List[threading.Thread] = []
        self.port: Optional[int] = None

    # -- lifecycle --

    def start(self, host: str = "127.0.0.1", port: int = 0) -> int:
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen()
        server.settimeout(0.2)
        self._server = server
        self.port = server.getsockname()[1]
        accept = threading.Thread(target=self._accept_loop, daemon=True)
        accept.start()
        self._threads.append(accept)
        if not self.serialized:
            learn = threading.Thread(target=self._learning_loop, daemon=True)
            learn.start()
            self._threads.append(learn)
        return self.port

    def stop(self) -> None:
        self.stop_event.set()
        for thread in self._threads:
            thread.join(timeout=5.0)
        if self._server is not None:
            self._server.close()

    # -- server side --

    def _accept_loop(self) -> None:
        while not self.stop_event.is_set():
            try:
                conn, _ = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            if self.serialized:
                # One connection at a time, handled inline for determinism.
                self._handle_connection(conn)
            else:
                thread = threading.Thread(target=self._handle_connection,
                                          args=(conn,), daemon=True)
                thread.start()

    def _handle_connection(self, conn: socket.socket) -> None:
        actor_id = None
        try:
            msg = recv_message(conn)
            if msg is None or msg[0] != MSG_HELLO:
                send_message(conn, MSG_REFUSED,
                             _json_payload(error="expected hello"))
                return
            hello = json.loads(msg[1])
            if hello.get("protocol_version") != PROTOCOL_VERSION:
                send_message(conn, MSG_REFUSED, _json_payload(
                    error=f"protocol version mismatch: want {PROTOCOL_VERSION}"))
                return
            actor_id = hello["actor_id"]
            with self.lock:
                self.registry.touch(actor_id)
                self._conns[actor_id] = conn
                self._send_locks[actor_id] = threading.Lock()
                snap_blob = snapshot_to_bytes(self.learner.snapshot())
            send_message(conn, MSG_HELLO_ACK,
                         _json_payload(protocol_version=PROTOCOL_VERSION))
            self._send(actor_id, MSG_SNAPSHOT, snap_blob)
            self._serve_messages(conn, actor_id)
        except (ConnectionError, OSError):
            pass
        finally:
            if actor_id is not None:
                with self.lock:
                    self._conns.pop(actor_id, None)
                    self._send_locks.pop(actor_id, None)
            conn.close()

    def _serve_messages(self, conn: socket.socket, actor_id: str) -> None:
        pending_records: List[TalkTweakRecord] = []
        pending_records_episode: Optional[str] = None
        while not self.stop_event.is_set():
            msg = recv_message(conn)
            if msg is None:
                return
            tag, payload = msg
            with self.lock:
                self.registry.touch(actor_id)
            if tag == MSG_TALK_TWEAK:
                # Records precede their transition batch; hold until ingest.
                pending_records_episode, pending_records = \
                    decode_talk_tweak_batch(payload)
            elif tag == MSG_TRANSITIONS:
                task_id, episode_id, transitions = \
                    decode_transition_batch(payload)
                records = (pending_records
                           if pending_records_episode == episode_id else [])
                pending_records, pending_records_episode = [], None
                self._ingest(actor_id, task_id, episode_id, transitions,
                             records)
            elif tag == MSG_SNAPSHOT_REQUEST:
                with self.lock:
                    blob = snapshot_to_bytes(self.learner.snapshot())
                self._send(actor_id, MSG_SNAPSHOT, blob)
            elif tag == MSG_METRICS:
                counters = json.loads(payload)
                with self.lock:
                    self.registry.record_version(
                        actor_id, counters.get("snapshot_version", 0))
            elif tag == MSG_SHUTDOWN:
                return
            else:
                send_message(conn, MSG_REFUSED,
                             _json_payload(error=f"unknown tag {tag}"))

    def _ingest(self, actor_id: str, task_id: int, episode_id: str,
                transitions: Sequence[Transition],
                records: Sequence[TalkTweakRecord]) -> None:
        with self.lock:
            if episode_id not in self.seen_episodes:
                self.seen_episodes.add(episode_id)
                self.learner.ingest_episode(task_id, episode_id, transitions,
                                            records)
                self.pending += (len(transitions)
                                 * self.cfg.updates_per_env_step)
                self.registry.record_transitions(actor_id, len(transitions))
            if self.serialized:
                self._drain_updates()

    def _drain_updates(self) -> None:
        # Caller holds the lock. Mirrors the in-process online schedule.
        if not self.learner.gate_open():
            return
        while self.pending >= 1.0:
            self.learner.online_step()
            self.pending -= 1.0
            if self.learner.update_count % 100 == 0:
                self.learner.log_metrics("online")

    def _learning_loop(self) -> None:
        while not self.stop_event.is_set():
            with self.lock:
                can_update = self.learner.gate_open() and self.pending >= 1.0
                if can_update:
                    self.learner.online_step()
                    self.pending -= 1.0
                    if self.learner.update_count % 100 == 0:
                        self.learner.log_metrics("online")
                    push = (self.learner.update_count
                            % self.cfg.snapshot_period == 0)
                    blob = (snapshot_to_bytes(self.learner.snapshot())
                            if push else None)
                    targets = list(self._conns) if push else []
            if not can_update:
                time.sleep(0.002)
                continue
            for actor_id in targets:
                self._send(actor_id, MSG_SNAPSHOT, blob)

    def _send(self, actor_id: str, tag: int, payload: bytes) -> None:
        with self.lock:
            conn = self._conns.get(actor_id)
            send_lock = self._send_locks.get(actor_id)
        if conn is None or send_lock is None:
            return
        try:
            with send_lock:
                send_message(conn, tag, payload)
        except (ConnectionError, OSError):
            pass


def serve_learner(cfg: TrainConfig, learner: Learner,
                  host: str = "127.0.0.1", port: int = 0,
                  serialized: bool = False) -> LearnerService:
    """Start the learner service; returns it with ``.port`` populated."""
    service = LearnerService(cfg, learner, serialized=serialized)
    service.start(host, port)
    return service


# ---- actor client ----------------------------------------------------------


class ProtocolRefused(ConnectionError):
    """The learner explicitly refused this client (e.g. version mismatch);
    unlike a transport failure, retrying cannot help."""


class ActorClient:
    """Episode collector speaking the wire protocol.

    Runs episodes with the freshest snapshot (applied only between
    episodes), ships each episode upstream, and keeps a bounded local outbox
    so a learner outage loses nothing: on reconnect the outbox is resent and
    the learner's episode-id dedup keeps ingestion exactly-once.
    """

    def __init__(self, address, cfg: TrainConfig, actor_id: str,
                 tasks: Optional[Sequence[TaskSpec]] = None,
                 seed_salt: str = "", pace_s: float = 0.0):
        self.address = address
        self.cfg = cfg
        self.actor_id = actor_id
        self.tasks = list(tasks) if tasks is not None else default_tasks()
        self.seed_salt = seed_salt
        self.pace_s = pace_s
        self.snapshot: Optional[PolicySnapshot] = None
        self.sock: Optional[socket.socket] = None
        self.outbox: List[tuple] = []
        self.episodes_sent = 0
        self.env_steps = 0
        self.stop_event: Optional[threading.Event] = None

    # -- connection management --

    def connect(self, max_attempts: int = 8) -> None:
        delay = 0.1
        for attempt in range(max_attempts):
            try:
                sock = socket.create_connection(self.address, timeout=10.0)
                send_message(sock, MSG_HELLO, _json_payload(
                    actor_id=self.actor_id,
                    task_ids=[t.id for t in self.tasks],
                    protocol_version=PROTOCOL_VERSION))
                msg = recv_message(sock)
                if msg is None:
                    raise ConnectionError("learner closed during hello")
                tag, payload = msg
                if tag == MSG_REFUSED:
                    raise ProtocolRefused(
                        json.loads(payload).get("error", "refused"))
                if tag != MSG_HELLO_ACK:
                    raise ConnectionError(f"unexpected hello reply tag {tag}")
                self.sock = sock
                self._await_snapshot()
                self._flush_outbox()
                return
            except ProtocolRefused:
                raise
            except (ConnectionError, OSError):
                if attempt == max_attempts - 1:
                    raise
                if self.stop_event is not None and self.stop_event.is_set():
                    raise
                time.sleep(delay)
                delay = min(delay * 2, 5.0)

    def close(self) -> None:
        if self.sock is not None:
            try:
                send_message(self.sock, MSG_SHUTDOWN)
            except (ConnectionError, OSError):
                pass
            self.sock.close()
            self.sock = None

    def _await_snapshot(self) -> None:
        while True:
            msg = recv_message(self.sock)
            if msg is None:
                raise ConnectionError("learner closed")
            tag, payload = msg
            if tag == MSG_SNAPSHOT:
                self._apply_snapshot(snapshot_from_bytes(payload))
                return

    def _apply_snapshot(self, snap: PolicySnapshot) -> None:
        # Never regress to an older version.
        if self.snapshot is None or snap.version >= self.snapshot.version:
            self.snapshot = snap

    def _flush_outbox(self) -> None:
        for task_id, episode_id, transitions, records in self.outbox:
            self._ship(task_id, episode_id, transitions, records)

    def _ship(self, task_id: int, episode_id: str, transitions, records):
        if records:
            send_message(self.sock, MSG_TALK_TWEAK,
                         encode_talk_tweak_batch(episode_id, records))
        send_message(self.sock, MSG_TRANSITIONS,
                     encode_transition_batch(task_id, episode_id, transitions))

    # -- collection loop --

    def run_episode(self, task: TaskSpec, episode_idx: int,
                    start_state=None) -> None:
        """Collect one episode and ship it, reconnecting on failure."""
        transitions, records, _ = run_training_episode(
            self.snapshot, task, self.cfg, episode_idx,
            seed_salt=self.seed_salt, pace_s=self.pace_s,
            start_state=start_state)
        episode_id = self._episode_id(task, episode_idx)
        self.outbox.append((task.id, episode_id, transitions, records))
        if len(self.outbox) > ACTOR_OUTBOX_CAP:
            del self.outbox[0]
        self.env_steps += len(transitions)
        try:
            self._ship(task.id, episode_id, transitions, records)
            send_message(self.sock, MSG_SNAPSHOT_REQUEST,
                         _json_payload(have_version=self.snapshot.version))
            self._await_snapshot()
            send_message(self.sock, MSG_METRICS, _json_payload(
                snapshot_version=self.snapshot.version,
                env_steps=self.env_steps))
            self.outbox.clear()
            self.episodes_sent += 1
        except (ConnectionError, OSError):
            if self.sock is not None:
                self.sock.close()
                self.sock = None
            if self.stop_event is not None and self.stop_event.is_set():
                return
            self.connect()

    def _episode_id(self, task: TaskSpec, episode_idx: int) -> str:
        salt = f"-{self.seed_salt}" if self.seed_salt else ""
        return f"seed{self.cfg.seed}{salt}-task{task.id}-ep{episode_idx}"

    def run(self, max_episodes_per_task: int,
            max_env_steps: Optional[int] = None,
            stop_event: Optional[threading.Event] = None) -> None:
        self.stop_event = stop_event
        self.connect()
        try:
            for episode_idx in range(max_episodes_per_task):
                prev_state = None
                for task in self.tasks:
                    if stop_event is not None and stop_event.is_set():
                        return
                    start = episode_start_state(self.cfg, task, episode_idx,
                                                prev_state, self.seed_salt)
                    self.run_episode(task, episode_idx, start_state=start)
                    prev_state = start
                if max_env_steps is not None and self.env_steps >= max_env_steps:
                    break
                if stop_event is not None and stop_event.is_set():
                    break
        finally:
            self.close()


def run_actor(address, cfg: TrainConfig, actor_id: str,
              max_episodes_per_task: Optional[int] = None,
              tasks: Optional[Sequence[TaskSpec]] = None,
              seed_salt: str = "", pace_s: float = 0.0,
              stop_event: Optional[threading.Event] = None) -> ActorClient:
    """Run an actor loop against a learner; returns the finished client."""
    client = ActorClient(address, cfg, actor_id, tasks=tasks,
                         seed_salt=seed_salt, pace_s=pace_s)
    client.run(max_episodes_per_task or cfg.online_episodes,
               max_env_steps=cfg.max_env_steps, stop_event=stop_event)
    return client


# ---- scaling benchmark -----------------------------------------------------


@dataclass
class ScalingRun:
    actors: int
    wall_time_s: float
    env_steps: int
    reached: bool


def scaling_benchmark(cfg: TrainConfig, actor_counts: Sequence[int],
                      learner_factory, threshold: float = 0.9,
                      eval_trials: int = 5, eval_every_updates: int = 500,
                      pace_s: float = 0.002,
                      max_env_steps: Optional[int] = None) -> List[ScalingRun]:
    """Wall-clock time to an average-success threshold vs. actor count.

    ``learner_factory()`` must return a fresh warmed-up Learner each call so
    every actor count starts from the same policy. Actors pace their steps
    (``pace_s``) to stand in for real interaction latency, which makes
    collection the bottleneck that parallelism relieves.
    """
    if not actor_counts or any(n < 1 for n in actor_counts):
        raise ValueError("actor_counts must be non-empty positive ints")
    runs = []
    for n_actors in actor_counts:
        learner = learner_factory()
        service = serve_learner(cfg, learner, serialized=False)
        stop = threading.Event()
        threads = []
        for k in range(n_actors):
            salt = f"actor{k}" if n_actors > 1 else ""
            client = ActorClient(("127.0.0.1", service.port), cfg,
                                 actor_id=f"actor-{k}", seed_salt=salt,
                                 pace_s=pace_s)
            thread = threading.Thread(
                target=client.run,
                args=(cfg.online_episodes,),
                kwargs={"max_env_steps": None, "stop_event": stop},
                daemon=True)
            threads.append(thread)
        start = time.monotonic()
        for thread in threads:
            thread.start()
        reached = False
        budget = max_env_steps or cfg.max_env_steps
        last_eval_at = 0
        while True:
            time.sleep(0.05)
            with service.lock:
                updates = learner.update_count
                env_steps = learner.env_steps
            if updates - last_eval_at >= eval_every_updates:
                last_eval_at = updates
                with service.lock:
                    snap = learner.snapshot()
                report = evaluate(snap, cfg, n_trials=eval_trials)
                if report.average_success >= threshold:
                    reached = True
                    break
            if env_steps >= budget:
                break
            if all(not t.is_alive() for t in threads):
                break
        elapsed = time.monotonic() - start
        stop.set()
        service.stop()
        for thread in threads:
            thread.join(timeout=5.0)
        runs.append(ScalingRun(n_actors, elapsed, learner.env_steps, reached))
    return runs
