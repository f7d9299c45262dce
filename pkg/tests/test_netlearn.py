"""Tests for the learner/actor wire protocol and distributed training."""

import json
import socket
import threading

import numpy as np
import pytest

from tweakrl.config import TrainConfig
from tweakrl.domain import RefinementCommand, TalkTweakRecord
from tweakrl.netlearn import (
    ActorClient,
    ActorRegistry,
    MSG_HELLO,
    MSG_HELLO_ACK,
    MSG_REFUSED,
    MSG_SNAPSHOT,
    MSG_TRANSITIONS,
    PROTOCOL_VERSION,
    decode_talk_tweak_batch,
    decode_transition_batch,
    encode_talk_tweak_batch,
    encode_transition_batch,
    recv_message,
    send_message,
    serve_learner,
)
from tweakrl.trainer import Learner, collect_demos, online_phase, warmup_phase
from tests.test_replay import make_transition


def small_cfg(**overrides):
    base = dict(demos_per_task=2, warmup_steps=10, batch_size=12,
                online_gate=15, embed_dim=16, hidden=(16, 16), seed=7,
                snapshot_period=10)
    base.update(overrides)
    return TrainConfig(**base)


def fresh_learner(cfg):
    buffers, tt, mc = collect_demos(cfg)
    learner = Learner(cfg, buffers, tt, mc)
    warmup_phase(cfg, learner, steps=5)
    return learner


class TestFraming:
    def test_roundtrip_over_socketpair(self):
        a, b = socket.socketpair()
        try:
            send_message(a, MSG_HELLO, b"payload-bytes")
            tag, payload = recv_message(b)
            assert tag == MSG_HELLO and payload == b"payload-bytes"
            send_message(b, MSG_SNAPSHOT)
            tag, payload = recv_message(a)
            assert tag == MSG_SNAPSHOT and payload == b""
        finally:
            a.close()
            b.close()

    def test_recv_on_closed_peer_returns_none(self):
        a, b = socket.socketpair()
        a.close()
        try:
            assert recv_message(b) is None
        finally:
            b.close()

    def test_multiple_messages_preserve_boundaries(self):
        a, b = socket.socketpair()
        try:
            for i in range(5):
                send_message(a, i + 1, bytes([i]) * i)
            for i in range(5):
                tag, payload = recv_message(b)
                assert tag == i + 1 and payload == bytes([i]) * i
        finally:
            a.close()
            b.close()


class TestCodecs:
    def test_transition_batch_roundtrip(self):
        transitions = [make_transition(2, i) for i in range(4)]
        payload = encode_transition_batch(2, "seed7-task2-ep0", transitions)
        task_id, episode_id, back = decode_transition_batch(payload)
        assert task_id == 2 and episode_id == "seed7-task2-ep0"
        assert back == transitions

    def test_talk_tweak_batch_roundtrip(self):
        tr = make_transition(1, 3)
        records = [TalkTweakRecord(tr.obs, tr.action,
                                   RefinementCommand((1, 0, -1)))]
        payload = encode_talk_tweak_batch("ep", records)
        episode_id, back = decode_talk_tweak_batch(payload)
        assert episode_id == "ep" and back == records

    def test_empty_batch(self):
        payload = encode_transition_batch(0, "ep", [])
        assert decode_transition_batch(payload) == (0, "ep", [])


class TestRegistry:
    def test_tracks_and_reports_stale(self):
        reg = ActorRegistry()
        reg.touch("a1")
        reg.record_version("a1", 4)
        reg.record_transitions("a1", 50)
        assert reg.actors["a1"].snapshot_version == 4
        assert reg.actors["a1"].transitions == 50
        assert reg.stale() == []
        reg.actors["a1"].last_heartbeat -= 100.0
        assert reg.stale() == ["a1"]


class TestService:
    def test_refuses_protocol_mismatch(self):
        cfg = small_cfg()
        learner = fresh_learner(cfg)
        service = serve_learner(cfg, learner)
        try:
            sock = socket.create_connection(("127.0.0.1", service.port),
                                            timeout=5)
            send_message(sock, MSG_HELLO, json.dumps(
                {"actor_id": "x", "task_ids": [0],
                 "protocol_version": PROTOCOL_VERSION + 1}).encode())
            tag, payload = recv_message(sock)
            assert tag == MSG_REFUSED
            assert "version" in json.loads(payload)["error"]
            sock.close()
        finally:
            service.stop()

    def test_hello_ack_and_initial_snapshot(self):
        cfg = small_cfg()
        learner = fresh_learner(cfg)
        service = serve_learner(cfg, learner)
        try:
            client = ActorClient(("127.0.0.1", service.port), cfg, "a1")
            client.connect()
            assert client.snapshot is not None
            assert client.snapshot.version >= 1
            client.close()
        finally:
            service.stop()

    def test_duplicate_episode_ingested_once(self):
        cfg = small_cfg()
        learner = fresh_learner(cfg)
        service = serve_learner(cfg, learner)
        try:
            client = ActorClient(("127.0.0.1", service.port), cfg, "a1")
            client.connect()
            transitions = [make_transition(0, i) for i in range(3)]
            payload = encode_transition_batch(0, "dup-ep", transitions)
            before = len(learner.buffers[0].rollouts)
            for _ in range(2):
                send_message(client.sock, MSG_TRANSITIONS, payload)
            # synchronize: a snapshot round-trip drains prior messages
            send_message(client.sock, 5, b"{}")
            client._await_snapshot()
            after = len(learner.buffers[0].rollouts)
            assert after - before == 3
            client.close()
        finally:
            service.stop()

    def test_threaded_collection_grows_buffers(self):
        cfg = small_cfg()
        learner = fresh_learner(cfg)
        service = serve_learner(cfg, learner)
        try:
            before = learner.env_steps

            def worker(actor_id, salt):
                client = ActorClient(("127.0.0.1", service.port), cfg,
                                     actor_id, seed_salt=salt)
                client.run(max_episodes_per_task=2)

            threads = [threading.Thread(target=worker, args=(f"a{k}", f"s{k}"))
                       for k in range(2)]
            for t in threads:
                t.start()
            for t in threads:
                t.join(timeout=60)
            assert learner.env_steps > before
            assert set(service.registry.actors) == {"a0", "a1"}
        finally:
            service.stop()


class TestSerializedEquivalence:
    def test_networked_run_matches_in_process(self):
        cfg = small_cfg(online_gate=10)

        # in-process reference
        ref = fresh_learner(cfg)
        online_phase(cfg, ref, max_episodes_per_task=3)

        # same schedule through the serialized network service
        net = fresh_learner(cfg)
        service = serve_learner(cfg, net, serialized=True)
        try:
            client = ActorClient(("127.0.0.1", service.port), cfg, "a1")
            client.run(max_episodes_per_task=3)
        finally:
            service.stop()

        assert net.env_steps == ref.env_steps
        assert net.update_count == ref.update_count
        assert np.array_equal(net.actor.params, ref.actor.params)
        assert np.array_equal(net.refiner.params, ref.refiner.params)
        for t in range(cfg.n_tasks):
            assert np.array_equal(net.critics[t].params, ref.critics[t].params)
