"""Snapshot and checkpoint byte formats.

A snapshot blob is a JSON header (network specs, version, encoder seed,
noise scale) followed by length-prefixed parameter blobs for the primary and
refinement actors. Checkpoints add the per-task critic parameters.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Dict, List

import numpy as np

from .actors import PolicySnapshot
from .critics import TaskCritic
from .datafiles import (
    mlp_spec_from_dict,
    mlp_spec_to_dict,
    params_from_bytes,
    params_to_bytes,
)

SNAPSHOT_MAGIC = b"HTSS"
SNAPSHOT_VERSION = 1


def _framed(blob: bytes) -> bytes:
    return struct.pack("<I", len(blob)) + blob


def _unframe(buf: bytes, off: int):
    (n,) = struct.unpack_from("<I", buf, off)
    return buf[off + 4:off + 4 + n], off + 4 + n


def snapshot_to_bytes(snap: PolicySnapshot) -> bytes:
    header = json.dumps({
        "version": snap.version,
        "encoder_seed": snap.encoder_seed,
        "n_tasks": snap.n_tasks,
        "embed_dim": snap.embed_dim,
        "noise_scale": snap.noise_scale,
        "actor_spec": mlp_spec_to_dict(snap.actor_spec),
        "refiner_spec": mlp_spec_to_dict(snap.refiner_spec),
    }).encode()
    return (SNAPSHOT_MAGIC + struct.pack("<H", SNAPSHOT_VERSION)
            + _framed(header)
            + _framed(params_to_bytes(snap.actor_params, snap.actor_spec))
            + _framed(params_to_bytes(snap.refiner_params, snap.refiner_spec)))


def snapshot_from_bytes(buf: bytes) -> PolicySnapshot:
    if buf[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not a snapshot blob (bad magic)")
    (fmt,) = struct.unpack_from("<H", buf, 4)
    if fmt != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot format {fmt}")
    header_raw, off = _unframe(buf, 6)
    header = json.loads(header_raw.decode())
    actor_blob, off = _unframe(buf, off)
    refiner_blob, _ = _unframe(buf, off)
    actor_params, _ = params_from_bytes(actor_blob)
    refiner_params, _ = params_from_bytes(refiner_blob)
    return PolicySnapshot(
        version=header["version"],
        actor_params=actor_params,
        actor_spec=mlp_spec_from_dict(header["actor_spec"]),
        refiner_params=refiner_params,
        refiner_spec=mlp_spec_from_dict(header["refiner_spec"]),
        encoder_seed=header["encoder_seed"],
        n_tasks=header["n_tasks"],
        embed_dim=header["embed_dim"],
        noise_scale=header["noise_scale"],
    )


def save_snapshot(snap: PolicySnapshot, path):
    with open(path, "wb") as f:
        f.write(snapshot_to_bytes(snap))


def load_snapshot(path) -> PolicySnapshot:
    with open(path, "rb") as f:
        return snapshot_from_bytes(f.read())


def save_critics(critics: Dict[int, TaskCritic], directory):
    os.makedirs(directory, exist_ok=True)
    for task_id, critic in critics.items():
        with open(os.path.join(directory, f"critic{task_id}.online.bin"), "wb") as f:
            f.write(params_to_bytes(critic.params, critic.spec))
        with open(os.path.join(directory, f"critic{task_id}.target.bin"), "wb") as f:
            f.write(params_to_bytes(critic.target_params, critic.spec))
        with open(os.path.join(directory, f"critic{task_id}.spec.json"), "w") as f:
            json.dump(mlp_spec_to_dict(critic.spec), f)


def load_critics(directory) -> Dict[int, TaskCritic]:
    critics: Dict[int, TaskCritic] = {}
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".spec.json"):
            continue
        task_id = int(name[len("critic"):-len(".spec.json")])
        with open(os.path.join(directory, name)) as f:
            spec = mlp_spec_from_dict(json.load(f))
        with open(os.path.join(directory, f"critic{task_id}.online.bin"), "rb") as f:
            online, _ = params_from_bytes(f.read())
        with open(os.path.join(directory, f"critic{task_id}.target.bin"), "rb") as f:
            target, _ = params_from_bytes(f.read())
        critics[task_id] = TaskCritic(task_id, online, target, spec)
    return critics
