"""On-disk formats: `.httd` datasets, text export, and parameter blobs.

`.httd` layout (all little-endian):
    magic  b"HTTD"
    u16    format version (currently 1)
    repeated records:
        u32  payload length (tag included)
        u16  record tag (1 = Transition, 2 = TalkTweakRecord)
        ...  fixed-layout payload, f64 reals

Parameter blob layout (used by checkpoints and wire snapshots):
    magic  b"HTPV"
    u16    format version (currently 1)
    u32    layer count
    per layer: u32 rows, u32 cols
    f64[n] flat values, weights-then-bias per layer
"""

from __future__ import annotations

import json
import struct
from typing import Iterable, List, Union

import numpy as np

from .domain import (
    Action,
    Observation,
    RefinementCommand,
    TalkTweakRecord,
    Transition,
)
from .numerics import MlpSpec

DATASET_MAGIC = b"HTTD"
DATASET_VERSION = 1
PARAMS_MAGIC = b"HTPV"
PARAMS_VERSION = 1

TAG_TRANSITION = 1
TAG_TALK_TWEAK = 2

_OBS_FMT = "<3d3dB6d6dBHH"
_OBS_SIZE = struct.calcsize(_OBS_FMT)
_ACTION_FMT = "<7d"
_CMD_FMT = "<3bB"

Record = Union[Transition, TalkTweakRecord]


def _pack_obs(obs: Observation) -> bytes:
    return struct.pack(
        _OBS_FMT,
        *obs.ee_pos, *obs.ee_rpy,
        1 if obs.grip_closed else 0,
        *obs.object_pose, *obs.goal_pose,
        1 if obs.attached else 0,
        obs.step_index, obs.task_id,
    )


def _unpack_obs(buf: bytes, off: int):
    vals = struct.unpack_from(_OBS_FMT, buf, off)
    obs = Observation(
        ee_pos=vals[0:3], ee_rpy=vals[3:6], grip_closed=bool(vals[6]),
        object_pose=vals[7:13], goal_pose=vals[13:19],
        attached=bool(vals[19]), step_index=vals[20], task_id=vals[21],
    )
    return obs, off + _OBS_SIZE


def encode_record(rec: Record) -> bytes:
    """One framed record: length, tag, payload."""
    if isinstance(rec, Transition):
        payload = (
            _pack_obs(rec.obs)
            + struct.pack(_ACTION_FMT, *rec.action.to_vector())
            + struct.pack("<d", rec.reward)
            + _pack_obs(rec.next_obs)
            + struct.pack("<BBH", int(rec.done), int(rec.intervened), rec.task_id)
        )
        tag = TAG_TRANSITION
    elif isinstance(rec, TalkTweakRecord):
        payload = (
            _pack_obs(rec.obs)
            + struct.pack(_ACTION_FMT, *rec.action.to_vector())
            + struct.pack(_CMD_FMT, *rec.command.axes, int(rec.command.is_null))
        )
        tag = TAG_TALK_TWEAK
    else:
        raise TypeError(f"cannot encode {type(rec).__name__}")
    return struct.pack("<IH", len(payload) + 2, tag) + payload


def decode_record(buf: bytes, off: int = 0):
    """Decode one framed record; returns (record, next offset)."""
    (length,) = struct.unpack_from("<I", buf, off)
    (tag,) = struct.unpack_from("<H", buf, off + 4)
    body = off + 6
    end = off + 4 + length
    if tag == TAG_TRANSITION:
        obs, p = _unpack_obs(buf, body)
        avec = struct.unpack_from(_ACTION_FMT, buf, p)
        p += struct.calcsize(_ACTION_FMT)
        (reward,) = struct.unpack_from("<d", buf, p)
        p += 8
        next_obs, p = _unpack_obs(buf, p)
        done, intervened, task_id = struct.unpack_from("<BBH", buf, p)
        rec = Transition(obs, Action.from_vector(avec), reward, next_obs,
                         bool(done), bool(intervened), task_id)
    elif tag == TAG_TALK_TWEAK:
        obs, p = _unpack_obs(buf, body)
        avec = struct.unpack_from(_ACTION_FMT, buf, p)
        p += struct.calcsize(_ACTION_FMT)
        tx, ty, tz, is_null = struct.unpack_from(_CMD_FMT, buf, p)
        rec = TalkTweakRecord(obs, Action.from_vector(avec),
                              RefinementCommand((tx, ty, tz), bool(is_null)))
    else:
        raise ValueError(f"unknown record tag {tag}")
    return rec, end


def write_dataset(path, records: Iterable[Record]) -> int:
    """Write records to a .httd file; returns the record count."""
    n = 0
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC + struct.pack("<H", DATASET_VERSION))
        for rec in records:
            f.write(encode_record(rec))
            n += 1
    return n


def read_dataset(path) -> List[Record]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != DATASET_MAGIC:
        raise ValueError(f"{path}: not a .httd file (bad magic)")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    records = []
    off = 6
    while off < len(buf):
        rec, off = decode_record(buf, off)
        records.append(rec)
    return records


def record_to_json(rec: Record) -> str:
    """Self-describing one-line text form (lossless via repr floats)."""
    def obs_d(obs: Observation):
        return {
            "ee_pos": list(obs.ee_pos), "ee_rpy": list(obs.ee_rpy),
            "grip_closed": obs.grip_closed,
            "object_pose": list(obs.object_pose), "goal_pose": list(obs.goal_pose),
            "attached": obs.attached, "step_index": obs.step_index,
            "task_id": obs.task_id,
        }

    if isinstance(rec, Transition):
        d = {
            "type": "transition",
            "obs": obs_d(rec.obs),
            "action": list(rec.action.to_vector()),
            "reward": rec.reward,
            "next_obs": obs_d(rec.next_obs),
            "done": rec.done, "intervened": rec.intervened,
            "task_id": rec.task_id,
        }
    else:
        d = {
            "type": "talk_tweak",
            "obs": obs_d(rec.obs),
            "action": list(rec.action.to_vector()),
            "command": {"axes": list(rec.command.axes), "is_null": rec.command.is_null},
        }
    return json.dumps(d)


def record_from_json(line: str) -> Record:
    d = json.loads(line)

    def obs_o(o):
        return Observation(
            ee_pos=o["ee_pos"], ee_rpy=o["ee_rpy"], grip_closed=o["grip_closed"],
            object_pose=o["object_pose"], goal_pose=o["goal_pose"],
            attached=o["attached"], step_index=o["step_index"], task_id=o["task_id"],
        )

    if d["type"] == "transition":
        return Transition(obs_o(d["obs"]), Action.from_vector(d["action"]),
                          d["reward"], obs_o(d["next_obs"]), d["done"],
                          d["intervened"], d["task_id"])
    if d["type"] == "talk_tweak":
        return TalkTweakRecord(obs_o(d["obs"]), Action.from_vector(d["action"]),
                               RefinementCommand(tuple(d["command"]["axes"]),
                                                 d["command"]["is_null"]))
    raise ValueError(f"unknown record type {d['type']!r}")


def export_text(binary_path, text_path) -> int:
    """Lossless .httd -> .httd.txt export, one JSON record per line."""
    records = read_dataset(binary_path)
    with open(text_path, "w") as f:
        for rec in records:
            f.write(record_to_json(rec) + "\n")
    return len(records)


def params_to_bytes(params: np.ndarray, spec: MlpSpec) -> bytes:
    shapes = spec.layer_shapes()
    head = PARAMS_MAGIC + struct.pack("<HI", PARAMS_VERSION, len(shapes))
    for rows, cols in shapes:
        head += struct.pack("<II", rows, cols)
    vals = np.ascontiguousarray(params, dtype="<f8")
    if vals.shape != (spec.param_count(),):
        raise ValueError("parameter vector does not match spec layout")
    return head + vals.tobytes()


def params_from_bytes(buf: bytes):
    """Returns (flat params array, [(rows, cols), ...])."""
    if buf[:4] != PARAMS_MAGIC:
        raise ValueError("not a parameter blob (bad magic)")
    version, n_layers = struct.unpack_from("<HI", buf, 4)
    if version != PARAMS_VERSION:
        raise ValueError(f"unsupported parameter blob version {version}")
    off = 10
    shapes = []
    for _ in range(n_layers):
        rows, cols = struct.unpack_from("<II", buf, off)
        shapes.append((rows, cols))
        off += 8
    n = sum(r * c + r for r, c in shapes)
    vals = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64)
    return vals, shapes


def mlp_spec_to_dict(spec: MlpSpec) -> dict:
    return {
        "layer_dims": list(spec.layer_dims),
        "activation": spec.activation,
        "output_activation": spec.output_activation,
    }


def mlp_spec_from_dict(d: dict) -> MlpSpec:
    return MlpSpec(tuple(d["layer_dims"]), d["activation"], d["output_activation"])
