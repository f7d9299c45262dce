/**
 * Message types exchanged with the training-side control-panel websocket,
 * plus defensive parsing of inbound frames. The wire format is one JSON
 * object per websocket text frame.
 */

export interface SceneState {
  type: "scene_state";
  step: number;
  /** [x, y, z, roll, pitch, yaw] of the end effector, metres / radians. */
  ee_pose: number[];
  grip: boolean;
  object_pose: number[];
  goal_pose: number[];
  attached: boolean;
  mode: "intervene" | "observe";
  episode_id: string;
  task_id: number;
  snapshot_version: number;
}

export interface Ack {
  type: "ack";
  ref: string;
  ok: boolean;
  error?: string;
}

export type ServerMessage = SceneState | Ack;

export interface TweakInput {
  type: "tweak_input";
  dpos: [number, number, number];
  drot: [number, number, number];
  grip: number;
}

export interface TalkInput {
  type: "talk_input";
  command_text: string;
}

export interface ModeToggle {
  type: "mode_toggle";
  intervene: boolean;
}

export interface ResetRequest {
  type: "reset_request";
}

export interface StepRequest {
  type: "step_request";
}

export type ClientMessage =
  | TweakInput
  | TalkInput
  | ModeToggle
  | ResetRequest
  | StepRequest;

function isPose(value: unknown, length: number): value is number[] {
  return (
    Array.isArray(value) &&
    value.length === length &&
    value.every((v) => typeof v === "number" && Number.isFinite(v))
  );
}

/**
 * Parses one inbound frame; returns null for anything that is not a
 * well-formed server message so a glitchy connection can't wedge the panel.
 */
export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const msg = data as Record<string, unknown>;
  if (msg.type === "ack") {
    if (typeof msg.ref !== "string" || typeof msg.ok !== "boolean") return null;
    return msg as unknown as Ack;
  }
  if (msg.type === "scene_state") {
    if (
      typeof msg.step !== "number" ||
      !isPose(msg.ee_pose, 6) ||
      !isPose(msg.object_pose, 6) ||
      !isPose(msg.goal_pose, 6) ||
      typeof msg.grip !== "boolean" ||
      typeof msg.attached !== "boolean" ||
      (msg.mode !== "intervene" && msg.mode !== "observe") ||
      typeof msg.episode_id !== "string" ||
      typeof msg.task_id !== "number"
    ) {
      return null;
    }
    return msg as unknown as SceneState;
  }
  return null;
}

export function encodeClientMessage(msg: ClientMessage): string {
  return JSON.stringify(msg);
}
