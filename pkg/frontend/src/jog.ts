/**
 * Keyboard jog map: one keystroke becomes one single-step tweak. Position
 * jogs move the full per-step limit along one axis; bracket keys yaw.
 * The space bar toggles the gripper, so the grip value depends on the
 * current gripper state.
 */

import { TweakInput } from "./protocol.js";

export const JOG_POS_M = 0.01; // per-step position limit, metres
export const JOG_ROT_RAD = 0.05; // per-step rotation limit, radians

const POS_KEYS: Record<string, [number, number, number]> = {
  ArrowRight: [+JOG_POS_M, 0, 0],
  ArrowLeft: [-JOG_POS_M, 0, 0],
  ArrowUp: [0, +JOG_POS_M, 0],
  ArrowDown: [0, -JOG_POS_M, 0],
  PageUp: [0, 0, +JOG_POS_M],
  PageDown: [0, 0, -JOG_POS_M],
};

const YAW_KEYS: Record<string, number> = {
  "[": -JOG_ROT_RAD,
  "]": +JOG_ROT_RAD,
};

/** Human-readable legend for the on-page help box. */
export const JOG_LEGEND: Array<[string, string]> = [
  ["← / →", "jog -x / +x (left / right)"],
  ["↓ / ↑", "jog -y / +y (backward / forward)"],
  ["PgDn / PgUp", "jog -z / +z (down / up)"],
  ["[ / ]", "yaw - / +"],
  ["space", "toggle gripper"],
];

/**
 * Maps a keyboard key to a tweak message, or null for keys outside the jog
 * map. `gripClosed` is the current gripper state (space toggles it).
 */
export function keyToTweak(key: string, gripClosed: boolean): TweakInput | null {
  const grip = gripClosed ? 1.0 : 0.0;
  const pos = POS_KEYS[key];
  if (pos !== undefined) {
    return { type: "tweak_input", dpos: pos, drot: [0, 0, 0], grip };
  }
  const yaw = YAW_KEYS[key];
  if (yaw !== undefined) {
    return { type: "tweak_input", dpos: [0, 0, 0], drot: [0, 0, yaw], grip };
  }
  if (key === " ") {
    return {
      type: "tweak_input",
      dpos: [0, 0, 0],
      drot: [0, 0, 0],
      grip: gripClosed ? 0.0 : 1.0,
    };
  }
  return null;
}
