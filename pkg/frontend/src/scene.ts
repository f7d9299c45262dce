/**
 * Schematic scene rendering: two orthographic views of the workspace cube
 * (top-down x-y and side-on x-z) drawn onto 2D canvas contexts. Projection
 * math is split out so it can be tested without a DOM.
 */

import { SceneState } from "./protocol.js";

/** Workspace cube half-extent in metres; matches the training environment. */
export const WORKSPACE_HALF_M = 0.15;

export type View = "top" | "side";

/**
 * Projects a world position onto a square canvas of the given pixel size.
 * Top view maps world x right, world y up-screen; side view maps world x
 * right, world z up-screen. Canvas y grows downward, hence the flip.
 */
export function project(
  pos: [number, number, number],
  view: View,
  sizePx: number,
): [number, number] {
  const [x, y, z] = pos;
  const u = view === "top" ? y : z;
  const scale = sizePx / (2 * WORKSPACE_HALF_M);
  return [(x + WORKSPACE_HALF_M) * scale, (WORKSPACE_HALF_M - u) * scale];
}

/** The subset of CanvasRenderingContext2D the renderer needs. */
export interface Draw2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  clearRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  fill(): void;
  stroke(): void;
}

function marker(
  ctx: Draw2D,
  px: [number, number],
  radius: number,
  color: string,
  filled: boolean,
): void {
  ctx.beginPath();
  ctx.arc(px[0], px[1], radius, 0, 2 * Math.PI);
  if (filled) {
    ctx.fillStyle = color;
    ctx.fill();
  } else {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.stroke();
  }
}

function xyz(pose: number[]): [number, number, number] {
  return [pose[0], pose[1], pose[2]];
}

/**
 * Draws one view of the scene: workspace border, goal (hollow green),
 * object (orange), end effector (blue, filled when the gripper is closed),
 * and a line from effector to object while attached.
 */
export function drawView(
  ctx: Draw2D,
  scene: SceneState,
  view: View,
  sizePx: number,
): void {
  ctx.clearRect(0, 0, sizePx, sizePx);
  ctx.strokeStyle = "#888";
  ctx.lineWidth = 1;
  ctx.strokeRect(0.5, 0.5, sizePx - 1, sizePx - 1);

  const goal = project(xyz(scene.goal_pose), view, sizePx);
  const obj = project(xyz(scene.object_pose), view, sizePx);
  const ee = project(xyz(scene.ee_pose), view, sizePx);

  if (scene.attached) {
    ctx.beginPath();
    ctx.moveTo(ee[0], ee[1]);
    ctx.lineTo(obj[0], obj[1]);
    ctx.strokeStyle = "#f80";
    ctx.lineWidth = 1;
    ctx.stroke();
  }
  marker(ctx, goal, 8, "#2a2", false);
  marker(ctx, obj, 5, "#f80", true);
  marker(ctx, ee, 6, "#36f", scene.grip);
}
