/**
 * Browser entry point: wires the panel client to the DOM. Everything
 * testable lives in the imported modules; this file only touches elements.
 */

import { PanelClient, SocketFactory } from "./client.js";
import { JOG_LEGEND } from "./jog.js";
import { drawView, Draw2D } from "./scene.js";

const VIEW_PX = 320;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function ctx2d(canvas: HTMLCanvasElement): Draw2D {
  const ctx = canvas.getContext("2d");
  if (ctx === null) throw new Error("2d canvas context unavailable");
  return ctx;
}

function main(): void {
  const topCanvas = el<HTMLCanvasElement>("view-top");
  const sideCanvas = el<HTMLCanvasElement>("view-side");
  const banner = el<HTMLDivElement>("banner");
  const status = el<HTMLSpanElement>("status-line");
  const modeBox = el<HTMLInputElement>("intervene-box");
  const commandInput = el<HTMLInputElement>("command-input");
  const commandError = el<HTMLSpanElement>("command-error");
  const activeCommand = el<HTMLSpanElement>("active-command");
  const legend = el<HTMLUListElement>("jog-legend");

  for (const [keys, what] of JOG_LEGEND) {
    const item = document.createElement("li");
    item.textContent = `${keys} — ${what}`;
    legend.appendChild(item);
  }

  const wsUrl = `ws://${location.host}/ws`;
  const makeSocket: SocketFactory = (url) =>
    new WebSocket(url) as unknown as ReturnType<SocketFactory>;

  const client = new PanelClient(wsUrl, makeSocket, {
    onScene: (scene) => {
      drawView(ctx2d(topCanvas), scene, "top", VIEW_PX);
      drawView(ctx2d(sideCanvas), scene, "side", VIEW_PX);
      status.textContent =
        `${scene.episode_id}  step ${scene.step}  mode ${scene.mode}` +
        `  policy v${scene.snapshot_version}`;
    },
    onStatus: (s) => {
      banner.textContent =
        s === "open" ? "" : s === "reconnecting" ? "connection lost — reconnecting…" : s;
      banner.style.display = s === "open" ? "none" : "block";
    },
  });

  modeBox.addEventListener("change", () => client.setIntervene(modeBox.checked));

  commandInput.addEventListener("keydown", (ev) => {
    ev.stopPropagation();
    if (ev.key !== "Enter") return;
    const check = client.submitCommand(commandInput.value);
    commandError.textContent = check.ok ? "" : check.error;
    if (check.ok) {
      activeCommand.textContent = client.activeCommand;
      commandInput.value = "";
    }
  });

  el<HTMLButtonElement>("clear-command").addEventListener("click", () => {
    client.clearCommand();
    activeCommand.textContent = client.activeCommand;
    commandError.textContent = "";
  });
  el<HTMLButtonElement>("step-button").addEventListener("click", () =>
    client.requestStep(),
  );
  el<HTMLButtonElement>("reset-button").addEventListener("click", () =>
    client.requestReset(),
  );

  window.addEventListener("keydown", (ev) => {
    if (ev.target === commandInput) return;
    if (client.jog(ev.key)) ev.preventDefault();
  });

  client.connect();
}

main();
