/**
 * End-to-end scripted session against a real training-side server: toggles
 * intervention mode, jogs the arm right six times, resets, and then checks
 * the episode log the server recorded — exactly those six transitions are
 * flagged intervened and the mined records include a "right" command.
 */

import { ChildProcess, spawn } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { PanelClient, SocketLike } from "../src/client.js";
import { SceneState } from "../src/protocol.js";

const SERVER_SCRIPT = new URL("./serve_session.py", import.meta.url).pathname;

let server: ChildProcess;
let baseUrl: string;

async function waitForServer(url: string, timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const resp = await fetch(url + "/episodes");
      if (resp.ok) return;
    } catch {
      /* not up yet */
    }
    if (Date.now() > deadline) throw new Error(`server not up at ${url}`);
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
}

beforeAll(async () => {
  server = spawn("python3", [SERVER_SCRIPT], { stdio: ["ignore", "pipe", "pipe"] });
  const port = await new Promise<number>((resolve, reject) => {
    let out = "";
    server.stdout!.on("data", (chunk: Buffer) => {
      out += chunk.toString();
      const match = out.match(/PORT (\d+)/);
      if (match) resolve(Number(match[1]));
    });
    server.on("exit", (code) => reject(new Error(`server exited early (${code})`)));
    setTimeout(() => reject(new Error("no PORT line from server")), 30_000);
  });
  baseUrl = `http://127.0.0.1:${port}`;
  await waitForServer(baseUrl, 30_000);
}, 60_000);

afterAll(() => {
  server?.kill();
});

describe("scripted intervention session", () => {
  it(
    "records exactly the jogged transitions and mines a right command",
    async () => {
      const scenes: SceneState[] = [];
      let resolveScene: (() => void) | null = null;
      const client = new PanelClient(
        baseUrl.replace("http", "ws") + "/ws",
        (url) => new WebSocket(url) as unknown as SocketLike,
        {
          onScene: (scene) => {
            scenes.push(scene);
            resolveScene?.();
          },
        },
      );
      const nextScene = () =>
        new Promise<void>((resolve) => {
          resolveScene = resolve;
        });

      let sceneArrived = nextScene();
      client.connect();
      await sceneArrived; // initial scene on connect
      expect(scenes[0].step).toBe(0);

      client.setIntervene(true);
      for (let i = 0; i < 6; i++) {
        sceneArrived = nextScene();
        expect(client.jog("ArrowRight")).toBe(true);
        await sceneArrived;
      }
      expect(scenes[scenes.length - 1].step).toBe(6);

      // Client-side rejection: invalid command text never reaches the wire.
      const sentBefore = client.sentLog.length;
      const check = client.submitCommand("move diagonal");
      expect(check.ok).toBe(false);
      expect(client.sentLog.length).toBe(sentBefore);

      sceneArrived = nextScene();
      client.requestReset();
      await sceneArrived;
      client.close();

      const episodes = (await (await fetch(baseUrl + "/episodes")).json()) as Array<{
        transitions: Array<{ intervened: boolean }>;
        records: string[];
      }>;
      expect(episodes).toHaveLength(1);
      const flags = episodes[0].transitions.map((tr) => tr.intervened);
      expect(flags).toEqual([true, true, true, true, true, true]);
      expect(episodes[0].records.some((rec) => rec.includes("right"))).toBe(true);
    },
    60_000,
  );
});
