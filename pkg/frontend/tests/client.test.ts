import { describe, expect, it } from "vitest";

import { PanelClient, SocketLike } from "../src/client.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {
    this.closed = true;
    this.onclose?.();
  }
  open(): void {
    this.onopen?.();
  }
  receive(obj: unknown): void {
    this.onmessage?.({ data: JSON.stringify(obj) });
  }
}

function openClient() {
  const sockets: FakeSocket[] = [];
  const client = new PanelClient(
    "ws://test/ws",
    () => {
      const s = new FakeSocket();
      sockets.push(s);
      return s;
    },
    {},
    1,
  );
  client.connect();
  sockets[0].open();
  return { client, sockets };
}

const SCENE = {
  type: "scene_state",
  step: 1,
  ee_pose: [0, 0, 0.1, 0, 0, 0],
  grip: true,
  object_pose: [0, 0, 0, 0, 0, 0],
  goal_pose: [0, 0, 0, 0, 0, 0],
  attached: false,
  mode: "observe",
  episode_id: "ep0",
  task_id: 0,
  snapshot_version: 2,
};

describe("PanelClient", () => {
  it("tracks scene state and grip from inbound frames", () => {
    const { client, sockets } = openClient();
    expect(client.gripClosed).toBe(false);
    sockets[0].receive(SCENE);
    expect(client.scene?.step).toBe(1);
    expect(client.gripClosed).toBe(true);
  });

  it("ignores jogs outside intervention mode", () => {
    const { client, sockets } = openClient();
    expect(client.jog("ArrowRight")).toBe(false);
    expect(sockets[0].sent).toHaveLength(0);
  });

  it("sends jogs while intervening", () => {
    const { client, sockets } = openClient();
    client.setIntervene(true);
    expect(client.jog("ArrowRight")).toBe(true);
    const msgs = sockets[0].sent.map((s) => JSON.parse(s));
    expect(msgs[0]).toEqual({ type: "mode_toggle", intervene: true });
    expect(msgs[1].type).toBe("tweak_input");
    expect(msgs[1].dpos).toEqual([0.01, 0, 0]);
  });

  it("rejects invalid command text locally without sending", () => {
    const { client, sockets } = openClient();
    const check = client.submitCommand("move sideways");
    expect(check.ok).toBe(false);
    expect(sockets[0].sent).toHaveLength(0);
    expect(client.activeCommand).toBe("[null]");
  });

  it("sends valid command text and tracks the active command", () => {
    const { client, sockets } = openClient();
    const check = client.submitCommand(" move right and up ");
    expect(check.ok).toBe(true);
    expect(JSON.parse(sockets[0].sent[0])).toEqual({
      type: "talk_input",
      command_text: "move right and up",
    });
    expect(client.activeCommand).toBe("move right and up");
    client.clearCommand();
    expect(client.activeCommand).toBe("[null]");
  });

  it("reconnects after an unexpected close", async () => {
    const { client, sockets } = openClient();
    const statuses: string[] = [];
    // eslint-disable-next-line @typescript-eslint/no-explicit-any
    (client as any).events.onStatus = (s: string) => statuses.push(s);
    sockets[0].onclose?.();
    expect(client.status).toBe("reconnecting");
    await new Promise((resolve) => setTimeout(resolve, 10));
    expect(sockets).toHaveLength(2);
    sockets[1].open();
    expect(client.status).toBe("open");
  });

  it("stays closed after an explicit close", async () => {
    const { client, sockets } = openClient();
    client.close();
    expect(client.status).toBe("closed");
    await new Promise((resolve) => setTimeout(resolve, 10));
    expect(sockets).toHaveLength(1);
    expect(sockets[0].closed).toBe(true);
  });

  it("drops frames that fail to parse", () => {
    const { client, sockets } = openClient();
    sockets[0].onmessage?.({ data: "{broken" });
    expect(client.scene).toBeNull();
  });
});
