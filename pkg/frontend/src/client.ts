/**
 * Panel session client: owns the websocket, tracks session state, and
 * enforces client-side rules (jogs only count in intervention mode, command
 * text is validated before anything is sent). The socket constructor is
 * injected so tests can use a fake or the "ws" package instead of the
 * browser WebSocket.
 */

import { CommandCheck, NULL_COMMAND_TEXT, validateCommand } from "./commands.js";
import { keyToTweak } from "./jog.js";
import {
  Ack,
  ClientMessage,
  encodeClientMessage,
  parseServerMessage,
  SceneState,
} from "./protocol.js";

/** The slice of the WebSocket API the client uses (browser and "ws" both match). */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface PanelEvents {
  onScene?: (scene: SceneState) => void;
  onAck?: (ack: Ack) => void;
  onStatus?: (status: ConnectionStatus) => void;
}

export type ConnectionStatus = "connecting" | "open" | "reconnecting" | "closed";

export class PanelClient {
  readonly url: string;
  scene: SceneState | null = null;
  intervene = false;
  gripClosed = false;
  activeCommand: string = NULL_COMMAND_TEXT;
  status: ConnectionStatus = "closed";
  /** Messages actually written to the socket, newest last (for tests/debug). */
  readonly sentLog: ClientMessage[] = [];

  private socket: SocketLike | null = null;
  private readonly makeSocket: SocketFactory;
  private readonly events: PanelEvents;
  private readonly reconnectDelayMs: number;
  private closedByUser = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    url: string,
    makeSocket: SocketFactory,
    events: PanelEvents = {},
    reconnectDelayMs = 1000,
  ) {
    this.url = url;
    this.makeSocket = makeSocket;
    this.events = events;
    this.reconnectDelayMs = reconnectDelayMs;
  }

  connect(): void {
    this.closedByUser = false;
    this.setStatus(this.status === "closed" ? "connecting" : "reconnecting");
    const sock = this.makeSocket(this.url);
    this.socket = sock;
    sock.onopen = () => this.setStatus("open");
    sock.onmessage = (ev) => this.handleFrame(String(ev.data));
    sock.onerror = () => {
      /* onclose follows; nothing to do here */
    };
    sock.onclose = () => {
      this.socket = null;
      if (this.closedByUser) {
        this.setStatus("closed");
        return;
      }
      this.setStatus("reconnecting");
      this.reconnectTimer = setTimeout(() => this.connect(), this.reconnectDelayMs);
    };
  }

  close(): void {
    this.closedByUser = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    this.socket?.close();
    this.socket = null;
    this.setStatus("closed");
  }

  // -- operator actions --

  setIntervene(on: boolean): void {
    this.intervene = on;
    this.send({ type: "mode_toggle", intervene: on });
  }

  /**
   * One keyboard jog. Only forwarded while intervention mode is on — in
   * observe mode a stray keypress must never perturb the episode. Returns
   * whether a tweak was sent.
   */
  jog(key: string): boolean {
    if (!this.intervene) return false;
    const tweak = keyToTweak(key, this.gripClosed);
    if (tweak === null) return false;
    if (key === " ") this.gripClosed = !this.gripClosed;
    this.send(tweak);
    return true;
  }

  /**
   * Submits refinement-command text. Invalid text is rejected locally and
   * never reaches the session; the result carries the error to display.
   */
  submitCommand(text: string): CommandCheck {
    const check = validateCommand(text);
    if (check.ok) {
      this.activeCommand = check.text;
      this.send({ type: "talk_input", command_text: check.text });
    }
    return check;
  }

  clearCommand(): CommandCheck {
    return this.submitCommand(NULL_COMMAND_TEXT);
  }

  requestStep(): void {
    this.send({ type: "step_request" });
  }

  requestReset(): void {
    this.send({ type: "reset_request" });
  }

  // -- internals --

  private send(msg: ClientMessage): void {
    if (this.socket === null || this.status !== "open") return;
    this.sentLog.push(msg);
    this.socket.send(encodeClientMessage(msg));
  }

  private handleFrame(raw: string): void {
    const msg = parseServerMessage(raw);
    if (msg === null) return;
    if (msg.type === "scene_state") {
      this.scene = msg;
      this.gripClosed = msg.grip;
      this.events.onScene?.(msg);
    } else {
      this.events.onAck?.(msg);
    }
  }

  private setStatus(status: ConnectionStatus): void {
    this.status = status;
    this.events.onStatus?.(status);
  }
}
