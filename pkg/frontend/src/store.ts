// Dashboard model: the single mutable view of the service that the DOM
// and canvas render from. No DOM access here so tests can drive it raw.

import { DecodedFrame, decodeBase64Ppm } from "./ppm.js";
import { InboundFilter, StatePayload, WireMessage } from "./protocol.js";

export interface Toast {
  text: string;
  kind: "info" | "error";
  at: number;
}

const TOAST_KEEP = 6;
const FEED_STALE_MS = 1000;

export class Dashboard {
  state: StatePayload | null = null;
  connected = false;
  protocolFault: string | null = null;
  selected: string | null = null;
  toasts: Toast[] = [];
  frame: DecodedFrame | null = null;

  private filter = new InboundFilter();
  private pending = new Map<number, string>();
  private lastStateAt = -Infinity;

  constructor(private readonly now: () => number = () => Date.now()) {}

  handleOpen(): void {
    this.connected = true;
    this.filter.reset();
    this.pending.clear();
    this.toast("connected", "info");
  }

  handleClose(): void {
    this.connected = false;
    this.toast("connection lost, retrying", "error");
  }

  handleProtocolError(reason: string): void {
    this.protocolFault = reason;
    this.toast(reason, "error");
  }

  /** Label an in-flight request so its ACK or FAULT reads like the button. */
  expect(id: number, label: string): void {
    this.pending.set(id, label);
  }

  handleMessage(message: WireMessage): void {
    if (!this.filter.accept(message)) {
      return; // out of order, superseded
    }
    switch (message.kind) {
      case "STATE_UPDATE":
        this.state = message.payload as unknown as StatePayload;
        this.lastStateAt = this.now();
        this.ensureSelection();
        break;
      case "ACK":
        this.handleAck(message.payload ?? {});
        break;
      case "FAULT":
        this.handleFault(message.payload ?? {});
        break;
      default:
        break; // unknown kinds are fine, newer servers may add some
    }
  }

  private handleAck(payload: Record<string, unknown>): void {
    const label = this.takeLabel(payload["for"]);
    if (typeof payload["frame_ppm_b64"] === "string") {
      try {
        this.frame = decodeBase64Ppm(payload["frame_ppm_b64"]);
        this.toast(`${label}: frame ${this.frame.width}x${this.frame.height}`, "info");
      } catch (err) {
        this.toast(`${label}: bad frame (${String(err)})`, "error");
      }
      return;
    }
    this.toast(`${label}: ok`, "info");
  }

  private handleFault(payload: Record<string, unknown>): void {
    if ("for" in payload) {
      const label = this.takeLabel(payload["for"]);
      const reason = typeof payload["reason"] === "string" ? payload["reason"] : "rejected";
      this.toast(`${label}: ${reason}`, "error");
      return;
    }
    // Unsolicited broadcast: a drone tripped a fault server-side.
    const drone = payload["drone"];
    const fault = payload["fault"];
    this.toast(`${String(drone)}: ${String(fault)}`, "error");
  }

  private takeLabel(forId: unknown): string {
    if (typeof forId === "number" && this.pending.has(forId)) {
      const label = this.pending.get(forId)!;
      this.pending.delete(forId);
      return label;
    }
    return `request #${String(forId)}`;
  }

  private ensureSelection(): void {
    const drones = this.state?.drones ?? [];
    if (drones.some((d) => d.id === this.selected)) {
      return;
    }
    this.selected = drones.length > 0 ? drones[0].id : null;
  }

  select(id: string): void {
    if (this.state?.drones.some((d) => d.id === id)) {
      this.selected = id;
    }
  }

  /** True once the state feed has gone quiet while nominally connected. */
  feedStale(): boolean {
    return this.connected && this.state !== null && this.now() - this.lastStateAt > FEED_STALE_MS;
  }

  private toast(text: string, kind: Toast["kind"]): void {
    this.toasts.push({ text, kind, at: this.now() });
    if (this.toasts.length > TOAST_KEEP) {
      this.toasts.splice(0, this.toasts.length - TOAST_KEEP);
    }
  }
}
