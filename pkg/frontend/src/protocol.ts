// Wire protocol: one JSON object per line (or per WebSocket text frame).
// The server speaks first with {"version": "una/1"}; afterwards every
// message carries a kind, a per-direction monotone id, and a payload.

export const PROTOCOL_VERSION = "una/1";

export interface DroneSnapshot {
  id: string;
  fix: [number, number] | null;
  compass: number;
  phase: string;
  controller_phase: string;
  battery: number;
  fault: string | null;
  objective: [number, number, number] | null;
  manual_hold: boolean;
}

export interface StatePayload {
  tick: number;
  time_s: number;
  stale: boolean;
  drones: DroneSnapshot[];
  targets: [number, number][];
  covered_count: number;
  emergency: boolean;
  arena: { width: number; height: number };
  camera: { fov: number; r_min: number; r_max: number };
}

export interface WireMessage {
  kind: string;
  id: number;
  payload?: Record<string, unknown> | null;
  sender?: string;
}

export type ParsedLine =
  | { type: "version"; version: string }
  | { type: "message"; message: WireMessage }
  | { type: "invalid"; reason: string };

export function parseLine(line: string): ParsedLine {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    return { type: "invalid", reason: "not JSON" };
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    return { type: "invalid", reason: "not an object" };
  }
  const rec = obj as Record<string, unknown>;
  if (!("kind" in rec) && typeof rec.version === "string") {
    return { type: "version", version: rec.version };
  }
  if (typeof rec.kind !== "string" || !Number.isInteger(rec.id)) {
    return { type: "invalid", reason: "missing kind or id" };
  }
  return {
    type: "message",
    message: {
      kind: rec.kind,
      id: rec.id as number,
      payload: (rec.payload as Record<string, unknown> | null) ?? null,
      sender: typeof rec.sender === "string" ? rec.sender : undefined,
    },
  };
}

/** Drops out-of-order frames; only ids above the high-water mark render. */
export class InboundFilter {
  private highest = 0;

  accept(message: WireMessage): boolean {
    if (message.id <= this.highest) {
      return false;
    }
    this.highest = message.id;
    return true;
  }

  reset(): void {
    this.highest = 0;
  }
}

/** Outbound ids are monotone per connection, starting at 1. */
export class IdAllocator {
  private next = 1;

  take(): number {
    return this.next++;
  }

  reset(): void {
    this.next = 1;
  }
}

export function encodeMessage(
  kind: string,
  id: number,
  payload: Record<string, unknown> | null,
): string {
  return JSON.stringify({ kind, id, payload, sender: "admin-ui" });
}
