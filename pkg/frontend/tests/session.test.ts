import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ServiceClient, SocketLike } from "../src/client.js";
import { PROTOCOL_VERSION, StatePayload } from "../src/protocol.js";
import { Dashboard } from "../src/store.js";
import { makeDrone, makeState } from "./helpers.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onopen: (() => void) | null = null;
  onmessage: ((event: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    if (!this.closed) {
      this.closed = true;
      this.onclose?.();
    }
  }

  // test-side controls
  open(): void {
    this.onopen?.();
  }

  push(obj: unknown): void {
    this.onmessage?.({ data: JSON.stringify(obj) + "\n" });
  }

  pushVersion(version = PROTOCOL_VERSION): void {
    this.push({ version });
  }
}

interface Session {
  dash: Dashboard;
  client: ServiceClient;
  sockets: FakeSocket[];
  clock: { now: number };
  command(kind: string, payload: Record<string, unknown> | null, label: string): number | null;
  lastSent(): { kind: string; id: number; payload: unknown; sender: string };
}

function startSession(): Session {
  const clock = { now: 0 };
  const sockets: FakeSocket[] = [];
  const dash = new Dashboard(() => clock.now);
  const client = new ServiceClient(
    () => {
      const socket = new FakeSocket();
      sockets.push(socket);
      return socket;
    },
    {
      onMessage: (m) => dash.handleMessage(m),
      onOpen: () => dash.handleOpen(),
      onClose: () => dash.handleClose(),
      onProtocolError: (reason) => dash.handleProtocolError(reason),
    },
  );
  client.connect();
  return {
    dash,
    client,
    sockets,
    clock,
    command(kind, payload, label) {
      const id = client.send(kind, payload);
      if (id !== null) {
        dash.expect(id, label);
      }
      return id;
    },
    lastSent() {
      const socket = sockets.at(-1)!;
      return JSON.parse(socket.sent.at(-1)!) as ReturnType<Session["lastSent"]>;
    },
  };
}

function streamStates(socket: FakeSocket, firstId: number, states: StatePayload[]): void {
  states.forEach((state, i) => {
    socket.push({ kind: "STATE_UPDATE", id: firstId + i, payload: state });
  });
}

beforeEach(() => {
  vi.useFakeTimers();
});

afterEach(() => {
  vi.useRealTimers();
});

describe("handshake", () => {
  it("announces its protocol version as the first line", () => {
    const s = startSession();
    s.sockets[0].open();
    expect(s.sockets[0].sent).toHaveLength(1);
    expect(JSON.parse(s.sockets[0].sent[0])).toEqual({ version: PROTOCOL_VERSION });
    expect(s.dash.connected).toBe(true);
  });

  it("ignores messages that arrive before the server's version line", () => {
    const s = startSession();
    s.sockets[0].open();
    s.sockets[0].push({ kind: "STATE_UPDATE", id: 1, payload: makeState() });
    expect(s.dash.state).toBeNull();
    s.sockets[0].pushVersion();
    s.sockets[0].push({ kind: "STATE_UPDATE", id: 2, payload: makeState() });
    expect(s.dash.state).not.toBeNull();
  });

  it("refuses to talk to a different protocol version", () => {
    const s = startSession();
    s.sockets[0].open();
    s.sockets[0].pushVersion("una/2");
    expect(s.dash.protocolFault).toContain("una/2");
    expect(s.sockets[0].closed).toBe(true);
    vi.advanceTimersByTime(60_000);
    expect(s.sockets).toHaveLength(1); // no reconnect after a version refusal
  });
});

describe("live state stream", () => {
  it("renders a 20 Hz stream tick by tick", () => {
    const s = startSession();
    s.sockets[0].open();
    s.sockets[0].pushVersion();
    const states = Array.from({ length: 20 }, (_, i) =>
      makeState({ tick: i + 1, time_s: (i + 1) * 0.05 }),
    );
    streamStates(s.sockets[0], 1, states);
    expect(s.dash.state?.tick).toBe(20);
    expect(s.dash.state?.time_s).toBeCloseTo(1.0, 9);
    expect(s.dash.selected).toBe("d1");
    expect(s.dash.feedStale()).toBe(false);
  });

  it("handles several messages packed into one socket event", () => {
    const s = startSession();
    s.sockets[0].open();
    const lines = [
      JSON.stringify({ version: PROTOCOL_VERSION }),
      JSON.stringify({ kind: "STATE_UPDATE", id: 1, payload: makeState({ tick: 1 }) }),
      JSON.stringify({ kind: "STATE_UPDATE", id: 2, payload: makeState({ tick: 2 }) }),
      "",
    ].join("\n");
    s.sockets[0].onmessage?.({ data: lines });
    expect(s.dash.state?.tick).toBe(2);
  });
});

describe("commands", () => {
  it("sends an emergency stop and shows the landing that follows", () => {
    const s = startSession();
    s.sockets[0].open();
    s.sockets[0].pushVersion();
    streamStates(s.sockets[0], 1, [makeState({ tick: 1 })]);

    const id = s.command("EMERGENCY_STOP", null, "emergency stop");
    expect(id).toBe(1);
    const sent = s.lastSent();
    expect(sent.kind).toBe("EMERGENCY_STOP");
    expect(sent.sender).toBe("admin-ui");

    s.sockets[0].push({ kind: "ACK", id: 2, payload: { for: id } });
    expect(s.dash.toasts.at(-1)?.text).toBe("emergency stop: ok");

    const landing = makeState({
      tick: 2,
      emergency: true,
      drones: [makeDrone({ phase: "LANDING" }), makeDrone({ id: "d2", phase: "LANDING" })],
    });
    streamStates(s.sockets[0], 3, [landing]);
    expect(s.dash.state?.emergency).toBe(true);
    expect(s.dash.state?.drones.map((d) => d.phase)).toEqual(["LANDING", "LANDING"]);
  });

  it("sends the clicked world coordinate as a manual goal", () => {
    const s = startSession();
    s.sockets[0].open();
    s.sockets[0].pushVersion();
    streamStates(s.sockets[0], 1, [makeState()]);

    s.command("MANUAL_CMD", { drone: "d1", goal: [0.625, 1.05] }, "goto d1");
    const sent = s.lastSent();
    expect(sent.kind).toBe("MANUAL_CMD");
    expect(sent.payload).toEqual({ drone: "d1", goal: [0.625, 1.05] });
  });

  it("allocates monotone ids within one connection", () => {
    const s = startSession();
    s.sockets[0].open();
    s.sockets[0].pushVersion();
    const ids = [
      s.command("TAKEOFF", { drone: "d1" }, "takeoff d1"),
      s.command("FRAME_REQUEST", null, "camera frame"),
      s.command("LAND", { drone: "d1" }, "land d1"),
    ];
    expect(ids).toEqual([1, 2, 3]);
  });

  it("refuses to send while disconnected", () => {
    const s = startSession();
    expect(s.client.send("TAKEOFF", { drone: "d1" })).toBeNull();
    s.sockets[0].open();
    s.sockets[0].pushVersion();
    s.sockets[0].close();
    expect(s.client.send("TAKEOFF", { drone: "d1" })).toBeNull();
  });
});

describe("reconnect", () => {
  it("backs off, redials, and starts a fresh id space", () => {
    const s = startSession();
    s.sockets[0].open();
    s.sockets[0].pushVersion();
    streamStates(s.sockets[0], 1, [makeState({ tick: 1 })]);
    expect(s.command("TAKEOFF", { drone: "d1" }, "takeoff d1")).toBe(1);

    s.sockets[0].close();
    expect(s.dash.connected).toBe(false);
    expect(s.dash.toasts.at(-1)?.text).toContain("connection lost");

    vi.advanceTimersByTime(1400);
    expect(s.sockets).toHaveLength(1);
    vi.advanceTimersByTime(200);
    expect(s.sockets).toHaveLength(2);

    s.sockets[1].open();
    s.sockets[1].pushVersion();
    expect(s.dash.connected).toBe(true);
    expect(s.command("TAKEOFF", { drone: "d1" }, "takeoff d1")).toBe(1);
    streamStates(s.sockets[1], 1, [makeState({ tick: 99 })]);
    expect(s.dash.state?.tick).toBe(99);
  });

  it("keeps retrying while the service stays down", () => {
    const s = startSession();
    s.sockets[0].open();
    s.sockets[0].pushVersion();
    s.sockets[0].close();
    vi.advanceTimersByTime(1500);
    s.sockets[1].close(); // dial fails immediately
    vi.advanceTimersByTime(1500);
    expect(s.sockets).toHaveLength(3);
  });

  it("stops dialing once stopped", () => {
    const s = startSession();
    s.sockets[0].open();
    s.sockets[0].pushVersion();
    s.client.stop();
    vi.advanceTimersByTime(60_000);
    expect(s.sockets).toHaveLength(1);
    expect(s.sockets[0].closed).toBe(true);
  });
});
