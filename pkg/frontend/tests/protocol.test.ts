import { describe, expect, it } from "vitest";

import {
  IdAllocator,
  InboundFilter,
  encodeMessage,
  parseLine,
} from "../src/protocol.js";

describe("parseLine", () => {
  it("recognises the version line", () => {
    expect(parseLine('{"version": "una/1"}')).toEqual({
      type: "version",
      version: "una/1",
    });
  });

  it("parses a well formed message", () => {
    const parsed = parseLine(
      '{"kind": "STATE_UPDATE", "id": 7, "payload": {"tick": 3}, "sender": "svc"}',
    );
    expect(parsed).toEqual({
      type: "message",
      message: { kind: "STATE_UPDATE", id: 7, payload: { tick: 3 }, sender: "svc" },
    });
  });

  it("defaults a missing payload to null", () => {
    const parsed = parseLine('{"kind": "ACK", "id": 1}');
    expect(parsed.type).toBe("message");
    if (parsed.type === "message") {
      expect(parsed.message.payload).toBeNull();
    }
  });

  it.each([
    ["garbage", "not json at all"],
    ["array", "[1, 2, 3]"],
    ["number", "42"],
    ["missing id", '{"kind": "ACK"}'],
    ["fractional id", '{"kind": "ACK", "id": 1.5}'],
    ["kindless non-version", '{"id": 3}'],
    ["non-string version", '{"version": 1}'],
  ])("rejects %s", (_label, line) => {
    expect(parseLine(line).type).toBe("invalid");
  });
});

describe("InboundFilter", () => {
  it("drops ids at or below the high-water mark", () => {
    const filter = new InboundFilter();
    expect(filter.accept({ kind: "STATE_UPDATE", id: 1, payload: null })).toBe(true);
    expect(filter.accept({ kind: "STATE_UPDATE", id: 1, payload: null })).toBe(false);
    expect(filter.accept({ kind: "STATE_UPDATE", id: 3, payload: null })).toBe(true);
    expect(filter.accept({ kind: "STATE_UPDATE", id: 2, payload: null })).toBe(false);
    expect(filter.accept({ kind: "ACK", id: 4, payload: null })).toBe(true);
  });

  it("starts over after reset, for a fresh connection", () => {
    const filter = new InboundFilter();
    filter.accept({ kind: "STATE_UPDATE", id: 9, payload: null });
    filter.reset();
    expect(filter.accept({ kind: "STATE_UPDATE", id: 1, payload: null })).toBe(true);
  });
});

describe("IdAllocator", () => {
  it("hands out 1, 2, 3 and resets to 1", () => {
    const ids = new IdAllocator();
    expect([ids.take(), ids.take(), ids.take()]).toEqual([1, 2, 3]);
    ids.reset();
    expect(ids.take()).toBe(1);
  });
});

describe("encodeMessage", () => {
  it("round-trips through parseLine and tags the sender", () => {
    const line = encodeMessage("MANUAL_CMD", 4, { drone: "d1", goal: [0.6, 1.0] });
    const parsed = parseLine(line);
    expect(parsed).toEqual({
      type: "message",
      message: {
        kind: "MANUAL_CMD",
        id: 4,
        payload: { drone: "d1", goal: [0.6, 1.0] },
        sender: "admin-ui",
      },
    });
  });

  it("keeps floats exact through the JSON round trip", () => {
    const goal = [0.6231562043547265, 1.0499999999999998];
    const line = encodeMessage("MANUAL_CMD", 1, { drone: "d1", goal });
    const back = JSON.parse(line) as { payload: { goal: [number, number] } };
    expect(back.payload.goal[0]).toBe(goal[0]);
    expect(back.payload.goal[1]).toBe(goal[1]);
  });
});
