import { describe, expect, it } from "vitest";

import { decodeBase64Ppm, decodePpm } from "../src/ppm.js";

function ppmBytes(header: string, pixels: number[]): Uint8Array {
  const head = new TextEncoder().encode(header);
  const out = new Uint8Array(head.length + pixels.length);
  out.set(head, 0);
  out.set(pixels, head.length);
  return out;
}

describe("decodePpm", () => {
  it("decodes a 2x2 P6 image into RGBA", () => {
    const frame = decodePpm(
      ppmBytes("P6\n2 2\n255\n", [
        255, 0, 0, 0, 255, 0,
        0, 0, 255, 9, 8, 7,
      ]),
    );
    expect(frame.width).toBe(2);
    expect(frame.height).toBe(2);
    expect(frame.rgba).toHaveLength(16);
    expect([...frame.rgba.slice(0, 4)]).toEqual([255, 0, 0, 255]);
    expect([...frame.rgba.slice(12)]).toEqual([9, 8, 7, 255]);
  });

  it("tolerates comments and loose whitespace in the header", () => {
    const frame = decodePpm(ppmBytes("P6 # camera\n# 2026\n 2\t1 \n255 ", [1, 2, 3, 4, 5, 6]));
    expect(frame.width).toBe(2);
    expect(frame.height).toBe(1);
    expect([...frame.rgba]).toEqual([1, 2, 3, 255, 4, 5, 6, 255]);
  });

  it("rejects the greyscale magic", () => {
    expect(() => decodePpm(ppmBytes("P5\n1 1\n255\n", [0]))).toThrow();
  });

  it("rejects truncated pixel data", () => {
    expect(() => decodePpm(ppmBytes("P6\n2 2\n255\n", [1, 2, 3]))).toThrow();
  });

  it("rejects a 16-bit maxval", () => {
    expect(() => decodePpm(ppmBytes("P6\n1 1\n65535\n", [0, 0, 0, 0, 0, 0]))).toThrow();
  });
});

describe("decodeBase64Ppm", () => {
  it("decodes what the frame endpoint sends", () => {
    const raw = ppmBytes("P6\n1 1\n255\n", [10, 200, 30]);
    const b64 = btoa(String.fromCharCode(...raw));
    const frame = decodeBase64Ppm(b64);
    expect(frame.width).toBe(1);
    expect([...frame.rgba]).toEqual([10, 200, 30, 255]);
  });
});
