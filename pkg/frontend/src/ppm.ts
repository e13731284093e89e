// Minimal binary PPM (P6) reader for FRAME_REQUEST replies. The service
// sends the raw overhead frame base64-encoded; we expand it to RGBA for
// putImageData.

export interface DecodedFrame {
  width: number;
  height: number;
  rgba: Uint8ClampedArray;
}

export function decodeBase64Ppm(b64: string): DecodedFrame {
  const binary = atob(b64);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) {
    bytes[i] = binary.charCodeAt(i);
  }
  return decodePpm(bytes);
}

export function decodePpm(bytes: Uint8Array): DecodedFrame {
  // header: "P6" <width> <height> <maxval> then a single whitespace byte
  let pos = 0;
  const isSpace = (b: number) => b === 32 || b === 9 || b === 10 || b === 13;

  function token(): string {
    while (pos < bytes.length) {
      if (bytes[pos] === 35) {
        // '#' comment runs to end of line
        while (pos < bytes.length && bytes[pos] !== 10) pos++;
      } else if (isSpace(bytes[pos])) {
        pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < bytes.length && !isSpace(bytes[pos]) && bytes[pos] !== 35) {
      pos++;
    }
    return String.fromCharCode(...bytes.subarray(start, pos));
  }

  if (token() !== "P6") {
    throw new Error("not a P6 ppm");
  }
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  if (!(width > 0) || !(height > 0) || maxval !== 255) {
    throw new Error("unsupported ppm header");
  }
  pos++; // the single whitespace after maxval
  const need = width * height * 3;
  if (bytes.length - pos < need) {
    throw new Error("truncated ppm body");
  }
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    rgba[i * 4] = bytes[pos + i * 3];
    rgba[i * 4 + 1] = bytes[pos + i * 3 + 1];
    rgba[i * 4 + 2] = bytes[pos + i * 3 + 2];
    rgba[i * 4 + 3] = 255;
  }
  return { width, height, rgba };
}
