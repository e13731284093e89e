"""Binary PPM (P6) encoding for frames: golden files, wire transfer, CLI input."""

from __future__ import annotations

import numpy as np

from .vision import Frame


def encode(frame: Frame) -> bytes:
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii")
    return header + frame.pixels.tobytes()


def decode(data: bytes) -> Frame:
    """Parse a P6 file. Handles whitespace and # comments in the header."""
    if not data.startswith(b"P6"):
        raise ValueError("not a P6 ppm")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != ord("\n"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    expected = width * height * 3
    raster = data[pos:pos + expected]
    if len(raster) != expected:
        raise ValueError(f"raster truncated: {len(raster)} of {expected} bytes")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()
    return Frame(pixels)


def write(path, frame: Frame):
    with open(path, "wb") as fh:
        fh.write(encode(frame))


def read(path) -> Frame:
    with open(path, "rb") as fh:
        return decode(fh.read())
