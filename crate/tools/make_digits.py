#!/usr/bin/env python3
"""Generate the bundled handwritten-digit stand-in corpus in IDX format.

Renders 5x7 bitmap-font digits scaled to 28x28 with random shifts, stroke
intensity, and pixel noise, then writes images-idx3-ubyte/labels-idx1-ubyte
(the classic MNIST container layout) under testdata/digits/.
"""

import random
import struct
from pathlib import Path

FONT = {
    0: ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    1: ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    2: ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    3: ["11110", "00001", "00001", "01110", "00001", "00001", "11110"],
    4: ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    5: ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    6: ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    7: ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    8: ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    9: ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
}

H, W = 28, 28
SCALE = 3  # glyph becomes 15x21


def render(digit, rng):
    img = [[0] * W for _ in range(H)]
    glyph = FONT[digit]
    gw, gh = 5 * SCALE, 7 * SCALE
    ox = rng.randint(1, W - gw - 2)
    oy = rng.randint(1, H - gh - 2)
    ink = rng.randint(180, 255)
    for r, row in enumerate(glyph):
        for c, bit in enumerate(row):
            if bit == "1":
                for dr in range(SCALE):
                    for dc in range(SCALE):
                        y, x = oy + r * SCALE + dr, ox + c * SCALE + dc
                        img[y][x] = min(255, ink + rng.randint(-25, 0))
    # soften edges with a single 3x3 box pass
    out = [[0] * W for _ in range(H)]
    for y in range(H):
        for x in range(W):
            acc = n = 0
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < H and 0 <= xx < W:
                        acc += img[yy][xx]
                        n += 1
            out[y][x] = acc // n
    # light background noise
    for y in range(H):
        for x in range(W):
            out[y][x] = max(0, min(255, out[y][x] + rng.randint(0, 8)))
    return out


def main():
    rng = random.Random(20260823)
    n = 2048
    outdir = Path(__file__).resolve().parent.parent / "crates/smm/testdata/digits"
    outdir.mkdir(parents=True, exist_ok=True)
    images = bytearray(struct.pack(">IIII", 0x0803, n, H, W))
    labels = bytearray(struct.pack(">II", 0x0801, n))
    for i in range(n):
        d = i % 10
        img = render(d, rng)
        for row in img:
            images.extend(row)
        labels.append(d)
    (outdir / "images-idx3-ubyte").write_bytes(images)
    (outdir / "labels-idx1-ubyte").write_bytes(labels)
    print(f"wrote {n} images to {outdir}")


if __name__ == "__main__":
    main()
