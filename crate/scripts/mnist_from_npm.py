#!/usr/bin/env python3
"""Convert the digits bundled with the npm `mnist` package into IDX files.

The npm package (https://www.npmjs.com/package/mnist) ships 10,000 MNIST
training digits as JSON arrays of intensities in [0, 1]. This writes them in
the standard IDX layout, interleaved in a fixed shuffled order so that any
prefix is close to class-balanced.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28


def main(src: Path, out: Path) -> None:
    samples = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(raw) // (SIDE * SIDE)
        for i in range(n):
            px = raw[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            samples.append((digit, bytes(min(255, max(0, round(v * 255))) for v in px)))
    random.Random(0).shuffle(samples)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
        for _, px in samples:
            f.write(px)
    with open(out / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for label, _ in samples))
    print(f"wrote {len(samples)} digits to {out}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
