#!/usr/bin/env python3
"""Convert the digits bundled with the npm `mnist` package into IDX files.

The package ships 10,000 MNIST digits (1,000 per class) as JSON arrays of
28x28 grayscale values in [0, 1] rounded to three decimals. This script
restores 8-bit pixels, shuffles with a fixed seed and writes a
train (8,000) / test (2,000) split in gzip-compressed IDX format.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(bytes(payload))


def main(src, dst, n_train=8000, seed=0):
    samples = []
    for digit in range(10):
        data = json.loads(Path(src, f"{digit}.json").read_text())["data"]
        for start in range(0, len(data), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in data[start : start + 784]]
            samples.append((pixels, digit))
    random.Random(seed).shuffle(samples)
    dst = Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", samples[:n_train]), ("t10k", samples[n_train:])):
        images = [p for pixels, _ in part for p in pixels]
        labels = [label for _, label in part]
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 0x803, (len(part), 28, 28), images)
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 0x801, (len(part),), labels)
        print(f"{name}: {len(part)} samples")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
