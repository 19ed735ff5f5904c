#!/usr/bin/env python3
"""Build gzipped IDX files from the 10,000 MNIST digits bundled in the npm `mnist` package.

Usage:
    npm pack mnist@1.1.0
    python3 scripts/make_mnist_subset.py mnist-1.1.0.tgz data/mnist

Writes train-{images-idx3,labels-idx1}-ubyte.gz (8000 examples) and
t10k-{images-idx3,labels-idx1}-ubyte.gz (2000 examples). The split is a fixed
permutation so the output is byte-identical across runs.
"""
import gzip
import json
import random
import struct
import sys
import tarfile
from pathlib import Path

TRAIN = 8000


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    # mtime=0 keeps the gzip stream reproducible
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
        gz.write(header + payload)


def main():
    tgz, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    examples = []
    with tarfile.open(tgz) as tar:
        for digit in range(10):
            data = json.load(tar.extractfile(f"package/src/digits/{digit}.json"))["data"]
            for k in range(len(data) // 784):
                pixels = bytes(round(v * 255) for v in data[k * 784:(k + 1) * 784])
                examples.append((pixels, digit))
    random.Random(0).shuffle(examples)
    for prefix, part in (("train", examples[:TRAIN]), ("t10k", examples[TRAIN:])):
        write_idx(out / f"{prefix}-images-idx3-ubyte.gz", 0x803, [len(part), 28, 28],
                  b"".join(p for p, _ in part))
        write_idx(out / f"{prefix}-labels-idx1-ubyte.gz", 0x801, [len(part)],
                  bytes(l for _, l in part))
        print(prefix, len(part))


if __name__ == "__main__":
    main()
