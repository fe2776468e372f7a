#!/usr/bin/env python3
"""Build a 10000-digit MNIST training subset in gzipped IDX format.

The source is the `mnist` npm package (https://www.npmjs.com/package/mnist),
which ships 10000 MNIST training digits as per-class JSON arrays with pixel
intensities rounded to three decimals. Pixels are mapped back to bytes with
round(v * 255).

    npm pack mnist
    python3 scripts/mnist_subset.py mnist-1.1.0.tgz data/mnist-subset

Digits are interleaved round-robin across classes so any prefix of the file is
roughly class balanced.
"""

import gzip
import json
import struct
import sys
import tarfile
from pathlib import Path


def load_digits(tgz_path):
    per_class = []
    with tarfile.open(tgz_path, "r:gz") as tar:
        for digit in range(10):
            member = tar.getmember(f"package/src/digits/{digit}.json")
            data = json.load(tar.extractfile(member))["data"]
            assert len(data) % 784 == 0
            images = [
                bytes(int(round(v * 255)) for v in data[i : i + 784])
                for i in range(0, len(data), 784)
            ]
            per_class.append(images)
    out = []
    cursor = [0] * 10
    while any(cursor[d] < len(per_class[d]) for d in range(10)):
        for d in range(10):
            if cursor[d] < len(per_class[d]):
                out.append((per_class[d][cursor[d]], d))
                cursor[d] += 1
    return out


def main():
    if len(sys.argv) != 3:
        sys.exit("usage: mnist_subset.py <mnist-x.y.z.tgz> <out-dir>")
    digits = load_digits(sys.argv[1])
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    n = len(digits)
    # mtime=0 keeps the gzip output byte-stable across runs.
    with open(out / "train-images-idx3-ubyte.gz", "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
            for image, _ in digits:
                f.write(image)
    with open(out / "train-labels-idx1-ubyte.gz", "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
            f.write(struct.pack(">II", 0x00000801, n))
            f.write(bytes(label for _, label in digits))
    print(f"wrote {n} digits to {out}")


if __name__ == "__main__":
    main()
