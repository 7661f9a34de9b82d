#!/usr/bin/env python3
"""Convert the digit JSON files shipped in the npm `mnist` package to IDX.

The package stores each pixel as byte/255 rounded to three decimals, which is
fine enough to recover the original byte exactly.

usage: mnist_from_npm.py <package_dir> <out_dir> [digit ...]
"""
import json
import os
import struct
import sys


def main():
    pkg, out = sys.argv[1], sys.argv[2]
    digits = [int(d) for d in sys.argv[3:]] or list(range(10))
    images, labels = bytearray(), bytearray()
    count = 0
    for d in digits:
        data = json.load(open(os.path.join(pkg, "src", "digits", f"{d}.json")))["data"]
        n = len(data) // 784
        for i in range(n):
            images.extend(int(round(v * 255)) for v in data[i * 784:(i + 1) * 784])
            labels.append(d)
        count += n
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, count, 28, 28))
        f.write(images)
    with open(os.path.join(out, "labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, count))
        f.write(labels)
    print(f"wrote {count} images for digits {digits}")


if __name__ == "__main__":
    main()
