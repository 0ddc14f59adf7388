#!/usr/bin/env python3
"""Build a 5000-image MNIST subset in gzip-compressed IDX format.

The pixels come from the 5k MNIST sample bundled with the `mlxtend` wheel
(BSD-3), which is available from any PyPI mirror:

    pip download --no-deps mlxtend -d /tmp/mlxtend
    python3 scripts/make_mnist_subset.py /tmp/mlxtend/mlxtend-*.whl data/

Rows are written in a fixed shuffled order (numpy seed 0) so that any prefix
is roughly class-balanced.
"""
import gzip
import struct
import sys
import zipfile

import numpy as np


def main(wheel, out_dir):
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(raw.decode().splitlines(), delimiter=",", dtype=np.int64)
    pixels = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    order = np.random.RandomState(0).permutation(len(pixels))
    pixels, labels = pixels[order], labels[order]
    n = len(pixels)
    images = struct.pack(">IIII", 0x00000803, n, 28, 28) + pixels.tobytes()
    label_bytes = struct.pack(">II", 0x00000801, n) + labels.tobytes()
    with gzip.GzipFile(f"{out_dir}/mnist5k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(images)
    with gzip.GzipFile(f"{out_dir}/mnist5k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(label_bytes)
    print(f"wrote {n} images")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
