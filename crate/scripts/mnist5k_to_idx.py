"""Convert the 5,000-digit MNIST sample bundled with mlxtend into IDX files.

Usage: python3 scripts/mnist5k_to_idx.py <mlxtend wheel> <out dir>
The wheel can be fetched with `pip download --no-deps mlxtend==0.24.0`.
"""
import gzip
import io
import struct
import sys
import zipfile

import numpy as np


def main():
    wheel, out = sys.argv[1], sys.argv[2]
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    n = len(labels)
    with open(f"{out}/images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(pixels.tobytes())
    with open(f"{out}/labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())


if __name__ == "__main__":
    main()
