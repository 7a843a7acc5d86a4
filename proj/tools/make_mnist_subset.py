#!/usr/bin/env python3
"""Write the 5000-image MNIST subset bundled with mlxtend as IDX files.

The subset holds 500 images per digit. Every 5th image of each class goes to
the test split (1000 images); the rest form the training split (4000 images).

usage: make_mnist_subset.py [--out data/mnist5k] [--wheel path/to/mlxtend.whl]
"""
import argparse
import glob
import gzip
import io
import struct
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(tmp):
    subprocess.run([sys.executable, "-m", "pip", "download", "mlxtend", "--no-deps", "-d", tmp],
                   check=True, stdout=subprocess.DEVNULL)
    return glob.glob(str(Path(tmp) / "mlxtend-*.whl"))[0]


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist5k")
    ap.add_argument("--wheel")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        raw = zipfile.ZipFile(wheel).read(MEMBER)
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    pixels = table[:, :-1]
    labels = table[:, -1].astype(np.int64)

    test_mask = np.zeros(len(labels), dtype=bool)
    for c in range(10):
        idx = np.flatnonzero(labels == c)
        test_mask[idx[::5]] = True

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx_images(out / "train-images-idx3-ubyte", pixels[~test_mask])
    write_idx_labels(out / "train-labels-idx1-ubyte", labels[~test_mask])
    write_idx_images(out / "t10k-images-idx3-ubyte", pixels[test_mask])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", labels[test_mask])
    print(f"train={int((~test_mask).sum())} test={int(test_mask.sum())} -> {out}")


if __name__ == "__main__":
    main()
