"""Fetch MNIST and write it as gzipped IDX files.

The raw yann.lecun.com mirrors are often unreachable from sandboxes, so this
pulls the ``mnist-dnn`` wheel from PyPI (it bundles the full 60k/10k MNIST
CSVs) and converts it.

    python scripts/fetch_mnist.py data/mnist
"""

import argparse
import csv
import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from pwoa.data import write_idx

WHEEL = "mnist-dnn==0.1.3"
MEMBERS = {"train": "mnist_dnn/data/mnist_train.csv", "t10k": "mnist_dnn/data/mnist_test.csv"}


def convert(blob: bytes):
    reader = csv.reader(io.TextIOWrapper(io.BytesIO(blob), encoding="utf-8"))
    next(reader)  # header
    rows = np.array([[int(v) for v in row] for row in reader], dtype=np.uint8)
    return rows[:, 1:].reshape(-1, 28, 28), rows[:, 0]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=Path)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, WHEEL], check=True)
        wheel = next(Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            for prefix, member in MEMBERS.items():
                images, labels = convert(zf.read(member))
                write_idx(images, labels,
                          args.out / f"{prefix}-images-idx3-ubyte.gz",
                          args.out / f"{prefix}-labels-idx1-ubyte.gz")
                print(f"{prefix}: {images.shape[0]} images -> {args.out}")


if __name__ == "__main__":
    main()
