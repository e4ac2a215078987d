#!/usr/bin/env python3
"""Prepare the benchmark dataset files under data/.

Writes:
  data/iris.csv  -- Fisher iris (150 samples, 4 features, 3 classes)
  data/bcw.csv   -- breast cancer Wisconsin, the 10 per-cell-nucleus mean
                    features from the diagnostic corpus (569 samples, 2 classes)

MNIST is distributed as the four standard IDX files (optionally gzipped):
  data/mnist/train-images-idx3-ubyte[.gz]
  data/mnist/train-labels-idx1-ubyte[.gz]
  data/mnist/t10k-images-idx3-ubyte[.gz]
  data/mnist/t10k-labels-idx1-ubyte[.gz]
This script only verifies their presence; fetch them from any MNIST mirror.

MHEALTH preparation lives in prepare_mhealth.py.
"""

import csv
import gzip
import os
import struct
import sys

from sklearn.datasets import load_breast_cancer, load_iris

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")
DATA = os.path.join(ROOT, "data")


def write_iris():
    iris = load_iris()
    path = os.path.join(DATA, "iris.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sepal_length", "sepal_width", "petal_length", "petal_width", "species"])
        for row, label in zip(iris.data, iris.target):
            w.writerow([f"{v:.1f}" for v in row] + [iris.target_names[label]])
    print(f"wrote {path} ({len(iris.data)} rows)")


def write_bcw():
    bcw = load_breast_cancer()
    # first 10 columns are the mean-valued nucleus features
    cols = [i for i, name in enumerate(bcw.feature_names) if name.startswith("mean ")]
    assert len(cols) == 10, cols
    path = os.path.join(DATA, "bcw.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [bcw.feature_names[i].replace(" ", "_") for i in cols] + ["diagnosis"]
        w.writerow(header)
        for row, label in zip(bcw.data, bcw.target):
            w.writerow([repr(float(row[i])) for i in cols] + [bcw.target_names[label]])
    print(f"wrote {path} ({len(bcw.data)} rows)")


def check_mnist():
    names = [
        ("train-images-idx3-ubyte", 0x803),
        ("train-labels-idx1-ubyte", 0x801),
        ("t10k-images-idx3-ubyte", 0x803),
        ("t10k-labels-idx1-ubyte", 0x801),
    ]
    ok = True
    for name, magic in names:
        plain = os.path.join(DATA, "mnist", name)
        gz = plain + ".gz"
        if os.path.exists(gz):
            head = gzip.open(gz, "rb").read(4)
        elif os.path.exists(plain):
            head = open(plain, "rb").read(4)
        else:
            print(f"missing: {plain}[.gz]")
            ok = False
            continue
        got = struct.unpack(">I", head)[0]
        if got != magic:
            print(f"bad magic in {name}: {got:#x} != {magic:#x}")
            ok = False
    print("mnist:", "ok" if ok else "incomplete (fetch the IDX files into data/mnist/)")
    return ok


if __name__ == "__main__":
    os.makedirs(DATA, exist_ok=True)
    write_iris()
    write_bcw()
    if not check_mnist():
        sys.exit(1)
