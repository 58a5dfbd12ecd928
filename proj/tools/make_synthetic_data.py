# Copyright 2026 The dofen Authors.
# SPDX-License-Identifier: Apache-2.0
"""Writes the small synthetic CSVs bundled under data/."""

import csv
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent.parent / "data"


def classification(rng, n):
    x1 = rng.normal(size=n)
    x2 = rng.normal(size=n)
    color = rng.choice(["red", "green", "blue"], size=n)
    shift = np.select([color == "red", color == "blue"], [-0.5, 0.5], 0.0)
    label = np.where(x1 + x2 + shift > 0, "yes", "no")
    return ["x1", "x2", "color", "label"], zip(x1, x2, color, label)


def regression(rng, n):
    x1 = rng.normal(size=n)
    x2 = rng.normal(size=n)
    y = 2 * x1 - x2 + 0.1 * rng.normal(size=n)
    return ["x1", "x2", "y"], zip(x1, x2, y)


def write(name, header, rows):
    with open(OUT / name, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])


def main():
    rng = np.random.default_rng(7)
    write("toy_classification.csv", *classification(rng, 200))
    write("toy_regression.csv", *regression(rng, 300))


if __name__ == "__main__":
    main()
