#!/usr/bin/env python3
"""Convert an ODDS `.mat` file (arrays `X` and `y`) into the CSV layout read by `ttad`.

Usage: mat_to_csv.py INPUT.mat OUTPUT.csv
"""
import csv
import sys

import scipy.io


def main(src, dst):
    mat = scipy.io.loadmat(src)
    features = mat["X"]
    labels = mat["y"].ravel()
    with open(dst, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(features.shape[1])] + ["label"])
        for row, label in zip(features, labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
