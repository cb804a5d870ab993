"""Build the desk-scale MNIST subset shipped in data/mnist-5k/.

Source: ``mlxtend/data/data/mnist_5k.csv.gz`` from the mlxtend wheel (5,000
MNIST training digits, 500 per class; 784 pixel columns then the label).
The digits are split per class, 400 train / 100 test, with a fixed seed.

    pip download --no-deps mlxtend -d /tmp/mlx
    python scripts/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/mnist-5k
"""

import argparse
import gzip
import io
import os
import zipfile

import numpy as np

from metaenc.data import write_idx_images, write_idx_labels

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv(source):
    if source.endswith(".whl"):
        with zipfile.ZipFile(source) as z:
            raw = z.read(CSV_MEMBER)
    else:
        with open(source, "rb") as f:
            raw = f.read()
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    return table[:, :-1].astype(np.uint8), table[:, -1].astype(np.uint8)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("source", help="mlxtend wheel or mnist_5k.csv.gz")
    parser.add_argument("out", help="output directory")
    parser.add_argument("--test-per-class", type=int, default=100)
    parser.add_argument("--seed", type=int, default=20220101)
    args = parser.parse_args()

    pixels, labels = read_csv(args.source)
    rng = np.random.default_rng(args.seed)
    train_idx, test_idx = [], []
    for digit in range(10):
        idx = rng.permutation(np.flatnonzero(labels == digit))
        test_idx.append(idx[: args.test_per_class])
        train_idx.append(idx[args.test_per_class:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))

    os.makedirs(args.out, exist_ok=True)
    for prefix, idx in (("train", train_idx), ("t10k", test_idx)):
        write_idx_images(os.path.join(args.out, f"{prefix}-images-idx3-ubyte.gz"),
                         pixels[idx].reshape(-1, 28, 28))
        write_idx_labels(os.path.join(args.out, f"{prefix}-labels-idx1-ubyte.gz"), labels[idx])
        print(f"{prefix}: {idx.size} images")


if __name__ == "__main__":
    main()
