"""Build the MNIST subset fixture used by the end-to-end retrieval test.

Source: the original MNIST IDX files as redistributed by the npm package
`mnist-data` 1.2.6 (`package/data/*-ubyte`).

  * database: 10,000 images drawn uniformly without replacement from the
    60,000-image training split (numpy default_rng(0)).
  * queries: the first 50 images of each class in the 10,000-image test
    split (500 total), so queries and database are disjoint.

Usage:
    npm pack mnist-data@1.2.6 && tar xzf mnist-data-1.2.6.tgz
    python3 scripts/make_mnist_fixture.py package/data crates/core/tests/data

Output files (gzip): n as u32 little-endian, n label bytes, n*784 pixel bytes.
"""

import gzip
import struct
import sys

import numpy as np


def read_idx(path):
    with open(path, "rb") as f:
        raw = f.read()
    magic, count = struct.unpack(">II", raw[:8])
    if magic == 2051:
        rows, cols = struct.unpack(">II", raw[8:16])
        return np.frombuffer(raw[16:], dtype=np.uint8).reshape(count, rows * cols)
    assert magic == 2049
    return np.frombuffer(raw[8:], dtype=np.uint8)


def write(path, labels, pixels):
    assert pixels.shape == (len(labels), 784)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack("<I", len(labels)))
        f.write(labels.astype(np.uint8).tobytes())
        f.write(pixels.astype(np.uint8).tobytes())


def main(idx_dir, out_dir):
    train_x = read_idx(f"{idx_dir}/train-images-idx3-ubyte")
    train_y = read_idx(f"{idx_dir}/train-labels-idx1-ubyte")
    test_x = read_idx(f"{idx_dir}/t10k-images-idx3-ubyte")
    test_y = read_idx(f"{idx_dir}/t10k-labels-idx1-ubyte")

    pick = np.random.default_rng(0).choice(len(train_x), size=10_000, replace=False)
    write(f"{out_dir}/mnist_train.u8.gz", train_y[pick], train_x[pick])

    pick = np.concatenate([np.flatnonzero(test_y == c)[:50] for c in range(10)])
    write(f"{out_dir}/mnist_query.u8.gz", test_y[pick], test_x[pick])


if __name__ == "__main__":
    main(*sys.argv[1:3])
