"""Convert the digit pool shipped in the ``mnist`` npm package to IDX files.

The npm package (https://github.com/cazala/mnist) stores 10 000 MNIST digits as
per-class JSON arrays of pixels already divided by 255 and rounded to three
decimals. Multiplying back by 255 and rounding recovers the original bytes.

Usage::

    npm pack mnist && tar xzf mnist-*.tgz
    python tools/npm_mnist_to_idx.py package/src/digits data/mnist
"""

import argparse
import gzip
import json
import struct
from pathlib import Path

import numpy as np


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    args = parser.parse_args()

    images, labels = [], []
    for digit in range(10):
        raw = json.loads((args.digits_dir / f"{digit}.json").read_text())["data"]
        pix = np.rint(np.asarray(raw, dtype=np.float64) * 255.0).astype(np.uint8)
        pix = pix.reshape(-1, 28, 28)
        images.append(pix)
        labels.append(np.full(len(pix), digit, dtype=np.uint8))
    x = np.concatenate(images)
    y = np.concatenate(labels)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(args.out_dir / "pool-images-idx3-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x00000803, len(x), 28, 28))
        fh.write(x.tobytes())
    with gzip.GzipFile(args.out_dir / "pool-labels-idx1-ubyte.gz", "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x00000801, len(y)))
        fh.write(y.tobytes())
    print(f"wrote {len(x)} images to {args.out_dir}")


if __name__ == "__main__":
    main()
