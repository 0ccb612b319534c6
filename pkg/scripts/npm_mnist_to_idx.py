"""Convert the digits bundled with the npm ``mnist`` package to IDX files.

The npm package (``npm pack mnist``) ships 10,000 MNIST digits as
``package/src/digits/<d>.json``, each a flat list of 784-float images
normalised to [0, 1] with three decimals. Pixels are mapped back to bytes
with ``round(v * 255)``; the result is written in a seeded random order.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/npm_mnist_to_idx.py package/src/digits data/
"""

import argparse
import json
from pathlib import Path

import numpy as np

from stignet.data import write_idx_images, write_idx_labels


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    images, labels = [], []
    for digit in range(10):
        flat = np.array(json.loads((args.digits_dir / f"{digit}.json").read_text())["data"])
        block = flat.reshape(-1, 784)
        images.append(np.rint(block * 255).astype(np.uint8))
        labels.append(np.full(len(block), digit))
    images, labels = np.concatenate(images), np.concatenate(labels)
    order = np.random.default_rng(args.seed).permutation(len(labels))

    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx_images(args.out_dir / "mnist10k-images-idx3-ubyte", images[order])
    write_idx_labels(args.out_dir / "mnist10k-labels-idx1-ubyte", labels[order])
    print(f"wrote {len(labels)} images to {args.out_dir}")


if __name__ == "__main__":
    main()
