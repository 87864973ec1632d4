"""Converts a pickled image array to the GFD1 format the trainer reads.

Pickles cannot be read safely without executing code, so the trainer never
loads them. Run this once on a trusted file; it writes `<stem>.gfd` next to
the input (the name the trainer looks for when a config names `<stem>.pkl`)
and, when labels are present, `<stem>.labels.idx`.

Accepted pickle contents:
  * an array of shape [N, H, W], [N, C, H, W] or [N, H*W] (square images),
  * a tuple/list whose first element is such an array and whose second, if
    present, holds labels,
  * the classic mnist.pkl layout ((train_x, train_y), (valid_x, valid_y), ...),
    of which the training split is used.
Byte data (0..255) is scaled to [-1, 1]; float data in [0, 1] likewise;
float data already in [-1, 1] is kept.

Usage: python3 tools/pkl_to_gfd1.py dataset/mnistData.pkl [--limit N]
"""

import argparse
import gzip
import pickle
import struct
import sys
from pathlib import Path

import numpy as np


def load(path):
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def split(obj):
    if isinstance(obj, (tuple, list)):
        if obj and isinstance(obj[0], (tuple, list)):
            obj = obj[0]
        images = np.asarray(obj[0])
        labels = np.asarray(obj[1]) if len(obj) > 1 else None
        return images, labels
    return np.asarray(obj), None


def to_nchw(images):
    if images.ndim == 2:
        side = int(round(images.shape[1] ** 0.5))
        if side * side != images.shape[1]:
            sys.exit(f"cannot infer square images from rows of width {images.shape[1]}")
        images = images.reshape(-1, 1, side, side)
    elif images.ndim == 3:
        images = images[:, None]
    elif images.ndim != 4:
        sys.exit(f"unsupported array rank {images.ndim}")
    return images


def scale(images):
    x = images.astype(np.float64)
    if images.dtype == np.uint8 or x.max() > 1.0:
        return x / 127.5 - 1.0
    if x.min() >= 0.0:
        return x * 2.0 - 1.0
    return x


def main():
    ap = argparse.ArgumentParser(description="pickle -> GFD1")
    ap.add_argument("pickle", type=Path)
    ap.add_argument("--limit", type=int)
    args = ap.parse_args()
    images, labels = split(load(args.pickle))
    images = scale(to_nchw(images))[: args.limit]
    out = args.pickle.with_suffix(".gfd")
    with open(out, "wb") as f:
        f.write(b"GFD1" + struct.pack("<4I", *images.shape))
        f.write(images.astype("<f4").tobytes())
    print(f"wrote {out} {list(images.shape)}")
    if labels is not None:
        labels = labels.astype(np.uint8)[: args.limit]
        lab = args.pickle.with_suffix(".labels.idx")
        with open(lab, "wb") as f:
            f.write(struct.pack(">II", 0x801, len(labels)) + labels.tobytes())
        print(f"wrote {lab} ({len(labels)} labels)")


if __name__ == "__main__":
    main()
