#!/usr/bin/env python3
"""Builds the bundled digits dataset in IDX format.

Source images are scikit-learn's handwritten digits (8x8, 16 gray
levels), upscaled to 28x28 and augmented with small shifts so the train
split reaches 2000 images. Written as standard IDX files (big-endian
magic 0x803 / 0x801) under assets/.
"""

import os
import struct

import numpy as np
from sklearn.datasets import load_digits

OUT = os.path.join(os.path.dirname(__file__), "..", "assets")
TRAIN_N = 2000
SIZE = 28
SEED = 0


def upscale(img8):
    # bilinear 8x8 -> 28x28
    src = img8 / 16.0
    xs = np.linspace(0, 7, SIZE)
    x0 = np.floor(xs).astype(int)
    x1 = np.minimum(x0 + 1, 7)
    f = xs - x0
    rows = src[x0][:, :] * (1 - f)[:, None] + src[x1][:, :] * f[:, None]
    out = rows[:, x0] * (1 - f)[None, :] + rows[:, x1] * f[None, :]
    # Threshold to binary strokes: bilinear upscaling leaves wide mid-gray
    # ramps, unlike MNIST's near-binary intensity profile, and mid-gray
    # pixels make large-radius robustness unattainable.
    return np.where(out > 0.3, 255, 0).astype(np.uint8)


def shift(img, dy, dx):
    out = np.zeros_like(img)
    ys = slice(max(0, dy), SIZE + min(0, dy))
    xs = slice(max(0, dx), SIZE + min(0, dx))
    ys_src = slice(max(0, -dy), SIZE + min(0, -dy))
    xs_src = slice(max(0, -dx), SIZE + min(0, -dx))
    out[ys, xs] = img[ys_src, xs_src]
    return out


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), SIZE, SIZE))
        f.write(np.stack(images).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def main():
    rng = np.random.default_rng(SEED)
    digits = load_digits()
    n = len(digits.target)
    order = rng.permutation(n)
    split = int(n * 0.78)  # ~1400 train seeds, ~400 test
    tr, te = order[:split], order[split:]

    train_imgs, train_lbls = [], []
    for i in tr:
        train_imgs.append(upscale(digits.images[i]))
        train_lbls.append(int(digits.target[i]))
    # augment up to TRAIN_N with shifted copies
    i = 0
    while len(train_imgs) < TRAIN_N:
        src = tr[i % len(tr)]
        dy, dx = rng.integers(-2, 3, size=2)
        if dy == 0 and dx == 0:
            dy = 1
        train_imgs.append(shift(upscale(digits.images[src]), int(dy), int(dx)))
        train_lbls.append(int(digits.target[src]))
        i += 1

    test_imgs = [upscale(digits.images[i]) for i in te]
    test_lbls = [int(digits.target[i]) for i in te]

    os.makedirs(OUT, exist_ok=True)
    write_idx_images(os.path.join(OUT, "train-images.idx"), train_imgs)
    write_idx_labels(os.path.join(OUT, "train-labels.idx"), train_lbls)
    write_idx_images(os.path.join(OUT, "test-images.idx"), test_imgs)
    write_idx_labels(os.path.join(OUT, "test-labels.idx"), test_lbls)
    print(f"train {len(train_imgs)}  test {len(test_imgs)}")


if __name__ == "__main__":
    main()
