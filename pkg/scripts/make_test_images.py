"""Regenerate tests/data/*.pgm from scikit-image's bundled sample images.

Each image is cropped to 512x512, 2x2 block-averaged to 256x256 and
histogram-equalized (rank transform to 256 levels). Requires scikit-image,
which the package itself does not depend on.
"""

from pathlib import Path

import numpy as np
import skimage.data

from bsm.io import write_pgm

OUT = Path(__file__).resolve().parents[1] / "tests" / "data"


def equalize(img):
    flat = img.ravel()
    ranks = np.empty(flat.size)
    ranks[np.argsort(flat, kind="stable")] = np.arange(flat.size)
    return np.floor(ranks * 256 / flat.size).astype(np.uint8).reshape(img.shape)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name in ("moon", "grass", "gravel"):
        img = getattr(skimage.data, name)()[:512, :512].astype(float)
        small = img.reshape(256, 2, 256, 2).mean(axis=(1, 3))
        write_pgm(equalize(small), OUT / f"{name}.pgm")


if __name__ == "__main__":
    main()
