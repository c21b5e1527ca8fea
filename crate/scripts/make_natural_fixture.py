"""Build a 100-record CIFAR-format batch of 32x32 natural-image crops.

Source photographs are the sample images bundled with scikit-image. Each is
shrunk so its short side is 96-160 px (roughly CIFAR object scale) and
cropped at random. Labels are placeholders (index mod 10).

    python3 scripts/make_natural_fixture.py crates/core/fixtures/natural_test_batch.bin
"""

import sys

import numpy as np
from PIL import Image
from skimage import data

SOURCES = [
    "astronaut", "camera", "coffee", "chelsea", "rocket", "coins", "hubble_deep_field",
    "immunohistochemistry", "moon", "brick", "grass", "gravel", "cat", "retina",
]


def rgb(name):
    img = getattr(data, name)()
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    return Image.fromarray(img[..., :3].astype(np.uint8))


def main(out_path):
    rng = np.random.default_rng(20150807)
    images = [rgb(n) for n in SOURCES]
    records = bytearray()
    for i in range(100):
        img = images[i % len(images)]
        short = rng.integers(96, 161)
        w, h = img.size
        scale = short / min(w, h)
        small = img.resize((max(32, round(w * scale)), max(32, round(h * scale))), Image.BICUBIC)
        arr = np.asarray(small)
        y = rng.integers(0, arr.shape[0] - 31)
        x = rng.integers(0, arr.shape[1] - 31)
        crop = arr[y:y + 32, x:x + 32]
        records.append(i % 10)
        records.extend(np.ascontiguousarray(crop.transpose(2, 0, 1)).tobytes())
    with open(out_path, "wb") as f:
        f.write(records)


if __name__ == "__main__":
    main(sys.argv[1])
