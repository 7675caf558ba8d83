"""Helpers shared by the test modules."""

import numpy as np
from PIL import Image

from adpt.provider import MockProviderConfig

CODES = {"crack": "A", "efflorescence": "B", "scaling": "C", "corrosion": "D", "non_defective": "N"}


def write_coded_images(directory, labels, size=24, seed=0):
    """One small PNG per label, named ``img_<i>_<code>.png``."""
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i, label in enumerate(labels):
        px = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
        p = directory / f"img_{i:04d}_{CODES[label]}.png"
        Image.fromarray(px).save(p)
        paths.append(p)
    return paths


def identity_mock(seed=1, **kw):
    return MockProviderConfig(
        confusion={lab: {lab: 1.0} for lab in CODES},
        seed=seed,
        **kw,
    )
