import numpy as np
import pytest


def random_blob_mask(rng: np.random.Generator, size: int = 48) -> np.ndarray:
    """Union of a few random disks: nonempty, blobby, hole-free-ish."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        cx = rng.uniform(size * 0.25, size * 0.75)
        cy = rng.uniform(size * 0.25, size * 0.75)
        r = rng.uniform(size * 0.12, size * 0.3)
        mask |= (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    return mask


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
