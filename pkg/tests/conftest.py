import numpy as np
import pytest

from qdbench import default_params, extract_patches, generate_csd


def build_pool(n_records: int, patches_each: int, grid_size: int, seed0: int = 0):
    """Small synthetic patch pool: raw pixels (N, 30, 30) and labels (N, 5)."""
    xs, ys = [], []
    for i in range(n_records):
        record = generate_csd(default_params(seed0 + i, grid_size=grid_size))
        for patch in extract_patches(record, patches_each, seed=seed0 + i):
            xs.append(patch.pixels)
            ys.append(patch.label.p)
    return np.stack(xs), np.stack(ys)


@pytest.fixture(scope="session")
def small_record():
    return generate_csd(default_params(3, grid_size=64))


@pytest.fixture(scope="session")
def pool_180():
    """180 patches from 30 small scans; enough for fold/metric tests."""
    return build_pool(30, 6, grid_size=60)


@pytest.fixture(scope="session")
def pool_200():
    """The 200-patch optimization-sanity fixture."""
    return build_pool(20, 10, grid_size=60, seed0=100)
