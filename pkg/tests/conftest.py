import numpy as np
import pytest

from nlcdet import Box3D


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_box(rng, center_scale=20.0, dim_lo=0.5, dim_hi=5.0):
    return Box3D(
        center=rng.uniform(-center_scale, center_scale, size=3),
        l=rng.uniform(dim_lo, dim_hi),
        w=rng.uniform(dim_lo, dim_hi),
        h=rng.uniform(dim_lo, dim_hi),
        yaw=rng.uniform(-np.pi, np.pi),
    )
