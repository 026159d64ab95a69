"""Shared fixtures: small geometries so unit tests stay in milliseconds."""

import numpy as np
import pytest

from dcmz import MaskSet, SystemParams, validate
from dcmz.masking import random_mask


@pytest.fixture
def small_params():
    # 8 masking steps, loop scaled so P_m / T matches the full geometry
    return validate(SystemParams(N_m=8, D=8 * 0.05205, P=8 * 0.05205))


@pytest.fixture
def small_masks(small_params):
    rng = np.random.default_rng(11)
    masks = random_mask(small_params.N_m, 3, 4, 0.5, rng)
    return masks.replace(U=rng.normal(0.0, 0.5, (4, small_params.N_m)),
                         y0=rng.normal(0.0, 0.1, 4))


@pytest.fixture
def paper_params():
    return validate(SystemParams())
