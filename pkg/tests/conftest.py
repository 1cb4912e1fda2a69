import numpy as np
import pytest

from sciwb.forward_model import MaskSet, generate_mask


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_maskset(rng, height, width, channels, kind="cassi", step=1,
                   mask_kind="binary", p=0.5, gray_range=(0.2, 1.0)):
    """A random mask geometry for solver/operator tests."""
    if kind == "cassi":
        base = generate_mask(rng, (height, width), kind=mask_kind, p=p,
                             gray_range=gray_range)
        return MaskSet.cassi(base, channels, step)
    stack = generate_mask(rng, (height, width, channels), kind=mask_kind, p=p,
                          gray_range=gray_range)
    return MaskSet.cacti(stack)
