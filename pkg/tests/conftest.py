import numpy as np
import pytest

from kpolicy.policynet import ArchSpec, PolicyNetwork
from kpolicy.recon import ZeroFilled


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def recon():
    return ZeroFilled()


@pytest.fixture
def tiny_net():
    """Small conv+dense net on 8x8 inputs with an 8-column action space."""
    arch = ArchSpec(input_shape=(8, 8), width=8, conv_channels=(2,), dense_hidden=8)
    return PolicyNetwork.initialize(arch, np.random.default_rng(7))


@pytest.fixture
def dense_net():
    """Dense-only net on 8x6 inputs with a 6-column action space."""
    arch = ArchSpec(input_shape=(8, 6), width=6, conv_channels=(), dense_hidden=8)
    return PolicyNetwork.initialize(arch, np.random.default_rng(11))
