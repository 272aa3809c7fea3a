import sys
import numpy as np
import pytest

from ncbc.lattice import LatticeDims
from ncbc.metrics import Roi
from ncbc.phantom import (
    BiasParams,
    NoiseParams,
    ProstateCard,
    default_noise_sigma,
    make_synthetic_phantom,
)


def card_phantom(size=64, seed=0, gain_min=0.3, noise_fraction=0.05):
    """Acceptance-style phantom: test card, coil-like gain, Rician noise."""
    dims = LatticeDims(size, size)
    clean = ProstateCard().render(dims)
    sigma = noise_fraction / 0.05 * default_noise_sigma(clean)
    bp = BiasParams.coil_below(dims, gain_min=gain_min, gain_max=1.0)
    return make_synthetic_phantom(clean, bp, NoiseParams(sigma=sigma, seed=seed))


def card_rois(size=64):
    dims = LatticeDims(size, size)
    return {name: Roi(name, *box) for name, box in ProstateCard().rois(dims).items()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS, key=lambda k: int(k[1:])):
        terminalreporter.write_line(mod.RESULTS[key])
