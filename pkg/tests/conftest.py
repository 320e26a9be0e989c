import numpy as np
import pytest

from ionlattice import paper_defaults


@pytest.fixture
def cfg():
    return paper_defaults()


@pytest.fixture
def cfg_clean():
    # no dephasing: analytic two-level oracles are exact
    return paper_defaults(coherence_time=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
