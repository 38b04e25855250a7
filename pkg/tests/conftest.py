import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# independent high-precision oracles (mpmath, 40 digits)
R0_ORACLE = 0.21913383107938419455
H049_ORACLE = 76988242460.74543025
THETA049_ORACLE = 6.4944981729094079e-12


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(20261015))
