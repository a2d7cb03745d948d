import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def manifest():
    from twinguard.yang import default_manifest
    return default_manifest()


def two_blobs(rng, n_ddos, n_benign, d=10, delta=1.5):
    """Labelled two-Gaussian rows: NotDDoS ~ N(0, I), DDoS ~ N(delta, I)."""
    X = rng.standard_normal((n_ddos + n_benign, d))
    y = np.r_[np.ones(n_ddos, int), np.zeros(n_benign, int)]
    X[y == 1] += delta
    return X, y
