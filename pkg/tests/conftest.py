import numpy as np
import pytest

from paired_adjust import DesignMatrices, PotentialOutcomeSample


def make_design(rng, n, kd=2, km=2, y_scale=1.0):
    """Random full-rank design matrices for estimator tests."""
    d = rng.standard_normal((n, kd))
    m = rng.standard_normal((n, km))
    m = m - m.mean(axis=0)
    v = 2.0 * rng.integers(0, 2, size=n) - 1.0
    y = y_scale * rng.standard_normal(n)
    return DesignMatrices(d=d, m=m, v=v, y=y)


def make_sample(rng, n, effect="hetero", with_x=True):
    """Small hand-rolled science table with controllable effects.

    effect: "zero" (r_t = r_c), "constant" (r_t - r_c = 3 everywhere)
    or "hetero" (unit effects vary).
    """
    levels = rng.standard_normal((n, 2)) * 2.0
    if effect == "zero":
        tau = np.zeros((n, 2))
    elif effect == "constant":
        tau = np.full((n, 2), 3.0)
    else:
        tau = rng.standard_normal((n, 2))
    x = rng.standard_normal((n, 2, 4)) if with_x else None
    return PotentialOutcomeSample(
        r_t=levels + tau / 2.0, r_c=levels - tau / 2.0, x=x
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
