import os

import pytest
from hypothesis import HealthCheck, settings

from cbfstl.formula import BandPredicate
from cbfstl.reachability import Dynamics1D, GridSpec, solve_value_function

settings.register_profile("ci", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

H1 = BandPredicate("p1", 10.0, 0.25, 1.0)


@pytest.fixture(scope="session")
def h1():
    return H1


@pytest.fixture(scope="session")
def solved():
    """One value function per dynamics kind for the h1 band, T = 10."""
    out = {}
    for kind in ("nonaffine", "affine", "linear"):
        spec = GridSpec(-2.0, 3.5, 10.0)
        out[kind] = solve_value_function(Dynamics1D(kind), H1, spec)
    return out
