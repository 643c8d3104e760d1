import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from kgmix.bessel import SWITCH, _j1_asymptotic, _j1_series, j1


def test_matches_reference_on_a_dense_grid():
    x = np.linspace(0, 200, 20001)
    assert np.max(np.abs(j1(x) - special.j1(x))) < 5e-12


def test_branches_agree_at_switch():
    assert abs(_j1_series(np.array([SWITCH]))[0] - _j1_asymptotic(np.array([SWITCH]))[0]) < 1e-10


def test_small_argument_limit():
    # J1(x) ~ x/2
    assert j1(1e-8) == pytest.approx(5e-9, rel=1e-12)
    assert j1(0.0) == 0.0


@given(st.floats(min_value=-500, max_value=500, allow_nan=False))
def test_odd_symmetry(x):
    assert j1(-x) == -j1(x)


@given(st.floats(min_value=0, max_value=1000, allow_nan=False))
def test_agrees_with_scipy(x):
    assert abs(j1(x) - special.j1(x)) < 1e-11


def test_scalar_in_scalar_out():
    assert isinstance(j1(2.0), float)
    assert j1(np.array([1.0, 2.0])).shape == (2,)
