import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from ehrenfest.linalg import expm, expm_action


def test_zero_matrix_gives_identity():
    np.testing.assert_array_equal(expm(np.zeros((3, 3))), np.eye(3))


def test_diagonal_closed_form():
    d = np.array([-3.0, 0.5, 2.0])
    np.testing.assert_allclose(expm(np.diag(d)), np.diag(np.exp(d)), rtol=1e-13)


def test_rotation_generator():
    a = np.array([[0.0, -2.0], [2.0, 0.0]])
    c, s = np.cos(2.0), np.sin(2.0)
    np.testing.assert_allclose(expm(a), [[c, -s], [s, c]], atol=1e-13)


@given(st.integers(min_value=1, max_value=12), st.floats(min_value=0.01, max_value=20),
       st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_matches_scipy(n, scale, seed):
    a = np.random.default_rng(seed).normal(size=(n, n)) * scale / n
    ref = scipy.linalg.expm(a)
    np.testing.assert_allclose(expm(a), ref, rtol=1e-9, atol=1e-11 * np.abs(ref).max())


def test_expm_action():
    a = np.array([[-1.0, 1.0], [0.5, -0.5]])
    v = np.array([1.0, 2.0])
    np.testing.assert_allclose(expm_action(a, 0.7, v), scipy.linalg.expm(0.7 * a) @ v, rtol=1e-13)
    assert expm_action(a, 0.0, v).tolist() == v.tolist()


def test_rejects_non_square():
    with pytest.raises(ValueError):
        expm(np.ones((2, 3)))
