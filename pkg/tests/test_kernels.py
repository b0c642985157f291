import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from micropolar_rb import _kernels as K


@pytest.fixture
def backend_guard():
    prev = K.backend()
    yield
    K.set_backend(prev)


def both(fn, *a):
    out = {}
    for name in ("numba", "numpy"):
        K.set_backend(name)
        out[name] = fn(*a)
    return out["numba"], out["numpy"]


def test_backend_switch(backend_guard):
    K.set_backend("numpy")
    assert K.backend() == "numpy"
    with pytest.raises(ValueError):
        K.set_backend("cuda")
    with pytest.raises(ValueError):
        K.set_threads(0)
    assert K.set_threads(64) >= 1


def test_advect_backends_agree(backend_guard):
    rng = np.random.default_rng(0)
    u = rng.standard_normal((3, 5, 6, 7))
    g = rng.standard_normal((4, 3, 5, 6, 7))
    a, b = both(K.advect, u, g)
    assert np.array_equal(a, b)
    ref = np.einsum("ipqr,cipqr->cpqr", u, g)
    assert np.allclose(a, ref, atol=1e-13)


def test_part_sums(backend_guard):
    rng = np.random.default_rng(1)
    z = np.linspace(0.05, 0.95, 6)
    w = np.full(6, 0.1)
    th = 0.7 * rng.standard_normal((6, 4, 4))
    a, b = both(K.part_sums, th, z, w)
    assert a == pytest.approx(b, rel=1e-13)
    T = th + (1 - z)[:, None, None]
    assert a[0] == pytest.approx(float(np.sum(w[:, None, None] * np.maximum(T - 1, 0) ** 2)), rel=1e-13)
    assert K.part_sums(np.zeros((6, 4, 4)), z, w) == (0.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), na=st.integers(1, 12), nb=st.integers(1, 12),
       ties=st.booleans())
def test_semidist_matches_bruteforce(seed, na, nb, ties):
    rng = np.random.default_rng(seed)
    offsets = np.array([0, 3, 5, 9])
    A = rng.standard_normal((na, 9))
    B = rng.standard_normal((nb, 9))
    if ties:  # integer lattice points produce exact ties
        A, B = np.round(A), np.round(B)
        B = np.concatenate([B, B[:1]])
    ref = K.semidist_bruteforce(A, B, offsets)
    prev = K.backend()
    try:
        for name in ("numba", "numpy"):
            K.set_backend(name)
            assert K.semidist(A, B, offsets) == ref
    finally:
        K.set_backend(prev)


def test_semidist_properties():
    rng = np.random.default_rng(5)
    off = np.array([0, 4, 8])
    A = rng.standard_normal((6, 8))
    assert K.semidist(A, A, off)[0] == 0.0
    B = rng.standard_normal((5, 8))
    bigger = np.concatenate([B, rng.standard_normal((4, 8))])
    assert K.semidist(A, bigger, off)[0] <= K.semidist(A, B, off)[0]
    assert K.semidist(np.concatenate([A, A[:2] * 3]), B, off)[0] >= K.semidist(A, B, off)[0]
    assert K.semidist(A[:3], A, off)[0] == 0.0  # subset


def test_semidist_two_point():
    off = np.array([0, 2, 4])
    z = np.zeros((1, 4))
    x = np.array([[3.0, 4.0, 0.0, 1.0]])
    assert K.semidist(z, x, off)[0] == 6.0


def test_semidist_validation():
    with pytest.raises(ValueError):
        K.semidist(np.zeros((2, 3)), np.zeros((2, 4)), [0, 3])
    with pytest.raises(ValueError):
        K.semidist(np.zeros((2, 3)), np.zeros((2, 3)), [0, 2])
    with pytest.raises(ValueError):
        K.semidist(np.zeros((0, 3)), np.zeros((2, 3)), [0, 3])
