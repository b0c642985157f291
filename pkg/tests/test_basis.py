import math

import numpy as np
import pytest

from micropolar_rb import basis as B
from micropolar_rb.basis import (
    FAM_MEAN,
    FAM_POLOIDAL,
    FAM_TOROIDAL,
    BasisConfigError,
    DomainSpec,
    build_scalar_basis,
    build_stokes_basis,
    build_vector_basis,
    cached_basis,
    gram_deviation,
    load_basis,
    poincare_audit,
    save_basis,
    stokes_validity,
)
from micropolar_rb.dispersion import poloidal_eigenvalues

from conftest import SMALL

PI2 = math.pi ** 2


def test_domain_validation():
    for bad in (dict(ax=0), dict(Mv=4), dict(Nh=0), dict(Nmodes=(0, None, None)), dict(Mv=8, Nz=6)):
        with pytest.raises(BasisConfigError):
            DomainSpec(**bad)
    d = DomainSpec(ax=2, ay=3)
    assert d.A == 6 and d.nz == 8
    assert DomainSpec.from_dict(d.as_dict()) == d


def test_scalar_examples(small_bases):
    b = small_bases[2]
    assert b.eigenvalues[0] == pytest.approx(PI2, abs=1e-12)
    lam = {(m, n, j): l for m, n, j, l in zip(b.m, b.n_, b.j, b.eigenvalues)}
    assert lam[(0, 0, 2)] == pytest.approx(4 * PI2)
    assert lam[(1, 0, 1)] == pytest.approx(2 * PI2)  # ax = 2
    assert np.all(np.diff(b.eigenvalues) >= 0)


def test_vector_multiplicity(small_bases):
    b = small_bases[1]
    assert np.allclose(b.eigenvalues[:3], PI2, atol=1e-12)
    assert b.eigenvalues[3] > PI2 + 1
    assert list(b.comp[:3]) == [0, 1, 2]
    assert np.abs(b.wall_values()).max() < 1e-14


def test_tie_break_deterministic():
    a = build_scalar_basis(SMALL)
    b = build_scalar_basis(SMALL)
    assert np.array_equal(a.table, b.table)
    # equal eigenvalues are ordered lexicographically by (j, m, n, trig)
    lam = a.eigenvalues
    key = list(zip(a.j, a.m, a.n_, a.trig))
    for i in range(len(lam) - 1):
        if lam[i] == lam[i + 1]:
            assert key[i] < key[i + 1]


@pytest.mark.parametrize("which", [0, 1, 2])
def test_gram_identity(small_bases, which):
    assert gram_deviation(small_bases[which]) < 1e-10


def test_stokes_families(small_bases):
    b = small_bases[0]
    mean = b.comp == FAM_MEAN
    assert np.all((b.m[mean] == 0) & (b.n_[mean] == 0))
    assert np.allclose(b.eigenvalues[mean], (b.j[mean] * math.pi) ** 2)
    tor = b.comp == FAM_TOROIDAL
    kap2 = (2 * np.pi * b.m / 2.0) ** 2 + (2 * np.pi * b.n_ / 2.0) ** 2
    assert np.allclose(b.eigenvalues[tor], kap2[tor] + (b.j[tor] * math.pi) ** 2)
    assert b.eigenvalues[0] == pytest.approx(PI2, abs=1e-8)
    assert b.comp[0] == FAM_MEAN


def test_stokes_validity(small_bases):
    dv, wl = stokes_validity(small_bases[0])
    assert dv <= 1e-10 and wl <= 1e-10


def test_stokes_matches_dispersion(small_bases):
    b = small_bases[0]
    for kap, (lam, _) in b.poloidal.items():
        ref = poloidal_eigenvalues(kap, len(lam))
        assert np.allclose(lam, ref, rtol=1e-6, atol=0)


def test_stokes_vertical_convergence():
    d1 = DomainSpec(Mv=24, Nh=1, Nz=4)
    d2 = DomainSpec(Mv=48, Nh=1, Nz=4)
    a, b = build_stokes_basis(d1), build_stokes_basis(d2)
    assert np.array_equal(a.table, b.table)
    assert np.max(np.abs(a.eigenvalues - b.eigenvalues)) <= 1e-8


def test_truncation_and_errors():
    d = DomainSpec(Mv=8, Nh=1, Nz=2, Nmodes=(5, 4, 3))
    assert build_stokes_basis(d).n == 5
    assert build_vector_basis(d).n == 4
    assert build_scalar_basis(d).n == 3
    with pytest.raises(BasisConfigError):
        build_scalar_basis(DomainSpec(Mv=8, Nh=1, Nz=2, Nmodes=(None, None, 10 ** 6)))


def test_construction_error_names_wavenumber(monkeypatch):
    def boom(kappa, Mv, nz):
        raise B.BasisConstructionError("no convergence")

    monkeypatch.setattr(B, "poloidal_modes", boom)
    with pytest.raises(B.BasisConstructionError, match=r"\(m, n\)"):
        build_stokes_basis(DomainSpec(Mv=8, Nh=1, Nz=2))


@pytest.mark.parametrize("which", [0, 1, 2])
def test_poincare(small_bases, which):
    rep = poincare_audit(small_bases[which], samples=50, seed=1)
    assert rep.ok
    assert rep.deviation < 1e-8


def test_cache_roundtrip(tmp_path):
    d = DomainSpec(Mv=12, Nh=1, Nz=3)
    for op in B.OPERATORS:
        b = B._BUILDERS[op](d)
        p = save_basis(b, tmp_path / f"{op}.basis")
        c = load_basis(p)
        assert c.eigenvalues.tobytes() == b.eigenvalues.tobytes()
        assert np.array_equal(c.table, b.table)
        assert np.array_equal(c.profile(0), b.profile(0))
        assert np.array_equal(c.profile(2), b.profile(2))
        save_basis(c, tmp_path / "again.basis")
        assert (tmp_path / "again.basis").read_bytes() == p.read_bytes()


def test_cached_basis_disk(tmp_path):
    d = DomainSpec(Mv=10, Nh=1, Nz=2)
    B._MEMO.clear()
    a = cached_basis(B.STOKES, d, tmp_path)
    assert B.cache_path(B.STOKES, d, tmp_path).exists()
    B._MEMO.clear()
    b = cached_basis(B.STOKES, d, tmp_path)
    assert a.eigenvalues.tobytes() == b.eigenvalues.tobytes()


def test_bad_cache_file(tmp_path):
    p = tmp_path / "x.basis"
    p.write_bytes(b"garbage")
    with pytest.raises(BasisConfigError):
        load_basis(p)


def test_poincare_equality_at_ground_mode(small_bases):
    from micropolar_rb.fields import Field, norm_grad_sq_quadrature

    for b in small_bases:
        a = np.zeros(b.n)
        a[0] = 1.0
        f = Field(b, a)
        assert norm_grad_sq_quadrature(f) - PI2 * f.l2() ** 2 == pytest.approx(0.0, abs=1e-10)
