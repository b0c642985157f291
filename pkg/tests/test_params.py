import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from micropolar_rb.params import (
    DimensionlessParams,
    ParameterError,
    PhysicalParams,
    background_shift,
    check_condition_H,
    derive_dimensionless,
    params_from_mapping,
    read_keyvalue_file,
    unshift,
)

PHYS = dict(nu=1e-6, nu_r=0.0, rho0=1000.0, alpha_bar=2e-4, g=9.81, j=1e-6, alpha=1e-8, beta=1e-9,
            chi=1.4e-7, T_B=5.0, h=0.01, Lx1=0.02, Lx2=0.03)

pos = st.floats(1e-3, 1e3, allow_nan=False)


def test_derive_formulas():
    dp = derive_dimensionless(PhysicalParams(**PHYS))
    p = PHYS
    assert dp.Ra == pytest.approx(p["alpha_bar"] * p["g"] * p["T_B"] * p["h"] ** 3 / (p["nu"] * p["chi"]), rel=1e-15)
    assert dp.Pr == pytest.approx(p["nu"] / p["chi"], rel=1e-15)
    assert dp.L == pytest.approx(p["alpha"] / (p["h"] ** 2 * p["nu"]))
    assert dp.M == pytest.approx(p["j"] / p["h"] ** 2)
    assert dp.G == pytest.approx(p["beta"] / (p["h"] ** 2 * p["nu"]))
    assert (dp.ax, dp.ay) == pytest.approx((2.0, 3.0))
    assert dp.A == pytest.approx(6.0)


def test_nu_r_zero_and_equal():
    assert derive_dimensionless(PhysicalParams(**PHYS)).K == 0.0
    dp = derive_dimensionless(PhysicalParams(**{**PHYS, "nu_r": PHYS["nu"]}))
    assert dp.K == 1.0 and dp.N == 0.5


@pytest.mark.parametrize("key", ["nu", "rho0", "h", "Lx1", "chi"])
def test_nonpositive_physical_rejected(key):
    with pytest.raises(ParameterError):
        PhysicalParams(**{**PHYS, key: 0.0})


def test_dimensionless_domain():
    with pytest.raises(ParameterError):
        DimensionlessParams(Ra=100, Pr=0)
    with pytest.raises(ParameterError):
        DimensionlessParams(Ra=100, Pr=1, K=-1)
    with pytest.raises(ParameterError):
        DimensionlessParams(Ra=100, Pr=1, L=0.0, M=1.0)


@settings(max_examples=60, deadline=None)
@given(Ra=pos, Pr=pos, M=pos, L=pos)
def test_identities(Ra, Pr, M, L):
    dp = DimensionlessParams(Ra=Ra, Pr=Pr, M=M, L=L)
    assert abs(dp.Gr * dp.Pr - dp.Ra) <= 1e-14 * dp.Ra
    assert abs(dp.eps * dp.Pr - 1.0) <= 1e-14
    assert dp.D >= 2.0 and dp.D == max(2.0, M / L)


def test_H_examples():
    r = check_condition_H(DimensionlessParams(Ra=1, Pr=1e6, K=0.0, L=0.5), 0.2)
    assert r.margin_L == 0.5
    r = check_condition_H(DimensionlessParams(Ra=1, Pr=1e6, K=1.0, L=1.0), 0.2)
    assert r.margin_L == pytest.approx(1 - 16 / (3 * math.pi ** 2))
    assert r.margin_L == pytest.approx(0.4596, abs=1e-4)
    # D = 2 whenever M/L <= 2
    dp = DimensionlessParams(Ra=10, Pr=1, M=1.5, L=1.0)
    r = check_condition_H(dp, 0.2)
    assert r.margin_Pr == pytest.approx(1 - 2 * 0.2 * 10 * 2 ** 1.5 * 2.0)
    with pytest.raises(ParameterError):
        check_condition_H(dp, 0.0)


@settings(max_examples=60, deadline=None)
@given(Pr=pos, dPr=pos, K=st.floats(0, 5), dK=st.floats(0, 5))
def test_H_monotone(Pr, dPr, K, dK):
    base = DimensionlessParams(Ra=50, Pr=Pr, K=K)
    if check_condition_H(base, 0.19).satisfied:
        assert check_condition_H(base.replace(Pr=Pr + dPr), 0.19).satisfied
    else:
        assert not check_condition_H(base.replace(K=K + dK), 0.19).satisfied
    r = check_condition_H(base, 0.19)
    assert r.satisfied == (r.margin_L >= 0 and r.margin_Pr >= 0)


def test_background_shift():
    z = np.linspace(0, 1, 11)
    assert np.all(background_shift(1 - z, z) == 0)
    T = unshift(np.zeros_like(z), z)
    assert T[0] == 1.0 and T[-1] == 0.0
    rng = np.random.default_rng(0)
    th = rng.standard_normal((3, 11))
    assert np.allclose(background_shift(unshift(th, z), z), th, atol=1e-15, rtol=0)


def test_keyvalue(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\nRa = 100\nPr=10  # trailing\n\n")
    kv = read_keyvalue_file(p)
    assert kv == {"Ra": "100", "Pr": "10"}
    assert params_from_mapping(kv).Ra == 100.0
    p.write_text("Ra = 1\nRa = 2\n")
    with pytest.raises(ParameterError, match="duplicate"):
        read_keyvalue_file(p)
    p.write_text("nonsense\n")
    with pytest.raises(ParameterError):
        read_keyvalue_file(p)


def test_blocks_exclusive():
    with pytest.raises(ParameterError, match="mixes"):
        params_from_mapping({"Ra": "1", "Pr": "1", "nu": "1"})
    with pytest.raises(ParameterError, match="neither"):
        params_from_mapping({})
    with pytest.raises(ParameterError, match="incomplete"):
        params_from_mapping({"nu": "1"})
    dp = params_from_mapping({k: str(v) for k, v in PHYS.items()})
    assert dp == derive_dimensionless(PhysicalParams(**PHYS))
