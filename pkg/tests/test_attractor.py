import math

import numpy as np
import pytest

from micropolar_rb.attractor import (
    AttractorError,
    AttractorSample,
    EnsembleSpec,
    continuous_dependence_probe,
    gamma_on_A0_audit,
    hausdorff_semidist,
    k_max,
    k_sweep,
    make_ensemble,
    newtonian_projection_compare,
    sample_omega_limit,
    state_distance,
)
from micropolar_rb.audit import DEFAULT_C1
from micropolar_rb.fields import zero_state
from micropolar_rb.integrator import EULER, MICROPOLAR, NEWTONIAN
from micropolar_rb.params import DimensionlessParams

SUB = DimensionlessParams(Ra=100.0, Pr=1000.0)


def brute_dist(A, B, M, metric="X"):
    """sup over A of inf over B, field norms computed one pair at a time."""

    def rho(a, b):
        parts = []
        for fa, fb, w in ((a.u, b.u, 1.0), (a.gamma, b.gamma, math.sqrt(M)), (a.theta, b.theta, 1.0)):
            d = fa.coef - fb.coef
            if metric == "Z":
                d = d * np.sqrt(fa.basis.eigenvalues)
            parts.append(w * math.sqrt(sum(x * x for x in d)))
        return parts[0] + parts[1] + parts[2]

    best = -1.0
    for a in A:
        m = min(rho(a, b) for b in B)
        best = max(best, m)
    return best


def cloud(bases, n, seed, r=0.3):
    return make_ensemble(EnsembleSpec(n, (r, r, r), seed, 12), bases)


def test_ensemble_radii(small_bases):
    for s in make_ensemble(EnsembleSpec(4, (0.1, 0.2, 0.0), 3, 8), small_bases):
        assert s.u.l2() == pytest.approx(0.1, rel=1e-12)
        assert s.gamma.l2() == pytest.approx(0.2, rel=1e-12)
        assert s.theta.l2() == 0.0
    with pytest.raises(AttractorError):
        EnsembleSpec(0)
    with pytest.raises(AttractorError):
        EnsembleSpec(2, (0.1, -0.1, 0.1))


def test_semidist_examples(small_bases):
    A = cloud(small_bases, 5, 0)
    assert hausdorff_semidist(A, A, "X", M=1.0).value == 0.0
    z = zero_state(small_bases)
    s = A[0]
    r = s.u.l2() + s.gamma.l2() + s.theta.l2()
    assert hausdorff_semidist([z], [s], "X", M=1.0).value == pytest.approx(r, rel=1e-14)
    with pytest.raises(AttractorError):
        hausdorff_semidist(A, A, "W", M=1.0)


@pytest.mark.parametrize("metric", ["X", "Z"])
def test_semidist_matches_brute_force(small_bases, metric):
    A = cloud(small_bases, 20, 1)
    B = cloud(small_bases, 30, 2)
    rep = hausdorff_semidist(A, B, metric, M=2.0)
    assert rep.value == pytest.approx(brute_dist(A, B, 2.0, metric), rel=1e-13)


def test_semidist_nesting(small_bases):
    A = cloud(small_bases, 8, 4)
    B = cloud(small_bases, 12, 5)
    d = hausdorff_semidist(A, B, "X", M=1.0).value
    assert hausdorff_semidist(A[:4], A, "X", M=1.0).value == 0.0
    assert hausdorff_semidist(A, B + A[:2], "X", M=1.0).value <= d
    assert hausdorff_semidist(A + B[:1], B, "X", M=1.0).value >= d


def test_state_distance_symmetric(small_bases):
    a, b = cloud(small_bases, 2, 6)
    assert state_distance(a, b, 1.0) == state_distance(b, a, 1.0) > 0


def test_zero_ensemble_sample(small_bases):
    z = zero_state(small_bases)
    smp = sample_omega_limit([z], SUB, burn_in=0.02, window=0.02, cadence=0.01, dt=1e-3, scheme=EULER)
    assert len(smp) >= 2
    assert all(not (s.u.coef.any() or s.gamma.coef.any() or s.theta.coef.any()) for s in smp.states)
    assert hausdorff_semidist(smp, AttractorSample([z], SUB, MICROPOLAR, 0, 0, np.zeros(1, int)), "X").value == 0.0


def test_window_doubling_is_superset(small_bases):
    members = cloud(small_bases, 2, 8)
    kw = dict(burn_in=0.02, cadence=0.01, dt=1e-3, scheme=EULER)
    a = sample_omega_limit(members, SUB, window=0.03, **kw)
    b = sample_omega_limit(members, SUB, window=0.06, **kw)
    assert len(b) > len(a)
    assert hausdorff_semidist(a, b, "X").value == 0.0


def test_sampler_preconditions(small_bases):
    with pytest.raises(AttractorError):
        sample_omega_limit(cloud(small_bases, 1, 0), SUB, burn_in=-1, window=1, cadence=0.1, dt=1e-3)
    with pytest.raises(AttractorError):
        sample_omega_limit(cloud(small_bases, 1, 0), SUB, burn_in=0, window=0, cadence=0.1, dt=1e-3)


def test_sampler_records_t_star(small_bases, caplog):
    smp = sample_omega_limit(cloud(small_bases, 1, 0), SUB, burn_in=0.0, window=0.02, cadence=0.01, dt=1e-3,
                             scheme=EULER, c1=DEFAULT_C1)
    assert len(smp.meta["t_star"]) == 1


def test_subcritical_samples_near_zero(small_bases):
    smp = sample_omega_limit(cloud(small_bases, 2, 9), SUB, burn_in=2.0, window=0.2, cadence=0.1, dt=1e-3, scheme=EULER)
    z = zero_state(small_bases)
    assert max(state_distance(s, z, 1.0) for s in smp.states) <= 1e-6


def test_gamma_audit(small_bases):
    dp = SUB
    members = make_ensemble(EnsembleSpec(1, (0.2, 0.0, 0.2), 0, 8), small_bases)
    smp = sample_omega_limit(members, dp, burn_in=0.0, window=0.02, cadence=0.01, dt=1e-3, scheme=EULER)
    v, ok = gamma_on_A0_audit(smp, 1e-6)
    assert v == 0.0 and ok
    with pytest.raises(AttractorError):
        gamma_on_A0_audit(AttractorSample(smp.states, dp.replace(K=0.1), MICROPOLAR, 0, 0, smp.member))
    # Newtonian model reports K = 0 whatever the stored parameter
    assert gamma_on_A0_audit(AttractorSample(smp.states, dp.replace(K=0.1), NEWTONIAN, 0, 0, smp.member))[1] is None


def test_k_sweep_only_zero(small_bases):
    rows, _ = k_sweep(SUB, [0.0], cloud(small_bases, 1, 0), c1=DEFAULT_C1, burn_in=0.01, window=0.01,
                      cadence=0.01, dt=1e-3, scheme=EULER)
    assert len(rows) == 1 and rows[0]["K"] == 0.0 and rows[0]["dist_X"] == 0.0 and rows[0]["dist_Z"] == 0.0


def test_k_sweep_validation(small_bases):
    m = cloud(small_bases, 1, 0)
    kw = dict(c1=DEFAULT_C1, burn_in=0.01, window=0.01, cadence=0.01, dt=1e-3)
    for bad in ([0.1, 0.05], [0.05, 0.1, 0.0], [], [0.1, -0.1, 0.0]):
        with pytest.raises(AttractorError):
            k_sweep(SUB, bad, m, **kw)


def test_k_sweep_refuses_beyond_kmax(small_bases):
    K = 1.1 * k_max(SUB)
    rows, _ = k_sweep(SUB, [K, 0.0], cloud(small_bases, 1, 0), c1=DEFAULT_C1, burn_in=0.01, window=0.01,
                      cadence=0.01, dt=1e-3, scheme=EULER)
    assert math.isnan(rows[0]["dist_X"]) and "K_max" in rows[0]["refused"]
    assert rows[1]["dist_X"] == 0.0


def test_k_sweep_deterministic(small_bases):
    kw = dict(c1=DEFAULT_C1, burn_in=0.02, window=0.02, cadence=0.01, dt=1e-3, scheme=EULER)
    a, _ = k_sweep(SUB, [0.1, 0.0], cloud(small_bases, 2, 3), **kw)
    b, _ = k_sweep(SUB, [0.1, 0.0], cloud(small_bases, 2, 3), **kw)
    assert a == b
    assert a[0]["dist_X"] > 0


def test_newtonian_projection_identical(small_bases):
    members = cloud(small_bases, 2, 11)
    worst, per = newtonian_projection_compare(SUB, members, horizon=0.05, dt=1e-3)
    assert len(per) > 0 and worst <= 1e-12
    with pytest.raises(AttractorError):
        newtonian_projection_compare(SUB.replace(K=0.1), members, horizon=0.01, dt=1e-3)


@pytest.mark.parametrize("scheme, ratio", [("imex-euler", 1 / 3), ("imex-cnab2", 0.2)])
def test_newtonian_projection_dt_mismatch(small_bases, scheme, ratio):
    # against a fine Newtonian run the deviation follows the coarse run's error C dt^p
    dp = DimensionlessParams(Ra=100.0, Pr=1.0)
    members = cloud(small_bases, 1, 11)
    a, _ = newtonian_projection_compare(dp, members, horizon=0.02, dt=1e-3, dt_newton=2.5e-4, scheme=scheme)
    b, _ = newtonian_projection_compare(dp, members, horizon=0.02, dt=5e-4, dt_newton=2.5e-4, scheme=scheme)
    assert a > 0 and b > 0
    assert b / a == pytest.approx(ratio, abs=0.05)


def test_probe_delta_zero(small_bases):
    s0 = cloud(small_bases, 1, 0)[0]
    rec = continuous_dependence_probe(s0, 0.0, 0.02, SUB, dt=1e-3)
    assert not rec.d.any() and rec.passed


def test_probe_linear_regime_and_contraction(small_bases):
    s0 = cloud(small_bases, 1, 0)[0]
    a = continuous_dependence_probe(s0, 1e-8, 0.1, SUB, dt=1e-3, scheme=EULER)
    b = continuous_dependence_probe(s0, 1e-6, 0.1, SUB, dt=1e-3, scheme=EULER)
    assert a.passed and b.passed
    assert a.d[0] == pytest.approx(1e-8, rel=1e-10)
    assert abs(a.exponent - b.exponent) <= 0.1 * abs(b.exponent)
    assert a.exponent < 0
