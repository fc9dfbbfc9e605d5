import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from nullctl.condensation import (
    estimate_dolecki,
    estimate_T0,
    estimate_T0_rational,
    estimate_T1,
    estimate_T2,
    gram_det,
    liouville_nu,
    riesz_degeneracy_scan,
    synthetic_bits,
    synthetic_coupling,
    window_bounds,
)
from nullctl.errors import DomainError, NullCtlError
from nullctl.fnspace import Coupling, PrecisionContext
from nullctl.spectral import NuValue, ProblemData, coupling_integral


def _p(nu, q, K=8, bits=53):
    return ProblemData(nu, q, K, PrecisionContext(working_bits=bits))


def test_window_bounds():
    assert window_bounds(30) == (15, 30)
    assert window_bounds(7) == (4, 7)


def test_T1_small_coupling_decays():
    p = _p(NuValue.from_decimal("2"), Coupling.sine(1, 1e-3), K=40)
    e10 = estimate_T1(p, K=10).estimate
    e40 = estimate_T1(p, K=40).estimate
    assert e40 < e10


def test_T0_quadratic_irrational():
    p = _p(NuValue.from_decimal("2"), Coupling.sine(1), K=40)
    assert estimate_T0(p).estimate <= 0.05


def test_T0_rational_decreasing():
    q = Coupling((1.0, 1.0), (), "sin x + sin 2x")
    vals = [estimate_T0_rational(_p(NuValue.rational(2, 1), q, K=K)).estimate for K in (10, 20, 30)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 0.05


def test_T0_rational_vanishing_I_raises():
    with pytest.raises(NullCtlError):
        estimate_T0_rational(_p(NuValue.rational(2, 1), Coupling.constant(1.0), K=4))


@pytest.mark.parametrize("tau", [0.5, 1.0])
def test_synthetic_coupling_calibration(tau):
    nu = NuValue.rational(2, 1)
    bits = synthetic_bits(tau, 12)
    q = synthetic_coupling(nu, tau, 12, bits)
    p = _p(nu, q, K=12, bits=bits)
    for k in (1, 3, 5, 7):
        I, _ = coupling_integral(p, k * k)
        assert float(abs(I)) == pytest.approx(math.exp(-tau * k * k), rel=1e-8)


def test_dolecki_midpoint():
    e = estimate_dolecki(x0_over_pi=Fraction(1, 2), K=40)
    assert e.estimate < 0.01
    assert any(i % 2 == 0 for i, _ in e.excluded)


def test_gram_det_zero_coupling():
    r = gram_det(_p(NuValue.from_decimal("2"), Coupling.zero()), 3, 2)
    assert r.det == 1


def test_gram_det_equal_indices_rejected():
    with pytest.raises(DomainError):
        gram_det(_p(NuValue.rational(2, 1), Coupling.sine(1)), 2, 1)


def test_gram_det_direct_agrees():
    r = gram_det(_p(NuValue.from_decimal("2"), Coupling.sine(1), bits=128), 3, 2)
    assert r.det_direct is not None
    assert abs(r.det - r.det_direct) < 1e-10


def test_liouville_even_track():
    spec, nu = liouville_nu(1.0, 3, "even")
    assert spec.convergents[0] == (1, 1)
    assert spec.convergents[1] == (13, 11)
    assert spec.verified
    assert spec.C <= 1
    # delta relation between consecutive pairs
    (k1, j1), (k2, j2) = spec.convergents[:2]
    assert k2 * j1 - k1 * j2 == spec.delta
    assert all((k + j) % 2 == 0 for k, j in spec.convergents)


def test_riesz_scan_decreasing():
    spec, _ = liouville_nu(1.0, 3, "even")
    recs = riesz_degeneracy_scan(spec, Coupling.sine(1), bits=256)
    dets = [r.det for r in recs]
    assert dets[0] > dets[1] > dets[2]
    assert dets[2] < 0.1
    k2U = [r.k2U for r in recs]
    assert all(b * 10 <= a for a, b in zip(k2U, k2U[1:]))


def test_T2_liouville_eigenvalue_only_partial_grows():
    spec, nu = liouville_nu(1.0, 3, "even")
    p = _p(nu, Coupling.sine(1), K=8, bits=256)
    est = estimate_T2(p, ks=[j for _, j in spec.convergents[1:]])
    alt = dict(est.alt_partials["eigenvalue_only"])
    vals = [float(v) for v in alt.values()]
    assert vals[0] >= 1 and vals[-1] > 1e100


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 60))
def test_window_contains_K(K):
    lo, hi = window_bounds(K)
    assert lo == math.ceil(K / 2) and hi == K
