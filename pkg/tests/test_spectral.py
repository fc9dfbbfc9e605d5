import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from nullctl.errors import DomainError
from nullctl.fnspace import Coupling, PrecisionContext
from nullctl.spectral import (
    NuValue,
    ProblemData,
    approx_controllability_check,
    chain_residual,
    coupling_integral,
    eigen_residual,
    index_maps,
    observation,
    ode_oracle_psi,
    psi_closed_form,
    psi_hat,
    psi_series,
    psi_tilde,
    spectrum,
)


def _prob(nu, q, K=8, N=64):
    return ProblemData(nu, q, K, PrecisionContext(N_max=N))


def test_lambda_sets_nu4():
    t = spectrum(_prob(NuValue.rational(2, 1), Coupling.sine(1), K=3))
    lam = sorted({e.lam for e in t.entries})
    assert lam == [1, 4, 9, 16, 36]
    assert t.by_tag("L1") == []
    assert sorted(e.lam for e in t.by_tag("L2")) == [1, 9]
    assert sorted({e.lam for e in t.by_tag("L3")}) == [4, 16, 36]


def test_nu2_simple():
    t = spectrum(_prob(NuValue.from_decimal("2"), Coupling.sine(1), K=2))
    assert sorted(t.eigenvalues()) == pytest.approx([1, 2, 4, 8])
    assert not any(e.double_flag for e in t.entries)


def test_nu_9_4_sets():
    t = spectrum(_prob(NuValue.rational(3, 2), Coupling.sine(1), K=4))
    tags = {}
    for e in t.entries:
        tags.setdefault(e.tag, set()).add(e.lam)
    assert 2.25 in tags["L1"]
    assert {1, 4, 16} <= tags["L2"]
    assert 9 in tags["L3"]


def test_zero_coupling_psi():
    p = _prob(NuValue.from_decimal("2"), Coupling.zero())
    s, d = psi_closed_form(p, 1)
    assert not np.any(s.coeffs) and d == 0


@pytest.mark.parametrize("k", [1, 2, 5])
def test_psi_three_ways(k):
    p = _prob(NuValue.from_decimal("2"), Coupling.sine(1))
    a, slope_a = psi_closed_form(p, k)
    b = psi_series(p, k)
    c, slope_c = ode_oracle_psi(p, k)
    assert (a - b).norm("H10") < 1e-8
    assert (a - c).norm("H10") < 1e-8
    assert abs(slope_a - slope_c) < 1e-8


def test_coupling_integral_values():
    p = _prob(NuValue.rational(2, 1), Coupling.constant(1.0))
    v1, _ = coupling_integral(p, 1)
    v4, _ = coupling_integral(p, 4)
    assert float(v1) == pytest.approx(4 / 3, abs=1e-12)
    assert abs(float(v4)) < 1e-12
    z = _prob(NuValue.rational(2, 1), Coupling.zero())
    assert coupling_integral(z, 9)[0] == 0


def test_coupling_integral_quad_oracle():
    # I(zeta) against scipy quad of its defining integral
    p = _prob(NuValue.rational(3, 1), Coupling((1.0, 0.5), (), "t"))
    for k in (1, 2, 4):
        ref = integrate.quad(
            lambda s: (math.sin(s) + 0.5 * math.sin(2 * s)) * math.sqrt(2 / math.pi) * math.sin(k * s)
            * math.sqrt(math.pi / 2) * math.sin(k / 3 * (math.pi - s)), 0, math.pi, epsabs=1e-14)[0]
        assert float(coupling_integral(p, k * k)[0]) == pytest.approx(ref, abs=1e-12)


def test_double_flag_and_check():
    p = _prob(NuValue.rational(2, 1), Coupling.constant(1.0), K=3)
    t = spectrum(p)
    at4 = [e for e in t.entries if e.lam == 4]
    assert any(e.double_flag for e in at4)
    rep = approx_controllability_check(p, t)
    assert not rep.controllable
    assert 4 in [lam for lam, _ in rep.failures]


def test_zero_q_fails_everywhere_fast():
    p = _prob(NuValue.from_decimal("2"), Coupling.zero(), K=4)
    rep = approx_controllability_check(p)
    bad = {lam for lam, _ in rep.failures}
    assert {1, 4, 9, 16} <= bad


def test_nu2_sinx_controllable():
    p = _prob(NuValue.from_decimal("2"), Coupling.sine(1), K=20)
    assert approx_controllability_check(p).controllable


def test_slow_observation():
    p = _prob(NuValue.from_decimal("2"), Coupling.sine(1), K=3)
    for e in spectrum(p).entries:
        if e.branch == "slow":
            assert float(observation(e)) == pytest.approx(2 * e.k * math.sqrt(2 / math.pi))


def test_fast_observation_rational_formula():
    p = _prob(NuValue.rational(3, 1), Coupling.sine(1), K=4)
    for e in spectrum(p).entries:
        if e.branch == "fast" and e.k % 3:
            _, _, Ik = psi_tilde(p, e.k)
            ref = -float(Ik) / (math.sqrt(math.pi / 2) * math.sin(e.k * math.pi / 3))
            assert float(e.observation) == pytest.approx(ref, rel=1e-10)


def test_residuals():
    for nu in (NuValue.from_decimal("2"), NuValue.rational(2, 1)):
        p = _prob(nu, Coupling((1.0, 0.3), (), "t"), K=6)
        for e in spectrum(p).entries:
            assert eigen_residual(p, e) <= 1e-8 * (1 + e.lam)
            if e.generalized_partner is not None and e.classification != "double":
                assert chain_residual(p, e) <= 1e-8 * (1 + e.lam)


def test_psi_hat_chain():
    p = _prob(NuValue.rational(2, 1), Coupling.sine(1), K=6)
    c = psi_hat(p, 1)
    assert c.k == 2 and c.n == 1
    assert abs(c.psi_hat.coeffs[c.n - 1]) < 1e-12


def test_domain_errors():
    p = _prob(NuValue.rational(2, 1), Coupling.sine(1))
    with pytest.raises(DomainError):
        psi_closed_form(p, 4)
    with pytest.raises(DomainError):
        coupling_integral(p, 5)
    with pytest.raises(DomainError):
        coupling_integral(_prob(NuValue.from_decimal("2"), Coupling.sine(1)), 4)


def test_nu_decimal_square_is_rational():
    assert NuValue.from_decimal("2.25").is_rational
    assert not NuValue.from_decimal("2").is_rational


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 200))
def test_index_maps_nearest(k):
    nu = NuValue.from_decimal("2")
    m = index_maps(nu, k)
    ik = int(m.i_k[k - 1])
    assert abs(ik - k * math.sqrt(2)) <= 0.5


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9))
def test_rational_lattice_exact(i0, j0):
    nu = NuValue.rational(i0, j0)
    assert Fraction(nu.nu).limit_denominator(100) == Fraction(i0 * i0, j0 * j0) or math.isclose(nu.nu, i0 * i0 / j0 / j0)
