import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, linalg

from nullctl.condensation import liouville_nu
from nullctl.errors import NormalizationError
from nullctl.fnspace import Coupling, PrecisionContext, VectorField2
from nullctl.simulate import (
    GalerkinModel,
    adjoint,
    adjoint_eigenflow,
    adjoint_pde_residual,
    duality_residual,
    forward,
    gap_check,
    observability_ratio,
    random_triple,
    verify_null_control,
    witness_chain,
    witness_fast,
    witness_pair,
    witness_slow,
)
from nullctl.spectral import NuValue, ProblemData, spectrum


def _model(q, nu=2.0, N=8):
    return GalerkinModel(nu, q.matrix(N))


def _e(n, N):
    return np.eye(N)[n - 1]


# ---------------------------------------------------------------- forward


def test_forward_decoupled_mode():
    m = _model(Coupling.zero())
    y0 = VectorField2.from_parts(np.zeros(8), _e(1, 8))
    tr = forward(y0, None, m, 1.0, 64)
    np.testing.assert_allclose(tr.terminal.as_array()[8:], math.exp(-2) * _e(1, 8), atol=1e-14)
    assert not np.any(tr.terminal.as_array()[:8])


def test_forward_constant_coupling_duhamel():
    m = _model(Coupling.constant(1.0), N=16)
    y0 = VectorField2.from_parts(np.zeros(16), _e(1, 16))
    yT = forward(y0, None, m, 1.0, 64).terminal.as_array()
    assert yT[0] == pytest.approx(math.exp(-2) - math.exp(-1), abs=1e-8)


@settings(max_examples=10, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 3))
def test_forward_first_component_alone(a, c, T):
    m = _model(Coupling((a,), (c,), "t"))
    y0 = VectorField2.from_parts(_e(1, 8), np.zeros(8))
    yT = forward(y0, None, m, T, 32).terminal.as_array()
    np.testing.assert_allclose(yT, math.exp(-T) * np.concatenate([_e(1, 8), np.zeros(8)]), atol=1e-14)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_energy_gronwall(seed):
    rng = np.random.default_rng(seed)
    q = Coupling((1.0, -0.5), (), "t")
    m = _model(q, N=10)
    y0 = rng.normal(size=20)
    tr = forward(y0, None, m, 1.0, 64)
    C = q.sup_bound()
    assert np.all(tr.norm_L2 <= np.exp(C * tr.t) * tr.norm_L2[0] * (1 + 1e-12))


def test_forward_matches_expm_for_zero_control():
    m = _model(Coupling.sine(1), N=10)
    y0 = np.random.default_rng(0).normal(size=20)
    np.testing.assert_allclose(forward(y0, None, m, 0.7, 16).terminal.as_array(), linalg.expm(0.7 * m.A) @ y0, atol=1e-12)


def test_trajectory_csv(tmp_path):
    m = _model(Coupling.sine(1))
    tr = forward(np.ones(16), None, m, 1.0, 8)
    tr.write_csv(tmp_path / "t.csv", tmp_path / "modes.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,norm_Hm1,norm_L2"


# ---------------------------------------------------------------- adjoint


def test_slow_eigenflow():
    p = ProblemData(NuValue.from_decimal("2"), Coupling.sine(1), 3, PrecisionContext(N_max=16))
    e = next(e for e in spectrum(p).entries if e.branch == "slow" and e.k == 2)
    states, trace = adjoint_eigenflow(e, 1.0, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(states[0], math.exp(-8) * e.eigfn.as_array())
    assert trace[-1] == pytest.approx(2 * 2 * math.sqrt(2 / math.pi))


def test_chain_eigenflow_residual_and_galerkin():
    q = Coupling((1.0, 1.0), (), "t")
    p = ProblemData(NuValue.rational(2, 1), q, 3, PrecisionContext(N_max=32))
    chains = [e for e in spectrum(p).entries if e.classification == "generalized-chain"]
    assert chains
    t = np.linspace(0, 1, 5)
    model = GalerkinModel.from_problem(p, 32)
    for e in chains:
        assert adjoint_pde_residual(p, e, 1.0, t) <= 1e-8
        states, _ = adjoint_eigenflow(e, 1.0, t)
        gal = adjoint(states[-1], model, 1.0, t).states
        assert np.max(np.abs(gal - states)) <= 1e-8 * np.max(np.abs(states))


# ---------------------------------------------------------------- duality


def test_duality_zero_control():
    m = _model(Coupling.sine(1), N=12)
    rng = np.random.default_rng(5)
    r = duality_residual(rng.normal(size=24), None, rng.normal(size=24), m, 1.0, 256)
    assert r.residual <= 1e-8


def test_duality_random_triples_and_order():
    p = ProblemData(NuValue.from_decimal("2"), Coupling.sine(1), 8)
    m = GalerkinModel.from_problem(p, 16)
    rng = np.random.default_rng(11)
    y0, u, th = random_triple(rng, 16, 1.0)
    fine = duality_residual(y0, u, th, m, 1.0, 2048).residual
    assert fine <= 1e-6
    r1 = duality_residual(y0, u, th, m, 1.0, 256, hold="linear").residual
    r2 = duality_residual(y0, u, th, m, 1.0, 512, hold="linear").residual
    assert r1 / r2 >= 4 * 0.9  # second order for the trapezoidal hold


# ---------------------------------------------------------------- observability


@pytest.mark.parametrize("k", [1, 3])
def test_slow_witness_closed_form_and_galerkin(k):
    T, nu = 0.4, 2.0
    rep = witness_slow(nu, k, T)
    ref = math.pi * k * k * math.exp(-2 * nu * k * k * T) / (nu * (1 - math.exp(-2 * nu * k * k * T)))
    assert float(rep.ratio) == pytest.approx(ref, rel=1e-12)
    m = _model(Coupling.sine(1))
    th = np.zeros(16)
    th[8 + k - 1] = 1.0
    gal = observability_ratio(th, m, T)
    assert float(gal.ratio) == pytest.approx(float(rep.ratio), rel=1e-10)


def test_observability_homogeneous():
    m = _model(Coupling.sine(1))
    th = np.random.default_rng(2).normal(size=16)
    r1 = observability_ratio(th, m, 1.0).ratio
    r2 = observability_ratio(-3.7 * th, m, 1.0).ratio
    assert abs(r1 / r2 - 1) < 1e-14


def test_pair_denominator_bound():
    p = ProblemData(NuValue.from_decimal("2"), Coupling.sine(1), 8)
    for k in range(1, 6):
        a = p.nu.nearest(k)
        g = a * a - 2 * k * k
        rep = witness_pair(p, a, k, 1.0)
        assert rep.denominator <= g * g * 1.0


def test_pair_denominator_against_quad():
    p = ProblemData(NuValue.from_decimal("2"), Coupling.sine(1), 8)
    rep = witness_pair(p, 3, 2, 0.8)
    g = 9 - 8
    ref = integrate.quad(lambda t: (math.exp(-9 * t) - math.exp(-8 * t)) ** 2, 0, 0.8, epsabs=1e-16)[0]
    assert float(rep.denominator) == pytest.approx(ref, rel=1e-10)


@pytest.mark.xfail(strict=True, reason="normalized pair witness: numerator and denominator are both O(gap^2); see decisions ledger")
def test_liouville_pair_witness_grows():
    spec, nu = liouville_nu(1.0, 3, "even")
    p = ProblemData(nu, Coupling.sine(1), 8, PrecisionContext(working_bits=256))
    r1, r2 = (witness_pair(p, k, j, 0.1) for k, j in spec.convergents[:2])
    assert r2.ratio >= 10 * r1.ratio


def test_fast_witness_zero_coupling():
    p = ProblemData(NuValue.from_decimal("2"), Coupling.zero(), 4)
    with pytest.raises(NormalizationError):
        witness_fast(p, 1, 1.0)


def test_chain_witness_positive_terms():
    q = Coupling((1.0, 1.0), (), "t")
    p = ProblemData(NuValue.rational(2, 1), q, 6)
    r = witness_chain(p, 1, 1.0)
    assert r.denominator > 0 and r.numerator > 0


# ---------------------------------------------------------------- null control and gaps


def test_verify_free_decay():
    m = _model(Coupling.sine(1))
    y0 = VectorField2.from_parts(_e(1, 8), np.zeros(8))
    rep = verify_null_control(y0, None, m, 5.0, K=4, steps=64)
    assert rep.relative_residual == pytest.approx(math.exp(-5), rel=1e-12)


def test_gap_nu_4_9():
    rep = gap_check(NuValue.rational(2, 3), 400)
    assert rep.passed and rep.min_gap > Fraction(1, 9)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6))
def test_gap_bound_general(i0, j0):
    if math.gcd(i0, j0) != 1 or i0 == j0:
        return
    rep = gap_check(NuValue.rational(i0, j0), 200)
    assert rep.min_gap >= rep.bound
