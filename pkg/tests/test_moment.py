import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from nullctl.errors import AssemblyError, DomainError, PrecisionEscalation
from nullctl.fnspace import Coupling, PrecisionContext, VectorField2
from nullctl.moment import (
    ControlSignal,
    Expansion,
    MomentSystem,
    blaschke_eval,
    blaschke_for_group,
    coefficients,
    control_series,
    gram_atoms,
    gram_moment_solve,
    hum_control,
    moments_from_initial,
    synthesize_atom_blaschke,
)
from nullctl.simulate import GalerkinModel
from nullctl.spectral import NuValue, ProblemData, ode_oracle_psi, spectrum


def _problem(nu=None, q=None, K=8):
    return ProblemData(nu or NuValue.from_decimal("2"), q or Coupling.sine(1), K, PrecisionContext(N_max=64))


def _y0(N, modes=6, seed=1):
    rng = np.random.default_rng(seed)
    a, b = np.zeros(N), np.zeros(N)
    a[:modes], b[:modes] = rng.normal(size=modes), rng.normal(size=modes)
    return VectorField2.from_parts(a, b)


# ---------------------------------------------------------------- moments


def test_zero_initial_zero_rhs():
    p = _problem(K=4)
    ms = moments_from_initial(VectorField2.zeros(p.N), spectrum(p), 1.0, p.nu)
    assert all(e.rhs == 0 for e in ms.entries)


def test_single_fast_mode_one_rhs():
    # (phi_2, 0) pairs only with the fast eigenfunction whose first component is phi_2
    p = _problem(K=4)
    y = VectorField2.from_parts(np.eye(p.N)[1], np.zeros(p.N))
    ms = moments_from_initial(y, spectrum(p), 1.0, p.nu)
    nz = [e for e in ms.entries if abs(e.rhs) > 1e-15]
    assert len(nz) == 1 and nz[0].lam == 4.0


def test_rational_rhs_against_shooting_oracle():
    p = _problem(NuValue.rational(2, 1), Coupling((1.0, 1.0), (), "sin x + sin 2x"), K=3)
    y = VectorField2.from_parts(np.eye(p.N)[0], np.zeros(p.N))
    ms = moments_from_initial(y, spectrum(p), 1.0, p.nu)
    e = next(e for e in ms.entries if e.lam == 1.0)
    _, slope = ode_oracle_psi(p, 1)
    assert e.rhs == pytest.approx(-math.exp(-1.0) / (4 * slope), rel=1e-10)
    assert {e.order for e in ms.entries if e.lam == 4.0} == {0, 1}


# ---------------------------------------------------------------- Blaschke


def _ms_small():
    p = _problem(K=4)
    return p, moments_from_initial(_y0(p.N), spectrum(p), 1.0, p.nu)


def test_blaschke_zeros_and_modulus():
    p, ms = _ms_small()
    g = ms.group_ids()[0]
    b = blaschke_for_group(ms, g, 4, 2.0)
    for z in b.zeros:
        assert abs(blaschke_eval(b, z)) < 1e-15
    b3 = type(b)(g, (), 3)
    assert abs(blaschke_eval(b3, 3j)) == pytest.approx(math.sqrt(1e-3), rel=1e-12)
    tau = np.random.default_rng(0).uniform(0, 50, 20)
    assert np.allclose(np.abs(blaschke_eval(b, 1j * tau)) ** 2, (1 + tau**2) ** (-b.power))
    with pytest.raises(DomainError):
        blaschke_eval(b, -1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 100), st.floats(-100, 100))
def test_blaschke_bounded_in_half_plane(x, y):
    b = blaschke_for_group(_ms_small()[1], 0, 4, 2.0)
    assert abs(blaschke_eval(b, complex(x, y))) < 1


def test_coefficients_reconstruct():
    p, ms = _ms_small()
    g = ms.group_ids()[0]
    b = blaschke_for_group(ms, g, 4, 2.0)
    lams = [e.lam for e in ms.entries if e.group == g]
    rhs = np.random.default_rng(3).normal(size=len(lams))
    mc = coefficients(lams, rhs, b)
    J = mc.poly(np.array(lams)) * blaschke_eval(b, np.array(lams, dtype=complex))
    np.testing.assert_allclose(J.real, rhs, atol=1e-8 * np.max(np.abs(rhs)))
    assert mc.residual <= 1e-10
    zero = coefficients(lams, [0.0] * len(lams), b)
    assert all(c == 0 for c in zero.coeffs)


def test_coefficients_condensed_escalates():
    b = blaschke_for_group(MomentSystem.from_targets([5.0], [1.0], 1.0), 0, 4, 2.0)
    with pytest.raises(PrecisionEscalation):
        coefficients([1.0, 1.0 + 1e-14], [1.0, 1.0], b)


def test_blaschke_atom_zero_rhs():
    ms = MomentSystem.from_targets([1.0, 2.0, 4.0], [0.0, 0.0, 0.0], 1.0, groups=[0, 0, 1])
    at = synthesize_atom_blaschke(ms, 0, 4, 2.0)
    assert at.accepted and at.residual == 0 and not np.any(at.samples)


def test_blaschke_atom_never_silently_accepted():
    p, ms = _ms_small()
    g = ms.group_ids()[0]
    at = synthesize_atom_blaschke(ms, g, 4, 2.0)
    assert at.accepted == (at.residual <= 1e-6)
    if not at.accepted:
        assert at.diagnostics.get("reason")
    assert "norm_bound" in at.diagnostics


# ---------------------------------------------------------------- Gram


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(-3, 3))
def test_gram_single_moment_closed_form(T, m):
    ms = MomentSystem.from_targets([1.0], [m], T)
    sig = gram_moment_solve(ms, bits=53)
    if m == 0:
        assert sig.norm_l2 == 0
        return
    # reversed-time atom: v(s) = 2 m e^{-s} / (1 - e^{-2T})
    s = np.linspace(0, T, 7)
    ref = 2 * m * np.exp(-s) / (1 - np.exp(-2 * T))
    np.testing.assert_allclose(sig.expansion.v(s), ref, rtol=1e-10, atol=1e-12)


def test_gram_two_moments_double():
    ms = MomentSystem.from_targets([1.0, 4.0], [1.0, -0.5], 1.0)
    sig = gram_moment_solve(ms, bits=53)
    assert sig.residuals["max_rel"] <= 1e-12
    for lam, r in ((1.0, 1.0), (4.0, -0.5)):
        val = integrate.quad(lambda s: math.exp(-lam * s) * float(sig.expansion.v(np.array([s]))[0]), 0, 1, epsabs=1e-14)[0]
        assert val == pytest.approx(r, abs=1e-11)


def test_gram_condensed_needs_precision():
    ms = MomentSystem.from_targets([1.0, 1.0 + 1e-8], [1.0, 0.0], 1.0)
    with pytest.raises(PrecisionEscalation) as ei:
        gram_moment_solve(ms, bits=53)
    assert ei.value.required_bits > 53
    sig = gram_moment_solve(ms, bits=128)
    assert sig.residuals["max_rel"] <= 1e-12


def test_gram_minimum_norm_stationarity():
    lams = np.array([1.0, 4.0, 9.0])
    ms = MomentSystem.from_targets(lams, [1.0, 0.2, -0.3], 1.0)
    sig = gram_moment_solve(ms, bits=128)
    v = lambda s: float(sig.expansion.v(np.array([s]))[0])
    # w = e^{-16 s} minus its L2 projection on the atoms: every moment of w vanishes
    G = 1 / (lams[:, None] + lams[None, :]) * (1 - np.exp(-(lams[:, None] + lams[None, :])))
    h = (1 - np.exp(-(16 + lams))) / (16 + lams)
    c = np.linalg.solve(G, h)
    w = lambda s: math.exp(-16 * s) - float(c @ np.exp(-lams * s))
    for lam in lams:
        assert abs(integrate.quad(lambda s: w(s) * math.exp(-lam * s), 0, 1, epsabs=1e-15)[0]) < 1e-12
    ww = integrate.quad(lambda s: w(s) ** 2, 0, 1, epsabs=1e-16)[0]
    vw = integrate.quad(lambda s: v(s) * w(s), 0, 1, epsabs=1e-15)[0]
    assert abs(vw) < 1e-10
    n0 = float(sig.expansion.norm2())
    for eps in (1e-2, -1e-2):
        assert n0 + 2 * eps * vw + eps**2 * ww > n0


def test_gram_atoms_nu2_fast():
    p = _problem(K=4)
    ms = moments_from_initial(_y0(p.N), spectrum(p), 1.0, p.nu)
    atoms = gram_atoms(ms)
    assert atoms and all(a.accepted and a.residual <= 1e-6 for a in atoms)


def test_expansion_json_round_trip():
    ms = MomentSystem.from_targets([1.0, 4.0], [1.0, -0.5], 1.0)
    e = gram_moment_solve(ms, bits=128).expansion
    back = Expansion.from_json(e.to_json())
    assert back.coeffs == e.coeffs and back.lams == e.lams


# ---------------------------------------------------------------- series and HUM


def test_zero_moments_zero_control():
    ms = MomentSystem.from_targets([1.0, 4.0], [0.0, 0.0], 1.0)
    sig = control_series(ms, method="gram", K=2, nu=2.0)
    assert sig.norm_l2 == 0


def test_control_series_diagnostics():
    p = _problem(K=6)
    ms = moments_from_initial(_y0(p.N), spectrum(p), 1.0, p.nu)
    sig = control_series(ms, method="gram", K=6, nu=2.0)
    gn = sig.diagnostics["group_norms"]
    assert np.all(np.isfinite(list(gn.values())))
    assert sig.residuals["measured_max_rel"] <= 1e-6


def test_blaschke_series_rejection_is_loud():
    p = _problem(K=4)
    ms = moments_from_initial(_y0(p.N), spectrum(p), 1.0, p.nu)
    try:
        sig = control_series(ms, method="blaschke", K=4, nu=2.0)
    except AssemblyError as exc:
        assert "group" in str(exc)
    else:
        assert sig.residuals["measured_max_rel"] <= 1e-5


def test_hum_zero_and_monotone():
    p = _problem(K=6)
    model = GalerkinModel.from_problem(p, 12)
    z = hum_control(VectorField2.zeros(12), 1.0, 1e-2, model)
    assert z.norm_l2 == 0
    y0 = _y0(12)
    res = [hum_control(y0, 1.0, eps, model).diagnostics["yT_hm1_dual"] for eps in (1e-2, 1e-4, 1e-6)]
    assert res[0] >= res[1] >= res[2]


def test_control_signal_call_and_write(tmp_path):
    ms = MomentSystem.from_targets([1.0], [1.0], 1.0)
    sig = gram_moment_solve(ms, bits=53)
    assert isinstance(sig, ControlSignal)
    sig.write(tmp_path / "u.csv", tmp_path / "u.json")
    assert (tmp_path / "u.csv").read_text().startswith("t,u")
