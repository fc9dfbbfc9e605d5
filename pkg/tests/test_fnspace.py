import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from nullctl.errors import InputError
from nullctl.fnspace import (
    Coupling,
    PrecisionContext,
    SampledFunction,
    SineSeries,
    TrigPoly,
    VectorField2,
    inner,
    phi,
    project,
    quad_oscillatory,
)

SQ = math.sqrt(2 / math.pi)


def test_project_exact_mode():
    s = project(phi(3), 5)
    np.testing.assert_allclose(s.coeffs, [0, 0, 1, 0, 0], atol=1e-15)


def test_project_zero():
    assert not np.any(project(lambda x: 0 * x, 4).coeffs)


def test_project_sampled_sin_against_quad():
    f = SampledFunction.from_callable(np.sin, 2048)
    a1 = project(f, 1).coeffs[0]
    ref = integrate.quad(lambda x: math.sin(x) * SQ * math.sin(x), 0, math.pi, epsabs=1e-14)[0]
    assert abs(ref - math.sqrt(math.pi / 2)) < 1e-12
    assert abs(a1 - ref) < 1e-12


def test_inner_weights():
    p2 = SineSeries.mode(2, 4)
    p1 = SineSeries.mode(1, 4)
    assert inner(p2, p2, "H10") == pytest.approx(4.0)
    assert inner(p1, p2, "L2") == 0.0
    assert inner(p2, p2, "Hm1") == pytest.approx(0.25)


def test_coupling_parity_value():
    # <sin x phi_1, phi_3> = 8/(15 pi) in absolute value
    c = Coupling.sine(1).coeff(1, 3)
    assert abs(abs(c) - 8 / (15 * math.pi)) < 1e-14
    assert abs(abs(c) - 0.169765) < 1e-6


def test_trig_integrals():
    f = TrigPoly.sin(1) * TrigPoly.cos(0.5)
    assert f.integral(0, math.pi) == pytest.approx(4 / 3, abs=1e-14)
    assert abs((TrigPoly.sin(2) * TrigPoly.sin(1)).integral(0, math.pi)) < 1e-15
    g = TrigPoly.sin(1) * TrigPoly.sin(1) * TrigPoly.sin(3)
    assert g.integral(0, math.pi) == pytest.approx(-4 / 15, abs=1e-14)


def test_quad_oscillatory_converges():
    r = quad_oscillatory(lambda x: np.exp(-x), 7.3, PrecisionContext())
    ref = integrate.quad(lambda x: math.exp(-x) * math.sin(7.3 * x), 0, math.pi, limit=200)[0]
    assert r.converged
    assert abs(r.value - ref) < 1e-12


def test_precision_context_validation():
    with pytest.raises(InputError):
        PrecisionContext(working_bits=20)
    with pytest.raises(InputError):
        PrecisionContext(quad_panels_per_period=2)


def test_sine_series_rejects_nan():
    with pytest.raises(InputError):
        SineSeries(np.array([1.0, np.nan]))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8), st.lists(st.floats(-3, 3), min_size=1, max_size=8))
def test_inner_symmetric_and_cauchy_schwarz(a, b):
    N = max(len(a), len(b))
    f, g = SineSeries(np.array(a)).padded(N), SineSeries(np.array(b)).padded(N)
    for space in ("L2", "H10", "Hm1"):
        v = inner(f, g, space)
        assert v == pytest.approx(inner(g, f, space), abs=1e-12)
        assert abs(v) <= f.norm(space) * g.norm(space) * (1 + 1e-12) + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6))
def test_coupling_matrix_against_quad(k, n):
    q = Coupling((0.7, -0.2), (0.3,), "t")
    ref = integrate.quad(lambda x: q.evaluate(np.array([x]))[0] * SQ**2 * math.sin(k * x) * math.sin(n * x), 0, math.pi, epsabs=1e-13)[0]
    assert q.matrix(8)[n - 1, k - 1] == pytest.approx(ref, abs=1e-11)


def test_vector_field_pairing():
    a = VectorField2.from_parts([1.0, 2.0], [0.5, 0.0])
    assert a.pairing(a) == pytest.approx(a.inner(a, "L2"))
