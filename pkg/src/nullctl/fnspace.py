"""Functions on (0, pi) in the orthonormal sine basis.

The basis is phi_n(x) = sqrt(2/pi) sin(n x), n >= 1.  A :class:`SineSeries`
stores coefficients a_n = <f, phi_n>, so the L2, H^1_0 and H^-1 norms are
weighted l2 norms with weights 1, n^2 and 1/n^2.

Closed-form integrands are handled by :class:`TrigPoly`, a finite sum of
terms Re(C x^p exp(i w x)).  Products, antiderivatives and definite
integrals of such sums are exact, which removes quadrature error from the
coupling integrals whenever the coupling q is a trigonometric polynomial.
The same code runs on floats or on mpmath numbers, selected through
:class:`PrecisionContext`.
"""

from __future__ import annotations

import cmath
import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import mpmath
import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InputError

__all__ = [
    "PrecisionContext",
    "SineSeries",
    "VectorField2",
    "SampledFunction",
    "TrigPoly",
    "Coupling",
    "QuadResult",
    "AccuracyWarning",
    "project",
    "inner",
    "quad_oscillatory",
    "gauss_legendre_panels",
]

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
ZERO_FREQ = 1e-9  # frequencies below this are snapped to exactly zero
_GL_ORDER = 8


class AccuracyWarning(UserWarning):
    """Quadrature could not reach the requested tolerance."""


# --------------------------------------------------------------------------
# precision plumbing
# --------------------------------------------------------------------------


class _FloatOps:
    name = "float"
    pi = math.pi
    sin = staticmethod(math.sin)
    cos = staticmethod(math.cos)
    exp = staticmethod(math.exp)
    log = staticmethod(math.log)
    sqrt = staticmethod(math.sqrt)
    real = staticmethod(float)
    cplx = staticmethod(complex)

    @staticmethod
    def expj(x):
        return cmath.exp(1j * x)

    @staticmethod
    def conj(z):
        return complex(z).conjugate()

    @staticmethod
    def re(z):
        return complex(z).real


class _MpOps:
    name = "mpmath"
    sin = staticmethod(mpmath.sin)
    cos = staticmethod(mpmath.cos)
    exp = staticmethod(mpmath.exp)
    log = staticmethod(mpmath.log)
    sqrt = staticmethod(mpmath.sqrt)
    real = staticmethod(mpmath.mpf)
    cplx = staticmethod(mpmath.mpc)
    expj = staticmethod(mpmath.expj)
    conj = staticmethod(mpmath.conj)
    re = staticmethod(mpmath.re)

    @property
    def pi(self):
        return +mpmath.mp.pi


FLOAT_OPS = _FloatOps()
MP_OPS = _MpOps()


@dataclass(frozen=True)
class PrecisionContext:
    """Numerical settings shared by every operation.

    Parameters
    ----------
    working_bits : int
        Mantissa bits.  53 selects IEEE doubles, anything larger selects
        mpmath arithmetic at that precision.
    quad_panels_per_period : int
        Minimum number of quadrature panels per oscillation of an integrand.
    N_max : int
        Sine-series cutoff for eigenfunctions and projections.
    tail_tolerance : float
        Absolute tolerance for quadrature error estimates and series tails.
    """

    working_bits: int = 53
    quad_panels_per_period: int = 8
    N_max: int = 64
    tail_tolerance: float = 1e-14

    def __post_init__(self):
        if int(self.working_bits) < 53:
            raise InputError("working_bits must be >= 53")
        if int(self.quad_panels_per_period) < 4:
            raise InputError("quad_panels_per_period must be >= 4")
        if int(self.N_max) < 1:
            raise InputError("N_max must be >= 1")
        if not (self.tail_tolerance > 0):
            raise InputError("tail_tolerance must be positive")

    @property
    def high(self) -> bool:
        return self.working_bits > 53

    @property
    def ops(self):
        return MP_OPS if self.high else FLOAT_OPS

    def workprec(self):
        """Context manager setting the mpmath precision to working_bits."""
        return mpmath.workprec(int(self.working_bits))

    def with_bits(self, bits: int) -> "PrecisionContext":
        return replace(self, working_bits=max(53, int(bits)))


# --------------------------------------------------------------------------
# sine series
# --------------------------------------------------------------------------


def _weights(space: str, N: int) -> np.ndarray:
    n = np.arange(1, N + 1, dtype=float)
    if space == "L2":
        return np.ones(N)
    if space == "H10":
        return n**2
    if space == "Hm1":
        return 1.0 / n**2
    raise InputError(f"unknown space {space!r}; expected L2, H10 or Hm1")


@dataclass(frozen=True)
class SineSeries:
    """Truncated expansion sum_n a_n phi_n with phi_n = sqrt(2/pi) sin(n x)."""

    coeffs: np.ndarray

    def __post_init__(self):
        a = np.array(self.coeffs, dtype=float).ravel()
        if a.size == 0:
            raise InputError("a sine series needs at least one coefficient")
        if not np.all(np.isfinite(a)):
            raise InputError("non-finite sine coefficients")
        a.setflags(write=False)
        object.__setattr__(self, "coeffs", a)

    @property
    def N(self) -> int:
        return self.coeffs.size

    @classmethod
    def zeros(cls, N: int) -> "SineSeries":
        return cls(np.zeros(N))

    @classmethod
    def mode(cls, n: int, N: int, amplitude: float = 1.0) -> "SineSeries":
        a = np.zeros(max(N, n))
        a[n - 1] = amplitude
        return cls(a)

    def padded(self, N: int) -> "SineSeries":
        """Zero-pad or truncate to exactly N coefficients."""
        a = np.zeros(N)
        m = min(N, self.N)
        a[:m] = self.coeffs[:m]
        return SineSeries(a)

    def norm(self, space: str = "L2") -> float:
        return float(np.sqrt(np.sum(_weights(space, self.N) * self.coeffs**2)))

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = np.arange(1, self.N + 1)
        return SQRT_2_OVER_PI * np.sin(np.multiply.outer(x, n)) @ self.coeffs

    def derivative_at_zero(self) -> float:
        """Term-by-term f'(0); converges slowly for non-smooth extensions."""
        n = np.arange(1, self.N + 1)
        return float(SQRT_2_OVER_PI * np.dot(n, self.coeffs))

    def second_derivative(self) -> "SineSeries":
        n = np.arange(1, self.N + 1)
        return SineSeries(-(n**2) * self.coeffs)

    def __add__(self, other: "SineSeries") -> "SineSeries":
        N = max(self.N, other.N)
        return SineSeries(self.padded(N).coeffs + other.padded(N).coeffs)

    def __sub__(self, other: "SineSeries") -> "SineSeries":
        return self + (-other)

    def __neg__(self) -> "SineSeries":
        return SineSeries(-self.coeffs)

    def __mul__(self, c: float) -> "SineSeries":
        return SineSeries(float(c) * self.coeffs)

    __rmul__ = __mul__


def inner(f: SineSeries, g: SineSeries, space: str = "L2") -> float:
    """Weighted inner product sum w_n a_n b_n; the shorter series is zero-padded."""
    N = max(f.N, g.N)
    a, b = f.padded(N).coeffs, g.padded(N).coeffs
    return float(np.sum(_weights(space, N) * a * b))


@dataclass(frozen=True)
class VectorField2:
    """Pair of sine series (first, second) sharing one cutoff."""

    first: SineSeries
    second: SineSeries

    def __post_init__(self):
        if self.first.N != self.second.N:
            raise InputError("both components must share the same cutoff N")

    @property
    def N(self) -> int:
        return self.first.N

    @classmethod
    def zeros(cls, N: int) -> "VectorField2":
        return cls(SineSeries.zeros(N), SineSeries.zeros(N))

    @classmethod
    def from_parts(cls, first, second) -> "VectorField2":
        """Build from two coefficient arrays or series of possibly different length."""
        f = first if isinstance(first, SineSeries) else SineSeries(first)
        s = second if isinstance(second, SineSeries) else SineSeries(second)
        N = max(f.N, s.N)
        return cls(f.padded(N), s.padded(N))

    @classmethod
    def from_array(cls, v) -> "VectorField2":
        v = np.asarray(v, dtype=float)
        if v.size % 2:
            raise InputError("stacked array must have even length")
        N = v.size // 2
        return cls(SineSeries(v[:N]), SineSeries(v[N:]))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.first.coeffs, self.second.coeffs])

    def padded(self, N: int) -> "VectorField2":
        return VectorField2(self.first.padded(N), self.second.padded(N))

    def norm(self, space: str = "L2") -> float:
        return math.hypot(self.first.norm(space), self.second.norm(space))

    def inner(self, other: "VectorField2", space: str = "L2") -> float:
        return inner(self.first, other.first, space) + inner(self.second, other.second, space)

    def pairing(self, other: "VectorField2") -> float:
        """H^-1 x H^1_0 duality pairing, i.e. the plain coefficient dot product."""
        return self.inner(other, "L2")

    def __add__(self, other: "VectorField2") -> "VectorField2":
        N = max(self.N, other.N)
        a, b = self.padded(N), other.padded(N)
        return VectorField2(a.first + b.first, a.second + b.second)

    def __sub__(self, other: "VectorField2") -> "VectorField2":
        return self + (-1.0) * other

    def __mul__(self, c: float) -> "VectorField2":
        return VectorField2(self.first * c, self.second * c)

    __rmul__ = __mul__


# --------------------------------------------------------------------------
# sampled functions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SampledFunction:
    """Values of a bounded function on a uniform grid of [0, pi]."""

    x: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).ravel()
        v = np.array(self.values, dtype=float).ravel()
        if x.size < 2 or x.size != v.size:
            raise InputError("need at least two samples with matching x and values")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise InputError("non-finite samples")
        if abs(x[0]) > 1e-12 or abs(x[-1] - math.pi) > 1e-9:
            raise InputError("grid endpoints must be 0 and pi")
        h = np.diff(x)
        if np.any(h <= 0):
            raise InputError("grid must be strictly ascending")
        if np.max(np.abs(h - h.mean())) > 1e-8 * max(1.0, h.mean()):
            raise InputError("grid must be uniform")
        x.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, f: Callable, n_points: int = 2049) -> "SampledFunction":
        x = np.linspace(0.0, math.pi, n_points)
        return cls(x, np.asarray(f(x), dtype=float) * np.ones_like(x))

    def interpolant(self) -> Callable:
        if self.x.size >= 4:
            return CubicSpline(self.x, self.values)
        return lambda t: np.interp(t, self.x, self.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    @classmethod
    def read_csv(cls, path) -> "SampledFunction":
        xs, vs = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["x", "value"]:
                raise InputError(f"{path}: expected header 'x,value'")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    xs.append(float(row[0]))
                    vs.append(float(row[1]))
                except (ValueError, IndexError) as exc:
                    raise InputError(f"{path}:{lineno}: bad row {row!r}") from exc
        return cls(np.array(xs), np.array(vs))

    def write_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "value"])
            for a, b in zip(self.x, self.values):
                w.writerow([repr(float(a)), repr(float(b))])


# --------------------------------------------------------------------------
# trigonometric polynomials with polynomial amplitudes
# --------------------------------------------------------------------------


def _freq_key(w) -> int:
    return int(round(float(w) * 1e9))


@dataclass(frozen=True)
class TrigPoly:
    """Finite sum of terms Re(C x^p exp(i w x)) with w >= 0.

    Parameters
    ----------
    terms : tuple of (C, w, p)
        Complex amplitude, non-negative frequency and polynomial degree.
    ops : arithmetic backend (float or mpmath)
    """

    terms: tuple = ()
    ops: object = field(default=FLOAT_OPS, compare=False)

    # constructors -----------------------------------------------------
    @classmethod
    def const(cls, c, ops=FLOAT_OPS) -> "TrigPoly":
        return cls(((ops.cplx(c), ops.real(0), 0),), ops)

    @classmethod
    def cos(cls, w, phase=0, amp=1, ops=FLOAT_OPS) -> "TrigPoly":
        """amp * cos(w x + phase)."""
        C = ops.cplx(amp) * ops.expj(ops.real(phase))
        return cls((), ops)._with([(C, ops.real(w), 0)])

    @classmethod
    def sin(cls, w, phase=0, amp=1, ops=FLOAT_OPS) -> "TrigPoly":
        """amp * sin(w x + phase) = amp * cos(w x + phase - pi/2)."""
        return cls.cos(w, ops.real(phase) - ops.pi / 2, amp, ops)

    def _with(self, raw: Iterable) -> "TrigPoly":
        ops = self.ops
        merged: dict = {}
        for C, w, p in raw:
            if w < 0:
                C, w = ops.conj(C), -w
            if abs(w) < ZERO_FREQ:
                w = ops.real(0)
                C = ops.cplx(ops.re(C))
            key = (int(p), _freq_key(w))
            if key in merged:
                C0, w0, p0 = merged[key]
                merged[key] = (C0 + C, w0, p0)
            else:
                merged[key] = (C, w, int(p))
        return TrigPoly(tuple(t for t in merged.values() if t[0] != 0), ops)

    # algebra ----------------------------------------------------------
    def __add__(self, other: "TrigPoly") -> "TrigPoly":
        return self._with(list(self.terms) + list(other.terms))

    def __sub__(self, other: "TrigPoly") -> "TrigPoly":
        return self + other.scale(-1)

    def scale(self, c) -> "TrigPoly":
        return TrigPoly(tuple((C * c, w, p) for C, w, p in self.terms), self.ops)

    def __mul__(self, other: "TrigPoly") -> "TrigPoly":
        if not isinstance(other, TrigPoly):
            return self.scale(other)
        ops = self.ops
        raw = []
        for A, a, p in self.terms:
            for B, b, q in other.terms:
                raw.append((A * B / 2, a + b, p + q))
                raw.append((A * ops.conj(B) / 2, a - b, p + q))
        return self._with(raw)

    __rmul__ = scale

    def antiderivative(self) -> "TrigPoly":
        """F(x) = integral_0^x f."""
        ops = self.ops
        raw = []
        const = ops.cplx(0)
        for C, w, p in self.terms:
            if w == 0:
                raw.append((ops.cplx(ops.re(C)) / (p + 1), w, p + 1))
                continue
            iw = ops.cplx(0, 1) * w
            fact = 1
            for j in range(p + 1):
                # (-1)^j p!/(p-j)! x^(p-j) / (i w)^(j+1)
                coef = C * ((-1) ** j) * fact / iw ** (j + 1)
                raw.append((coef, w, p - j))
                if j == p:
                    const -= coef
                fact *= p - j
        raw.append((const, ops.real(0), 0))
        return self._with(raw)

    def integral(self, a=0, b=None):
        """Exact definite integral over [a, b] (default [0, pi])."""
        ops = self.ops
        if b is None:
            b = ops.pi
        F = self.antiderivative()
        return F.value(b) - F.value(a)

    def value(self, x):
        """Scalar evaluation in the backend arithmetic."""
        ops = self.ops
        x = ops.real(x)
        s = ops.real(0)
        for C, w, p in self.terms:
            s += ops.re(C * ops.expj(w * x)) * x**p
        return s

    def __call__(self, x) -> np.ndarray:
        """Vectorized float evaluation."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for C, w, p in self.terms:
            out += np.real(complex(C) * np.exp(1j * float(w) * x)) * x**p
        return out

    def project(self, N: int) -> list:
        """Exact coefficients <f, phi_n>, n = 1..N, in the backend arithmetic."""
        ops = self.ops
        s2p = ops.sqrt(2 / ops.pi)
        pi = ops.pi
        out = []
        for n in range(1, N + 1):
            acc = ops.real(0)
            for C, w, p in self.terms:
                # f * sqrt(2/pi) sin(n x): product with Re(-i s e^{inx})
                for D, v in ((C * ops.cplx(0, -1) * s2p / 2, w + n), (C * ops.cplx(0, 1) * s2p / 2, w - n)):
                    acc += _term_integral(D, v, p, pi, ops)
            out.append(acc)
        return out

    def to_series(self, N: int) -> SineSeries:
        return SineSeries(np.array([float(c) for c in self.project(N)]))


def _term_integral(C, w, p, b, ops):
    """integral_0^b Re(C x^p e^{i w x}) dx for one term."""
    if w < 0:
        C, w = ops.conj(C), -w
    if abs(w) < ZERO_FREQ:
        return ops.re(C) * b ** (p + 1) / (p + 1)
    iw = ops.cplx(0, 1) * w
    e = ops.expj(w * b)
    total = ops.cplx(0)
    fact = 1
    for j in range(p + 1):
        coef = ((-1) ** j) * fact / iw ** (j + 1)
        total += coef * (e * b ** (p - j) - (1 if j == p else 0))
        fact *= p - j
    return ops.re(C * total)


# --------------------------------------------------------------------------
# coupling descriptor
# --------------------------------------------------------------------------


def _int_sin_cos(m: int, r: int, ops):
    """integral_0^pi sin(m x) cos(r x) dx for integers m >= 1, r."""
    r = abs(r)
    if m == r:
        return ops.real(0)
    if (m + r) % 2 == 0:
        return ops.real(0)
    return ops.real(2 * m) / (m * m - r * r)


def _int_cos_cos(m: int, r: int, ops):
    """integral_0^pi cos(m x) cos(r x) dx for integers m, r >= 0."""
    r = abs(r)
    if m != r:
        return ops.real(0)
    return ops.pi if m == 0 else ops.pi / 2


@dataclass(frozen=True)
class Coupling:
    """Coupling coefficient q(x) = sum_m a_m sin(m x) + sum_m b_m cos(m x).

    ``sin_coeffs[i]`` multiplies sin((i+1) x) and ``cos_coeffs[i]`` multiplies
    cos(i x).  Coefficients may be floats or mpmath numbers.
    """

    sin_coeffs: tuple = ()
    cos_coeffs: tuple = ()
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sin_coeffs", tuple(self.sin_coeffs))
        object.__setattr__(self, "cos_coeffs", tuple(self.cos_coeffs))
        for c in self.sin_coeffs + self.cos_coeffs:
            if not mpmath.isfinite(c):
                raise InputError("non-finite coupling coefficient")

    @classmethod
    def sine(cls, m: int = 1, amp: float = 1.0) -> "Coupling":
        a = [0.0] * m
        a[m - 1] = amp
        return cls(tuple(a), (), f"{amp}*sin({m}x)")

    @classmethod
    def constant(cls, c: float = 1.0) -> "Coupling":
        return cls((), (c,), f"{c}")

    @classmethod
    def zero(cls) -> "Coupling":
        return cls((), (), "0")

    @classmethod
    def from_samples(cls, f: SampledFunction, M: int, ctx: PrecisionContext | None = None) -> "Coupling":
        """Cosine series of the spline interpolant of sampled data (M+1 terms)."""
        ctx = ctx or PrecisionContext()
        g = f.interpolant()
        X, W = gauss_legendre_panels(0.0, math.pi, ctx.quad_panels_per_period * max(M, 1))
        gx = g(X)
        m = np.arange(0, M + 1)
        b = (2.0 / math.pi) * (np.cos(np.multiply.outer(m, X)) @ (W * gx))
        b[0] /= 2.0
        return cls((), tuple(float(c) for c in b), "samples")

    def is_zero(self) -> bool:
        return all(c == 0 for c in self.sin_coeffs + self.cos_coeffs)

    def sup_bound(self) -> float:
        return float(sum(abs(c) for c in self.sin_coeffs + self.cos_coeffs))

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for i, a in enumerate(self.sin_coeffs):
            out += float(a) * np.sin((i + 1) * x)
        for i, b in enumerate(self.cos_coeffs):
            out += float(b) * np.cos(i * x)
        return out

    def trig(self, ops=FLOAT_OPS) -> TrigPoly:
        out = TrigPoly((), ops)
        for i, a in enumerate(self.sin_coeffs):
            if a != 0:
                out = out + TrigPoly.sin(i + 1, 0, ops.real(a), ops)
        for i, b in enumerate(self.cos_coeffs):
            if b != 0:
                out = out + TrigPoly.cos(i, 0, ops.real(b), ops)
        return out

    def coeff(self, k: int, n: int, ops=FLOAT_OPS):
        """Exact <q phi_k, phi_n> = (2/pi) int q sin(kx) sin(nx) (integer arithmetic)."""
        acc = ops.real(0)
        d, s = k - n, k + n
        for i, a in enumerate(self.sin_coeffs):
            if a != 0:
                m = i + 1
                acc += ops.real(a) * (_int_sin_cos(m, d, ops) - _int_sin_cos(m, s, ops)) / 2
        for m, b in enumerate(self.cos_coeffs):
            if b != 0:
                acc += ops.real(b) * (_int_cos_cos(m, d, ops) - _int_cos_cos(m, s, ops)) / 2
        return acc * 2 / ops.pi

    def matrix(self, N: int, K: int | None = None) -> np.ndarray:
        """Float matrix Q[n-1, k-1] = <q phi_k, phi_n>, n <= N, k <= K."""
        K = N if K is None else K
        n = np.arange(1, N + 1)[:, None]
        k = np.arange(1, K + 1)[None, :]
        d, s = np.abs(k - n), k + n
        Q = np.zeros((N, K))
        for i, a in enumerate(self.sin_coeffs):
            if a == 0:
                continue
            m = i + 1
            Q += float(a) * (_vec_sin_cos(m, d) - _vec_sin_cos(m, s)) / 2
        for m, b in enumerate(self.cos_coeffs):
            if b == 0:
                continue
            Q += float(b) * (_vec_cos_cos(m, d) - _vec_cos_cos(m, s)) / 2
        return Q * 2 / math.pi

    def to_json(self) -> dict:
        return {
            "sin_coeffs": [str(c) if not isinstance(c, float) else c for c in self.sin_coeffs],
            "cos_coeffs": [str(c) if not isinstance(c, float) else c for c in self.cos_coeffs],
            "label": self.label,
        }


def _vec_sin_cos(m: int, r: np.ndarray) -> np.ndarray:
    r = np.abs(r)
    out = np.zeros(r.shape)
    mask = (r != m) & ((m + r) % 2 == 1)
    out[mask] = 2.0 * m / (m * m - r[mask].astype(float) ** 2)
    return out


def _vec_cos_cos(m: int, r: np.ndarray) -> np.ndarray:
    r = np.abs(r)
    return np.where(r == m, math.pi if m == 0 else math.pi / 2, 0.0)


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------


def gauss_legendre_panels(a: float, b: float, panels: int, order: int = _GL_ORDER):
    """Nodes and weights of composite Gauss-Legendre quadrature on [a, b]."""
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, int(panels) + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    X = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    W = (half[:, None] * w[None, :]).ravel()
    return X, W


@dataclass(frozen=True)
class QuadResult:
    """Quadrature value with an a posteriori error estimate."""

    value: float
    error: float
    converged: bool
    panels: int


def _as_callable(factor) -> Callable:
    if isinstance(factor, SineSeries):
        return factor.evaluate
    if isinstance(factor, SampledFunction):
        return factor.interpolant()
    if isinstance(factor, (TrigPoly, Coupling)):
        return factor.evaluate if isinstance(factor, Coupling) else factor
    if callable(factor):
        return factor
    raise InputError(f"unsupported factor type {type(factor).__name__}")


def quad_oscillatory(
    factor,
    omega: float,
    ctx: PrecisionContext | None = None,
    phase: float = 0.0,
    kind: str = "sin",
    a: float = 0.0,
    b: float = math.pi,
    max_doublings: int = 10,
) -> QuadResult:
    """Integrate factor(x) * trig(omega x + phase) over [a, b].

    Composite Gauss-Legendre with at least ``quad_panels_per_period`` panels
    per oscillation.  The error estimate is the difference between P and 2P
    panels; P is doubled until the estimate is below ``tail_tolerance`` or the
    cap is reached, in which case an :class:`AccuracyWarning` is issued.
    """
    ctx = ctx or PrecisionContext()
    if kind not in ("sin", "cos"):
        raise InputError("kind must be 'sin' or 'cos'")
    if isinstance(factor, TrigPoly):
        ops = factor.ops
        trig = TrigPoly.cos(omega, phase if kind == "cos" else ops.real(phase) - ops.pi / 2, 1, ops)
        return QuadResult((factor * trig).integral(a, b), 0.0, True, 0)
    f = _as_callable(factor)
    extra = factor.N if isinstance(factor, SineSeries) else 0
    periods = max(1.0, (abs(float(omega)) + extra) * (b - a) / (2 * math.pi))
    P = int(ctx.quad_panels_per_period * math.ceil(periods))
    trig = np.sin if kind == "sin" else np.cos

    if ctx.high:
        with ctx.workprec():
            g = lambda x: mpmath.mpf(float(f(np.array([float(x)]))[0])) * (
                mpmath.sin(omega * x + phase) if kind == "sin" else mpmath.cos(omega * x + phase)
            )
            pts = mpmath.linspace(a, b, P + 1)
            val, err = mpmath.quad(g, pts, method="gauss-legendre", error=True)
            return QuadResult(val, float(err), float(err) <= ctx.tail_tolerance, P)

    def rule(panels):
        X, W = gauss_legendre_panels(a, b, panels)
        y = np.asarray(f(X), dtype=float) * trig(omega * X + phase)
        if not np.all(np.isfinite(y)):
            raise InputError("non-finite integrand values")
        return float(np.dot(W, y))

    q1 = rule(P)
    for _ in range(max_doublings + 1):
        q2 = rule(2 * P)
        err = abs(q2 - q1)
        if err <= ctx.tail_tolerance:
            return QuadResult(q2, err, True, 2 * P)
        P *= 2
        q1 = q2
    warnings.warn(f"quadrature error {err:.3e} above tolerance {ctx.tail_tolerance:.1e}", AccuracyWarning)
    return QuadResult(q2, err, False, P)


def quad_error_estimate(factor, omega: float, ctx: PrecisionContext, phase: float = 0.0, kind: str = "sin") -> float:
    """Error estimate |Q(2P) - Q(P)| at the panel count implied by ctx, without doubling."""
    f = _as_callable(factor)
    P = int(ctx.quad_panels_per_period * math.ceil(max(1.0, abs(omega) / 2)))
    trig = np.sin if kind == "sin" else np.cos
    vals = []
    for panels in (P, 2 * P):
        X, W = gauss_legendre_panels(0.0, math.pi, panels)
        vals.append(float(np.dot(W, f(X) * trig(omega * X + phase))))
    return abs(vals[1] - vals[0])


def project(f, N: int, ctx: PrecisionContext | None = None) -> SineSeries:
    """Sine coefficients <f, phi_n>, n = 1..N.

    ``f`` may be a :class:`TrigPoly` (exact), a :class:`SineSeries`
    (truncated or padded), a :class:`SampledFunction` (cubic spline) or a
    vectorized callable.  Numerical paths use composite Gauss-Legendre with
    ``quad_panels_per_period`` panels per oscillation of sin(N x).
    """
    ctx = ctx or PrecisionContext()
    if isinstance(f, TrigPoly):
        return f.to_series(N)
    if isinstance(f, SineSeries):
        return f.padded(N)
    g = _as_callable(f)
    panels = ctx.quad_panels_per_period * max(1, N)
    X, W = gauss_legendre_panels(0.0, math.pi, panels)
    gx = np.asarray(g(X), dtype=float) * np.ones_like(X)
    if not np.all(np.isfinite(gx)):
        raise InputError("non-finite function values")
    n = np.arange(1, N + 1)
    return SineSeries(SQRT_2_OVER_PI * (np.sin(np.multiply.outer(n, X)) @ (W * gx)))


def phi(n: int) -> TrigPoly:
    """Exact phi_n as a TrigPoly (float backend)."""
    return TrigPoly.sin(n, 0, SQRT_2_OVER_PI)


def sequence_to_series(values: Sequence) -> SineSeries:
    return SineSeries(np.array([float(v) for v in values]))
