"""Spectrum and eigenfunctions of the adjoint operator.

The adjoint operator acts on pairs (theta_1, theta_2) by

    L* theta = (-theta_1'', -nu theta_2'' + q theta_1)

with Dirichlet conditions on (0, pi).  Its spectrum is {k^2} U {nu k^2}.
The slow branch has eigenfunctions Phi_2,k = (0, phi_k).  The fast branch
has Phi_1,k = (phi_k, psi_k), where psi_k solves

    nu psi'' + k^2 psi = q phi_k,   psi(0) = psi(pi) = 0.

When sqrt(nu) = i0/j0 is rational, the eigenvalues zeta = i0^2 l^2 are
shared by both branches.  They either carry a Jordan chain (the
generalized eigenfunction Phi_hat) or are geometrically double, depending
on whether the coupling integral I(zeta) vanishes.

Three independent routes to psi_k are provided: the closed form (exact
trigonometric algebra), the eigenfunction series, and an ODE shooting
oracle.  Boundary observations B* D d/dx Phi(0) = nu theta_2'(0) always
come from the closed-form constants and never from differentiating a
truncated series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import mpmath
import numpy as np
from scipy.integrate import solve_ivp

from . import _io
from .errors import DomainError, InputError, NormalizationError, PrecisionEscalation
from .fnspace import (
    FLOAT_OPS,
    MP_OPS,
    SQRT_2_OVER_PI,
    Coupling,
    PrecisionContext,
    SineSeries,
    TrigPoly,
    VectorField2,
    gauss_legendre_panels,
)

__all__ = [
    "NuValue",
    "ProblemData",
    "EigenPair",
    "IndexMaps",
    "SpectrumTable",
    "spectrum",
    "psi_closed_form",
    "psi_series",
    "psi_tilde",
    "psi_hat",
    "coupling_integral",
    "index_maps",
    "observation",
    "normalize_by_observation",
    "approx_controllability_check",
    "ode_oracle_psi",
    "apply_adjoint",
    "eigen_residual",
    "chain_residual",
]


# --------------------------------------------------------------------------
# nu
# --------------------------------------------------------------------------


def _isqrt_exact(n: int) -> Optional[int]:
    if n < 0:
        return None
    r = math.isqrt(n)
    return r if r * r == n else None


@dataclass(frozen=True)
class NuValue:
    """Diffusion ratio nu with sqrt(nu) stored exactly or to certified precision.

    Kinds
    -----
    rational
        sqrt(nu) = i0/j0 with coprime positive integers.
    real
        nu given as a decimal string; sqrt(nu) is evaluated at any requested
        precision with error bound 2^-bits.
    liouville
        sqrt(nu) = kP/jP + eta with eta = sign * 2^-E, built by
        :func:`nullctl.condensation.liouville_nu`.  Gaps m sqrt(nu) - n are
        computed from exact integer arithmetic plus m * eta.
    """

    kind: str
    i0: int = 0
    j0: int = 0
    text: str = ""
    kP: int = 0
    jP: int = 0
    eta_exp: int = 0
    eta_sign: int = 1

    def __post_init__(self):
        if self.kind == "rational":
            if self.i0 < 1 or self.j0 < 1 or math.gcd(self.i0, self.j0) != 1:
                raise InputError("rational sqrt(nu) needs coprime positive i0, j0")
        elif self.kind == "real":
            try:
                v = Fraction(self.text)
            except (ValueError, ZeroDivisionError) as exc:
                raise InputError(f"bad decimal nu {self.text!r}") from exc
            if v <= 0:
                raise InputError("nu must be positive")
        elif self.kind == "liouville":
            if self.kP < 1 or self.jP < 1:
                raise InputError("liouville nu needs positive kP, jP")
        else:
            raise InputError(f"unknown nu kind {self.kind!r}")

    # constructors -----------------------------------------------------
    @classmethod
    def rational(cls, i0: int, j0: int = 1) -> "NuValue":
        g = math.gcd(i0, j0)
        return cls("rational", i0=i0 // g, j0=j0 // g)

    @classmethod
    def from_decimal(cls, text) -> "NuValue":
        """nu from a decimal string; exact squares of rationals become rational."""
        v = Fraction(str(text))
        a, b = _isqrt_exact(v.numerator), _isqrt_exact(v.denominator)
        if a is not None and b is not None and v > 0:
            return cls.rational(a, b)
        return cls("real", text=str(text))

    @classmethod
    def liouville(cls, kP: int, jP: int, eta_exp: int, eta_sign: int = 1) -> "NuValue":
        return cls("liouville", kP=kP, jP=jP, eta_exp=eta_exp, eta_sign=eta_sign)

    # values -----------------------------------------------------------
    @property
    def is_rational(self) -> bool:
        return self.kind == "rational"

    def sqrt_nu(self, bits: int = 53):
        """sqrt(nu) as mpf at the given precision."""
        with mpmath.workprec(bits + 10):
            if self.kind == "rational":
                r = mpmath.mpf(self.i0) / self.j0
            elif self.kind == "real":
                f = Fraction(self.text)
                r = mpmath.sqrt(mpmath.mpf(f.numerator) / f.denominator)
            else:
                r = mpmath.mpf(self.kP) / self.jP + self.eta_sign * mpmath.ldexp(1, -self.eta_exp)
        with mpmath.workprec(bits):
            return +r

    def nu_value(self, bits: int = 53):
        with mpmath.workprec(bits + 10):
            if self.kind == "real":
                f = Fraction(self.text)
                v = mpmath.mpf(f.numerator) / f.denominator
            else:
                v = self.sqrt_nu(bits + 10) ** 2
        with mpmath.workprec(bits):
            return +v

    @property
    def nu(self) -> float:
        return float(self.nu_value(64))

    @property
    def sqrt(self) -> float:
        return float(self.sqrt_nu(64))

    def error_bound(self, bits: int = 53):
        """Bound on |stored sqrt(nu) - true sqrt(nu)|."""
        if self.kind == "real":
            return mpmath.ldexp(1, -bits)
        return mpmath.mpf(0)

    @property
    def regime(self) -> str:
        if self.is_rational:
            return "rational"
        return "irrational_gt1" if self.sqrt_nu(64) > 1 else "irrational_lt1"

    def lattice(self, m: int, n: int, bits: int = 53):
        """m sqrt(nu) - n, accurate to relative precision 2^-bits.

        For rational and Liouville kinds the leading part is exact integer
        arithmetic, so no cancellation occurs even when the gap is tiny.
        """
        with mpmath.workprec(bits + 20):
            if self.kind == "rational":
                r = mpmath.mpf(m * self.i0 - n * self.j0) / self.j0
            elif self.kind == "liouville":
                r = mpmath.mpf(m * self.kP - n * self.jP) / self.jP
                r += m * self.eta_sign * mpmath.ldexp(1, -self.eta_exp)
            else:
                extra = int(mpmath.log(abs(m) + abs(n) + 2, 2)) + 2
                with mpmath.workprec(bits + 20 + extra):
                    r = m * self.sqrt_nu(bits + 20 + extra) - n
        with mpmath.workprec(bits):
            return +r

    def sq_gap(self, a: int, b: int, bits: int = 53):
        """a^2 - nu b^2 computed as -(b sqrt(nu) - a)(b sqrt(nu) + a)."""
        with mpmath.workprec(bits + 20):
            r = -self.lattice(b, a, bits + 20) * (b * self.sqrt_nu(bits + 20) + a)
        with mpmath.workprec(bits):
            return +r

    def sin_pi_over_sqrt(self, k: int, bits: int = 53):
        """sin(k pi / sqrt(nu)) without cancellation near multiples of pi."""
        extra = int(k).bit_length() + 20
        with mpmath.workprec(bits + extra):
            s = self.sqrt_nu(bits + extra)
            n = int(mpmath.nint(mpmath.mpf(k) / s))
            # k/sqrt(nu) - n = (k - n sqrt(nu)) / sqrt(nu)
            delta = -self.lattice(n, k, bits + 20) / s
            r = (-1) ** (n % 2) * mpmath.sin(mpmath.pi * delta)
        with mpmath.workprec(bits):
            return +r

    def nearest(self, k: int, inverse: bool = False, bits: int = 64) -> int:
        """Nearest integer to sqrt(nu) k (or k / sqrt(nu) when inverse)."""
        extra = int(k).bit_length() + 40
        with mpmath.workprec(bits + extra):
            s = self.sqrt_nu(bits + extra)
            x = k / s if inverse else k * s
            m = int(mpmath.nint(x))
            frac = abs(x - m)
        if abs(frac - 0.5) < mpmath.ldexp(1, -bits + 8):
            if self.is_rational:
                return m
            raise PrecisionEscalation(2 * bits, f"nearest-integer tie at k={k}")
        return m

    def to_json(self) -> dict:
        if self.kind == "rational":
            return {"rational": [self.i0, self.j0]}
        if self.kind == "real":
            return {"real": self.text}
        return {"liouville_exact": {"kP": str(self.kP), "jP": str(self.jP),
                                    "eta_exp": str(self.eta_exp), "eta_sign": self.eta_sign}}


# --------------------------------------------------------------------------
# problem data and eigenpairs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemData:
    """The pair (nu, q) with truncation order K and numerical settings."""

    nu: NuValue
    q: Coupling
    K: int = 8
    ctx: PrecisionContext = field(default_factory=PrecisionContext)

    def __post_init__(self):
        if self.K < 1:
            raise InputError("K must be >= 1")

    @property
    def N(self) -> int:
        """Sine cutoff used for eigenfunctions (at least K)."""
        return max(self.ctx.N_max, self.K)

    @property
    def ops(self):
        return self.ctx.ops


@dataclass(frozen=True)
class EigenPair:
    """One point of the adjoint spectrum with its (generalized) eigenvectors.

    ``observation`` is B* D d/dx of ``eigfn`` at x = 0.  For a Jordan chain
    ``generalized_partner`` is Phi_hat and ``partner_observation`` its
    observation; for a double eigenvalue the partner is the second true
    eigenfunction.
    """

    lam: float
    branch: str
    k: int
    tag: str
    classification: str
    eigfn: VectorField2
    observation: object
    coupling_integral: object = None
    psi_prime_zero: object = None
    generalized_partner: Optional[VectorField2] = None
    partner_observation: object = None
    alpha_l: Optional[float] = None
    chain_constant: object = None
    lam_exact: object = None

    @property
    def double_flag(self) -> bool:
        return self.classification == "double"


@dataclass(frozen=True)
class IndexMaps:
    """Nearest-integer maps k -> i_k, k -> j_k and the complements of their images."""

    i_k: np.ndarray
    j_k: np.ndarray
    i_hat: tuple
    j_hat: tuple
    K_range: int


@dataclass(frozen=True)
class SpectrumTable:
    """Eigenpairs sorted by eigenvalue; complete only below min(K^2, nu K^2)."""

    entries: tuple
    regime: str
    complete_below: float

    def by_tag(self, tag: str) -> list:
        return [e for e in self.entries if e.tag == tag]

    def eigenvalues(self) -> np.ndarray:
        return np.array([e.lam for e in self.entries])

    def rows(self) -> list:
        return [
            (e.lam, e.branch, e.k, e.tag, e.observation, e.coupling_integral, int(e.double_flag))
            for e in self.entries
        ]

    CSV_HEADER = ("lambda", "branch", "k", "Lambda_tag", "observation", "coupling_integral", "double_flag")

    def write_csv(self, path):
        return _io.write_csv(path, self.CSV_HEADER, self.rows())


# --------------------------------------------------------------------------
# psi_k: closed form, series, ODE oracle
# --------------------------------------------------------------------------


def _phi_trig(n: int, ops) -> TrigPoly:
    return TrigPoly.sin(n, 0, ops.sqrt(2 / ops.pi), ops)


def _duhamel(f: TrigPoly, w, ops) -> TrigPoly:
    """x -> integral_0^x sin(w (x - xi)) f(xi) dxi."""
    c = TrigPoly.cos(w, 0, 1, ops)
    s = TrigPoly.sin(w, 0, 1, ops)
    G1 = (c * f).antiderivative()
    G2 = (s * f).antiderivative()
    return s * G1 - c * G2


def _coupling_integral_raw(p: ProblemData, k: int, ops):
    """I_k = integral q(s) sin(k s) sin(k (pi - s)/sqrt(nu)) ds (backend numbers)."""
    w = ops.real(k) / ops.real(p.nu.sqrt_nu(p.ctx.working_bits)) if ops is MP_OPS else k / p.nu.sqrt
    q = p.q.trig(ops)
    trig = TrigPoly.sin(k, 0, 1, ops) * TrigPoly.sin(-w, w * ops.pi, 1, ops)
    return (q * trig).integral()


def _roundoff_floor(p: ProblemData) -> float:
    """Absolute error scale of exact-algebra integrals at the working precision."""
    return 1e3 * 2.0 ** (-p.ctx.working_bits) * max(1.0, p.q.sup_bound()) * math.pi


def _check_sin(p: ProblemData, k: int, s):
    floor = 2.0 ** (-(p.ctx.working_bits - 30))
    if abs(s) < floor:
        need = int(p.ctx.working_bits + 30 - math.log2(float(abs(s))) if s != 0 else 4 * p.ctx.working_bits)
        raise PrecisionEscalation(need, f"|sin(k pi/sqrt(nu))| = {mpmath.nstr(s, 5)} at k={k}")


def _closed_form(p: ProblemData, k: int):
    """Exact closed-form psi_k coefficients, psi_k'(0) and I_k (backend numbers)."""
    ops = p.ops
    bits = p.ctx.working_bits
    if ops is MP_OPS:
        sq = p.nu.sqrt_nu(bits)
        nu = p.nu.nu_value(bits)
    else:
        sq, nu = p.nu.sqrt, p.nu.nu
    sinv = p.nu.sin_pi_over_sqrt(k, bits)
    _check_sin(p, k, sinv)
    sinv = ops.real(sinv)
    w = ops.real(k) / sq
    f = p.q.trig(ops) * _phi_trig(k, ops)
    # psi'(0) = -int q phi_k sin(w (pi - s)) ds / (nu sin(w pi))
    num = (f * TrigPoly.sin(-w, w * ops.pi, 1, ops)).integral()
    a = -num / (nu * sinv)
    psi = TrigPoly.sin(w, 0, a / w, ops) + _duhamel(f, w, ops).scale(1 / (nu * w))
    coeffs = psi.project(p.N)
    Ik = num * ops.sqrt(ops.pi / 2)
    return coeffs, a, Ik, psi


def psi_closed_form(p: ProblemData, k: int):
    """Closed-form psi_k projected on N modes, with psi_k'(0).

    Returns
    -------
    psi : SineSeries
    psi_prime_zero : float or mpf
        -int q phi_k sin(k (pi - s)/sqrt(nu)) ds / (nu sin(k pi/sqrt(nu))).

    Raises
    ------
    DomainError
        In the rational regime when k is a multiple of i0.
    PrecisionEscalation
        When sin(k pi / sqrt(nu)) is below the precision floor.
    """
    if p.nu.is_rational and k % p.nu.i0 == 0:
        raise DomainError(f"k={k} is a multiple of i0={p.nu.i0}: no simple fast eigenfunction")
    with p.ctx.workprec():
        coeffs, a, _, _ = _closed_form(p, k)
    return SineSeries(np.array([float(c) for c in coeffs])), a


def psi_series(p: ProblemData, k: int, return_tail: bool = False):
    """Series psi_k = sum_n <q phi_k, phi_n>/(k^2 - nu n^2) phi_n up to N.

    With ``return_tail`` also returns an H^1_0 bound on the omitted tail,
    sup_{n>N} n/|nu n^2 - k^2| * ||q||_inf.
    """
    N = p.N
    n = np.arange(1, N + 1)
    c = p.q.matrix(N, k)[:, k - 1]
    denom = k * k - p.nu.nu * n.astype(float) ** 2
    if p.nu.is_rational:
        bad = np.array([(k * p.nu.j0) == (m * p.nu.i0) for m in n])
    else:
        bad = np.zeros(N, bool)
    if np.any(bad & (c != 0)):
        raise DomainError(f"k^2 = nu n^2 at k={k}: series undefined")
    b = np.where(bad, 0.0, c / np.where(bad, 1.0, denom))
    out = SineSeries(b)
    if not return_tail:
        return out
    m = np.arange(N + 1, 4 * N + 8)
    g = m / np.abs(p.nu.nu * m.astype(float) ** 2 - k * k)
    tail = float(np.max(g)) * p.q.sup_bound()
    return out, tail


def ode_oracle_psi(p: ProblemData, k: int, rtol: float = 1e-12, atol: float = 1e-14):
    """Independent psi_k by shooting on nu y'' + k^2 y = q phi_k.

    Solves the two initial value problems y(0)=0, y'(0) in {0, 1} with an
    8th-order Runge-Kutta method, combines them so that y(pi) = 0 and
    projects the dense output on N sine modes by Gauss-Legendre quadrature.

    Returns
    -------
    psi : SineSeries
    slope : float
        The shooting slope, an independent estimate of psi_k'(0).
    """
    nu = p.nu.nu
    qf = p.q.evaluate

    def rhs(x, y, inhom):
        src = qf(np.array([x]))[0] * SQRT_2_OVER_PI * math.sin(k * x) if inhom else 0.0
        return [y[1], (src - k * k * y[0]) / nu]

    kw = dict(method="DOP853", rtol=rtol, atol=atol, dense_output=True)
    sp = solve_ivp(rhs, (0.0, math.pi), [0.0, 0.0], args=(True,), **kw)
    sh = solve_ivp(rhs, (0.0, math.pi), [0.0, 1.0], args=(False,), **kw)
    yp_end, yh_end = sp.y[0, -1], sh.y[0, -1]
    if abs(yh_end) < 1e-13:
        raise PrecisionEscalation(106, f"shooting singular at k={k}")
    s = -yp_end / yh_end
    N = p.N
    X, W = gauss_legendre_panels(0.0, math.pi, p.ctx.quad_panels_per_period * N)
    y = sp.sol(X)[0] + s * sh.sol(X)[0]
    n = np.arange(1, N + 1)
    coeffs = SQRT_2_OVER_PI * (np.sin(np.multiply.outer(n, X)) @ (W * y))
    return SineSeries(coeffs), float(s)


# --------------------------------------------------------------------------
# rational regime
# --------------------------------------------------------------------------


def coupling_integral(p: ProblemData, zeta) -> tuple:
    """I(zeta) = int q(s) phi_sqrt(zeta)(s) sqrt(pi/2) sin(sqrt(zeta/nu)(pi - s)) ds.

    Evaluated by exact trigonometric algebra in the working precision.

    Returns
    -------
    value, error_estimate
    """
    if not p.nu.is_rational:
        raise DomainError("coupling_integral is defined in the rational regime")
    k = math.isqrt(int(round(float(zeta))))
    if k < 1 or abs(float(zeta) - k * k) > 1e-9 * max(1.0, float(zeta)):
        raise DomainError(f"zeta={zeta} is not in Lambda_2 U Lambda_3 (not a square)")
    with p.ctx.workprec():
        val = _coupling_integral_raw(p, k, p.ops)
    return val, _roundoff_floor(p)


def psi_tilde(p: ProblemData, k: int):
    """Fast eigenfunction component for k not in i0 N (rational regime).

    Returns (series psi_tilde_k, psi_tilde_k'(0), I(k^2)).
    """
    if not p.nu.is_rational:
        raise DomainError("psi_tilde is defined in the rational regime")
    if k % p.nu.i0 == 0:
        raise DomainError(f"k={k} is a multiple of i0={p.nu.i0}")
    with p.ctx.workprec():
        coeffs, a, Ik, _ = _closed_form(p, k)
    return SineSeries(np.array([float(c) for c in coeffs])), a, Ik


@dataclass(frozen=True)
class ChainData:
    """Generalized eigenvector data at zeta = i0^2 l^2.

    ``psi_hat`` solves -nu psi'' - zeta psi = m phi_n - q phi_k with
    <psi_hat, phi_n> = 0 (k = i0 l, n = j0 l, m = <q phi_k, phi_n>), and
    ``psi_hat = alpha phi_n + beta`` with beta(0) = beta'(0) = 0.
    """

    l: int
    k: int
    n: int
    m: object
    I: object
    alpha: object
    beta: SineSeries
    psi_hat: SineSeries
    beta_prime_zero: float
    beta_end: float
    psi_hat_prime_zero: object


def psi_hat(p: ProblemData, l: int) -> ChainData:
    """Generalized eigenfunction component at zeta = i0^2 l^2 (rational regime)."""
    if not p.nu.is_rational:
        raise DomainError("psi_hat is defined in the rational regime")
    if l < 1:
        raise DomainError("l must be >= 1")
    i0, j0 = p.nu.i0, p.nu.j0
    k, n = i0 * l, j0 * l
    ops = p.ops
    with p.ctx.workprec():
        nu = ops.real(p.nu.nu_value(p.ctx.working_bits)) if ops is MP_OPS else p.nu.nu
        m = p.q.coeff(k, n, ops)
        I = _coupling_integral_raw(p, k, ops)
        f = _phi_trig(n, ops).scale(m) - p.q.trig(ops) * _phi_trig(k, ops)
        beta = _duhamel(f, ops.real(n), ops).scale(-1 / (nu * n))
        bco = beta.project(p.N)
        alpha = -bco[n - 1] if n <= p.N else -(beta * _phi_trig(n, ops)).integral()
        beta_end = beta.value(ops.pi)
        beta_p0 = _duhamel_derivative_at_zero()
        hat = [c for c in bco]
        if n <= p.N:
            hat[n - 1] = hat[n - 1] + alpha
        psi_p0 = alpha * n * ops.sqrt(2 / ops.pi)
    return ChainData(
        l=l, k=k, n=n, m=m, I=I, alpha=alpha,
        beta=SineSeries(np.array([float(c) for c in bco])),
        psi_hat=SineSeries(np.array([float(c) for c in hat])),
        beta_prime_zero=beta_p0, beta_end=float(beta_end), psi_hat_prime_zero=psi_p0,
    )


def _duhamel_derivative_at_zero() -> float:
    # d/dx int_0^x sin(w(x - xi)) f dxi = int_0^x w cos(w(x - xi)) f dxi, zero at x = 0
    return 0.0


# --------------------------------------------------------------------------
# index maps
# --------------------------------------------------------------------------


def index_maps(nu: NuValue, K_range: int) -> IndexMaps:
    """i_k = nint(sqrt(nu) k), j_k = nint(k / sqrt(nu)) and the complements of their images in 1..K_range."""
    if nu.is_rational:
        raise DomainError("index maps are defined in the irrational regime")
    ks = range(1, K_range + 1)
    i_k = np.array([nu.nearest(k) for k in ks], dtype=np.int64)
    j_k = np.array([nu.nearest(k, inverse=True) for k in ks], dtype=np.int64)
    i_hat = tuple(m for m in ks if m not in set(i_k.tolist()))
    j_hat = tuple(m for m in ks if m not in set(j_k.tolist()))
    gt1 = nu.sqrt > 1
    if gt1 and len(set(i_k.tolist())) != len(i_k):
        raise AssertionError("k -> i_k must be injective when sqrt(nu) > 1")
    if not gt1 and len(set(j_k.tolist())) != len(j_k):
        raise AssertionError("k -> j_k must be injective when sqrt(nu) < 1")
    return IndexMaps(i_k, j_k, i_hat, j_hat, K_range)


# --------------------------------------------------------------------------
# spectrum
# --------------------------------------------------------------------------


def _as_float(x):
    return None if x is None else float(x) if float(x) != 0 or x == 0 else x


def _vf(first: SineSeries, second: SineSeries, N: int) -> VectorField2:
    return VectorField2(first.padded(N), second.padded(N))


def _slow_pair(p: ProblemData, k: int, tag: str, lam_exact) -> EigenPair:
    N = p.N
    ops = p.ops
    obs = p.nu.nu * k * SQRT_2_OVER_PI
    return EigenPair(
        lam=float(lam_exact), branch="slow", k=k, tag=tag, classification="simple",
        eigfn=_vf(SineSeries.zeros(N), SineSeries.mode(k, N), N), observation=obs,
        lam_exact=lam_exact,
    )


def _fast_pair(p: ProblemData, k: int, tag: str) -> EigenPair:
    N = p.N
    with p.ctx.workprec():
        coeffs, a, Ik, _ = _closed_form(p, k)
        nu = p.nu.nu_value(p.ctx.working_bits) if p.ctx.high else p.nu.nu
        obs = nu * a
    psi = SineSeries(np.array([float(c) for c in coeffs]))
    return EigenPair(
        lam=float(k * k), branch="fast", k=k, tag=tag, classification="simple",
        eigfn=_vf(SineSeries.mode(k, N), psi, N), observation=obs,
        coupling_integral=Ik, psi_prime_zero=a, lam_exact=k * k,
    )


def _chain_pair(p: ProblemData, l: int) -> EigenPair:
    N = p.N
    ch = psi_hat(p, l)
    n = ch.n
    slow = _slow_pair(p, n, "L3", p.nu.i0**2 * l * l)
    floor = _roundoff_floor(p)
    if abs(ch.I) <= 10 * floor:
        partner = _vf(SineSeries.mode(ch.k, N), ch.psi_hat, N)
        with p.ctx.workprec():
            pobs = p.nu.nu * ch.psi_hat_prime_zero
        return EigenPair(
            lam=slow.lam, branch="slow", k=n, tag="L3", classification="double",
            eigfn=slow.eigfn, observation=slow.observation, coupling_integral=ch.I,
            generalized_partner=partner, partner_observation=pobs, alpha_l=ch.alpha,
            chain_constant=ch.m, lam_exact=slow.lam_exact,
        )
    with p.ctx.workprec():
        scale = ch.I / ch.m
        pobs = p.nu.nu * ch.psi_hat_prime_zero * scale
    partner = _vf(SineSeries.mode(ch.k, N), ch.psi_hat, N) * float(scale)
    return EigenPair(
        lam=slow.lam, branch="slow", k=n, tag="L3", classification="generalized-chain",
        eigfn=slow.eigfn, observation=slow.observation, coupling_integral=ch.I,
        generalized_partner=partner, partner_observation=pobs, alpha_l=ch.alpha,
        chain_constant=ch.m, lam_exact=slow.lam_exact,
    )


def spectrum(p: ProblemData) -> SpectrumTable:
    """All eigenpairs with fast index k <= K and slow index k <= K.

    Rational regime: eigenvalues are tagged L1 (nu j^2, j not in j0 N),
    L2 (k^2, k not in i0 N) or L3 (i0^2 l^2, shared by both branches).
    An L3 entry stores Phi_2,j0l as ``eigfn`` and the chain vector (or the
    second eigenfunction when I vanishes) as ``generalized_partner``.
    """
    K = p.K
    entries = []
    if p.nu.is_rational:
        i0, j0 = p.nu.i0, p.nu.j0
        nu_f = Fraction(i0 * i0, j0 * j0)
        seen = set()
        for k in range(1, K + 1):
            if k % i0:
                entries.append(_fast_pair(p, k, "L2"))
        for j in range(1, K + 1):
            if j % j0:
                lam = nu_f * j * j
                entries.append(_slow_pair(p, j, "L1", lam))
            else:
                seen.add(j // j0)
        # L3 values reachable from either branch within the truncation
        ls = seen | {k // i0 for k in range(1, K + 1) if k % i0 == 0}
        for l in sorted(ls):
            entries.append(_chain_pair(p, l))
        regime = "rational"
    else:
        for k in range(1, K + 1):
            entries.append(_fast_pair(p, k, "irrational"))
            entries.append(_slow_pair(p, k, "irrational", p.nu.nu * k * k))
        regime = p.nu.regime
    entries.sort(key=lambda e: e.lam)
    lams = [e.lam for e in entries]
    if any(b <= a for a, b in zip(lams, lams[1:])):
        raise PrecisionEscalation(2 * p.ctx.working_bits, "eigenvalues not separated at working precision")
    return SpectrumTable(tuple(entries), regime, min(K * K, p.nu.nu * K * K))


# --------------------------------------------------------------------------
# observation, controllability
# --------------------------------------------------------------------------


def observation(e: EigenPair):
    """B* D d/dx Phi(0) = nu theta_2'(0), from closed-form metadata."""
    return e.observation


def normalize_by_observation(e: EigenPair) -> VectorField2:
    """Phi / observation(Phi)."""
    obs = e.observation
    if obs == 0 or abs(obs) < 1e-300:
        raise NormalizationError(e.lam)
    return e.eigfn * (1.0 / float(obs))


@dataclass(frozen=True)
class ControllabilityReport:
    controllable: bool
    failures: tuple
    K: int
    note: str


def approx_controllability_check(p: ProblemData, table: SpectrumTable | None = None) -> ControllabilityReport:
    """List eigenvalues with vanishing observation or vanishing I(zeta)."""
    table = table or spectrum(p)
    floor = 10 * _roundoff_floor(p)
    bad = []
    for e in table.entries:
        if e.classification == "double":
            bad.append((e.lam, "I(zeta)=0: double eigenvalue"))
        elif abs(e.observation) <= floor:
            bad.append((e.lam, "zero observation"))
    note = f"checked fast and slow indices k <= {p.K}; spectrum complete below {table.complete_below:g}"
    return ControllabilityReport(not bad, tuple(bad), p.K, note)


# --------------------------------------------------------------------------
# residuals
# --------------------------------------------------------------------------


def apply_adjoint(p: ProblemData, theta: VectorField2) -> VectorField2:
    """L* theta with spectral derivatives and the exact coupling matrix."""
    N = theta.N
    n = np.arange(1, N + 1, dtype=float)
    Q = p.q.matrix(N)
    first = n**2 * theta.first.coeffs
    second = p.nu.nu * n**2 * theta.second.coeffs + Q @ theta.first.coeffs
    return VectorField2(SineSeries(first), SineSeries(second))


def eigen_residual(p: ProblemData, e: EigenPair) -> float:
    """||L* Phi - lambda Phi||_L2."""
    r = apply_adjoint(p, e.eigfn) - e.eigfn * e.lam
    return r.norm("L2")


def chain_residual(p: ProblemData, e: EigenPair) -> float:
    """||(L* - zeta) Phi_hat - I(zeta) Phi_2||_L2 for a Jordan-chain entry."""
    if e.generalized_partner is None:
        raise DomainError("entry has no generalized partner")
    g = e.generalized_partner
    target = e.eigfn * (float(e.coupling_integral) if e.classification != "double" else 0.0)
    r = apply_adjoint(p, g) - g * e.lam - target
    return r.norm("L2")
