"""Minimal-time estimators, Gram-determinant diagnostics and Liouville-type nu.

Every minimal time of interest is a limsup of a sequence of quotients.  A
limsup is not computable, so each estimator returns the full partial
history together with a truncated value

    estimate_at_K = max { partial_k : ceil(K/2) <= k <= K }

(the "window rule").  Partials computed in high precision are stored as
mpmath numbers because some of them overflow doubles.

Fast-branch quantities are evaluated from the eigenfunction series

    psi_a = sum_n b_n phi_n,   b_n = c_{a n} / (a^2 - nu n^2),
    c_{a n} = <q phi_a, phi_n>,

with exact coupling coefficients and gaps a^2 - nu n^2 taken from
:meth:`NuValue.sq_gap`, so near-resonant denominators never suffer
cancellation.  Sums run over a window of indices around the resonances,
which captures every term that matters for trigonometric-polynomial q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import mpmath
import numpy as np

from . import _io
from .errors import ControllabilityError, DomainError, InputError, NormalizationError, PrecisionEscalation
from .fnspace import MP_OPS, Coupling, PrecisionContext, TrigPoly
from .spectral import NuValue, ProblemData, _closed_form, _phi_trig, _roundoff_floor, coupling_integral

__all__ = [
    "TimeEstimate",
    "GramRecord",
    "LiouvilleSpec",
    "estimate_T1",
    "estimate_T2",
    "estimate_T0",
    "estimate_T0_rational",
    "estimate_dolecki",
    "gram_det",
    "riesz_degeneracy_scan",
    "liouville_nu",
    "synthetic_coupling",
    "synthetic_bits",
    "window_bounds",
    "write_minimal_time_csv",
    "write_gram_scan_csv",
]

LOG2E = 1.0 / math.log(2.0)


# --------------------------------------------------------------------------
# estimates
# --------------------------------------------------------------------------


def window_bounds(K: int) -> tuple:
    """Index window [ceil(K/2), K] used for truncated limsups."""
    return ((K + 1) // 2, K)


@dataclass(frozen=True)
class TimeEstimate:
    """Truncated limsup estimate with its partial history.

    Attributes
    ----------
    kind : str
        T1, T2_tilde, T2_hat, T0_tilde, T0_hat, T0_rational, T0_1, T0_2 or
        dolecki(x0).
    partials : tuple of (index, value)
        Index is k, except for rational-regime estimators where it is zeta.
    running_sup_tail : tuple of (index, value)
        sup of the partials with index >= the given one.
    estimate_at_K : mpf
        Max of the partials inside the window (may be +inf).
    window : (int, int)
        Window in k (for zeta-indexed partials, k = sqrt(zeta)).
    excluded : tuple of (index, reason)
        Indices skipped (vanishing numerator or zero point value).
    constituents : dict
        Sub-estimates when ``kind`` is a maximum of several.
    alt_partials : dict
        Alternative partial sequences (other denominators, eigenvalue-only).
    """

    kind: str
    partials: tuple
    running_sup_tail: tuple
    estimate_at_K: object
    K: int
    window: tuple
    excluded: tuple = ()
    constituents: dict = field(default_factory=dict)
    alt_partials: dict = field(default_factory=dict)
    index_name: str = "k"

    @property
    def estimate(self) -> float:
        return float(self.estimate_at_K)

    def values(self) -> np.ndarray:
        return np.array([float(v) for _, v in self.partials])

    def indices(self) -> list:
        return [i for i, _ in self.partials]

    def partial(self, index):
        for i, v in self.partials:
            if i == index:
                return v
        raise KeyError(index)

    def rows(self) -> list:
        """CSV rows (kind, index, partial, window_estimate), sub-sequences included."""
        out = [(self.kind, i, v, self.estimate_at_K) for i, v in self.partials]
        for name, seq in self.alt_partials.items():
            out += [(f"{self.kind}:{name}", i, v, _window_max(seq, self.window, self._k_of)) for i, v in seq]
        for sub in self.constituents.values():
            out += sub.rows()
        return out

    def _k_of(self, index) -> int:
        return math.isqrt(int(index)) if self.index_name == "zeta" else int(index)


def _window_max(partials, window, k_of=int):
    lo, hi = window
    inside = [v for i, v in partials if lo <= k_of(i) <= hi]
    if not inside:
        # sparse index lists: fall back to the largest index available
        inside = [max(partials, key=lambda t: k_of(t[0]))[1]] if partials else [mpmath.ninf]
    return max(inside)


def _finalize(kind, partials, K, excluded=(), constituents=None, alt=None, index_name="k") -> TimeEstimate:
    partials = sorted(partials, key=lambda t: t[0])
    k_of = (lambda z: math.isqrt(int(z))) if index_name == "zeta" else int
    window = window_bounds(K)
    tail = []
    running = mpmath.ninf
    for i, v in reversed(partials):
        running = max(running, v)
        tail.append((i, running))
    tail.reverse()
    return TimeEstimate(
        kind=kind,
        partials=tuple(partials),
        running_sup_tail=tuple(tail),
        estimate_at_K=_window_max(partials, window, k_of),
        K=K,
        window=window,
        excluded=tuple(excluded),
        constituents=dict(constituents or {}),
        alt_partials={k: tuple(sorted(v, key=lambda t: t[0])) for k, v in (alt or {}).items()},
        index_name=index_name,
    )


# --------------------------------------------------------------------------
# fast-branch series data
# --------------------------------------------------------------------------


def _index_window(centres: Iterable[int], W: int) -> list:
    s = set(range(1, W + 1))
    for c in centres:
        s.update(range(max(1, c - W), c + W + 1))
    return sorted(s)


def _bits(p: ProblemData) -> int:
    return max(p.ctx.working_bits, 64)


def _series_sums(p: ProblemData, a: int, skip: Optional[int], W: int, bits: int):
    """R = sum n b_n and S = sum n^2 b_n^2 over the window, n != skip.

    b_n = c_{a n} / (a^2 - nu n^2).  Raises DomainError on an exact
    resonance with nonzero coupling.
    """
    centres = [a, p.nu.nearest(a, inverse=True)]
    if skip is not None:
        centres.append(skip)
    R = mpmath.mpf(0)
    S = mpmath.mpf(0)
    with mpmath.workprec(bits):
        for n in _index_window(centres, W):
            if n == skip:
                continue
            c = p.q.coeff(a, n, MP_OPS)
            if c == 0:
                continue
            g = p.nu.sq_gap(a, n, bits)
            if g == 0:
                raise DomainError(f"a^2 = nu n^2 at (a, n) = ({a}, {n}) with nonzero coupling")
            b = c / g
            R += n * b
            S += (n * b) ** 2
    return R, S


def _check_gap_floor(p: ProblemData, a: int, b: int, g, bits: int):
    # only decimal nu carries rounding in sqrt(nu); rational and Liouville gaps are exact
    if p.nu.kind != "real":
        return
    lat = abs(p.nu.lattice(b, a, bits))
    floor = mpmath.ldexp(b + 1, -(bits - 10))
    if lat < floor:
        need = bits + 20 + int(-mpmath.log(lat, 2)) if lat > 0 else 4 * bits
        raise PrecisionEscalation(need, f"|{a}^2 - nu {b}^2| at the precision floor")


def _fast_observation(p: ProblemData, k: int, bits: int):
    """nu psi_k'(0) = -int q phi_k sin(k (pi - s)/sqrt(nu)) ds / sin(k pi/sqrt(nu))."""
    extra = int(k).bit_length() + 20
    with mpmath.workprec(bits + extra):
        w = mpmath.mpf(k) / p.nu.sqrt_nu(bits + extra)
        f = p.q.trig(MP_OPS) * _phi_trig(k, MP_OPS)
        num = (f * TrigPoly.sin(-w, w * mpmath.pi, 1, MP_OPS)).integral()
        s = p.nu.sin_pi_over_sqrt(k, bits + extra)
        if s == 0:
            raise PrecisionEscalation(4 * bits, f"sin(k pi/sqrt(nu)) vanished at k={k}")
        out = -num / s
    with mpmath.workprec(bits):
        return +out


def _pair_quotient(p: ProblemData, a: int, b: int, W: int, bits: int):
    """||psi_1,a - psi_2,b||_{H^1_0} / |a^2 - nu b^2| and the gap.

    With g = a^2 - nu b^2, c_n = <q phi_a, phi_n>, R = sum_{n != b} n b_n and
    S = sum_{n != b} n^2 b_n^2, the difference of the normalized vectors is

        (g/O) phi_a  in the first component,
        g R/(O b) at mode b and g b_n/O elsewhere in the second,

    where O = nu sqrt(2/pi) (b c_b + g R) is g times the observation of
    Phi_1,a.  Hence the quotient equals sqrt(a^2 + R^2 + S)/|O| and no
    cancellation occurs when g is tiny.
    """
    with mpmath.workprec(bits):
        g = p.nu.sq_gap(a, b, bits)
        if g == 0:
            raise DomainError(f"equal eigenvalues a^2 = nu b^2 at (a, b) = ({a}, {b})")
        _check_gap_floor(p, a, b, g, bits)
        cb = p.q.coeff(a, b, MP_OPS)
        R, S = _series_sums(p, a, b, W, bits)
        num = mpmath.sqrt(a * a + R * R + S)
        O = p.nu.nu_value(bits) * mpmath.sqrt(2 / mpmath.pi) * (b * cb + g * R)
        if O == 0:
            raise NormalizationError(a * a, "zero observation of the fast eigenfunction")
        return num / abs(O), g


# --------------------------------------------------------------------------
# irrational-regime estimators
# --------------------------------------------------------------------------


def _require_irrational(p: ProblemData):
    if p.nu.is_rational:
        raise DomainError("estimator defined in the irrational regime; use estimate_T0_rational")


def _ks(K: int | None, ks, p: ProblemData):
    if ks is not None:
        ks = sorted({int(k) for k in ks})
        if not ks or ks[0] < 1:
            raise InputError("indices must be positive")
        return ks, max(ks)
    K = p.K if K is None else int(K)
    if K < 1:
        raise InputError("K must be >= 1")
    return list(range(1, K + 1)), K


def estimate_T1(p: ProblemData, K: int | None = None, ks: Sequence[int] | None = None, W: int = 64) -> TimeEstimate:
    """Partials log ||psi_1,k||_{H^1_0} / k^2 with psi_1,k = Phi_1,k / observation.

    Raises
    ------
    NormalizationError
        When the observation of Phi_1,k vanishes.
    """
    _require_irrational(p)
    ks, K = _ks(K, ks, p)
    bits = _bits(p)
    partials = []
    for k in ks:
        _, S = _series_sums(p, k, None, W, bits)
        obs = _fast_observation(p, k, bits)
        if obs == 0:
            raise NormalizationError(k * k, f"zero observation at k={k}")
        with mpmath.workprec(bits):
            partials.append((k, mpmath.log(mpmath.sqrt(k * k + S) / abs(obs)) / (k * k)))
    return _finalize("T1", partials, K)


def estimate_T2(p: ProblemData, K: int | None = None, ks: Sequence[int] | None = None, W: int = 64) -> TimeEstimate:
    """Condensation partials for the pairs (i_k, k) (sqrt(nu) > 1) or (k, j_k) (sqrt(nu) < 1).

    Main partials use the denominator nu k^2 (resp. k^2).  Exported
    alternatives: ``alt_denominator`` (i_k^2, resp. nu j_k^2) and
    ``eigenvalue_only``, which keeps only -log|a^2 - nu b^2| in the numerator.
    """
    _require_irrational(p)
    ks, K = _ks(K, ks, p)
    bits = _bits(p)
    nu = p.nu.nu_value(bits)
    gt1 = p.nu.sqrt_nu(bits) > 1
    partials, alt_den, eig_only, excluded = [], [], [], []
    for k in ks:
        if gt1:
            a, b = p.nu.nearest(k), k
            main, other = nu * k * k, mpmath.mpf(a) ** 2
        else:
            a, b = k, p.nu.nearest(k, inverse=True)
            main, other = mpmath.mpf(k) ** 2, nu * b * b
        if b < 1 or a < 1:
            excluded.append((k, "index map hits 0"))
            continue
        quot, g = _pair_quotient(p, a, b, W, bits)
        with mpmath.workprec(bits):
            if quot == 0:
                excluded.append((k, "vanishing numerator"))
                continue
            lq = mpmath.log(quot)
            partials.append((k, lq / main))
            alt_den.append((k, lq / other))
            eig_only.append((k, -mpmath.log(abs(g)) / main))
    kind = "T2_tilde" if gt1 else "T2_hat"
    return _finalize(kind, partials, K, excluded, alt={"alt_denominator": alt_den, "eigenvalue_only": eig_only})


def estimate_T0(p: ProblemData, K: int | None = None, W: int = 64) -> TimeEstimate:
    """max(T1, T2) with per-k partials max(T1_k, T2_k)."""
    t1 = estimate_T1(p, K, W=W)
    t2 = estimate_T2(p, K, W=W)
    d2 = dict(t2.partials)
    partials = [(k, max(v, d2[k]) if k in d2 else v) for k, v in t1.partials]
    kind = "T0_tilde" if t2.kind == "T2_tilde" else "T0_hat"
    out = _finalize(kind, partials, t1.K, t2.excluded, constituents={"T1": t1, t2.kind: t2})
    return out


# --------------------------------------------------------------------------
# rational regime and Dolecki
# --------------------------------------------------------------------------


def estimate_T0_rational(p: ProblemData, K: int | None = None) -> TimeEstimate:
    """Partials -log|I(zeta)|/zeta over zeta = k^2 <= K^2 (Lambda_2 and Lambda_3).

    Constituents T0_1 (zeta in Lambda_2, k not a multiple of i0) and T0_2
    (zeta in Lambda_3).  Partials are indexed by zeta; the window applies
    to k = sqrt(zeta).

    Raises
    ------
    ControllabilityError
        At the first zeta where I(zeta) vanishes to working precision.
    """
    if not p.nu.is_rational:
        raise DomainError("estimate_T0_rational needs rational sqrt(nu)")
    K = p.K if K is None else int(K)
    i0 = p.nu.i0
    floor = 10 * _roundoff_floor(p)
    lam2, lam3 = [], []
    with p.ctx.workprec():
        for k in range(1, K + 1):
            zeta = k * k
            I, _ = coupling_integral(p, zeta)
            if abs(I) <= floor:
                raise ControllabilityError(zeta, "I(zeta) vanishes")
            val = -mpmath.log(abs(mpmath.mpf(I))) / zeta
            (lam3 if k % i0 == 0 else lam2).append((zeta, val))
    t01 = _finalize("T0_1", lam2, K, index_name="zeta")
    t02 = _finalize("T0_2", lam3, K, index_name="zeta")
    return _finalize("T0_rational", lam2 + lam3, K, constituents={"T0_1": t01, "T0_2": t02}, index_name="zeta")


def estimate_dolecki(
    x0=None,
    K: int = 40,
    ks: Sequence[int] | None = None,
    x0_over_pi=None,
    bits: int = 64,
) -> TimeEstimate:
    """Partials -log|phi_k(x0)|/k^2 for a point x0 in (0, pi).

    The point is given either as a float ``x0`` or through ``x0_over_pi``:
    a Fraction r (x0 = r pi) or a :class:`NuValue`, in which case
    x0 = pi (sqrt(nu) - floor(sqrt(nu))) and sin(k x0) is computed from the
    exact lattice gap k sqrt(nu) - nint(k sqrt(nu)).  Indices with
    phi_k(x0) = 0 are skipped and recorded.
    """
    if (x0 is None) == (x0_over_pi is None):
        raise InputError("give exactly one of x0 and x0_over_pi")
    if x0 is not None:
        x0 = float(x0)
        if not 0 < x0 < math.pi:
            raise DomainError("x0 must lie in (0, pi)")
        r = Fraction(x0 / math.pi).limit_denominator(10**6)
        if abs(float(r) * math.pi - x0) <= 4e-16 * math.pi:
            x0_over_pi, label = r, f"{x0:.12g}"
        else:
            x0_over_pi, label = mpmath.mpf(x0) / mpmath.pi, f"{x0:.12g}"
    elif isinstance(x0_over_pi, NuValue):
        label = "pi*frac(sqrt(nu))"
    else:
        x0_over_pi = Fraction(x0_over_pi)
        if not 0 < x0_over_pi < 1:
            raise DomainError("x0 must lie in (0, pi)")
        label = f"pi*{x0_over_pi}"
    if ks is None:
        ks = range(1, K + 1)
    else:
        ks = sorted({int(k) for k in ks})
        K = max(ks)
    partials, zeros = [], []
    for k in ks:
        extra = int(k).bit_length() + 20
        with mpmath.workprec(bits + extra):
            if isinstance(x0_over_pi, Fraction):
                t = (k * x0_over_pi) % 1
                if t == 0:
                    zeros.append((k, "phi_k(x0) = 0"))
                    continue
                s = mpmath.sin(mpmath.pi * mpmath.mpf(t.numerator) / t.denominator)
            elif isinstance(x0_over_pi, NuValue):
                n = x0_over_pi.nearest(k)
                s = mpmath.sin(mpmath.pi * x0_over_pi.lattice(k, n, bits + extra))
            else:
                s = mpmath.sin(k * mpmath.pi * x0_over_pi)
            val = -mpmath.log(abs(mpmath.sqrt(2 / mpmath.pi) * s)) / (mpmath.mpf(k) ** 2)
        partials.append((k, +val))
    return _finalize(f"dolecki({label})", partials, K, zeros)


# --------------------------------------------------------------------------
# Gram determinants
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GramRecord:
    """Gram determinant of the normalized pair (Phi_1,k, Phi_2,j) in H^1_0.

    ``det`` comes from det = x/(1+x), x = U (k^2 + V), with
    U = (k^2 - nu j^2)^2 / (j^2 c_kj^2) and V = sum_{n != j} n^2 b_n^2.
    ``det_direct`` is computed from closed-form psi_k inner products when
    that path is numerically meaningful, otherwise None (see ``note``).
    """

    k: int
    j: int
    det: object
    U: object
    V: object
    coupling: object
    det_direct: object = None
    bits_used: int = 53
    p: Optional[int] = None
    note: str = ""

    @property
    def k2U(self):
        return None if self.U is None else self.k * self.k * self.U

    @property
    def agreement(self):
        if self.det_direct is None:
            return None
        return abs(self.det - self.det_direct)


def _det_direct(p: ProblemData, k: int, j: int, bits: int):
    """1 - <Phi_1,k, Phi_2,j>^2 / (||Phi_1,k||^2 ||Phi_2,j||^2) from the closed form."""
    ctx = p.ctx.with_bits(bits)
    N = max(p.N, j + 16, int(k / p.nu.sqrt) + 32)
    ctx = PrecisionContext(bits, ctx.quad_panels_per_period, N, ctx.tail_tolerance)
    pp = ProblemData(p.nu, p.q, p.K, ctx)
    with ctx.workprec():
        coeffs, _, _, _ = _closed_form(pp, k)
        n2 = [mpmath.mpf(n + 1) ** 2 for n in range(len(coeffs))]
        norm1 = k * k + mpmath.fsum(w * c * c for w, c in zip(n2, coeffs))
        ip = j * j * coeffs[j - 1]
        return 1 - ip * ip / (norm1 * j * j)


def gram_det(p: ProblemData, k: int, j: int, W: int = 64, direct: bool = True, direct_floor: float = 1e-30) -> GramRecord:
    """Gram determinant for the fast index k and the slow index j.

    Raises
    ------
    DomainError
        When k^2 = nu j^2 (the pair spans a single eigenvalue).
    """
    if k < 1 or j < 1:
        raise InputError("indices must be positive")
    bits = _bits(p)
    with mpmath.workprec(bits):
        gap = p.nu.sq_gap(k, j, bits)
        if gap == 0:
            raise DomainError(f"k^2 = nu j^2 at (k, j) = ({k}, {j}): not a pair from different eigenvalues")
        c = p.q.coeff(k, j, MP_OPS)
        _, V = _series_sums(p, k, j, W, bits)
        if c == 0:
            U = None
            det = mpmath.mpf(1)
        else:
            U = gap * gap / (mpmath.mpf(j) ** 2 * c * c)
            x = U * (k * k + V)
            det = x / (1 + x)
    rec_direct, note = None, ""
    if direct:
        if det < direct_floor:
            note = "direct path skipped: det below the cancellation floor of 1 - (1 - det)"
        else:
            try:
                rec_direct = _det_direct(p, k, j, max(bits, 106))
            except PrecisionEscalation as exc:
                note = f"direct path skipped: {exc}"
    return GramRecord(k, j, det, U, V, c, rec_direct, bits, note=note)


def riesz_degeneracy_scan(
    spec: "LiouvilleSpec",
    q: Coupling | None = None,
    bits: int = 256,
    W: int = 64,
    check: bool = True,
) -> list:
    """Gram records at the convergent pairs (k_p, j_p) of a Liouville nu.

    q defaults to sin x on the even track and sin 2x on the odd track,
    which makes <q phi_k_p, phi_j_p> nonzero.  With ``check`` the
    determinants must decrease strictly along p.
    """
    if q is None:
        q = Coupling.sine(1) if spec.parity == "even" else Coupling.sine(2)
    p = ProblemData(spec.nu(), q, K=8, ctx=PrecisionContext(working_bits=bits))
    recs = []
    for idx, (k, j) in enumerate(spec.convergents, start=1):
        r = gram_det(p, k, j, W=W)
        recs.append(GramRecord(r.k, r.j, r.det, r.U, r.V, r.coupling, r.det_direct, r.bits_used, idx, r.note))
    if check:
        dets = [r.det for r in recs]
        if any(b >= a for a, b in zip(dets, dets[1:])):
            raise AssertionError(f"Gram determinants not strictly decreasing: {[_io.mp_text(d, 5) for d in dets]}")
    return recs


# --------------------------------------------------------------------------
# Liouville-type nu
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LiouvilleSpec:
    """sqrt(nu) = k_P/j_P + 2^-eta_exp built from nested rational pairs.

    Consecutive pairs satisfy k_{p+1} j_p - k_p j_{p+1} = delta, so the
    rationals increase and |sqrt(nu) - k_p/j_p| < delta/(j_p j_{p+1}) (1 + o(1)).
    Choosing j_{p+1} >= 4 exp(k_p^(2+sigma)) and the final offset
    2^-eta_exp <= exp(-k_P^(2+sigma)) / (2 j_P) gives

        |j_p sqrt(nu) - k_p| <= C k_p exp(-k_p^(2+sigma))

    for every stored p with C = 1; ``C_p`` holds the attained ratios.
    """

    sigma: float
    parity: str
    delta: int
    convergents: tuple
    tail_bound_at_p: tuple
    C: float
    C_p: tuple
    sqrt_nu_partial: Fraction
    eta_exp: int
    eta_sign: int
    required_bits: int
    verified: bool

    def nu(self) -> NuValue:
        kP, jP = self.convergents[-1]
        return NuValue.liouville(kP, jP, self.eta_exp, self.eta_sign)

    def to_json(self) -> dict:
        return {
            "sigma": self.sigma,
            "parity": self.parity,
            "delta": self.delta,
            "convergents": [[str(k), str(j)] for k, j in self.convergents],
            "tail_bound_at_p": [_io.mp_text(t) for t in self.tail_bound_at_p],
            "C": self.C,
            "C_p": [_io.mp_text(c) for c in self.C_p],
            "eta_exp_bits": self.eta_exp.bit_length(),
            "required_bits_digits": len(str(self.required_bits)),
            "verified": self.verified,
        }


_TRACKS = {"even": ((1, 1), 2), "odd": ((2, 1), 1)}


def _power_exponent(k: int, sigma: float, extra: int = 64):
    """k^(2+sigma) as an mpf carrying every integer digit."""
    prec = int(k).bit_length() * (3 + math.ceil(sigma)) + extra
    with mpmath.workprec(prec):
        s = mpmath.mpf(sigma)
        if s == int(s):
            return mpmath.mpf(int(k) ** (2 + int(s))), prec
        return mpmath.mpf(k) ** (2 + s), prec


def _ceil_bits(k: int, sigma: float) -> int:
    """ceil(k^(2+sigma) log2 e): bits needed to resolve exp(-k^(2+sigma))."""
    e, prec = _power_exponent(k, sigma)
    with mpmath.workprec(prec + 32):
        return int(mpmath.ceil(e / mpmath.log(2)))


def _next_pair(k: int, j: int, delta: int, parity: str, sigma: float, max_int_bits: int):
    need = _ceil_bits(k, sigma) + 3
    if need > max_int_bits:
        raise PrecisionEscalation(need, f"next convergent after ({k}, {j}) needs integers of {need} bits")
    e, prec = _power_exponent(k, sigma)
    with mpmath.workprec(max(prec, need) + 64):
        jmin = int(mpmath.ceil(4 * mpmath.exp(e)))
    r = 0 if j == 1 else (-delta * pow(k, -1, j)) % j
    jp = jmin + ((r - jmin) % j)
    for _ in range(8 * j + 8):
        if (delta + k * jp) % j == 0:
            kp = (delta + k * jp) // j
            par_ok = (kp + jp) % 2 == (0 if parity == "even" else 1)
            if par_ok and math.gcd(kp, jp) == 1 and kp > k and jp > j:
                return kp, jp
        jp += j
    raise DomainError(f"no admissible successor of ({k}, {j}) on the {parity} track")


def liouville_nu(sigma: float = 1.0, P: int = 3, parity: str = "even", max_int_bits: int = 1 << 16):
    """Liouville-type sqrt(nu) with super-exponential rational approximations.

    Parameters
    ----------
    sigma : float
        Exponent excess: |j_p sqrt(nu) - k_p| <= k_p exp(-k_p^(2+sigma)).
    P : int
        Number of stored pairs (P >= 2).
    parity : {"even", "odd"}
        Parity of k_p + j_p along the track.  Even starts at (1, 1) with
        delta = 2, odd starts at (2, 1) with delta = 1.
    max_int_bits : int
        Budget for the size of j_P.  The offset exponent eta_exp itself is
        only stored as an integer, so it is not bounded by the budget.

    Returns
    -------
    (LiouvilleSpec, NuValue)

    Raises
    ------
    PrecisionEscalation
        When the next pair would exceed ``max_int_bits``.
    """
    if not sigma > 0:
        raise InputError("sigma must be positive")
    if P < 2:
        raise InputError("P must be >= 2")
    if parity not in _TRACKS:
        raise InputError("parity must be 'even' or 'odd'")
    seed, delta = _TRACKS[parity]
    pairs = [seed]
    for _ in range(P - 1):
        pairs.append(_next_pair(*pairs[-1], delta, parity, sigma, max_int_bits))
    kP, jP = pairs[-1]
    E = _ceil_bits(kP, sigma) + jP.bit_length() + 1
    nu = NuValue.liouville(kP, jP, E, 1)
    C = 1.0
    tails, ratios = [], []
    for k, j in pairs:
        ek, prec = _power_exponent(k, sigma)
        prec = max(prec, E.bit_length()) + j.bit_length() + 128
        with mpmath.workprec(prec):
            lhs = abs(nu.lattice(j, k, prec))
            # log of lhs / (k exp(-k^(2+sigma))), resolved at full precision
            logratio = mpmath.log(lhs) - mpmath.log(k) + ek
            ratios.append(+mpmath.exp(logratio))
            tails.append(lhs)
    with mpmath.workprec(256):
        verified = all(r <= C for r in ratios)
        tails = [+t for t in tails]
        ratios = [+r for r in ratios]
    spec = LiouvilleSpec(
        sigma=float(sigma), parity=parity, delta=delta, convergents=tuple(pairs),
        tail_bound_at_p=tuple(tails), C=C, C_p=tuple(ratios),
        sqrt_nu_partial=Fraction(kP, jP), eta_exp=E, eta_sign=1,
        required_bits=E, verified=verified,
    )
    return spec, nu


# --------------------------------------------------------------------------
# synthetic coupling for calibration
# --------------------------------------------------------------------------


def synthetic_bits(tau: float, K: int) -> int:
    """Working precision for :func:`synthetic_coupling` and for evaluating I with it."""
    return int(2 * tau * K * K * LOG2E) + 4 * K + 256


def synthetic_coupling(nu: NuValue, tau: float, K: int, bits: int | None = None) -> Coupling:
    """Sine polynomial q = sum_{m <= K} a_m sin(m x) with I(k^2) = exp(-tau k^2), k = 1..K.

    The coefficients solve the K x K linear system
    sum_m a_m int sin(m s) sin(k s) sin(k (pi - s)/sqrt(nu)) ds = exp(-tau k^2)
    in mpmath at ``bits`` of precision; they are stored as mpf values.
    Evaluate I with at least :func:`synthetic_bits` bits.
    """
    if not nu.is_rational:
        raise DomainError("synthetic coupling is built in the rational regime")
    if tau <= 0 or K < 1:
        raise InputError("need tau > 0 and K >= 1")
    bits = bits or synthetic_bits(tau, K)
    with mpmath.workprec(bits):
        ops = MP_OPS
        A = mpmath.matrix(K, K)
        rhs = mpmath.matrix(K, 1)
        sines = [TrigPoly.sin(m, 0, 1, ops) for m in range(1, K + 1)]
        for k in range(1, K + 1):
            w = mpmath.mpf(k * nu.j0) / nu.i0
            t = TrigPoly.sin(k, 0, 1, ops) * TrigPoly.sin(-w, w * mpmath.pi, 1, ops)
            for m in range(1, K + 1):
                A[k - 1, m - 1] = (sines[m - 1] * t).integral()
            rhs[k - 1] = mpmath.exp(-mpmath.mpf(tau) * k * k)
        a = mpmath.lu_solve(A, rhs)
        coeffs = tuple(+a[i] for i in range(K))
    return Coupling(coeffs, (), f"synthetic(tau={tau}, K={K})")


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------

MINIMAL_TIME_HEADER = ("kind", "k", "partial", "window_estimate")
GRAM_SCAN_HEADER = ("p", "k_p", "j_p", "coupling", "U", "det", "bits_used")


def write_minimal_time_csv(path, estimates: Sequence[TimeEstimate]):
    rows = []
    for est in estimates:
        rows += est.rows()
    return _io.write_csv(path, MINIMAL_TIME_HEADER, rows)


def write_gram_scan_csv(path, records: Sequence[GramRecord]):
    rows = [(r.p, r.k, r.j, r.coupling, r.U, r.det, r.bits_used) for r in records]
    return _io.write_csv(path, GRAM_SCAN_HEADER, rows)
