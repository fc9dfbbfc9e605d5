"""Moment problems, biorthogonal atoms and control synthesis.

Null control of the truncated system is equivalent to the moment
equations, written for the reversed control v(s) = u(T - s):

    int_0^T e^{-lam s} v(s) ds = -e^{-lam T} <y0, Phi> / obs(Phi)

for every retained eigenpair (lam, Phi).  At a Jordan chain
(L* - zeta) Phi_hat = I Phi_2 one more equation appears,

    int_0^T s e^{-zeta s} v(s) ds = m1,

with m1 folding in the generalized flow e^{-zeta s} (Phi_hat - s I Phi_2).

Two synthesis routes are provided.  The Gram route computes the minimal
L^2 element of span{s^p e^{-lam s}} matching all moments; the solve runs in
mpmath because the Gram matrix of exponentials is violently
ill-conditioned.  The Blaschke route builds, per group of eigenvalues,
J(lam) = P(lam) L(lam) with a finite Blaschke product L, inverts the
Laplace transform on the imaginary axis and restricts the result to
(0, T).  The restriction is not exact, so every Blaschke atom has its
moments re-measured and is rejected when they miss.

The penalized route (:func:`hum_control`) minimizes
1/2 ||u||^2 + 1/(2 eps) ||y(T)||^2_{H^-1} through its dual system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import mpmath
import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import _io
from .errors import AssemblyError, ControllabilityError, ConvergenceError, DomainError, InputError, NormalizationError, PrecisionEscalation
from .fnspace import VectorField2, gauss_legendre_panels
from .spectral import NuValue, SpectrumTable

__all__ = [
    "MomentEntry",
    "MomentSystem",
    "BlaschkeProduct",
    "MomentCoefficients",
    "BiorthAtom",
    "Expansion",
    "ControlSignal",
    "moments_from_initial",
    "blaschke_for_group",
    "blaschke_eval",
    "coefficients",
    "synthesize_atom_blaschke",
    "gram_moment_solve",
    "gram_atoms",
    "control_series",
    "hum_control",
    "DEFAULT_ACTIVE_FRACTION",
]

DEFAULT_ACTIVE_FRACTION = 0.9


# --------------------------------------------------------------------------
# moment systems
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentEntry:
    """One moment equation int s^order e^{-lam s} v(s) ds = rhs."""

    lam: float
    order: int
    rhs: float
    group: int
    label: str = ""


@dataclass(frozen=True)
class MomentSystem:
    """Moment equations for the reversed control v(s) = u(T - s) on (0, T).

    ``groups`` maps a group id to a description; in the irrational regime a
    group gathers the triple (i_hat_k^2, i_k^2, nu k^2) (or the mirror
    triple when sqrt(nu) < 1) restricted to the retained eigenvalues.
    """

    entries: tuple
    T: float
    regime: str = "irrational_gt1"
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.T > 0:
            raise InputError("T must be positive")
        seen = set()
        for e in self.entries:
            if not np.isfinite(float(e.rhs)):
                raise InputError(f"non-finite rhs at lambda={e.lam}")
            if e.order not in (0, 1):
                raise InputError("moment order must be 0 or 1")
            key = (e.lam, e.order)
            if key in seen:
                raise InputError(f"duplicate moment ({e.lam}, order {e.order})")
            seen.add(key)

    @classmethod
    def from_targets(cls, lams, rhs, T: float, orders=None, groups=None) -> "MomentSystem":
        orders = [0] * len(lams) if orders is None else list(orders)
        groups = list(range(len(lams))) if groups is None else list(groups)
        ents = tuple(MomentEntry(float(l), int(o), r, int(g)) for l, o, r, g in zip(lams, orders, rhs, groups))
        return cls(ents, float(T), "targets", {g: f"group {g}" for g in set(groups)})

    @property
    def size(self) -> int:
        return len(self.entries)

    def lams(self) -> np.ndarray:
        return np.array([e.lam for e in self.entries])

    def rhs(self) -> list:
        return [e.rhs for e in self.entries]

    def group_ids(self) -> list:
        return sorted({e.group for e in self.entries})

    def restricted(self, group: int) -> "MomentSystem":
        """Same equations with rhs zeroed outside ``group``."""
        ents = tuple(MomentEntry(e.lam, e.order, e.rhs if e.group == group else 0.0, e.group, e.label) for e in self.entries)
        return MomentSystem(ents, self.T, self.regime, self.groups)


def _pair(y0: VectorField2, theta: VectorField2) -> float:
    N = min(y0.N, theta.N)
    return float(np.dot(y0.padded(N).as_array(), theta.padded(N).as_array()))


def _groups_irrational(table: SpectrumTable, nu: NuValue) -> dict:
    """Group id per (branch, index) following the triple grouping."""
    fast = sorted(e.k for e in table.entries if e.branch == "fast")
    slow = sorted(e.k for e in table.entries if e.branch == "slow")
    out = {}
    if nu.sqrt > 1:
        kmax = max(slow + fast) + 2
        image = {}
        for k in range(1, kmax + 1):
            image[nu.nearest(k)] = k
        comp = [n for n in range(1, max(fast) + 1) if n not in image]
        for n in fast:
            out[("fast", n)] = image[n] if n in image else comp.index(n) + 1
        for k in slow:
            out[("slow", k)] = k
    else:
        kmax = max(slow + fast) * 2 + 2
        image = {}
        for k in range(1, kmax + 1):
            image[nu.nearest(k, inverse=True)] = k
        comp = [n for n in range(1, max(slow) + 1) if n not in image]
        for n in slow:
            out[("slow", n)] = image[n] if n in image else comp.index(n) + 1
        for k in fast:
            out[("fast", k)] = k
    return out


def moments_from_initial(y0: VectorField2, table: SpectrumTable, T: float, nu: NuValue | None = None) -> MomentSystem:
    """Moment system of the null-control problem for the initial state y0.

    Parameters
    ----------
    y0 : VectorField2
        Initial state, as sine coefficients (H^-1 paired with H^1_0 by the
        coefficient dot product).
    table : SpectrumTable
    T : float
    nu : NuValue, optional
        Needed for the triple grouping in the irrational regime.

    Raises
    ------
    NormalizationError
        When an observation vanishes.
    ControllabilityError
        At a double eigenvalue (I(zeta) = 0), where the two order-0
        equations are incompatible.
    """
    if not T > 0:
        raise InputError("T must be positive")
    ents = []
    groups = {}
    gmap = _groups_irrational(table, nu) if (nu is not None and not nu.is_rational) else None
    for idx, e in enumerate(table.entries):
        obs = float(e.observation)
        if obs == 0 or abs(obs) < 1e-300:
            raise NormalizationError(e.lam)
        decay = math.exp(-e.lam * T)
        m0 = -decay * _pair(y0, e.eigfn) / obs
        if gmap is not None:
            g = gmap[(e.branch, e.k)]
        else:
            g = idx
        groups.setdefault(g, [])
        groups[g].append(f"{e.branch}:{e.k}")
        ents.append(MomentEntry(e.lam, 0, m0, g, f"{e.tag}:{e.branch}:{e.k}"))
        if e.tag == "L3":
            if e.classification == "double":
                raise ControllabilityError(e.lam, "double eigenvalue")
            I = float(e.coupling_integral)
            obs_hat = float(e.partner_observation)
            theta = e.generalized_partner - e.eigfn * (T * I)
            m1 = (decay * _pair(y0, theta) + obs_hat * m0) / (I * obs)
            ents.append(MomentEntry(e.lam, 1, m1, g, f"{e.tag}:chain:{e.k}"))
    return MomentSystem(tuple(ents), float(T), table.regime, {g: ",".join(v) for g, v in groups.items()})


# --------------------------------------------------------------------------
# exponential-sum controls
# --------------------------------------------------------------------------


def _power_exp_integral(n: int, c, a, b):
    """int_a^b s^n e^{-c s} ds in the current mpmath precision."""
    if c == 0:
        return (b ** (n + 1) - a ** (n + 1)) / (n + 1)
    return mpmath.gammainc(n + 1, a * c, b * c) / c ** (n + 1)


@dataclass(frozen=True)
class Expansion:
    """v(s) = sum_i c_i s^{p_i} e^{-lam_i s} on the window a <= s <= b, zero elsewhere.

    The control is u(t) = v(T - t); a window [T - Tc, T] in s means u is
    supported on [0, Tc].
    """

    lams: tuple
    powers: tuple
    coeffs: tuple
    a: float
    b: float
    bits: int = 256

    def v(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        with mpmath.workprec(self.bits):
            for idx, x in enumerate(s):
                if self.a - 1e-15 <= x <= self.b + 1e-15:
                    xm = mpmath.mpf(x)
                    out[idx] = float(mpmath.fsum(c * xm**p * mpmath.exp(-l * xm)
                                                 for l, p, c in zip(self.lams, self.powers, self.coeffs)))
        return out

    def u(self, t, T: float) -> np.ndarray:
        return self.v(T - np.asarray(t, dtype=float))

    def moment(self, lam, order: int = 0):
        """int_a^b s^order e^{-lam s} v(s) ds, exact in mpmath."""
        with mpmath.workprec(self.bits):
            a, b = mpmath.mpf(self.a), mpmath.mpf(self.b)
            return mpmath.fsum(c * _power_exp_integral(p + order, mpmath.mpf(lam) + l, a, b)
                               for l, p, c in zip(self.lams, self.powers, self.coeffs))

    def norm2(self):
        """||v||^2_{L^2}, exact in mpmath."""
        with mpmath.workprec(self.bits):
            a, b = mpmath.mpf(self.a), mpmath.mpf(self.b)
            tot = mpmath.mpf(0)
            for l1, p1, c1 in zip(self.lams, self.powers, self.coeffs):
                for l2, p2, c2 in zip(self.lams, self.powers, self.coeffs):
                    tot += c1 * c2 * _power_exp_integral(p1 + p2, l1 + l2, a, b)
            return tot

    def scaled(self, factor) -> "Expansion":
        with mpmath.workprec(self.bits):
            return Expansion(self.lams, self.powers, tuple(c * factor for c in self.coeffs), self.a, self.b, self.bits)

    def __add__(self, other: "Expansion") -> "Expansion":
        if (self.a, self.b) != (other.a, other.b):
            raise DomainError("expansions on different windows")
        return Expansion(self.lams + other.lams, self.powers + other.powers, self.coeffs + other.coeffs,
                         self.a, self.b, max(self.bits, other.bits))

    def to_json(self) -> dict:
        """JSON form; ``coeff`` is readable, ``exact`` = [mantissa, exponent] round-trips bit for bit."""
        terms = []
        for l, p, c in zip(self.lams, self.powers, self.coeffs):
            c = mpmath.mpf(c) if not isinstance(c, mpmath.mpf) else c
            man, exp = int(c.man) * (-1 if c < 0 else 1), int(c.exp)
            terms.append({"lambda": float(l), "power": int(p), "coeff": mpmath.nstr(c, int(self.bits * 0.30103) + 3),
                          "exact": [str(man), exp]})
        return {"window_s": [self.a, self.b], "bits": self.bits, "terms": terms}

    @classmethod
    def from_json(cls, d: dict) -> "Expansion":
        bits = int(d.get("bits", 256))
        a, b = d["window_s"]
        terms = d["terms"]
        coeffs = []
        for t in terms:
            if "exact" in t:
                man, exp = int(t["exact"][0]), int(t["exact"][1])
                with mpmath.workprec(max(bits, man.bit_length() + 1)):
                    coeffs.append(mpmath.ldexp(mpmath.mpf(man), exp))
            else:
                with mpmath.workprec(bits):
                    coeffs.append(mpmath.mpf(t["coeff"]))
        with mpmath.workprec(bits):
            lams = tuple(mpmath.mpf(t["lambda"]) for t in terms)
        return cls(lams, tuple(int(t["power"]) for t in terms), tuple(coeffs), float(a), float(b), bits)


@dataclass(frozen=True)
class ControlSignal:
    """Boundary control u sampled on a uniform grid over [0, T].

    ``norm_l2`` is the trapezoid norm of the samples; ``norm_l2_exact``
    comes from the expansion when one is attached.  ``active_until`` is the
    end of the support in t (u = 0 on (active_until, T]).
    """

    t: np.ndarray
    samples: np.ndarray
    K: int
    method: str
    T: float
    norm_l2: float
    active_until: float
    expansion: Optional[Expansion] = None
    norm_l2_exact: Optional[float] = None
    residuals: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @staticmethod
    def trapezoid_norm(t, samples) -> float:
        return float(math.sqrt(np.trapezoid(np.asarray(samples) ** 2, t)))

    @classmethod
    def from_expansion(cls, exp: Expansion, T: float, K: int, method: str, n_samples: int = 1001, **kw) -> "ControlSignal":
        t = np.linspace(0.0, T, n_samples)
        u = exp.u(t, T)
        exact = float(mpmath.sqrt(max(exp.norm2(), 0)))
        return cls(t, u, K, method, T, cls.trapezoid_norm(t, u), T - exp.a, exp, exact, **kw)

    @classmethod
    def zero(cls, T: float, K: int, method: str, n_samples: int = 1001) -> "ControlSignal":
        t = np.linspace(0.0, T, n_samples)
        return cls(t, np.zeros_like(t), K, method, T, 0.0, T, None, 0.0)

    def __call__(self, t) -> np.ndarray:
        if self.expansion is not None:
            return self.expansion.u(t, self.T)
        return np.interp(np.asarray(t, dtype=float), self.t, self.samples)

    def metadata(self) -> dict:
        return {
            "method": self.method,
            "K": self.K,
            "T": self.T,
            "norm_l2": self.norm_l2,
            "norm_l2_exact": self.norm_l2_exact,
            "active_until": self.active_until,
            "residuals": self.residuals,
            "diagnostics": self.diagnostics,
            "expansion": self.expansion.to_json() if self.expansion is not None else None,
        }

    def write(self, csv_path, json_path=None):
        _io.write_csv(csv_path, ("t", "u"), zip(self.t.tolist(), self.samples.tolist()))
        if json_path is not None:
            _io.write_json(json_path, self.metadata())


# --------------------------------------------------------------------------
# Gram route
# --------------------------------------------------------------------------


def _window(T: float, active_fraction: float):
    if not 0 < active_fraction <= 1:
        raise InputError("active_fraction must lie in (0, 1]")
    return T * (1 - active_fraction), T


def _gram_matrix(lams, orders, a, b):
    n = len(lams)
    G = mpmath.matrix(n, n)
    for i in range(n):
        for j in range(i, n):
            G[i, j] = G[j, i] = _power_exp_integral(orders[i] + orders[j], lams[i] + lams[j], a, b)
    return G


def gram_moment_solve(
    ms: MomentSystem,
    bits: int = 256,
    active_fraction: float = 1.0,
    reg: float = 0.0,
    tol: float = 1e-12,
    n_samples: int = 1001,
    K: int | None = None,
) -> ControlSignal:
    """Minimal-norm v in span{s^p e^{-lam s}} on [T(1 - active_fraction), T] matching all moments.

    The Gram matrix G_ij = int s^{p_i + p_j} e^{-(lam_i + lam_j) s} ds is
    assembled from closed-form incomplete gamma integrals and solved in
    mpmath at ``bits`` (53 selects numpy).  ``reg`` adds reg * I to G and
    is recorded.

    Raises
    ------
    PrecisionEscalation
        When the condition number of G leaves fewer than ~40 significant
        bits, or when the achieved relative moment residual exceeds ``tol``.
    """
    T = ms.T
    a, b = _window(T, active_fraction)
    K = K if K is not None else ms.size
    rhs = ms.rhs()
    if all(float(r) == 0 for r in rhs):
        sig = ControlSignal.zero(T, K, "gram", n_samples)
        return ControlSignal(sig.t, sig.samples, K, "gram", T, 0.0, b - a, None, 0.0,
                             {"max_abs": 0.0, "max_rel": 0.0}, {"bits": bits, "reg": reg})
    lams = [e.lam for e in ms.entries]
    orders = [e.order for e in ms.entries]
    if bits <= 53:
        G = np.array([[float(_power_exp_integral(orders[i] + orders[j], mpmath.mpf(lams[i] + lams[j]), a, b))
                       for j in range(ms.size)] for i in range(ms.size)])
        cond = float(np.linalg.cond(G))
        c = np.linalg.solve(G + reg * np.eye(ms.size), np.array(rhs, dtype=float))
        res = G @ c - np.array(rhs, dtype=float)
        coeffs = tuple(mpmath.mpf(x) for x in c)
        max_abs = float(np.max(np.abs(res)))
        cond_m = mpmath.mpf(cond)
    else:
        with mpmath.workprec(bits):
            am, bm = mpmath.mpf(a), mpmath.mpf(b)
            G = _gram_matrix([mpmath.mpf(l) for l in lams], orders, am, bm)
            Greg = G + mpmath.mpf(reg) * mpmath.eye(ms.size)
            rv = mpmath.matrix([mpmath.mpf(r) for r in rhs])
            try:
                c = mpmath.lu_solve(Greg, rv)
            except ZeroDivisionError as exc:
                raise PrecisionEscalation(2 * bits, "singular Gram matrix") from exc
            res = G * c - rv
            max_abs = float(max(abs(x) for x in res))
            cond_m = mpmath.norm(G, 1) * mpmath.norm(mpmath.inverse(Greg), 1)
            coeffs = tuple(c[i] for i in range(ms.size))
    scale = max(abs(float(r)) for r in rhs)
    max_rel = max_abs / scale
    log2cond = float(mpmath.log(cond_m, 2)) if cond_m > 0 else 0.0
    if log2cond > max(bits, 53) - 40 or (reg == 0 and max_rel > tol):
        raise PrecisionEscalation(int(log2cond) + 64, f"Gram condition 2^{log2cond:.0f} or residual {max_rel:.2e} beyond budget")
    exp = Expansion(tuple(mpmath.mpf(l) for l in lams), tuple(orders), coeffs, a, b, max(bits, 64))
    return ControlSignal.from_expansion(
        exp, T, K, "gram", n_samples,
        residuals={"max_abs": max_abs, "max_rel": max_rel},
        diagnostics={"bits": bits, "reg": reg, "log2_condition": log2cond, "active_fraction": active_fraction},
    )


# --------------------------------------------------------------------------
# atoms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BiorthAtom:
    """Time function q on [0, T] (v-variable) targeting one group.

    ``on_target`` and ``off_target`` are measured moment residuals relative
    to the group's largest |rhs|; ``accepted`` is False when they exceed the
    threshold and ``diagnostics`` then says why.
    """

    group: int
    t: np.ndarray
    samples: np.ndarray
    method: str
    on_target: float
    off_target: float
    accepted: bool
    norm_l2: float
    expansion: Optional[Expansion] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return max(self.on_target, self.off_target)


def _fourier_moments(ms: MomentSystem, tau: np.ndarray, wJ: np.ndarray) -> np.ndarray:
    """Moments over (0, T) of q(t) = (1/pi) int Re(J(i tau) e^{i tau t}) d tau.

    The time integrals int_0^T t^p e^{(i tau - lam) t} dt are exact, so the
    only quadrature left is the tau rule that defines q itself.
    """
    T = ms.T
    out = []
    for e in ms.entries:
        z = 1j * tau - e.lam
        E = np.exp(z * T)
        if e.order == 0:
            kern = (E - 1) / z
        else:
            kern = (E * (T * z - 1) + 1) / z**2
        out.append(float((wJ * kern).real.sum() / math.pi))
    return np.array(out)


def _residuals(ms: MomentSystem, moments, group: int):
    rhs = np.array([float(e.rhs) for e in ms.entries])
    mask = np.array([e.group == group for e in ms.entries])
    scale = float(np.max(np.abs(rhs[mask]))) if mask.any() else 0.0
    if scale == 0:
        return 0.0, 0.0, scale
    on = float(np.max(np.abs(moments[mask] - rhs[mask]))) / scale
    off = float(np.max(np.abs(moments[~mask]))) / scale if (~mask).any() else 0.0
    return on, off, scale


def gram_atoms(
    ms: MomentSystem,
    bits: int = 256,
    active_fraction: float = 1.0,
    threshold: float = 1e-6,
    n_samples: int = 1001,
) -> list:
    """One minimal-norm atom per group (rhs kept on the group, zero elsewhere).

    Residuals are measured by an independent mpmath Gauss-Legendre quadrature
    of the atom, not taken from the solve.
    """
    atoms = []
    for g in ms.group_ids():
        sub = ms.restricted(g)
        sig = gram_moment_solve(sub, bits=bits, active_fraction=active_fraction, n_samples=n_samples)
        if sig.expansion is None:
            atoms.append(BiorthAtom(g, sig.t, sig.samples, "gram_solve", 0.0, 0.0, True, 0.0))
            continue
        moments = _measure_moments_mp(sub, sig.expansion)
        on, off, _ = _residuals(sub, moments, g)
        ok = on <= threshold and off <= threshold
        atoms.append(BiorthAtom(
            g, sig.t, sig.expansion.v(sig.t), "gram_solve", on, off, ok, sig.norm_l2_exact, sig.expansion,
            {"solve_residual": sig.residuals, "log2_condition": sig.diagnostics.get("log2_condition")},
        ))
    return atoms


def _measure_moments_mp(ms: MomentSystem, exp: Expansion, panels: int | None = None, order: int = 24):
    """Moments of an expansion by composite Gauss-Legendre in mpmath."""
    lmax = max(e.lam for e in ms.entries) + max(float(l) for l in exp.lams)
    panels = panels or int(max(16, lmax * (exp.b - exp.a) / 2))
    with mpmath.workprec(exp.bits):
        t, w = np.polynomial.legendre.leggauss(order)
        a, b = mpmath.mpf(exp.a), mpmath.mpf(exp.b)
        h = (b - a) / panels
        nodes, weights = [], []
        for i in range(panels):
            mid = a + (i + mpmath.mpf(1) / 2) * h
            for ti, wi in zip(t, w):
                nodes.append(mid + h / 2 * mpmath.mpf(ti))
                weights.append(h / 2 * mpmath.mpf(wi))
        vals = [mpmath.fsum(c * x**p * mpmath.exp(-l * x) for l, p, c in zip(exp.lams, exp.powers, exp.coeffs))
                for x in nodes]
        out = []
        for e in ms.entries:
            lam = mpmath.mpf(e.lam)
            out.append(float(mpmath.fsum(wk * x**e.order * mpmath.exp(-lam * x) * v
                                         for wk, x, v in zip(weights, nodes, vals))))
    return np.array(out)


# --------------------------------------------------------------------------
# Blaschke route
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BlaschkeProduct:
    """L(lam) = (1 + lam)^-power prod_mu (lam - mu)/(lam + mu) over retained eigenvalues outside the group.

    ``tail_log_bound`` bounds |log| of the omitted factors of the infinite
    product at the largest retained eigenvalue.
    """

    group: int
    zeros: tuple
    power: int = 3
    tail_log_bound: float = 0.0


def blaschke_for_group(ms: MomentSystem, group: int, K: int, nu: float, power: int = 3) -> BlaschkeProduct:
    zeros = tuple(sorted({e.lam for e in ms.entries if e.group != group}))
    lmax = max(e.lam for e in ms.entries)
    # omitted factors: fast indices > K and slow indices > K; |log((l-m)/(l+m))| <= 2l/m (1 + o(1))
    tail = 2 * lmax * (1.0 / K + 1.0 / (nu * K)) * 1.5
    return BlaschkeProduct(group, zeros, max(power, len([e for e in ms.entries if e.group == group])), tail)


def blaschke_eval(b: BlaschkeProduct, lam):
    """Value of the finite Blaschke product at lam (scalar or array, Re lam >= 0).

    Raises
    ------
    DomainError
        For Re lam < 0 or lam at a pole.
    """
    lam = np.asarray(lam, dtype=complex)
    if np.any(lam.real < -1e-14):
        raise DomainError("Blaschke product evaluated in the left half-plane")
    z = np.array(b.zeros, dtype=float)
    den = lam[..., None] + z
    if np.any(den == 0):
        raise DomainError("evaluation at a pole")
    val = np.prod((lam[..., None] - z) / den, axis=-1) / (1 + lam) ** b.power
    return val if val.ndim else complex(val)


@dataclass(frozen=True)
class MomentCoefficients:
    """Interpolation coefficients of J(lam) = P(lam) L(lam) for one group.

    P(lam) = sum_i c_i prod_{l != i} (lam - lam_l).  For the triple
    (nu k^2, i_k^2, i_hat_k^2) these are alpha, beta, gamma in that order.
    """

    lams: tuple
    coeffs: tuple
    residual: float

    @property
    def alpha(self):
        return self.coeffs[0] if len(self.coeffs) > 0 else 0.0

    @property
    def beta(self):
        return self.coeffs[1] if len(self.coeffs) > 1 else 0.0

    @property
    def gamma(self):
        return self.coeffs[2] if len(self.coeffs) > 2 else 0.0

    def poly(self, lam):
        lam = np.asarray(lam, dtype=complex)
        out = np.zeros(lam.shape, dtype=complex)
        for i, c in enumerate(self.coeffs):
            term = np.full(lam.shape, c, dtype=complex)
            for l, ll in enumerate(self.lams):
                if l != i:
                    term = term * (lam - ll)
            out += term
        return out


def coefficients(lams: Sequence[float], rhs: Sequence[float], b: BlaschkeProduct) -> MomentCoefficients:
    """Lagrange coefficients so that P(lam_i) L(lam_i) = rhs_i for the group.

    Raises
    ------
    PrecisionEscalation
        When two group eigenvalues coincide to ~40 bits (condensed group).
    """
    lams = [float(l) for l in lams]
    n = len(lams)
    for i in range(n):
        for l in range(i + 1, n):
            if abs(lams[i] - lams[l]) <= 2.0**-40 * max(abs(lams[i]), 1.0):
                raise PrecisionEscalation(106, f"group eigenvalues {lams[i]} and {lams[l]} condensed")
    coeffs = []
    for i in range(n):
        d = np.prod([lams[i] - lams[l] for l in range(n) if l != i]) if n > 1 else 1.0
        Li = blaschke_eval(b, lams[i]).real
        if Li == 0:
            raise DomainError("Blaschke product vanishes at a group eigenvalue")
        coeffs.append(float(rhs[i]) / (d * Li))
    mc = MomentCoefficients(tuple(lams), tuple(coeffs), 0.0)
    J = mc.poly(np.array(lams)) * blaschke_eval(b, np.array(lams, dtype=complex))
    r = np.abs(J.real - np.array(rhs, dtype=float))
    scale = max(1e-300, float(np.max(np.abs(rhs)))) if n else 1.0
    return MomentCoefficients(tuple(lams), tuple(coeffs), float(np.max(r)) / scale if n else 0.0)


def _tau_max(mc: MomentCoefficients, b: BlaschkeProduct, tol: float, cap: float) -> float:
    tau = 8.0
    while tau < cap:
        env = abs(mc.poly(1j * tau)) / (1 + tau * tau) ** (b.power / 2)
        if env <= tol:
            return tau
        tau *= 2
    return cap


def synthesize_atom_blaschke(
    ms: MomentSystem,
    group: int,
    K: int,
    nu: float,
    tail_tolerance: float = 1e-14,
    tau_cap: float = 2000.0,
    threshold: float = 1e-6,
    n_samples: int = 1001,
) -> BiorthAtom:
    """Atom from Fourier inversion of J = P L on the imaginary axis, restricted to (0, T).

    q(t) = (1/pi) int_0^tau_max Re(J(i tau) e^{i tau t}) d tau by composite
    Gauss-Legendre with panel width <= pi/(4T).  tau_max comes from the
    envelope |P(i tau)| (1 + tau^2)^(-power/2) <= tail_tolerance, capped at
    ``tau_cap``.  All moments are re-measured; atoms above ``threshold``
    are returned with accepted=False and a diagnostic.
    """
    if ms.regime == "rational" or any(e.order for e in ms.entries):
        raise DomainError("Blaschke synthesis covers the irrational regime; use the Gram route")
    T = ms.T
    ents = [e for e in ms.entries if e.group == group]
    t = np.linspace(0.0, T, n_samples)
    if all(float(e.rhs) == 0 for e in ents):
        return BiorthAtom(group, t, np.zeros_like(t), "blaschke_fourier", 0.0, 0.0, True, 0.0)
    b = blaschke_for_group(ms, group, K, nu)
    mc = coefficients([e.lam for e in ents], [e.rhs for e in ents], b)
    tmax = _tau_max(mc, b, tail_tolerance * max(abs(float(e.rhs)) for e in ents), tau_cap)
    width = math.pi / (4 * T)
    tau, w = gauss_legendre_panels(0.0, tmax, int(math.ceil(tmax / width)), order=8)
    J = mc.poly(1j * tau) * blaschke_eval(b, 1j * tau)

    def q(s):
        s = np.asarray(s, dtype=float)
        out = np.empty(s.shape)
        for i0 in range(0, s.size, 256):
            blk = s[i0:i0 + 256]
            out[i0:i0 + 256] = (np.exp(1j * np.outer(blk, tau)) @ (w * J)).real / math.pi
        return out

    moments = _fourier_moments(ms, tau, w * J)
    on, off, scale = _residuals(ms, moments, group)
    ok = on <= threshold and off <= threshold
    samples = q(t)
    X, W = gauss_legendre_panels(0.0, T, max(64, int(tmax * T / (2 * math.pi))), order=8)
    norm2 = float(np.sum(W * q(X) ** 2))
    diag = {
        "tau_max": tmax,
        "tau_cap_hit": tmax >= tau_cap,
        "coefficient_residual": mc.residual,
        "tail_log_bound": b.tail_log_bound,
        "power": b.power,
        "norm_bound": _norm_bound(mc, nu),
    }
    if not ok:
        diag["reason"] = (f"restricted atom misses its moments: on-target {on:.2e}, off-target {off:.2e} "
                          f"(threshold {threshold:.0e})")
    return BiorthAtom(group, t, samples, "blaschke_fourier", on, off, ok, math.sqrt(norm2), None, diag)


def _norm_bound(mc: MomentCoefficients, nu: float) -> dict:
    """Bound on ||q_tilde||^2_{L^2(0, inf)} from the envelope of P on the imaginary axis.

    With M = max group eigenvalue, |i tau - a| <= M (1 + tau^2)^(1/2) gives
    ||q||^2 <= (3/2) M^4 {(alpha + beta)^2 + beta^2 (lam_1 - lam_0)^2 / M^2 + gamma^2};
    C is that factor expressed against nu^2 k^4 i^4 i_hat^4.
    """
    lams = list(mc.lams) + [1.0] * (3 - len(mc.lams))
    M = max(1.0, *[abs(l) for l in mc.lams])
    a, bb, g = mc.alpha, mc.beta, mc.gamma
    gap = (lams[1] - lams[0]) if len(mc.lams) > 1 else 0.0
    bracket = (a + bb) ** 2 + bb**2 * gap**2 / M**2 + g**2
    bound = 1.5 * M**4 * bracket * 3
    prod = lams[0] ** 2 * lams[1] ** 2 * lams[2] ** 2
    return {"bound": bound, "C": bound / (prod * max(bracket, 1e-300)) if bracket > 0 else 0.0,
            "bracket": bracket}


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------


def control_series(
    ms: MomentSystem,
    method: str = "gram",
    K: int | None = None,
    nu: float | None = None,
    bits: int = 256,
    active_fraction: float = DEFAULT_ACTIVE_FRACTION,
    threshold: float = 1e-6,
    n_samples: int = 1001,
) -> ControlSignal:
    """Assemble u(t) = sum_k q_k(T - t).

    ``gram``: one minimal-norm solve for the whole system (the sum of the
    per-group minimal-norm atoms, by linearity); per-group norms are
    exported as diagnostics.  ``blaschke``: per-group Fourier atoms; any
    rejected atom aborts with :class:`AssemblyError`.
    """
    K = K if K is not None else ms.size
    T = ms.T
    if all(float(e.rhs) == 0 for e in ms.entries):
        return ControlSignal.zero(T, K, method, n_samples)
    if method == "gram":
        sig = gram_moment_solve(ms, bits=bits, active_fraction=active_fraction, n_samples=n_samples, K=K)
        per_group = {}
        for g in ms.group_ids():
            sub = ms.restricted(g)
            if all(float(e.rhs) == 0 for e in sub.entries):
                per_group[g] = 0.0
                continue
            per_group[g] = gram_moment_solve(sub, bits=bits, active_fraction=active_fraction, n_samples=3).norm_l2_exact
        partial = np.cumsum([per_group[g] ** 2 for g in ms.group_ids()])
        diag = dict(sig.diagnostics)
        diag.update({"group_norms": per_group, "sum_sq_partial": partial.tolist()})
        measured = _measure_moments_mp(ms, sig.expansion)
        rhs = np.array([float(e.rhs) for e in ms.entries])
        res = dict(sig.residuals)
        res["measured_max_rel"] = float(np.max(np.abs(measured - rhs)) / np.max(np.abs(rhs)))
        return ControlSignal(sig.t, sig.samples, K, "gram", T, sig.norm_l2, sig.active_until, sig.expansion,
                             sig.norm_l2_exact, res, diag)
    if method == "blaschke":
        if nu is None:
            raise InputError("the Blaschke route needs nu")
        atoms = [synthesize_atom_blaschke(ms, g, K, nu, threshold=threshold, n_samples=n_samples) for g in ms.group_ids()]
        bad = [a for a in atoms if not a.accepted]
        if bad:
            raise AssemblyError([a.group for a in bad], {a.group: a.diagnostics for a in bad})
        t = atoms[0].t
        v = np.sum([a.samples for a in atoms], axis=0)
        u = v[::-1]
        diag = {"group_norms": {a.group: a.norm_l2 for a in atoms},
                "sum_sq_partial": np.cumsum([a.norm_l2**2 for a in atoms]).tolist()}
        res = {"max_on_target": max(a.on_target for a in atoms), "max_off_target": max(a.off_target for a in atoms)}
        return ControlSignal(t, u, K, "blaschke", T, ControlSignal.trapezoid_norm(t, u), T, None, None, res, diag)
    raise InputError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# penalized (HUM) route
# --------------------------------------------------------------------------


def hum_control(
    y0: VectorField2,
    T: float,
    eps: float,
    model,
    tol: float = 1e-8,
    max_iter: int | None = None,
    n_samples: int = 1001,
) -> ControlSignal:
    """Minimizer of J(u) = 1/2 ||u||^2 + 1/(2 eps) ||y(T)||^2_{H^-1} for the Galerkin model.

    With y(T) = e^{AT} y0 - G z and u = -g^T e^{A^T (T - t)} z, optimality
    reduces to (G + eps M^-1) z = e^{AT} y0, where G is the controllability
    Gramian and M the H^-1 weight.  The system is symmetric positive
    definite and is solved by conjugate gradients to relative residual
    ``tol``.  The control is an exponential sum, so it is returned with its
    expansion.

    Parameters
    ----------
    model : nullctl.simulate.GalerkinModel
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    n = 2 * model.N
    y0v = y0.padded(model.N).as_array()
    if not np.any(y0v):
        return ControlSignal.zero(T, model.N, "hum", n_samples)
    G = model.gramian(T)
    Minv = 1.0 / model.hm1_weights()
    rhs = model.propagate_free(y0v, T)
    Aop = LinearOperator((n, n), matvec=lambda x: G @ x + eps * Minv * x, dtype=float)
    history = []

    def cb(xk):
        history.append(float(np.linalg.norm(G @ xk + eps * Minv * xk - rhs) / np.linalg.norm(rhs)))

    max_iter = max_iter or 20 * n
    z, info = cg(Aop, rhs, rtol=tol, atol=0.0, maxiter=max_iter, callback=cb)
    rel = float(np.linalg.norm(G @ z + eps * Minv * z - rhs) / np.linalg.norm(rhs))
    if info != 0 or rel > 10 * tol:
        raise ConvergenceError(f"CG stopped at relative residual {rel:.2e} after {len(history)} iterations", history[-10:])
    lams, powers, coeffs = model.trace_expansion(z)
    exp = Expansion(tuple(lams), tuple(powers), tuple(coeffs), 0.0, float(T), 128).scaled(-1)
    yT = rhs - G @ z
    w = model.hm1_weights()
    yT_norm = float(np.sqrt(np.sum(w * yT**2)))
    y0_norm = float(np.sqrt(np.sum(w * y0v**2)))
    sig = ControlSignal.from_expansion(exp, T, model.N, "hum", n_samples)
    u2 = sig.norm_l2_exact**2
    diag = {
        "eps": eps,
        "cg_iterations": len(history),
        "cg_relative_residual": rel,
        "yT_hm1_dual": yT_norm,
        "bound_constant": (u2 + (2 / eps) * yT_norm**2) / y0_norm**2,
    }
    return ControlSignal(sig.t, sig.samples, model.N, "hum", T, sig.norm_l2, T, exp, sig.norm_l2_exact,
                         {"relative_gradient": rel}, diag)
