"""Spectral-Galerkin simulation of the controlled system and its adjoint.

With y1 = sum a_n phi_n, y2 = sum b_n phi_n and the Dirichlet control
y2(0, t) = u(t), testing against phi_n and integrating by parts gives

    a_n' = -n^2 a_n - sum_m Q_nm b_m,
    b_n' = nu (u(t) phi_n'(0) - n^2 b_n),      phi_n'(0) = n sqrt(2/pi),

where Q_nm = <q phi_m, phi_n>.  In block form y' = A y + g u with

    A = [[-D, -Q], [0, -nu D]],   D = diag(n^2),   g = (0, nu n sqrt(2/pi)).

The adjoint solves theta_t = L* theta backwards from theta(T) = theta0,
which in coefficients is theta(t) = exp(A^T (T - t)) theta0, and the
boundary trace nu theta_2'(0) is g . theta.  A is block triangular, so
exp(A s) is available in closed form and no matrix exponential is needed
outside the time stepper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import mpmath
import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

from . import _io
from .errors import DomainError, InputError, NormalizationError, PrecisionEscalation
from .fnspace import MP_OPS, SQRT_2_OVER_PI, VectorField2, gauss_legendre_panels
from .moment import ControlSignal, Expansion
from .spectral import EigenPair, NuValue, ProblemData, apply_adjoint, psi_closed_form, psi_hat

__all__ = [
    "GalerkinModel",
    "Trajectory",
    "forward",
    "forward_terminal_exact",
    "adjoint",
    "adjoint_eigenflow",
    "adjoint_pde_residual",
    "DualityResult",
    "duality_residual",
    "random_triple",
    "ObservabilityReport",
    "observability_ratio",
    "witness_slow",
    "witness_fast",
    "witness_pair",
    "witness_chain",
    "BlowupResult",
    "blowup_experiment",
    "NullControlReport",
    "verify_null_control",
    "GapReport",
    "gap_check",
    "DEFAULT_STEPS",
]

DEFAULT_STEPS = 2048


# --------------------------------------------------------------------------
# Galerkin model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GalerkinModel:
    """Truncation of the controlled system to N sine modes per component."""

    nu: float
    Q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise InputError("Q must be a square matrix")
        if not (self.nu > 0 and np.all(np.isfinite(Q))):
            raise InputError("need nu > 0 and a finite coupling matrix")
        object.__setattr__(self, "Q", Q)

    @classmethod
    def from_problem(cls, p: ProblemData, N: int | None = None) -> "GalerkinModel":
        N = N or 2 * p.K
        return cls(float(p.nu.nu), p.q.matrix(N))

    @property
    def N(self) -> int:
        return self.Q.shape[0]

    @property
    def n(self) -> np.ndarray:
        return np.arange(1, self.N + 1, dtype=float)

    @property
    def A(self) -> np.ndarray:
        N, D = self.N, np.diag(self.n**2)
        A = np.zeros((2 * N, 2 * N))
        A[:N, :N] = -D
        A[:N, N:] = -self.Q
        A[N:, N:] = -self.nu * D
        return A

    @property
    def g(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.N), self.nu * self.n * SQRT_2_OVER_PI])

    def weights(self, space: str) -> np.ndarray:
        n2 = self.n**2
        w = {"L2": np.ones(self.N), "H10": n2, "Hm1": 1.0 / n2}.get(space)
        if w is None:
            raise InputError(f"unknown space {space!r}")
        return np.concatenate([w, w])

    def hm1_weights(self) -> np.ndarray:
        return self.weights("Hm1")

    def norm(self, y, space: str = "Hm1") -> float:
        y = np.asarray(y, dtype=float)
        return float(np.sqrt(np.sum(self.weights(space) * y**2, axis=-1)))

    def _gaps(self) -> np.ndarray:
        """d_nm = n^2 - nu m^2."""
        return self.n[:, None] ** 2 - self.nu * self.n[None, :] ** 2

    def _resonant(self) -> np.ndarray:
        d = self._gaps()
        return np.abs(d) <= 1e-12 * self.n[:, None] ** 2

    def expm(self, s: float) -> np.ndarray:
        """exp(A s) from the block-triangular closed form."""
        N, n2 = self.N, self.n**2
        a, b = self.nu * n2[None, :], n2[:, None]
        d = b - a
        res = self._resonant()
        dd = np.where(res, 1.0, d)
        # (e^{-a s} - e^{-b s}) / (b - a), factored on the slower exponential
        kern = np.where(d > 0, -np.exp(-a * s) * np.expm1(-np.abs(d) * s), np.exp(-b * s) * np.expm1(-np.abs(d) * s)) / dd
        kern = np.where(res, s * np.exp(-b * s), kern)
        E = np.zeros((2 * N, 2 * N))
        E[:N, :N] = np.diag(np.exp(-n2 * s))
        E[:N, N:] = -self.Q * kern
        E[N:, N:] = np.diag(np.exp(-self.nu * n2 * s))
        return E

    def propagate_free(self, y, T: float) -> np.ndarray:
        return self.expm(T) @ np.asarray(y, dtype=float)

    def gramian(self, T: float) -> np.ndarray:
        """int_0^T exp(A s) g g^T exp(A^T s) ds from the Lyapunov equation."""
        g = self.g
        eg = self.expm(T) @ g
        G = solve_continuous_lyapunov(self.A, np.outer(eg, eg) - np.outer(g, g))
        return 0.5 * (G + G.T)

    def trace_expansion(self, z):
        """g . exp(A^T s) z = sum_i c_i s^{p_i} e^{-lam_i s}.

        This is the boundary trace at time T - s of the adjoint started from
        z; as a function of s it is a finite exponential sum.
        """
        z = np.asarray(z, dtype=float)
        N, n2 = self.N, self.n**2
        z1, z2 = z[:N], z[N:]
        g2 = self.nu * self.n * SQRT_2_OVER_PI
        d = self._gaps()
        res = self._resonant()
        lams, powers, coeffs = [], [], []
        W = self.Q * g2[None, :] * z1[:, None]  # z1_n Q_nm g2_m
        with np.errstate(divide="ignore", invalid="ignore"):
            Wd = np.where(res, 0.0, W / np.where(res, 1.0, d))
        slow = g2 * z2 - Wd.sum(axis=0)
        fast = Wd.sum(axis=1)
        for m in range(N):
            lams.append(self.nu * n2[m])
            powers.append(0)
            coeffs.append(slow[m])
        for k in range(N):
            lams.append(n2[k])
            powers.append(0)
            coeffs.append(fast[k])
        for k, m in zip(*np.nonzero(res)):
            lams.append(n2[k])
            powers.append(1)
            coeffs.append(-W[k, m])
        keep = [i for i, c in enumerate(coeffs) if c != 0]
        return [lams[i] for i in keep], [powers[i] for i in keep], [coeffs[i] for i in keep]

    def trace(self, z, s) -> np.ndarray:
        """Numerical values of g . exp(A^T s) z at the points s."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        for lam, p, c in zip(*self.trace_expansion(z)):
            out += c * s**p * np.exp(-lam * s)
        return out


def _as_array(y, N: int) -> np.ndarray:
    if isinstance(y, VectorField2):
        return y.padded(N).as_array() if y.N <= N else np.concatenate([y.first.coeffs[:N], y.second.coeffs[:N]])
    y = np.asarray(y, dtype=float)
    if y.size != 2 * N:
        raise InputError(f"state must have {2 * N} coefficients")
    return y


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """States on a time grid; ``states[m]`` stacks (first, second) coefficients."""

    t: np.ndarray
    states: np.ndarray
    N_sim: int
    kind: str = "forward"

    def __post_init__(self):
        if not np.all(np.isfinite(self.states)):
            raise DomainError("non-finite state in trajectory")

    @property
    def norm_Hm1(self) -> np.ndarray:
        return _norms(self.states, self.N_sim, "Hm1")

    @property
    def norm_L2(self) -> np.ndarray:
        return _norms(self.states, self.N_sim, "L2")

    def at(self, m: int) -> VectorField2:
        return VectorField2.from_array(self.states[m])

    @property
    def terminal(self) -> VectorField2:
        return self.at(-1)

    def write_csv(self, path, modes_path=None):
        rows = zip(self.t.tolist(), self.norm_Hm1.tolist(), self.norm_L2.tolist())
        out = _io.write_csv(path, ("t", "norm_Hm1", "norm_L2"), rows)
        if modes_path is not None:
            N = self.N_sim
            header = ["t"] + [f"a{n}" for n in range(1, N + 1)] + [f"b{n}" for n in range(1, N + 1)]
            _io.write_csv(modes_path, header, ([t] + s.tolist() for t, s in zip(self.t.tolist(), self.states)))
        return out


def _norms(states, N: int, space: str) -> np.ndarray:
    n2 = np.arange(1, N + 1, dtype=float) ** 2
    w = {"L2": np.ones(N), "Hm1": 1.0 / n2, "H10": n2}[space]
    w = np.concatenate([w, w])
    return np.sqrt(np.sum(w * states**2, axis=1))


def _hold_matrices(model: GalerkinModel, h: float, degree: int):
    """exp(A h) and G_i = int_0^h exp(A (h - r)) g r^i / i! dr, i <= degree (Van Loan)."""
    n = 2 * model.N
    M = np.zeros((n + degree + 1, n + degree + 1))
    M[:n, :n] = model.A
    M[:n, n] = model.g
    for i in range(degree):
        M[n + i, n + i + 1] = 1.0
    E = expm(M * h)
    return E[:n, :n], E[:n, n:]


def _taylor_coeffs(uj: np.ndarray, h: float, degree: int) -> np.ndarray:
    """Per-step Taylor data d_i with u(t_j + r) ~ sum_i d_i r^i / i!."""
    M = uj.size - 1
    if degree == 1:
        return np.stack([uj[:-1], np.diff(uj) / h], axis=1)
    if degree != 3 or M < 3:
        raise InputError("hold must be 'linear' or 'cubic' (cubic needs >= 3 steps)")
    out = np.empty((M, 4))
    fact = np.array([1.0, 1.0, 2.0, 6.0])
    for j in range(M):
        s0 = min(max(j - 1, 0), M - 3)
        r = (np.arange(s0, s0 + 4) - j) * h
        V = np.vander(r, 4, increasing=True)
        out[j] = np.linalg.solve(V, uj[s0:s0 + 4]) * fact
    return out


def _control_callable(u) -> Callable:
    if u is None:
        return lambda t: np.zeros_like(np.asarray(t, dtype=float))
    if isinstance(u, ControlSignal) or callable(u):
        return lambda t: np.asarray(u(np.asarray(t, dtype=float)), dtype=float)
    raise InputError("control must be a ControlSignal, a callable or None")


def forward(
    y0,
    u,
    model: GalerkinModel,
    T: float,
    steps: int = DEFAULT_STEPS,
    hold: str = "cubic",
) -> Trajectory:
    """Exponential-integrator solution of y' = A y + g u on [0, T].

    The control is replaced on each step by its local cubic
    (``hold="cubic"``) or piecewise linear (``hold="linear"``, the
    trapezoidal Duhamel rule, second order) interpolant; the resulting
    Duhamel integrals are exact, so the scheme is stable for any step and
    the step only limits accuracy.  A ControlSignal supported on
    [0, active_until] is integrated on the two pieces separately so the
    jump at the end of the support is not smeared.
    """
    if not T > 0 or steps < 1:
        raise InputError("need T > 0 and steps >= 1")
    degree = {"linear": 1, "cubic": 3}.get(hold)
    if degree is None:
        raise InputError(f"unknown hold {hold!r}")
    ufun = _control_callable(u)
    Tc = T
    if isinstance(u, ControlSignal) and 0 < u.active_until < T * (1 - 1e-12):
        Tc = u.active_until
    n1 = steps if Tc == T else min(steps - degree, max(degree, int(round(steps * Tc / T))))
    pieces = [(0.0, Tc, n1, ufun)]
    if Tc < T:
        pieces.append((Tc, T, steps - n1, None))
    ts, states = [np.array([0.0])], [_as_array(y0, model.N)[None, :]]
    y = states[0][0]
    for a, b, n, f in pieces:
        h = (b - a) / n
        t = np.linspace(a, b, n + 1)
        E, G = _hold_matrices(model, h, degree)
        if f is None:
            forced = np.zeros((n, 2 * model.N))
        else:
            forced = _taylor_coeffs(f(t), h, degree) @ G.T
        out = np.empty((n, 2 * model.N))
        for j in range(n):
            y = E @ y + forced[j]
            out[j] = y
        ts.append(t[1:])
        states.append(out)
    return Trajectory(np.concatenate(ts), np.vstack(states), model.N, "forward")


def forward_terminal_exact(y0, expansion: Expansion, model: GalerkinModel, T: float) -> np.ndarray:
    """y(T) for an exponential-sum control, with every Duhamel integral in closed form.

    For u(t) = v(T - t) the forced part is int exp(A s) g v(s) ds.  Its
    second block is g2_m M(nu m^2) and its first block
    -sum_m Q_nm g2_m (M(nu m^2) - M(n^2)) / (n^2 - nu m^2), with
    M(c) = int e^{-c s} v(s) ds evaluated by incomplete gamma functions.
    The differences are formed in mpmath, so large cancelling control
    coefficients cost no accuracy.
    """
    N = model.N
    n2 = model.n**2
    g2 = model.nu * model.n * SQRT_2_OVER_PI
    res = model._resonant()
    with mpmath.workprec(expansion.bits):
        Ms = [expansion.moment(model.nu * c) for c in n2]
        Mf = [expansion.moment(c) for c in n2]
        Mf1 = [expansion.moment(c, 1) if res[k].any() else None for k, c in enumerate(n2)]
        second = [g2[m] * Ms[m] for m in range(N)]
        first = []
        for k in range(N):
            acc = mpmath.mpf(0)
            for m in range(N):
                Qkm = model.Q[k, m]
                if Qkm == 0:
                    continue
                if res[k, m]:
                    acc += -Qkm * g2[m] * Mf1[k]
                else:
                    d = mpmath.mpf(n2[k]) - mpmath.mpf(model.nu) * n2[m]
                    acc += -Qkm * g2[m] * (Ms[m] - Mf[k]) / d
            first.append(acc)
        forced = np.array([float(x) for x in first + second])
    return model.propagate_free(_as_array(y0, N), T) + forced


# --------------------------------------------------------------------------
# adjoint
# --------------------------------------------------------------------------


def adjoint(theta0, model: GalerkinModel, T: float, times: Sequence[float] | None = None) -> Trajectory:
    """Galerkin adjoint theta(t) = exp(A^T (T - t)) theta0 on a time grid."""
    t = np.linspace(0.0, T, 257) if times is None else np.asarray(times, dtype=float)
    z = _as_array(theta0, model.N)
    states = np.array([model.expm(T - tt).T @ z for tt in t])
    return Trajectory(t, states, model.N, "adjoint")


def adjoint_eigenflow(entry: EigenPair, T: float, t) -> tuple:
    """Closed-form adjoint from an eigen-descriptor.

    theta(t) = e^{-lam (T - t)} Phi, or for a Jordan chain entry
    e^{-zeta (T - t)} (Phi_hat - (T - t) I Phi_2).

    Returns
    -------
    states : ndarray, shape (len(t), 2 N)
    trace : ndarray
        nu theta_2'(0, t) from the stored observation constants.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    tau = T - t
    decay = np.exp(-entry.lam * tau)
    phi = entry.eigfn.as_array()
    obs = float(entry.observation)
    if entry.generalized_partner is None or entry.classification != "generalized-chain":
        return decay[:, None] * phi[None, :], decay * obs
    I = float(entry.coupling_integral)
    hat = entry.generalized_partner.as_array()
    states = decay[:, None] * (hat[None, :] - (tau * I)[:, None] * phi[None, :])
    trace = decay * (float(entry.partner_observation) - tau * I * obs)
    return states, trace


def adjoint_pde_residual(p: ProblemData, entry: EigenPair, T: float, t) -> float:
    """max_t ||theta_t - L* theta||_L2 / ||theta||_L2 for the closed-form eigenflow."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    states, _ = adjoint_eigenflow(entry, T, t)
    worst = 0.0
    for tt, s in zip(t, states):
        tau = T - tt
        decay = math.exp(-entry.lam * tau)
        if entry.classification == "generalized-chain":
            I = float(entry.coupling_integral)
            dt = entry.lam * s + decay * I * entry.eigfn.as_array()
        else:
            dt = entry.lam * s
        theta = VectorField2.from_array(s)
        r = VectorField2.from_array(dt) - apply_adjoint(p, theta)
        worst = max(worst, r.norm("L2") / max(theta.norm("L2"), 1e-300))
    return worst


# --------------------------------------------------------------------------
# duality identity
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DualityResult:
    """Terms of int u B*D theta_x(0) dt = <y(T), theta0> - <y0, theta(0)>."""

    residual: float
    boundary_term: float
    terminal_term: float
    initial_term: float
    steps: int
    hold: str


def duality_residual(
    y0,
    u,
    theta0,
    model: GalerkinModel,
    T: float,
    steps: int = DEFAULT_STEPS,
    hold: str = "cubic",
) -> DualityResult:
    """Normalized residual of the duality identity.

    The forward state comes from :func:`forward`; the adjoint and its
    boundary trace are exact for the Galerkin model, and the boundary
    integral uses composite Gauss-Legendre quadrature of the continuous
    control, so the residual measures the forward time discretization.
    """
    z = _as_array(theta0, model.N)
    y0v = _as_array(y0, model.N)
    traj = forward(y0v, u, model, T, steps, hold)
    ufun = _control_callable(u)
    X, W = gauss_legendre_panels(0.0, T, 256, order=16)
    boundary = float(np.sum(W * ufun(X) * model.trace(z, T - X)))
    terminal = float(traj.states[-1] @ z)
    initial = float(y0v @ (model.expm(T).T @ z))
    scale = max(abs(boundary), abs(terminal), abs(initial), 1e-300)
    r = abs(boundary - terminal + initial) / scale
    return DualityResult(r, boundary, terminal, initial, steps, hold)


def random_triple(rng: np.random.Generator, N: int, T: float, modes: int = 6, freqs: int = 4):
    """Random band-limited (y0, u, theta0): `modes` sine modes per component, u a trigonometric polynomial in t."""
    def field():
        v = np.zeros(2 * N)
        m = min(modes, N)
        v[:m] = rng.normal(size=m)
        v[N:N + m] = rng.normal(size=m)
        return v

    a = rng.normal(size=freqs + 1)
    b = rng.normal(size=freqs + 1)

    def u(t):
        t = np.asarray(t, dtype=float)
        w = np.arange(freqs + 1)[:, None] * math.pi / T
        return a @ np.cos(w * t) + b @ np.sin(w * t)

    return field(), u, field()


# --------------------------------------------------------------------------
# observability
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservabilityReport:
    """||theta(0)||^2_{H^1_0} / int_0^T |nu theta_2'(0, t)|^2 dt for one theta0."""

    descriptor: dict
    T: float
    numerator: object
    denominator: object
    ratio: object
    infinite: bool = False

    @classmethod
    def build(cls, descriptor: dict, T: float, num, den, floor=None) -> "ObservabilityReport":
        if den < 0:
            raise DomainError("negative observation energy")
        floor = mpmath.mpf(0) if floor is None else floor
        if den <= floor:
            return cls(descriptor, T, num, den, mpmath.inf, True)
        return cls(descriptor, T, num, den, num / den, False)

    @property
    def log10_ratio(self) -> float:
        return float(mpmath.log10(self.ratio)) if not self.infinite else math.inf

    def to_json(self) -> dict:
        return {
            "theta0": self.descriptor,
            "T": self.T,
            "numerator": _io.mp_text(self.numerator),
            "denominator": _io.mp_text(self.denominator),
            "ratio": "inf" if self.infinite else _io.mp_text(self.ratio),
            "log10_ratio": self.log10_ratio,
        }


def _int_pow_exp(n: int, c, T):
    """int_0^T s^n e^{-c s} ds in the current precision."""
    c = mpmath.mpf(c)
    if c == 0:
        return mpmath.mpf(T) ** (n + 1) / (n + 1)
    return mpmath.gammainc(n + 1, 0, c * T) / c ** (n + 1)


def observability_ratio(theta0, model: GalerkinModel, T: float, bits: int = 128, descriptor: dict | None = None) -> ObservabilityReport:
    """Observability quotient for a generic theta0 in the Galerkin model.

    The trace is an exponential sum, so the denominator is a finite sum of
    closed-form integrals; it is evaluated in mpmath because the sum
    cancels heavily for nearly unobservable data.
    """
    z = _as_array(theta0, model.N)
    th0 = model.expm(T).T @ z
    lams, powers, coeffs = model.trace_expansion(z)
    with mpmath.workprec(bits):
        num = mpmath.fsum(mpmath.mpf(w) * mpmath.mpf(x) ** 2 for w, x in zip(model.weights("H10"), th0))
        den = mpmath.fsum(
            mpmath.mpf(ci) * mpmath.mpf(cj) * _int_pow_exp(pi + pj, mpmath.mpf(li) + mpmath.mpf(lj), T)
            for li, pi, ci in zip(lams, powers, coeffs)
            for lj, pj, cj in zip(lams, powers, coeffs)
        )
        den = max(den, mpmath.mpf(0))
        scale = mpmath.fsum(abs(mpmath.mpf(c)) for c in coeffs) ** 2 * T
        return ObservabilityReport.build(descriptor or {"kind": "galerkin"}, T, num, den, scale * mpmath.ldexp(1, -bits + 16))


def witness_slow(nu: float, k: int, T: float, bits: int = 64) -> ObservabilityReport:
    """theta0 = Phi_2,k = (0, phi_k): ratio pi k^2 e^{-2 nu k^2 T} / (nu (1 - e^{-2 nu k^2 T}))."""
    with mpmath.workprec(bits):
        nu_m = mpmath.mpf(nu)
        lam = nu_m * k * k
        num = k * k * mpmath.exp(-2 * lam * T)
        obs2 = (nu_m * k) ** 2 * 2 / mpmath.pi
        den = obs2 * (-mpmath.expm1(-2 * lam * T)) / (2 * lam)
        return ObservabilityReport.build({"kind": "slow", "k": k}, T, num, den)


def witness_fast(p: ProblemData, k: int, T: float, bits: int = 64) -> ObservabilityReport:
    """theta0 = Phi_1,k = (phi_k, psi_k) with the closed-form psi_k.

    Raises
    ------
    NormalizationError
        When psi_k'(0) = 0 (for instance q = 0), where the normalized witness
        does not exist.
    """
    psi, a = psi_closed_form(p, k)
    with mpmath.workprec(bits):
        obs = mpmath.mpf(p.nu.nu) * mpmath.mpf(a)
        if abs(obs) <= mpmath.ldexp(1, -p.ctx.working_bits + 20):
            raise NormalizationError(k * k, "zero boundary observation; the fast witness is undefined")
        n = np.arange(1, psi.N + 1, dtype=float)
        h10 = k * k + mpmath.mpf(float(np.sum(n**2 * psi.coeffs**2)))
        lam = mpmath.mpf(k * k)
        num = mpmath.exp(-2 * lam * T) * h10
        den = obs**2 * (-mpmath.expm1(-2 * lam * T)) / (2 * lam)
        return ObservabilityReport.build({"kind": "fast", "k": k}, T, num, den)


def witness_pair(p: ProblemData, a: int, b: int, T: float, bits: int | None = None, W: int = 64) -> ObservabilityReport:
    """theta0 = psi_1,a - psi_2,b (both normalized by their observations).

    With g = a^2 - nu b^2 the trace is e^{-a^2 tau} - e^{-nu b^2 tau}
    = -e^{-a^2 tau} expm1(g tau), and theta(0) is assembled from the
    factored difference of the normalized eigenvectors, so nothing cancels
    even when g is far below the working precision.
    """
    from .condensation import _series_sums

    bits = bits or max(128, p.ctx.working_bits)
    with mpmath.workprec(bits):
        g = p.nu.sq_gap(a, b, bits)
        if g == 0:
            raise DomainError(f"a^2 = nu b^2 at (a, b) = ({a}, {b})")
        nu = p.nu.nu_value(bits)
        s2 = mpmath.sqrt(2 / mpmath.pi)
        cb = p.q.coeff(a, b, MP_OPS)
        R, S = _series_sums(p, a, b, W, bits)
        O = nu * s2 * (b * cb + g * R)
        if O == 0:
            raise NormalizationError(a * a, "zero observation of the fast eigenfunction")
        obs2 = nu * b * s2
        E = mpmath.expm1(g * T)
        a2 = mpmath.mpf(a) ** 2
        num = mpmath.exp(-2 * a2 * T) * (g**2 * (a2 + S) / O**2 + b * b * (g * R / (O * b) - E / obs2) ** 2)
        f = lambda tau: mpmath.exp(-2 * a2 * tau) * mpmath.expm1(g * tau) ** 2
        den = mpmath.quad(f, mpmath.linspace(0, T, 9))
        return ObservabilityReport.build({"kind": "pair", "a": a, "b": b, "gap": _io.mp_text(g)}, T, num, den)


def witness_chain(p: ProblemData, l: int, T: float, bits: int | None = None) -> ObservabilityReport:
    """Rational witness theta0 = a Phi_hat + b Phi_2 with zero trace at t = T.

    With (L* - zeta)(phi_k, psi_hat) = m Phi_2 (k = i0 l, n = j0 l,
    psi_hat = alpha phi_n + beta), the choice b = -alpha a cancels the
    boundary trace at tau = 0 and leaves trace(tau) = -a m nu n sqrt(2/pi)
    tau e^{-zeta tau}; the initial state is a e^{-zeta T}
    ((phi_k, beta) - T m Phi_2).  Taking a = I(zeta) reproduces the
    sequence a_l = I, b_l = -I psi_hat'(0)/phi_n'(0); the ratio does not
    depend on that scale.
    """
    bits = bits or max(128, p.ctx.working_bits)
    ch = psi_hat(p, l)
    k, n = ch.k, ch.n
    zeta = p.nu.i0**2 * l * l
    with mpmath.workprec(bits):
        m = mpmath.mpf(ch.m) if not isinstance(ch.m, mpmath.mpf) else ch.m
        if m == 0:
            raise DomainError(f"double eigenvalue at zeta={zeta}: the chain witness does not exist")
        nu = mpmath.mpf(p.nu.nu_value(bits)) if p.nu.is_rational else p.nu.nu_value(bits)
        nb = np.arange(1, ch.beta.N + 1, dtype=float)
        beta = ch.beta.coeffs.copy()
        # second component (beta - T m phi_n) in H^1_0
        sec = [mpmath.mpf(float(x)) for x in beta]
        if n <= len(sec):
            sec[n - 1] -= T * m
        else:
            sec += [mpmath.mpf(0)] * (n - len(sec))
            sec[n - 1] = -T * m
        h10 = k * k + mpmath.fsum((i + 1) ** 2 * x**2 for i, x in enumerate(sec))
        num = mpmath.exp(-2 * zeta * T) * h10
        c = m * nu * n * mpmath.sqrt(2 / mpmath.pi)
        den = c**2 * _int_pow_exp(2, 2 * zeta, T)
        desc = {"kind": "chain", "l": l, "zeta": zeta, "m": _io.mp_text(m), "I": _io.mp_text(ch.I)}
        return ObservabilityReport.build(desc, T, num, den)


@dataclass(frozen=True)
class BlowupResult:
    """Ratios along a witness sequence and the step factors between them."""

    kind: str
    T: float
    indices: tuple
    reports: tuple
    log10_ratios: tuple
    log10_steps: tuple
    verdict: str

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "T": self.T,
            "indices": [list(i) if isinstance(i, tuple) else i for i in self.indices],
            "log10_ratios": list(self.log10_ratios),
            "log10_step_factors": list(self.log10_steps),
            "verdict": self.verdict,
            "reports": [r.to_json() for r in self.reports],
        }


def blowup_experiment(p: ProblemData, T: float, kind: str, indices: Sequence, bits: int | None = None,
                      growth: float = 10.0, bounded: float = 2.0) -> BlowupResult:
    """Observability ratios along one of the witness sequences.

    kind = "fast" (indices k), "pair" (indices (a, b), e.g. Liouville
    convergents) or "chain" (indices l, rational regime).  The verdict is
    "grows" when every step multiplies the ratio by at least ``growth``,
    "bounded" when no step multiplies it by more than ``bounded``, and
    "inconclusive" otherwise.
    """
    reports = []
    for idx in indices:
        if kind == "fast":
            reports.append(witness_fast(p, int(idx), T, bits or 64))
        elif kind == "pair":
            a, b = idx
            reports.append(witness_pair(p, int(a), int(b), T, bits))
        elif kind == "chain":
            reports.append(witness_chain(p, int(idx), T, bits))
        else:
            raise InputError(f"unknown witness kind {kind!r}")
    logs = tuple(r.log10_ratio for r in reports)
    steps = tuple(b - a for a, b in zip(logs, logs[1:]))
    if steps and all(s >= math.log10(growth) for s in steps):
        verdict = "grows"
    elif all(s <= math.log10(bounded) for s in steps):
        verdict = "bounded"
    else:
        verdict = "inconclusive"
    return BlowupResult(kind, T, tuple(tuple(i) if isinstance(i, (list, tuple)) else i for i in indices),
                        tuple(reports), logs, steps, verdict)


# --------------------------------------------------------------------------
# null-control verification
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NullControlReport:
    """Terminal state of the controlled Galerkin system.

    ``controlled_residual`` is the H^-1 norm of the modes n <= K and
    ``tail_residual`` that of n > K; ``tail_reference`` is the free decay
    factor e^{-lam T} of the slowest eigenvalue left out of the control.
    """

    relative_residual: float
    yT: np.ndarray
    y0_norm: float
    controlled_residual: float
    tail_residual: float
    tail_reference: float
    K: int
    N_sim: int
    path: str
    T: float

    def to_json(self) -> dict:
        N = self.N_sim
        return {
            "relative_residual": self.relative_residual,
            "y0_norm_Hm1": self.y0_norm,
            "controlled_residual": self.controlled_residual,
            "tail_residual": self.tail_residual,
            "tail_reference": self.tail_reference,
            "K": self.K,
            "N_sim": N,
            "path": self.path,
            "T": self.T,
            "terminal_first": self.yT[:N].tolist(),
            "terminal_second": self.yT[N:].tolist(),
        }


def verify_null_control(
    y0,
    u: ControlSignal | None,
    model: GalerkinModel,
    T: float,
    K: int | None = None,
    steps: int = DEFAULT_STEPS,
    exact: bool = True,
) -> NullControlReport:
    """||y(T)||_{H^-1} / ||y0||_{H^-1} for the Galerkin model driven by u.

    Controls carrying an exponential-sum expansion are propagated exactly
    (``path="exact"``); others go through the time stepper.
    """
    N = model.N
    y0v = _as_array(y0, N)
    K = K if K is not None else (u.K if u is not None else N)
    if u is not None and u.expansion is not None and exact:
        yT = forward_terminal_exact(y0v, u.expansion, model, T)
        path = "exact"
    else:
        yT = forward(y0v, u, model, T, steps).states[-1]
        path = "sampled"
    w = model.hm1_weights()
    y0n = float(np.sqrt(np.sum(w * y0v**2)))
    if y0n == 0:
        raise InputError("y0 = 0: relative residual undefined")
    mask = np.concatenate([model.n <= K, model.n <= K])
    ctrl = float(np.sqrt(np.sum((w * yT**2)[mask])))
    tail = float(np.sqrt(np.sum((w * yT**2)[~mask])))
    lam_next = min((K + 1) ** 2, model.nu * (K + 1) ** 2)
    rel = float(np.sqrt(np.sum(w * yT**2))) / y0n
    return NullControlReport(rel, yT, y0n, ctrl / y0n, tail / y0n, math.exp(-lam_next * T), K, N, path, T)


# --------------------------------------------------------------------------
# gap condition
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GapReport:
    """Smallest distance between distinct eigenvalues k^2, nu j^2 <= lam_max (exact)."""

    lam_max: float
    n_eigenvalues: int
    min_gap: Fraction
    pair: tuple
    bound: Fraction
    passed: bool

    def to_json(self) -> dict:
        return {
            "lam_max": self.lam_max,
            "n_eigenvalues": self.n_eigenvalues,
            "min_gap": str(self.min_gap),
            "min_gap_float": float(self.min_gap),
            "pair": [str(x) for x in self.pair],
            "bound": str(self.bound),
            "passed": self.passed,
        }


def gap_check(nu: NuValue, lam_max: float) -> GapReport:
    """Exhaustive pairwise gap check over the spectrum below lam_max, rational sqrt(nu) = i0/j0.

    Distinct values are sorted, so the minimum over all pairs is the
    minimum over neighbours; the lower bound tested is 1/j0^2.
    """
    if not nu.is_rational:
        raise DomainError("gap condition is checked in the rational regime")
    nuf = Fraction(nu.i0 * nu.i0, nu.j0 * nu.j0)
    vals = set()
    k = 1
    while k * k <= lam_max:
        vals.add(Fraction(k * k))
        k += 1
    j = 1
    while nuf * j * j <= lam_max:
        vals.add(nuf * j * j)
        j += 1
    vs = sorted(vals)
    if len(vs) < 2:
        raise InputError("fewer than two eigenvalues below lam_max")
    gaps = [(b - a, (a, b)) for a, b in zip(vs, vs[1:])]
    g, pair = min(gaps)
    bound = Fraction(1, nu.j0 * nu.j0)
    return GapReport(float(lam_max), len(vs), g, pair, bound, g > bound)
