"""Command-line front end: ``nullctl <command> --config run.json``.

Every command reads one JSON RunConfig, writes CSV/JSON files into the
output directory and places a ``<file>.meta.json`` sidecar next to each
file with the config hash, the precision used and truncation certificates.
Exit codes: 0 success, 2 invalid config, 3 precision escalation needed,
4 other library error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ConfigError", "RunConfig", "load_config", "config_hash", "main", "COMMANDS"]

COMMANDS = ("spectrum", "minimal-time", "gram-scan", "control", "simulate", "observability")
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class ConfigError(ValueError):
    """Invalid RunConfig; ``line`` points into the config file when known."""

    def __init__(self, message: str, line: int | None = None, source: str = "config"):
        self.line = line
        self.source = source
        loc = f"{source}:{line}" if line else source
        super().__init__(f"{loc}: {message}")


# --------------------------------------------------------------------------
# schema
# --------------------------------------------------------------------------


def _line_of(text: str, path: tuple) -> int | None:
    """Line of the last key in ``path``, searching each key after its parent."""
    pos = 0
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            return None
        pos = m.start()
    return text.count("\n", 0, pos) + 1 if path else 1


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


_TOP = {
    "nu": "nu",
    "q": "q",
    "K": ("int", 1),
    "N_sim": ("int", 1),
    "N_max": ("int", 1),
    "T": ("pos",),
    "precision_bits": ("int", 53),
    "quad_panels": ("int", 4),
    "method": ("enum", ("gram", "blaschke", "hum")),
    "epsilon": ("pos",),
    "active_fraction": ("frac",),
    "output_dir": ("str",),
    "seed": ("int", 0),
    "steps": ("int", 4),
    "y0": "y0",
    "observability": "observability",
}


class _Walker:
    def __init__(self, text: str, source: str):
        self.text, self.source = text, source

    def fail(self, msg: str, path: tuple):
        raise ConfigError(f"{'.'.join(map(str, path)) or '<root>'}: {msg}", _line_of(self.text, path), self.source)

    def scalar(self, v, rule, path):
        kind = rule[0]
        if kind == "int":
            if not _is_int(v) or v < rule[1]:
                self.fail(f"expected an integer >= {rule[1]}, got {v!r}", path)
        elif kind == "pos":
            if not _is_num(v) or not v > 0:
                self.fail(f"expected a positive number, got {v!r}", path)
        elif kind == "frac":
            if not _is_num(v) or not 0 < v <= 1:
                self.fail(f"expected a number in (0, 1], got {v!r}", path)
        elif kind == "enum":
            if v not in rule[1]:
                self.fail(f"expected one of {list(rule[1])}, got {v!r}", path)
        elif kind == "str":
            if not isinstance(v, str) or not v:
                self.fail(f"expected a non-empty string, got {v!r}", path)

    def one_of(self, v, keys, path) -> str:
        if not isinstance(v, dict) or len(v) != 1 or next(iter(v)) not in keys:
            self.fail(f"expected an object with exactly one of {list(keys)}", path)
        return next(iter(v))

    def numbers(self, v, path, min_len=1):
        if not isinstance(v, list) or len(v) < min_len or not all(_is_num(x) or isinstance(x, str) for x in v):
            self.fail(f"expected a list of at least {min_len} numbers", path)
        for i, x in enumerate(v):
            if isinstance(x, str):
                try:
                    float(x)
                except ValueError:
                    self.fail(f"entry {i} is not numeric: {x!r}", path)

    def nu(self, v, path):
        key = self.one_of(v, ("rational", "real", "liouville"), path)
        body, sub = v[key], path + (key,)
        if key == "rational":
            if not (isinstance(body, list) and len(body) == 2 and all(_is_int(x) and x > 0 for x in body)):
                self.fail("expected [i0, j0] with positive integers", sub)
        elif key == "real":
            if not isinstance(body, str):
                self.fail("expected a decimal string (quoted, to keep every digit)", sub)
            try:
                from fractions import Fraction

                if Fraction(body) <= 0:
                    raise ValueError
            except (ValueError, ZeroDivisionError):
                self.fail(f"not a positive decimal: {body!r}", sub)
        else:
            if not isinstance(body, dict):
                self.fail("expected {sigma, P, parity}", sub)
            extra = set(body) - {"sigma", "P", "parity"}
            if extra:
                self.fail(f"unknown keys {sorted(extra)}", sub + (sorted(extra)[0],))
            if "sigma" in body:
                self.scalar(body["sigma"], ("pos",), sub + ("sigma",))
            if "P" in body:
                self.scalar(body["P"], ("int", 2), sub + ("P",))
            if "parity" in body:
                self.scalar(body["parity"], ("enum", ("even", "odd")), sub + ("parity",))

    def q(self, v, path):
        key = self.one_of(v, ("sine_series", "cosine_series", "file", "synthetic"), path)
        body, sub = v[key], path + (key,)
        if key in ("sine_series", "cosine_series"):
            self.numbers(body, sub)
        elif key == "file":
            self.scalar(body, ("str",), sub)
        else:
            if not isinstance(body, dict) or set(body) - {"tau", "K"} or "tau" not in body:
                self.fail("expected {tau, K}", sub)
            self.scalar(body["tau"], ("pos",), sub + ("tau",))
            if "K" in body:
                self.scalar(body["K"], ("int", 1), sub + ("K",))

    def y0(self, v, path):
        if not isinstance(v, dict) or not v or set(v) - {"modes", "first", "second"}:
            self.fail("expected {modes} or {first, second}", path)
        if "modes" in v:
            self.scalar(v["modes"], ("int", 1), path + ("modes",))
        for k in ("first", "second"):
            if k in v:
                self.numbers(v[k], path + (k,))

    def observability(self, v, path):
        if not isinstance(v, dict) or set(v) - {"kind", "indices", "T"}:
            self.fail("expected {kind, indices, T}", path)
        if "kind" in v:
            self.scalar(v["kind"], ("enum", ("slow", "fast", "pair", "chain")), path + ("kind",))
        if "indices" in v and (not isinstance(v["indices"], list) or not v["indices"]):
            self.fail("expected a non-empty list", path + ("indices",))
        if "T" in v:
            Ts = v["T"] if isinstance(v["T"], list) else [v["T"]]
            for x in Ts:
                self.scalar(x, ("pos",), path + ("T",))

    def run(self, cfg):
        if not isinstance(cfg, dict):
            self.fail("top level must be an object", ())
        for key in ("nu", "q"):
            if key not in cfg:
                self.fail(f"missing required key {key!r}", ())
        for key, v in cfg.items():
            rule = _TOP.get(key)
            if rule is None:
                self.fail(f"unknown key {key!r}", (key,))
            if isinstance(rule, str):
                getattr(self, rule)(v, (key,))
            else:
                self.scalar(v, rule, (key,))


def config_hash(raw: dict) -> str:
    """sha256 of the canonical JSON form of the config."""
    return hashlib.sha256(json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass(frozen=True)
class RunConfig:
    """Validated experiment configuration."""

    raw: dict
    source: str = "config"
    base_dir: Path = field(default_factory=Path.cwd)

    def get(self, key, default=None):
        return self.raw.get(key, default)

    @property
    def K(self) -> int:
        return int(self.get("K", 8))

    @property
    def N_sim(self) -> int:
        return int(self.get("N_sim", 2 * self.K))

    @property
    def T(self) -> float:
        return float(self.get("T", 1.0))

    @property
    def bits(self) -> int:
        b = int(self.get("precision_bits", 53))
        q = self.raw["q"]
        if "synthetic" in q:
            from .condensation import synthetic_bits

            b = max(b, synthetic_bits(q["synthetic"]["tau"], self.synthetic_K))
        if "liouville" in self.raw["nu"]:
            b = max(b, 256)
        return b

    @property
    def synthetic_K(self) -> int:
        return int(self.raw["q"]["synthetic"].get("K", max(self.K, 14)))

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def line_of(self, path: tuple) -> int | None:
        try:
            return _line_of(Path(self.source).read_text(), path)
        except OSError:
            return None

    def liouville(self):
        from .condensation import liouville_nu

        body = self.raw["nu"]["liouville"]
        return liouville_nu(float(body.get("sigma", 1.0)), int(body.get("P", 3)), body.get("parity", "even"))

    def nu(self):
        from .spectral import NuValue

        nu = self.raw["nu"]
        if "rational" in nu:
            return NuValue.rational(*nu["rational"])
        if "real" in nu:
            return NuValue.from_decimal(nu["real"])
        return self.liouville()[1]

    def ctx(self):
        from .fnspace import PrecisionContext

        return PrecisionContext(
            working_bits=self.bits,
            quad_panels_per_period=int(self.get("quad_panels", 8)),
            N_max=int(self.get("N_max", max(64, self.N_sim))),
        )

    def coupling(self, nu=None):
        import mpmath

        from .fnspace import Coupling, SampledFunction

        q = self.raw["q"]
        if "sine_series" in q or "cosine_series" in q:
            with mpmath.workprec(self.bits):
                conv = (lambda x: mpmath.mpf(x)) if self.bits > 53 else float
                sin = tuple(conv(x) for x in q.get("sine_series", []))
                cos = tuple(conv(x) for x in q.get("cosine_series", []))
            return Coupling(sin, cos, "config")
        if "file" in q:
            path = Path(q["file"])
            path = path if path.is_absolute() else self.base_dir / path
            return Coupling.from_samples(SampledFunction.read_csv(path), max(2 * self.N_sim, 32), self.ctx())
        from .condensation import synthetic_coupling

        nu = nu or self.nu()
        return synthetic_coupling(nu, float(q["synthetic"]["tau"]), self.synthetic_K, self.bits)

    def problem(self):
        from .spectral import ProblemData

        nu = self.nu()
        return ProblemData(nu, self.coupling(nu), self.K, self.ctx())

    def y0(self, N: int):
        import numpy as np

        from .fnspace import VectorField2

        spec = self.get("y0", {"modes": 6})
        first, second = np.zeros(N), np.zeros(N)
        if "first" in spec or "second" in spec:
            a = np.array([float(x) for x in spec.get("first", [])])
            b = np.array([float(x) for x in spec.get("second", [])])
            first[: min(N, a.size)] = a[:N]
            second[: min(N, b.size)] = b[:N]
        else:
            m = min(int(spec.get("modes", 6)), N)
            rng = np.random.default_rng(int(self.get("seed", 0)))
            first[:m] = rng.normal(size=m)
            second[:m] = rng.normal(size=m)
        return VectorField2.from_parts(first, second)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, str(path)) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, str(path)) from exc
    _Walker(text, str(path)).run(raw)
    return RunConfig(raw, str(path), path.parent.resolve())


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------


class _Outputs:
    def __init__(self, out_dir: Path, cfg: RunConfig, command: str):
        self.dir, self.cfg, self.command = out_dir, cfg, command
        self.written = []

    def _sidecar(self, path: Path, certificates: dict):
        from . import _io

        meta = {
            "file": path.name,
            "command": self.command,
            "config_hash": self.cfg.hash,
            "config_source": Path(self.cfg.source).name,
            "precision_bits": self.cfg.bits,
            "certificates": certificates,
        }
        _io.write_json(path.with_name(path.name + ".meta.json"), meta)

    def csv(self, name, header, rows, certificates=None):
        from . import _io

        p = _io.write_csv(self.dir / name, header, rows)
        self._sidecar(p, certificates or {})
        self.written.append(p)
        return p

    def json(self, name, obj, certificates=None):
        from . import _io

        p = _io.write_json(self.dir / name, obj)
        self._sidecar(p, certificates or {})
        self.written.append(p)
        return p


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_spectrum(cfg: RunConfig, out: _Outputs) -> int:
    from .spectral import approx_controllability_check, spectrum

    p = cfg.problem()
    table = spectrum(p)
    rep = approx_controllability_check(p, table)
    cert = {"K": p.K, "N_eigenfunction": p.N, "complete_below": table.complete_below, "regime": table.regime}
    out.csv("spectrum.csv", table.CSV_HEADER, table.rows(), cert)
    out.json("controllability.json", {
        "controllable": rep.controllable,
        "failures": [{"lambda": lam, "reason": why} for lam, why in rep.failures],
        "note": rep.note,
    }, cert)
    return 0


def cmd_minimal_time(cfg: RunConfig, out: _Outputs) -> int:
    from . import _io
    from .condensation import MINIMAL_TIME_HEADER, estimate_T0, estimate_T0_rational, estimate_T2

    p = cfg.problem()
    if p.nu.is_rational:
        ests = [estimate_T0_rational(p)]
    elif "liouville" in cfg.raw["nu"]:
        spec, _ = cfg.liouville()
        ests = [estimate_T2(p, ks=[j for _, j in spec.convergents])]
    else:
        ests = [estimate_T0(p)]
    rows, summary = [], []
    for est in ests:
        rows += est.rows()
        for name, c in (est.constituents or {}).items():
            rows += c.rows()
        summary.append({
            "kind": est.kind,
            "estimate": _io.mp_text(est.estimate),
            "K": est.K,
            "window": list(est.window),
            "constituents": {n: _io.mp_text(c.estimate) for n, c in (est.constituents or {}).items()},
            "alt_partials": {n: [[str(k), _io.mp_text(v)] for k, v in vals] for n, vals in (est.alt_partials or {}).items()},
            "excluded": [list(map(str, e)) for e in (est.excluded or [])],
        })
    cert = {"K": p.K, "window_rule": "max over k in [ceil(K/2), K]"}
    out.csv("minimal_time.csv", MINIMAL_TIME_HEADER, rows, cert)
    out.json("minimal_time.json", summary, cert)
    return 0


def cmd_gram_scan(cfg: RunConfig, out: _Outputs) -> int:
    from .condensation import GRAM_SCAN_HEADER, gram_det, riesz_degeneracy_scan

    if "liouville" in cfg.raw["nu"]:
        spec, _ = cfg.liouville()
        q = cfg.coupling()
        recs = riesz_degeneracy_scan(spec, q, bits=cfg.bits, check=False)
        cert = {"liouville": spec.to_json()}
    else:
        p = cfg.problem()
        if p.nu.is_rational:
            raise ConfigError("nu: gram-scan needs an irrational nu (real or liouville)", cfg.line_of(("nu",)), cfg.source)
        recs = []
        for k in range(1, cfg.K + 1):
            a, b = (p.nu.nearest(k), k) if p.nu.sqrt > 1 else (k, p.nu.nearest(k, inverse=True))
            if a >= 1 and b >= 1:
                r = gram_det(p, a, b)
                recs.append(r)
        cert = {"K": cfg.K}
    rows = [(r.p, r.k, r.j, r.coupling, r.U, r.det, r.bits_used) for r in recs]
    out.csv("gram_scan.csv", GRAM_SCAN_HEADER, rows, cert)
    return 0


def _make_control(cfg: RunConfig):
    from .moment import control_series, hum_control, moments_from_initial
    from .simulate import GalerkinModel
    from .spectral import spectrum

    p = cfg.problem()
    y0 = cfg.y0(p.N)
    method = cfg.get("method", "gram")
    model = GalerkinModel.from_problem(p, cfg.N_sim)
    if method == "hum":
        sig = hum_control(y0, cfg.T, float(cfg.get("epsilon", 1e-6)), model)
    else:
        ms = moments_from_initial(y0, spectrum(p), cfg.T, p.nu)
        sig = control_series(ms, method=method, K=p.K, nu=float(p.nu.nu),
                             bits=max(256, cfg.bits), active_fraction=float(cfg.get("active_fraction", 0.9)))
    return p, y0, model, sig


def cmd_control(cfg: RunConfig, out: _Outputs) -> int:
    from .simulate import verify_null_control

    p, y0, model, sig = _make_control(cfg)
    rep = verify_null_control(y0, sig, model, cfg.T, K=p.K)
    cert = {"K": p.K, "N_sim": model.N, "method": sig.method, "residuals": sig.residuals}
    out.csv("control.csv", ("t", "u"), zip(sig.t.tolist(), sig.samples.tolist()), cert)
    meta = sig.metadata()
    meta["y0"] = {"first": y0.first.coeffs.tolist(), "second": y0.second.coeffs.tolist()}
    out.json("control.json", meta, cert)
    out.json("null_control.json", rep.to_json(), cert)
    return 0


def _load_control(path: Path, T: float):
    from .moment import ControlSignal, Expansion

    meta = json.loads(path.read_text())
    if meta.get("expansion"):
        exp = Expansion.from_json(meta["expansion"])
        return ControlSignal.from_expansion(exp, T, int(meta["K"]), meta["method"])
    return None


def cmd_simulate(cfg: RunConfig, out: _Outputs) -> int:
    import numpy as np

    from .moment import ControlSignal
    from .simulate import GalerkinModel, forward, verify_null_control

    p = cfg.problem()
    model = GalerkinModel.from_problem(p, cfg.N_sim)
    y0 = cfg.y0(p.N)
    ctrl_path = out.dir / "control.json"
    u = _load_control(ctrl_path, cfg.T) if ctrl_path.exists() else None
    if u is None and ctrl_path.exists():
        import csv

        rows = list(csv.reader((out.dir / "control.csv").open()))[1:]
        t = np.array([float(r[0]) for r in rows])
        s = np.array([float(r[1]) for r in rows])
        u = ControlSignal(t, s, p.K, "samples", cfg.T, ControlSignal.trapezoid_norm(t, s), cfg.T)
    steps = int(cfg.get("steps", 2048))
    traj = forward(y0, u, model, cfg.T, steps)
    cert = {"N_sim": model.N, "steps": steps, "control": str(ctrl_path.name) if u is not None else "none"}
    out.csv("trajectory.csv", ("t", "norm_Hm1", "norm_L2"), zip(traj.t.tolist(), traj.norm_Hm1.tolist(), traj.norm_L2.tolist()), cert)
    if u is not None:
        rep = verify_null_control(y0, u, model, cfg.T, K=p.K, steps=steps)
        w = model.hm1_weights()
        sampled = float(np.sqrt(np.sum(w * traj.states[-1] ** 2))) / rep.y0_norm
        body = rep.to_json()
        body["sampled_relative_residual"] = sampled
        out.json("simulate.json", body, cert)
    else:
        out.json("simulate.json", {"relative_residual": float(traj.norm_Hm1[-1] / traj.norm_Hm1[0]), "path": "free"}, cert)
    return 0


def cmd_observability(cfg: RunConfig, out: _Outputs) -> int:
    from .simulate import blowup_experiment, witness_slow

    p = cfg.problem()
    spec = dict(cfg.get("observability", {}))
    kind = spec.get("kind", "chain" if p.nu.is_rational else "fast")
    if kind == "pair" and "indices" not in spec and "liouville" in cfg.raw["nu"]:
        ls, _ = cfg.liouville()
        spec["indices"] = [list(c) for c in ls.convergents[:2]]
    indices = spec.get("indices", list(range(2, 7)) if kind == "chain" else list(range(1, cfg.K + 1)))
    Ts = spec.get("T", [cfg.T])
    Ts = Ts if isinstance(Ts, list) else [Ts]
    results, rows = [], []
    for T in Ts:
        if kind == "slow":
            reps = [witness_slow(float(p.nu.nu), int(k), float(T)) for k in indices]
            body = {"kind": "slow", "T": T, "reports": [r.to_json() for r in reps]}
            logs = [r.log10_ratio for r in reps]
        else:
            res = blowup_experiment(p, float(T), kind, [tuple(i) if isinstance(i, list) else i for i in indices])
            body, logs = res.to_json(), res.log10_ratios
        results.append(body)
        rows += [(kind, T, json.dumps(i), lr) for i, lr in zip(indices, logs)]
    cert = {"kind": kind, "indices": indices, "precision_bits": cfg.bits}
    out.csv("observability.csv", ("kind", "T", "index", "log10_ratio"), rows, cert)
    out.json("observability.json", results, cert)
    return 0


_DISPATCH = {
    "spectrum": cmd_spectrum,
    "minimal-time": cmd_minimal_time,
    "gram-scan": cmd_gram_scan,
    "control": cmd_control,
    "simulate": cmd_simulate,
    "observability": cmd_observability,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nullctl", description="Boundary null-control laboratory for a coupled 2x2 parabolic system.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON RunConfig")
    ap.add_argument("--threads", type=int, default=1, help="cap on BLAS/OpenMP threads (default 1)")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("nullctl: --threads must be >= 1", file=sys.stderr)
        return 2
    for var in _THREAD_VARS:
        os.environ[var] = str(args.threads)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"nullctl: invalid config: {exc}", file=sys.stderr)
        return 2
    from .errors import NullCtlError, PrecisionEscalation

    out_dir = Path(args.out or cfg.get("output_dir", "out"))
    out = _Outputs(out_dir, cfg, args.command)
    try:
        code = _DISPATCH[args.command](cfg, out)
    except ConfigError as exc:
        print(f"nullctl: invalid config: {exc}", file=sys.stderr)
        return 2
    except PrecisionEscalation as exc:
        print(f"nullctl: precision escalation: {exc}. Set \"precision_bits\" to at least {exc.required_bits}.", file=sys.stderr)
        return 3
    except NullCtlError as exc:
        print(f"nullctl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    for p in out.written:
        print(p)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
