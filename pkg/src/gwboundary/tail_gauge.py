"""Tail functional ``F(x) = -log P(W > x)``, its right-continuous inverse,
the gauge ``g(r) = r^{log m} F^{-1}(log log 1/r)`` and the doubling diagnostic.

Two kinds of tails share one interface (``survival``, ``F``, ``inverse``):
:class:`EmpiricalTail` built from W-estimates, and closed-form tails
(:class:`GeometricTail`, :class:`PointMassTail`) used as oracles.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .offspring import GeometricOffspring, OffspringDistribution

MIN_SAMPLES = 100
_SNAP = 1e-9


class TailValue(float):
    """``F^{-1}(y)`` carrying an ``out_of_range`` flag (saturated at the largest sample)."""

    out_of_range: bool

    def __new__(cls, value: float, out_of_range: bool = False):
        obj = super().__new__(cls, value)
        obj.out_of_range = out_of_range
        return obj


class Tail:
    depth: int | None = None
    kind: str = "tail"

    def survival(self, x):
        raise NotImplementedError

    def F(self, x):
        s = np.asarray(self.survival(x), dtype=float)
        with np.errstate(divide="ignore"):
            out = -np.log(s)
        return out if out.ndim else float(out)

    def inverse(self, y: float) -> TailValue:
        raise NotImplementedError

    def inverse_array(self, ys) -> tuple[np.ndarray, np.ndarray]:
        vals = [self.inverse(float(y)) for y in np.ravel(ys)]
        return np.array(vals, dtype=float), np.array([v.out_of_range for v in vals])

    @property
    def sup_F(self) -> float:
        return math.inf

    def metadata(self) -> dict:
        return {"tail": self.kind, "w_depth": self.depth}


class EmpiricalTail(Tail):
    """Order statistics of W-estimates.

    ``S(x) = #{w > x} / n`` (strict inequality), ``F̂ = -log S`` and
    ``F̂^{-1}(y) = inf{x >= 0 : F̂(x) > y}``.  Beyond the largest sample
    ``F̂ = +inf`` and the inverse saturates there with a flag.
    """

    kind = "empirical"

    def __init__(self, samples, depth: int | None = None):
        a = np.sort(np.asarray(samples, dtype=float).ravel())
        if a.size == 0:
            raise ValueError("empirical tail needs at least one sample")
        if not np.all(np.isfinite(a)):
            raise ValueError("samples must be finite")
        if a[0] < 0:
            raise ValueError("W-estimates must be nonnegative")
        if a.size < MIN_SAMPLES:
            warnings.warn(f"only {a.size} samples; tail estimates are coarse", stacklevel=2)
        a.setflags(write=False)
        self.samples = a
        self.depth = depth

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def max_sample(self) -> float:
        return float(self.samples[-1])

    @property
    def sup_F(self) -> float:
        # largest finite value of F̂, attained just below the maximum
        top = int(np.sum(self.samples == self.samples[-1]))
        return math.log(self.n / top)

    def survival(self, x):
        x = np.asarray(x, dtype=float)
        s = (self.n - np.searchsorted(self.samples, x, side="right")) / self.n
        return s if s.ndim else float(s)

    def inverse(self, y: float) -> TailValue:
        if y < 0:
            return TailValue(0.0)
        n = self.n
        t = n * math.exp(-y)
        if abs(t - round(t)) <= _SNAP * n:
            t = float(round(t))
        j = min(int(math.floor(n - t)) + 1, n)
        v = float(self.samples[j - 1])
        return TailValue(v, v == self.max_sample)

    def metadata(self) -> dict:
        return {"tail": self.kind, "w_depth": self.depth, "n_samples": self.n}


def empirical_tail(w_samples, depth: int | None = None) -> EmpiricalTail:
    return EmpiricalTail(w_samples, depth)


def tail_inverse(t: Tail, y: float) -> TailValue:
    return t.inverse(y)


class GeometricTail(Tail):
    """Closed form for the geometric family: ``P(W > x) = (1-q) exp(-(1-q) x)``.

    Construction checks the law against the moment oracles ``E[W] = 1`` and
    ``E[W²] = (E[k²] - m)/(m² - m)`` by numerical integration; a mismatch raises.
    """

    kind = "geometric-analytic"

    def __init__(self, d: GeometricOffspring, *, validate: bool = True, rtol: float = 1e-8):
        if not isinstance(d, GeometricOffspring):
            raise TypeError("closed-form W law exists only for the geometric family")
        if not d.hyp_ok:
            raise ValueError(d.status)
        self.d = d
        self.p = 1.0 - d.q
        if validate:
            self.moment_report = self.check_moments(rtol)

    def check_moments(self, rtol: float = 1e-8) -> dict:
        s = self.survival
        m1 = integrate.quad(lambda x: s(x), 0, np.inf, epsabs=0, epsrel=1e-12)[0]
        m2 = integrate.quad(lambda x: 2 * x * s(x), 0, np.inf, epsabs=0, epsrel=1e-12)[0]
        want2 = self.d.w_second_moment()
        report = {"EW": m1, "EW_oracle": 1.0, "EW2": m2, "EW2_oracle": want2}
        if abs(m1 - 1) > rtol or abs(m2 - want2) > rtol * want2:
            raise ValueError(f"closed-form W law fails its moment oracles: {report}")
        return report

    def survival(self, x):
        x = np.asarray(x, dtype=float)
        s = np.where(x < 0, 1.0, self.p * np.exp(-self.p * np.maximum(x, 0)))
        return s if s.ndim else float(s)

    def F(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x < 0, 0.0, -math.log(self.p) + self.p * np.maximum(x, 0))
        return out if out.ndim else float(out)

    def inverse(self, y: float) -> TailValue:
        return TailValue(max(0.0, (y + math.log(self.p)) / self.p))


class PointMassTail(Tail):
    """``W ≡ w0`` (e.g. ``w0 = 1`` for the deterministic binary tree): ``F^{-1} ≡ w0``."""

    kind = "point-mass"

    def __init__(self, w0: float = 1.0):
        if not w0 > 0:
            raise ValueError("point mass must be positive")
        self.w0 = float(w0)

    def survival(self, x):
        x = np.asarray(x, dtype=float)
        s = np.where(x < self.w0, 1.0, 0.0)
        return s if s.ndim else float(s)

    def inverse(self, y: float) -> TailValue:
        return TailValue(self.w0)


def analytic_tail(d: OffspringDistribution) -> Tail:
    if isinstance(d, GeometricOffspring):
        return GeometricTail(d)
    if d.family == "finite" and len(d.support) == 1 and d.max_support > 1:
        return PointMassTail(1.0)
    raise ValueError(f"no closed-form W law for {d!r}")


# ---------------------------------------------------------------------------
# gauge


@dataclass(frozen=True)
class Gauge:
    """``g(r) = r^{log m} F^{-1}(log log 1/r)`` on ``0 < r < e^{-1}``."""

    m: float
    tail: Tail = field(default_factory=PointMassTail)

    def __call__(self, r: float) -> float:
        return gauge_eval(self, r)

    def at_generation(self, n: int) -> float:
        """``g(e^{-n}) = m^{-n} F^{-1}(log n)`` for integer ``n >= 2``."""
        if n < 2:
            raise ValueError(f"g(e^-{n}) lies outside the gauge domain (0, 1/e)")
        return self.m ** (-n) * float(self.tail.inverse(math.log(n)))

    def generation_flags(self, n: int) -> dict:
        v = self.tail.inverse(math.log(n))
        return {"n": n, "g": self.m ** (-n) * float(v), "zero": float(v) == 0.0, "out_of_range": v.out_of_range}

    def metadata(self) -> dict:
        return {"m": self.m, **self.tail.metadata()}

    def to_csv(self, n_points: int = 50, r_min: float = 1e-12) -> str:
        buf = io.StringIO()
        meta = " ".join(f"{k}={v}" for k, v in self.metadata().items())
        buf.write(f"# {meta}\n")
        buf.write("r,g\n")
        hi = math.exp(-1) * (1 - 1e-9)
        for r in np.geomspace(r_min, hi, n_points):
            buf.write(f"{r!r},{self(r)!r}\n")
        return buf.getvalue()


def gauge_eval(g: Gauge, r: float) -> float:
    if not 0 < r < math.exp(-1):
        raise ValueError(f"r = {r} outside the gauge domain (0, 1/e)")
    y = math.log(math.log(1 / r))
    return r ** math.log(g.m) * float(g.tail.inverse(y))


def monotonicity_violations(g: Gauge, rs) -> list[tuple[float, float]]:
    """Consecutive grid pairs ``r1 < r2`` with ``g(r1) > g(r2)``."""
    rs = np.sort(np.asarray(rs, dtype=float))
    vals = [g(r) for r in rs]
    return [(float(a), float(b)) for a, b, ga, gb in zip(rs, rs[1:], vals, vals[1:]) if ga > gb]


# ---------------------------------------------------------------------------
# doubling diagnostic


@dataclass(frozen=True)
class DoublingRow:
    x: float
    finv_x: float
    finv_2x: float
    ratio: float
    status: str  # "ok" | "zero denominator" | "numerator saturated"


@dataclass(frozen=True)
class DoublingReport:
    sup_ratio: float
    a_hat: float
    argmax: float
    rows: tuple[DoublingRow, ...]

    @property
    def excluded(self) -> list[DoublingRow]:
        return [r for r in self.rows if r.status != "ok"]


def doubling_diagnostic(t: Tail, x_grid) -> DoublingReport:
    """``sup F^{-1}(2x) / F^{-1}(x)`` over the grid and ``a = log2(sup)``.

    Points with ``F^{-1}(x) = 0`` are excluded, as are points where only the
    numerator is saturated at the largest sample (the ratio would be an
    artefact of the sample size).  When both are saturated the ratio is 1.
    """
    rows = []
    best, arg = -math.inf, math.nan
    for x in np.asarray(x_grid, dtype=float):
        lo, hi = t.inverse(float(x)), t.inverse(2 * float(x))
        if float(lo) == 0:
            rows.append(DoublingRow(float(x), float(lo), float(hi), math.nan, "zero denominator"))
            continue
        if hi.out_of_range and not lo.out_of_range:
            rows.append(DoublingRow(float(x), float(lo), float(hi), math.nan, "numerator saturated"))
            continue
        ratio = float(hi) / float(lo)
        rows.append(DoublingRow(float(x), float(lo), float(hi), ratio, "ok"))
        if ratio > best:
            best, arg = ratio, float(x)
    if best == -math.inf:
        return DoublingReport(math.nan, math.nan, math.nan, tuple(rows))
    return DoublingReport(best, math.log2(best), arg, tuple(rows))


@dataclass(frozen=True)
class ConsequenceReport:
    a_hat: float
    checked: int
    violations: tuple[tuple[float, float, float, float], ...]  # (s, x, lhs, rhs)
    skipped: str = ""

    @property
    def ok(self) -> bool:
        return not self.violations


def consequence_check(t: Tail, a_hat: float, x_grid=None) -> ConsequenceReport:
    """Check ``F(sx) >= s^{1/a} F(x) / 2`` for ``s in {2·2^a, 4·2^a}`` and
    ``x >= F^{-1}(1)`` wherever ``F(sx)`` is finite."""
    if not a_hat > 0:
        return ConsequenceReport(a_hat, 0, (), skipped="a = 0: the bound is vacuous")
    x0 = float(t.inverse(1.0))
    if x_grid is None:
        top = getattr(t, "max_sample", 50 * max(x0, 1.0))
        x_grid = np.linspace(max(x0, 1e-12), top, 200)
    bad, checked = [], 0
    for s in (2 * 2**a_hat, 4 * 2**a_hat):
        for x in np.asarray(x_grid, dtype=float):
            if x < x0:
                continue
            rhs = float(t.F(s * x))
            if not math.isfinite(rhs):
                continue
            lhs = 0.5 * s ** (1 / a_hat) * float(t.F(x))
            checked += 1
            if lhs > rhs:
                bad.append((s, float(x), lhs, rhs))
    return ConsequenceReport(a_hat, checked, tuple(bad))


def tail_to_csv(t: Tail, x_grid) -> str:
    """Columns ``x,survival,F,Finv_at_logx``; ``F^{-1}(log x)`` is blank for ``x <= 0``."""
    buf = io.StringIO()
    meta = " ".join(f"{k}={v}" for k, v in t.metadata().items())
    buf.write(f"# {meta}\n")
    buf.write("x,survival,F,Finv_at_logx\n")
    for x in np.asarray(x_grid, dtype=float):
        inv = repr(float(t.inverse(math.log(x)))) if x > 0 else ""
        buf.write(f"{x!r},{float(t.survival(x))!r},{float(t.F(x))!r},{inv}\n")
    return buf.getvalue()
