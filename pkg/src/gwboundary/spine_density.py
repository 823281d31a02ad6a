"""Quantities along the distinguished ray of a size-biased tree.

``Y_n`` is the sum of the W-estimates of the generation-``n`` grafts and
``X_n = Σ_{p>=0} m^{-p} Y_{n+p}``.  Along the spine the ball of radius
``r = e^{-n}`` has mass ``m^{-n-2} X_{n+2}``; density ratios compare
``m^{-n} X_n`` with the gauge ``g(e^{-n})``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .branching_measure import WField, w_field
from .offspring import OffspringDistribution, size_biased
from .sampler import (
    DEFAULT_CAP,
    SpineTree,
    as_generator,
    forest_roots,
    sample_forest,
    sample_spine_y,
    sample_w,
)
from .tail_gauge import Gauge, Tail
from .tree_core import Word


def graft_set(s: SpineTree, n: int) -> list[Word]:
    """Off-spine children of ``spine|n-1``: ``k*_n - 1`` words of length ``n``."""
    return s.graft_words(n)


# ---------------------------------------------------------------------------
# Y / X traces


@dataclass(frozen=True)
class DensityTrace:
    """Per-replica sequences indexed by ``n = 1..N`` (column ``n-1``).

    ``x_raw`` stops at the horizon ``N``; ``tail_bound`` is the estimated
    omitted tail ``m^{-(N-n+1)} Ȳ m/(m-1)`` (``Ȳ`` the replica's mean of Y),
    and ``x = x_raw + tail_bound``.  ``r`` holds ``m^{-n} X_n / g(e^{-n})``
    for ``n >= 2`` (NaN elsewhere or where the gauge vanishes).
    """

    m: float
    y: np.ndarray
    x_raw: np.ndarray
    tail_bound: np.ndarray
    r: np.ndarray | None = None
    graft_depths: tuple[int, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return self.y.shape[1]

    @property
    def reps(self) -> int:
        return self.y.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.x_raw + self.tail_bound

    def to_csv(self, rep: int = 0) -> str:
        buf = io.StringIO()
        meta = " ".join(f"{k}={v}" for k, v in {"m": self.m, **self.meta}.items())
        buf.write(f"# {meta} graft_depths={','.join(map(str, self.graft_depths))}\n")
        buf.write("n,Y,X,tail_bound,R\n")
        x = self.x
        for n in range(1, self.depth + 1):
            r = "" if self.r is None or not np.isfinite(self.r[rep, n - 1]) else repr(float(self.r[rep, n - 1]))
            buf.write(
                f"{n},{float(self.y[rep, n - 1])!r},{float(x[rep, n - 1])!r},"
                f"{float(self.tail_bound[rep, n - 1])!r},{r}\n"
            )
        return buf.getvalue()


def xy_from_y(y, m: float, gauge: Gauge | None = None, graft_depths=(), meta=None) -> DensityTrace:
    """Build a trace from a ``(reps, N)`` array of ``Y`` values."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if not m > 1:
        raise ValueError("X_n needs m > 1")
    reps, N = y.shape
    x_raw = np.empty_like(y)
    x_raw[:, N - 1] = y[:, N - 1]
    for j in range(N - 2, -1, -1):
        x_raw[:, j] = y[:, j] + x_raw[:, j + 1] / m
    n = np.arange(1, N + 1)
    ybar = y.mean(axis=1, keepdims=True)
    tail = ybar * m / (m - 1) * m ** (-(N - n + 1.0))
    trace = DensityTrace(m, y, x_raw, tail, None, tuple(graft_depths), dict(meta or {}))
    if gauge is not None:
        trace = with_ratios(trace, gauge)
    return trace


def with_ratios(trace: DensityTrace, gauge: Gauge) -> DensityTrace:
    N = trace.depth
    g = np.array([gauge.at_generation(n) if n >= 2 else np.nan for n in range(1, N + 1)])
    n = np.arange(1, N + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = trace.m ** (-n.astype(float)) * trace.x / g
    r[:, g == 0] = np.nan
    meta = dict(trace.meta)
    meta["gauge_zero_at"] = [int(k) for k in n[g == 0]]
    return DensityTrace(trace.m, trace.y, trace.x_raw, trace.tail_bound, r, trace.graft_depths, meta)


def xy_sequences(s: SpineTree, wfields: list[list[WField]], m: float, gauge: Gauge | None = None) -> DensityTrace:
    """Trace of one spine tree from the W-fields of its grafts (``wfields[n-1]`` for level ``n``)."""
    if len(wfields) != s.depth:
        raise ValueError("one list of W-fields per spine level is required")
    y = np.zeros(s.depth)
    depths = []
    for n, (fields, grafts) in enumerate(zip(wfields, s.grafts), start=1):
        if len(fields) != len(grafts):
            raise ValueError(f"missing W-field at level {n}")
        y[n - 1] = sum(f.root for f in fields)
        depths.append(grafts[0].depth if grafts else -1)
    return xy_from_y(y[None, :], m, gauge, depths)


def trace_from_spine(s: SpineTree, m: float, gauge: Gauge | None = None) -> DensityTrace:
    return xy_sequences(s, [[w_field(g, m) for g in level] for level in s.grafts], m, gauge)


def sample_traces(
    d: OffspringDistribution,
    depth: int,
    subtree_depth: int,
    reps: int,
    rng,
    gauge: Gauge | None = None,
    *,
    cap: int = DEFAULT_CAP,
) -> DensityTrace:
    batch = sample_spine_y(d, depth, subtree_depth, reps, rng, cap=cap)
    meta = {"spine_depth": depth, "subtree_depth": subtree_depth, "reps": reps}
    return xy_from_y(batch.y, d.m, gauge, batch.graft_depths, meta)


def ray_ball_masses(trace: DensityTrace, rep: int = 0, *, corrected: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Masses ``M(B(U*, e^{-n})) = m^{-n-2} X_{n+2}`` for ``n = 0..N-2``, with
    the matching horizon tail bounds ``m^{-n-2}·tail_bound_{n+2}``."""
    N = trace.depth
    if N < 2:
        raise ValueError("horizon too short: need X_{n+2} with n >= 0")
    n = np.arange(0, N - 1)
    x = trace.x if corrected else trace.x_raw
    scale = trace.m ** (-(n + 2.0))
    return scale * x[rep, n + 1], scale * trace.tail_bound[rep, n + 1]


# ---------------------------------------------------------------------------
# density ratios


@dataclass(frozen=True)
class RatioStats:
    window: tuple[int, int]
    window_max: np.ndarray  # per replica
    dyadic_max: dict  # (lo, hi) -> per-replica maxima
    kappa_hat: float
    quantiles: dict
    mean: float
    skipped: tuple[int, ...]

    @property
    def c_xi_hat(self) -> float:
        return 1.0 / self.kappa_hat


def density_ratios(trace: DensityTrace, gauge: Gauge | None = None, window: tuple[float, float] = (0.5, 1.0)) -> RatioStats:
    """Windowed maxima of ``R_n`` over ``n in [w0·N, w1·N]``, dyadic running
    maxima, and ``κ̂`` = cross-replica median of the windowed maxima."""
    if gauge is not None:
        trace = with_ratios(trace, gauge)
    if trace.r is None:
        raise ValueError("trace carries no ratios; pass a gauge")
    N = trace.depth
    lo, hi = max(2, math.ceil(window[0] * N)), min(N, math.floor(window[1] * N))
    if lo > hi:
        raise ValueError(f"empty window [{lo}, {hi}]")
    r = trace.r
    skipped = tuple(int(n) for n in range(2, N + 1) if np.all(np.isnan(r[:, n - 1])))
    wmax = np.nanmax(r[:, lo - 1 : hi], axis=1)
    dyadic = {}
    k = 1
    while 2**k <= N:
        a, b = 2**k, min(2 ** (k + 1) - 1, N)
        block = r[:, a - 1 : b]
        if not np.all(np.isnan(block)):
            dyadic[(a, b)] = np.nanmax(block, axis=1)
        k += 1
    qs = {p: float(np.quantile(wmax, p)) for p in (0.05, 0.25, 0.5, 0.75, 0.95)}
    return RatioStats((lo, hi), wmax, dyadic, float(np.median(wmax)), qs, float(wmax.mean()), skipped)


# ---------------------------------------------------------------------------
# bounds


@dataclass(frozen=True)
class BoundConstants:
    C0: float
    C1: float
    source: str = "oracle"

    def __post_init__(self):
        if not 0 < self.C0 <= 1:
            raise ValueError(f"C0 = {self.C0} outside (0, 1]")
        if self.C1 < 1 - 1e-12:
            raise ValueError(f"C1 = {self.C1} < 1")


def bound_constants(d: OffspringDistribution, w_samples=None) -> BoundConstants:
    """``C0 = 1 - ξ̂(1)``; ``C1 = sqrt(E[W²])`` from the moment fixed point, or
    from samples when given."""
    c0 = 1.0 - size_biased(d).pmf(1)
    if w_samples is None:
        return BoundConstants(c0, math.sqrt(d.w_second_moment()), "oracle")
    w = np.asarray(w_samples, dtype=float)
    return BoundConstants(c0, math.sqrt(float(np.mean(w * w))), "estimate")


def sample_x1(d: OffspringDistribution, horizon: int, reps: int, rng, *, cap: int = DEFAULT_CAP) -> np.ndarray:
    """``m·Ŵ*`` for the root of a size-biased tree truncated at ``horizon``:
    ``m^{1-L} + Σ_{p=1}^{L} m^{1-p} Y_p`` with level-``p`` grafts cut at ``L - p``.

    Its law is exactly that of ``X_1`` seen at truncation depth ``L``, so
    ``P(X_1 > m x) = E[Ŵ 1{Ŵ > x}]`` holds exactly for ``Ŵ`` at depth ``L``.
    """
    batch = sample_spine_y(d, horizon, horizon, reps, rng, aligned=True, cap=cap)
    m = d.m
    p = np.arange(1, horizon + 1)
    return m ** (1.0 - horizon) + batch.y @ (m ** (1.0 - p))


@dataclass(frozen=True)
class BoundRow:
    x: float
    p_x1_gt_x: float
    se1: float
    ok_lower: float
    ok_pass: bool
    p_x1_gt_mx: float
    se2: float
    w_tail_mean: float
    se_w: float
    z_equal: float
    equal_pass: bool
    rough_upper: float
    rough_pass: bool


@dataclass(frozen=True)
class BoundReport:
    constants: BoundConstants
    rows: tuple[BoundRow, ...]
    meta: dict

    @property
    def passed(self) -> bool:
        return all(r.ok_pass and r.equal_pass and r.rough_pass for r in self.rows)


def bound_check(
    d: OffspringDistribution,
    tail: Tail,
    x1_samples,
    w_samples,
    x_grid,
    constants: BoundConstants | None = None,
    k: float = 3.0,
) -> BoundReport:
    """Grid comparison of ``P(X_1 > x)`` with ``C0 e^{-F̂(x)}`` (lower bound),
    and of ``P(X_1 > m x)`` with ``E[Ŵ 1{Ŵ>x}]`` (equality) and
    ``C1 e^{-F̂(x)/2}`` (upper bound).  Tolerances are ``k`` combined standard errors."""
    c = constants or bound_constants(d)
    x1 = np.asarray(x1_samples, dtype=float)
    w = np.asarray(w_samples, dtype=float)
    n1, nw = x1.size, w.size
    n_tail = getattr(tail, "n", None)
    m = d.m
    rows = []
    for x in np.asarray(x_grid, dtype=float):
        p1 = float(np.mean(x1 > x))
        se1 = math.sqrt(p1 * (1 - p1) / n1)
        s = float(tail.survival(x))
        se_s = math.sqrt(s * (1 - s) / n_tail) if n_tail else 0.0
        low = c.C0 * s
        ok = p1 >= low - k * math.hypot(se1, c.C0 * se_s)
        p2 = float(np.mean(x1 > m * x))
        se2 = math.sqrt(p2 * (1 - p2) / n1)
        tw = w * (w > x)
        wt = float(tw.mean())
        sew = float(tw.std(ddof=1) / math.sqrt(nw))
        comb = math.hypot(se2, sew)
        z = (p2 - wt) / comb if comb > 0 else (0.0 if p2 == wt else math.inf)
        up = c.C1 * math.sqrt(s)
        se_up = c.C1 * se_s / (2 * math.sqrt(s)) if s > 0 else 0.0
        rough = p2 <= up + k * math.hypot(se2, se_up)
        rows.append(BoundRow(float(x), p1, se1, low, ok, p2, se2, wt, sew, z, abs(z) <= k, up, rough))
    meta = {"n_x1": n1, "n_w": nw, **tail.metadata()}
    return BoundReport(c, tuple(rows), meta)


# ---------------------------------------------------------------------------
# thin rays


def thin_thresholds(m: float, tail: Tail, n0: int, N: int) -> np.ndarray:
    """``m^{-1} F̂^{-1}(½ log n)`` for ``n = n0..N``."""
    return np.array([float(tail.inverse(0.5 * math.log(n))) / m for n in range(n0, N + 1)])


@dataclass(frozen=True)
class ThinRayReport:
    n0: int
    N: int
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    z: float
    thresholds: tuple[float, ...]
    level_checks: tuple[tuple[int, float, float, float, bool], ...]  # (n, freq, se, bound, ok)
    meta: dict

    @property
    def passed(self) -> bool:
        return abs(self.z) <= 3 and all(c[-1] for c in self.level_checks)

    @property
    def degenerate(self) -> bool:
        return self.lhs == 0 and self.rhs == 0


def thin_ray_identity(
    d: OffspringDistribution,
    n0: int,
    N: int,
    reps: int,
    rng,
    tail: Tail,
    *,
    extra_depth: int = 6,
    reps_rhs: int | None = None,
    cap: int = DEFAULT_CAP,
) -> ThinRayReport:
    """Both sides of ``E[g(e^{-N}) #J_{n0,N}] = F^{-1}(log N) P(∀n: X*_n < m^{-1}F^{-1}(½ log n))``.

    The left side counts ``J`` on materialized GW trees whose W-estimates use
    reference depth ``N + extra_depth``; the right side draws ``W'`` at depth
    ``extra_depth`` and level-``p`` grafts at depth ``N + extra_depth - p`` so
    both sides share the same truncation.
    """
    if not 2 <= n0 < N <= 12:
        raise ValueError("thin-ray check needs 2 <= n0 < N <= 12")
    g = as_generator(rng)
    m = d.m
    H = N + extra_depth
    thr = thin_thresholds(m, tail, n0, N)
    gauge_N = m ** (-N) * float(tail.inverse(math.log(N)))

    # direct side: forest of reps trees under a virtual root
    forest = sample_forest(d, H, reps, g, cap)
    wf = w_field(forest, m)
    ok = np.ones(reps, dtype=bool)
    for n in range(1, N + 1):
        ok = ok[forest.parent_index(n + 1)]
        if n >= n0:
            ok &= wf.values[n + 1] < thr[n - n0]
    per_tree = gauge_N * np.bincount(forest_roots(forest, N + 1)[ok], minlength=reps)
    lhs, lhs_se = float(per_tree.mean()), float(per_tree.std(ddof=1) / math.sqrt(reps))

    # spine side
    rr = reps_rhs or reps
    batch = sample_spine_y(d, N, H, rr, g, aligned=True, cap=cap)
    xs = sample_w(d, extra_depth, rr, g, cap)
    good = xs < thr[-1]
    for n in range(N - 1, n0 - 1, -1):
        xs = (batch.y[:, n] + xs) / m  # y[:, n] is Y_{n+1}
        good &= xs < thr[n - n0]
    f_inv_N = float(tail.inverse(math.log(N)))
    p = float(good.mean())
    rhs, rhs_se = f_inv_N * p, f_inv_N * math.sqrt(p * (1 - p) / rr)
    comb = math.hypot(lhs_se, rhs_se)
    z = (lhs - rhs) / comb if comb > 0 else (0.0 if lhs == rhs else math.inf)

    c0 = 1.0 - size_biased(d).pmf(1)
    checks = []
    for n in range(n0, N):
        thr_y = m * thr[n - n0]
        freq = float(np.mean(batch.y[:, n] < thr_y))
        se = math.sqrt(freq * (1 - freq) / rr)
        bound = 1 - c0 / math.sqrt(n)
        checks.append((n, freq, se, bound, freq <= bound + 3 * se))
    meta = {"reference_depth": H, "extra_depth": extra_depth, "reps_lhs": reps, "reps_rhs": rr, **tail.metadata()}
    return ThinRayReport(n0, N, lhs, lhs_se, rhs, rhs_se, z, tuple(thr), tuple(checks), meta)
