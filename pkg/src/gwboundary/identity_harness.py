"""Monte-Carlo and exact checks of the size-bias identities.

Two identities are checked on a battery of functionals ``G(T|n, u)``:

* many-to-one:  ``E[Σ_{|u|=n} G(T|n, u) m^{-n} Ŵ_u] = E[G(T*|n, U*|n)]``
* cut/shift:    ``E[Σ_{|u|=n} G1(Cut_u T, u) G2(θ_u T)] = m^n E[G1(Cut T*, U*|n)] E[G2(T)]``

Both hold exactly in expectation at any truncation depth because
``E[Ŵ_u | u ∈ T] = 1``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .branching_measure import w_field
from .offspring import FiniteOffspring, GeometricOffspring, OffspringDistribution, size_biased
from .sampler import (
    DEFAULT_CAP,
    as_generator,
    forest_roots,
    sample_forest,
    sample_spine_forest,
    split_forest,
)
from .tree_core import TruncatedTree, Word, cut, format_word, shift

KINDS = ("const", "ray_step", "root_count", "cylinder")
MAX_ENUM_SUPPORT = 5
MAX_FOLKLORE_N = 10


@dataclass(frozen=True)
class FunctionalSpec:
    """Indicator functional of a tree and a word of length ``depth``.

    ``const``: 1.  ``ray_step``: ``1{u_j = i}``.  ``root_count``: ``1{k_∅ = k}``.
    ``cylinder``: ``1{T|p = pattern}`` and, if ``prefix`` is set, ``u`` starts
    with ``prefix`` (``p`` = pattern depth).
    """

    kind: str
    depth: int
    j: int = 0
    i: int = 0
    k: int = 0
    pattern: TruncatedTree | None = None
    prefix: Word | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")
        if self.kind == "ray_step" and not (1 <= self.j <= self.depth and self.i >= 1):
            raise ValueError("ray_step needs 1 <= j <= depth and i >= 1")
        if self.kind == "cylinder":
            if self.pattern is None:
                raise ValueError("cylinder needs a pattern")
            if self.prefix is not None and len(self.prefix) > self.depth:
                raise ValueError("prefix longer than the word")

    @property
    def tree_depth(self) -> int:
        """Depth of tree data the functional reads."""
        if self.kind == "root_count":
            return 1
        if self.kind == "cylinder":
            return self.pattern.depth
        return 0

    @property
    def tree_only(self) -> bool:
        return self.kind in ("const", "root_count") or (self.kind == "cylinder" and self.prefix is None)

    def label(self) -> str:
        if self.kind == "const":
            return f"const[n={self.depth}]"
        if self.kind == "ray_step":
            return f"ray_step[n={self.depth},u_{self.j}={self.i}]"
        if self.kind == "root_count":
            return f"root_count[n={self.depth},k={self.k}]"
        pre = "" if self.prefix is None else f",prefix={format_word(self.prefix) or '∅'}"
        body = ";".join(",".join(map(str, lv.tolist())) for lv in self.pattern.levels)
        return f"cylinder[n={self.depth},pattern={body}{pre}]"


def const(n: int) -> FunctionalSpec:
    return FunctionalSpec("const", n)


def ray_step(j: int, i: int, n: int | None = None) -> FunctionalSpec:
    return FunctionalSpec("ray_step", j if n is None else n, j=j, i=i)


def root_count(k: int, n: int = 1) -> FunctionalSpec:
    return FunctionalSpec("root_count", n, k=k)


def cylinder(pattern: TruncatedTree, prefix: Word | None = None, n: int | None = None) -> FunctionalSpec:
    return FunctionalSpec("cylinder", pattern.depth if n is None else n, pattern=pattern, prefix=prefix)


# ---------------------------------------------------------------------------
# evaluation on single trees (reference route)


def evaluate(G: FunctionalSpec, tree: TruncatedTree, word: Word | None = None) -> float:
    """``G(tree, word)`` on a materialized tree."""
    if G.kind == "const":
        return 1.0
    if G.kind == "ray_step":
        return float(word[G.j - 1] == G.i)
    if G.kind == "root_count":
        if tree.depth < 1:
            raise ValueError("root offspring lies below the truncation")
        return float(tree.k(()) == G.k)
    if tree.depth < G.pattern.depth:
        raise ValueError("tree shallower than the cylinder pattern")
    if G.prefix is not None and tuple(word[: len(G.prefix)]) != tuple(G.prefix):
        return 0.0
    return float(tree.restrict(G.pattern.depth) == G.pattern)


# ---------------------------------------------------------------------------
# vectorized evaluation on forests


def _letters(forest: TruncatedTree, fg: int) -> np.ndarray:
    """Child index of every node at forest generation ``fg >= 2``."""
    parents = forest.parent_index(fg)
    return np.arange(len(parents)) - forest.offsets[fg - 1][parents] + 1


def _ancestor(forest: TruncatedTree, fg_from: int, fg_to: int) -> np.ndarray:
    idx = np.arange(forest.generation_sizes[fg_from])
    for f in range(fg_from, fg_to, -1):
        idx = forest.parent_index(f)[idx]
    return idx


def pattern_match(forest: TruncatedTree, fg: int, pattern: TruncatedTree) -> np.ndarray:
    """For each node at forest generation ``fg``: does its subtree, cut at the
    pattern's depth, equal the pattern?"""
    R = int(forest.generation_sizes[fg])
    if fg + pattern.depth > forest.depth:
        raise ValueError("forest too shallow for the pattern")
    ok = np.ones(R, dtype=bool)
    anc = np.arange(R)
    for j in range(pattern.depth):
        counts = forest.levels[fg + j]
        want = pattern.levels[j]
        z = np.bincount(anc, minlength=R)
        ok &= z == len(want)
        start = np.concatenate(([0], np.cumsum(z)))[:-1]
        pos = np.arange(len(anc)) - start[anc]
        inside = pos < len(want)
        bad = np.ones(len(anc), dtype=bool)
        bad[inside] = counts[inside] != want[pos[inside]]
        ok &= np.bincount(anc, weights=bad, minlength=R) == 0
        anc = np.repeat(anc, counts)
    return ok


def evaluate_forest(G: FunctionalSpec, forest: TruncatedTree, n: int | None = None) -> np.ndarray:
    """``G(T_i|·, u)`` for every word ``u`` of generation ``n`` (default ``G.depth``)
    of every tree ``T_i`` of the forest, in forest order."""
    n = G.depth if n is None else n
    fg = n + 1
    size = int(forest.generation_sizes[fg])
    if G.kind == "const":
        return np.ones(size)
    if G.kind == "ray_step":
        if G.j > n:
            raise ValueError("ray step beyond the word length")
        let = _letters(forest, G.j + 1)
        return (let[_ancestor(forest, fg, G.j + 1)] == G.i).astype(float)
    root = _ancestor(forest, fg, 1)
    if G.kind == "root_count":
        return (forest.levels[1][root] == G.k).astype(float)
    ok = pattern_match(forest, 1, G.pattern)[root]
    if G.prefix is not None:
        for j, letter in enumerate(G.prefix, start=1):
            ok &= _letters(forest, j + 1)[_ancestor(forest, fg, j + 1)] == letter
    return ok.astype(float)


def evaluate_subtrees(G: FunctionalSpec, forest: TruncatedTree, n: int) -> np.ndarray:
    """``G(θ_u T)`` for every generation-``n`` word ``u`` (tree-only functionals)."""
    if not G.tree_only:
        raise ValueError("functional depends on a word; it cannot be applied to a subtree alone")
    fg = n + 1
    size = int(forest.generation_sizes[fg])
    if G.kind == "const":
        return np.ones(size)
    if G.kind == "root_count":
        if fg >= forest.depth:
            raise ValueError("subtree root offspring lies below the truncation")
        return (forest.levels[fg] == G.k).astype(float)
    return pattern_match(forest, fg, G.pattern).astype(float)


# ---------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class TwoSided:
    label: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    analytic: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def z(self) -> float:
        comb = math.hypot(self.lhs_se, self.rhs_se)
        if comb == 0:
            return 0.0 if self.lhs == self.rhs else math.copysign(math.inf, self.lhs - self.rhs)
        return (self.lhs - self.rhs) / comb

    def analytic_z(self) -> tuple[float, float] | None:
        if self.analytic is None:
            return None

        def zz(v, se):
            if se == 0:
                return 0.0 if abs(v - self.analytic) < 1e-12 else math.inf
            return (v - self.analytic) / se

        return zz(self.lhs, self.lhs_se), zz(self.rhs, self.rhs_se)

    def passed(self, k: float = 3.0) -> bool:
        if abs(self.z) > k:
            return False
        az = self.analytic_z()
        return az is None or (abs(az[0]) <= k and abs(az[1]) <= k)

    def verdict(self, k: float = 3.0) -> str:
        return "pass" if self.passed(k) else "fail"

    def to_json(self) -> dict:
        out = {
            "spec": self.label,
            "lhs": self.lhs,
            "lhs_se": self.lhs_se,
            "rhs": self.rhs,
            "rhs_se": self.rhs_se,
            "z": self.z,
            "verdict": self.verdict(),
            **self.meta,
        }
        if self.analytic is not None:
            out["analytic"] = self.analytic
            out["analytic_z"] = list(self.analytic_z())
        return out


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), math.inf
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def analytic_value(d: OffspringDistribution, G: FunctionalSpec) -> float | None:
    """Closed form of ``E[G(T*|n, U*|n)]`` where one is available."""
    if G.kind == "const":
        return 1.0
    if G.kind == "root_count" and G.depth >= 1:
        return size_biased(d).pmf(G.k)
    if G.kind == "ray_step" and G.j == 1:
        # Σ_{ℓ >= i} ρ(i, ℓ) = P(ξ >= i) / m
        if isinstance(d, GeometricOffspring):
            return d.c**G.i / d.m
        return sum(d.pmf(l) for l in d.support if l >= G.i) / d.m
    return None


@dataclass
class SampleBank:
    """Shared samples for one offspring law: a GW forest, a size-biased forest
    (both at reference depth ``H``) and an independent GW forest."""

    d: OffspringDistribution
    depth: int
    gw: TruncatedTree
    spine: "object"
    gw2: TruncatedTree
    _w: object = None

    @classmethod
    def draw(cls, d: OffspringDistribution, depth: int, reps: int, rng, cap: int = DEFAULT_CAP) -> "SampleBank":
        g = as_generator(rng)
        gw = sample_forest(d, depth, reps, g, cap)
        sp = sample_spine_forest(d, depth, reps, g, cap)
        gw2 = sample_forest(d, depth, reps, g, cap)
        return cls(d, depth, gw, sp, gw2)

    @property
    def reps(self) -> int:
        return int(self.gw.levels[0][0])

    @property
    def w(self):
        if self._w is None:
            self._w = w_field(self.gw, self.d.m)
        return self._w

    def per_tree(self, node_values: np.ndarray, n: int) -> np.ndarray:
        return np.bincount(forest_roots(self.gw, n + 1), weights=node_values, minlength=self.reps)


def keyformula_mc(d: OffspringDistribution, G: FunctionalSpec, reps: int, rng, *, extra_depth: int = 3, bank: SampleBank | None = None) -> TwoSided:
    """Many-to-one identity for ``G``; ``Ŵ`` uses reference depth ``G.depth + extra_depth``
    unless a shared bank is passed."""
    n = G.depth
    if bank is None:
        bank = SampleBank.draw(d, max(n + extra_depth, G.tree_depth, 1), reps, rng)
    if n > bank.depth or G.tree_depth > bank.depth:
        raise ValueError(f"functional depth exceeds the simulation depth {bank.depth}")
    m = d.m
    vals = evaluate_forest(G, bank.gw, n) * bank.w.values[n + 1] * m ** (-n)
    lhs = _mean_se(bank.per_tree(vals, n))
    at_spine = evaluate_forest(G, bank.spine.forest, n)[bank.spine.spine_index[n]]
    rhs = _mean_se(at_spine)
    meta = {"identity": "many-to-one", "reference_depth": bank.depth, "reps": bank.reps}
    return TwoSided(G.label(), *lhs, *rhs, analytic_value(d, G), meta)


def _folklore_lhs_cut(G1: FunctionalSpec, G2: FunctionalSpec, trees, n: int) -> np.ndarray:
    out = np.zeros(len(trees))
    for r, t in enumerate(trees):
        if n > t.depth:
            raise ValueError("tree shallower than n")
        s = 0.0
        for u in t.words(n):
            a = evaluate(G1, cut(t, u), u)
            if a:
                s += a * evaluate(G2, shift(t, u))
        out[r] = s
    return out


def folklore_check(
    d: OffspringDistribution,
    n: int,
    G1: FunctionalSpec,
    G2: FunctionalSpec,
    reps: int,
    rng,
    *,
    extra_depth: int = 3,
    bank: SampleBank | None = None,
    method: str = "auto",
) -> TwoSided:
    """Cut/shift identity.  ``method="cut"`` materializes every ``Cut_u T`` and
    ``θ_u T`` with :func:`tree_core.cut` / :func:`tree_core.shift`;
    ``"vector"`` evaluates on the forest directly (valid when ``G1`` reads no
    data below generation ``n``); ``"auto"`` picks the vector route when valid."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n > MAX_FOLKLORE_N and d.m <= 2.5:
        raise ValueError(f"n = {n} exceeds the materialization limit {MAX_FOLKLORE_N}")
    if not G2.tree_only:
        raise ValueError("G2 must be a functional of the tree alone")
    need = max(n + G2.tree_depth, G1.tree_depth, n)
    if bank is None:
        bank = SampleBank.draw(d, max(need + extra_depth, 1), reps, rng)
    if need > bank.depth:
        raise ValueError(f"functionals need depth {need} > simulation depth {bank.depth}")
    vector_ok = G1.tree_depth <= n and not (G1.kind == "root_count" and n == 0)
    if method == "auto":
        method = "vector" if vector_ok else "cut"
    if method == "vector" and not vector_ok:
        raise ValueError("G1 reads the cut tree below generation n; use method='cut'")
    m = d.m

    if method == "vector":
        node = evaluate_forest(G1, bank.gw, n) * evaluate_subtrees(G2, bank.gw, n)
        lhs_vals = bank.per_tree(node, n)
        a_vals = evaluate_forest(G1, bank.spine.forest, n)[bank.spine.spine_index[n]]
    elif method == "cut":
        lhs_vals = _folklore_lhs_cut(G1, G2, split_forest(bank.gw), n)
        sp_trees = split_forest(bank.spine.forest)
        words = bank.spine.spine_words(n)
        a_vals = np.array([evaluate(G1, cut(t, u), u) for t, u in zip(sp_trees, words)])
    else:
        raise ValueError(f"unknown method {method!r}")
    b_vals = evaluate_subtrees(G2, bank.gw2, 0)
    lhs, lhs_se = _mean_se(lhs_vals)
    a, a_se = _mean_se(a_vals)
    b, b_se = _mean_se(b_vals)
    rhs = m**n * a * b
    rhs_se = m**n * math.hypot(b * a_se, a * b_se)
    meta = {"identity": "cut-shift", "n": n, "method": method, "reference_depth": bank.depth, "reps": bank.reps}
    return TwoSided(f"folklore[n={n}; G1={G1.label()}; G2={G2.label()}]", lhs, lhs_se, rhs, rhs_se, None, meta)


# ---------------------------------------------------------------------------
# battery


def _most_likely(d: OffspringDistribution, ks) -> int:
    return max(ks, key=lambda k: (d.pmf(k), -k))


def default_battery(d: OffspringDistribution) -> tuple[list[FunctionalSpec], list[tuple[int, FunctionalSpec, FunctionalSpec]]]:
    """Seven many-to-one functionals and four cut/shift triples ``(n, G1, G2)``,
    with patterns chosen among likely shapes of ``d``."""
    sb = size_biased(d)
    ks = [int(k) for k in d.support] if isinstance(d, FiniteOffspring) else list(range(0, 6))
    k_sp = max((k for k in ks if k >= 1), key=lambda k: (sb.pmf(k), -k))
    k_ch = _most_likely(d, ks)
    k_alt = _most_likely(d, [k for k in ks if k != k_ch] or [k_ch])
    off2 = {(): k_sp}
    for i in range(1, k_sp + 1):
        off2[(i,)] = k_ch if i > 1 else k_alt
    pat2 = TruncatedTree.from_offspring(off2, 2)
    kid = next((i for i in range(1, k_sp + 1) if off2[(i,)] >= 1), None)
    prefix = (kid, 1) if kid is not None else (1,)
    key = [
        const(2),
        ray_step(1, 1),
        root_count(k_sp),
        ray_step(2, min(2, max(k_sp, 1)), n=2),
        cylinder(pat2, prefix=prefix),
        cylinder(pat2),
        root_count(k_sp, n=2),
    ]
    # cut-shift: G1 on the cut tree, G2 on the shifted subtree
    cut_pat = dict(off2)
    cut_pat[(1,)] = 0
    folk = [
        (2, const(2), const(0)),
        (1, const(1), root_count(0) if d.pmf(0) > 0 else root_count(k_ch)),
        (1, ray_step(1, 1), cylinder(pat2)),
        (1, cylinder(TruncatedTree.from_offspring(cut_pat, 2), prefix=(1,), n=1), root_count(k_ch)),
    ]
    return key, folk


@dataclass(frozen=True)
class BatteryResult:
    spec: str
    results: tuple[TwoSided, ...]
    meta: dict

    @property
    def max_abs_z(self) -> float:
        return max(abs(r.z) for r in self.results)

    def passed(self, k: float = 3.0) -> bool:
        return all(r.passed(k) for r in self.results)

    def to_json(self) -> dict:
        return {"offspring": self.spec, **self.meta, "results": [r.to_json() for r in self.results]}


def run_battery(d: OffspringDistribution, reps: int, rng, *, extra_depth: int = 3) -> BatteryResult:
    key, folk = default_battery(d)
    need = max(
        [G.depth for G in key]
        + [G.tree_depth for G in key]
        + [max(n + G2.tree_depth, G1.tree_depth) for n, G1, G2 in folk]
    )
    bank = SampleBank.draw(d, need + extra_depth, reps, rng)
    results = [keyformula_mc(d, G, reps, None, bank=bank) for G in key]
    results += [folklore_check(d, n, G1, G2, reps, None, bank=bank) for n, G1, G2 in folk]
    return BatteryResult(d.spec, tuple(results), {"reference_depth": bank.depth, "reps": reps})


# ---------------------------------------------------------------------------
# exact enumeration


def _check_enumerable(d: OffspringDistribution, n: int) -> None:
    if not isinstance(d, FiniteOffspring):
        raise ValueError("exact enumeration needs a finite-support law")
    if n not in (1, 2):
        raise ValueError("enumeration supports n in {1, 2}")
    if d.max_support > MAX_ENUM_SUPPORT:
        raise ValueError(f"support up to {d.max_support} exceeds the enumeration cap {MAX_ENUM_SUPPORT}")


def gw_law(d: FiniteOffspring, h: int) -> dict[TruncatedTree, Fraction]:
    """Exact law of ``T|h`` for a GW tree."""
    if h == 0:
        return {TruncatedTree.single_node(): Fraction(1)}
    sub = list(gw_law(d, h - 1).items())
    out: dict[TruncatedTree, Fraction] = defaultdict(Fraction)
    for k in map(int, d.support):
        pk = d.exact_pmf(k)
        combos = [((), Fraction(1))]
        for _ in range(k):
            combos = [(c + (t,), p * q) for c, p in combos for t, q in sub]
        for kids, p in combos:
            out[TruncatedTree.join(list(kids), depth=h)] += pk * p
    return dict(out)


def spine_law(d: FiniteOffspring, h: int) -> dict[TruncatedTree, Fraction]:
    """Exact marginal law of ``T*|h`` (spine positions summed out)."""
    if h == 0:
        return {TruncatedTree.single_node(): Fraction(1)}
    sb = size_biased(d)
    gw_sub = list(gw_law(d, h - 1).items())
    sp_sub = list(spine_law(d, h - 1).items())
    out: dict[TruncatedTree, Fraction] = defaultdict(Fraction)
    for ell in map(int, d.support):
        for i in range(1, ell + 1):
            w = sb.exact_rho(i, ell)
            if w == 0:
                continue
            combos = [((), w)]
            for pos in range(1, ell + 1):
                src = sp_sub if pos == i else gw_sub
                combos = [(c + (t,), p * q) for c, p in combos for t, q in src]
            for kids, p in combos:
                out[TruncatedTree.join(list(kids), depth=h)] += p
    return dict(out)


@dataclass(frozen=True)
class EnumerationReport:
    n: int
    tv: Fraction
    n_shapes: int
    reweighted: dict = field(repr=False)
    spine: dict = field(repr=False)

    @property
    def tv_float(self) -> float:
        return float(self.tv)


def sizebias_law_enumerate(d: FiniteOffspring, n: int) -> EnumerationReport:
    """Total variation between ``(Z_n/m^n)·P(T|n ∈ ·)`` and the law of ``T*|n``,
    both computed in exact rational arithmetic."""
    _check_enumerable(d, n)
    m = d.exact_mean
    reweighted = {t: p * int(t.generation_sizes[n]) / m**n for t, p in gw_law(d, n).items()}
    reweighted = {t: p for t, p in reweighted.items() if p}
    spine = spine_law(d, n)
    keys = set(reweighted) | set(spine)
    tv = sum((abs(reweighted.get(t, Fraction(0)) - spine.get(t, Fraction(0))) for t in keys), Fraction(0)) / 2
    return EnumerationReport(n, tv, len(keys), reweighted, spine)
