"""Minimal ball covers of a truncated boundary and discrete mass/gauge comparisons.

A ball ``B_u`` has diameter ``e^{-|u|}`` and costs ``g(e^{-|u|})``.  Covers of
the depth-``N`` shadow of the boundary (frontier words) by balls of
generation in ``[min_gen, N]`` are antichains, and the cheapest one is found
by a bottom-up recurrence.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .branching_measure import w_field
from .tail_gauge import Gauge
from .tree_core import TruncatedTree, Word, format_word, is_prefix

SELF_CHECK_RTOL = 1e-12


def generation_costs(g, n_lo: int, n_hi: int) -> dict[int, float]:
    """``g(e^{-n})`` for ``n in [n_lo, n_hi]``.

    A :class:`Gauge` is evaluated through ``at_generation`` (exact algebraic
    form); any other callable is evaluated at ``r = exp(-n)``.
    """
    out = {}
    for n in range(n_lo, n_hi + 1):
        try:
            v = g.at_generation(n) if isinstance(g, Gauge) else float(g(math.exp(-n)))
        except ValueError as exc:
            raise ValueError(f"gauge undefined at scale e^-{n}: {exc}") from None
        if not (v >= 0 and math.isfinite(v)):
            raise ValueError(f"gauge value {v} at scale e^-{n} is not a finite nonnegative number")
        out[n] = v
    return out


def _default_min_gen(g) -> int:
    return 2 if isinstance(g, Gauge) else 1


@dataclass(frozen=True)
class CoverSolution:
    cost: float
    antichain: tuple[Word, ...]
    ball_costs: tuple[float, ...]
    min_gen: int
    depth: int

    @property
    def scale_bounds(self) -> tuple[int, int] | None:
        if not self.antichain:
            return None
        gens = [len(u) for u in self.antichain]
        return min(gens), max(gens)

    def to_json(self) -> dict:
        return {
            "total": self.cost,
            "min_gen": self.min_gen,
            "depth": self.depth,
            "balls": [{"word": format_word(u), "cost": c} for u, c in zip(self.antichain, self.ball_costs)],
        }


def _dp(levels, sizes, gen_of: Callable[[int], int], costs: dict[int, float], min_gen: int, depth: int):
    """Bottom-up recurrence on per-generation offspring arrays.

    ``gen_of(j)`` maps a storage generation to the boundary generation (they
    differ by one in a forest).  Returns per-generation cost arrays and
    "take the ball here" masks.
    """
    cost = [None] * (depth + 1)
    take = [None] * (depth + 1)
    cost[depth] = np.full(sizes[depth], costs[gen_of(depth)])
    take[depth] = np.ones(sizes[depth], dtype=bool)
    for j in range(depth - 1, -1, -1):
        parents = np.repeat(np.arange(len(levels[j])), levels[j])
        child_sum = np.bincount(parents, weights=cost[j + 1], minlength=len(levels[j]))
        n = gen_of(j)
        if n >= min_gen:
            t = costs[n] < child_sum
            cost[j] = np.where(t, costs[n], child_sum)
            take[j] = t
        else:
            cost[j] = child_sum
            take[j] = np.zeros(len(levels[j]), dtype=bool)
    return cost, take


def min_cover_cost(t: TruncatedTree, g, min_gen: int | None = None, *, self_check: bool = True) -> CoverSolution:
    """Cheapest antichain covering every frontier word, balls of generation in
    ``[min_gen, N]``.  Dead subtrees cost nothing; a ball is chosen only when
    strictly cheaper than covering its children."""
    if min_gen is None:
        min_gen = _default_min_gen(g)
    if min_gen < 1:
        raise ValueError("min_gen must be >= 1")
    N = t.depth
    if N < min_gen:
        raise ValueError(f"tree depth {N} is below min_gen {min_gen}")
    costs = generation_costs(g, min_gen, N)
    cost, take = _dp(t.levels, t.generation_sizes, lambda j: j, costs, min_gen, N)

    chosen_idx: list[tuple[int, np.ndarray]] = []
    covered = np.zeros(1, dtype=bool)
    for j in range(N + 1):
        if j > 0:
            covered = covered[t.parent_index(j)]
        pick = take[j] & ~covered
        if pick.any():
            chosen_idx.append((j, np.flatnonzero(pick)))
        covered = covered | pick
    antichain, ball_costs = [], []
    for j, idx in chosen_idx:
        words = t.words(j)
        antichain.extend(words[i] for i in idx)
        ball_costs.extend([costs[j]] * len(idx))
    total = float(cost[0][0])
    sol = CoverSolution(total, tuple(antichain), tuple(ball_costs), min_gen, N)
    if self_check:
        check = math.fsum(ball_costs)
        if abs(check - total) > SELF_CHECK_RTOL * max(abs(total), 1e-300):
            raise AssertionError(f"cover cost {total} disagrees with its antichain sum {check}")
    return sol


def forest_cover_costs(forest: TruncatedTree, g, min_gen: int | None = None) -> np.ndarray:
    """Per-tree optimal cover costs for a forest from :func:`sampler.sample_forest`."""
    if min_gen is None:
        min_gen = _default_min_gen(g)
    N = forest.depth - 1
    if N < min_gen:
        raise ValueError(f"tree depth {N} is below min_gen {min_gen}")
    costs = generation_costs(g, min_gen, N)
    cost, _ = _dp(forest.levels, forest.generation_sizes, lambda j: j - 1, costs, min_gen, forest.depth)
    return cost[1]


# ---------------------------------------------------------------------------
# exhaustive oracle


def _alive_nodes(t: TruncatedTree) -> set[Word]:
    alive = set()
    for u in t.words(t.depth):
        for k in range(len(u) + 1):
            alive.add(u[:k])
    return alive


def enumerate_covers(t: TruncatedTree, min_gen: int) -> list[tuple[Word, ...]]:
    """All antichains of alive words with generation in ``[min_gen, N]``
    covering every frontier word."""
    alive = _alive_nodes(t)
    N = t.depth

    def covers(u: Word) -> list[tuple[Word, ...]]:
        if len(u) == N:
            return [(u,)]
        opts = [(u,)] if len(u) >= min_gen else []
        kids = [u + (i,) for i in range(1, t.k(u) + 1) if u + (i,) in alive]
        if kids:
            for combo in itertools.product(*(covers(v) for v in kids)):
                opts.append(tuple(itertools.chain.from_iterable(combo)))
        return opts

    return covers(()) if () in alive else [()]


def brute_force_cover_cost(t: TruncatedTree, g, min_gen: int | None = None) -> float:
    if min_gen is None:
        min_gen = _default_min_gen(g)
    costs = generation_costs(g, min_gen, t.depth)
    return min(math.fsum(costs[len(u)] for u in a) for a in enumerate_covers(t, min_gen))


def is_antichain(words) -> bool:
    ws = list(words)
    return not any(i != j and is_prefix(a, b) for i, a in enumerate(ws) for j, b in enumerate(ws))


def covers_frontier(t: TruncatedTree, words) -> bool:
    ws = set(words)
    return all(any(u[:k] in ws for k in range(len(u) + 1)) for u in t.words(t.depth))


# ---------------------------------------------------------------------------
# comparison inequalities


def tree_from_support(leaf_masses: Mapping[Word, float]) -> TruncatedTree:
    """Smallest tree whose frontier contains every key (all keys share one length).

    Missing siblings below a present maximum letter become frontier words of
    mass 0 if they sit at depth ``N`` and dead leaves otherwise.
    """
    words = [tuple(u) for u in leaf_masses]
    if not words:
        raise ValueError("empty mass map")
    N = len(words[0])
    if any(len(u) != N for u in words):
        raise ValueError("all leaf words must have the same length")
    kmax: dict[Word, int] = {}
    for u in words:
        for k in range(N):
            p = u[:k]
            kmax[p] = max(kmax.get(p, 0), u[k])
    levels = []
    gen: list[Word] = [()]
    for _ in range(N):
        counts = [kmax.get(u, 0) for u in gen]
        levels.append(counts)
        gen = [u + (i,) for u, k in zip(gen, counts) for i in range(1, k + 1)]
    return TruncatedTree(N, tuple(levels))


@dataclass(frozen=True)
class ComparisonReport:
    verdict_lower: str  # "pass" | "fail" | "hypothesis not met"
    verdict_upper: str
    cost: float
    total_mass: float
    C: float
    min_gen: int
    witnesses_lower: tuple[tuple[str, int], ...]  # (word, generation) where mass > g
    witnesses_upper: tuple[str, ...]  # frontier words never reaching g
    cover: CoverSolution = field(repr=False)

    def to_json(self) -> dict:
        return {
            "lower": {"verdict": self.verdict_lower, "witnesses": [list(w) for w in self.witnesses_lower]},
            "upper": {"verdict": self.verdict_upper, "witnesses": list(self.witnesses_upper)},
            "cost": self.cost,
            "total_mass": self.total_mass,
            "C": self.C,
            "min_gen": self.min_gen,
        }


def comparison_check(
    leaf_masses: Mapping[Word, float],
    g,
    C: float,
    min_gen: int | None = None,
    *,
    rtol: float = 1e-12,
    max_witnesses: int = 10,
) -> ComparisonReport:
    """Discrete comparison of cover cost with total mass.

    Lower form: if ``μ(B_{u|n}) <= g(e^{-n})`` for every frontier ``u`` and
    ``n in [min_gen, N]``, assert ``cost >= μ(total)/C``.  Upper form: if every
    frontier ``u`` has some such ``n`` with ``μ(B_{u|n}) >= g(e^{-n})``,
    assert ``cost <= C μ(total)``.  A failed hypothesis yields
    "hypothesis not met" and nothing is asserted.
    """
    if C < 1:
        raise ValueError("comparison constant C must be >= 1")
    if any(v < 0 for v in leaf_masses.values()):
        raise ValueError("masses must be nonnegative")
    t = tree_from_support(leaf_masses)
    if min_gen is None:
        min_gen = _default_min_gen(g)
    N = t.depth
    sol = min_cover_cost(t, g, min_gen)
    costs = generation_costs(g, min_gen, N)

    frontier = t.words(N)
    mass = [np.array([float(leaf_masses.get(u, 0.0)) for u in frontier])]
    for j in range(N - 1, -1, -1):
        mass.append(np.bincount(t.parent_index(j + 1), weights=mass[-1], minlength=len(t.levels[j])))
    mass.reverse()
    total = float(mass[0][0])

    # ancestor index of every frontier word at each generation
    anc = [None] * (N + 1)
    anc[N] = np.arange(len(frontier))
    for j in range(N, 0, -1):
        anc[j - 1] = t.parent_index(j)[anc[j]]
    wit_low, reached, hyp_low = [], np.zeros(len(frontier), dtype=bool), True
    for n in range(min_gen, N + 1):
        mu = mass[n][anc[n]]
        over = mu > costs[n] * (1 + rtol)
        hyp_low &= not over.any()
        for i in np.flatnonzero(over)[: max_witnesses - len(wit_low)]:
            wit_low.append((format_word(frontier[i]), n))
        reached |= mu >= costs[n] * (1 - rtol)
    hyp_up = bool(reached.all())
    slack = 1e-9 * max(total, sol.cost, 1e-300)
    if hyp_low:
        v_low = "pass" if sol.cost >= total / C - slack else "fail"
    else:
        v_low = "hypothesis not met"
    if hyp_up:
        v_up = "pass" if sol.cost <= C * total + slack else "fail"
    else:
        v_up = "hypothesis not met"
    wit_up = tuple(format_word(frontier[i]) for i in np.flatnonzero(~reached)[:max_witnesses])
    return ComparisonReport(v_low, v_up, sol.cost, total, C, min_gen, tuple(wit_low), wit_up, sol)


# ---------------------------------------------------------------------------
# pairing with the density-ratio constant


@dataclass(frozen=True)
class PairingReport:
    slope: float
    slope_se: float
    inv_kappa: float
    n_trees: int
    n_alive: int
    pairs: tuple[tuple[float, float], ...] = field(repr=False)
    note: str = ""

    @property
    def ratio(self) -> float:
        return self.slope / self.inv_kappa

    def to_json(self) -> dict:
        return {
            "slope": self.slope,
            "slope_se": self.slope_se,
            "inv_kappa_hat": self.inv_kappa,
            "n_trees": self.n_trees,
            "n_alive": self.n_alive,
            "note": self.note,
        }


PAIRING_NOTE = (
    "cover costs are pre-measures at a fixed finest scale, not the limit Hausdorff measure; "
    "the through-origin slope and 1/kappa_hat are independent estimates and are not asserted equal"
)


def c_xi_pairing(kappa_hat: float, costs, w_values, cover_meta: dict | None = None, w_meta: dict | None = None) -> PairingReport:
    """Through-origin regression of cover cost on ``Ŵ_∅`` across trees, next to ``1/κ̂``."""
    if cover_meta and w_meta:
        clash = {k for k in cover_meta.keys() & w_meta.keys() if cover_meta[k] != w_meta[k]}
        if clash:
            raise ValueError(f"metadata mismatch on {sorted(clash)}")
    c = np.asarray(costs, dtype=float)
    w = np.asarray(w_values, dtype=float)
    if c.shape != w.shape:
        raise ValueError("costs and W values must pair up")
    sww = float(np.dot(w, w))
    if sww == 0:
        raise ValueError("all W values are zero; the slope is undefined")
    slope = float(np.dot(c, w)) / sww
    resid = c - slope * w
    n = c.size
    se = math.sqrt(float(np.dot(resid, resid)) / max(n - 1, 1) / sww)
    return PairingReport(slope, se, 1.0 / kappa_hat, n, int(np.sum(w > 0)), tuple(zip(c.tolist(), w.tolist())), PAIRING_NOTE)


def cover_pairs(forest: TruncatedTree, m: float, g, min_gen: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(cover cost, Ŵ_∅)`` for every tree of a forest."""
    return forest_cover_costs(forest, g, min_gen), w_field(forest, m).values[1].copy()
