"""Seeded samplers for Galton-Watson trees, generation-size chains and
size-biased spine trees.

Every sampler takes either an :class:`RngStream` or a ready
``numpy.random.Generator``.  An ``RngStream`` is a pure value: passing the same
one twice replays the same draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .offspring import OffspringDistribution, size_biased
from .tree_core import TruncatedTree, Word, validate

DEFAULT_CAP = 10**8


class ResourceCapError(RuntimeError):
    """A sampled population exceeded the configured node cap."""


@dataclass(frozen=True)
class RngStream:
    """(seed, stream) pair mapped to an independent PCG64 stream.

    Streams are separated through ``SeedSequence`` spawn keys, so distinct
    ``stream`` values never share state.
    """

    seed: int
    stream: int = 0

    def generator(self, *sub: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *sub))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, i: int) -> "RngStream":
        return RngStream(self.seed, self.stream * 1_000_003 + i + 1)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    raise TypeError("rng must be an RngStream or numpy Generator (no implicit seeding)")


def _trusted_tree(depth: int, levels) -> TruncatedTree:
    # skips the structural checks of __post_init__; callers guarantee consistency
    t = object.__new__(TruncatedTree)
    for a in levels:
        a.setflags(write=False)
    object.__setattr__(t, "depth", depth)
    object.__setattr__(t, "levels", tuple(levels))
    return t


# ---------------------------------------------------------------------------
# plain GW trees


def sample_gw(d: OffspringDistribution, depth: int, rng, cap: int = DEFAULT_CAP) -> TruncatedTree:
    """GW(ξ) tree truncated at ``depth``; offspring drawn breadth-first."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    g = as_generator(rng)
    levels = []
    z, total = 1, 1
    for _ in range(depth):
        counts = d.draw(g, z).astype(np.int64)
        levels.append(counts)
        z = int(counts.sum())
        total += z
        if total > cap:
            raise ResourceCapError(f"tree exceeded {cap} nodes")
    return _trusted_tree(depth, levels)


def sample_forest(
    d: OffspringDistribution, depth: int, reps: int, rng, cap: int = DEFAULT_CAP
) -> TruncatedTree:
    """``reps`` independent GW trees of the given depth, hung below a virtual root.

    The result has depth ``depth + 1``; tree ``i`` is the subtree at word ``(i+1,)``.
    The cap applies to the whole forest.
    """
    g = as_generator(rng)
    levels = [np.array([reps], dtype=np.int64)]
    z, total = reps, reps
    for _ in range(depth):
        counts = d.draw(g, z).astype(np.int64)
        levels.append(counts)
        z = int(counts.sum())
        total += z
        if total > cap:
            raise ResourceCapError(f"forest exceeded {cap} nodes")
    return _trusted_tree(depth + 1, levels)


def forest_roots(forest: TruncatedTree, n: int) -> np.ndarray:
    """Tree index (0-based) of each generation-``n`` word of a forest (``n >= 1``)."""
    idx = np.arange(forest.generation_sizes[1])
    for j in range(2, n + 1):
        idx = np.repeat(idx, forest.levels[j - 1])
    return idx


def split_forest(forest: TruncatedTree) -> list[TruncatedTree]:
    reps = int(forest.levels[0][0]) if forest.depth else 0
    h = forest.depth - 1
    lo = np.arange(reps)
    hi = lo + 1
    bounds = []
    for j in range(1, forest.depth):
        off = forest.offsets[j]
        lo_next, hi_next = off[lo], off[hi]
        bounds.append((lo, hi))
        lo, hi = lo_next, hi_next
    trees = []
    for i in range(reps):
        levels = [forest.levels[j + 1][bounds[j][0][i] : bounds[j][1][i]] for j in range(h)]
        trees.append(_trusted_tree(h, levels))
    return trees


def sample_gw_batch(d: OffspringDistribution, depth: int, reps: int, rng, cap: int = DEFAULT_CAP) -> list[TruncatedTree]:
    return split_forest(sample_forest(d, depth, reps, rng, cap))


# ---------------------------------------------------------------------------
# generation-size chains


def sample_z_chain(d: OffspringDistribution, depth: int, rng, cap: int = DEFAULT_CAP) -> np.ndarray:
    """``(Z_0, ..., Z_N)``: ``Z_{n+1}`` is a sum of ``Z_n`` independent draws."""
    g = as_generator(rng)
    z = np.ones(depth + 1, dtype=np.int64)
    total = 1
    for n in range(depth):
        z[n + 1] = int(d.draw(g, int(z[n])).sum())
        total += int(z[n + 1])
        if total > cap:
            raise ResourceCapError(f"chain exceeded {cap} nodes")
    return z


def sample_z_chains(
    d: OffspringDistribution, depth: int, reps: int, rng, cap: int = DEFAULT_CAP
) -> np.ndarray:
    """``reps`` chains at once, shape ``(reps, depth + 1)``.

    Sums of i.i.d. draws are taken in law (multinomial cell counts for finite
    support, negative binomial for the geometric family).
    """
    g = as_generator(rng)
    out = np.ones((reps, depth + 1), dtype=np.int64)
    total = np.ones(reps, dtype=np.int64)
    for n in range(depth):
        out[:, n + 1] = d.sum_draws(g, out[:, n])
        total += out[:, n + 1]
        if reps and total.max() > cap:
            raise ResourceCapError(f"chain exceeded {cap} nodes")
    return out


def sample_w(d: OffspringDistribution, depth: int, reps: int, rng, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Kesten-Stigum estimates ``Z_depth / m^depth`` of ``reps`` independent trees."""
    g = as_generator(rng)
    z = np.ones(reps, dtype=np.int64)
    total = z.copy()
    for _ in range(depth):
        z = d.sum_draws(g, z)
        total += z
        if reps and total.max() > cap:
            raise ResourceCapError(f"chain exceeded {cap} nodes")
    return z / d.mean**depth


# ---------------------------------------------------------------------------
# size-biased spine trees


@dataclass(frozen=True, eq=False)
class SpineTree:
    """Truncated size-biased tree with its distinguished ray.

    ``records[n-1] = (I*_n, k*_n)``; ``grafts[n-1]`` lists the ``k*_n - 1``
    GW subtrees rooted at the off-spine children of ``spine|n-1``, ordered by
    child index.
    """

    depth: int
    spine: Word
    records: tuple[tuple[int, int], ...]
    grafts: tuple[tuple[TruncatedTree, ...], ...]

    def graft_words(self, n: int) -> list[Word]:
        if not 1 <= n <= self.depth:
            raise ValueError(f"level {n} outside [1, {self.depth}]")
        i_star, k_star = self.records[n - 1]
        parent = self.spine[: n - 1]
        return [parent + (i,) for i in range(1, k_star + 1) if i != i_star]

    @cached_property
    def tree(self) -> TruncatedTree:
        """The depth-``N`` truncation ``T*|N``; grafts are cut to reach exactly depth ``N``."""
        sub = TruncatedTree.single_node()
        for n in range(self.depth, 0, -1):
            h = self.depth - n
            i_star, k_star = self.records[n - 1]
            kids = []
            for g in self.grafts[n - 1]:
                if g.depth < h:
                    raise ValueError(f"graft at level {n} has depth {g.depth} < {h}")
                kids.append(g if g.depth == h else g.restrict(h))
            kids.insert(i_star - 1, sub)
            sub = TruncatedTree.join(kids)
        return sub

    def check(self) -> list[str]:
        """Structural invariants; empty list when all hold."""
        problems = []
        if len(self.spine) != self.depth or len(self.records) != self.depth:
            problems.append("spine length mismatch")
        for n, (i_star, k_star) in enumerate(self.records, start=1):
            if not 1 <= i_star <= k_star:
                problems.append(f"level {n}: I*={i_star} outside [1, {k_star}]")
            if self.spine[n - 1] != i_star:
                problems.append(f"level {n}: spine letter differs from I*")
            if len(self.grafts[n - 1]) != k_star - 1:
                problems.append(f"level {n}: {len(self.grafts[n - 1])} grafts for k*={k_star}")
            for g in self.grafts[n - 1]:
                if validate(g):
                    problems.append(f"level {n}: invalid graft")
        try:
            t = self.tree
            for n in range(self.depth + 1):
                if self.spine[:n] not in t:
                    problems.append(f"spine|{n} not in tree")
        except ValueError as exc:
            problems.append(str(exc))
        return problems


def _graft_depths(depth: int, subtree_depth: int, aligned: bool) -> list[int]:
    if aligned:
        if subtree_depth < depth:
            raise ValueError("aligned grafts need subtree_depth >= spine depth")
        return [subtree_depth - n for n in range(1, depth + 1)]
    if subtree_depth < 0:
        raise ValueError("subtree_depth must be nonnegative")
    return [subtree_depth] * depth


def sample_spines(
    d: OffspringDistribution,
    depth: int,
    subtree_depth: int,
    reps: int,
    rng,
    *,
    aligned: bool = False,
    cap: int = DEFAULT_CAP,
) -> list[SpineTree]:
    """``reps`` independent size-biased trees with spine length ``depth``.

    Grafts get relative depth ``subtree_depth``; with ``aligned=True`` the
    graft at level ``n`` gets depth ``subtree_depth - n`` so that the whole
    tree is truncated at the common absolute depth ``subtree_depth``.
    """
    if depth < 1:
        raise ValueError("spine depth must be >= 1")
    g = as_generator(rng)
    sb = size_biased(d)
    istar, kstar = sb.draw_rho(g, reps * depth)
    istar = istar.reshape(reps, depth)
    kstar = kstar.reshape(reps, depth)
    depths = _graft_depths(depth, subtree_depth, aligned)
    per_level: list[list[TruncatedTree]] = []
    for n in range(depth):
        counts = kstar[:, n] - 1
        per_level.append(split_forest(sample_forest(d, depths[n], int(counts.sum()), g, cap)))
    out = []
    cursor = [0] * depth
    for r in range(reps):
        grafts = []
        for n in range(depth):
            c = int(kstar[r, n]) - 1
            grafts.append(tuple(per_level[n][cursor[n] : cursor[n] + c]))
            cursor[n] += c
        spine = tuple(int(i) for i in istar[r])
        records = tuple((int(i), int(k)) for i, k in zip(istar[r], kstar[r]))
        out.append(SpineTree(depth, spine, records, tuple(grafts)))
    return out


def sample_spine(
    d: OffspringDistribution,
    depth: int,
    subtree_depth: int,
    rng,
    *,
    aligned: bool = False,
    cap: int = DEFAULT_CAP,
) -> SpineTree:
    return sample_spines(d, depth, subtree_depth, 1, rng, aligned=aligned, cap=cap)[0]


@dataclass(frozen=True)
class SpineBatch:
    """Spine records and graft W-sums for many replicas, without tree structure.

    ``y[r, n-1]`` is the sum of the W-estimates of the grafts at level ``n``;
    ``graft_depths[n-1]`` is the relative truncation depth used at level ``n``.
    """

    depth: int
    istar: np.ndarray
    kstar: np.ndarray
    y: np.ndarray
    graft_depths: tuple[int, ...]

    @property
    def reps(self) -> int:
        return self.y.shape[0]


def sample_spine_y(
    d: OffspringDistribution,
    depth: int,
    subtree_depth: int,
    reps: int,
    rng,
    *,
    aligned: bool = False,
    cap: int = DEFAULT_CAP,
) -> SpineBatch:
    """Fast path for density traces: only ``(I*, k*)`` and the per-level
    sums ``Y_n`` of graft W-estimates are drawn."""
    if depth < 1:
        raise ValueError("spine depth must be >= 1")
    g = as_generator(rng)
    istar, kstar = size_biased(d).draw_rho(g, reps * depth)
    istar = istar.reshape(reps, depth)
    kstar = kstar.reshape(reps, depth)
    depths = _graft_depths(depth, subtree_depth, aligned)
    y = np.zeros((reps, depth))
    if aligned:
        for n in range(depth):
            counts = kstar[:, n] - 1
            w = sample_w(d, depths[n], int(counts.sum()), g, cap)
            y[:, n] = np.bincount(np.repeat(np.arange(reps), counts), weights=w, minlength=reps)
    else:
        counts = (kstar - 1).ravel()
        w = sample_w(d, subtree_depth, int(counts.sum()), g, cap)
        flat = np.bincount(np.repeat(np.arange(reps * depth), counts), weights=w, minlength=reps * depth)
        y = flat.reshape(reps, depth)
    return SpineBatch(depth, istar, kstar, y, tuple(depths))


@dataclass(frozen=True)
class SpineForest:
    """``reps`` size-biased trees of depth ``N`` hung below a virtual root.

    ``spine_index[n]`` gives, per replica, the index of ``U*|n`` within
    generation ``n + 1`` of the forest (generation ``n`` of its own tree).
    """

    forest: TruncatedTree
    spine_index: tuple[np.ndarray, ...]
    istar: np.ndarray
    kstar: np.ndarray

    @property
    def depth(self) -> int:
        return self.forest.depth - 1

    @property
    def reps(self) -> int:
        return self.istar.shape[0]

    def spine_words(self, n: int) -> list[Word]:
        return [tuple(int(i) for i in row) for row in self.istar[:, :n]]


def sample_spine_forest(
    d: OffspringDistribution, depth: int, reps: int, rng, cap: int = DEFAULT_CAP
) -> SpineForest:
    """Size-biased trees truncated at ``depth`` with the spine running to the frontier.

    Spine nodes draw ``(I*, k*)`` from ρ, every other node draws from ξ; the
    spine child is placed at position ``I*`` among its siblings.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    g = as_generator(rng)
    istar, kstar = size_biased(d).draw_rho(g, reps * depth)
    istar = istar.reshape(reps, depth).astype(np.int64)
    kstar = kstar.reshape(reps, depth).astype(np.int64)
    levels = [np.array([reps], dtype=np.int64)]
    spine_idx = [np.arange(reps)]
    total = reps
    for n in range(depth):
        size = len(spine_idx[-1]) if n == 0 else int(levels[-1].sum())
        counts = d.draw(g, size).astype(np.int64)
        counts[spine_idx[-1]] = kstar[:, n]
        levels.append(counts)
        first = np.concatenate(([0], np.cumsum(counts)))[spine_idx[-1]]
        spine_idx.append(first + istar[:, n] - 1)
        total += int(counts.sum())
        if total > cap:
            raise ResourceCapError(f"forest exceeded {cap} nodes")
    return SpineForest(_trusted_tree(depth + 1, levels), tuple(spine_idx), istar, kstar)
