"""Truncated Kesten-Stigum estimates and branching-measure ball masses.

On a tree truncated at depth ``N`` the estimate of ``W_u`` is
``Ŵ_u = Z_{N-|u|}(θ_u T) / m^{N-|u|}``.  The boundary metric is
``δ(u, v) = exp(-|u ∧ v|)`` so the ball ``B_u`` has diameter ``e^{-|u|}`` and
mass ``m^{-|u|} Ŵ_u``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .tree_core import TruncatedTree, Word, format_word, is_prefix

_SNAP = 1e-12


class Generation(NamedTuple):
    n: int
    whole_space: bool


def radius_to_generation(r: float) -> Generation:
    """``n(r) = floor((-log r)_+) + 1``; ``whole_space`` is set when ``r > 1``.

    ``-log r`` within 1e-12 of an integer is snapped to it, so that
    ``r = exp(-k)`` maps to ``k + 1`` despite rounding in ``exp``.
    """
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    x = max(-math.log(r), 0.0)
    k = round(x)
    if abs(x - k) <= _SNAP * max(1.0, x):
        x = float(k)
    return Generation(int(math.floor(x)) + 1, r > 1)


@dataclass(frozen=True)
class BallId:
    """The ball ``B_u`` of boundary rays through ``u``."""

    center: Word

    @property
    def generation(self) -> int:
        return len(self.center)

    @property
    def diameter(self) -> float:
        return math.exp(-len(self.center))

    def contains(self, other: "BallId") -> bool:
        return is_prefix(self.center, other.center)

    def disjoint(self, other: "BallId") -> bool:
        return not (self.contains(other) or other.contains(self))


class WField:
    """All ``Ŵ_u`` of one truncated tree, stored per generation in word order.

    Built by :func:`w_field`.  With ``log=True`` ball masses are returned as
    natural logs (``-inf`` for empty balls).
    """

    def __init__(self, tree: TruncatedTree, m: float, values: tuple[np.ndarray, ...], log: bool = False):
        self.tree = tree
        self.m = float(m)
        self.values = values
        self.log = log

    @property
    def depth(self) -> int:
        """Reference depth of every estimate."""
        return self.tree.depth

    @property
    def root(self) -> float:
        return float(self.values[0][0])

    def generation(self, n: int) -> np.ndarray:
        return self.values[n]

    def value(self, u: Word) -> float:
        idx = self.tree.locate(tuple(u))
        if idx is None:
            return 0.0
        return float(self.values[len(u)][idx])

    __getitem__ = value

    def masses(self, n: int) -> np.ndarray:
        """Ball masses of all generation-``n`` balls, in word order."""
        w = self.values[n]
        if self.log:
            with np.errstate(divide="ignore"):
                return np.log(w) - n * math.log(self.m)
        return w * self.m ** (-n)

    def ball_mass(self, u: Word) -> float:
        return ball_mass(self, u)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# depth={self.depth} m={self.m!r} log={self.log}\n")
        buf.write("word,generation,w_value,ball_mass\n")
        for n in range(self.depth + 1):
            words = self.tree.words(n)
            for u, w, b in zip(words, self.values[n].tolist(), self.masses(n).tolist()):
                buf.write(f"{format_word(u)},{n},{w!r},{b!r}\n")
        return buf.getvalue()


def w_field(t: TruncatedTree, m: float, *, log: bool = False) -> WField:
    """One bottom-up pass: frontier words get 1, then ``Ŵ_u = m^{-1} Σ_i Ŵ_{u*i}``.

    Dead subtrees end with an empty child sum and therefore get 0.
    """
    if not m > 0:
        raise ValueError("mean must be positive")
    vals: list[np.ndarray] = [np.ones(t.generation_sizes[t.depth])]
    for n in range(t.depth - 1, -1, -1):
        parents = t.parent_index(n + 1)
        child_sum = np.bincount(parents, weights=vals[-1], minlength=len(t.levels[n]))
        vals.append(child_sum / m)
    vals.reverse()
    for a in vals:
        a.setflags(write=False)
    return WField(t, m, tuple(vals), log=log)


def ball_mass(w: WField, u: Word) -> float:
    """``m^{-|u|} Ŵ_u``; exactly 0 (or ``-inf`` in log mode) when ``u`` is absent."""
    u = tuple(u)
    if len(u) > w.depth:
        raise ValueError(f"|u| = {len(u)} exceeds the reference depth {w.depth}")
    idx = w.tree.locate(u)
    if idx is None:
        return -math.inf if w.log else 0.0
    val = float(w.values[len(u)][idx])
    if w.log:
        return (math.log(val) if val > 0 else -math.inf) - len(u) * math.log(w.m)
    return val * w.m ** (-len(u))
