"""Offspring laws: finite-support tables and the geometric family.

Each law exposes its mean ``m``, generating function ``f``, extinction
probability ``q`` and samplers; :func:`size_biased` builds the size-biased law
``k ξ(k) / m`` together with the repartition law of the spine child index.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

SUM_TOL = 1e-9
ALIAS_THRESHOLD = 8


class OffspringSpecError(ValueError):
    """Malformed distribution spec; ``position`` is a character offset."""

    def __init__(self, message: str, token: str = "", position: int = 0):
        super().__init__(message)
        self.token = token
        self.position = position


class AliasTable:
    """Vose alias table for O(1) draws from a finite pmf."""

    def __init__(self, probs: Sequence[float]):
        p = np.asarray(probs, dtype=float)
        n = len(p)
        scaled = p * n / p.sum()
        prob = np.ones(n)
        alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            prob[s] = scaled[s]
            alias[s] = l
            scaled[l] = scaled[l] + scaled[s] - 1.0
            (small if scaled[l] < 1.0 else large).append(l)
        # leftovers are 1 up to rounding
        self.prob = prob
        self.alias = alias

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        i = rng.integers(0, len(self.prob), size=size)
        keep = rng.random(size) < self.prob[i]
        return np.where(keep, i, self.alias[i])


class OffspringDistribution:
    """Common interface; use :func:`make_offspring` or the subclasses."""

    family: str
    spec: str

    # subclasses provide: pmf, mean, second_moment, pgf, draw, sum_draws

    @property
    def m(self) -> float:
        return self.mean

    @property
    def hyp_ok(self) -> bool:
        """Supercritical with finite mean, ``1 < m < ∞``; the ``k log k`` moment is finite for both families."""
        return 1.0 < self.mean < math.inf

    @property
    def status(self) -> str:
        if self.hyp_ok:
            return "ok"
        return f"not supercritical: m = {self.mean:.6g} is not in (1, inf)"

    @cached_property
    def q(self) -> float:
        return extinction_prob(self)

    def w_second_moment(self) -> float:
        """``E[W²] = (E[k²] - m) / (m² - m)``, the fixed point of the projective identity."""
        m = self.mean
        if not m > 1:
            raise ValueError("E[W^2] needs a supercritical law")
        return (self.second_moment - m) / (m * m - m)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec!r})"


class FiniteOffspring(OffspringDistribution):
    family = "finite"

    def __init__(self, table: dict[int, Fraction | float], spec: str | None = None):
        if not table:
            raise ValueError("empty offspring table")
        keys = sorted(table)
        if keys[0] < 0:
            raise ValueError("offspring counts must be nonnegative")
        exact = [Fraction(table[k]) for k in keys]
        if any(p < 0 for p in exact):
            raise ValueError("negative probability")
        total = sum(exact)
        if abs(float(total) - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {float(total):.12g}, not 1")
        exact = [p / total for p in exact]
        self.support = np.array(keys, dtype=np.int64)
        self.exact_probs = tuple(exact)
        self.probs = np.array([float(p) for p in exact])
        self._cdf = np.cumsum(self.probs)
        self._cdf[-1] = 1.0
        self._alias = AliasTable(self.probs) if len(keys) > ALIAS_THRESHOLD else None
        self.spec = spec or ",".join(f"{k}:{float(p)!r}" for k, p in zip(keys, exact))

    @property
    def max_support(self) -> int:
        return int(self.support[-1])

    def pmf(self, k: int) -> float:
        i = np.searchsorted(self.support, k)
        if i < len(self.support) and self.support[i] == k:
            return float(self.probs[i])
        return 0.0

    def exact_pmf(self, k: int) -> Fraction:
        i = int(np.searchsorted(self.support, k))
        if i < len(self.support) and self.support[i] == k:
            return self.exact_probs[i]
        return Fraction(0)

    @cached_property
    def exact_mean(self) -> Fraction:
        return sum((int(k) * p for k, p in zip(self.support, self.exact_probs)), Fraction(0))

    @cached_property
    def mean(self) -> float:
        return float(self.exact_mean)

    @cached_property
    def second_moment(self) -> float:
        return float(sum(int(k) ** 2 * p for k, p in zip(self.support, self.exact_probs)))

    def pgf(self, r):
        r = np.asarray(r, dtype=float)
        return np.sum(self.probs * np.power.outer(r, self.support), axis=-1)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self._alias is not None:
            return self.support[self._alias.sample(rng, size)]
        idx = np.searchsorted(self._cdf, rng.random(size), side="right")
        return self.support[idx]

    def sum_draws(self, rng: np.random.Generator, n) -> np.ndarray:
        """Sum of ``n[i]`` independent draws, for each entry of ``n``."""
        n = np.asarray(n, dtype=np.int64)
        if len(self.support) == 1:
            return n * self.support[0]
        counts = rng.multinomial(n, self.probs)
        return counts @ self.support


class GeometricOffspring(OffspringDistribution):
    """``ξ(k) = (1 - c) c^k`` for ``k >= 0``."""

    family = "geometric"

    def __init__(self, c: float, spec: str | None = None):
        if not 0.0 < c < 1.0:
            raise ValueError("geometric parameter must lie in (0, 1)")
        self.c = float(c)
        self.spec = spec or f"geom:{c!r}"

    max_support = None

    def pmf(self, k: int) -> float:
        return (1.0 - self.c) * self.c**k if k >= 0 else 0.0

    @property
    def mean(self) -> float:
        return self.c / (1.0 - self.c)

    @property
    def second_moment(self) -> float:
        c = self.c
        return c / (1 - c) ** 2 + (c / (1 - c)) ** 2

    @cached_property
    def q(self) -> float:
        # roots of c s² - s + (1 - c) = 0 are 1 and (1 - c)/c
        return min(1.0, (1.0 - self.c) / self.c)

    def pgf(self, r):
        r = np.asarray(r, dtype=float)
        return (1.0 - self.c) / (1.0 - self.c * r)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.geometric(1.0 - self.c, size=size) - 1

    def sum_draws(self, rng: np.random.Generator, n) -> np.ndarray:
        n = np.asarray(n, dtype=np.int64)
        out = np.zeros(n.shape, dtype=np.int64)
        pos = n > 0
        out[pos] = rng.negative_binomial(n[pos], 1.0 - self.c)
        return out


# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(\d+)\s*:\s*([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?\d+)?)\s*$")


def make_offspring(spec: str) -> OffspringDistribution:
    """Parse ``"k1:p1,k2:p2,..."`` or ``"geom:c"``.

    Laws that are not supercritical are returned (their ``status`` says why) so that
    critical and subcritical sanity checks remain possible.
    """
    text = spec.strip()
    if text.startswith("geom:"):
        tok = text[5:].strip()
        try:
            c = float(tok)
        except ValueError:
            raise OffspringSpecError(f"bad geometric parameter {tok!r}", tok, 5) from None
        if not 0.0 < c < 1.0:
            raise OffspringSpecError(f"geometric parameter {tok!r} not in (0, 1)", tok, 5)
        return GeometricOffspring(c, spec=text)
    table: dict[int, Fraction] = {}
    pos = 0
    for tok in text.split(","):
        match = _TOKEN.match(tok)
        if not match:
            raise OffspringSpecError(f"malformed token {tok.strip()!r} at position {pos}", tok.strip(), pos)
        k = int(match.group(1))
        if k in table:
            raise OffspringSpecError(f"duplicate count {k} at position {pos}", tok.strip(), pos)
        p = Fraction(match.group(2))
        if p < 0:
            raise OffspringSpecError(f"negative probability in {tok.strip()!r} at position {pos}", tok.strip(), pos)
        table[k] = p
        pos += len(tok) + 1
    total = sum(table.values())
    if abs(float(total) - 1.0) > SUM_TOL:
        raise OffspringSpecError(f"probabilities sum to {float(total):.12g}, not 1", text, 0)
    if not any(p > 0 for p in table.values()):
        raise OffspringSpecError("all probabilities are zero", text, 0)
    table = {k: p for k, p in table.items() if p > 0}
    return FiniteOffspring(table, spec=text)


def pgf_eval(d: OffspringDistribution, r: float) -> float:
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"pgf argument {r} outside [0, 1]")
    return float(d.pgf(r))


def extinction_prob(d: OffspringDistribution, tol: float = 1e-12, max_iter: int = 10**6) -> float:
    """Smallest fixed point of ``f`` on [0, 1], by iterating ``f`` from 0.

    Convexity makes the iterates increase to the smallest root.  Near
    criticality convergence is slow; the iteration stops at ``max_iter``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q, step = 0.0, math.inf
    for _ in range(max_iter):
        nxt = float(d.pgf(q))
        step = abs(nxt - q)
        if step < tol:
            return nxt
        q = nxt
    warnings.warn(f"extinction iteration hit the {max_iter} cap; last step {step:.3g}")
    return q


@dataclass(frozen=True)
class SizeBiasedLaw:
    """``ξ̂(k) = k ξ(k) / m`` and the repartition law ``ρ(k, ℓ) = 1{k <= ℓ} ξ(ℓ) / m``."""

    base: OffspringDistribution

    def __post_init__(self):
        m = self.base.mean
        if not (m > 1 and math.isfinite(m)):
            raise ValueError(f"size-biasing needs 1 < m < inf, got m = {m}")

    @property
    def m(self) -> float:
        return self.base.mean

    def pmf(self, k: int) -> float:
        return k * self.base.pmf(k) / self.m if k >= 1 else 0.0

    def rho(self, k: int, ell: int) -> float:
        if not 1 <= k <= ell:
            return 0.0
        return self.base.pmf(ell) / self.m

    def exact_pmf(self, k: int) -> Fraction:
        d = self.base
        if not isinstance(d, FiniteOffspring):
            raise TypeError("exact arithmetic needs a finite-support law")
        return k * d.exact_pmf(k) / d.exact_mean if k >= 1 else Fraction(0)

    def exact_rho(self, k: int, ell: int) -> Fraction:
        d = self.base
        if not isinstance(d, FiniteOffspring):
            raise TypeError("exact arithmetic needs a finite-support law")
        return d.exact_pmf(ell) / d.exact_mean if 1 <= k <= ell else Fraction(0)

    @cached_property
    def _finite_table(self):
        d = self.base
        sup = d.support[d.support >= 1]
        p = sup * np.array([d.pmf(int(k)) for k in sup]) / self.m
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        alias = AliasTable(p) if len(sup) > ALIAS_THRESHOLD else None
        return sup, p, cdf, alias

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draws of the spine offspring count ``k*``."""
        d = self.base
        if isinstance(d, GeometricOffspring):
            # ℓ - 1 is negative binomial(2, 1 - c)
            return 1 + rng.negative_binomial(2, 1.0 - d.c, size=size)
        sup, _, cdf, alias = self._finite_table
        if alias is not None:
            return sup[alias.sample(rng, size)]
        return sup[np.searchsorted(cdf, rng.random(size), side="right")]

    def draw_rho(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        """Pairs ``(I*, k*)`` from ``ρ``: ``k*`` size-biased, ``I*`` uniform on ``1..k*``."""
        k = self.draw(rng, size)
        i = 1 + np.floor(rng.random(size) * k).astype(np.int64)
        return np.minimum(i, k), k


def size_biased(d: OffspringDistribution) -> SizeBiasedLaw:
    return SizeBiasedLaw(d)

