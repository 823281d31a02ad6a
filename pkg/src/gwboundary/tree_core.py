"""Ulam-Harris words and depth-truncated ordered trees.

A word is a tuple of positive integers; the empty tuple is the root.  A
:class:`TruncatedTree` stores offspring counts generation by generation in
breadth-first lexicographic order, so the descendants of any vertex occupy a
contiguous slice of every deeper generation.  Shifts and cuts are slicing
operations on those arrays.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

Word = tuple[int, ...]
ROOT: Word = ()


# ---------------------------------------------------------------------------
# word calculus


def as_word(u: Iterable[int] | str) -> Word:
    if isinstance(u, str):
        return parse_word(u)
    w = tuple(int(i) for i in u)
    if any(i < 1 for i in w):
        raise ValueError(f"word letters must be positive integers, got {w}")
    return w


def restrict(u: Word, m: int) -> Word:
    """``u|m``: the ancestor of ``u`` at generation ``min(m, |u|)``."""
    if m < 0:
        raise ValueError("restriction length must be nonnegative")
    return u[:m]


def concat(u: Word, v: Word) -> Word:
    return u + v


def is_prefix(u: Word, v: Word) -> bool:
    """Genealogical order: ``u ⪯ v``."""
    return len(u) <= len(v) and v[: len(u)] == u


def meet(u: Word, v: Word) -> Word:
    """Longest common prefix of two words."""
    n = 0
    for a, b in zip(u, v):
        if a != b:
            break
        n += 1
    return u[:n]


def format_word(u: Word) -> str:
    return ".".join(str(i) for i in u)


def parse_word(s: str) -> Word:
    s = s.strip()
    if not s:
        return ROOT
    try:
        w = tuple(int(tok) for tok in s.split("."))
    except ValueError as exc:
        raise ValueError(f"malformed word {s!r}") from exc
    if any(i < 1 for i in w):
        raise ValueError(f"malformed word {s!r}: letters must be >= 1")
    return w


# ---------------------------------------------------------------------------
# validation of raw offspring tables


class Violation(NamedTuple):
    word: Word
    rule: str
    message: str


def validate(
    t: "TruncatedTree | Mapping[Word, int]", depth: int | None = None
) -> list[Violation]:
    """Check Tree(1) and Tree(2) on an offspring table.

    Accepts a :class:`TruncatedTree` or a raw mapping ``word -> k_u`` together
    with its truncation depth.  Returns the list of violations; an empty list
    means the table encodes a valid depth-``depth`` tree prefix.
    """
    if isinstance(t, TruncatedTree):
        offspring, depth = t.offspring, t.depth
    else:
        if depth is None:
            raise TypeError("depth is required when validating a raw mapping")
        offspring = t
    out: list[Violation] = []
    if depth < 0:
        return [Violation(ROOT, "depth", "depth must be nonnegative")]
    words = [tuple(w) for w in offspring]
    present = set(words)
    if depth > 0 and ROOT not in present:
        out.append(Violation(ROOT, "Tree(1)", "root missing"))
    for u in sorted(words, key=lambda w: (len(w), w)):
        k = offspring[u]
        if any(i < 1 for i in u):
            out.append(Violation(u, "letters", "letters must be positive integers"))
            continue
        if k < 0:
            out.append(Violation(u, "count", f"negative offspring count {k}"))
        if len(u) >= depth:
            out.append(
                Violation(u, "depth", f"offspring record at generation {len(u)} >= depth {depth}")
            )
        for m in range(len(u)):
            if u[:m] not in present:
                out.append(
                    Violation(u, "Tree(1)", f"prefix {format_word(u[:m])!r} missing")
                )
                break
        if u:
            parent = u[:-1]
            if parent in present and u[-1] > offspring[parent]:
                out.append(
                    Violation(
                        u,
                        "Tree(2)",
                        f"child index {u[-1]} exceeds parent count {offspring[parent]}",
                    )
                )
        if k > 0 and len(u) + 1 < depth:
            for i in range(1, k + 1):
                if u + (i,) not in present:
                    out.append(Violation(u, "Tree(2)", f"child {i} has no offspring record"))
    return out


# ---------------------------------------------------------------------------
# the tree type


def _frozen(a) -> np.ndarray:
    arr = np.asarray(a, dtype=np.int64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TruncatedTree:
    """Depth-``N`` prefix of an ordered rooted tree.

    ``levels[n]`` holds the offspring counts of the generation-``n`` words in
    lexicographic order, for ``n < depth``.  Words at generation ``depth`` are
    the frontier and carry no offspring record.
    """

    depth: int
    levels: tuple[np.ndarray, ...] = field(default=())

    def __post_init__(self):
        levels = tuple(_frozen(a) for a in self.levels)
        object.__setattr__(self, "levels", levels)
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")
        if len(levels) != self.depth:
            raise ValueError(f"expected {self.depth} levels, got {len(levels)}")
        if self.depth and len(levels[0]) != 1:
            raise ValueError("generation 0 must hold exactly the root")
        for n in range(self.depth - 1):
            if len(levels[n + 1]) != int(levels[n].sum()):
                raise ValueError(f"generation {n + 1} size does not match offspring counts")
        for a in levels:
            if a.size and a.min() < 0:
                raise ValueError("negative offspring count")

    # -- construction ------------------------------------------------------

    @classmethod
    def single_node(cls) -> "TruncatedTree":
        return cls(0, ())

    @classmethod
    def from_offspring(cls, offspring: Mapping[Word, int], depth: int) -> "TruncatedTree":
        bad = validate(offspring, depth)
        if bad:
            raise ValueError("invalid tree: " + "; ".join(f"{format_word(v.word)!r}: {v.message}" for v in bad))
        levels = []
        gen: list[Word] = [ROOT]
        for _ in range(depth):
            counts = [offspring[u] for u in gen]
            levels.append(counts)
            gen = [u + (i,) for u, k in zip(gen, counts) for i in range(1, k + 1)]
        return cls(depth, tuple(levels))

    @classmethod
    def full(cls, arity: int, depth: int) -> "TruncatedTree":
        return cls(depth, tuple(np.full(arity**n, arity) for n in range(depth)))

    @classmethod
    def join(cls, children: Sequence["TruncatedTree"], depth: int | None = None) -> "TruncatedTree":
        """Root whose ordered children are the given trees (all of equal depth)."""
        if not children:
            if depth is None:
                raise ValueError("depth required for a childless join")
            return cls(depth, (np.array([0]),) + tuple(np.zeros(0, np.int64) for _ in range(depth - 1)))
        h = children[0].depth
        if any(c.depth != h for c in children):
            raise ValueError("children must share a depth")
        levels = [np.array([len(children)])]
        for j in range(h):
            levels.append(np.concatenate([c.levels[j] for c in children]))
        return cls(h + 1, tuple(levels))

    # -- basic queries -----------------------------------------------------

    def z(self, n: int) -> int:
        return z_count(self, n)

    @cached_property
    def generation_sizes(self) -> np.ndarray:
        sizes = [1] + [int(a.sum()) for a in self.levels]
        return np.array(sizes, dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return int(self.generation_sizes.sum())

    @cached_property
    def offsets(self) -> tuple[np.ndarray, ...]:
        """``offsets[n][j]``: index in generation ``n+1`` of the first child of word ``j``."""
        return tuple(np.concatenate(([0], np.cumsum(a))) for a in self.levels)

    def parent_index(self, n: int) -> np.ndarray:
        """For each generation-``n`` word, the index of its parent in generation ``n-1``."""
        if not 1 <= n <= self.depth:
            raise ValueError(f"generation {n} has no parents in a depth-{self.depth} tree")
        a = self.levels[n - 1]
        return np.repeat(np.arange(len(a)), a)

    def words(self, n: int) -> list[Word]:
        if not 0 <= n <= self.depth:
            raise ValueError(f"generation {n} outside [0, {self.depth}]")
        gen: list[Word] = [ROOT]
        for j in range(n):
            gen = [u + (i,) for u, k in zip(gen, self.levels[j].tolist()) for i in range(1, k + 1)]
        return gen

    def iter_words(self) -> Iterator[Word]:
        gen: list[Word] = [ROOT]
        yield from gen
        for j in range(self.depth):
            gen = [u + (i,) for u, k in zip(gen, self.levels[j].tolist()) for i in range(1, k + 1)]
            yield from gen

    def locate(self, u: Word) -> int | None:
        """Index of ``u`` within its generation, or None if ``u`` is not in the tree."""
        if len(u) > self.depth:
            return None
        idx = 0
        for j, letter in enumerate(u):
            if letter < 1 or letter > self.levels[j][idx]:
                return None
            idx = int(self.offsets[j][idx]) + letter - 1
        return idx

    def __contains__(self, u) -> bool:
        return self.locate(tuple(u)) is not None

    def k(self, u: Word) -> int:
        """Offspring count ``k_u``; -1 when ``u`` is absent.  Frontier words raise."""
        idx = self.locate(u)
        if idx is None:
            return -1
        if len(u) == self.depth:
            raise ValueError(f"offspring of frontier word {format_word(u)!r} lies below the truncation")
        return int(self.levels[len(u)][idx])

    @cached_property
    def offspring(self) -> dict[Word, int]:
        out: dict[Word, int] = {}
        gen: list[Word] = [ROOT]
        for j in range(self.depth):
            counts = self.levels[j].tolist()
            out.update(zip(gen, counts))
            gen = [u + (i,) for u, k in zip(gen, counts) for i in range(1, k + 1)]
        return out

    def restrict(self, m: int) -> "TruncatedTree":
        """``T|m`` for ``m <= depth``."""
        if not 0 <= m <= self.depth:
            raise ValueError(f"cannot restrict a depth-{self.depth} tree to depth {m}")
        return TruncatedTree(m, self.levels[:m])

    def descendant_ranges(self, u: Word) -> list[tuple[int, int]]:
        """Half-open index ranges of ``θ_u T`` in generations ``|u|, |u|+1, ..., depth``."""
        idx = self.locate(u)
        if idx is None:
            raise KeyError(format_word(u))
        lo, hi = idx, idx + 1
        ranges = [(lo, hi)]
        for j in range(len(u), self.depth):
            lo, hi = int(self.offsets[j][lo]), int(self.offsets[j][hi])
            ranges.append((lo, hi))
        return ranges

    def children_subtrees(self) -> list["TruncatedTree"]:
        if self.depth == 0:
            raise ValueError("children of the root lie below the truncation")
        return [shift(self, (i,)) for i in range(1, int(self.levels[0][0]) + 1)]

    # -- comparison / display ---------------------------------------------

    def __eq__(self, other) -> bool:
        if not isinstance(other, TruncatedTree):
            return NotImplemented
        return self.depth == other.depth and all(
            np.array_equal(a, b) for a, b in zip(self.levels, other.levels)
        )

    def __hash__(self) -> int:
        return hash((self.depth, tuple(a.tobytes() for a in self.levels)))

    def key(self) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(a.tolist()) for a in self.levels)

    def __repr__(self) -> str:
        body = ", ".join(f"{format_word(u) or '∅'}↦{k}" for u, k in self.offspring.items())
        return f"TruncatedTree(depth={self.depth}, {{{body}}})"


# ---------------------------------------------------------------------------
# structural operations


def z_count(t: TruncatedTree, n: int) -> int:
    """``Z_n(T)``; fails when ``n`` exceeds the truncation depth."""
    if n < 0:
        raise ValueError("generation must be nonnegative")
    if n > t.depth:
        raise ValueError(f"Z_{n} is not determined by a depth-{t.depth} truncation")
    if n == 0:
        return 1
    return int(t.levels[n - 1].sum())


def shift(t: TruncatedTree, u: Word) -> TruncatedTree | None:
    """``θ_u T`` re-rooted at ``∅`` with depth ``t.depth - |u|``; None if ``u`` is absent."""
    u = tuple(u)
    if t.locate(u) is None:
        return None
    ranges = t.descendant_ranges(u)
    levels = tuple(t.levels[len(u) + j][lo:hi] for j, (lo, hi) in enumerate(ranges[:-1]))
    return TruncatedTree(t.depth - len(u), levels)


def cut(t: TruncatedTree, u: Word) -> TruncatedTree:
    """``Cut_u T``: remove the strict descendants of ``u``, which keeps ``k_u = 0``."""
    u = tuple(u)
    idx = t.locate(u)
    if idx is None:
        raise KeyError(f"word {format_word(u)!r} is not in the tree")
    if len(u) == t.depth:
        return t
    ranges = t.descendant_ranges(u)
    levels = list(t.levels[: len(u)])
    a = t.levels[len(u)].copy()
    a[idx] = 0
    levels.append(a)
    for j, (lo, hi) in enumerate(ranges[1:-1], start=len(u) + 1):
        lvl = t.levels[j]
        levels.append(np.concatenate((lvl[:lo], lvl[hi:])))
    return TruncatedTree(t.depth, tuple(levels))


# ---------------------------------------------------------------------------
# serialization: one record per word, breadth-first lexicographic order


def to_csv(t: TruncatedTree) -> str:
    buf = io.StringIO()
    buf.write(f"# depth={t.depth}\n")
    buf.write("word,offspring_count\n")
    for u, k in t.offspring.items():
        buf.write(f"{format_word(u)},{k}\n")
    return buf.getvalue()


def from_csv(text: str) -> TruncatedTree:
    depth = None
    offspring: dict[Word, int] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            if key.strip() == "depth":
                depth = int(val)
            continue
        if line == "word,offspring_count":
            continue
        w, _, k = line.rpartition(",")
        offspring[parse_word(w)] = int(k)
    if depth is None:
        raise ValueError("missing depth header")
    return TruncatedTree.from_offspring(offspring, depth)


def to_json_record(t: TruncatedTree) -> dict:
    return {
        "depth": t.depth,
        "offspring": [[format_word(u), k] for u, k in t.offspring.items()],
    }


def from_json_record(rec: Mapping) -> TruncatedTree:
    offspring = {parse_word(w): int(k) for w, k in rec["offspring"]}
    return TruncatedTree.from_offspring(offspring, int(rec["depth"]))


def to_jsonl(trees: Iterable[TruncatedTree]) -> str:
    return "".join(json.dumps(to_json_record(t), separators=(",", ":")) + "\n" for t in trees)


def from_jsonl(text: str) -> list[TruncatedTree]:
    return [from_json_record(json.loads(line)) for line in text.splitlines() if line.strip()]
