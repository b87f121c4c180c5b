"""Directed topologies, robustness predicates and adversary placement.

Edges are ordered pairs ``(i, j)``: agent ``j`` receives from agent ``i``.
Self-loops are never stored; the protocol adds each agent's own value to its
inbox itself.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

#: Largest agent count for which :func:`is_r_robust` enumerates subsets.
EXHAUSTIVE_CAP = 20

#: Rejection-sampling budget of :func:`select_f_local_adversaries`.
PLACEMENT_ATTEMPTS = 10_000


class GraphError(ValueError):
    pass


class RobustnessCapExceeded(GraphError):
    pass


class PlacementError(GraphError):
    pass


@dataclass(frozen=True)
class Topology:
    n: int
    edges: frozenset[tuple[int, int]]
    _in: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _out: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 0:
            raise GraphError(f"agent count must be non-negative, got {self.n}")
        edges = frozenset((int(i), int(j)) for i, j in self.edges)
        ins: list[list[int]] = [[] for _ in range(self.n)]
        outs: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphError(f"edge ({i}, {j}) has an endpoint outside [0, {self.n})")
            if i == j:
                raise GraphError(f"self-loop on agent {i}")
            ins[j].append(i)
            outs[i].append(j)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_in", tuple(tuple(sorted(v)) for v in ins))
        object.__setattr__(self, "_out", tuple(tuple(sorted(v)) for v in outs))

    @classmethod
    def from_undirected(cls, n: int, pairs: Iterable[tuple[int, int]]) -> "Topology":
        edges = set()
        for i, j in pairs:
            edges.add((i, j))
            edges.add((j, i))
        return cls(n, frozenset(edges))

    @classmethod
    def complete(cls, n: int) -> "Topology":
        return cls(n, frozenset((i, j) for i in range(n) for j in range(n) if i != j))

    @classmethod
    def cycle(cls, n: int) -> "Topology":
        """Directed cycle ``0 -> 1 -> ... -> n-1 -> 0``."""
        return cls(n, frozenset((i, (i + 1) % n) for i in range(n) if n > 1))

    def in_neighbors(self, j: int) -> tuple[int, ...]:
        return self._in[j]

    def out_neighbors(self, i: int) -> tuple[int, ...]:
        return self._out[i]

    def in_degree(self, j: int) -> int:
        return len(self._in[j])

    def max_in_degree(self) -> int:
        return max((len(v) for v in self._in), default=0)

    def without_edges(self, removed: Iterable[tuple[int, int]]) -> "Topology":
        return Topology(self.n, self.edges - frozenset(removed))

    def with_edges(self, added: Iterable[tuple[int, int]]) -> "Topology":
        return Topology(self.n, self.edges | frozenset(added))

    # -- text format: header "n <count>", then one "i j" line per directed edge
    def to_text(self) -> str:
        lines = [f"n {self.n}"]
        lines.extend(f"{i} {j}" for i, j in sorted(self.edges))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Topology":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not rows or rows[0][0] != "n" or len(rows[0]) != 2:
            raise GraphError("graph file must start with a header line 'n <count>'")
        n = int(rows[0][1])
        edges = []
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != 2:
                raise GraphError(f"line {lineno}: expected 'i j', got {' '.join(row)!r}")
            edges.append((int(row[0]), int(row[1])))
        return cls(n, frozenset(edges))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "Topology":
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True)
class AdversarySet:
    members: frozenset[int]
    f_bound: int

    def __contains__(self, agent: int) -> bool:
        return agent in self.members

    def __len__(self) -> int:
        return len(self.members)

    def regular(self, n: int) -> list[int]:
        return [i for i in range(n) if i not in self.members]


def is_f_local(topology: Topology, members: Iterable[int], f: int) -> bool:
    """True iff every non-member has at most ``f`` in-neighbors in ``members``."""
    members = set(members)
    for j in range(topology.n):
        if j in members:
            continue
        if sum(1 for i in topology.in_neighbors(j) if i in members) > f:
            return False
    return True


def is_r_reachable(topology: Topology, subset: Iterable[int], r: int) -> bool:
    subset = set(subset)
    if not subset:
        raise GraphError("r-reachability is defined for nonempty subsets only")
    if not subset <= set(range(topology.n)):
        raise GraphError(f"subset {sorted(subset)} is not contained in the vertex set")
    for i in subset:
        outside = sum(1 for j in topology.in_neighbors(i) if j not in subset)
        if outside >= r:
            return True
    return False


def _popcounts(n: int) -> np.ndarray:
    masks = np.arange(1 << n, dtype=np.int64)
    counts = np.zeros(1 << n, dtype=np.int32)
    for b in range(n):
        counts += ((masks >> b) & 1).astype(np.int32)
    return counts


def is_r_robust(topology: Topology, r: int) -> bool:
    """Exact r-robustness test over all pairs of disjoint nonempty subsets.

    Works on bitmasks: first flags every subset that is *not* r-reachable, then
    propagates "contains a non-reachable subset" over supersets (subset-sum
    transform), and finally looks for a non-reachable set whose complement
    contains another one. Cost is O(n 2^n) rather than the 3^n pair count.
    """
    n = topology.n
    if r < 1:
        raise GraphError(f"r must be a positive integer, got {r}")
    if n > EXHAUSTIVE_CAP:
        raise RobustnessCapExceeded(
            f"exhaustive robustness check is capped at n={EXHAUSTIVE_CAP} (got n={n}); "
            "certify robustness by construction with generate_robust_graph instead"
        )
    if n <= 1:
        return True
    size = 1 << n
    masks = np.arange(size, dtype=np.int64)
    pc = _popcounts(n)
    reachable = np.zeros(size, dtype=bool)
    for v in range(n):
        in_mask = 0
        for u in topology.in_neighbors(v):
            in_mask |= 1 << u
        inside = pc[masks & in_mask]
        outside = len(topology.in_neighbors(v)) - inside
        reachable |= (((masks >> v) & 1) == 1) & (outside >= r)
    stuck = ~reachable
    stuck[0] = False
    # has_stuck[m]: some nonempty subset of m is not r-reachable
    has_stuck = stuck.copy()
    for b in range(n):
        view = has_stuck.reshape(-1, 2, 1 << b)
        view[:, 1, :] |= view[:, 0, :]
    complement = (size - 1) ^ masks
    return not bool(np.any(stuck & has_stuck[complement]))


def is_rooted(topology: Topology) -> bool:
    n = topology.n
    if n == 0:
        return False
    for root in range(n):
        seen = {root}
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v in topology.out_neighbors(u):
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if len(seen) == n:
            return True
    return False


def generate_robust_graph(n: int, r: int, seed: int | None = None, degree: int | None = None) -> Topology:
    """Grow an r-robust graph from a complete core.

    Starts from the complete graph on ``2r - 1`` agents, which is r-robust, and
    attaches each further agent bidirectionally to ``max(2r - 1, degree)``
    distinct existing agents drawn uniformly. A new agent with at least r
    in-neighbours in an r-robust graph keeps the graph r-robust, so the output
    is certified by construction.
    """
    if r < 1:
        raise GraphError(f"robustness target must be >= 1, got {r}")
    core = 2 * r - 1
    if n < core:
        raise GraphError(f"an {r}-robust graph needs at least {core} agents, got n={n}")
    attach = core if degree is None else max(core, int(degree))
    rng = np.random.default_rng(seed)
    edges = {(i, j) for i in range(core) for j in range(core) if i != j}
    for new in range(core, n):
        k = min(attach, new)
        for old in rng.choice(new, size=k, replace=False):
            old = int(old)
            edges.add((old, new))
            edges.add((new, old))
    return Topology(n, frozenset(edges))


def select_f_local_adversaries(
    topology: Topology,
    f: int,
    count: int,
    seed: int | None = None,
    attempts: int = PLACEMENT_ATTEMPTS,
) -> AdversarySet:
    if f < 0 or count < 0:
        raise GraphError(f"f and count must be non-negative (f={f}, count={count})")
    if count > topology.n:
        raise PlacementError(f"cannot place {count} adversaries among {topology.n} agents")
    if count == 0:
        return AdversarySet(frozenset(), f)
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        cand = frozenset(int(v) for v in rng.choice(topology.n, size=count, replace=False))
        if is_f_local(topology, cand, f):
            return AdversarySet(cand, f)
    raise PlacementError(f"no {f}-local set of {count} adversaries found in {attempts} attempts")


def required_robustness(algorithm: str, d: int, f: int) -> int:
    """Robustness each algorithm needs for its convergence guarantee."""
    if algorithm == "dist-minmax":
        return (2 * d + 1) * f + 1
    if algorithm == "dist-only":
        return 2 * f + 1
    raise GraphError(f"unknown algorithm {algorithm!r}")
