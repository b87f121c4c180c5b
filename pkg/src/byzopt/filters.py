"""Resilient filters and the weighted-average reducers applied after them.

Every filter compares against the receiving agent's own entry and only removes
entries that are *strictly* more extreme than it. At most ``f`` entries go per
side. When several candidates tie, the higher owner id is removed first, so the
lower id survives. Public functions work on lists of :class:`LabeledVector`;
the ``*_mask`` kernels work on stacked arrays and are what the round engine
calls.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class FilterError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledVector:
    owner: int
    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "value", np.asarray(self.value, dtype=float).reshape(-1))


@dataclass(frozen=True)
class WeightAssignment:
    owners: tuple[int, ...]
    weights: np.ndarray

    def __post_init__(self):
        owners = tuple(int(o) for o in self.owners)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(owners) != len(w):
            raise FilterError(f"{len(owners)} owners but {len(w)} weights")
        if len(set(owners)) != len(owners):
            raise FilterError("duplicate owner in weight assignment")
        object.__setattr__(self, "owners", owners)
        object.__setattr__(self, "weights", w)

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def validate(self, omega: float = 0.0, atol: float = 1e-12) -> None:
        if len(self.weights) == 0:
            raise FilterError("empty weight assignment")
        if np.any(self.weights <= 0):
            raise FilterError("weights must be strictly positive on retained entries")
        if np.any(self.weights < omega - atol):
            raise FilterError(f"weight {self.weights.min():.4g} below the floor omega={omega:.4g}")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise FilterError(f"weights sum to {self.weights.sum():.12g}, not 1")


# ----------------------------------------------------------------- kernels

def _trim_columns(V: np.ndarray, owners: np.ndarray, own: int, f: int, side: str) -> np.ndarray:
    """Removal mask (same shape as ``V``) of the up-to-``f`` entries per column
    strictly beyond the own row ``V[own]`` on ``side``, higher owner first on ties."""
    if f <= 0 or V.shape[0] <= 1:
        return np.zeros(V.shape, dtype=bool)
    W = -V if side == "top" else V
    cand = W < W[own]
    if not cand.any():
        return cand
    # rows pre-ordered by descending owner; a stable sort keeps that order on ties
    by_owner = np.argsort(-owners, kind="stable")
    order = by_owner[np.argsort(W[by_owner], axis=0, kind="stable")]
    cols = np.arange(V.shape[1])
    cand_sorted = cand[order, cols]
    out = np.zeros(V.shape, dtype=bool)
    out[order, cols] = cand_sorted & (np.cumsum(cand_sorted, axis=0) <= f)
    return out


def _own_index(owners: np.ndarray, own_id: int) -> int:
    hits = np.flatnonzero(owners == own_id)
    if len(hits) == 0:
        raise FilterError(f"inputs contain no entry owned by agent {own_id}")
    return int(hits[0])


def distance_keep_mask(X: np.ndarray, owners: np.ndarray, own_id: int, y_own: np.ndarray, f: int) -> np.ndarray:
    """Keep-mask after removing up to ``f`` states farthest from ``y_own``."""
    own = _own_index(owners, own_id)
    dist = np.linalg.norm(X - y_own, axis=1)
    return ~_trim_columns(dist[:, None], owners, own, f, "top")[:, 0]


def minmax_x_keep_mask(X: np.ndarray, owners: np.ndarray, own_id: int, f: int) -> np.ndarray:
    """Keep-mask for whole vectors: drop any owner that is extreme in some coordinate."""
    own = _own_index(owners, own_id)
    drop = _trim_columns(X, owners, own, f, "top") | _trim_columns(X, owners, own, f, "bottom")
    return ~drop.any(axis=1)


def minmax_y_keep_mask(Y: np.ndarray, owners: np.ndarray, own_id: int, f: int) -> np.ndarray:
    """Per-coordinate keep-mask of shape ``Y.shape``."""
    own = _own_index(owners, own_id)
    return ~(_trim_columns(Y, owners, own, f, "top") | _trim_columns(Y, owners, own, f, "bottom"))


def convex_combination(values: np.ndarray, weights: np.ndarray | None) -> np.ndarray:
    """Weighted sum along axis 0; a plain mean when weights are absent or all equal.

    The mean path matters: summing equal weights like 0.2 five times carries a
    rounding error that ``np.mean`` avoids, and pinned examples are exact.
    """
    if weights is None or np.all(weights == weights[0]):
        return values.mean(axis=0)
    return weights @ values


# ----------------------------------------------------------------- list API

def _stack(inputs: Sequence[LabeledVector]) -> tuple[np.ndarray, np.ndarray]:
    if not inputs:
        raise FilterError("no inputs")
    d = inputs[0].value.shape[0]
    for item in inputs:
        if item.value.shape[0] != d:
            raise FilterError(f"entry from agent {item.owner} has dimension {item.value.shape[0]}, expected {d}")
    return np.stack([v.value for v in inputs]), np.array([v.owner for v in inputs], dtype=int)


def distance_filter(f: int, own_id: int, y_own, inputs: Sequence[LabeledVector]) -> list[LabeledVector]:
    X, owners = _stack(inputs)
    keep = distance_keep_mask(X, owners, own_id, np.asarray(y_own, dtype=float), f)
    return [v for v, k in zip(inputs, keep) if k]


def minmax_filter_x(f: int, own_id: int, inputs: Sequence[LabeledVector]) -> list[LabeledVector]:
    X, owners = _stack(inputs)
    keep = minmax_x_keep_mask(X, owners, own_id, f)
    return [v for v, k in zip(inputs, keep) if k]


def minmax_filter_y(f: int, own_id: int, inputs: Sequence[LabeledVector]) -> list[list[tuple[int, float]]]:
    """Retained ``(owner, scalar)`` pairs, one list per coordinate."""
    Y, owners = _stack(inputs)
    keep = minmax_y_keep_mask(Y, owners, own_id, f)
    return [
        [(int(owners[j]), float(Y[j, ell])) for j in np.flatnonzero(keep[:, ell])]
        for ell in range(Y.shape[1])
    ]


def _aligned_weights(owners: Sequence[int], weights: WeightAssignment) -> np.ndarray:
    lookup = dict(zip(weights.owners, weights.weights))
    if set(lookup) != set(owners) or len(owners) != len(lookup):
        raise FilterError(f"weights cover owners {sorted(lookup)} but retained owners are {sorted(owners)}")
    return np.array([lookup[o] for o in owners])


def weighted_average_x(retained: Sequence[LabeledVector], weights: WeightAssignment) -> np.ndarray:
    X, owners = _stack(retained)
    weights.validate()
    return convex_combination(X, _aligned_weights(owners.tolist(), weights))


def weighted_average_y(
    retained_per_coord: Sequence[Sequence[tuple[int, float]]],
    weights: Sequence[WeightAssignment],
) -> np.ndarray:
    if len(retained_per_coord) != len(weights):
        raise FilterError(f"{len(retained_per_coord)} coordinates but {len(weights)} weight sets")
    out = np.empty(len(retained_per_coord))
    for ell, (entries, wa) in enumerate(zip(retained_per_coord, weights)):
        if not entries:
            raise FilterError(f"coordinate {ell} retained nothing")
        wa.validate()
        owners = [o for o, _ in entries]
        vals = np.array([v for _, v in entries])
        out[ell] = convex_combination(vals, _aligned_weights(owners, wa))
    return out


# ----------------------------------------------------------------- weights

WEIGHT_POLICIES = ("uniform", "random")


def weight_vector(policy: str, m: int, omega: float, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """``m`` weights, each at least ``omega``, summing to one.

    ``random`` draws uniform positives, normalises, then mixes with the uniform
    vector by the smallest amount that lifts the minimum weight to ``omega``.
    """
    if m == 0:
        raise FilterError("cannot weight an empty set")
    if omega < 0 or omega * m > 1 + 1e-12:
        raise FilterError(f"omega={omega:g} is infeasible for {m} retained entries")
    if m == 1:
        return np.ones(1)
    if policy == "uniform":
        return np.full(m, 1.0 / m)
    if policy != "random":
        raise FilterError(f"unknown weight policy {policy!r}; choose from {WEIGHT_POLICIES}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    p = rng.uniform(1e-3, 1.0, size=m)
    p /= p.sum()
    p_min = p.min()
    if p_min < omega:
        lam = (omega - p_min) / (1.0 / m - p_min)
        p = (1.0 - lam) * p + lam / m
    return p / p.sum()


def make_weights(policy: str, owners: Sequence[int], omega: float, rng: np.random.Generator | int | None = None) -> WeightAssignment:
    owners = tuple(owners)
    return WeightAssignment(owners, weight_vector(policy, len(owners), omega, rng))
