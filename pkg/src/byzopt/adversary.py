"""Byzantine message strategies.

Adversaries are omniscient within a round: they see the full state snapshot,
the topology, every regular oracle and the true minimizer of the regular
average. Messages are crafted per (sender, receiver) edge, so equivocation is
the default. The round engine asks for messages target by target in id order,
and each call sees whatever other adversaries already placed for that target.
Adding entries to an inbox never evicts an entry that already survives the
filters, so a message verified at placement time still survives once the
inbox is complete.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .filters import distance_keep_mask, minmax_x_keep_mask, minmax_y_keep_mask
from .graph import Topology

STRATEGIES = ("constant", "gaussian_noise", "safe_region", "mixed")


class AdversaryError(ValueError):
    pass


@dataclass
class AdversarySpec:
    strategy: str = "safe_region"
    constant_x: Sequence[float] | None = None
    constant_y: Sequence[float] | None = None
    noise_sigma: float = 1.0
    max_magnitude: float = 1e3
    bisection_iters: int = 32
    mixture: tuple[str, ...] = ("constant", "gaussian_noise", "safe_region")

    def validate(self, d: int) -> None:
        if self.strategy not in STRATEGIES:
            raise AdversaryError(f"unknown adversary strategy {self.strategy!r}; choose from {STRATEGIES}")
        for name in ("constant_x", "constant_y"):
            vec = getattr(self, name)
            if vec is not None and len(vec) != d:
                raise AdversaryError(f"{name} has dimension {len(vec)} but the simulation uses d={d}")
        if self.noise_sigma < 0:
            raise AdversaryError("noise_sigma must be non-negative")
        if self.max_magnitude <= 0:
            raise AdversaryError("max_magnitude must be positive")
        for s in self.mixture:
            if s not in STRATEGIES or s == "mixed":
                raise AdversaryError(f"invalid mixture component {s!r}")


@dataclass(frozen=True)
class Inbox:
    """What one receiver holds in a round; row 0 is always its own entry."""

    owners: np.ndarray
    X: np.ndarray
    Y: np.ndarray

    @property
    def own_id(self) -> int:
        return int(self.owners[0])

    def extended(self, owner: int, x: np.ndarray, y: np.ndarray) -> "Inbox":
        return Inbox(np.append(self.owners, owner), np.vstack([self.X, x]), np.vstack([self.Y, y]))


@dataclass(frozen=True)
class AdversaryContext:
    k: int
    topology: Topology
    f: int
    algorithm: str
    X: np.ndarray
    Y: np.ndarray
    regular: tuple[int, ...]
    x_star: np.ndarray
    local_minimizers: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        # read-only views so no strategy can alter the snapshot
        for name in ("X", "Y", "x_star"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


# ---------------------------------------------------------------- survival

def x_survives(inbox: Inbox, index: int, f: int, algorithm: str) -> bool:
    keep = distance_keep_mask(inbox.X, inbox.owners, inbox.own_id, inbox.Y[0], f)
    if not keep[index]:
        return False
    if algorithm == "dist-only":
        return True
    sub = np.flatnonzero(keep)
    mm = minmax_x_keep_mask(inbox.X[sub], inbox.owners[sub], inbox.own_id, f)
    return bool(mm[np.searchsorted(sub, index)])


def y_survives(inbox: Inbox, index: int, f: int) -> bool:
    keep = minmax_y_keep_mask(inbox.Y, inbox.owners, inbox.own_id, f)
    return bool(keep[index].all())


def _kth_above(V: np.ndarray, ref: np.ndarray, f: int) -> np.ndarray:
    """Per column, the ``f``-th largest entry strictly above ``ref`` (``ref`` if there are fewer)."""
    V = np.asarray(V, dtype=float)
    V = V[:, None] if V.ndim == 1 else V
    ref = np.broadcast_to(np.asarray(ref, dtype=float), V.shape[1:])
    if len(V) < f:
        return ref.copy()
    masked = np.where(V > ref, V, -np.inf)
    kth = -np.partition(-masked, f - 1, axis=0)[f - 1]
    return np.where(np.isfinite(kth), kth, ref)


def _kth_below(V: np.ndarray, ref: np.ndarray, f: int) -> np.ndarray:
    return -_kth_above(-np.asarray(V, dtype=float), -np.asarray(ref, dtype=float), f)


# ---------------------------------------------------------------- strategies

def attack_constant(spec: AdversarySpec, d: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.zeros(d) if spec.constant_x is None else np.asarray(spec.constant_x, dtype=float)
    y = np.zeros(d) if spec.constant_y is None else np.asarray(spec.constant_y, dtype=float)
    return x.copy(), y.copy()


def attack_gaussian(ctx: AdversaryContext, sender: int, spec: AdversarySpec, rng: np.random.Generator):
    center = ctx.local_minimizers.get(sender, ctx.x_star)
    d = len(center)
    return center + spec.noise_sigma * rng.standard_normal(d), center + spec.noise_sigma * rng.standard_normal(d)


def _ray_window(p0: np.ndarray, u: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[float, float]:
    """Parameter range of ``p0 + t u`` inside the box ``[lo, hi]``."""
    t_min, t_max = -np.inf, np.inf
    for p, du, a, b in zip(p0, u, lo, hi):
        if du == 0.0:
            if not (a <= p <= b):
                return np.inf, -np.inf
            continue
        t1, t2 = (a - p) / du, (b - p) / du
        if t1 > t2:
            t1, t2 = t2, t1
        t_min, t_max = max(t_min, t1), min(t_max, t2)
    return t_min, t_max


def attack_safe_region_x(
    ctx: AdversaryContext,
    inbox: Inbox,
    sender: int,
    spec: AdversarySpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Farthest point from x* along the ray out of the target's auxiliary point
    that the target's x filters would still keep.

    The admissible ray segment follows from order statistics: the distance
    filter caps the step at the F-th largest distance above the target's own,
    and under the min-max filter each coordinate must stay between the F-th
    extreme distance-retained values on either side of the target's own. The
    far end is replayed through the real filters; on a tie-break failure the
    parameter is bisected against a verified survivor.
    """
    f = ctx.f
    y_own, x_own = inbox.Y[0], inbox.X[0]
    u = y_own - ctx.x_star
    nrm = np.linalg.norm(u)
    if nrm == 0.0:
        u = rng.standard_normal(len(y_own))
        nrm = np.linalg.norm(u)
    u = u / nrm
    t_cap = spec.max_magnitude

    if f > 0:
        dist = np.linalg.norm(inbox.X - y_own, axis=1)
        t_cap = min(t_cap, max(dist[0], float(_kth_above(dist[1:], dist[0], f)[0])))
    lo = np.full(len(y_own), -np.inf)
    hi = np.full(len(y_own), np.inf)
    if f > 0 and ctx.algorithm == "dist-minmax":
        keep = distance_keep_mask(inbox.X, inbox.owners, inbox.own_id, y_own, f)
        others = inbox.X[1:][keep[1:]]
        hi = _kth_above(others, x_own, f)
        lo = _kth_below(others, x_own, f)
    t_lo, t_hi = _ray_window(y_own, u, lo, hi)
    t_lo, t_hi = max(t_lo, 0.0), min(t_hi, t_cap)
    if t_lo > t_hi:
        return x_own.copy()

    def ok(t):
        trial = inbox.extended(sender, y_own + t * u, np.zeros_like(y_own))
        return x_survives(trial, len(trial.owners) - 1, f, ctx.algorithm)

    # the far end usually ties an order statistic, and ties can go either way
    for shrink in (0.0, 1e-12, 1e-9, 1e-6):
        t = t_hi - shrink * (t_hi - t_lo)
        if ok(t):
            return y_own + t * u
    if not ok(t_lo):
        return x_own.copy()
    good, bad = t_lo, t_hi
    for _ in range(spec.bisection_iters):
        mid = 0.5 * (good + bad)
        if ok(mid):
            good = mid
        else:
            bad = mid
    return y_own + good * u


def attack_corner_y(
    ctx: AdversaryContext,
    inbox: Inbox,
    sender: int,
    spec: AdversarySpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """A random corner of the box of y-values the target's min-max filter keeps,
    pulled 0.1% of the way back toward the target's own y."""
    f = ctx.f
    own = inbox.Y[0]
    if f == 0:
        M = spec.max_magnitude
        hi, lo = np.maximum(M, own), np.minimum(-M, own)
    else:
        hi, lo = _kth_above(inbox.Y[1:], own, f), _kth_below(inbox.Y[1:], own, f)
    bound = np.where(rng.random(len(own)) < 0.5, hi, lo)
    out = own + 0.999 * (bound - own)
    trial = inbox.extended(sender, np.zeros_like(own), out)
    if y_survives(trial, len(trial.owners) - 1, f):
        return out
    return own.copy()


def craft_message(
    spec: AdversarySpec,
    ctx: AdversaryContext,
    inbox: Inbox,
    sender: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Message ``sender`` sends to ``inbox.own_id`` this round."""
    strategy = spec.strategy
    if strategy == "mixed":
        strategy = spec.mixture[int(rng.integers(len(spec.mixture)))]
    if strategy == "constant":
        return attack_constant(spec, inbox.X.shape[1])
    if strategy == "gaussian_noise":
        return attack_gaussian(ctx, sender, spec, rng)
    if strategy == "safe_region":
        x = attack_safe_region_x(ctx, inbox, sender, spec, rng)
        y = attack_corner_y(ctx, inbox, sender, spec, rng)
        return x, y
    raise AdversaryError(f"unknown adversary strategy {strategy!r}")

