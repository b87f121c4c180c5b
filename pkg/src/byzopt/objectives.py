"""Convex local cost oracles and the sublevel-set geometry built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class OptimizationError(RuntimeError):
    def __init__(self, message: str, last_iterate: np.ndarray | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate


class UnboundedSublevelSet(ValueError):
    pass


class ObjectiveOracle:
    """Convex cost on R^d exposing value and one subgradient per point.

    Subclasses set ``dimension`` and may override :meth:`minimizer` (exact
    argmin, or None) and :meth:`hessian`.
    """

    dimension: int

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def subgradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def values(self, points: np.ndarray) -> np.ndarray:
        """Row-wise :meth:`value`; subclasses vectorise where cheap."""
        return np.array([self.value(p) for p in np.atleast_2d(points)])

    def minimizer(self) -> np.ndarray | None:
        return None

    def hessian(self, x: np.ndarray) -> np.ndarray | None:
        return None

    def sublevel_radius_exact(self, epsilon: float) -> float | None:
        return None

    def __call__(self, x: np.ndarray) -> float:
        return self.value(x)


@dataclass(eq=False)
class QuadraticObjective(ObjectiveOracle):
    """``1/2 x^T Q x + b^T x + constant`` with Q symmetric positive definite."""

    Q: np.ndarray
    b: np.ndarray
    constant: float = 0.0
    _lam_min: float = field(init=False, repr=False)

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        d = self.b.shape[0]
        if self.Q.shape != (d, d):
            raise ValueError(f"Q has shape {self.Q.shape}, expected {(d, d)}")
        if not np.allclose(self.Q, self.Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        eig = np.linalg.eigvalsh(self.Q)
        if eig[0] <= 0:
            raise ValueError(f"Q must be positive definite (smallest eigenvalue {eig[0]:g})")
        self.dimension = d
        self._lam_min = float(eig[0])

    @property
    def lambda_min(self) -> float:
        return self._lam_min

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.b @ x + self.constant)

    def values(self, points):
        P = np.atleast_2d(points)
        return 0.5 * np.einsum("ij,jk,ik->i", P, self.Q, P) + P @ self.b + self.constant

    def subgradient(self, x):
        return self.Q @ np.asarray(x, dtype=float) + self.b

    def hessian(self, x):
        return self.Q

    def minimizer(self):
        # stationarity of 1/2 x^T Q x + b^T x
        return np.linalg.solve(self.Q, -self.b)

    def sublevel_radius_exact(self, epsilon):
        return math.sqrt(2.0 * epsilon / self._lam_min)


@dataclass(eq=False)
class NormObjective(ObjectiveOracle):
    """``weight * ||x - center||``: non-smooth, subgradients bounded by ``weight``."""

    center: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(-1)
        if self.weight <= 0:
            raise ValueError("weight must be positive")
        self.dimension = self.center.shape[0]

    def value(self, x):
        return float(self.weight * np.linalg.norm(np.asarray(x, dtype=float) - self.center))

    def subgradient(self, x):
        diff = np.asarray(x, dtype=float) - self.center
        nrm = np.linalg.norm(diff)
        if nrm == 0.0:
            return np.zeros_like(diff)
        return self.weight * diff / nrm

    def minimizer(self):
        return self.center.copy()

    def sublevel_radius_exact(self, epsilon):
        return epsilon / self.weight


@dataclass(eq=False)
class LogisticObjective(ObjectiveOracle):
    """L2-regularised logistic loss over bias-augmented features.

    ``scale * sum_j log(1 + exp(-s_j <x~_j, W>)) + reg/2 ||W||^2`` with labels
    ``{0, 1}`` mapped to signs ``s_j in {-1, +1}`` and ``x~_j = [x_j, 1]``.
    ``scale`` is the replication factor (number of regular agents) that makes
    the average of local costs equal the pooled training loss.
    """

    features: np.ndarray
    labels: np.ndarray
    reg: float
    scale: float = 1.0

    def __post_init__(self):
        feats = np.atleast_2d(np.asarray(self.features, dtype=float))
        labels = np.asarray(self.labels).reshape(-1)
        if feats.shape[0] != labels.shape[0]:
            raise ValueError("features and labels disagree on the number of points")
        if not np.all(np.isin(labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        if self.reg <= 0:
            raise ValueError("regularisation must be positive")
        self.features = feats
        self.labels = labels.astype(int)
        self._aug = np.hstack([feats, np.ones((feats.shape[0], 1))])
        self._signs = np.where(self.labels == 1, 1.0, -1.0)
        self.dimension = self._aug.shape[1]

    def _margins(self, w):
        return self._signs * (self._aug @ w)

    def value(self, w):
        w = np.asarray(w, dtype=float)
        loss = np.logaddexp(0.0, -self._margins(w)).sum()
        return float(self.scale * loss + 0.5 * self.reg * w @ w)

    def values(self, points):
        P = np.atleast_2d(points)
        margins = (self._aug @ P.T) * self._signs[:, None]
        loss = np.logaddexp(0.0, -margins).sum(axis=0)
        return self.scale * loss + 0.5 * self.reg * np.einsum("ij,ij->i", P, P)

    def subgradient(self, w):
        w = np.asarray(w, dtype=float)
        # d/dm log(1+e^-m) = -sigmoid(-m)
        coef = -self._signs * _sigmoid(-self._margins(w))
        return self.scale * (self._aug.T @ coef) + self.reg * w

    def hessian(self, w):
        w = np.asarray(w, dtype=float)
        p = _sigmoid(self._aug @ w)
        curv = p * (1.0 - p)
        return self.scale * (self._aug.T * curv) @ self._aug + self.reg * np.eye(self.dimension)

    def predict(self, w, features: np.ndarray) -> np.ndarray:
        aug = np.hstack([np.atleast_2d(features), np.ones((len(features), 1))])
        return (aug @ np.asarray(w, dtype=float) > 0).astype(int)


def _sigmoid(t):
    return np.exp(-np.logaddexp(0.0, -t))


@dataclass(eq=False)
class AverageObjective(ObjectiveOracle):
    """Arithmetic mean of several oracles sharing a dimension."""

    parts: Sequence[ObjectiveOracle]

    def __post_init__(self):
        if not self.parts:
            raise ValueError("need at least one objective")
        dims = {p.dimension for p in self.parts}
        if len(dims) != 1:
            raise ValueError(f"objectives disagree on dimension: {sorted(dims)}")
        self.dimension = dims.pop()

    def value(self, x):
        return float(np.mean([p.value(x) for p in self.parts]))

    def values(self, points):
        return np.mean([p.values(points) for p in self.parts], axis=0)

    def subgradient(self, x):
        return np.mean([p.subgradient(x) for p in self.parts], axis=0)

    def hessian(self, x):
        hs = [p.hessian(x) for p in self.parts]
        if any(h is None for h in hs):
            return None
        return np.mean(hs, axis=0)

    def minimizer(self):
        if all(isinstance(p, QuadraticObjective) for p in self.parts):
            Q = sum(p.Q for p in self.parts)
            b = sum(p.b for p in self.parts)
            return np.linalg.solve(Q, -b)
        return None


def random_quadratic(d: int, rng: np.random.Generator, b_scale: float = 1.0) -> QuadraticObjective:
    """Q = M^T M + 0.1 I with standard normal M; b standard normal."""
    M = rng.standard_normal((d, d))
    Q = M.T @ M + 0.1 * np.eye(d)
    Q = 0.5 * (Q + Q.T)
    b = b_scale * rng.standard_normal(d)
    return QuadraticObjective(Q, b)


def clip_gradient(g: np.ndarray, bound: float) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    nrm = float(np.linalg.norm(g))
    if nrm <= bound:
        return g
    return (bound / nrm) * g


def local_optimize(
    oracle: ObjectiveOracle,
    tolerance: float = 1e-10,
    x0: np.ndarray | None = None,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Approximate minimizer of ``oracle``.

    Closed form when the oracle knows its argmin. Otherwise damped Newton
    (oracles with a Hessian) or gradient descent, both with Armijo
    backtracking, until the gradient norm drops to ``tolerance * mu`` where
    ``mu`` is the oracle's strong-convexity modulus when it has one (so the
    distance to the argmin is at most ``tolerance``).
    """
    exact = oracle.minimizer()
    if exact is not None:
        return np.asarray(exact, dtype=float)
    mu = getattr(oracle, "reg", None)
    if mu is None and isinstance(oracle, AverageObjective):
        regs = [getattr(p, "reg", None) for p in oracle.parts]
        mu = None if any(r is None for r in regs) else float(np.mean(regs))
    gtol = tolerance * (mu if mu else 1.0)
    x = np.zeros(oracle.dimension) if x0 is None else np.asarray(x0, dtype=float).copy()
    fx = oracle.value(x)
    for _ in range(max_iter):
        g = oracle.subgradient(x)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gtol:
            return x
        H = oracle.hessian(x)
        direction = -g
        if H is not None:
            try:
                direction = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                direction = -g
            if g @ direction >= 0:
                direction = -g
        step = 1.0
        slope = float(g @ direction)
        while True:
            cand = x + step * direction
            fc = oracle.value(cand)
            if fc <= fx + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-20:
                # no further progress at double precision
                if gnorm <= max(gtol, 1e-8 * max(1.0, abs(fx))):
                    return x
                raise OptimizationError(f"line search stalled at gradient norm {gnorm:.3g}", x)
        if fc >= fx and gnorm <= 1e-8 * max(1.0, abs(fx)):
            # accepted step made no progress: at the floating-point floor
            return x
        x, fx = cand, fc
    raise OptimizationError(f"no convergence within {max_iter} iterations", x)


def sublevel_radius(
    oracle: ObjectiveOracle,
    epsilon: float,
    minimizer: np.ndarray | None = None,
    seed: int = 0,
    n_random: int = 64,
    safety: float = 1.1,
) -> float:
    """Radius delta with {f <= f* + epsilon} inside B(x*, delta).

    Closed form for oracles that provide one. Otherwise bisects the largest step
    along each of the 2d axis directions, ``n_random`` random unit directions
    and (when a Hessian is available) the Hessian eigenvectors at x*, and
    returns the largest step found times ``safety``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    exact = oracle.sublevel_radius_exact(epsilon)
    if exact is not None:
        return float(exact)
    x_star = local_optimize(oracle) if minimizer is None else np.asarray(minimizer, dtype=float)
    d = oracle.dimension
    level = oracle.value(x_star) + epsilon
    rng = np.random.default_rng(seed)
    eye = np.eye(d)
    dirs = [eye, -eye]
    rand = rng.standard_normal((n_random, d))
    dirs.append(rand / np.linalg.norm(rand, axis=1, keepdims=True))
    H = oracle.hessian(x_star)
    if H is not None:
        _, vecs = np.linalg.eigh(H)
        dirs.extend([vecs.T, -vecs.T])
    return safety * float(_max_steps(oracle, x_star, np.vstack(dirs), level).max())


def _max_steps(oracle, x0, U, level, iters=60):
    """Per-row bisection of the largest t with f(x0 + t u) <= level."""
    hi = np.full(len(U), 1e-6)
    inside = oracle.values(x0 + hi[:, None] * U) <= level
    while inside.any():
        hi[inside] *= 2.0
        if hi.max() > 1e9:
            raise UnboundedSublevelSet("sublevel set extends beyond 1e9 along a direction; argmin is unbounded")
        inside[inside] = oracle.values(x0 + hi[inside, None] * U[inside]) <= level
    lo = np.zeros(len(U))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ok = oracle.values(x0 + mid[:, None] * U) <= level
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return hi
