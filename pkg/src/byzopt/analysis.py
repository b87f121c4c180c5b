"""Certificate quantities and trajectory-level checks.

The limit point of the auxiliary consensus is unknown at a finite horizon, so
every check that is centred on it uses ``y_inf_hat``, the final-round mean of
the regular auxiliary points. Since the true limit and ``y_inf_hat`` both lie in
the final regular hull, the final consensus diameter bounds the estimation
error and serves as additive slack (``tol_est``).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .objectives import ObjectiveOracle, local_optimize, sublevel_radius
from .protocol import SimulationConfig, Trajectory, regular_minimizer

ATOL = 1e-9


class InfeasibleError(ValueError):
    pass


class CertificateError(RuntimeError):
    pass


# ------------------------------------------------------------ consensus

def consensus_diameter(Y: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-coordinate range of the rows of ``Y`` and its Euclidean norm."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[0] == 0:
        raise ValueError("need at least one agent")
    D = Y.max(axis=0) - Y.min(axis=0)
    return D, float(np.linalg.norm(D))


def max_pairwise_distance(X: np.ndarray) -> float:
    X = np.atleast_2d(X)
    diff = X[:, None, :] - X[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


@dataclass(frozen=True)
class AuxConsensusConstants:
    gamma: float
    alpha: float
    beta: float


def prop1_constants(omega: float, regular_count: int, D0_norm: float) -> AuxConsensusConstants:
    """Rate constants of the exponential decay of the auxiliary consensus."""
    if not 0 < omega < 1:
        raise ValueError(f"omega must lie in (0, 1), got {omega}")
    if regular_count < 2:
        raise ValueError("rate constants need at least two regular agents")
    shrink = omega ** (regular_count - 1) / 2.0
    gamma = 1.0 - shrink
    # gamma rounds to 1 once shrink < 1e-16; log1p keeps alpha positive
    alpha = -math.log1p(-shrink) / (regular_count - 1)
    return AuxConsensusConstants(gamma, alpha, D0_norm / gamma)


@dataclass
class ConsensusReport:
    series: np.ndarray
    threshold: float | None
    verdict: bool | None


def check_consensus(trajectory: Trajectory, threshold: float | None) -> ConsensusReport:
    """Largest pairwise distance between regular states, per round.

    With ``threshold=None`` the series is reported without a verdict.
    """
    if len(trajectory.regular) < 2:
        raise ValueError("consensus needs at least two regular agents")
    series = np.array([max_pairwise_distance(X) for X in trajectory.x])
    verdict = None if threshold is None else bool(series[-1] <= threshold)
    return ConsensusReport(series, threshold, verdict)


# ------------------------------------------------------------ radius

def theta_bound(epsilon: float, L: float, delta: float) -> float:
    if epsilon <= 0 or delta <= 0 or L <= 0:
        raise InfeasibleError("epsilon, L and delta must be positive")
    ratio = epsilon / (L * delta)
    if ratio > 1.0:
        raise InfeasibleError(f"epsilon={epsilon:g} exceeds L*delta={L * delta:g}")
    return math.acos(ratio)


def convergence_radius(xi: float, agents: Sequence[tuple[float, float, float]]) -> float:
    """``max_i max(R_i sec(theta_i), R_i + delta_i) + xi`` over ``(R, theta, delta)`` triples."""
    worst = 0.0
    for R, theta, delta in agents:
        if not 0 <= theta < math.pi / 2:
            raise InfeasibleError(f"angle {theta} outside [0, pi/2)")
        worst = max(worst, R / math.cos(theta), R + delta)
    return worst + xi


def delta_decrease(R_tilde: float, theta: float, p: float, l: float) -> float:
    if p < R_tilde:
        raise ValueError(f"p={p} must be at least R_tilde={R_tilde}")
    return 2.0 * l * (math.sqrt(p * p - R_tilde * R_tilde) * math.cos(theta) - R_tilde * math.sin(theta)) - l * l


def max_tolerance(n: int, d: int, algorithm: str) -> int:
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if algorithm == "dist-minmax":
        return (n - 1) // (2 * (2 * d + 1))
    if algorithm == "dist-only":
        return (n - 1) // 4
    raise ValueError(f"unknown algorithm {algorithm!r}")


def step_threshold(bound: float, c1: float, c2: float) -> int:
    """Smallest round k >= 0 with c1 / (k + c2) <= bound."""
    if bound <= 0:
        raise InfeasibleError(f"step-size bound must be positive, got {bound}")
    return max(0, math.ceil(c1 / bound - c2))


# ------------------------------------------------------------ certificate

@dataclass
class GridPoint:
    epsilon: float
    deltas: list[float]
    thetas: list[float]
    s_star: float


@dataclass
class ConvergenceCertificate:
    y_inf_hat: np.ndarray
    agents: tuple[int, ...]
    local_minimizers: np.ndarray
    R_tilde: np.ndarray
    clip_bound: float
    grid: list[GridPoint]
    dropped_epsilons: list[float]
    s_star_min: float
    best_epsilon: float
    tol_est: float
    x_star: np.ndarray
    minimizer_distance: float
    containment: np.ndarray
    minimizer_inside: bool
    final_contained: bool

    def point(self, epsilon: float) -> GridPoint:
        for gp in self.grid:
            if gp.epsilon == epsilon:
                return gp
        raise KeyError(epsilon)

    def to_dict(self) -> dict:
        return {
            "y_inf_hat": self.y_inf_hat.tolist(),
            "agents": list(self.agents),
            "R_tilde": self.R_tilde.tolist(),
            "clip_bound": self.clip_bound,
            "epsilon_grid": [asdict(gp) for gp in self.grid],
            "dropped_epsilons": self.dropped_epsilons,
            "s_star_min": self.s_star_min,
            "best_epsilon": self.best_epsilon,
            "tol_est": self.tol_est,
            "x_star": self.x_star.tolist(),
            "minimizer_distance": self.minimizer_distance,
            "containment": self.containment.tolist(),
            "minimizer_inside": self.minimizer_inside,
            "final_contained": self.final_contained,
        }


def default_epsilon_grid(oracles: Sequence[ObjectiveOracle], minimizers: np.ndarray, center: np.ndarray, points: int = 12) -> np.ndarray:
    gaps = [o.value(center) - o.value(m) for o, m in zip(oracles, minimizers)]
    scale = float(np.median(gaps))
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    return np.logspace(-3, 2, points) * scale


def certify(
    trajectory: Trajectory,
    config: SimulationConfig,
    epsilon_grid: Sequence[float] | None = None,
    xi: float = 0.0,
    x_star: np.ndarray | None = None,
) -> ConvergenceCertificate:
    agents = tuple(trajectory.regular)
    oracles = [config.oracles[i] for i in agents]
    y_hat = trajectory.y[-1].mean(axis=0)
    _, diam = consensus_diameter(trajectory.y[-1])
    tol_est = diam + 1e-6
    mins = np.array([local_optimize(o, config.init_tolerance) for o in oracles])
    R = np.linalg.norm(mins - y_hat, axis=1)
    L = config.clip_bound
    if epsilon_grid is None:
        epsilon_grid = default_epsilon_grid(oracles, mins, y_hat)

    grid, dropped = [], []
    for eps in epsilon_grid:
        eps = float(eps)
        deltas = [sublevel_radius(o, eps, m) for o, m in zip(oracles, mins)]
        try:
            thetas = [theta_bound(eps, L, dl) for dl in deltas]
            s = convergence_radius(xi, list(zip(R, thetas, deltas)))
        except InfeasibleError:
            dropped.append(eps)
            continue
        grid.append(GridPoint(eps, [float(v) for v in deltas], thetas, s))
    if not grid:
        raise CertificateError("every epsilon on the grid is infeasible; try larger epsilon values")
    best = min(grid, key=lambda gp: gp.s_star)

    if x_star is None:
        x_star = regular_minimizer(config)
    x_star = np.asarray(x_star, dtype=float)
    dist_star = float(np.linalg.norm(x_star - y_hat))
    contain = np.linalg.norm(trajectory.x - y_hat, axis=2).max(axis=1)
    return ConvergenceCertificate(
        y_inf_hat=y_hat,
        agents=agents,
        local_minimizers=mins,
        R_tilde=R,
        clip_bound=L,
        grid=grid,
        dropped_epsilons=dropped,
        s_star_min=best.s_star,
        best_epsilon=best.epsilon,
        tol_est=tol_est,
        x_star=x_star,
        minimizer_distance=dist_star,
        containment=contain,
        minimizer_inside=bool(dist_star <= best.s_star + tol_est),
        final_contained=bool(contain[-1] <= best.s_star + tol_est),
    )


@dataclass
class ProofConstants:
    epsilon: float
    xi: float
    s_star: float
    a_plus: np.ndarray
    a_minus: np.ndarray
    b: np.ndarray
    L_lower: np.ndarray
    k1: int
    k2: int
    k3: int


def proof_constants(
    cert: ConvergenceCertificate,
    epsilon: float | None = None,
    xi: float | None = None,
    c1: float = 1.0,
    c2: float = 1.0,
    L: float | None = None,
) -> ProofConstants:
    """Per-agent constants of the descent argument at one grid point.

    ``xi`` defaults to a thousandth of the radius at that point.
    """
    gp = cert.point(cert.best_epsilon if epsilon is None else epsilon)
    L = cert.clip_bound if L is None else L
    s0 = gp.s_star
    xi = 1e-3 * s0 if xi is None else xi
    if xi <= 0:
        raise InfeasibleError("xi must be positive")
    s = s0 + xi
    R = cert.R_tilde
    th = np.array(gp.thetas)
    dl = np.array(gp.deltas)
    root = np.sqrt(s * s - (R * np.cos(th)) ** 2)
    a_plus = -R * np.sin(th) + root
    a_minus = -R * np.sin(th) - root
    b = 2.0 * (np.sqrt(s * s - R * R) * np.cos(th) - R * np.sin(th))
    if np.any(b <= 0) or np.any(a_plus <= 0):
        raise InfeasibleError("non-positive descent constant; radius is below R sec(theta)")
    return ProofConstants(
        epsilon=gp.epsilon,
        xi=xi,
        s_star=s,
        a_plus=a_plus,
        a_minus=a_minus,
        b=b,
        L_lower=gp.epsilon / dl,
        k1=step_threshold(xi / L, c1, c2),
        k2=step_threshold(min(a_plus.min(), b.min()) / L, c1, c2),
        k3=step_threshold(b.min() / (2 * L), c1, c2),
    )


# ------------------------------------------------------------ runtime checks

@dataclass
class CheckResult:
    name: str
    passed: bool
    violations: int
    worst_margin: float
    detail: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.passed


def _result(name: str, margins: np.ndarray, labels) -> CheckResult:
    """``margins`` are slack values; a negative one is a violation."""
    bad = np.flatnonzero(margins < 0)
    detail = [labels(i) for i in bad[:10]]
    worst = float(margins.min()) if margins.size else 0.0
    return CheckResult(name, len(bad) == 0, int(len(bad)), worst, detail)


def check_filtered_ball(trajectory: Trajectory, topology, atol: float = ATOL) -> CheckResult:
    """``||z_i - y_i||`` never exceeds the farthest regular in-neighbour (or own) state from ``y_i``."""
    pos = {a: r for r, a in enumerate(trajectory.regular)}
    K = trajectory.horizon
    margins = np.empty((K, len(pos)))
    for r, agent in enumerate(trajectory.regular):
        cols = [r] + [pos[j] for j in topology.in_neighbors(agent) if j in pos]
        y = trajectory.y[:K, r][:, None, :]
        reach = np.linalg.norm(trajectory.x[:K, cols] - y, axis=2).max(axis=1)
        margins[:, r] = reach + atol - np.linalg.norm(trajectory.z[:, r] - trajectory.y[:K, r], axis=1)
    return _result("filtered-ball", margins.ravel(), lambda i: f"round {i // len(pos)} agent {trajectory.regular[i % len(pos)]}")


def check_inexact_centre(trajectory: Trajectory, center: np.ndarray | None = None, atol: float = ATOL) -> CheckResult:
    """``||z_i - c|| <= max_j ||x_j - c|| + 2 ||y_i - c||`` around ``c = y_inf_hat``."""
    c = trajectory.y[-1].mean(axis=0) if center is None else center
    K = trajectory.horizon
    xmax = np.linalg.norm(trajectory.x[:K] - c, axis=2).max(axis=1)[:, None]
    lhs = np.linalg.norm(trajectory.z - c, axis=2)
    rhs = xmax + 2 * np.linalg.norm(trajectory.y[:K] - c, axis=2) + atol
    R = len(trajectory.regular)
    return _result("inexact-centre", (rhs - lhs).ravel(), lambda i: f"round {i // R} agent {trajectory.regular[i % R]}")


def check_hull_contraction(trajectory: Trajectory, atol: float = ATOL) -> CheckResult:
    lo, hi = trajectory.y.min(axis=1), trajectory.y.max(axis=1)
    margins = np.concatenate([(lo[1:] - lo[:-1]).ravel(), (hi[:-1] - hi[1:]).ravel()]) + atol
    d = trajectory.y.shape[2]
    return _result("hull-contraction", margins, lambda i: f"round {(i % (lo.size - d)) // d + 1} coordinate {i % d}")


def check_aux_contraction(trajectory: Trajectory, omega: float, atol: float = ATOL) -> CheckResult:
    """Per-coordinate range shrinks by ``gamma`` every ``|R| - 1`` rounds."""
    R = len(trajectory.regular)
    if R < 2:
        return CheckResult("aux-contraction", True, 0, 0.0)
    gamma = prop1_constants(omega, R, 0.0).gamma
    D = trajectory.y.max(axis=1) - trajectory.y.min(axis=1)
    lag = R - 1
    if D.shape[0] <= lag:
        return CheckResult("aux-contraction", True, 0, 0.0)
    margins = gamma * D[:-lag] + atol - D[lag:]
    d = D.shape[1]
    return _result("aux-contraction", margins.ravel(), lambda i: f"round {i // d} coordinate {i % d}")


def check_aux_decay(trajectory: Trajectory, omega: float, atol: float = ATOL) -> CheckResult:
    """``||y_i[k] - y_inf_hat|| <= beta exp(-alpha k) + tol_est``."""
    R = len(trajectory.regular)
    if R < 2:
        return CheckResult("aux-decay", True, 0, 0.0)
    _, d0 = consensus_diameter(trajectory.y[0])
    _, dK = consensus_diameter(trajectory.y[-1])
    c = prop1_constants(omega, R, d0)
    y_hat = trajectory.y[-1].mean(axis=0)
    ks = np.arange(trajectory.y.shape[0])
    bound = c.beta * np.exp(-c.alpha * ks)[:, None] + dK + atol
    margins = bound - np.linalg.norm(trajectory.y - y_hat, axis=2)
    return _result("aux-decay", margins.ravel(), lambda i: f"round {i // R} agent {trajectory.regular[i % R]}")


def check_aux_limit_in_initial_hull(trajectory: Trajectory, atol: float = ATOL) -> CheckResult:
    y_hat = trajectory.y[-1].mean(axis=0)
    lo, hi = trajectory.y[0].min(axis=0), trajectory.y[0].max(axis=0)
    margins = np.concatenate([y_hat - lo, hi - y_hat]) + atol
    return _result("aux-limit-in-initial-hull", margins, lambda i: f"coordinate {i % len(lo)}")


def check_containment(cert: ConvergenceCertificate) -> CheckResult:
    margins = np.array([
        cert.s_star_min + cert.tol_est - cert.minimizer_distance,
        cert.s_star_min + cert.tol_est - cert.containment[-1],
    ])
    names = ("minimizer outside certified ball", "final states outside certified ball")
    return _result("containment", margins, lambda i: names[i])


def descent_diagnostic(trajectory: Trajectory, cert: ConvergenceCertificate, pc: ProofConstants, tol: float | None = None) -> list[str]:
    """Rounds where the squared-distance descent inequality fails; informational only."""
    tol = cert.tol_est if tol is None else tol
    gp = cert.point(pc.epsilon)
    c = cert.y_inf_hat
    warnings = []
    for r, agent in enumerate(trajectory.regular):
        R, th, dl = cert.R_tilde[r], gp.thetas[r], gp.deltas[r]
        for k in range(max(pc.k3, 0), trajectory.horizon):
            p = float(np.linalg.norm(trajectory.z[k, r] - c))
            if p <= R + dl:
                continue
            step = trajectory.steps[k] * float(np.linalg.norm(trajectory.grads[k, r]))
            after = float(np.linalg.norm(trajectory.x[k + 1, r] - c)) ** 2
            if after > p * p - delta_decrease(R, th, p, step) + tol:
                warnings.append(f"round {k} agent {agent}: {after:.6g} > {p * p - delta_decrease(R, th, p, step):.6g}")
    return warnings


def run_checks(trajectory: Trajectory, config: SimulationConfig, cert: ConvergenceCertificate | None = None) -> list[CheckResult]:
    """Every runtime invariant that the trajectory carries enough data for.

    Trajectories reloaded from CSV have no filtered points, so the two checks
    on ``z`` are skipped for them.
    """
    omega = config.effective_omega()
    results = []
    if not np.isnan(trajectory.z).all():
        results += [check_filtered_ball(trajectory, config.topology), check_inexact_centre(trajectory)]
    results += [
        check_hull_contraction(trajectory),
        check_aux_limit_in_initial_hull(trajectory),
        check_aux_decay(trajectory, omega),
        check_aux_contraction(trajectory, omega),
    ]
    if cert is not None:
        results.append(check_containment(cert))
    return results
