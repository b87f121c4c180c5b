"""Synchronous round engine for the two filtering dynamics.

``dist-minmax`` runs distance filtering, then whole-vector min-max filtering,
then a weighted average, then a clipped subgradient step. ``dist-only`` skips
the min-max stage. The auxiliary point is updated by per-coordinate min-max
filtering and averaging. Each round reads a frozen snapshot and writes the
next one, so the result does not depend on agent processing order.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .adversary import AdversaryContext, AdversarySpec, Inbox, craft_message
from .filters import (
    WeightAssignment,
    convex_combination,
    distance_keep_mask,
    minmax_x_keep_mask,
    minmax_y_keep_mask,
    weight_vector,
)
from .graph import (
    EXHAUSTIVE_CAP,
    AdversarySet,
    Topology,
    is_f_local,
    is_r_robust,
    required_robustness,
)
from .objectives import AverageObjective, ObjectiveOracle, clip_gradient, local_optimize

ALGORITHMS = ("dist-minmax", "dist-only")


class ConfigError(ValueError):
    pass


class ProtocolError(RuntimeError):
    pass


@dataclass
class AgentState:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.x.shape != self.y.shape:
            raise ProtocolError(f"x has dimension {self.x.size} but y has {self.y.size}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ProtocolError("agent state has non-finite entries")


@dataclass
class SimulationConfig:
    topology: Topology
    oracles: Sequence[ObjectiveOracle | None]
    d: int
    f: int
    algorithm: str = "dist-minmax"
    c1: float = 1.0
    c2: float = 1.0
    clip_bound: float = 1e5
    omega: float | None = None
    weight_policy: str = "uniform"
    horizon: int = 300
    seed: int = 0
    adversaries: AdversarySet = field(default_factory=lambda: AdversarySet(frozenset(), 0))
    adversary: AdversarySpec = field(default_factory=AdversarySpec)
    x_star: np.ndarray | None = None
    certified_robustness: int | None = None
    init_tolerance: float = 1e-10

    @property
    def n(self) -> int:
        return self.topology.n

    @property
    def regular(self) -> list[int]:
        return self.adversaries.regular(self.n)

    def effective_omega(self) -> float:
        """Weight floor: the configured one, or the smallest uniform weight any agent can use."""
        if self.omega is not None:
            return self.omega
        return 1.0 / (self.topology.max_in_degree() + 1)

    def validate(self) -> list[str]:
        """Raise on hard errors; return soft warnings about theoretical hypotheses."""
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.d < 1:
            raise ConfigError(f"d must be positive, got {self.d}")
        if self.f < 0:
            raise ConfigError(f"f must be non-negative, got {self.f}")
        if not (self.c1 > 0 and self.c2 > 0):
            raise ConfigError(f"step-size constants must be positive (c1={self.c1}, c2={self.c2})")
        if not self.clip_bound > 0:
            raise ConfigError(f"clip_bound must be positive, got {self.clip_bound}")
        if self.omega is not None and not (0 < self.omega < 1):
            raise ConfigError(f"omega must lie in (0, 1), got {self.omega}")
        if self.weight_policy not in ("uniform", "random"):
            raise ConfigError(f"unknown weight_policy {self.weight_policy!r}")
        if self.horizon < 0:
            raise ConfigError(f"horizon must be non-negative, got {self.horizon}")
        if len(self.oracles) != self.n:
            raise ConfigError(f"{len(self.oracles)} oracles for {self.n} agents")
        for i in self.regular:
            orc = self.oracles[i]
            if orc is None:
                raise ConfigError(f"regular agent {i} has no objective")
            if orc.dimension != self.d:
                raise ConfigError(f"objective of agent {i} has dimension {orc.dimension}, expected {self.d}")
        if not self.regular:
            raise ConfigError("at least one regular agent is required")
        self.adversary.validate(self.d)

        notes = []
        need = required_robustness(self.algorithm, self.d, self.f)
        if self.certified_robustness is not None:
            if self.certified_robustness < need:
                notes.append(f"{self.algorithm} needs a {need}-robust graph; topology is certified {self.certified_robustness}-robust")
        elif self.n <= EXHAUSTIVE_CAP:
            if not is_r_robust(self.topology, need):
                notes.append(f"{self.algorithm} needs a {need}-robust graph; exhaustive check says the topology is not")
        else:
            notes.append(f"robustness {need} required but not verifiable exhaustively for n={self.n}")
        if len(self.adversaries) and not is_f_local(self.topology, self.adversaries.members, self.f):
            notes.append(f"adversary set is not {self.f}-local")
        # filters may remove nothing, so an agent can retain all of its inputs
        most = max(self.topology.in_degree(i) + 1 for i in self.regular)
        if self.omega is not None and self.omega * most > 1:
            notes.append(f"omega={self.omega} is infeasible for an agent retaining {most} entries; its weights fall back to 1/m")
        return notes


def step_size(k: int, c1: float, c2: float) -> float:
    return c1 / (k + c2)


@dataclass
class StepRecord:
    state: AgentState
    z: np.ndarray
    gradient: np.ndarray
    x_dist: np.ndarray
    x_mm: np.ndarray
    y_keep: np.ndarray


def _as_weights(spec, owners: np.ndarray) -> np.ndarray:
    if isinstance(spec, WeightAssignment):
        lookup = dict(zip(spec.owners, spec.weights))
        try:
            return np.array([lookup[int(o)] for o in owners])
        except KeyError as exc:
            raise ProtocolError(f"no weight supplied for retained agent {exc.args[0]}") from None
    return np.asarray(spec, dtype=float)


def step_regular_agent(
    config: SimulationConfig,
    agent: int,
    inbox: Inbox,
    k: int,
    rng: np.random.Generator | None = None,
    x_weights=None,
    y_weights=None,
) -> StepRecord:
    """One update of regular ``agent`` from its ``inbox`` (own entry first).

    ``x_weights`` / ``y_weights`` override the configured weight policy; pass a
    :class:`WeightAssignment` (or a list of them for y, one per coordinate).
    """
    d = config.d
    if inbox.X.shape[1] != d or inbox.Y.shape[1] != d:
        bad = inbox.X.shape[1] if inbox.X.shape[1] != d else inbox.Y.shape[1]
        raise ProtocolError(f"agent {agent} received dimension {bad}, expected {d}")
    if inbox.own_id != agent:
        raise ProtocolError(f"inbox of agent {agent} does not start with its own entry")
    f = config.f
    omega = config.effective_omega()
    owners = inbox.owners

    keep = distance_keep_mask(inbox.X, owners, agent, inbox.Y[0], f)
    x_dist = np.flatnonzero(keep)
    if config.algorithm == "dist-minmax":
        mm = minmax_x_keep_mask(inbox.X[x_dist], owners[x_dist], agent, f)
        x_mm = x_dist[mm]
    else:
        x_mm = x_dist
    if x_weights is None:
        w = weight_vector(config.weight_policy, len(x_mm), min(omega, 1.0 / len(x_mm)), rng)
    else:
        w = _as_weights(x_weights, owners[x_mm])
    z = convex_combination(inbox.X[x_mm], w)

    g = clip_gradient(config.oracles[agent].subgradient(z), config.clip_bound)
    x_new = z - step_size(k, config.c1, config.c2) * g

    y_keep = minmax_y_keep_mask(inbox.Y, owners, agent, f)
    y_new = np.empty(d)
    for ell in range(d):
        rows = np.flatnonzero(y_keep[:, ell])
        if y_weights is None:
            wy = weight_vector(config.weight_policy, len(rows), min(omega, 1.0 / len(rows)), rng)
        else:
            wy = _as_weights(y_weights[ell], owners[rows])
        y_new[ell] = convex_combination(inbox.Y[rows, ell], wy)

    return StepRecord(AgentState(x_new, y_new), z, g, owners[x_dist], owners[x_mm], y_keep)


@dataclass
class Trajectory:
    """States of the regular agents for rounds 0..K.

    ``x[k, r]`` is the state of agent ``regular[r]`` at round ``k``; ``z`` and
    ``grads`` (clipped) are indexed by the round that produced round ``k+1``.
    """

    regular: tuple[int, ...]
    adversaries: tuple[int, ...]
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    grads: np.ndarray
    steps: np.ndarray
    inboxes: list[dict[int, Inbox]] | None = None

    @property
    def horizon(self) -> int:
        return self.x.shape[0] - 1

    def to_csv(self, path: str | Path) -> None:
        d = self.x.shape[2]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "agent", "role"] + [f"x_{i}" for i in range(d)] + [f"y_{i}" for i in range(d)])
            for k in range(self.x.shape[0]):
                for r, agent in enumerate(self.regular):
                    w.writerow([k, agent, "regular"] + [repr(float(v)) for v in self.x[k, r]] + [repr(float(v)) for v in self.y[k, r]])

    @classmethod
    def from_csv(cls, path: str | Path, adversaries: Sequence[int] = ()) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if r["role"] == "regular"]
        if not rows:
            raise ProtocolError(f"{path} holds no regular-agent rows")
        d = sum(1 for key in rows[0] if key.startswith("x_"))
        agents = sorted({int(r["agent"]) for r in rows})
        K = max(int(r["round"]) for r in rows)
        col = {a: i for i, a in enumerate(agents)}
        x = np.full((K + 1, len(agents), d), np.nan)
        y = np.full_like(x, np.nan)
        for r in rows:
            k, i = int(r["round"]), col[int(r["agent"])]
            x[k, i] = [float(r[f"x_{j}"]) for j in range(d)]
            y[k, i] = [float(r[f"y_{j}"]) for j in range(d)]
        if np.isnan(x).any():
            raise ProtocolError(f"{path} is missing rows")
        empty = np.full((K, len(agents), d), np.nan)
        return cls(tuple(agents), tuple(adversaries), x, y, empty, empty.copy(), np.full(K, np.nan))


def initial_states(config: SimulationConfig) -> dict[int, np.ndarray]:
    return {i: local_optimize(config.oracles[i], config.init_tolerance) for i in config.regular}


def regular_minimizer(config: SimulationConfig) -> np.ndarray:
    if config.x_star is not None:
        return np.asarray(config.x_star, dtype=float)
    return local_optimize(AverageObjective([config.oracles[i] for i in config.regular]), config.init_tolerance)


def run_rounds(config: SimulationConfig, log_inboxes: bool = False, warn: bool = True) -> Trajectory:
    """Run ``config.horizon`` synchronous rounds from the local minimizers."""
    notes = config.validate()
    if warn:
        for note in notes:
            warnings.warn(note, stacklevel=2)
    topo, d, K = config.topology, config.d, config.horizon
    regular = tuple(config.regular)
    adversaries = tuple(sorted(config.adversaries.members))
    adv_set = set(adversaries)
    weight_rng = np.random.default_rng([config.seed, 1])
    attack_rng = np.random.default_rng([config.seed, 2])

    x0 = initial_states(config)
    x_star = regular_minimizer(config) if adversaries else np.zeros(d)
    local_min = {}
    if adversaries and config.adversary.strategy in ("gaussian_noise", "mixed"):
        for a in adversaries:
            if config.oracles[a] is not None:
                local_min[a] = local_optimize(config.oracles[a], config.init_tolerance)

    R = len(regular)
    xs = np.empty((K + 1, R, d))
    ys = np.empty((K + 1, R, d))
    zs = np.empty((K, R, d))
    gs = np.empty((K, R, d))
    for r, a in enumerate(regular):
        xs[0, r] = x0[a]
        ys[0, r] = x0[a]
    logs: list[dict[int, Inbox]] | None = [] if log_inboxes else None

    for k in range(K):
        X = np.zeros((config.n, d))
        Y = np.zeros((config.n, d))
        X[list(regular)] = xs[k]
        Y[list(regular)] = ys[k]
        ctx = None
        if adversaries:
            ctx = AdversaryContext(k, topo, config.f, config.algorithm, X, Y, regular, x_star, local_min)
        round_log = {}
        for r, agent in enumerate(regular):
            ins = topo.in_neighbors(agent)
            reg_in = [j for j in ins if j not in adv_set]
            ids = [agent] + reg_in
            inbox = Inbox(np.array(ids, dtype=int), X[ids].copy(), Y[ids].copy())
            for a in ins:
                if a in adv_set:
                    try:
                        mx, my = craft_message(config.adversary, ctx, inbox, a, attack_rng)
                    except Exception as exc:
                        raise ProtocolError(f"round {k}: adversary {a} failed on target {agent}: {exc}") from exc
                    inbox = inbox.extended(a, mx, my)
            try:
                rec = step_regular_agent(config, agent, inbox, k, weight_rng)
            except Exception as exc:
                raise ProtocolError(f"round {k}: agent {agent} failed: {exc}") from exc
            xs[k + 1, r] = rec.state.x
            ys[k + 1, r] = rec.state.y
            zs[k, r] = rec.z
            gs[k, r] = rec.gradient
            if logs is not None:
                round_log[agent] = inbox
        if logs is not None:
            logs.append(round_log)

    steps = np.array([step_size(k, config.c1, config.c2) for k in range(K)])
    return Trajectory(regular, adversaries, xs, ys, zs, gs, steps, logs)
