"""Experiment presets, configuration files, metrics and output layout."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .adversary import AdversarySpec
from .analysis import (
    CheckResult,
    ConvergenceCertificate,
    certify,
    check_consensus,
    consensus_diameter,
    max_pairwise_distance,
    run_checks,
)
from .graph import AdversarySet, Topology, generate_robust_graph, select_f_local_adversaries
from .objectives import (
    AverageObjective,
    LogisticObjective,
    ObjectiveOracle,
    QuadraticObjective,
    local_optimize,
    random_quadratic,
)
from .protocol import ConfigError, SimulationConfig, Trajectory, run_rounds

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("gap_x", "gap_y", "dist_x", "dist_y", "consensus_x", "consensus_y", "containment")
REG_GRID = tuple(10.0 ** p for p in range(-4, 6))


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    objective: str
    algorithm: str
    n: int
    d: int
    robustness: int
    f: int
    adversary_count: int
    horizon: int
    runs: int
    c1: float = 1.0
    c2: float = 1.0
    clip_bound: float = 1e5
    weight_policy: str = "random"
    omega_fraction: float = 0.5
    strategy: str = "safe_region"
    graph_degree: int | None = None
    step_exponents: tuple[int, ...] | None = None
    reg_grid: tuple[float, ...] = REG_GRID
    metrics: tuple[str, ...] = METRIC_COLUMNS


PRESETS = {
    p.name: p
    for p in (
        ExperimentPreset("quadratic", "quadratic", "dist-minmax", 25, 2, 11, 2, 2, 300, 10),
        ExperimentPreset("quadratic-dist-only", "quadratic", "dist-only", 25, 2, 11, 5, 5, 300, 10),
        ExperimentPreset("logistic", "logistic", "dist-minmax", 50, 5, 23, 2, 2, 200, 5, step_exponents=tuple(range(-2, 5))),
        ExperimentPreset("logistic-dist-only", "logistic", "dist-only", 50, 5, 23, 2, 2, 200, 5, step_exponents=tuple(range(-2, 5))),
    )
}


# ------------------------------------------------------------------ data

@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def synthetic_dataset(seed: int, size: int = 1372, features: int = 4, separation: float = 5.0) -> Dataset:
    """Two Gaussian clusters with identity covariance, means ``+-separation/2`` along a random unit direction."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(features)
    direction /= np.linalg.norm(direction)
    labels = rng.integers(0, 2, size)
    centers = np.where(labels[:, None] == 1, 0.5, -0.5) * separation * direction
    return Dataset(centers + rng.standard_normal((size, features)), labels)


def load_dataset(path: str | Path) -> Dataset:
    """CSV with numeric feature columns and a final 0/1 label column; a header row is skipped."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if lineno == 1:
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric entry") from None
    arr = np.array(rows)
    labels = arr[:, -1]
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError(f"{path}: labels must be 0 or 1")
    return Dataset(arr[:, :-1], labels.astype(int))


def split_dataset(data: Dataset, rng: np.random.Generator, train: int = 1000, valid: int = 186) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle, then cut into train/validation/test, rescaling the sizes when the data is smaller than 1372."""
    m = len(data)
    if m < train + valid + 1:
        train, valid = int(round(m * 1000 / 1372)), int(round(m * 186 / 1372))
    perm = rng.permutation(m)
    parts = np.split(perm, [train, train + valid])
    return tuple(Dataset(data.features[p], data.labels[p]) for p in parts)


def accuracy(w: np.ndarray, data: Dataset) -> float:
    aug = np.hstack([data.features, np.ones((len(data), 1))])
    return float(np.mean((aug @ w > 0).astype(int) == data.labels))


# ------------------------------------------------------------------ baseline

@dataclass
class Baseline:
    x_star: np.ndarray
    f_star: float
    accuracy: dict[str, float] = field(default_factory=dict)


def centralized_baseline(
    oracles: Sequence[ObjectiveOracle],
    tolerance: float = 1e-10,
    splits: dict[str, Dataset] | None = None,
) -> Baseline:
    """Minimizer of the average of ``oracles``; with ``splits``, its accuracy on each."""
    avg = AverageObjective(list(oracles))
    x = local_optimize(avg, tolerance)
    acc = {name: accuracy(x, ds) for name, ds in (splits or {}).items()}
    return Baseline(x, avg.value(x), acc)


# ------------------------------------------------------------------ worlds

@dataclass
class World:
    """Everything a run needs apart from its own randomness."""

    topology: Topology
    oracles: list[ObjectiveOracle]
    adversaries: AdversarySet
    baseline: Baseline
    splits: dict[str, Dataset] | None = None
    reg: float | None = None


def _omega(preset: ExperimentPreset, topology: Topology) -> float:
    return preset.omega_fraction / (topology.max_in_degree() + 1)


def quadratic_world(preset: ExperimentPreset, seed: int) -> World:
    topo = generate_robust_graph(preset.n, preset.robustness, seed=seed, degree=preset.graph_degree)
    rng = np.random.default_rng([seed, 0])
    oracles = [random_quadratic(preset.d, rng) for _ in range(preset.n)]
    adv = select_f_local_adversaries(topo, preset.f, preset.adversary_count, seed=seed)
    base = centralized_baseline([oracles[i] for i in adv.regular(preset.n)])
    return World(topo, oracles, adv, base)


def logistic_world(preset: ExperimentPreset, seed: int, data: Dataset) -> World:
    """One realization: fresh split, topology, adversary set, and the best
    regularization on validation accuracy."""
    rng = np.random.default_rng([seed, 0])
    train, valid, test = split_dataset(data, rng)
    if preset.d != train.features.shape[1] + 1:
        raise ConfigError(f"dataset has {train.features.shape[1]} features, so d must be {train.features.shape[1] + 1}")
    topo = generate_robust_graph(preset.n, preset.robustness, seed=seed, degree=preset.graph_degree)
    adv = select_f_local_adversaries(topo, preset.f, preset.adversary_count, seed=seed)
    regular = adv.regular(preset.n)
    shards = np.array_split(np.arange(len(train)), preset.n)
    splits = {"train": train, "valid": valid, "test": test}
    best = None
    for reg in preset.reg_grid:
        oracles = [LogisticObjective(train.features[s], train.labels[s], reg, scale=len(regular)) for s in shards]
        base = centralized_baseline([oracles[i] for i in regular], splits=splits)
        if best is None or base.accuracy["valid"] > best[1].accuracy["valid"]:
            best = (oracles, base, reg)
    oracles, base, reg = best
    return World(topo, oracles, adv, base, splits, reg)


def build_config(preset: ExperimentPreset, world: World, seed: int, c1: float | None = None) -> SimulationConfig:
    return SimulationConfig(
        topology=world.topology,
        oracles=world.oracles,
        d=preset.d,
        f=preset.f,
        algorithm=preset.algorithm,
        c1=preset.c1 if c1 is None else c1,
        c2=preset.c2,
        clip_bound=preset.clip_bound,
        omega=_omega(preset, world.topology),
        weight_policy=preset.weight_policy,
        horizon=preset.horizon,
        seed=seed,
        adversaries=world.adversaries,
        adversary=AdversarySpec(strategy=preset.strategy),
        x_star=world.baseline.x_star,
        certified_robustness=preset.robustness,
    )


# ------------------------------------------------------------------ metrics

def compute_metrics(trajectory: Trajectory, oracles: Sequence[ObjectiveOracle], x_star: np.ndarray) -> np.ndarray:
    """One row per round k = 1..K, columns as in :data:`METRIC_COLUMNS`."""
    f = AverageObjective([oracles[i] for i in trajectory.regular])
    f_star = f.value(x_star)
    y_hat = trajectory.y[-1].mean(axis=0)
    xbar = trajectory.x[1:].mean(axis=1)
    ybar = trajectory.y[1:].mean(axis=1)
    rows = np.empty((trajectory.horizon, len(METRIC_COLUMNS)))
    rows[:, 0] = f.values(xbar) - f_star
    rows[:, 1] = f.values(ybar) - f_star
    rows[:, 2] = np.linalg.norm(xbar - x_star, axis=1)
    rows[:, 3] = np.linalg.norm(ybar - x_star, axis=1)
    rows[:, 4] = [max_pairwise_distance(X) for X in trajectory.x[1:]]
    rows[:, 5] = [consensus_diameter(Y)[1] for Y in trajectory.y[1:]]
    rows[:, 6] = np.linalg.norm(trajectory.x[1:] - y_hat, axis=2).max(axis=1)
    if not np.all(np.isfinite(rows)):
        raise FloatingPointError("non-finite metric value")
    return rows


def write_metrics(path: Path, rows: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("round",) + METRIC_COLUMNS)
        for k, row in enumerate(rows, start=1):
            w.writerow([k] + [repr(float(v)) for v in row])


def aggregate(per_run: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    stack = np.stack(per_run)
    return stack.mean(axis=0), stack.std(axis=0)


def write_aggregate(path: Path, mean: np.ndarray, std: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round"] + [f"{c}_{s}" for c in METRIC_COLUMNS for s in ("mean", "std")])
        for k in range(mean.shape[0]):
            vals = [v for pair in zip(mean[k], std[k]) for v in pair]
            w.writerow([k + 1] + [repr(float(v)) for v in vals])


# ------------------------------------------------------------------ experiments

@dataclass
class RunResult:
    index: int
    config: SimulationConfig
    trajectory: Trajectory
    metrics: np.ndarray
    certificate: ConvergenceCertificate
    checks: list[CheckResult]
    x_star: np.ndarray
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


@dataclass
class ExperimentResult:
    preset: ExperimentPreset
    runs: list[RunResult]
    mean: np.ndarray
    std: np.ndarray
    summary: dict[str, Any]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.runs)


def _finish_run(
    index: int,
    config: SimulationConfig,
    world: World,
    extra: dict,
    log_inboxes: bool,
    traj: Trajectory | None = None,
) -> RunResult:
    if traj is None:
        traj = run_rounds(config, log_inboxes=log_inboxes, warn=False)
    x_star = world.baseline.x_star
    cert = certify(traj, config, x_star=x_star)
    checks = run_checks(traj, config, cert)
    return RunResult(index, config, traj, compute_metrics(traj, world.oracles, x_star), cert, checks, x_star, extra)


def _logistic_run(preset: ExperimentPreset, world: World, run_seed: int, index: int, log_inboxes: bool) -> RunResult:
    exponents = preset.step_exponents or (None,)
    best = None
    for e in exponents:
        c1 = preset.c1 if e is None else 10.0 ** (-e)
        cfg = build_config(preset, world, run_seed, c1)
        traj = run_rounds(cfg, log_inboxes=log_inboxes, warn=False)
        score = accuracy(traj.x[-1].mean(axis=0), world.splits["valid"])
        log.info("run %d: eta0=%s validation accuracy %.4f", index, e, score)
        if best is None or score > best[0]:
            best = (score, e, cfg, traj)
    _, e, cfg, traj = best
    res = _finish_run(index, cfg, world, {}, log_inboxes, traj)
    wbar = res.trajectory.x[-1].mean(axis=0)
    acc = {}
    for name, ds in world.splits.items():
        acc[f"{name}_C"] = world.baseline.accuracy[name]
        acc[f"{name}_D"] = accuracy(wbar, ds)
        acc[f"{name}_MIN"] = min(accuracy(w, ds) for w in res.trajectory.x[-1])
    res.extra.update({
        "adversaries": sorted(world.adversaries.members),
        "reg": world.reg,
        "eta0": e,
        "c1": cfg.c1,
        "accuracy": acc,
    })
    return res


def run_experiment(
    preset: ExperimentPreset,
    runs: int | None = None,
    seed: int = 0,
    out_dir: str | Path | None = None,
    dataset: Dataset | None = None,
    log_inboxes: bool = False,
) -> ExperimentResult:
    """Seeded runs of ``preset``; writes the output files when ``out_dir`` is given.

    Quadratic presets share one graph, objective set and adversary set across
    runs (only adversary and weight randomness differ). Logistic presets draw
    a fresh data split, graph and adversary set per run.
    """
    runs = preset.runs if runs is None else runs
    results = []
    quad_world = quadratic_world(preset, seed) if preset.objective == "quadratic" else None
    if preset.objective == "logistic" and dataset is None:
        dataset = synthetic_dataset(seed)
    for i in range(runs):
        run_seed = derive_seed(seed, i)
        try:
            if quad_world is not None:
                res = _finish_run(i, build_config(preset, quad_world, run_seed), quad_world, {}, log_inboxes)
            elif preset.objective == "logistic":
                world = logistic_world(preset, run_seed, dataset)
                res = _logistic_run(preset, world, run_seed, i, log_inboxes)
            else:
                raise ConfigError(f"unknown objective kind {preset.objective!r}")
        except Exception as exc:
            raise RuntimeError(f"run {i} of preset {preset.name!r} failed: {exc}") from exc
        log.info("run %d done: final gap_x %.3g, checks %s", i, res.metrics[-1, 0], "ok" if res.passed else "FAILED")
        results.append(res)

    mean, std = aggregate([r.metrics for r in results]) if runs else (np.empty((0, len(METRIC_COLUMNS))),) * 2
    summary = summarize(preset, seed, results)
    if out_dir is not None:
        write_outputs(Path(out_dir), results, mean, std, summary)
    return ExperimentResult(preset, results, mean, std, summary)


def summarize(preset: ExperimentPreset, seed: int, results: Sequence[RunResult]) -> dict[str, Any]:
    per_run = []
    for r in results:
        consensus = check_consensus(r.trajectory, 0.05 * max_pairwise_distance(r.trajectory.x[0]))
        entry = {
            "run": r.index,
            "seed": r.config.seed,
            "final": dict(zip(METRIC_COLUMNS, map(float, r.metrics[-1]))) if len(r.metrics) else {},
            "s_star_min": r.certificate.s_star_min,
            "minimizer_inside": bool(r.certificate.minimizer_inside),
            "final_contained": bool(r.certificate.final_contained),
            "consensus_within_5pct": consensus.verdict,
            "checks": {c.name: c.passed for c in r.checks},
        }
        entry.update(r.extra)
        per_run.append(entry)
    states_beat_aux = sum(1 for r in results if len(r.metrics) and r.metrics[-1, 0] < r.metrics[-1, 1])
    return {
        "preset": asdict(preset),
        "seed": seed,
        "runs": per_run,
        "states_beat_auxiliary": states_beat_aux,
        "all_checks_passed": all(r.passed for r in results),
    }


def write_outputs(out: Path, results: Sequence[RunResult], mean: np.ndarray, std: np.ndarray, summary: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        write_metrics(out / f"metrics_run_{r.index}.csv", r.metrics)
        (out / f"certificate_run_{r.index}.json").write_text(json.dumps(r.certificate.to_dict(), indent=2))
    write_aggregate(out / "aggregate.csv", mean, std)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))


# ------------------------------------------------------------------ config files

def _num(value, name: str, kind=float):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field {name!r} must be a number, got {value!r}") from None


def _objectives(spec: Any, n: int, d: int) -> list[ObjectiveOracle]:
    if isinstance(spec, dict) and spec.get("kind", "quadratic") == "quadratic" and "items" not in spec:
        rng = np.random.default_rng(_num(spec.get("seed", 0), "objectives.seed", int))
        return [random_quadratic(d, rng) for _ in range(n)]
    items = spec["items"] if isinstance(spec, dict) else spec
    if not isinstance(items, list) or len(items) != n:
        raise ConfigError(f"field 'objectives' must list {n} entries")
    out = []
    for i, item in enumerate(items):
        try:
            out.append(QuadraticObjective(np.array(item["Q"], dtype=float), np.array(item["b"], dtype=float), float(item.get("constant", 0.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"objectives[{i}]: {exc}") from None
    return out


def config_from_dict(raw: dict, base_dir: Path | None = None) -> SimulationConfig:
    """Build a :class:`SimulationConfig` from parsed YAML/JSON.

    Required keys: ``graph``, ``d``, ``f``. ``graph`` is either
    ``{file: path}`` or ``{nodes, robustness, seed, degree}``. ``objectives``
    is ``{kind: quadratic, seed}`` for random quadratics or a list of
    ``{Q, b}``. ``adversaries`` is ``{members: [...]}`` or ``{count, seed}``.
    """
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    for key in ("graph", "d", "f"):
        if key not in raw:
            raise ConfigError(f"missing required field {key!r}")
    g = raw["graph"]
    certified = None
    if "file" in g:
        path = Path(g["file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        topo = Topology.load(path)
        certified = g.get("certified_robustness")
    else:
        for key in ("nodes", "robustness"):
            if key not in g:
                raise ConfigError(f"missing field 'graph.{key}'")
        certified = _num(g["robustness"], "graph.robustness", int)
        topo = generate_robust_graph(_num(g["nodes"], "graph.nodes", int), certified, seed=g.get("seed", 0), degree=g.get("degree"))
    d = _num(raw["d"], "d", int)
    f = _num(raw["f"], "f", int)
    oracles = _objectives(raw.get("objectives", {"kind": "quadratic", "seed": 0}), topo.n, d)
    adv_raw = raw.get("adversaries", {}) or {}
    if "members" in adv_raw:
        adv = AdversarySet(frozenset(int(m) for m in adv_raw["members"]), f)
    else:
        adv = select_f_local_adversaries(topo, f, _num(adv_raw.get("count", 0), "adversaries.count", int), seed=adv_raw.get("seed", 0))
    step = raw.get("step", {}) or {}
    strat = dict(raw.get("adversary", {}) or {})
    if "mixture" in strat:
        strat["mixture"] = tuple(strat["mixture"])
    try:
        spec = AdversarySpec(**strat)
    except TypeError as exc:
        raise ConfigError(f"field 'adversary': {exc}") from None
    omega = raw.get("omega")
    cfg = SimulationConfig(
        topology=topo,
        oracles=oracles,
        d=d,
        f=f,
        algorithm=raw.get("algorithm", "dist-minmax"),
        c1=_num(step.get("c1", 1.0), "step.c1"),
        c2=_num(step.get("c2", 1.0), "step.c2"),
        clip_bound=_num(raw.get("clip_bound", 1e5), "clip_bound"),
        omega=None if omega is None else _num(omega, "omega"),
        weight_policy=raw.get("weight_policy", "uniform"),
        horizon=_num(raw.get("horizon", 300), "horizon", int),
        seed=_num(raw.get("seed", 0), "seed", int),
        adversaries=adv,
        adversary=spec,
        certified_robustness=None if certified is None else int(certified),
    )
    cfg.validate()
    return cfg


def parse_config(path: str | Path) -> SimulationConfig:
    path = Path(path)
    text = path.read_text()
    raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    return config_from_dict(raw, path.parent)


def preset_config_dict(preset: ExperimentPreset, seed: int = 0) -> dict:
    """Config-file mapping carrying the parameters of a quadratic preset."""
    if preset.objective != "quadratic":
        raise ConfigError("only quadratic presets have a config-file form")
    return {
        "graph": {"nodes": preset.n, "robustness": preset.robustness, "seed": seed},
        "d": preset.d,
        "f": preset.f,
        "algorithm": preset.algorithm,
        "step": {"c1": preset.c1, "c2": preset.c2},
        "clip_bound": preset.clip_bound,
        "weight_policy": preset.weight_policy,
        "horizon": preset.horizon,
        "seed": seed,
        "objectives": {"kind": "quadratic", "seed": seed},
        "adversaries": {"count": preset.adversary_count, "seed": seed},
        "adversary": {"strategy": preset.strategy},
    }


def with_overrides(preset: ExperimentPreset, **kw) -> ExperimentPreset:
    return replace(preset, **kw)
