import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from byzopt.adversary import (
    AdversaryContext,
    AdversaryError,
    AdversarySpec,
    Inbox,
    attack_constant,
    attack_corner_y,
    attack_safe_region_x,
    craft_message,
    x_survives,
    y_survives,
)
from byzopt.filters import distance_keep_mask, minmax_y_keep_mask
from byzopt.graph import Topology
from byzopt.protocol import run_rounds

from test_protocol import small_config


def context(inbox, f, algorithm="dist-minmax", x_star=None, n=None):
    n = n or int(inbox.owners.max()) + 2
    d = inbox.X.shape[1]
    return AdversaryContext(
        k=0,
        topology=Topology.complete(n),
        f=f,
        algorithm=algorithm,
        X=np.zeros((n, d)),
        Y=np.zeros((n, d)),
        regular=tuple(range(n - 1)),
        x_star=np.zeros(d) if x_star is None else x_star,
    )


def random_inbox(rng, m, d, spread=3.0):
    X = rng.normal(0, spread, (m, d))
    Y = rng.normal(0, spread, (m, d))
    return Inbox(np.arange(m), X, Y)


# ---------------------------------------------------------------- constant

def test_constant_attack_repeats_configuration():
    spec = AdversarySpec("constant", constant_x=[0, 5], constant_y=[2, 2])
    for _ in range(3):
        x, y = attack_constant(spec, 2)
        assert x.tolist() == [0, 5] and y.tolist() == [2, 2]
    x, y = attack_constant(AdversarySpec("constant"), 3)
    assert x.tolist() == [0, 0, 0] and y.tolist() == [0, 0, 0]


def test_constant_dimension_validated():
    with pytest.raises(AdversaryError, match="dimension"):
        AdversarySpec("constant", constant_x=[0, 0, 0]).validate(2)
    with pytest.raises(AdversaryError):
        AdversarySpec("laser").validate(2)


# ---------------------------------------------------------------- safe region x

def test_no_filtering_reaches_max_magnitude():
    inbox = Inbox(np.array([0, 1]), np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[1.0, 1.0], [0.0, 0.0]]))
    spec = AdversarySpec(max_magnitude=50.0)
    x = attack_safe_region_x(context(inbox, 0), inbox, 9, spec, np.random.default_rng(0))
    y = inbox.Y[0]
    np.testing.assert_allclose(np.linalg.norm(x - y), 50.0)
    # pointing away from x* = 0
    assert (x - y) @ y > 0


def test_unit_circle_neighbours_cap_the_distance():
    angles = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    X = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    inbox = Inbox(np.arange(6), X, np.zeros((6, 2)) + [0.0, 0.0])
    ctx = context(inbox, 1, algorithm="dist-only", x_star=np.array([-1.0, 0.0]))
    x = attack_safe_region_x(ctx, inbox, 6, AdversarySpec(), np.random.default_rng(0))
    assert np.linalg.norm(x) <= 1.0 + 1e-12
    # brute force: any radius above 1 is cut
    for radius in (1.0 + 1e-9, 1.5, 10.0):
        trial = inbox.extended(6, np.array([radius, 0.0]), np.zeros(2))
        assert not x_survives(trial, 6, 1, "dist-only")


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3), st.sampled_from(["dist-minmax", "dist-only"]))
def test_safe_region_x_always_survives(seed, f, d, algorithm):
    rng = np.random.default_rng(seed)
    inbox = random_inbox(rng, int(rng.integers(1, 10)), d)
    # add up to f - 1 earlier adversarial entries as the engine does
    for j in range(int(rng.integers(0, f))):
        inbox = inbox.extended(100 + j, rng.normal(0, 8, d), rng.normal(0, 8, d))
    ctx = context(inbox, f, algorithm, x_star=rng.normal(0, 1, d), n=200)
    x = attack_safe_region_x(ctx, inbox, 150, AdversarySpec(), rng)
    trial = inbox.extended(150, x, inbox.Y[0])
    assert x_survives(trial, len(trial.owners) - 1, f, algorithm)


def test_safe_region_moves_away_from_minimizer():
    rng = np.random.default_rng(4)
    inbox = random_inbox(rng, 8, 2)
    x_star = np.array([10.0, 10.0])
    x = attack_safe_region_x(context(inbox, 1, "dist-only", x_star), inbox, 20, AdversarySpec(), rng)
    assert np.linalg.norm(x - x_star) >= np.linalg.norm(inbox.Y[0] - x_star)


# ---------------------------------------------------------------- corner y

def test_corner_y_unfiltered_uses_magnitude_box():
    own = np.array([0.5, -0.5])
    inbox = Inbox(np.array([0, 1]), np.zeros((2, 2)), np.array([own, [3.0, 3.0]]))
    spec = AdversarySpec(max_magnitude=10.0)
    seen = set()
    for seed in range(20):
        y = attack_corner_y(context(inbox, 0), inbox, 5, spec, np.random.default_rng(seed))
        for ell in range(2):
            candidates = {own[ell] + 0.999 * (10.0 - own[ell]), own[ell] + 0.999 * (-10.0 - own[ell])}
            assert y[ell] in candidates
            seen.add((ell, y[ell] > own[ell]))
    assert len(seen) == 4  # every corner side gets picked


def test_corner_y_degenerates_to_common_value():
    c = np.array([1.5, -2.0])
    inbox = Inbox(np.arange(5), np.zeros((5, 2)), np.tile(c, (5, 1)))
    y = attack_corner_y(context(inbox, 2), inbox, 9, AdversarySpec(), np.random.default_rng(0))
    np.testing.assert_array_equal(y, c)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 3), st.integers(1, 4))
def test_corner_y_always_survives(seed, f, d):
    rng = np.random.default_rng(seed)
    inbox = random_inbox(rng, int(rng.integers(1, 10)), d)
    # integer-valued y makes ties common
    inbox = Inbox(inbox.owners, inbox.X, np.round(inbox.Y))
    y = attack_corner_y(context(inbox, f, n=60), inbox, 50, AdversarySpec(), rng)
    trial = inbox.extended(50, np.zeros(d), y)
    assert y_survives(trial, len(trial.owners) - 1, f)
    lo = np.minimum(inbox.Y.min(axis=0), inbox.Y[0]) if f else -np.inf
    hi = np.maximum(inbox.Y.max(axis=0), inbox.Y[0]) if f else np.inf
    assert np.all(y >= lo) and np.all(y <= hi)


# ---------------------------------------------------------------- engine-level

def test_equivocation_two_receivers_differ():
    cfg = small_config(seed=5, horizon=2, count=1)
    traj = run_rounds(cfg, log_inboxes=True, warn=False)
    (adv,) = traj.adversaries
    sent = {}
    for agent, inbox in traj.inboxes[1].items():
        idx = np.flatnonzero(inbox.owners == adv)
        if len(idx):
            sent[agent] = inbox.X[idx[0]]
    values = list(sent.values())
    assert len(values) >= 2
    assert any(not np.array_equal(values[0], v) for v in values[1:])


def test_context_is_read_only():
    inbox = Inbox(np.array([0]), np.zeros((1, 2)), np.zeros((1, 2)))
    ctx = context(inbox, 1)
    with pytest.raises(ValueError):
        ctx.X[0, 0] = 1.0


def test_strategies_do_not_mutate_snapshot():
    cfg = small_config(seed=6, horizon=1, strategy="mixed")
    traj = run_rounds(cfg, log_inboxes=True, warn=False)
    assert traj.x.shape[0] == 2


def test_mixed_draws_from_mixture():
    rng = np.random.default_rng(0)
    inbox = random_inbox(rng, 5, 2)
    ctx = context(inbox, 1)
    spec = AdversarySpec("mixed", constant_x=[7.0, 7.0], constant_y=[7.0, 7.0], mixture=("constant",))
    x, y = craft_message(spec, ctx, inbox, 9, rng)
    assert x.tolist() == [7.0, 7.0]


def test_constant_inside_hull_still_reaches_consensus():
    cfg = small_config(seed=7, horizon=150, strategy="constant", weight_policy="random")
    cfg.adversary = AdversarySpec("constant", constant_x=[0.0, 0.0], constant_y=[0.0, 0.0])
    traj = run_rounds(cfg, warn=False)
    d0 = np.ptp(traj.y[0], axis=0)
    d_end = np.ptp(traj.y[-1], axis=0)
    assert np.all(d_end <= 1e-6 * np.maximum(d0, 1e-12))
