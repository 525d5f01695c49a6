import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from survival_gcrl import censored_likelihood as cl
from survival_gcrl import gridworld as gw
from survival_gcrl import grouped_time as gt
from survival_gcrl.hazard_net import TabularHazard


@st.composite
def datasets(draw, max_n=30, max_t=12):
    n = draw(st.integers(1, max_n))
    rows = []
    for _ in range(n):
        c = draw(st.integers(0, max_t))
        delta = draw(st.integers(0, 1)) if c > 0 else 0
        tau = draw(st.integers(0, c - 1)) if delta else -1
        rows.append(cl.SurvivalTuple(draw(st.integers(0, 5)), draw(st.integers(0, 5)), tau, c, delta))
    return cl.SurvivalDataset.from_tuples(rows)


def test_nll_examples():
    assert cl.nll([0.25], cl.SurvivalTuple(0, 0, 0, 1, 1)) == pytest.approx(-math.log(0.25))
    h = [0.1, 0.2, 0.3, 0.4]
    expect = -(math.log(0.4) + math.log(0.9) + math.log(0.8) + math.log(0.7))
    assert cl.nll(h, cl.SurvivalTuple(0, 0, 3, 4, 1)) == pytest.approx(expect, abs=1e-14)


def test_censored_nll_counts_observed_steps():
    # c = 2 observed transitions without the event: survival through steps 0 and 1
    assert cl.nll([0.5] * 3, cl.SurvivalTuple(0, 0, -1, 2, 0)) == pytest.approx(-2 * math.log(0.5))
    assert cl.nll([0.5], cl.SurvivalTuple(0, 0, -1, 0, 0)) == 0.0


def test_nll_rejects_short_curve():
    with pytest.raises(ValueError):
        cl.nll([0.5, 0.5], cl.SurvivalTuple(0, 0, 4, 5, 1))
    from survival_gcrl.survival_core import HazardCurve
    assert cl.nll(HazardCurve(np.array([0.5]), 0.5), cl.SurvivalTuple(0, 0, 2, 3, 1)) == pytest.approx(-3 * math.log(0.5))


def test_tuple_validation():
    with pytest.raises(ValueError):
        cl.SurvivalTuple(0, 0, 3, 2, 1)
    with pytest.raises(ValueError):
        cl.SurvivalTuple(0, 0, -1, -1, 0)
    with pytest.raises(ValueError):
        cl.SurvivalTuple(0, 0, 0, 1, 2)


@given(datasets())
def test_csv_and_binary_round_trip(ds):
    text = ds.to_csv()
    back = cl.SurvivalDataset.from_csv(text)
    assert back.to_csv() == text
    blob = ds.to_bytes()
    again = cl.SurvivalDataset.from_bytes(blob)
    assert again.to_bytes() == blob
    for name in cl.CSV_HEADER:
        np.testing.assert_array_equal(getattr(again, name), getattr(ds, name))


def test_serialization_rejects_garbage():
    with pytest.raises(ValueError):
        cl.SurvivalDataset.from_csv("a,b\n1,2\n")
    with pytest.raises(ValueError):
        cl.SurvivalDataset.from_bytes(b"NOTADATA" + bytes(8))
    blob = cl.SurvivalDataset.from_tuples([cl.SurvivalTuple(0, 1, 0, 1, 1)]).to_bytes()
    with pytest.raises(ValueError):
        cl.SurvivalDataset.from_bytes(blob[:-3])


def _curve(state, goal):
    return np.array([0.2, 0.3, 0.25, 0.1, 0.4, 0.3, 0.2, 0.1, 0.5, 0.3, 0.2, 0.2, 0.3])


def test_empirical_risk_single_and_duplicated():
    tup = cl.SurvivalTuple(0, 0, 2, 5, 1)
    one = cl.SurvivalDataset.from_tuples([tup])
    assert cl.empirical_risk(_curve, one) == pytest.approx(cl.nll(_curve(0, 0), tup))
    with pytest.raises(ValueError):
        cl.empirical_risk(_curve, cl.SurvivalDataset.from_tuples([]))


@given(datasets())
def test_empirical_risk_invariant_to_duplication(ds):
    twice = cl.SurvivalDataset.concat([ds, ds])
    assert cl.empirical_risk(_curve, twice) == pytest.approx(cl.empirical_risk(_curve, ds), rel=1e-12)


@given(datasets(), st.sampled_from(["pch", "pcs"]))
def test_binned_empirical_risk_matches_counts(ds, kind):
    spec = gt.geometric_edges(3, 8)
    model = TabularHazard(6, 6, spec, kind)
    model.params["logits"][:] = np.random.default_rng(0).normal(size=model.params["logits"].shape)
    from survival_gcrl.hazard_net import nll_grad
    loss, _ = nll_grad(model, ds)
    assert cl.empirical_risk(model, ds, spec, kind) == pytest.approx(loss, rel=1e-10)


def test_risk_at_optimum_approaches_geometric_entropy(rng):
    h = 0.3
    ds = cl.simulate_geometric(h, 100_000, rng)
    assert ds.delta.all()
    h_hat = cl.fit_constant_hazard(ds)
    full_risk = -(math.log(h_hat) + ds.tau.mean() * math.log1p(-h_hat))
    assert full_risk == pytest.approx(cl.geometric_entropy(h), rel=5e-3)
    sub = ds[np.arange(5000)]
    risk = cl.empirical_risk(lambda s, g: np.full(200, h_hat), sub)
    assert risk == pytest.approx(-(math.log(h_hat) + sub.tau.mean() * math.log1p(-h_hat)), rel=1e-10)


def test_constant_hazard_mle_and_censoring(rng):
    h = 0.3
    ds = cl.simulate_geometric(h, 100_000, rng, censor_frac=0.3)
    assert abs((1 - ds.delta.mean()) - 0.3) < 0.01
    fit = cl.fit_constant_hazard(ds)
    dropped = cl.fit_constant_hazard(ds[np.flatnonzero(ds.delta == 1)])
    assert abs(fit - h) < 0.005
    assert dropped > h + 0.05  # ignoring censoring biases the hazard upward
    assert abs(dropped - h) > abs(fit - h)


# relabeling


def test_relabel_corridor_future_goal():
    traj = cl.Trajectory([0, 1, 2], [3, 3])
    cfg = cl.RelabelConfig(0.0, 1.0, 0.0)

    class Fixed:
        # stand-in rng: always pick the source, then the last future index
        def choice(self, n, size, p):
            return np.array([int(np.argmax(p))])

        def integers(self, lo, hi=None):
            return hi - 1

    tups = list(cl.relabel(traj, cfg, Fixed(), anchors=[0]))
    assert tups == [cl.SurvivalTuple(0, 2, 1, 2, 1)]


def test_relabel_missing_goal_is_censored(rng):
    traj = cl.Trajectory(np.arange(11), np.zeros(10))
    cfg = cl.RelabelConfig(0.0, 0.0, 1.0)
    tups = list(cl.relabel(traj, cfg, rng, goal_pool=np.array([99]), anchors=[0]))
    assert tups == [cl.SurvivalTuple(0, 99, -1, 10, 0)]
    assert cl.label_goal(np.arange(11), 0, 99) == (-1, 10, 0)
    assert cl.label_goal(np.arange(11), 0, 99, cap=4) == (-1, 4, 0)


def test_current_goal_needs_reentry():
    ach = np.array([5, 6, 5, 7])
    assert cl.label_goal(ach, 0, 5) == (1, 3, 1)
    assert cl.label_goal(np.array([5, 5]), 0, 5) == (0, 1, 1)


def test_single_state_trajectory_yields_nothing(rng):
    assert list(cl.relabel(cl.Trajectory([3], []), cl.RelabelConfig(), rng)) == []


def test_goal_source_frequencies(rng):
    traj = cl.Trajectory(np.arange(100_001) % 50, np.zeros(100_000))
    sources = []
    for _ in cl.relabel(traj, cl.RelabelConfig(), rng, sources=sources):
        pass
    names, counts = np.unique(sources, return_counts=True)
    freq = dict(zip(names, counts / len(sources)))
    assert len(sources) == 100_000
    for name, p in zip(cl.SOURCES, (0.08, 0.6, 0.32)):
        assert abs(freq[name] - p) < 0.01


def test_relabel_config_validation():
    with pytest.raises(ValueError):
        cl.RelabelConfig(0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        cl.RelabelConfig(-0.1, 0.6, 0.5)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        cl.Trajectory([0, 1, 2], [0])


def test_relabel_dataset_size_and_labels(rng):
    trajs = [cl.Trajectory(rng.integers(0, 6, 30), np.zeros(29)) for _ in range(5)]
    ds = cl.relabel_dataset(trajs, 500, cl.RelabelConfig(), rng)
    assert len(ds) == 500
    # every label agrees with a forward scan from some anchor with that state
    for tup in list(ds)[:50]:
        assert tup.delta in (0, 1) and tup.c <= 29


def test_rand_goal_hazards_match_oracle():
    # goal-independent behaviour: tuples with random goals sample the hitting law
    mdp = gw.load_maze("open5", slip=0.1)
    pol = gw.uniform_policy(mdp)
    rng = np.random.default_rng(3)
    trajs = gw.collect_trajectories(mdp, pol, 200, 400, rng)
    ds = cl.relabel_dataset(trajs, 100_000, cl.RelabelConfig(0.0, 0.0, 1.0), rng,
                            goal_pool=np.arange(mdp.n_states))
    S = np.stack([gw.HittingOracle(mdp, pol, g).survival_table(3) for g in range(mdp.n_states)], axis=1)
    for t in range(3):
        at_risk = np.where(ds.delta == 1, ds.tau >= t, ds.c > t)
        hit = (ds.delta == 1) & (ds.tau == t)
        prev = np.ones_like(S[..., 0]) if t == 0 else S[..., t - 1]
        h_oracle = np.where(prev > 0, 1 - S[..., t] / np.where(prev > 0, prev, 1), 0.0)
        expected = h_oracle[ds.state[at_risk], ds.goal[at_risk]]
        var = (expected * (1 - expected)).sum()
        assert abs(hit[at_risk].sum() - expected.sum()) < 3 * math.sqrt(var)
