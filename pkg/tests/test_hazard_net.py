import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from gradcheck import probe, random_dataset
from survival_gcrl import censored_likelihood as cl
from survival_gcrl import checkpoint
from survival_gcrl import gridworld as gw
from survival_gcrl import grouped_time as gt
from survival_gcrl import hazard_net as hn
from survival_gcrl.trainer import TrainConfig, fit_hazard

FEATS = np.random.default_rng(7).normal(size=(6, 3))


def spec_for(kind, K=4, H=12):
    return gt.uniform_edges(H) if kind == "finite" else gt.geometric_edges(K, H)


def zero_net(kind="pcs", **kw):
    net = hn.LowRankHazardNet(FEATS, spec_for(kind), kind, **kw)
    for v in net.params.values():
        v[...] = 0.0
    return net


def test_gelu_matches_erf_form():
    from scipy.special import erf
    x = np.linspace(-4, 4, 101)
    np.testing.assert_allclose(hn.gelu(x), 0.5 * x * (1 + erf(x / np.sqrt(2))), atol=1e-15)
    eps = 1e-6
    np.testing.assert_allclose(hn.gelu_grad(x), (hn.gelu(x + eps) - hn.gelu(x - eps)) / (2 * eps), atol=1e-8)


def test_zero_parameters_give_half_hazards():
    net = zero_net()
    q0, bins, tail = net.hazards([0, 1], [2, 3])
    assert np.all(q0 == 0.5) and np.all(bins == 0.5) and np.all(tail == 0.5)
    assert net.logits([0], [1]).shape == (1, net.spec.K + 2)


def test_one_hot_selector_collapses_contraction():
    net = hn.LowRankHazardNet(FEATS, spec_for("pcs"), "pcs", hidden=(8,), n_basis=4, rank=3, seed=2)
    p = net.params
    j = 2
    p["select.W"][:] = 0.0
    p["select.b"][:] = 0.0
    p["select.b"][j] = 1.0
    p["psi"][:] = 0.0
    p["psi"][j, :, 0] = 1.0
    p["time_bias"][:] = 0.0
    lg = net.logits([0, 3], [1, 5])
    net.logits([0, 3], [1, 5])
    z = net._cache[0][-1]
    c0 = z @ p["coeff.W"][:, 0] + p["coeff.b"][0]
    np.testing.assert_allclose(lg[:, 1:], np.repeat(c0[:, None], net.spec.K + 1, axis=1), atol=1e-15)


def test_forward_is_deterministic():
    a = hn.LowRankHazardNet(FEATS, spec_for("pch"), "pch", seed=5)
    b = hn.LowRankHazardNet(FEATS, spec_for("pch"), "pch", seed=5)
    x = np.arange(6)
    assert np.array_equal(a.logits(x, x[::-1]), b.logits(x, x[::-1]))
    assert np.array_equal(a.logits(x, x[::-1]), a.logits(x, x[::-1]))


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.sampled_from([1, 4]))
def test_basis_permutation_is_bit_identical(seed, n_basis):
    net = hn.LowRankHazardNet(FEATS, spec_for("pcs"), "pcs", hidden=(16,), n_basis=n_basis, rank=3, seed=seed)
    x = np.arange(6)
    before = net.logits(x, x[::-1]).copy()
    perm = np.random.default_rng(seed).permutation(n_basis)
    p = net.params
    p["psi"] = p["psi"][perm].copy()
    p["select.W"] = p["select.W"][:, perm].copy()
    p["select.b"] = p["select.b"][perm].copy()
    assert np.array_equal(before, net.logits(x, x[::-1]))


def test_input_validation():
    net = hn.LowRankHazardNet(FEATS, spec_for("pcs"), "pcs")
    with pytest.raises(ValueError):
        net.logits([0], [6])
    with pytest.raises(ValueError):
        net.logits_from_inputs(np.zeros((2, 5)))
    tab = hn.TabularHazard(3, 3, spec_for("pcs"))
    with pytest.raises(ValueError):
        tab.logits([3], [0])
    with pytest.raises(ValueError):
        hn.TabularHazard(3, 3, spec_for("pcs"), kind="cox")


@pytest.mark.parametrize("kind", gt.KINDS)
@pytest.mark.parametrize("family", ["tabular", "lowrank"])
def test_gradients_match_finite_differences(kind, family):
    rng = np.random.default_rng(hash((kind, family)) % 2**32)
    spec = spec_for(kind)
    if family == "tabular":
        model = hn.TabularHazard(6, 6, spec, kind)
    else:
        model = hn.LowRankHazardNet(FEATS, spec, kind, hidden=(16, 8), n_basis=4, rank=2, seed=1)
    for v in model.params.values():
        v[...] += rng.normal(scale=0.3, size=v.shape)
    batch = hn.CountBatch.from_dataset(random_dataset(rng, 40, spec.H, 6), spec, kind)
    assert probe(model, batch, rng, 60) < 1e-5


@settings(max_examples=12)
@given(st.integers(1, 3), st.sampled_from([8, 24, 64]), st.sampled_from([1, 4]),
       st.sampled_from([2, 8]), st.sampled_from(gt.KINDS), st.integers(0, 2**31))
def test_gradients_over_architectures(depth, width, n_basis, rank, kind, seed):
    rng = np.random.default_rng(seed)
    spec = spec_for(kind)
    model = hn.LowRankHazardNet(FEATS, spec, kind, hidden=(width,) * depth, n_basis=n_basis,
                                rank=rank, seed=seed)
    batch = hn.CountBatch.from_dataset(random_dataset(rng, 20, spec.H, 6), spec, kind)
    assert probe(model, batch, rng, 10) < 1e-5


def test_event_gradient_sign():
    spec = gt.BinSpec((0, 2, 4, 8, 16))
    model = hn.TabularHazard(1, 1, spec, "pch")
    # tau = 5 lands on the first step of bin 2 (bins see tau - 1), so no
    # within-bin survival terms share that logit
    ds = cl.SurvivalDataset([0], [0], [5], [10], [1])
    _, g = hn.nll_grad(model, ds)
    k, m = gt.locate(spec, 5 - 1)
    assert m == 0
    lg = model.params["logits"][0, 0, 1 + k]
    assert g["logits"][0, 0, 1 + k] == pytest.approx(expit(lg) - 1.0)
    assert g["logits"][0, 0, 1 + k] < 0


def test_merged_and_raw_batches_agree(rng):
    spec = spec_for("pcs")
    ds = random_dataset(rng, 200, spec.H, 3)
    model = hn.TabularHazard(3, 3, spec, "pcs")
    model.params["logits"][:] = rng.normal(size=model.params["logits"].shape)
    a, ga = hn.nll_grad(model, hn.CountBatch.from_dataset(ds, spec, "pcs"))
    b, gb = hn.nll_grad(model, hn.CountBatch.from_dataset(ds, spec, "pcs", merge=False))
    assert a == pytest.approx(b, rel=1e-12)
    np.testing.assert_allclose(ga["logits"], gb["logits"], atol=1e-14)


def test_logit_count_mismatch_is_rejected(rng):
    ds = random_dataset(rng, 10, 12, 3)
    model = hn.TabularHazard(3, 3, gt.geometric_edges(3, 12), "pch")
    batch = hn.CountBatch.from_dataset(ds, gt.geometric_edges(4, 12), "pch")
    with pytest.raises(ValueError):
        hn.nll_grad(model, batch)


def test_closed_form_matches_gradient_fixed_point(rng):
    h = 0.3
    spec = gt.BinSpec((0, 400))
    ds = cl.simulate_geometric(h, 2000, rng, censor_frac=0.3)
    model = hn.ConstantHazard(spec, "pch")
    fit_hazard(model, ds, cfg=TrainConfig(batch_size=0, total_steps=3000, learning_rate=0.01, eval_every=500))
    assert expit(model.params["logit"][0]) == pytest.approx(cl.fit_constant_hazard(ds), abs=1e-6)


def _oracle_counts(mdp, pol, s, g, spec, kind, t_max):
    """Expected counts of one (s, g) pair under the exact hitting law."""
    S = gw.HittingOracle(mdp, pol, g).exact_survival(s, t_max)
    pmf = -np.diff(np.concatenate([[1.0], S]))
    tau = np.arange(t_max)
    E1, X1 = gt.tuple_counts(spec, kind, tau, np.full(t_max, t_max), np.ones(t_max, dtype=int))
    E0, X0 = gt.tuple_counts(spec, kind, [-1], [t_max], [0])
    E = pmf @ E1 + S[-1] * E0[0]
    X = pmf @ X1 + S[-1] * X0[0]
    return E, X, S


@pytest.mark.parametrize("kind", ["pcs", "pch"])
def test_tabular_reproduces_oracle_hazards(kind):
    mdp = gw.load_maze("maze4", slip=0.2)
    pol = gw.uniform_policy(mdp)
    spec = gt.geometric_edges(5, 24)
    s, g = 0, mdp.n_states - 1
    E, X, S = _oracle_counts(mdp, pol, s, g, spec, kind, spec.H + 1)
    model = hn.TabularHazard(1, 1, spec, kind)
    batch = hn.CountBatch(np.array([0]), np.array([0]), E[None], X[None], 1)
    from survival_gcrl.trainer import OptState, adam_step
    opt = OptState(lr=0.05)
    for _ in range(4000):
        _, grads = hn.nll_grad(model, batch)
        adam_step(model.params, grads, opt)
    q0, bins, _ = model.hazards([0], [0])
    # oracle quantities on the same shifted grid
    assert q0[0] == pytest.approx(1 - S[0], abs=1e-3)
    edges = np.array(spec.edges)
    S_edge = S[edges]  # S(b_k) with S(0) = 1 - q0
    if kind == "pcs":
        expect = 1 - S_edge[1:] / S_edge[:-1]
        np.testing.assert_allclose(bins[0], expect, atol=1e-3)
    else:
        # PCH fits the average per-step hazard inside each bin
        assert np.all((bins[0] > 0) & (bins[0] < 1))
        ratio = (1 - bins[0]) ** spec.lengths
        np.testing.assert_allclose(ratio, S_edge[1:] / S_edge[:-1], atol=5e-3)


def test_value_of_extremes():
    spec = spec_for("pcs")
    model = hn.TabularHazard(2, 2, spec, "pcs")
    model.params["logits"][0, 1, 0] = 50.0
    assert hn.value_of(model, 0, 1, 0.9) == pytest.approx(0.0, abs=1e-12)
    model.params["logits"][1, 0] = -60.0
    assert hn.value_of(model, 1, 0, 0.9) == pytest.approx(-10.0, abs=1e-12)
    pch = hn.TabularHazard(1, 1, spec, "pch")
    pch.params["logits"][:] = -60.0
    assert hn.value_of(pch, 0, 0, 0.9) == pytest.approx(-10.0, abs=1e-12)


def test_tabular_value_from_oracle_data():
    mdp = gw.load_maze("maze4", slip=0.1)
    pol = gw.uniform_policy(mdp)
    rng = np.random.default_rng(11)
    s, g, n = 0, mdp.n_states - 1, 100_000
    hit = gw.simulate_hits(mdp, pol, np.full(n, s), g, 400, rng)
    ds = cl.SurvivalDataset(np.zeros(n), np.zeros(n), hit, np.full(n, 400), (hit >= 0).astype(int))
    model = hn.TabularHazard(1, 1, gt.geometric_edges(16, 128), "pcs")
    model.fit_closed_form(ds)
    v_true = gw.HittingOracle(mdp, pol, g).exact_value(s, 0.9)
    assert abs(hn.value_of(model, 0, 0, 0.9) - v_true) < 0.05 * abs(v_true)


@pytest.mark.parametrize("family", ["tabular", "lowrank", "constant"])
def test_checkpoint_round_trip_bit_exact(family):
    spec = spec_for("pch")
    model = {"tabular": lambda: hn.TabularHazard(4, 5, spec, "pch"),
             "lowrank": lambda: hn.LowRankHazardNet(FEATS, spec, "pch", hidden=(8, 8), seed=3),
             "constant": lambda: hn.ConstantHazard(spec, "pch")}[family]()
    rng = np.random.default_rng(0)
    for v in model.params.values():
        v[...] = rng.normal(size=v.shape)
    blob = model.to_bytes()
    back = hn.from_bytes(blob)
    assert type(back) is type(model) and back.kind == model.kind and back.spec == model.spec
    for k in model.params:
        assert back.params[k].tobytes() == model.params[k].tobytes()
    assert back.to_bytes() == blob


def test_checkpoint_rejects_corruption():
    blob = hn.TabularHazard(2, 2, spec_for("pcs")).to_bytes()
    with pytest.raises(ValueError):
        hn.from_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(ValueError):
        hn.from_bytes(blob + b"\0")
    arrays, meta = checkpoint.loads(blob)
    arrays["logits"] = arrays["logits"][:1]
    with pytest.raises(ValueError):
        hn.from_bytes(checkpoint.dumps(arrays, meta))
    meta["model"] = "mystery"
    with pytest.raises(ValueError):
        hn.from_bytes(checkpoint.dumps(arrays, meta))


def test_checkpoint_file_helpers(tmp_path):
    path = tmp_path / "x.ckpt"
    checkpoint.save(path, {"a": np.arange(6.0).reshape(2, 3)}, {"note": "hi"})
    arrays, meta = checkpoint.load(path)
    assert meta == {"note": "hi"} and arrays["a"].shape == (2, 3)
