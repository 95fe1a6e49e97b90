import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import assert_grad_close, numeric_grad
from polemb.agents import FixedDirectionPolicy, Population
from polemb.embed import (EmbeddingModel, TrainConfig, embed_episode, embed_episodes, hybrid_step,
                          imitation_loss, imitation_term, make_encoder, make_policy, mean_triplet_loss,
                          select_lambda, train_embedding, triplet_grads, triplet_term, triplet_value)
from polemb.env import AgentEpisode, arena_spec
from polemb.errors import ConfigError, EmptyInputError, SamplingError
from polemb.graph import SplitSpec, build_graph, phase_episodes
from polemb.nn_core import mlp_forward

OBS, ACT, D = 2, 3, 4


def _ep(agent, eid, T, seed):
    rng = np.random.default_rng(seed)
    return AgentEpisode(agent, eid, rng.normal(size=(T, OBS)), rng.integers(ACT, size=T))


def _toy(seed=0):
    enc = make_encoder(OBS, ACT, D, (3,), seed)
    pol = make_policy(OBS, ACT, D, (3,), seed + 1)
    return enc, pol


# --- encoder -------------------------------------------------------------------


def test_identical_pairs_embed_to_single_pair_output():
    enc, _ = _toy()
    ep = AgentEpisode(0, "a", np.tile([[0.3, -0.2]], (5, 1)), np.full(5, 2))
    x = np.array([[0.3, -0.2, 0.0, 0.0, 1.0]])
    np.testing.assert_array_almost_equal(embed_episode(enc, ep), mlp_forward(enc.pair_net, x)[0][0], decimal=14)


def test_two_pair_average():
    enc, _ = _toy()
    ep = _ep(0, "a", 2, 1)
    outs = []
    for o, a in ep.pairs:
        x = np.concatenate([o, np.eye(ACT)[a]])
        outs.append(mlp_forward(enc.pair_net, x)[0])
    np.testing.assert_allclose(embed_episode(enc, ep), (outs[0] + outs[1]) / 2, rtol=1e-13)


@given(st.integers(0, 1000))
def test_pair_permutation_invariance(seed):
    enc, _ = _toy()
    ep = _ep(0, "a", 7, seed)
    perm = np.random.default_rng(seed).permutation(7)
    shuffled = AgentEpisode(0, "b", ep.observations[perm], ep.actions[perm])
    np.testing.assert_allclose(embed_episode(enc, ep), embed_episode(enc, shuffled), rtol=1e-12, atol=1e-15)


def test_batched_embedding_matches_single():
    enc, _ = _toy()
    eps = [_ep(0, str(k), 3 + k, k) for k in range(4)]
    np.testing.assert_allclose(embed_episodes(enc, eps), np.stack([embed_episode(enc, e) for e in eps]), rtol=1e-13)


def test_empty_episode():
    enc, _ = _toy()
    with pytest.raises(EmptyInputError):
        embed_episode(enc, AgentEpisode(0, "e", np.zeros((0, OBS)), np.zeros(0, dtype=int)))


# --- imitation term ------------------------------------------------------------


def test_uniform_decoder_loss():
    obs_dim, n_act = 10, 9
    enc = make_encoder(obs_dim, n_act, 16, (8,), 0)
    pol = make_policy(obs_dim, n_act, 16, (8,), 1)
    pol.decoder_net.weights[-1][:] = 0.0
    pol.decoder_net.biases[-1][:] = 0.0
    rng = np.random.default_rng(0)
    e1 = AgentEpisode(0, "x", rng.normal(size=(50, obs_dim)), rng.integers(n_act, size=50))
    e2 = AgentEpisode(0, "y", rng.normal(size=(50, obs_dim)), rng.integers(n_act, size=50))
    assert imitation_loss(enc, pol, e1, e2) == pytest.approx(50 * math.log(9), rel=1e-14)
    assert 50 * math.log(9) == pytest.approx(109.86, abs=5e-3)


def test_imitation_gradients_fd():
    enc, pol = _toy(3)
    e1, e2 = _ep(0, "a", 5, 1), _ep(0, "b", 4, 2)
    res = imitation_term(enc, pol, e1, e2)
    f = lambda: imitation_loss(enc, pol, e1, e2)
    assert enc.pair_net.n_params <= 50 and pol.decoder_net.n_params <= 50
    assert_grad_close(res.encoder_grad, numeric_grad(f, enc.pair_net.params))
    assert_grad_close(res.decoder_grad, numeric_grad(f, pol.decoder_net.params))
    assert res.loss == pytest.approx(f(), rel=1e-14)


def test_zero_embedding_is_unconditioned_cloning():
    enc, pol = _toy(5)
    enc.pair_net.weights[-1][:] = 0.0
    enc.pair_net.biases[-1][:] = 0.0
    e1, e2 = _ep(0, "a", 6, 1), _ep(0, "b", 6, 2)
    # oracle: obs-only network built from the decoder's observation rows
    W0, b0 = pol.decoder_net.weights[0][:OBS], pol.decoder_net.biases[0]
    h = np.tanh(e1.observations @ W0 + b0)
    logits = h @ pol.decoder_net.weights[1] + pol.decoder_net.biases[1]
    lse = np.log(np.exp(logits).sum(axis=1))
    expected = float((lse - logits[np.arange(6), e1.actions]).sum())
    assert imitation_loss(enc, pol, e1, e2) == pytest.approx(expected, rel=1e-12)


def test_imitation_contract():
    enc, pol = _toy()
    e = _ep(0, "a", 3, 0)
    with pytest.raises(SamplingError):
        imitation_term(enc, pol, e, e)
    with pytest.raises(SamplingError):
        imitation_term(enc, pol, e, _ep(1, "b", 3, 0))


# --- triplet term --------------------------------------------------------------

EXACT_NEAR = (1 + math.exp(10)) ** -2  # p = r, |r - n| = 10
EXACT_FAR = (1 + math.exp(-10)) ** -2  # n = r, |r - p| = 10


def test_triplet_closed_forms():
    r = np.zeros(4)
    assert triplet_value(np.array([1.0, 0, 0, 0]), np.array([0, -1.0, 0, 0]), r) == 0.25
    near = triplet_value(r, np.array([6.0, 8.0, 0, 0]), r)
    far = triplet_value(np.array([0, 0, 6.0, 8.0]), r, r)
    assert abs(near - EXACT_NEAR) / EXACT_NEAR <= 1e-12
    assert abs(far - EXACT_FAR) / EXACT_FAR <= 1e-12
    assert near == pytest.approx(2.0609665e-9, rel=1e-7)
    assert far == pytest.approx(0.99991, abs=1e-5)


@given(st.lists(st.floats(-5, 5), min_size=12, max_size=12))
def test_triplet_range(vals):
    p, n, r = np.array(vals).reshape(3, 4)
    v = triplet_value(p, n, r)
    assert 0.0 < v < 1.0
    if abs(np.linalg.norm(r - n) - np.linalg.norm(r - p)) < 1e-9:
        assert v == pytest.approx(0.25, abs=1e-9)


def test_triplet_grads_fd_embeddings():
    rng = np.random.default_rng(0)
    p, n, r = rng.normal(size=(3, D))
    _, gp, gn, gr = triplet_grads(p, n, r)
    for g, x in ((gp, p), (gn, n), (gr, r)):
        assert_grad_close(g, numeric_grad(lambda: triplet_value(p, n, r), x))


def test_triplet_term_fd_encoder():
    enc, _ = _toy(7)
    ep, er, en = _ep(0, "p", 4, 1), _ep(0, "r", 5, 2), _ep(1, "n", 3, 3)
    res = triplet_term(enc, ep, en, er)
    f = lambda: triplet_value(embed_episode(enc, ep), embed_episode(enc, en), embed_episode(enc, er))
    assert_grad_close(res.encoder_grad, numeric_grad(f, enc.pair_net.params))


def test_triplet_contract():
    enc, _ = _toy()
    ep, er = _ep(0, "p", 4, 1), _ep(0, "r", 4, 2)
    with pytest.raises(SamplingError):
        triplet_term(enc, ep, _ep(0, "n", 4, 3), er)
    with pytest.raises(SamplingError):
        triplet_term(enc, ep, _ep(1, "n", 4, 3), ep)


# --- hybrid step ---------------------------------------------------------------


def _toy_model(seed=0, lr=1e-3):
    return EmbeddingModel.create(OBS, ACT, TrainConfig(d=D, seed=seed, encoder_hidden=(3,), decoder_hidden=(3,),
                                                       learning_rate=lr))


def _hybrid_fixture():
    ep, er = _ep(0, "p", 5, 1), _ep(0, "r", 4, 2)
    negs = [(1, _ep(1, "n1", 3, 3)), (2, _ep(2, "n2", 4, 4)), (3, _ep(3, "n3", 6, 5))]
    return ep, er, negs


def test_hybrid_recomposition_batched():
    m = _toy_model()
    ep, er, negs = _hybrid_fixture()
    lam = 0.37
    im = imitation_loss(m.encoder, m.policy, ep, er)
    ids = [triplet_value(*(embed_episode(m.encoder, e) for e in (ep, en, er))) for _, en in negs]
    res = hybrid_step(m, ep, er, negs, lam, "batched")
    assert res.updates == 1
    assert abs(res.losses[0] - (im + lam * sum(ids))) <= 1e-12 * abs(res.losses[0])


def test_hybrid_gradient_fd():
    from polemb.embed import _hybrid_losses_and_grads

    m = _toy_model(2)
    ep, er, negs = _hybrid_fixture()
    lam = 0.5
    es = [e for _, e in negs]
    _, _, _, g_enc, g_dec = _hybrid_losses_and_grads(m, ep, er, es, 1.0, lam)

    def f():
        z = [embed_episode(m.encoder, e) for e in (ep, er)]
        return imitation_loss(m.encoder, m.policy, ep, er) + lam * sum(
            triplet_value(z[0], embed_episode(m.encoder, en), z[1]) for en in es)

    assert_grad_close(g_enc, numeric_grad(f, m.encoder.pair_net.params))
    assert_grad_close(g_dec, numeric_grad(f, m.policy.decoder_net.params))


def test_per_negative_update_count():
    m = _toy_model()
    ep, er, negs = _hybrid_fixture()
    before = m.enc_opt.t
    res = hybrid_step(m, ep, er, negs, 0.1, "per_negative")
    assert res.updates == 3 and m.enc_opt.t - before == 3 and m.dec_opt.t == 3


def test_lambda_zero_step_is_imitation_step():
    ep, er, negs = _hybrid_fixture()
    a, b = _toy_model(4), _toy_model(4)
    hybrid_step(a, ep, er, negs, 0.0, "per_negative")
    for _ in negs:
        r = imitation_term(b.encoder, b.policy, ep, er)
        from polemb.nn_core import adam_step

        adam_step(b.encoder.pair_net, r.encoder_grad, b.enc_opt)
        adam_step(b.policy.decoder_net, r.decoder_grad, b.dec_opt)
    assert np.array_equal(a.encoder.pair_net.params, b.encoder.pair_net.params)
    assert np.array_equal(a.policy.decoder_net.params, b.policy.decoder_net.params)


def test_hybrid_errors():
    m = _toy_model()
    ep, er, negs = _hybrid_fixture()
    with pytest.raises(ConfigError):
        hybrid_step(m, ep, er, [], 0.1)
    with pytest.raises(ConfigError):
        hybrid_step(m, ep, er, negs, -0.1)
    with pytest.raises(ConfigError):
        TrainConfig(lam=-1)
    with pytest.raises(SamplingError):
        hybrid_step(m, ep, er, [(0, _ep(0, "x", 3, 9))], 0.1)


# --- training ------------------------------------------------------------------


@pytest.fixture(scope="module")
def two_agent():
    pop = Population("arena", {0: FixedDirectionPolicy(0, "push"), 1: FixedDirectionPolicy(1, "flee")})
    g = build_graph(pop, arena_spec(), 10, "clique", 0)
    return g, SplitSpec("weak", 0, {"train": [(0, 1)], "valid": [(0, 1)], "test": []})


def test_training_reduces_imitation_loss(two_agent):
    g, s = two_agent
    res = train_embedding(g, s, TrainConfig(epochs=30, seed=0))
    first, last = res.curves[0]["train_imitation"], res.curves[-1]["train_imitation"]
    assert last <= 0.7 * first
    assert all(np.isfinite(res.model.encoder.pair_net.params))


def test_training_deterministic(two_agent):
    g, s = two_agent
    cfg = TrainConfig(epochs=3, seed=5)
    a, b = train_embedding(g, s, cfg), train_embedding(g, s, cfg)
    assert np.array_equal(a.model.encoder.pair_net.params, b.model.encoder.pair_net.params)
    assert repr(a.curves) == repr(b.curves)


def test_reduction_identities(arena_fixture):
    _, g, s = arena_fixture
    base = TrainConfig(epochs=5, seed=1, d=8, encoder_hidden=(16,), decoder_hidden=(16,))
    im = train_embedding(g, s, replace(base, variant="im"))
    hyb0 = train_embedding(g, s, replace(base, variant="hyb", lam=0.0))
    assert np.array_equal(im.model.encoder.pair_net.params, hyb0.model.encoder.pair_net.params)
    assert np.array_equal(im.model.policy.decoder_net.params, hyb0.model.policy.decoder_net.params)
    idv = train_embedding(g, s, replace(base, variant="id"))
    no_im = train_embedding(g, s, replace(base, variant="hyb", lam=1.0, imitation=False))
    assert np.array_equal(idv.model.encoder.pair_net.params, no_im.model.encoder.pair_net.params)


def test_no_leakage_during_training(arena_fixture):
    _, g, s = arena_fixture
    res = train_embedding(g, s, TrainConfig(epochs=3, seed=0, d=4, encoder_hidden=(8,), decoder_hidden=(8,)))
    train_ids = {ep.episode_id for e in s.edges["train"] for ep in g.edges[e]}
    assert res.touched and res.touched <= train_ids


def test_triplet_below_indifference(arena_fixture):
    _, g, s = arena_fixture
    res = train_embedding(g, s, TrainConfig(epochs=20, seed=0, lam=0.1))
    held = {a: v for a, v in phase_episodes(g, s, "valid").items() if len(v) >= 2}
    assert mean_triplet_loss(res.model.encoder, held, 500, 0) < 0.25


def test_select_lambda(two_agent):
    g, s = two_agent
    cfg = TrainConfig(epochs=1, seed=0, d=4, encoder_hidden=(8,), decoder_hidden=(8,))
    best, table, results = select_lambda(g, s, cfg, (0.01, 0.05, 0.1, 0.5))
    assert len(results) == 4 and [r[0] for r in table] == [0.01, 0.05, 0.1, 0.5]
    assert best == min(table, key=lambda r: (r[1], r[0]))[0]
    single, table1, _ = select_lambda(g, s, cfg, (0.3,))
    assert single == 0.3 and len(table1) == 1
    with pytest.raises(ConfigError):
        select_lambda(g, s, cfg, ())


def test_model_save_load(tmp_path, two_agent):
    m = _toy_model(3)
    m.save(tmp_path / "m")
    n = EmbeddingModel.load(tmp_path / "m")
    assert np.array_equal(m.encoder.pair_net.params, n.encoder.pair_net.params)
    assert np.array_equal(m.policy.decoder_net.params, n.policy.decoder_net.params)
