import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import ortho_group

from polemb.embed import make_encoder
from polemb.errors import ConfigError, DegenerateError
from polemb.evaluation import (OutcomeDataset, ablate_embedding, build_outcome_dataset, iicr, jacobi_eigh,
                               pca_project, train_outcome_classifier, write_pca_csv)


def brute_iicr(sets):
    """Direct double loops over agents and embedding pairs."""
    agents = sorted(sets)
    intra = 0.0
    for a in agents:
        s, c = 0.0, 0
        for x in sets[a]:
            for y in sets[a]:
                s += math.dist(x, y)
                c += 1
        intra += s / c
    intra /= len(agents)
    inter, m = 0.0, 0
    for a in agents:
        for b in agents:
            if a == b:
                continue
            s, c = 0.0, 0
            for x in sets[a]:
                for y in sets[b]:
                    s += math.dist(x, y)
                    c += 1
            inter += s / c
            m += 1
    return intra / (inter / m)


def _random_sets(rng):
    n_agents = int(rng.integers(2, 6))
    d = int(rng.integers(1, 5))
    return {a: rng.normal(loc=rng.normal(size=d), size=(int(rng.integers(1, 6)), d)) for a in range(n_agents)}


# --- IICR ----------------------------------------------------------------------


def test_iicr_hand_example():
    sets = {0: np.array([[0.0], [2.0]]), 1: np.array([[10.0], [12.0]])}
    assert iicr(sets) == pytest.approx(0.1, rel=1e-15)


def test_iicr_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        sets = _random_sets(rng)
        fast, slow = iicr(sets), brute_iicr(sets)
        assert abs(fast - slow) <= 1e-12 * max(1.0, abs(slow))


def test_iicr_zero_when_clusters_are_points():
    sets = {0: np.tile([1.0, 2.0], (4, 1)), 1: np.tile([-3.0, 0.5], (3, 1))}
    assert iicr(sets) == 0.0


def test_iicr_null_model():
    rng = np.random.default_rng(1)
    sets = {a: rng.normal(size=(100, 8)) for a in range(10)}
    assert 0.95 <= iicr(sets) <= 1.05


def test_iicr_errors():
    with pytest.raises(ConfigError):
        iicr({0: np.zeros((3, 2))})
    with pytest.raises(DegenerateError):
        iicr({0: np.zeros((3, 2)), 1: np.zeros((2, 2))})


@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_iicr_invariances(seed, scale):
    rng = np.random.default_rng(seed)
    sets = {a: rng.normal(loc=a, size=(4, 3)) for a in range(3)}
    q = ortho_group.rvs(3, random_state=seed)
    shift = rng.normal(size=3)
    moved = {a: v @ q.T + shift for a, v in sets.items()}
    scaled = {a: scale * v for a, v in sets.items()}
    base = iicr(sets)
    assert iicr(moved) == pytest.approx(base, rel=1e-10)
    assert iicr(scaled) == pytest.approx(base, rel=1e-10)


# --- outcome classifier ----------------------------------------------------------


def test_classifier_memorizes():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 8)) * 3
    y = np.arange(20) % 3
    data = OutcomeDataset(x, y)
    clf = train_outcome_classifier(data, seed=0, epochs=300, augment=False)
    assert clf.accuracy(data) == 1.0


def test_classifier_permutation_null():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(600, 8))
    y = (x[:, 0] > 0).astype(int) + (x[:, 1] > 1).astype(int)
    y = rng.permutation(y)
    train, test = OutcomeDataset(x[:400], y[:400]), OutcomeDataset(x[400:], y[400:])
    clf = train_outcome_classifier(train, seed=0, epochs=20)
    assert abs(clf.accuracy(test) - test.majority_rate()) <= 0.1


def test_classifier_swap_symmetry():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(120, 6))
    y = np.where(x[:, 0] > x[:, 3] + 0.5, 0, np.where(x[:, 3] > x[:, 0] + 0.5, 1, 2))
    data = OutcomeDataset(x, y)
    clf = train_outcome_classifier(data, seed=0, epochs=30, augment=True)
    assert clf.accuracy(data) == pytest.approx(clf.accuracy(data.swapped()), abs=0.05)
    swapped_model = train_outcome_classifier(data.swapped(), seed=0, epochs=30, augment=True)
    test = OutcomeDataset(rng.normal(size=(200, 6)), rng.integers(3, size=200))
    # the augmented training sets are the same rows, so the predictors agree up to row order effects
    assert np.mean(clf.predict(test.x) == swapped_model.predict(test.x)) > 0.8


def test_classifier_single_class():
    with pytest.raises(DegenerateError):
        train_outcome_classifier(OutcomeDataset(np.zeros((5, 4)), np.zeros(5, dtype=int)))


def test_outcome_dataset_no_leakage(arena_fixture):
    _, g, s = arena_fixture
    enc = make_encoder(g.spec.obs_dims[0], g.spec.action_arities[0], 4, (8,), 0)
    data = build_outcome_dataset(g, s.edges["test"], enc)
    assert len(data) == 10 * len(s.edges["test"])
    assert all(a != b for a, b in zip(data.labeled_ids, data.source_ids))
    test_ids = {ep.episode_id for e in s.edges["test"] for ep in g.edges[e]}
    assert set(data.source_ids) <= test_ids
    assert sum(data.class_balance().values()) == pytest.approx(1.0)


# --- PCA -----------------------------------------------------------------------


def test_jacobi_matches_eigvalsh():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(12, 12))
    a = a + a.T
    w, v = jacobi_eigh(a)
    np.testing.assert_allclose(w, np.sort(np.linalg.eigvalsh(a))[::-1], atol=1e-9)
    np.testing.assert_allclose(a @ v, v * w, atol=1e-8)


def test_pca_exact_subspace():
    rng = np.random.default_rng(1)
    basis = np.linalg.qr(rng.normal(size=(6, 2)))[0]
    x = rng.normal(size=(40, 2)) @ basis.T + rng.normal(size=6)
    res = pca_project(x, 2)
    assert np.abs(res.reconstruct() - x).max() <= 1e-9


def test_pca_ordering_and_retained_variance():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(200, 5)) * np.array([5, 3, 2, 1, 0.5])
    res = pca_project(x, 3)
    var = res.coords.var(axis=0, ddof=1)
    assert np.all(np.diff(var) <= 1e-12)
    oracle = np.sort(np.linalg.eigvalsh(np.cov(x, rowvar=False)))[::-1][:3].sum()
    assert abs(res.retained_variance - oracle) <= 1e-9
    assert abs(var.sum() - oracle) <= 1e-9


def test_pca_errors(tmp_path):
    with pytest.raises(ConfigError):
        pca_project(np.zeros((10, 2)), 3)
    with pytest.raises(ConfigError):
        pca_project(np.zeros((2, 4)), 2)
    res = pca_project(np.random.default_rng(0).normal(size=(5, 3)), 2)
    write_pca_csv(tmp_path / "p.csv", res.coords, list("abcde"))
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "agent,pc1,pc2" and len(lines) == 6


# --- ablations -----------------------------------------------------------------


def test_ablation_zero():
    table = {a: np.full(5, a + 1.0) for a in range(3)}
    assert np.array_equal(ablate_embedding("zero", 0, table, np.random.default_rng(0)), np.zeros(5))


def test_ablation_rand_never_self_and_uniform():
    table = {a: np.full(3, float(a)) for a in range(5)}
    rng = np.random.default_rng(0)
    counts = np.zeros(5)
    for _ in range(100_000):
        z = ablate_embedding("rand", 2, table, rng)
        counts[int(z[0])] += 1
    assert counts[2] == 0
    freq = counts[[0, 1, 3, 4]] / 100_000
    assert np.all(np.abs(freq - 0.25) <= 0.02)


def test_ablation_errors():
    with pytest.raises(ConfigError):
        ablate_embedding("rand", 0, {0: np.zeros(2)}, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        ablate_embedding("noise", 0, {0: np.zeros(2), 1: np.ones(2)}, np.random.default_rng(0))
