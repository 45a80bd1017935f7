import itertools

import numpy as np
import pytest

import tsjm


def test_cosine_and_frame_matrices():
    a = np.array([1.0, 2.0, 2.0])
    assert tsjm.cosine(a, a) == 1.0
    assert tsjm.cosine(a, -a) == -1.0
    with pytest.raises(ValueError):
        tsjm.cosine(np.zeros(3), a)

    rng = np.random.default_rng(0)
    s, q = rng.normal(size=(5, 4)), rng.normal(size=(7, 4))
    sim = tsjm.frame_similarity_matrix(s, q)
    expected = (s / np.linalg.norm(s, axis=1, keepdims=True)) @ (q / np.linalg.norm(q, axis=1, keepdims=True)).T
    np.testing.assert_allclose(sim, expected, atol=1e-12)
    np.testing.assert_allclose(tsjm.frame_distance_matrix(s, q), 1.0 - sim, atol=1e-12)


def test_dtw_matches_recurrence():
    rng = np.random.default_rng(1)
    d = rng.uniform(size=(4, 6))
    acc = np.full((5, 7), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, 5):
        for j in range(1, 7):
            acc[i, j] = d[i - 1, j - 1] + min(acc[i - 1, j - 1], acc[i, j - 1], acc[i - 1, j])
    steps, total = tsjm.dtw(d)
    assert steps[0] == (0, 0) and steps[-1] == (3, 5)
    assert total == pytest.approx(acc[4, 6], abs=1e-12)
    assert total == pytest.approx(sum(d[i, j] for i, j in steps), abs=1e-12)


def test_km_matches_brute_force():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(6, 6))
    best = max(sum(w[i, p[i]] for i in range(6)) for p in itertools.permutations(range(6)))
    assignment, total = tsjm.km_match(w)
    assert sorted(assignment) == list(range(6))
    assert total == pytest.approx(best, abs=1e-9)


def test_loss_gradients_sum_to_zero():
    d = np.array([0.3, 0.1, 0.7])
    g = tsjm.ota_loss_grad(d, 1)
    assert g.sum() == pytest.approx(0.0, abs=1e-12)
    assert g[1] > 0
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (tsjm.ota_loss(d + e, 1) - tsjm.ota_loss(d - e, 1)) / (2 * h)
        assert g[k] == pytest.approx(fd, abs=1e-6)
    assert tsjm.infonce_loss(np.eye(4) * 0.9, 0.07) < tsjm.infonce_loss(np.zeros((4, 4)), 0.07)


def test_store_round_trip(tmp_path):
    store = tsjm.gen_synthetic(classes=6, per_class=4, frames=6, dim=8, subactions=3, seed=5)
    assert len(store) == 24 and store.num_classes == 6 and store.dim == 8
    rec = store[0]
    assert rec.rgb.shape == (6, 8) and rec.flow.shape == (6, 8)

    path = tmp_path / "s.fset"
    store.save(path)
    loaded = tsjm.load_store(path)
    assert loaded.to_bytes() == store.to_bytes()
    np.testing.assert_array_equal(loaded[3].rgb, store[3].rgb)

    data = bytearray(store.to_bytes())
    data[20] ^= 0xFF
    with pytest.raises(tsjm.FormatError):
        tsjm.store_from_bytes(bytes(data))
    with pytest.raises(tsjm.IoError):
        tsjm.load_store(tmp_path / "missing.fset")


def test_evaluate_and_train():
    store = tsjm.gen_synthetic(classes=6, per_class=6, frames=6, dim=8, subactions=3, noise=0.1, seed=3)
    report = tsjm.evaluate(store, episodes=50, seed=1)
    assert report["episodes"] == 50
    assert 0.0 <= report["mean_accuracy"] <= 1.0
    assert report["mean_accuracy"] == pytest.approx(report["per_episode"].mean())
    threaded = tsjm.evaluate(store, episodes=50, seed=1, threads=2)
    np.testing.assert_array_equal(threaded["per_episode"], report["per_episode"])
    with pytest.raises(tsjm.DomainError):
        tsjm.evaluate(store, way=7, episodes=1)

    adapters, csv = tsjm.train(store, epochs=3, lr=0.1, batch_size=4, batches=2, seed=2)
    lines = csv.strip().splitlines()
    assert lines[0] == "epoch,total,l_cl,l_ota,l_km" and len(lines) == 5
    assert adapters.dim == 8
    adapted = tsjm.evaluate(store, episodes=50, seed=1, adapters=adapters)
    assert 0.0 <= adapted["mean_accuracy"] <= 1.0

    identity = tsjm.initial_adapters(8, 2, 0)
    np.testing.assert_allclose(identity.apply(store[0].rgb, tsjm.Modality.RGB), store[0].rgb, atol=1e-12)


def test_gradcheck_passes():
    results = tsjm.gradcheck(instances=5, seed=3)
    assert results and all(err < 1e-4 for err in results.values())
