import math

import numpy as np
import pytest

from advsep.exceptions import DimensionMismatchError, TrainingDivergedError
from advsep.model import NetworkParams, activation_pattern, init_network, two_cluster_dataset
from advsep.numerics import make_rng, spectral_norm
from advsep.training import (TrainConfig, gd_train, load_snapshots, loss_and_param_grads, ntk_ball_perturbation,
                             save_snapshots)
from conftest import non_kink_inputs


@pytest.mark.parametrize("kw", [{"lr": 0.0}, {"lr": -1.0}, {"steps": -1}, {"steps": 1.5},
                                {"steps": 5, "snapshot_every": 6}, {"layers": "first"}, {"temperature": 0.0}])
def test_config_rejections(kw):
    base = {"lr": 0.1, "steps": 5}
    with pytest.raises(ValueError):
        TrainConfig(**{**base, **kw})


def test_zero_logits_give_log2(rng):
    p = NetworkParams(rng.standard_normal((4, 3)), np.zeros(4))
    loss, gW, ga = loss_and_param_grads(p, rng.standard_normal((6, 3)), np.ones(6))
    assert loss == pytest.approx(math.log(2))
    assert not gW.any()


def test_param_grads_finite_differences(rng):
    p = init_network(6, 10, rng)
    X = non_kink_inputs(p, 8, rng, margin=1e-3)
    y = rng.choice([-1, 1], size=8)
    for T in (1.0, 2.0):
        _, gW, ga = loss_and_param_grads(p, X, y, T)
        h = 1e-6
        for k in range(p.m):
            for j in range(p.d):
                E = np.zeros_like(p.W)
                E[k, j] = h
                up = loss_and_param_grads(NetworkParams(p.W + E, p.a), X, y, T)[0]
                dn = loss_and_param_grads(NetworkParams(p.W - E, p.a), X, y, T)[0]
                assert abs((up - dn) / (2 * h) - gW[k, j]) < 1e-5
            e = np.zeros(p.m)
            e[k] = h
            up = loss_and_param_grads(NetworkParams(p.W, p.a + e), X, y, T)[0]
            dn = loss_and_param_grads(NetworkParams(p.W, p.a - e), X, y, T)[0]
            assert abs((up - dn) / (2 * h) - ga[k]) < 1e-5


def test_param_grads_match_row_formula(rng):
    p = init_network(5, 7, rng)
    X = rng.standard_normal((9, 5))
    y = rng.choice([-1, 1], size=9)
    _, gW, ga = loss_and_param_grads(p, X, y)
    s = 1 / (1 + np.exp(-y * (np.maximum(X @ p.W.T, 0) @ p.a)))
    for k in range(7):
        row = np.mean([-(1 - s[i]) * y[i] * p.a[k] * (p.W[k] @ X[i] > 0) * X[i] for i in range(9)], axis=0)
        assert np.allclose(gW[k], row, atol=1e-14)
    assert np.allclose(ga, np.mean([-(1 - s[i]) * y[i] * np.maximum(p.W @ X[i], 0) for i in range(9)], axis=0))


def test_duplicating_samples_changes_nothing(rng):
    p = init_network(5, 7, rng)
    X = rng.standard_normal((4, 5))
    y = np.array([1, -1, 1, 1])
    a = loss_and_param_grads(p, X, y)
    b = loss_and_param_grads(p, np.vstack([X, X]), np.concatenate([y, y]))
    assert a[0] == pytest.approx(b[0], rel=1e-14)
    assert np.allclose(a[1], b[1], rtol=1e-13) and np.allclose(a[2], b[2], rtol=1e-13)


def test_grad_errors(small_net):
    with pytest.raises(DimensionMismatchError):
        loss_and_param_grads(small_net, np.ones((2, small_net.d + 1)), [1, 1])
    with pytest.raises(ValueError):
        loss_and_param_grads(small_net, np.ones((0, small_net.d)), [])


def test_descent_on_separable_task():
    g = make_rng(0)
    p0 = init_network(64, 4096, g)
    ds = two_cluster_dataset(50, 64, 3.0, g)
    snaps = gd_train(p0, ds, TrainConfig(lr=0.05, steps=20))
    assert snaps[-1].loss < snaps[0].loss


def test_first_order_taylor(rng):
    p = init_network(8, 32, rng)
    ds = two_cluster_dataset(20, 8, 1.0, rng)
    lr = 1e-6
    loss0, gW, ga = loss_and_param_grads(p, ds.X, ds.y)
    snaps = gd_train(p, ds, TrainConfig(lr=lr, steps=1))
    predicted = -lr * (np.sum(gW ** 2) + np.sum(ga ** 2))
    assert (snaps[-1].loss - loss0) == pytest.approx(predicted, rel=0.1)


def test_snapshots_cadence_and_step_zero(rng):
    p0 = init_network(8, 32, rng)
    ds = two_cluster_dataset(20, 8, 1.0, rng)
    snaps = gd_train(p0, ds, TrainConfig(lr=0.1, steps=25, snapshot_every=10))
    assert [s.step for s in snaps] == [0, 10, 20, 25]
    assert snaps[0].params is p0 and snaps[0].dW_frobenius == 0.0 and not snaps[0].flips.any()
    assert np.array_equal(snaps[0].params.W, p0.W)
    masks0 = activation_pattern(p0, ds.X)
    for s in snaps:
        direct = np.count_nonzero(activation_pattern(s.params, ds.X) != masks0, axis=1)
        assert np.array_equal(s.flips, direct)
        assert np.all(s.flips <= p0.m)
        if s.step:
            assert s.dW_spectral == pytest.approx(spectral_norm(s.params.W - p0.W), rel=1e-8)


def test_layer_freezing(rng):
    p0 = init_network(8, 32, rng)
    ds = two_cluster_dataset(20, 8, 1.0, rng)
    ro = gd_train(p0, ds, TrainConfig(lr=0.5, steps=3, layers="readout"))[-1]
    assert np.array_equal(ro.params.W, p0.W) and ro.da_norm > 0
    hid = gd_train(p0, ds, TrainConfig(lr=0.5, steps=3, layers="hidden"))[-1]
    assert np.array_equal(hid.params.a, p0.a) and hid.dW_frobenius > 0


def test_divergence_guard(rng):
    p0 = init_network(8, 32, rng)
    ds = two_cluster_dataset(20, 8, 1.0, rng)
    with pytest.raises(TrainingDivergedError) as exc:
        gd_train(p0, ds, TrainConfig(lr=1e9, steps=50))
    assert exc.value.step >= 1 and exc.value.threshold == 1e6


def test_ntk_scale_run_stays_lazy():
    m, n, d = 8192, 20, 128
    lr = d / (100 * n ** 2)
    ok = 0
    for seed in range(10):
        g = make_rng(seed)
        p0 = init_network(d, m, g)
        ds = two_cluster_dataset(n, d, 1.0, g)
        last = gd_train(p0, ds, TrainConfig(lr=lr, steps=100))[-1]
        ok += last.dW_spectral <= 10 / math.sqrt(m) and np.all(last.flips <= m / math.log(m) ** 2)
    assert ok >= 9


def test_ntk_ball_perturbation(rng):
    p0 = init_network(512, 4096, rng)
    same = ntk_ball_perturbation(p0, 0.0, 0.0, rng)
    assert np.array_equal(same.W, p0.W) and np.array_equal(same.a, p0.a)
    r = 1 / math.sqrt(4096)
    p1 = ntk_ball_perturbation(p0, r, r, rng)
    assert abs(np.linalg.norm(p1.W - p0.W, 2) - 1 / 64) <= 1e-9
    assert abs(spectral_norm(p1.W - p0.W, tol=1e-14) - 1 / 64) <= 1e-9
    assert abs(np.linalg.norm(p1.a - p0.a) - 1 / 64) <= 1e-9
    with pytest.raises(ValueError):
        ntk_ball_perturbation(p0, -1.0, 0.0, rng)


def test_snapshot_round_trip(tmp_path, rng):
    p0 = init_network(6, 12, rng)
    ds = two_cluster_dataset(10, 6, 1.0, rng)
    snaps = gd_train(p0, ds, TrainConfig(lr=0.2, steps=4, snapshot_every=2))
    manifest = save_snapshots(snaps, tmp_path / "snaps")
    assert manifest.name == "manifest.json"
    back = load_snapshots(tmp_path / "snaps")
    assert [s.step for s in back] == [0, 2, 4]
    for a, b in zip(snaps, back):
        assert np.array_equal(a.params.W, b.params.W) and np.array_equal(a.flips, b.flips)
        assert a.loss == b.loss and a.dW_spectral == b.dW_spectral
