import math

import numpy as np
import pytest

from stairslab.hermite import Relu, SmoothedRelu, identity_activation
from stairslab.mcm import CensorMode, McmParams, SpikeSet
from stairslab.sampling import LatentCoupling, RngHandle
from stairslab.two_layer import (TeacherSpec, TrainConfig2L, TwoLayerNet, forward,
                                 forward_batch, loss_and_grads, sample_teacher_input,
                                 teacher_label, top_k_overlaps, train_online)


def _net(d=8, m=4, sigma=None, seed=0):
    return TwoLayerNet.init(d, m, sigma or Relu(), RngHandle(seed).derive("net"))


# --- forward -------------------------------------------------------------------

def test_forward_zero_second_layer(rng):
    net = _net()
    net.a[:] = 0.0
    assert forward(net, rng.normal(8)) == 0.0


def test_forward_single_identity_neuron(rng):
    w = rng.normal(6)
    net = TwoLayerNet(w[None, :].copy(), np.array([1.0]), identity_activation())
    x = rng.normal(6)
    assert forward(net, x) == pytest.approx(w @ x, rel=1e-12)


def test_forward_dense_oracle(rng):
    net = _net(8, 4)
    x = rng.normal(8)
    by_hand = sum(net.a[k] * max(net.W[k] @ x, 0.0) for k in range(4))
    assert forward(net, x) == pytest.approx(by_hand, abs=1e-12)
    X = rng.normal((5, 8))
    assert np.allclose(forward_batch(net, X), [forward(net, xi) for xi in X], atol=1e-12)


def test_backprop_matches_finite_differences(rng):
    sigma = SmoothedRelu(0.3)
    h = 1e-6
    for trial in range(100):
        net = _net(8, 4, sigma, seed=trial)
        x = rng.normal(8)
        y = float(rng.normal())
        _, gW, ga = loss_and_grads(net, x, y)

        def loss_of(W, a):
            f = float(a @ np.asarray(sigma(W @ x)))
            return 0.5 * (f - y) ** 2

        k, c = trial % 4, trial % 8
        Wp, Wm = net.W.copy(), net.W.copy()
        Wp[k, c] += h
        Wm[k, c] -= h
        fd = (loss_of(Wp, net.a) - loss_of(Wm, net.a)) / (2 * h)
        assert abs(gW[k, c] - fd) / max(abs(fd), 1e-5) < 1e-5
        ap, am = net.a.copy(), net.a.copy()
        ap[k] += h
        am[k] -= h
        fda = (loss_of(net.W, ap) - loss_of(net.W, am)) / (2 * h)
        assert abs(ga[k] - fda) / max(abs(fda), 1e-5) < 1e-5


def test_kernel_step_matches_numpy_step(rng):
    from stairslab._kernels import two_layer_relu_chunk

    net_a = _net(8, 6, Relu(), seed=3)
    net_b = net_a.copy()
    X = rng.normal((50, 8))
    ys = rng.normal(50)
    loss_sum, status, done = two_layer_relu_chunk(net_a.W, net_a.a, X, ys, 0.05, 0.01)
    assert status == 0 and done == 50
    acc = 0.0
    for i in range(50):
        l, gW, ga = loss_and_grads(net_b, X[i], float(ys[i]))
        net_b.W -= 0.05 * gW
        net_b.a -= 0.01 * ga
        acc += l
    assert np.allclose(net_a.W, net_b.W, atol=1e-12)
    assert np.allclose(net_a.a, net_b.a, atol=1e-12)
    assert loss_sum == pytest.approx(acc, rel=1e-12)


# --- teachers --------------------------------------------------------------------

def test_teacher_value_at_origin(rng):
    spikes = SpikeSet.orthogonal(12, rng)
    plain = TeacherSpec("plain", spikes)
    mixed = TeacherSpec("mixed", spikes)
    expected = -1 / math.sqrt(2) + 3 / math.sqrt(24)
    x0 = np.zeros(12)
    assert teacher_label(plain, x0) == pytest.approx(expected, abs=1e-12)
    assert teacher_label(mixed, x0) == pytest.approx(expected, abs=1e-12)


def test_teacher_additivity(rng):
    spikes = SpikeSet.orthogonal(12, rng)
    plain = TeacherSpec("plain", spikes)
    x = spikes.m.copy()  # m.x = 1, u.x = v.x = 0
    expected = 1 - 1 / math.sqrt(2) + 3 / math.sqrt(24)
    assert teacher_label(plain, x) == pytest.approx(expected, abs=1e-12)


def test_teacher_probabilists_convention(rng):
    spikes = SpikeSet.orthogonal(12, rng)
    spec = TeacherSpec("plain", spikes, convention="probabilists")
    assert teacher_label(spec, np.zeros(12)) == pytest.approx(-1 + 3, abs=1e-12)


def test_teacher_validation(rng):
    spikes = SpikeSet.orthogonal(8, rng)
    with pytest.raises(ValueError):
        TeacherSpec("cubic", spikes)
    with pytest.raises(ValueError):
        TeacherSpec("plain", spikes, cross_gamma=1.0)


def test_teacher_inputs_identity_cov(rng):
    spikes = SpikeSet.orthogonal(32, rng.derive("s"))
    spec = TeacherSpec("plain", spikes)
    x = sample_teacher_input(spec, 1_000_000, rng.derive("x"))
    prod = (x @ spikes.u) * (x @ spikes.v)
    assert abs(prod.mean()) < 0.004


def test_teacher_inputs_cross_spiked(rng):
    spikes = SpikeSet.orthogonal(32, rng.derive("s"))
    spec = TeacherSpec("plain", spikes, cross_gamma=0.5)
    x = sample_teacher_input(spec, 800_000, rng.derive("x"))
    xu, xv = x @ spikes.u, x @ spikes.v
    assert abs((xu * xv).mean() - 0.5) < 0.005
    assert abs((xu ** 2).mean() - 1.0) < 0.005
    w = rng.derive("w").normal(32)
    for s in (spikes.m, spikes.u, spikes.v):
        w -= (w @ s) * s
    w /= np.linalg.norm(w)
    assert abs(((x @ w) ** 2).mean() - 1.0) < 0.005


# --- overlap summaries --------------------------------------------------------------

def test_top_k_single_matching_neuron(rng):
    spikes = SpikeSet.orthogonal(8, rng)
    W = np.vstack([spikes.u, rng.normal((3, 8))])
    net = TwoLayerNet(W, np.ones(4), Relu())
    assert top_k_overlaps(net, spikes.u, 1) == pytest.approx(1.0, abs=1e-12)


def test_top_k_orthogonal_is_zero():
    e = np.eye(8)
    net = TwoLayerNet(e[:4].copy(), np.ones(4), Relu())
    assert top_k_overlaps(net, e[7], 4) == pytest.approx(0.0, abs=1e-14)


def test_top_k_random_init_scale():
    d, m = 128, 512
    net = _net(d, m, seed=9)
    val = top_k_overlaps(net, np.eye(d)[0], 5)
    assert 2 / math.sqrt(d) < val < 5 / math.sqrt(d)


def test_top_k_excludes_zero_neurons(rng):
    W = np.vstack([np.zeros(8), np.eye(8)[:3]])
    net = TwoLayerNet(W, np.ones(4), Relu())
    with pytest.warns(UserWarning):
        val = top_k_overlaps(net, np.eye(8)[0], 3)
    assert val == pytest.approx(1 / 3, abs=1e-12)


def test_top_k_validates_k():
    net = _net(8, 4)
    with pytest.raises(ValueError):
        top_k_overlaps(net, np.eye(8)[0], 5)


# --- online training ------------------------------------------------------------------

def test_zero_learning_rate_keeps_weights(rng):
    net = _net(8, 4)
    W0, a0 = net.W.copy(), net.a.copy()
    spikes = SpikeSet.orthogonal(8, rng.derive("s"))
    params = McmParams(d=8, beta_m=1.0)
    cfg = TrainConfig2L(eta1=0.0, steps=500, eval_every=250, eval_set_size=200)
    log = train_online(net, params, cfg, rng.derive("t"), spikes=spikes)
    assert np.array_equal(net.W, W0) and np.array_equal(net.a, a0)
    for key in ("err_full", "err_mean_only"):
        assert np.ptp(log.metrics[key]) == 0.0


def test_mean_only_data_full_equals_censored(rng):
    # with beta_u = beta_v = 0 the full and mean-only test sets share one law
    d, m = 32, 64
    net = _net(d, m, seed=4)
    spikes = SpikeSet.orthogonal(d, rng.derive("s"))
    params = McmParams(d=d, beta_m=1.0)
    cfg = TrainConfig2L(eta1=0.05, steps=20_000, eval_every=4000, eval_set_size=20_000)
    log = train_online(net, params, cfg, rng.derive("t"), spikes=spikes)
    gap = np.abs(log.metrics["err_full"] - log.metrics["err_mean_only"])
    assert gap.max() < 0.012
    # and the network actually learns the mean direction
    assert log.metrics["err_full"][-1] < log.metrics["err_full"][0] - 0.05


def test_training_determinism(rng):
    def run():
        net = _net(16, 8, seed=21)
        spikes = SpikeSet.orthogonal(16, RngHandle(77).derive("s"))
        params = McmParams(d=16, beta_m=1.0, beta_u=5.0)
        cfg = TrainConfig2L(eta1=0.05, steps=2000, eval_every=500, eval_set_size=500)
        return train_online(net, params, cfg, RngHandle(77).derive("t"), spikes=spikes)

    a, b = run(), run()
    assert np.array_equal(a.loss_train, b.loss_train)
    for k in a.metrics:
        assert np.array_equal(a.metrics[k], b.metrics[k])


def test_teacher_training_runs_and_logs(rng):
    spikes = SpikeSet.orthogonal(16, rng.derive("s"))
    spec = TeacherSpec("mixed", spikes)
    net = _net(16, 32, seed=5)
    cfg = TrainConfig2L(eta1=0.05, steps=10_000, eval_every=2500, eval_set_size=1000)
    log = train_online(net, spec, cfg, rng.derive("t"))
    assert log.task == "teacher"
    assert "mse_test" in log.metrics
    assert log.metrics["mse_test"][-1] < log.metrics["mse_test"][0]
    assert set(log.top5) == {"m", "u", "v"}


def test_log_csv_columns(rng, tmp_path):
    spikes = SpikeSet.orthogonal(8, rng.derive("s"))
    params = McmParams(d=8, beta_m=1.0)
    net = _net(8, 4, seed=6)
    cfg = TrainConfig2L(eta1=0.1, steps=100, eval_every=50, eval_set_size=100)
    log = train_online(net, params, cfg, rng.derive("t"), spikes=spikes)
    path = tmp_path / "log.csv"
    with open(path, "w") as fh:
        log.write_csv(fh)
    header = path.read_text().splitlines()[0]
    assert header == ("step,loss_train,err_full,err_mean_only,err_mean_cov,"
                      "err_gauss_equiv,top5_m,top5_u,top5_v")


def test_log_snapshot_grid(rng):
    cfg = TrainConfig2L(eta1=0.1, steps=1000, eval_every=100, eval_set_size=10)
    snaps = cfg.snapshot_steps()
    assert snaps[0] == 0 and snaps[-1] == 1000
    log_cfg = TrainConfig2L(eta1=0.1, steps=1000, eval_every=12, eval_set_size=10,
                            eval_log=True)
    snaps = log_cfg.snapshot_steps()
    assert snaps[0] == 0 and snaps[-1] == 1000
    assert np.all(np.diff(snaps) > 0)


def test_divergence_detected(rng):
    from stairslab.errors import DivergenceError

    net = _net(8, 4, seed=8)
    spikes = SpikeSet.orthogonal(8, rng.derive("s"))
    params = McmParams(d=8, beta_m=1.0, beta_u=5.0)
    cfg = TrainConfig2L(eta1=1e8, steps=2000, eval_every=1000, eval_set_size=64)
    with pytest.raises(DivergenceError):
        train_online(net, params, cfg, rng.derive("t"), spikes=spikes)
