import copy

import numpy as np
import pytest

from masonet import layers as L
from masonet.learn import (
    AdamState,
    TrainConfig,
    accuracy,
    adam_step,
    backward,
    cross_entropy,
    forward_loss,
    gram_schmidt,
    joint_map_factorial,
    ortho_penalty_filters,
    ortho_penalty_templates,
    train,
)
from masonet.maso import MasoParams, forward_hard
from masonet.ndcore import (
    DegeneracyError,
    DivergenceError,
    DomainError,
    PreconditionError,
    ShapeError,
)


def fd_check(net, keys, X, y, mode="hard", beta=None, h=1e-5, rtol=1e-4):
    """Central finite differences against the analytic gradients."""
    from masonet.learn import _invalidate_conv_caches

    loss, g = backward(net, X, y, mode=mode, beta=beta)
    for key in keys:
        li, field = key.split(".", 1)
        li = int(li)
        G = np.asarray(g.values[key])
        it = np.nditer(G, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            if abs(G[idx]) <= 1e-6:
                continue
            net2 = copy.deepcopy(net)
            target = net2.layers[li]
            for part in field.split(".")[:-1]:
                target = getattr(target, part)
            arr = getattr(target, field.split(".")[-1])
            arr[idx] += h
            _invalidate_conv_caches(net2)
            lp = forward_loss(net2, X, y, mode=mode, beta=beta)
            arr[idx] -= 2 * h
            _invalidate_conv_caches(net2)
            lm = forward_loss(net2, X, y, mode=mode, beta=beta)
            fd = (lp - lm) / (2 * h)
            assert abs(G[idx] - fd) <= rtol * max(abs(fd), 1e-8), (key, idx, G[idx], fd)


# --- loss ---------------------------------------------------------------------

def test_cross_entropy_frozen_values():
    # log(1 + e^-10) and 10 + log(1 + e^-10), computed independently
    tail = np.log1p(np.exp(-10.0))
    assert abs(cross_entropy(np.array([10.0, 0.0]), 0) - tail) < 1e-12
    assert abs(cross_entropy(np.array([10.0, 0.0]), 1) - (10.0 + tail)) < 1e-12
    # uniform logits: loss is log C
    assert abs(cross_entropy(np.zeros(4), 2) - np.log(4.0)) < 1e-12


def test_cross_entropy_is_shift_invariant(rng):
    logits = rng.standard_normal(5)
    a = cross_entropy(logits, 3)
    b = cross_entropy(logits + 100.0, 3)
    assert abs(a - b) < 1e-9


def test_cross_entropy_handles_extreme_logits():
    assert np.isfinite(cross_entropy(np.array([1000.0, 0.0]), 0))
    assert cross_entropy(np.array([1000.0, 0.0]), 1) > 900


def test_cross_entropy_label_range():
    with pytest.raises(DomainError):
        cross_entropy(np.zeros(3), 3)


def test_forward_loss_is_mean_of_singles(rng):
    net = L.make_mlp([3, 5, 2], seed=2)
    X = rng.standard_normal((6, 3))
    y = rng.integers(0, 2, size=6)
    singles = []
    for i in range(6):
        logits, _ = L.network_forward(net, X[i])
        singles.append(cross_entropy(logits, y[i]))
    got = forward_loss(net, X, y, mode="hard")
    assert abs(got - np.mean(singles)) < 1e-10


# --- gradients ------------------------------------------------------------------

def test_dense_mlp_gradients_all_modes(rng):
    net = L.make_mlp([3, 6, 4, 2], seed=1)
    X = rng.standard_normal((5, 3))
    y = rng.integers(0, 2, size=5)
    fd_check(net, ["0.W", "0.b", "2.W", "4.W", "4.b"], X, y, mode="hard")
    fd_check(net, ["0.W", "0.b", "2.W", "4.W"], X, y, mode="soft")
    fd_check(net, ["0.W", "2.W", "4.W"], X, y, mode="beta", beta=0.7)


def test_beta_gradient_matches_fd(rng):
    net = L.make_mlp([3, 5, 2], seed=4)
    X = rng.standard_normal((4, 3))
    y = rng.integers(0, 2, size=4)
    _, g = backward(net, X, y, mode="beta", beta=0.6)
    total = sum(float(v) for k, v in g.values.items() if k.endswith(".beta"))
    h = 1e-6
    fd = (
        forward_loss(net, X, y, mode="beta", beta=0.6 + h)
        - forward_loss(net, X, y, mode="beta", beta=0.6 - h)
    ) / (2 * h)
    assert abs(total - fd) <= 1e-4 * max(abs(fd), 1e-8)


# relu zeros tie inside pooling windows; the boundary warning is expected
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_conv_pool_gradients(rng):
    conv = L.Conv(rng.standard_normal((2, 1, 3, 3)) * 0.5, rng.standard_normal(2) * 0.1,
                  (1, 1), "valid", (1, 6, 6))
    out_shape = L.conv_out_shape(conv, (1, 6, 6))
    dim = int(np.prod(out_shape))
    regions, _ = L.pool_regions_2d(out_shape, (2, 2), (2, 2))
    net = L.Network(
        [conv, L.Activation("relu", dim), L.MaxPool(regions, dim),
         L.Dense(rng.standard_normal((3, len(regions))) * 0.3, np.zeros(3))],
        (1, 6, 6), 3,
    )
    X = rng.standard_normal((3, 36))
    y = rng.integers(0, 3, size=3)
    fd_check(net, ["0.filters", "0.bias", "3.W", "3.b"], X, y, mode="hard")
    fd_check(net, ["0.filters", "0.bias"], X, y, mode="soft")


def test_strided_same_conv_gradients(rng):
    conv = L.Conv(rng.standard_normal((2, 1, 3, 3)) * 0.5, rng.standard_normal(2) * 0.1,
                  (2, 2), "same-zero", (1, 5, 5))
    dim = int(np.prod(L.conv_out_shape(conv, (1, 5, 5))))
    net = L.Network(
        [conv, L.Activation("lrelu", dim, nu=0.1),
         L.Dense(rng.standard_normal((2, dim)) * 0.3, np.zeros(2))],
        (1, 5, 5), 2,
    )
    X = rng.standard_normal((4, 25))
    y = rng.integers(0, 2, size=4)
    fd_check(net, ["0.filters", "0.bias", "2.W"], X, y, mode="hard")


def test_batchnorm_gradients_batch_statistics(rng):
    net = L.Network(
        [
            L.Dense(rng.standard_normal((5, 3)), rng.standard_normal(5)),
            L.BatchNorm(np.zeros(5), np.ones(5), np.ones(5) + 0.1 * rng.standard_normal(5),
                        0.1 * rng.standard_normal(5)),
            L.Activation("relu", 5),
            L.Dense(rng.standard_normal((2, 5)), np.zeros(2)),
        ],
        (3,), 2,
    )
    X = rng.standard_normal((6, 3))
    y = rng.integers(0, 2, size=6)
    fd_check(net, ["0.W", "1.scale", "1.shift", "3.W"], X, y, mode="hard")


def test_avgpool_and_abs_gradients(rng):
    net = L.Network(
        [
            L.Dense(rng.standard_normal((6, 3)), rng.standard_normal(6)),
            L.Activation("abs", 6),
            L.AvgPool(((0, 1, 2), (3, 4, 5)), 6),
            L.Dense(rng.standard_normal((2, 2)), np.zeros(2)),
        ],
        (3,), 2,
    )
    X = rng.standard_normal((4, 3))
    y = rng.integers(0, 2, size=4)
    fd_check(net, ["0.W", "0.b", "3.W"], X, y, mode="hard")
    fd_check(net, ["0.W", "3.W"], X, y, mode="soft")


def make_skip_net(rng):
    shape = (2, 3, 3)
    dim = 18

    def block(seed):
        r = np.random.default_rng(seed)
        conv = L.Conv(r.standard_normal((2, 2, 3, 3)) * 0.3, r.standard_normal(2) * 0.1,
                      (1, 1), "same-zero", shape)
        skip = L.Conv(r.standard_normal((2, 2, 1, 1)) * 0.3, np.zeros(2),
                      (1, 1), "same-zero", shape)
        return L.SkipBlock(conv, L.Activation("relu", dim), skip, r.standard_normal(dim) * 0.1)

    final = L.Dense(rng.standard_normal((2, dim)) * 0.3, np.zeros(2))
    return L.Network([block(1), block(2), final], shape, 2)


def test_skip_block_gradients(rng):
    net = make_skip_net(rng)
    X = rng.standard_normal((3, 18))
    y = rng.integers(0, 2, size=3)
    fd_check(net, ["0.conv.filters", "0.conv.bias", "0.skip.filters", "0.skip_bias",
                   "1.conv.filters", "2.W"], X, y, mode="hard")
    fd_check(net, ["0.conv.filters", "0.skip.filters"], X, y, mode="beta", beta=0.6)


def test_hard_mode_warns_on_region_boundary():
    net = L.Network(
        [L.Dense(np.eye(2), np.zeros(2)), L.Activation("relu", 2),
         L.Dense(np.ones((2, 2)), np.zeros(2))],
        (2,), 2,
    )
    with pytest.warns(RuntimeWarning):
        backward(net, np.array([0.0, 1.0]), 0, mode="hard")


def test_backward_accepts_single_input(rng):
    net = L.make_mlp([3, 4, 2], seed=0)
    loss, g = backward(net, rng.standard_normal(3), 1)
    assert np.isfinite(loss) and "0.W" in g.values


def test_backward_rejects_bad_labels(rng):
    net = L.make_mlp([3, 4, 2], seed=0)
    with pytest.raises(DomainError):
        backward(net, rng.standard_normal((2, 3)), np.array([0, 5]))


# --- orthogonality ---------------------------------------------------------------

def test_template_penalty_frozen_value():
    # two identical unit rows: the two ordered off-diagonal pairs each
    # contribute 1^2, so the energy is 2
    W = np.array([[1.0, 0.0], [1.0, 0.0]])
    pen, grad = ortho_penalty_templates(W, 1.0)
    assert abs(pen - 2.0) < 1e-12
    assert grad.shape == W.shape


def test_template_penalty_zero_for_orthogonal_rows():
    pen, grad = ortho_penalty_templates(np.eye(3), 1.0)
    assert pen == 0.0
    assert np.allclose(grad, 0.0)


def test_template_penalty_gradient_fd(rng):
    W = rng.standard_normal((4, 6))
    _, grad = ortho_penalty_templates(W, 0.7)
    h = 1e-6
    for idx in [(0, 0), (2, 3), (3, 5)]:
        Wp = W.copy(); Wp[idx] += h
        Wm = W.copy(); Wm[idx] -= h
        fd = (ortho_penalty_templates(Wp, 0.7)[0] - ortho_penalty_templates(Wm, 0.7)[0]) / (2 * h)
        assert abs(grad[idx] - fd) < 1e-5 * max(1.0, abs(fd))


def test_filter_penalty_ignores_same_unit_pairs(rng):
    # one unit, many regions: no cross-unit pair exists
    p = MasoParams(rng.standard_normal((1, 4, 5)), np.zeros((1, 4)))
    pen, grad = ortho_penalty_filters(p, 1.0)
    assert pen == 0.0 and np.allclose(grad, 0.0)


def test_filter_penalty_gradient_fd(rng):
    A = rng.standard_normal((3, 2, 4))
    p = MasoParams(A, np.zeros((3, 2)))
    _, grad = ortho_penalty_filters(p, 0.5)
    h = 1e-6
    for idx in [(0, 0, 0), (1, 1, 2), (2, 0, 3)]:
        Ap = A.copy(); Ap[idx] += h
        Am = A.copy(); Am[idx] -= h
        fd = (
            ortho_penalty_filters(MasoParams(Ap, np.zeros((3, 2))), 0.5)[0]
            - ortho_penalty_filters(MasoParams(Am, np.zeros((3, 2))), 0.5)[0]
        ) / (2 * h)
        assert abs(grad[idx] - fd) < 1e-5 * max(1.0, abs(fd))


def test_filter_penalty_accepts_plain_matrix(rng):
    M = rng.standard_normal((4, 6))
    pen, grad = ortho_penalty_filters(M, 1.0)
    assert grad.shape == M.shape
    pen_t, _ = ortho_penalty_templates(M, 1.0)
    # with R=1 every pair is cross-unit: same energy as the template form
    assert abs(pen - pen_t) < 1e-12


def test_gram_schmidt_orthogonalizes_and_keeps_span(rng):
    M = rng.standard_normal((5, 12))
    Q = gram_schmidt(M)
    G = Q @ Q.T
    assert np.max(np.abs(G - np.diag(np.diag(G)))) < 1e-10
    pm = np.linalg.pinv(M) @ M
    pq = np.linalg.pinv(Q) @ Q
    assert np.max(np.abs(pm - pq)) < 1e-9


def test_gram_schmidt_leaves_orthogonal_rows_alone():
    M = np.array([[2.0, 0.0, 0.0], [0.0, 3.0, 0.0]])
    assert np.array_equal(gram_schmidt(M), M)


def test_gram_schmidt_detects_dependence():
    M = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(DegeneracyError):
        gram_schmidt(M)


# --- optimizer --------------------------------------------------------------------

def test_adam_first_step_hand_computed():
    p = {"w": np.array([1.0])}
    g = {"w": np.array([0.5])}
    cfg = TrainConfig(learning_rate=0.1)
    adam_step(p, g, AdamState(), cfg)
    # first bias-corrected step is lr * g/(|g| + eps) = lr, up to eps
    assert abs(p["w"][0] - 0.9) < 1e-7


def test_adam_state_threads_across_steps():
    p = {"w": np.array([0.0])}
    state = AdamState()
    cfg = TrainConfig(learning_rate=0.1)
    for _ in range(5):
        adam_step(p, {"w": np.array([1.0])}, state, cfg)
    assert state.t == 5
    assert p["w"][0] < -0.4  # five near-full steps downhill


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), TrainConfig())


# --- training loop -----------------------------------------------------------------

def two_blob_data(rng, n=120):
    X = np.vstack([
        rng.standard_normal((n // 2, 2)) * 0.3 + [1.5, 0.0],
        rng.standard_normal((n // 2, 2)) * 0.3 + [-1.5, 0.0],
    ])
    y = np.repeat([0, 1], n // 2)
    return X, y


def test_train_learns_separable_blobs(rng):
    X, y = two_blob_data(rng)
    net = L.make_mlp([2, 8, 2], seed=3)
    cfg = TrainConfig(learning_rate=0.05, epochs=20, batch_size=32, seed=0)
    trained, history = train(net, (X, y), cfg)
    assert history[-1]["accuracy"] >= 0.95
    assert history[-1]["loss"] < history[0]["loss"]
    assert {"epoch", "loss", "accuracy", "template_penalty", "filter_penalty"} <= set(history[0])


def test_train_leaves_input_net_untouched(rng):
    X, y = two_blob_data(rng)
    net = L.make_mlp([2, 6, 2], seed=3)
    W0 = net.layers[0].W.copy()
    train(net, (X, y), TrainConfig(epochs=2, seed=0))
    assert np.array_equal(net.layers[0].W, W0)


def test_train_is_seed_reproducible(rng):
    X, y = two_blob_data(rng)
    cfg = TrainConfig(learning_rate=0.05, epochs=4, batch_size=16, seed=7)
    t1, h1 = train(L.make_mlp([2, 6, 2], seed=3), (X, y), cfg)
    t2, h2 = train(L.make_mlp([2, 6, 2], seed=3), (X, y), cfg)
    assert np.array_equal(t1.layers[0].W, t2.layers[0].W)
    assert h1[-1]["loss"] == h2[-1]["loss"]


def test_train_soft_and_beta_modes_run(rng):
    X, y = two_blob_data(rng, n=60)
    for mode, beta in (("soft", 0.5), ("beta", 0.8)):
        cfg = TrainConfig(learning_rate=0.05, epochs=3, batch_size=16,
                          beta_mode=mode, beta=beta, seed=0)
        _, history = train(L.make_mlp([2, 5, 2], seed=1), (X, y), cfg)
        assert np.isfinite(history[-1]["loss"])


def test_train_learnable_beta_moves(rng):
    X, y = two_blob_data(rng, n=80)
    cfg = TrainConfig(learning_rate=0.05, epochs=6, batch_size=16,
                      beta_mode="beta", beta=0.5, beta_learnable=True, seed=0)
    _, history = train(L.make_mlp([2, 6, 2], seed=2), (X, y), cfg)
    assert "betas" in history[-1]
    assert all(0.0 < b < 1.0 for b in history[-1]["betas"])
    assert history[-1]["betas"] != history[0]["betas"]


def test_train_diverges_loudly(rng):
    X, y = two_blob_data(rng, n=40)
    # a step this large overflows the logits to inf and the loss to nan
    cfg = TrainConfig(learning_rate=1e200, epochs=3, batch_size=8, seed=0)
    with pytest.raises(DivergenceError):
        with np.errstate(over="ignore", invalid="ignore"):
            train(L.make_mlp([2, 5, 2], seed=1), (X, y), cfg)


def test_train_template_penalty_shrinks_gram_energy(rng):
    X, y = two_blob_data(rng)
    def run(gamma):
        cfg = TrainConfig(learning_rate=0.05, epochs=12, batch_size=32, gamma=gamma, seed=0)
        trained, _ = train(L.make_mlp([2, 8, 2], seed=3), (X, y), cfg)
        W = trained.layers[-1].W
        G = W @ W.T
        np.fill_diagonal(G, 0.0)
        return float(np.sum(G * G))
    assert run(1.0) < run(0.0)


def test_train_validates_labels(rng):
    net = L.make_mlp([2, 4, 2], seed=0)
    with pytest.raises(DomainError):
        train(net, (np.zeros((3, 2)), np.array([0, 1, 5])), TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(DomainError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(DomainError):
        TrainConfig(beta_mode="warm")
    with pytest.raises(DomainError):
        TrainConfig(beta_mode="beta", beta=1.0)


# --- factorial joint MAP -------------------------------------------------------------

def orthogonal_unit_params(rng, K, R, D):
    """Cross-unit orthogonal slopes via disjoint orthonormal subspaces."""
    basis = np.linalg.qr(rng.standard_normal((D, K * R)))[0].T
    A = np.zeros((K, R, D))
    for k in range(K):
        A[k] = basis[k * R : (k + 1) * R] * (1.0 + rng.random((R, 1)))
    return MasoParams(A, rng.standard_normal((K, R)))


def test_joint_map_matches_brute_force(rng):
    import itertools
    for _ in range(25):
        K, R, D = 3, 2, 8
        p = orthogonal_unit_params(rng, K, R, D)
        z = rng.standard_normal(D)
        sel = joint_map_factorial(p, z)
        best, best_cfg = -np.inf, None
        for cfg in itertools.product(range(R), repeat=K):
            a = sum(p.A[k, cfg[k]] for k in range(K))
            b = sum(p.B[k, cfg[k]] for k in range(K))
            v = float(a @ z + b)
            if v > best:
                best, best_cfg = v, cfg
        assert tuple(sel.codes) == best_cfg


def test_joint_map_requires_orthogonality(rng):
    p = MasoParams(rng.standard_normal((3, 2, 4)), np.zeros((3, 2)))
    with pytest.raises(PreconditionError):
        joint_map_factorial(p, rng.standard_normal(4))


def test_accuracy_counts_argmax_wins():
    net = L.Network([L.Dense(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2))], (2,), 2)
    X = np.array([[2.0, 1.0], [0.0, 3.0], [5.0, -1.0]])
    assert accuracy(net, X, np.array([0, 1, 1])) == pytest.approx(2.0 / 3.0)
