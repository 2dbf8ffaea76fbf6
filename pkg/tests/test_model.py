import numpy as np
import pytest

from gdod.combiners import CombinerConfig
from gdod.errors import InvalidInputError
from gdod.model import (
    LossWeights,
    OptimizerState,
    SharedBottomModel,
    TrainState,
    apply_update,
    head_step,
    per_example_shared_gradients,
    train_step,
    uncertainty_weighted_losses,
)
from gdod.numerics import make_rng


def random_model(seed, F=3, K=2, shared=(4, 2), tower=(3,)):
    """Small model with every parameter (biases included) drawn at random.

    Random biases keep pre-activations away from the ReLU kink, where finite
    differences are meaningless.
    """
    rng = make_rng(seed)
    model = SharedBottomModel(F, K, shared, tower, rng)
    model.theta[...] = rng.normal(0, 0.7, model.theta.size)
    for h in model.heads:
        h[...] = rng.normal(0, 0.7, h.size)
    return model, rng


def data(rng, m, F, K):
    return rng.standard_normal((m, F)), (rng.random((m, K)) < 0.5).astype(float)


def central_difference(f, x, h=1e-5):
    out = np.empty(x.size)
    for j in range(x.size):
        old = x[j]
        x[j] = old + h
        up = f()
        x[j] = old - h
        down = f()
        x[j] = old
        out[j] = (up - down) / (2 * h)
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


# -- forward --------------------------------------------------------------------------


def test_zero_parameters_give_one_half():
    model = SharedBottomModel(4, 3)
    assert np.allclose(model.forward(np.ones((5, 4))), 0.5)


def test_hand_set_logit():
    model = SharedBottomModel(1, 1, shared=(1,), tower=(1,))
    # trunk: h = relu(x); tower: relu(h) then logit = ln(3) * that
    model.theta[...] = [1.0, 0.0]
    model.heads[0][...] = [1.0, 0.0, np.log(3.0), 0.0]
    assert model.forward(np.array([[1.0]]))[0, 0] == pytest.approx(0.75, abs=1e-15)


def test_batched_forward_matches_rows():
    model, rng = random_model(0, F=5)
    X = rng.standard_normal((7, 5))
    rows = np.concatenate([model.forward(X[i:i + 1]) for i in range(7)], axis=1)
    assert np.allclose(model.forward(X), rows, atol=1e-12)
    assert np.all((model.forward(10 * X) > 0) & (model.forward(10 * X) < 1))


def test_input_validation():
    model = SharedBottomModel(3, 2)
    with pytest.raises(InvalidInputError):
        model.forward(np.ones((2, 4)))
    with pytest.raises(InvalidInputError):
        model.per_example_gradients(np.ones((2, 3)), np.array([[0, 1], [0.5, 1]]))
    with pytest.raises(InvalidInputError):
        SharedBottomModel.from_profile("huge", 3, 2)


def test_profiles():
    desk = SharedBottomModel.from_profile("desk", 16, 2, make_rng(0))
    assert desk.D == 16 * 32 + 32 + 32 * 16 + 16
    assert desk.heads[0].size == 16 * 8 + 8 + 8 + 1
    paper = SharedBottomModel.from_profile("paper", 16, 2)
    assert paper.D == 16 * 256 + 256 + 256 * 32 + 32


def test_glorot_init_bounds_and_zero_biases():
    model = SharedBottomModel(16, 2, (32, 16), (8,), make_rng(4))
    W1 = model.theta[:16 * 32]
    assert np.max(np.abs(W1)) <= np.sqrt(6 / 48)
    assert np.all(model.theta[16 * 32:16 * 32 + 32] == 0)


# -- gradients ----------------------------------------------------------------------------


def test_per_example_gradients_match_finite_differences():
    for seed in range(5):
        model, rng = random_model(seed)
        X, Y = data(rng, 5, 3, 2)
        shared, heads = model.per_example_gradients(X, Y)
        assert shared.shape == (2, 5, model.D)
        for i in range(2):
            for j in range(5):
                loss = lambda: model.example_losses(X[j:j + 1], Y[j:j + 1])[i, 0]
                assert rel_err(shared[i, j], central_difference(loss, model.theta)) <= 1e-4
                assert rel_err(heads[i][j], central_difference(loss, model.heads[i])) <= 1e-4


def test_task_mean_equals_batch_gradient():
    model, rng = random_model(1, F=6, K=3, shared=(8, 5), tower=(4,))
    X, Y = data(rng, 20, 6, 3)
    shared, heads = model.per_example_gradients(X, Y)
    w = np.array([0.2, 1.0, 3.0])
    g_shared, g_heads = model.batch_gradients(X, Y, w)
    assert np.allclose(w @ shared.mean(axis=1), g_shared, atol=1e-10)
    for i in range(3):
        assert np.allclose(w[i] * heads[i].mean(axis=0), g_heads[i], atol=1e-10)


def test_single_example_and_duplicates():
    model, rng = random_model(2)
    X, Y = data(rng, 1, 3, 2)
    shared, _ = model.per_example_gradients(X, Y)
    g, _ = model.batch_gradients(X, Y, [1.0, 0.0])
    assert np.allclose(shared[0, 0], g, atol=1e-12)
    shared2, _ = model.per_example_gradients(np.repeat(X, 2, axis=0), np.repeat(Y, 2, axis=0))
    assert np.array_equal(shared2[:, 0], shared2[:, 1])


def test_bundle_carries_effective_weights():
    model, rng = random_model(3)
    X, Y = data(rng, 4, 3, 2)
    b = per_example_shared_gradients(model, X, Y, LossWeights("uncertainty", s=[np.log(2.0), 0.0]))
    assert np.allclose(b.task_weights, [0.5, 1.0])
    assert b.per_example.shape == (2, 4, model.D)


# -- optimizers --------------------------------------------------------------------------------


def test_sgd_step():
    theta = apply_update(OptimizerState("sgd", 0.1), np.zeros(2), np.array([1.0, -2.0]))
    assert np.allclose(theta, [-0.1, 0.2])


def test_adam_first_step_closed_form():
    g = np.array([0.3, -2.0, 1e-9, 0.0])
    state = OptimizerState("adam", 1e-3)
    theta = apply_update(state, np.ones(4), g)
    # bias correction makes m_hat = g and v_hat = g^2 on the first step
    assert np.allclose(theta - 1.0, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12, atol=0)
    assert state.t == 1


def test_adam_matches_reference_loop():
    rng = make_rng(0)
    grads = rng.standard_normal((5, 3))
    state = OptimizerState("adam", 0.01)
    theta = np.zeros(3)
    ref = np.zeros(3)
    m = v = np.zeros(3)
    for t, g in enumerate(grads, start=1):
        theta = apply_update(state, theta, g)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert np.allclose(theta, ref, atol=1e-15)


def test_zero_update_leaves_parameters():
    for kind in ("sgd", "adam"):
        theta = np.array([1.0, 2.0])
        assert np.array_equal(apply_update(OptimizerState(kind), theta, np.zeros(2)), theta)


def test_optimizer_validation():
    with pytest.raises(InvalidInputError):
        OptimizerState("rmsprop")
    with pytest.raises(InvalidInputError):
        apply_update(OptimizerState("sgd"), np.zeros(2), np.zeros(3))


def test_head_step_sgd_is_exact_and_leaves_trunk():
    model, rng = random_model(4)
    X, Y = data(rng, 6, 3, 2)
    theta = model.theta.copy()
    heads = [h.copy() for h in model.heads]
    _, g = model.batch_gradients(X, Y)
    head_step(model, X, Y, [OptimizerState("sgd", 0.05) for _ in range(2)])
    assert np.array_equal(model.theta, theta)
    for i in range(2):
        assert np.allclose(model.heads[i], heads[i] - 0.05 * g[i], atol=1e-15)


def test_two_head_steps_follow_the_moved_parameters():
    model, rng = random_model(5)
    X, Y = data(rng, 6, 3, 2)
    ref = [h.copy() for h in model.heads]
    for _ in range(2):
        _, g = model.batch_gradients(X, Y)
        ref = [h - 0.1 * gi for h, gi in zip(ref, g)]
        head_step(model, X, Y, [OptimizerState("sgd", 0.1)] * 2)
        assert all(np.allclose(a, b) for a, b in zip(model.heads, ref))


# -- uncertainty weighting --------------------------------------------------------------------


def test_uncertainty_examples():
    total, w = uncertainty_weighted_losses([1.0, 2.0], [0.0, 0.0])
    assert total == 3.0 and np.allclose(w, 1.0)
    total, w = uncertainty_weighted_losses([1.0, 2.0], [np.log(2.0), 0.0])
    assert total == pytest.approx(2.5 + np.log(2.0))
    total, w = uncertainty_weighted_losses([1.0, 2.0], [50.0, 0.0])
    assert w[0] < 1e-20 and total == pytest.approx(52.0)


def test_loss_weight_validation():
    with pytest.raises(InvalidInputError):
        LossWeights("learned")
    with pytest.raises(InvalidInputError):
        LossWeights("fixed", weights=[1.0, -1.0])


# -- train_step -------------------------------------------------------------------------------------


def test_sum_with_sgd_is_the_joint_gradient_step():
    model, rng = random_model(6)
    X, Y = data(rng, 8, 3, 2)
    g_shared, g_heads = model.batch_gradients(X, Y)
    theta, heads = model.theta.copy(), [h.copy() for h in model.heads]
    state = TrainState.create(OptimizerState("sgd", 0.3), 2)
    diag = train_step(model, X, Y, CombinerConfig("sum"), state, make_rng(0))
    assert np.allclose(model.theta, theta - 0.3 * g_shared, atol=1e-10)
    for i in range(2):
        assert np.allclose(model.heads[i], heads[i] - 0.3 * g_heads[i], atol=1e-10)
    assert diag.update_norm == pytest.approx(np.linalg.norm(g_shared))


def test_gdod_equals_sum_when_gradients_agree():
    model, rng = random_model(7)
    model.heads[1][...] = model.heads[0]
    x = rng.standard_normal((1, 3))
    X, Y = np.repeat(x, 4, axis=0), np.ones((4, 2))
    a, b = SharedBottomModel(3, 2, (4, 2), (3,)), SharedBottomModel(3, 2, (4, 2), (3,))
    for m in (a, b):
        m.theta[...] = model.theta
        m.heads = [h.copy() for h in model.heads]
    for m, name in ((a, "sum"), (b, "gdod")):
        train_step(m, X, Y, CombinerConfig(name, groups=2), TrainState.create(OptimizerState("sgd", 0.1), 2), make_rng(0))
    assert np.allclose(a.theta, b.theta, atol=1e-8)


def test_zero_learning_rate_changes_nothing():
    model, rng = random_model(8)
    X, Y = data(rng, 8, 3, 2)
    theta = model.theta.copy()
    diag = train_step(model, X, Y, CombinerConfig("gdod", groups=4), TrainState.create(OptimizerState("sgd", 0.0), 2), make_rng(0))
    assert np.array_equal(model.theta, theta)
    assert diag.rank > 0 and diag.task_losses.shape == (2,)
    assert 0 <= diag.shared_mass_fraction <= 1


def test_uncertainty_mode_moves_log_variances():
    model, rng = random_model(9)
    X, Y = data(rng, 8, 3, 2)
    lw = LossWeights("uncertainty")
    state = TrainState.create(OptimizerState("sgd", 0.1), 2)
    losses = model.task_losses(X, Y)
    train_step(model, X, Y, CombinerConfig("sum"), state, make_rng(0), lw)
    # d/ds [exp(-s) L + s] at s = 0 is 1 - L
    assert np.allclose(lw.s, -0.1 * (1 - losses))


def test_fixed_weights_scale_the_update():
    model, rng = random_model(10)
    X, Y = data(rng, 8, 3, 2)
    g_shared, _ = model.batch_gradients(X, Y, [0.0, 2.0])
    theta = model.theta.copy()
    train_step(model, X, Y, CombinerConfig("sum"), TrainState.create(OptimizerState("sgd", 1.0), 2), make_rng(0),
               LossWeights("fixed", weights=[0.0, 2.0]))
    assert np.allclose(model.theta, theta - g_shared, atol=1e-10)
