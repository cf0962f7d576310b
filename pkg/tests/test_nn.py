import numpy as np
import pytest

from wefsim.data import Dataset
from wefsim.errors import (PreconditionError, SpecError, TrainingDivergedError,
                           UnsupportedArchitectureError)
from wefsim.nn import (LayerSpec, ModelWeights, TrainConfig, evaluate_accuracy, gradient,
                       init_model, loss, mlp_spec, penultimate_weights, predict, train_local,
                       validate_spec)


def _data(n=40, d=5, c=2, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, d)), rng.integers(0, c, n), c)


def numeric_gradient(model, data, eps=1e-6):
    out = []
    for i, (w, b) in enumerate(model.layers):
        grads = []
        for arr in (w, b):
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + eps
                hi = loss(model, data)
                arr[idx] = old - eps
                lo = loss(model, data)
                arr[idx] = old
                g[idx] = (hi - lo) / (2 * eps)
            grads.append(g)
        out.append(tuple(grads))
    return out


def test_gradient_matches_finite_differences():
    data = _data(12, 4, 3)
    model = init_model(mlp_spec(4, [5, 4], 3), seed=1)
    # move biases off zero so no ReLU sits exactly on its kink
    model = model.map(lambda a: a + 0.01)
    g = gradient(model, data)
    for (gw, gb), (nw, nb) in zip(g.layers, numeric_gradient(model, data)):
        np.testing.assert_allclose(gw, nw, rtol=1e-4, atol=1e-7)
        np.testing.assert_allclose(gb, nb, rtol=1e-4, atol=1e-7)


def test_init_bounds_adult_layer():
    m = init_model(mlp_spec(86, [32], 2), seed=0)
    w = m.layers[0][0]
    assert w.shape == (86, 32)
    assert np.abs(w).max() <= np.sqrt(6 / 118)
    assert not m.layers[0][1].any()


def test_init_is_seeded():
    spec = mlp_spec(6, [4], 2)
    assert init_model(spec, 7).equals(init_model(spec, 7))
    assert not init_model(spec, 7).equals(init_model(spec, 8))


def test_single_sgd_step_equals_manual_update():
    data = _data(8, 3)
    model = init_model(mlp_spec(3, [4], 2), seed=2)
    cfg = TrainConfig(learning_rate=0.1, momentum=0.9, batch_size=8, local_epochs=1)
    final, traj = train_local(model, data, cfg, seed=0)
    want = model - gradient(model, data) * 0.1
    np.testing.assert_allclose(final.flat(), want.flat(), atol=1e-12)
    assert len(traj) == 1


def test_zero_learning_rate_is_identity():
    data = _data()
    model = init_model(mlp_spec(5, [3], 2), seed=0)
    final, traj = train_local(model, data, TrainConfig(learning_rate=0.0, local_epochs=2), seed=0)
    assert final.equals(model)
    assert len(traj) == 2


def test_training_reduces_loss_and_is_deterministic():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, 4))
    data = Dataset(x, (x[:, 0] > 0).astype(np.int64), 2)
    model = init_model(mlp_spec(4, [8], 2), seed=0)
    cfg = TrainConfig(learning_rate=0.1, local_epochs=5)
    a, _ = train_local(model, data, cfg, seed=3)
    b, _ = train_local(model, data, cfg, seed=3)
    assert a.equals(b)
    assert loss(a, data) < loss(model, data)
    assert evaluate_accuracy(a, data) > 0.9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_context():
    data = _data()
    model = init_model(mlp_spec(5, [3], 2), seed=0).map(lambda a: a * 1e200)
    with pytest.raises(TrainingDivergedError) as exc:
        train_local(model, data, TrainConfig(learning_rate=1e10), seed=0, round_index=4,
                    client_id=2)
    assert "round=4" in str(exc.value) and "client=2" in str(exc.value)


def test_predict_ties_go_to_lowest_class():
    m = ModelWeights([(np.zeros((2, 3)), np.zeros(3)), (np.zeros((3, 3)), np.zeros(3))],
                     ["relu", "identity"])
    assert predict(m, np.ones((4, 2))).tolist() == [0, 0, 0, 0]


def test_penultimate_weights():
    m = init_model(mlp_spec(10, [6, 4], 2), seed=0)
    p = penultimate_weights(m)
    assert p.shape == (6, 4)
    p[:] = 0
    assert m.layers[1][0].any()
    single = init_model([LayerSpec(3, 2, "identity")], seed=0)
    with pytest.raises(UnsupportedArchitectureError):
        penultimate_weights(single)


def test_spec_validation():
    with pytest.raises(SpecError):
        validate_spec([LayerSpec(3, 4), LayerSpec(5, 2, "identity")])
    with pytest.raises(SpecError):
        validate_spec([])
    with pytest.raises(SpecError):
        validate_spec([LayerSpec(3, 2, "relu")])


def test_arithmetic_and_shape_checks():
    a = init_model(mlp_spec(3, [2], 2), 0)
    b = init_model(mlp_spec(3, [2], 2), 1)
    np.testing.assert_allclose((a + b - b).flat(), a.flat(), atol=1e-15)
    np.testing.assert_allclose((2 * a).flat(), (a * 2.0).flat())
    with pytest.raises(PreconditionError):
        a + init_model(mlp_spec(3, [4], 2), 0)


def test_data_model_mismatch():
    with pytest.raises(PreconditionError):
        loss(init_model(mlp_spec(3, [2], 2), 0), _data(d=4))


def test_train_config_validation():
    with pytest.raises(PreconditionError):
        TrainConfig(local_epochs=0)
    with pytest.raises(PreconditionError):
        TrainConfig(momentum=1.0)
