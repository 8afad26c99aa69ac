import json
import threading

import numpy as np
import pytest

from deeprank.network import (
    NetworkArchitecture,
    NetworkParams,
    backward,
    first_layer_norms,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    params_from_checkpoint,
    save_checkpoint,
)

from gradcheck import max_rel_error, min_kink_distance, numeric_param_grad


def test_init_deterministic():
    arch = NetworkArchitecture(5, (8, 4), 0.1)
    assert init_params(arch, 3).equals(init_params(arch, 3))
    assert not init_params(arch, 3).equals(init_params(arch, 4))


def test_init_depth_zero_shape():
    params = init_params(NetworkArchitecture(3), 0)
    assert [w.shape for w in params.weights] == [(1, 3)]
    assert [b.shape for b in params.biases] == [(1,)]


def test_init_zero_biases_and_bounds():
    arch = NetworkArchitecture(6, (10, 7))
    params = init_params(arch, 1)
    assert all(np.all(b == 0) for b in params.biases)
    for w, fan_in in zip(params.weights, arch.layer_sizes[:-1]):
        assert np.all(np.abs(w) <= np.sqrt(6.0 / fan_in))


def test_architecture_validation():
    with pytest.raises(ValueError):
        NetworkArchitecture(0)
    with pytest.raises(ValueError):
        NetworkArchitecture(3, (0,))
    with pytest.raises(ValueError):
        NetworkArchitecture(3, (2,), dropout_rate=1.0)


def test_forward_linear():
    params = NetworkParams([np.array([[1.0, 2.0]])], [np.array([0.0])])
    assert forward(params, [3.0, 4.0]) == 11.0


def test_forward_relu_clips():
    params = NetworkParams(
        [np.array([[1.0]]), np.array([[1.0]])], [np.array([-1.0]), np.array([0.0])]
    )
    assert forward(params, [0.5]) == 0.0


def test_forward_dimension_mismatch():
    params = init_params(NetworkArchitecture(3, (4,)), 0)
    with pytest.raises(ValueError):
        forward(params, [1.0, 2.0])
    with pytest.raises(ValueError):
        forward_batch(params, np.ones((5, 2)))


def test_depth_zero_exact_inner_product(rng):
    params = init_params(NetworkArchitecture(7), 2)
    params.biases[0][:] = 0.37
    X = rng.normal(size=(20, 7))
    out, _ = forward_batch(params, X)
    np.testing.assert_array_equal(out, X @ params.weights[0][0] + 0.37)


def test_batch_matches_rowwise(rng):
    params = init_params(NetworkArchitecture(4, (6, 5)), 9)
    X = rng.normal(size=(12, 4))
    out, _ = forward_batch(params, X)
    np.testing.assert_allclose(out, [forward(params, x) for x in X], rtol=0, atol=1e-14)
    assert forward_batch(params, X[:1])[0][0] == forward(params, X[0])


def test_eval_is_pure(rng):
    params = init_params(NetworkArchitecture(4, (6,)), 9)
    X = rng.normal(size=(12, 4))
    np.testing.assert_array_equal(forward_batch(params, X)[0], forward_batch(params, X)[0])


def test_zero_dropout_train_equals_eval(rng):
    params = init_params(NetworkArchitecture(4, (6, 3)), 1)
    X = rng.normal(size=(10, 4))
    np.testing.assert_array_equal(
        forward_batch(params, X, 0.0, dropout_seed=5)[0], forward_batch(params, X)[0]
    )


def test_dropout_seeded(rng):
    params = init_params(NetworkArchitecture(4, (16, 8), 0.5), 1)
    X = rng.normal(size=(10, 4))
    a = forward_batch(params, X, 0.5, dropout_seed=11)[0]
    b = forward_batch(params, X, 0.5, dropout_seed=11)[0]
    c = forward_batch(params, X, 0.5, dropout_seed=12)[0]
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_dropout_expectation_matches_eval():
    # one hidden unit feeding the output with unit weight
    params = NetworkParams(
        [np.array([[2.0]]), np.array([[1.0]])], [np.array([0.5]), np.array([0.0])]
    )
    rate = 0.3
    X = np.ones((20000, 1))
    out, _ = forward_batch(params, X, rate, dropout_seed=0)
    eval_value = forward(params, [1.0])
    assert abs(out.mean() - eval_value) / eval_value < 0.02


def test_backward_zero_upstream(rng):
    params = init_params(NetworkArchitecture(3, (5, 4)), 0)
    _, cache = forward_batch(params, rng.normal(size=(6, 3)))
    grads = backward(params, cache, np.zeros(6))
    assert all(np.all(g == 0) for g in grads.arrays())


def test_backward_linear_model():
    params = init_params(NetworkArchitecture(3), 0)
    x = np.array([[0.5, -1.0, 2.0]])
    _, cache = forward_batch(params, x)
    grads = backward(params, cache, np.array([1.0]))
    np.testing.assert_array_equal(grads.weights[0], x)
    np.testing.assert_array_equal(grads.biases[0], [1.0])


def test_backward_rejects_stale_cache(rng):
    params = init_params(NetworkArchitecture(3, (4,)), 0)
    _, cache = forward_batch(params, rng.normal(size=(5, 3)))
    with pytest.raises(ValueError):
        backward(params.copy(), cache, np.ones(5))
    with pytest.raises(ValueError):
        backward(params, cache, np.ones(4))


def _random_case(rng, depth):
    widths = tuple(int(w) for w in rng.integers(1, 9, size=depth))
    arch = NetworkArchitecture(int(rng.integers(1, 6)), widths)
    while True:
        params = init_params(arch, int(rng.integers(1 << 30)))
        for b in params.biases:
            b[:] = rng.normal(scale=0.3, size=b.shape)
        X = rng.normal(size=(int(rng.integers(1, 7)), arch.input_dim))
        if min_kink_distance(params, X) > 1e-4:
            return params, X, rng.normal(size=X.shape[0])


@pytest.mark.parametrize("depth", [0, 1, 2, 3])
def test_backward_matches_finite_differences(rng, depth):
    for _ in range(5):
        params, X, upstream = _random_case(rng, depth)
        _, cache = forward_batch(params, X)
        analytic = backward(params, cache, upstream).arrays()
        numeric = numeric_param_grad(params, lambda p: float(forward_batch(p, X)[0] @ upstream))
        assert max_rel_error(analytic, numeric) < 1e-4


def test_backward_train_mode_finite_differences(rng):
    params, X, upstream = _random_case(rng, 2)
    rate = 0.4

    def objective(p):
        return float(forward_batch(p, X, rate, dropout_seed=3)[0] @ upstream)

    _, cache = forward_batch(params, X, rate, dropout_seed=3)
    analytic = backward(params, cache, upstream).arrays()
    assert max_rel_error(analytic, numeric_param_grad(params, objective)) < 1e-4


def test_first_layer_norms():
    w0 = np.array([[3.0, 0.0, 1.0], [4.0, 0.0, 0.0]])
    params = NetworkParams([w0, np.ones((1, 2))], [np.zeros(2), np.zeros(1)])
    np.testing.assert_array_equal(first_layer_norms(params), [5.0, 0.0, 1.0])
    perm = [2, 0, 1]
    permuted = NetworkParams([w0[:, perm], np.ones((1, 2))], [np.zeros(2), np.zeros(1)])
    np.testing.assert_array_equal(first_layer_norms(permuted), first_layer_norms(params)[perm])


def test_first_layer_norms_depth_zero():
    params = NetworkParams([np.array([[-2.0, 0.5]])], [np.zeros(1)])
    np.testing.assert_array_equal(first_layer_norms(params), [2.0, 0.5])


def test_checkpoint_round_trip(tmp_path, rng):
    arch = NetworkArchitecture(5, (7, 3), 0.2)
    params = init_params(arch, 4)
    for b in params.biases:
        b[:] = rng.normal(size=b.shape) / 3.0
    path = tmp_path / "ck.json"
    save_checkpoint(path, arch, params, seed=4)
    arch2, params2, doc = load_checkpoint(path)
    assert arch2 == arch and params2.equals(params)
    assert doc["format_version"] == 1 and doc["seed"] == 4
    X = rng.normal(size=(30, 5))
    np.testing.assert_array_equal(forward_batch(params, X)[0], forward_batch(params2, X)[0])


def test_checkpoint_rejects_bad_version(tmp_path):
    arch = NetworkArchitecture(2)
    path = tmp_path / "ck.json"
    save_checkpoint(path, arch, init_params(arch, 0))
    doc = json.loads(path.read_text())
    doc["format_version"] = 2
    with pytest.raises(ValueError):
        params_from_checkpoint(doc)


def test_concurrent_eval_forward(rng):
    params = init_params(NetworkArchitecture(6, (32, 16)), 0)
    X = rng.normal(size=(200, 6))
    expected = forward_batch(params, X)[0]
    results = [None] * 8

    def work(k):
        results[k] = forward_batch(params, X)[0]

    threads = [threading.Thread(target=work, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for r in results:
        np.testing.assert_array_equal(r, expected)
