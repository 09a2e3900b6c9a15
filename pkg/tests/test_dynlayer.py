import tracemalloc

import numpy as np
import pytest

from fdutil import assert_fd_match

from dppnet import hashing
from dppnet.dynlayer import dyn_backward, dyn_forward, materialize_weights
from dppnet.errors import ShapeError
from dppnet.hashing import HashSpec


def random_instance(rng, max_dim=64):
    spec = HashSpec(
        out_dim=int(rng.integers(1, max_dim + 1)),
        in_dim=int(rng.integers(1, max_dim + 1)),
        num_candidates=int(rng.integers(1, max_dim + 1)),
    )
    b = int(rng.integers(1, 5))
    x = rng.normal(size=(b, spec.in_dim))
    p = rng.normal(size=(b, spec.num_candidates))
    bias = rng.normal(size=spec.out_dim)
    return spec, x, p, bias


def dense_oracle_forward(x, p, bias, spec):
    return np.stack([materialize_weights(p[i], spec) @ x[i] + bias for i in range(len(x))])


def dense_oracle_backward(x, p, d_out, spec):
    """Gradients computed from the explicit weight grids."""
    buckets = hashing.bucket_grid(spec)
    signs = hashing.sign_grid(spec).astype(np.float64)
    b = len(x)
    dx = np.zeros_like(x)
    dp = np.zeros_like(p)
    for i in range(b):
        w = materialize_weights(p[i], spec)
        dx[i] = w.T @ d_out[i]
        dw = np.outer(d_out[i], x[i])  # dL/dw[m,n] = delta_m * x_n
        for k in range(spec.num_candidates):
            dp[i, k] = (dw * signs)[buckets == k].sum()
    return dx, dp, d_out.sum(axis=0)


def test_zero_candidates_give_bias():
    spec = HashSpec(out_dim=3, in_dim=4, num_candidates=5)
    bias = np.array([1.0, -2.0, 0.5])
    x = np.random.default_rng(0).normal(size=(6, 4))
    out = dyn_forward(x, np.zeros((6, 5)), bias, spec)
    assert np.array_equal(out, np.tile(bias, (6, 1)))


def test_single_entry_expansion():
    spec = HashSpec(out_dim=1, in_dim=1, num_candidates=1)
    sign = hashing.sign(0, 0, spec)
    out = dyn_forward(np.array([2.0]), np.array([3.0]), np.array([0.25]), spec)
    assert out[0] == pytest.approx(sign * 3.0 * 2.0 + 0.25, abs=0)


def test_forward_matches_materialized_oracle():
    rng = np.random.default_rng(1)
    spec = HashSpec(out_dim=8, in_dim=16, num_candidates=4)
    x = rng.normal(size=(3, 16))
    p = rng.normal(size=(3, 4))
    bias = rng.normal(size=8)
    got = dyn_forward(x, p, bias, spec)
    want = dense_oracle_forward(x, p, bias, spec)
    assert np.abs(got - want).max() <= 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_forward_backward_match_oracle_random_instances(seed):
    rng = np.random.default_rng(100 + seed)
    for _ in range(5):
        spec, x, p, bias = random_instance(rng)
        d_out = rng.normal(size=(len(x), spec.out_dim))
        assert np.abs(
            dyn_forward(x, p, bias, spec) - dense_oracle_forward(x, p, bias, spec)
        ).max() <= 1e-12
        dx, dp, db = dyn_backward(x, p, d_out, spec)
        ox, op, ob = dense_oracle_backward(x, p, d_out, spec)
        assert np.abs(dx - ox).max() <= 1e-12
        assert np.abs(dp - op).max() <= 1e-12
        assert np.abs(db - ob).max() <= 1e-12


def test_bucket_identity_k1_closed_form():
    # every position shares the single candidate: the gradient is the
    # sign-weighted sum of input x output-delta products
    spec = HashSpec(out_dim=2, in_dim=1, num_candidates=1)
    x = np.array([[1.7]])
    p = np.array([[0.3]])
    d = np.array([[0.9, -0.4]])
    _, dp, _ = dyn_backward(x, p, d, spec)
    s00, s10 = hashing.sign(0, 0, spec), hashing.sign(1, 0, spec)
    expected = s00 * x[0, 0] * d[0, 0] + s10 * x[0, 0] * d[0, 1]
    assert dp[0, 0] == expected


def test_bucket_identity_k2_closed_form():
    spec = HashSpec(out_dim=2, in_dim=2, num_candidates=2)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2))
    p = rng.normal(size=(1, 2))
    d = rng.normal(size=(1, 2))
    _, dp, _ = dyn_backward(x, p, d, spec)
    expected = np.zeros(2)
    for m in range(2):
        for n in range(2):
            k = hashing.bucket(m, n, spec)
            expected[k] += hashing.sign(m, n, spec) * x[0, n] * d[0, m]
    assert np.array_equal(dp[0], expected)


def test_zero_output_gradient_gives_zeros():
    rng = np.random.default_rng(4)
    spec, x, p, bias = random_instance(rng, max_dim=8)
    dx, dp, db = dyn_backward(x, p, np.zeros((len(x), spec.out_dim)), spec)
    assert not dx.any() and not dp.any() and not db.any()


def test_materialize_linearity_exact():
    rng = np.random.default_rng(5)
    spec = HashSpec(out_dim=7, in_dim=5, num_candidates=3)
    p1 = rng.normal(size=3)
    p2 = rng.normal(size=3)
    assert np.array_equal(
        materialize_weights(p1 + p2, spec),
        materialize_weights(p1, spec) + materialize_weights(p2, spec),
    )


def test_materialize_one_hot_places_signs():
    spec = HashSpec(out_dim=6, in_dim=6, num_candidates=3)
    k = 1
    p = np.zeros(3)
    p[k] = 1.0
    w = materialize_weights(p, spec)
    buckets = hashing.bucket_grid(spec)
    signs = hashing.sign_grid(spec)
    assert np.array_equal(w[buckets == k], signs[buckets == k].astype(float))
    assert not w[buckets != k].any()


def test_forward_linear_in_candidates():
    rng = np.random.default_rng(6)
    spec, x, p, bias = random_instance(rng, max_dim=16)
    alpha = 2.5
    base = dyn_forward(x, p, bias, spec)
    scaled = dyn_forward(x, alpha * p, bias, spec)
    assert np.abs(scaled - (alpha * (base - bias) + bias)).max() <= 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(200 + seed)
    spec, x, p, bias = random_instance(rng, max_dim=12)
    c = rng.normal(size=(len(x), spec.out_dim))
    dx, dp, db = dyn_backward(x, p, c, spec)
    eps = 1e-6

    def loss(arr):
        return float((c * dyn_forward(x, p, bias, spec)).sum())

    for target, analytic in ((x, dx), (p, dp), (bias, db)):
        numeric = np.zeros_like(target)
        for idx in np.ndindex(target.shape):
            orig = target[idx]
            target[idx] = orig + eps
            up = loss(target)
            target[idx] = orig - eps
            down = loss(target)
            target[idx] = orig
            numeric[idx] = (up - down) / (2 * eps)
        assert_fd_match(analytic, numeric, rtol=1e-6, atol=1e-8)


def test_shape_errors():
    spec = HashSpec(out_dim=2, in_dim=3, num_candidates=4)
    with pytest.raises(ShapeError):
        dyn_forward(np.zeros(4), np.zeros(4), np.zeros(2), spec)
    with pytest.raises(ShapeError):
        dyn_forward(np.zeros(3), np.zeros(5), np.zeros(2), spec)
    with pytest.raises(ShapeError):
        dyn_forward(np.zeros((2, 3)), np.zeros((3, 4)), np.zeros(2), spec)
    with pytest.raises(ShapeError):
        dyn_backward(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 5)), spec)


def test_materialize_guard():
    spec = HashSpec(out_dim=2048, in_dim=1024, num_candidates=4)
    with pytest.raises(ShapeError, match="guard"):
        materialize_weights(np.zeros(4), spec)


def test_forward_memory_independent_of_grid_size():
    # the layer state is bias + spec; transient peak while streaming must stay
    # far below the grid footprint
    spec = HashSpec(out_dim=1024, in_dim=1024, num_candidates=8)
    x = np.random.default_rng(7).normal(size=(1, 1024))
    p = np.random.default_rng(8).normal(size=(1, 8))
    bias = np.zeros(1024)
    grid_bytes = spec.out_dim * spec.in_dim * 8
    dyn_forward(x, p, bias, spec)  # warm up allocator pools
    tracemalloc.start()
    dyn_forward(x, p, bias, spec)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert peak < grid_bytes / 4

    tracemalloc.start()
    dyn_backward(x, p, np.ones((1, 1024)), spec)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert peak < grid_bytes / 4
