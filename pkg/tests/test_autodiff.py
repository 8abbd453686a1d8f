"""Differentiation tests: frozen forward examples, finite-difference checks
against every op's backward, and the accumulation/adjoint invariants."""

import numpy as np
import pytest

from haarmotion import autodiff as ad
from haarmotion import transforms


def fd_scalar(f, arr, step=1e-6):
    """Central finite differences of a scalar function over every entry."""
    out = np.zeros_like(arr)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        out.reshape(-1)[i] = (up - down) / (2.0 * step)
    return out


def rel_err(analytic, fd):
    return np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(analytic)))


# ---------------------------------------------------------------- affine


def test_affine_identity():
    x = ad.Value([[1.5, -2.0, 3.0], [0.0, 4.0, -1.0]])
    p = ad.AffineParams(np.eye(3), np.zeros(3))
    assert np.array_equal(ad.affine(x, p).data, x.data)


def test_affine_hand_example():
    x = ad.Value([[1.0, 2.0]])
    p = ad.AffineParams([[1.0, 1.0], [1.0, -1.0]], [0.0, 1.0])
    assert np.array_equal(ad.affine(x, p).data, [[3.0, 0.0]])


def test_affine_shape_mismatch():
    x = ad.Value(np.ones((2, 3)))
    p = ad.AffineParams(np.ones((3, 4)), np.zeros(3))
    with pytest.raises(ValueError):
        ad.affine(x, p)
    with pytest.raises(ValueError):
        ad.AffineParams(np.ones((2, 2)), np.zeros(3))


def test_affine_fd_all_leaves():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = ad.Value(rng.normal(size=(3, 4)))
        p = ad.AffineParams(rng.normal(size=(5, 4)), rng.normal(size=5))

        def run():
            return ad.sum_all(ad.affine(x, p))

        ad.backward(run())
        for leaf in [p.weight, p.bias, x]:
            fd = fd_scalar(lambda: run().data[0, 0], leaf.data)
            assert rel_err(leaf.grad, fd) < 1e-6


# ------------------------------------------------------------ layer norm


def test_layer_norm_constant_row_maps_to_beta():
    x = ad.Value([[1.0, 1.0, 1.0, 1.0]])
    p = ad.LayerNormParams(np.ones(4), np.zeros(4))
    assert np.array_equal(ad.layer_norm(x, p).data, [[0.0, 0.0, 0.0, 0.0]])
    p2 = ad.LayerNormParams(np.ones(4), np.full(4, 2.5))
    assert np.array_equal(ad.layer_norm(x, p2).data, [[2.5, 2.5, 2.5, 2.5]])


def test_layer_norm_unit_pair_eps_zero():
    x = ad.Value([[-1.0, 1.0]])
    p = ad.LayerNormParams(np.ones(2), np.zeros(2))
    out = ad.layer_norm(x, p, eps=0.0)
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-15)


def test_layer_norm_eps_zero_guard():
    x = ad.Value([[3.0, 3.0, 3.0]])
    p = ad.LayerNormParams(np.ones(3), np.zeros(3))
    with pytest.raises(FloatingPointError):
        ad.layer_norm(x, p, eps=0.0)


def test_layer_norm_validation():
    with pytest.raises(ValueError):
        ad.LayerNormParams(np.ones(3), np.zeros(3), eps=0.0)
    with pytest.raises(ValueError):
        ad.LayerNormParams(np.ones(3), np.zeros(2))
    p = ad.LayerNormParams(np.ones(3), np.zeros(3))
    with pytest.raises(ValueError):
        ad.layer_norm(ad.Value(np.ones((2, 4))), p)
    with pytest.raises(ValueError):
        ad.layer_norm(ad.Value(np.ones((2, 0))), p)


def test_layer_norm_fd():
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        x = ad.Value(rng.normal(size=(4, 8)))
        p = ad.LayerNormParams(rng.normal(size=8), rng.normal(size=8))

        def run():
            return ad.sum_all(ad.layer_norm(x, p))

        ad.backward(run())
        for leaf in [x, p.gamma, p.beta]:
            fd = fd_scalar(lambda: run().data[0, 0], leaf.data)
            assert rel_err(leaf.grad, fd) < 1e-5


def test_layer_norm_composite_grad_check():
    # layer norm sandwiched between affines, per the harness contract
    rng = np.random.default_rng(7)
    x = ad.Value(rng.normal(size=(3, 6)))
    a = ad.AffineParams(rng.normal(size=(6, 6)), rng.normal(size=6))
    ln = ad.LayerNormParams(rng.normal(size=6), rng.normal(size=6))

    def f():
        return ad.sum_all(ad.layer_norm(ad.affine(x, a), ln))

    err = ad.grad_check(f, [x, a.weight, a.bias, ln.gamma, ln.beta])
    assert err < 1e-5


# ---------------------------------------------------------- fixed linear


def test_dct_idct_identity():
    rng = np.random.default_rng(3)
    x = ad.Value(rng.normal(size=(10, 4)).astype(np.float32))
    y = ad.fixed_linear(ad.fixed_linear(x, "dct"), "idct")
    assert np.max(np.abs(y.data - x.data)) < 1e-5


def test_dct_backward_is_transpose_matrix():
    rng = np.random.default_rng(4)
    x = ad.Value(rng.normal(size=(6, 3)))
    out = ad.fixed_linear(x, "dct")
    g = rng.normal(size=out.data.shape)
    ad.backward(out, seed=g)
    d = transforms.dct_matrix(6)
    assert np.allclose(x.grad, d.T @ g, atol=1e-12)


def test_sum_dct_gradient_is_adjoint_of_ones():
    rng = np.random.default_rng(5)
    x = ad.Value(rng.normal(size=(8, 5)))

    def run():
        return ad.sum_all(ad.fixed_linear(x, "dct"))

    ad.backward(run())
    d = transforms.dct_matrix(8)
    assert np.allclose(x.grad, d.T @ np.ones((8, 5)), atol=1e-12)
    fd = fd_scalar(lambda: run().data[0, 0], x.data)
    assert rel_err(x.grad, fd) < 1e-6


def test_haar_in_shape_contract():
    x = ad.Value(np.random.default_rng(6).normal(size=(66, 50)))
    out = ad.fixed_linear(x, "haar_in")
    assert out.data.shape == (132, 25)
    ad.backward(out, seed=np.ones_like(out.data))
    assert x.grad.shape == (66, 50)


def test_haar_fixed_linear_fd():
    for seed in range(5):
        rng = np.random.default_rng(200 + seed)
        x = ad.Value(rng.normal(size=(4, 7)))  # odd width exercises padding

        def run():
            z = ad.fixed_linear(x, "haar_in")
            return ad.sum_all(ad.fixed_linear(z, "haar_out", pad=1))

        ad.backward(run())
        fd = fd_scalar(lambda: run().data[0, 0], x.data)
        assert rel_err(x.grad, fd) < 1e-6
        # pad-aware zoom-out undoes the zoom-in exactly
        assert np.allclose(run().data[0, 0], x.data.sum(), atol=1e-12)


def test_fixed_linear_errors():
    x = ad.Value(np.ones((4, 4)))
    with pytest.raises(ValueError):
        ad.fixed_linear(x, "fft")
    with pytest.raises(ValueError):
        ad.fixed_linear(x, "dct", blocks=3)


# ------------------------------------------------- structural ops + driver


def test_structural_ops_fd():
    for seed in range(5):
        rng = np.random.default_rng(300 + seed)
        x = ad.Value(rng.normal(size=(6, 5)))
        y = ad.Value(rng.normal(size=(5, 3)))

        def run():
            t = ad.transpose(x)  # 5x6
            s = ad.slice_rows(t, 1, 4)  # 3x6
            u = ad.transpose(s)  # 6x3
            v = ad.add(ad.slice_rows(u, 0, 5), y)
            return ad.sum_all(v)

        err = ad.grad_check(run, [x, y])
        assert err < 1e-8


def test_add_shape_mismatch():
    with pytest.raises(ValueError):
        ad.add(ad.Value(np.ones((2, 2))), ad.Value(np.ones((2, 3))))


def test_slice_rows_bounds():
    x = ad.Value(np.ones((4, 2)))
    with pytest.raises(ValueError):
        ad.slice_rows(x, 2, 5)
    with pytest.raises(ValueError):
        ad.slice_rows(x, -1, 2)


def test_backward_requires_seed_for_nonscalar():
    x = ad.Value(np.ones((2, 2)))
    with pytest.raises(ValueError):
        ad.backward(ad.add(x, x))


def test_accumulation_doubles_exactly():
    rng = np.random.default_rng(9)
    x = ad.Value(rng.normal(size=(3, 3)))
    p = ad.AffineParams(rng.normal(size=(3, 3)), rng.normal(size=3))
    out = ad.sum_all(ad.affine(x, p))
    ad.backward(out)
    once = [leaf.grad.copy() for leaf in (x, p.weight, p.bias, out)]
    ad.backward(out)
    for leaf, g1 in zip((x, p.weight, p.bias, out), once):
        assert np.array_equal(leaf.grad, 2.0 * g1)


def test_shared_node_fan_in():
    # y = x + x must send gradient 2 to x
    x = ad.Value([[1.0, 2.0]])
    ad.backward(ad.sum_all(ad.add(x, x)))
    assert np.array_equal(x.grad, [[2.0, 2.0]])


def test_zero_grads():
    x = ad.Value(np.ones((2, 2)))
    ad.backward(ad.sum_all(x))
    ad.zero_grads([x])
    assert np.array_equal(x.grad, np.zeros((2, 2)))


def test_grad_check_trivial_sum():
    # small magnitudes keep the difference quotient clear of cancellation noise
    x = ad.Value(np.random.default_rng(11).normal(size=(4, 4)) * 1e-2)
    assert ad.grad_check(lambda: ad.sum_all(x), [x]) < 1e-10


# ----------------------------------------------------------- blocked ops


def test_blocked_ops_match_per_sample_loop():
    rng = np.random.default_rng(12)
    batch, rows, cols = 3, 6, 4
    stacked = rng.normal(size=(batch * rows, cols))

    for kind in ["dct", "idct", "haar_in"]:
        whole = ad.fixed_linear(ad.Value(stacked), kind, blocks=batch).data
        parts = [
            ad.fixed_linear(ad.Value(stacked[i * rows : (i + 1) * rows]), kind).data
            for i in range(batch)
        ]
        assert np.array_equal(whole, np.concatenate(parts, axis=0)), kind

    whole = ad.transpose(ad.Value(stacked), blocks=batch).data
    parts = [
        ad.transpose(ad.Value(stacked[i * rows : (i + 1) * rows])).data
        for i in range(batch)
    ]
    assert np.array_equal(whole, np.concatenate(parts, axis=0))

    # gradients agree too
    x = ad.Value(stacked)
    out = ad.fixed_linear(x, "haar_in", blocks=batch)
    g = rng.normal(size=out.data.shape)
    ad.backward(out, seed=g)
    grows = out.data.shape[0] // batch
    for i in range(batch):
        xi = ad.Value(stacked[i * rows : (i + 1) * rows])
        oi = ad.fixed_linear(xi, "haar_in")
        ad.backward(oi, seed=g[i * grows : (i + 1) * grows])
        assert np.allclose(x.grad[i * rows : (i + 1) * rows], xi.grad, atol=1e-12)
