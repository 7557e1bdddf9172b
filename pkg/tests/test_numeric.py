"""Tests for the dense numeric core: layers, AdamW, and the oracle itself."""

import numpy as np
import pytest

from uniclr.errors import ContractError, EvaluationError, ShapeError
from uniclr.gradcheck import check_layers
from uniclr.numeric import (
    FD_EPS, Linear, LayerNorm, ParamStore, ResidualBlock, adamw_step,
    finite_difference_gradient, flatten_params, gelu, gelu_grad,
    relative_error, set_flat_params,
)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


# -----------------------------------------------------------------------------
# affine
# -----------------------------------------------------------------------------


class TestAffine:
    def test_identity_weights(self, rng):
        lin = Linear("l", 2, 2, rng)
        lin.w[...] = np.eye(2)
        lin.b[...] = 0.0
        out = lin.forward(np.array([[1.0, 2.0]]))
        assert np.array_equal(out, [[1.0, 2.0]])

    def test_bias_passthrough(self, rng):
        lin = Linear("l", 2, 2, rng)
        lin.w[...] = rng.normal(size=(2, 2))
        lin.b[...] = [3.0, -1.0]
        out = lin.forward(np.zeros((1, 2)))
        assert np.array_equal(out, [[3.0, -1.0]])

    def test_hand_multiply(self, rng):
        lin = Linear("l", 2, 2, rng)
        lin.w[...] = [[1.0, 2.0], [3.0, 4.0]]
        lin.b[...] = 0.0
        out = lin.forward(np.array([[1.0, 1.0]]))
        assert np.array_equal(out, [[4.0, 6.0]])

    def test_dimension_mismatch(self, rng):
        lin = Linear("l", 3, 2, rng)
        with pytest.raises(ShapeError):
            lin.forward(np.zeros((1, 4)))

    def test_forward_deterministic(self, rng):
        lin = Linear("l", 5, 4, rng)
        x = rng.normal(size=(7, 5))
        assert np.array_equal(lin.forward(x), lin.forward(x))


# -----------------------------------------------------------------------------
# gelu
# -----------------------------------------------------------------------------


class TestGelu:
    def test_zero(self):
        assert gelu(np.array(0.0)) == 0.0

    def test_asymptote(self):
        x = np.array([10.0])
        assert abs(gelu(x)[0] - 10.0) < 1e-6
        assert abs(gelu(np.array([-10.0]))[0]) < 1e-6

    def test_derivative_matches_oracle(self, rng):
        x = rng.uniform(-4.0, 4.0, size=25)
        numeric = finite_difference_gradient(lambda v: float(gelu(v).sum()), x)
        assert np.max(np.abs(gelu_grad(x) - numeric)) < 1e-6


# -----------------------------------------------------------------------------
# residual block
# -----------------------------------------------------------------------------


class TestResidualBlock:
    def test_zero_weights_identity(self, rng):
        blk = ResidualBlock("b", 6, rng)
        blk.expand.w[...] = 0.0
        blk.expand.b[...] = 0.0
        blk.contract.w[...] = 0.0
        blk.contract.b[...] = 0.0
        x = rng.normal(size=(4, 6))
        assert np.array_equal(blk.forward(x), x)

    def test_gradient_matches_oracle(self, rng):
        blk = ResidualBlock("b", 4, rng, expansion=2)
        x = rng.normal(size=(3, 4))
        probe = rng.normal(size=(3, 4))
        params = blk.params()
        point = flatten_params(params).copy()

        def f(flat):
            set_flat_params(params, flat)
            return float((blk.forward(x) * probe).sum())

        blk.zero_grads()
        blk.forward(x)
        blk.backward(probe)
        analytic = flatten_params(blk.grads())
        numeric = finite_difference_gradient(f, point)
        assert relative_error(analytic, numeric) < 1e-5

    def test_preserves_width(self, rng):
        blk = ResidualBlock("b", 5, rng)
        assert blk.forward(rng.normal(size=(9, 5))).shape == (9, 5)

    def test_width_mismatch(self, rng):
        blk = ResidualBlock("b", 5, rng)
        with pytest.raises(ShapeError):
            blk.forward(rng.normal(size=(2, 6)))


# -----------------------------------------------------------------------------
# adamw
# -----------------------------------------------------------------------------


class TestAdamW:
    def test_zero_gradient_no_decay(self):
        p = np.array([1.0, -2.0])
        store = ParamStore({"p": p})
        adamw_step(store, {"p": np.zeros(2)}, lr=0.1)
        assert np.array_equal(p, [1.0, -2.0])
        assert store.step == 1

    def test_descent_direction(self):
        p = np.array([1.0])
        store = ParamStore({"p": p})
        adamw_step(store, {"p": np.array([1.0])}, lr=0.1, weight_decay=0.0)
        assert p[0] < 1.0

    def test_two_step_reference_trace(self):
        # scalar reference computed independently from the update equations
        lr, b1, b2, eps, wd = 0.01, 0.9, 0.98, 1e-8, 0.1
        p_ref, m_ref, v_ref = 1.5, 0.0, 0.0
        grads = [0.3, -0.7]
        for t, g in enumerate(grads, start=1):
            m_ref = b1 * m_ref + (1 - b1) * g
            v_ref = b2 * v_ref + (1 - b2) * g * g
            m_hat = m_ref / (1 - b1**t)
            v_hat = v_ref / (1 - b2**t)
            p_ref = p_ref - lr * wd * p_ref
            p_ref = p_ref - lr * m_hat / (np.sqrt(v_hat) + eps)

        p = np.array([1.5])
        store = ParamStore({"p": p})
        for g in grads:
            adamw_step(store, {"p": np.array([g])}, lr=lr, betas=(b1, b2),
                       eps=eps, weight_decay=wd)
        assert abs(p[0] - p_ref) < 1e-12
        assert store.step == 2

    def test_missing_grad_key(self):
        store = ParamStore({"a": np.zeros(2), "b": np.zeros(2)})
        with pytest.raises(ContractError):
            adamw_step(store, {"a": np.zeros(2)}, lr=0.1)

    def test_lr_zero_is_identity(self, rng):
        p = rng.normal(size=(3, 3))
        orig = p.copy()
        store = ParamStore({"p": p})
        adamw_step(store, {"p": rng.normal(size=(3, 3))}, lr=0.0, weight_decay=0.5)
        assert np.array_equal(p, orig)


# -----------------------------------------------------------------------------
# finite differences
# -----------------------------------------------------------------------------


class TestFiniteDifference:
    def test_quadratic(self):
        grad = finite_difference_gradient(lambda v: float(v[0] ** 2), np.array([3.0]))
        assert abs(grad[0] - 6.0) < 1e-6

    def test_constant(self):
        grad = finite_difference_gradient(lambda v: 7.0, np.arange(4.0))
        assert np.array_equal(grad, np.zeros(4))

    def test_bad_epsilon(self):
        with pytest.raises(ContractError):
            finite_difference_gradient(lambda v: 0.0, np.zeros(1), epsilon=0.0)

    def test_non_finite_value(self):
        with pytest.raises(EvaluationError):
            finite_difference_gradient(lambda v: float("nan"), np.zeros(2))

    def test_default_epsilon(self):
        assert FD_EPS == 1e-4


def test_every_layer_backward_matches_oracle():
    # randomized certification, >=100 trials per layer kind
    rng = np.random.default_rng(7)
    for result in check_layers(trials=100, rng=rng):
        assert result.ok, f"{result.name}: worst {result.worst:.2e}"


def test_flatten_roundtrip(rng):
    params = {"b": rng.normal(size=(2, 3)), "a": rng.normal(size=4)}
    flat = flatten_params(params)
    assert flat.size == 10
    copy = {k: np.zeros_like(v) for k, v in params.items()}
    set_flat_params(copy, flat)
    for k in params:
        assert np.array_equal(copy[k], params[k])
