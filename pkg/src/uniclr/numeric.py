"""Minimal dense numerics: affine layers, GELU, layer norm, residual blocks,
an AdamW optimizer, and a central finite-difference oracle.

Everything is float64 numpy with hand-written backward passes. Layers cache
the inputs of their most recent forward; a backward call consumes that cache,
so forward/backward pairs must not interleave across calls to the same layer.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, EvaluationError, ShapeError

# GELU tanh approximation constants (fixed for cross-platform reproducibility).
_GELU_SCALE = math.sqrt(2.0 / math.pi)  # 0.7978845608028654
_GELU_CUBIC = 0.044715


def init_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def gelu(x: np.ndarray) -> np.ndarray:
    """GELU, tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_SCALE * (x + _GELU_CUBIC * (x * x * x))))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """Elementwise derivative of the tanh-approximated GELU."""
    t = np.tanh(_GELU_SCALE * (x + _GELU_CUBIC * (x * x * x)))
    d_inner = _GELU_SCALE * (1.0 + (3.0 * _GELU_CUBIC) * (x * x))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner


class Linear:
    """y = x @ w + b with cached input for backward."""

    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator):
        self.name = name
        self.n_in = n_in
        self.n_out = n_out
        self.w = init_uniform(rng, n_in, n_out)
        self.b = np.zeros(n_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(
                f"{self.name}: expected input (*, {self.n_in}), got {x.shape}"
            )
        self._x = x
        return x @ self.w + self.b

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        x = self._x
        self.dw += x.T @ d_out
        self.db += d_out.sum(axis=0)
        return d_out @ self.w.T

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def grads(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.w": self.dw, f"{self.name}.b": self.db}

    def zero_grads(self) -> None:
        self.dw[...] = 0.0
        self.db[...] = 0.0


class LayerNorm:
    """Per-row layer normalization with learnable gain and bias."""

    EPS = 1e-5

    def __init__(self, name: str, width: int):
        self.name = name
        self.width = width
        self.g = np.ones(width)
        self.b = np.zeros(width)
        self.dg = np.zeros_like(self.g)
        self.db = np.zeros_like(self.b)
        self._xhat = None
        self._inv_std = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.width:
            raise ShapeError(f"{self.name}: expected width {self.width}, got {x.shape}")
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mu) * inv_std
        self._xhat = xhat
        self._inv_std = inv_std
        return xhat * self.g + self.b

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        xhat, inv_std = self._xhat, self._inv_std
        self.dg += (d_out * xhat).sum(axis=0)
        self.db += d_out.sum(axis=0)
        gy = d_out * self.g
        mean_gy = gy.mean(axis=1, keepdims=True)
        mean_gy_xhat = (gy * xhat).mean(axis=1, keepdims=True)
        return (gy - mean_gy - xhat * mean_gy_xhat) * inv_std

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.g": self.g, f"{self.name}.b": self.b}

    def grads(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.g": self.dg, f"{self.name}.b": self.db}

    def zero_grads(self) -> None:
        self.dg[...] = 0.0
        self.db[...] = 0.0


class GeluLayer:
    """Activation wrapper caching the forward tanh for reuse in backward."""

    def __init__(self):
        self._x = None
        self._t = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        t = np.tanh(_GELU_SCALE * (x + _GELU_CUBIC * (x * x * x)))
        self._t = t
        return 0.5 * x * (1.0 + t)

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        x, t = self._x, self._t
        d_inner = _GELU_SCALE * (1.0 + (3.0 * _GELU_CUBIC) * (x * x))
        return d_out * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner)


class Mlp:
    """Stack of linear layers with GELU between them (none after the last)."""

    def __init__(self, name: str, widths: list[int], rng: np.random.Generator):
        if len(widths) < 2:
            raise ContractError("Mlp needs at least an input and an output width")
        self.name = name
        self.linears = [
            Linear(f"{name}.l{i}", widths[i], widths[i + 1], rng)
            for i in range(len(widths) - 1)
        ]
        self.acts = [GeluLayer() for _ in range(len(self.linears) - 1)]

    @property
    def n_in(self) -> int:
        return self.linears[0].n_in

    @property
    def n_out(self) -> int:
        return self.linears[-1].n_out

    def forward(self, x: np.ndarray) -> np.ndarray:
        for i, lin in enumerate(self.linears):
            x = lin.forward(x)
            if i < len(self.acts):
                x = self.acts[i].forward(x)
        return x

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        for i in reversed(range(len(self.linears))):
            if i < len(self.acts):
                d_out = self.acts[i].backward(d_out)
            d_out = self.linears[i].backward(d_out)
        return d_out

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for lin in self.linears:
            out.update(lin.params())
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for lin in self.linears:
            out.update(lin.grads())
        return out

    def zero_grads(self) -> None:
        for lin in self.linears:
            lin.zero_grads()


class ResidualBlock:
    """out = x + contract(gelu(expand(norm(x)))), widths (d -> k*d -> d)."""

    def __init__(self, name: str, width: int, rng: np.random.Generator, expansion: int = 4):
        self.name = name
        self.width = width
        self.norm = LayerNorm(f"{name}.norm", width)
        self.expand = Linear(f"{name}.fc1", width, expansion * width, rng)
        self.act = GeluLayer()
        self.contract = Linear(f"{name}.fc2", expansion * width, width, rng)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.width:
            raise ShapeError(f"{self.name}: expected width {self.width}, got {x.shape}")
        h = self.norm.forward(x)
        h = self.expand.forward(h)
        h = self.act.forward(h)
        h = self.contract.forward(h)
        return x + h

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        d_branch = self.contract.backward(d_out)
        d_branch = self.act.backward(d_branch)
        d_branch = self.expand.backward(d_branch)
        d_branch = self.norm.backward(d_branch)
        return d_out + d_branch

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for part in (self.norm, self.expand, self.contract):
            out.update(part.params())
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for part in (self.norm, self.expand, self.contract):
            out.update(part.grads())
        return out

    def zero_grads(self) -> None:
        self.norm.zero_grads()
        self.expand.zero_grads()
        self.contract.zero_grads()


# -----------------------------------------------------------------------------
# Parameter store and AdamW
# -----------------------------------------------------------------------------


class ParamStore:
    """Named parameter tensors plus AdamW moment accumulators and step count.

    The arrays in `params` are live references into the owning layers; updates
    mutate them in place.
    """

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = params
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0


def adamw_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    betas: tuple[float, float] = (0.9, 0.98),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> ParamStore:
    """One decoupled-weight-decay AdamW step with bias correction, in place."""
    missing = set(store.params) - set(grads)
    if missing:
        raise ContractError(f"missing gradients for parameters: {sorted(missing)}")
    b1, b2 = betas
    store.step += 1
    t = store.step
    # bias-corrected update computed with in-place temporaries:
    # p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    m_scale = 1.0 / (1.0 - b1**t)
    v_scale = 1.0 / (1.0 - b2**t)
    for key, p in store.params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.shape} for {key}")
        m = store.m[key]
        v = store.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v * v_scale)
        denom += eps
        if weight_decay:
            p -= (lr * weight_decay) * p
        np.divide(m, denom, out=denom)
        denom *= lr * m_scale
        p -= denom
    return store


# -----------------------------------------------------------------------------
# Finite-difference oracle
# -----------------------------------------------------------------------------

FD_EPS = 1e-4  # default central-difference step on float64


def finite_difference_gradient(f, point: np.ndarray, epsilon: float = FD_EPS) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    `f` takes a flat float64 vector and returns a scalar. Raises if f produces
    a non-finite value at any probe point.
    """
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    point = np.asarray(point, dtype=float)
    grad = np.zeros_like(point)
    probe = point.copy()
    for i in range(point.size):
        probe[i] = point[i] + epsilon
        f_plus = f(probe)
        probe[i] = point[i] - epsilon
        f_minus = f(probe)
        probe[i] = point[i]
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise EvaluationError(f"non-finite value at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * epsilon)
    return grad


def flatten_params(params: dict[str, np.ndarray]) -> np.ndarray:
    """Concatenate parameters into one flat vector, in sorted key order."""
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def set_flat_params(params: dict[str, np.ndarray], flat: np.ndarray) -> None:
    """Write a flat vector back into the parameter arrays, in sorted key order."""
    offset = 0
    for k in sorted(params):
        p = params[k]
        p[...] = flat[offset : offset + p.size].reshape(p.shape)
        offset += p.size
    if offset != flat.size:
        raise ShapeError(f"flat vector has {flat.size} entries, parameters need {offset}")


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(1, |a|, |b|), a scale-aware gradient-check metric."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
