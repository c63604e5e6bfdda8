"""Differentiable building blocks with hand-derived backward passes.

Every layer works on batched feature tensors of shape (B, N, C): B samples,
N joints, C channels. Parameters are 2-D matrices; vector parameters (gains,
biases) are stored as (1, C) rows so checkpoints carry a uniform layout.
Gradients accumulate into Parameter.grad until zero_grad(), and every
backward here is audited against central finite differences in the tests.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .tensor import Rng, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
LN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
Q_INIT_SCALE = 0.01


class Parameter:
    """A named trainable matrix with a gradient buffer and optimizer slots."""

    __slots__ = ("name", "value", "grad", "m", "v", "vhat")

    def __init__(self, name: str, value: np.ndarray):
        value = np.ascontiguousarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"parameter '{name}' must be 2-D, got {value.shape}")
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = None
        self.v = None
        self.vhat = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def _batched(x: np.ndarray):
    """Promote (N, C) to (1, N, C); remember whether to squeeze on the way out."""
    if x.ndim == 2:
        return x[None, :, :], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"expected 2-D or 3-D input, got ndim={x.ndim}")


def _flat_matmul(x3: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(B, N, C) @ (C, D) as one flat GEMM."""
    b, n, c = x3.shape
    return (x3.reshape(b * n, c) @ w).reshape(b, n, w.shape[1])


def _accum_weight_grad(x3: np.ndarray, g3: np.ndarray) -> np.ndarray:
    """Sum over batch and joints of x^T g; the weight gradient of x @ w."""
    b, n, c = x3.shape
    return x3.reshape(b * n, c).T @ g3.reshape(b * n, -1)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def gelu(x: np.ndarray) -> np.ndarray:
    """Exact-erf GELU: x * Phi(x)."""
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """d/dx of x * Phi(x) = Phi(x) + x * pdf(x)."""
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return cdf + x * pdf


class Gelu:
    """Caching wrapper so blocks can run backward without re-deriving inputs."""

    def __init__(self):
        self._x = None

    def forward(self, x):
        self._x = x
        return gelu(x)

    def backward(self, g):
        return g * gelu_grad(self._x)


# ---------------------------------------------------------------------------
# normalization and dropout
# ---------------------------------------------------------------------------

class LayerNorm:
    """Per-row normalization over the channel axis, then a learned affine."""

    def __init__(self, dim: int, name: str):
        self.dim = dim
        self.name = name
        self.gain = Parameter(f"{name}.gain", np.ones((1, dim)))
        self.bias = Parameter(f"{name}.bias", np.zeros((1, dim)))

    def params(self):
        return [self.gain, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"{self.name}: expected {self.dim} channels, got {x.shape[-1]}")
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._inv_std = 1.0 / np.sqrt(var + LN_EPS)
        self._xhat = (x - mu) * self._inv_std
        return self._xhat * self.gain.value + self.bias.value

    def backward(self, g: np.ndarray) -> np.ndarray:
        xhat = self._xhat
        self.gain.grad += (g * xhat).sum(axis=tuple(range(g.ndim - 1))).reshape(1, -1)
        self.bias.grad += g.sum(axis=tuple(range(g.ndim - 1))).reshape(1, -1)
        dxhat = g * self.gain.value
        mean_d = dxhat.mean(axis=-1, keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return self._inv_std * (dxhat - mean_d - xhat * mean_dx)


class BatchNorm:
    """Per-channel normalization over every row in the batch (all B*N rows).

    Training mode uses the batch statistics and updates the running buffers
    with momentum 0.1; eval mode normalizes with the running buffers.
    """

    def __init__(self, dim: int, name: str):
        self.dim = dim
        self.name = name
        self.gain = Parameter(f"{name}.gain", np.ones((1, dim)))
        self.bias = Parameter(f"{name}.bias", np.zeros((1, dim)))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def params(self):
        return [self.gain, self.bias]

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        if x.shape[-1] != self.dim:
            raise ShapeError(f"{self.name}: expected {self.dim} channels, got {x.shape[-1]}")
        self._training = training
        if training:
            if x.ndim == 3 and x.shape[0] < 2:
                raise ValueError(f"{self.name}: training mode needs batch size >= 2")
            axes = tuple(range(x.ndim - 1))
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = (1 - BN_MOMENTUM) * self.running_mean + BN_MOMENTUM * mu
            self.running_var = (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * var
        else:
            mu = self.running_mean
            var = self.running_var
        self._inv_std = 1.0 / np.sqrt(var + BN_EPS)
        self._xhat = (x - mu) * self._inv_std
        return self._xhat * self.gain.value + self.bias.value

    def backward(self, g: np.ndarray) -> np.ndarray:
        xhat = self._xhat
        axes = tuple(range(g.ndim - 1))
        self.gain.grad += (g * xhat).sum(axis=axes).reshape(1, -1)
        self.bias.grad += g.sum(axis=axes).reshape(1, -1)
        dxhat = g * self.gain.value
        if not self._training:
            return dxhat * self._inv_std
        mean_d = dxhat.mean(axis=axes, keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=axes, keepdims=True)
        return self._inv_std * (dxhat - mean_d - xhat * mean_dx)


class Dropout:
    """Inverted dropout: survivors scaled by 1/(1-p); identity in eval mode."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self._mask = None

    def forward(self, x: np.ndarray, training: bool, rng: Rng = None) -> np.ndarray:
        if not training or self.p == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs an rng")
        self._mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self._mask

    def backward(self, g: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return g
        return g * self._mask


# ---------------------------------------------------------------------------
# graph-aware layers
# ---------------------------------------------------------------------------

class ModulatedAdjacency:
    """Normalized adjacency plus a learned additive offset.

    The modulated matrix is recomputed on every read so optimizer updates to
    q are always visible; it is never renormalized or symmetrized.
    """

    def __init__(self, base: np.ndarray, q: Parameter):
        if base.shape != q.value.shape:
            raise ShapeError(f"modulation shape {q.value.shape} does not match base {base.shape}")
        self.base = base
        self.q = q

    @classmethod
    def create(cls, base: np.ndarray, rng: Rng, name: str) -> "ModulatedAdjacency":
        q = Parameter(name, rng.uniform(-Q_INIT_SCALE, Q_INIT_SCALE, base.shape))
        return cls(base, q)

    def modulated(self) -> np.ndarray:
        return self.base + self.q.value

    def params(self):
        return [self.q]


class WjLayer:
    """One learned damped-Jacobi propagation step over the joint graph.

    forward(h, x0) = h@w1 - omega_mod*(h@w2)
                     + (1-alpha)*omega_mod*(A_mod@(h@w2))
                     + alpha*omega_mod*(x0@w3)

    omega_mod is a per-joint, per-channel multiplier playing the role the
    scalar relaxation factor plays in the solver; x0 is the unfiltered
    skeleton embedding, re-injected at every layer.
    """

    def __init__(self, w1: Parameter, w2: Parameter, w3: Parameter,
                 omega_mod: Parameter, adj: ModulatedAdjacency, alpha: float):
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        n = adj.base.shape[0]
        c_in, c_out = w1.shape
        if w2.shape != (c_in, c_out):
            raise ShapeError(f"w2 shape {w2.shape} != w1 shape {w1.shape}")
        if w3.shape[1] != c_out:
            raise ShapeError(f"w3 output dim {w3.shape[1]} != {c_out}")
        if omega_mod.shape != (n, c_out):
            raise ShapeError(f"omega_mod shape {omega_mod.shape} != ({n}, {c_out})")
        self.w1, self.w2, self.w3, self.omega_mod = w1, w2, w3, omega_mod
        self.adj = adj
        self.alpha = alpha
        self.c_in = c_in
        self.c_out = c_out

    @classmethod
    def create(cls, n: int, c_in: int, c_out: int, f: int,
               adj: ModulatedAdjacency, alpha: float, rng: Rng, name: str) -> "WjLayer":
        w1 = Parameter(f"{name}.w1", glorot_uniform(rng, c_in, c_out, (c_in, c_out)))
        w2 = Parameter(f"{name}.w2", glorot_uniform(rng, c_in, c_out, (c_in, c_out)))
        w3 = Parameter(f"{name}.w3", glorot_uniform(rng, f, c_out, (f, c_out)))
        omega = Parameter(f"{name}.omega", np.ones((n, c_out)))
        return cls(w1, w2, w3, omega, adj, alpha)

    def params(self):
        return [self.w1, self.w2, self.w3, self.omega_mod]

    def forward(self, h: np.ndarray, x0: np.ndarray) -> np.ndarray:
        h, squeeze = _batched(h)
        x0, _ = _batched(x0)
        if h.shape[-1] != self.c_in:
            raise ShapeError(f"expected {self.c_in} input channels, got {h.shape[-1]}")
        if x0.shape[-1] != self.w3.shape[0]:
            raise ShapeError(f"x0 has {x0.shape[-1]} channels, w3 expects {self.w3.shape[0]}")
        a_mod = self.adj.modulated()
        t2 = _flat_matmul(h, self.w2.value)
        at2 = np.matmul(a_mod, t2)
        t3 = _flat_matmul(x0, self.w3.value)
        om = self.omega_mod.value
        out = _flat_matmul(h, self.w1.value) \
            - om * t2 + (1.0 - self.alpha) * (om * at2) + self.alpha * (om * t3)
        self._cache = (h, x0, t2, at2, t3, a_mod)
        self._squeeze = squeeze
        return out[0] if squeeze else out

    def backward(self, g: np.ndarray):
        """Returns (dh, dx0) and accumulates parameter gradients."""
        g, _ = _batched(g)
        h, x0, t2, at2, t3, a_mod = self._cache
        a = self.alpha
        om = self.omega_mod.value
        og = om * g
        self.w1.grad += _accum_weight_grad(h, g)
        self.omega_mod.grad += (g * (-t2 + (1.0 - a) * at2 + a * t3)).sum(axis=0)
        atog = np.matmul(a_mod.T, og)
        bracket = -og + (1.0 - a) * atog
        self.w2.grad += _accum_weight_grad(h, bracket)
        self.w3.grad += _accum_weight_grad(x0, a * og)
        self.adj.q.grad += (1.0 - a) * np.matmul(og, np.swapaxes(t2, 1, 2)).sum(axis=0)
        dh = _flat_matmul(g, self.w1.value.T) + _flat_matmul(bracket, self.w2.value.T)
        dx0 = _flat_matmul(a * og, self.w3.value.T)
        if self._squeeze:
            return dh[0], dx0[0]
        return dh, dx0


def wj_forward(layer: WjLayer, h: np.ndarray, x0: np.ndarray) -> np.ndarray:
    return layer.forward(h, x0)


class JointMixingMlp:
    """Mixes information across joints within each channel.

    Normalizes per joint, rotates to channel-major, applies the two learned
    joint-space maps around a GELU, rotates back, and adds the skip:

        out = h + (w6 @ gelu(w5 @ LN(h)^T))^T
    """

    def __init__(self, n: int, f: int, rng: Rng, name: str):
        self.n = n
        self.f = f
        self.ln = LayerNorm(f, f"{name}.ln")
        self.w5 = Parameter(f"{name}.w5", glorot_uniform(rng, f, n, (n, f)))
        self.w6 = Parameter(f"{name}.w6", glorot_uniform(rng, n, f, (f, n)))

    def params(self):
        return self.ln.params() + [self.w5, self.w6]

    def forward(self, h: np.ndarray) -> np.ndarray:
        h, squeeze = _batched(h)
        hn = self.ln.forward(h)
        a1 = np.matmul(self.w5.value, np.swapaxes(hn, 1, 2))
        s = gelu(a1)
        a2 = np.matmul(self.w6.value, s)
        out = h + np.swapaxes(a2, 1, 2)
        self._cache = (hn, a1, s)
        self._squeeze = squeeze
        return out[0] if squeeze else out

    def backward(self, g: np.ndarray) -> np.ndarray:
        g, _ = _batched(g)
        hn, a1, s = self._cache
        da2 = np.swapaxes(g, 1, 2)
        self.w6.grad += np.matmul(da2, np.swapaxes(s, 1, 2)).sum(axis=0)
        ds = np.matmul(self.w6.value.T, da2)
        da1 = ds * gelu_grad(a1)
        self.w5.grad += np.matmul(da1, hn).sum(axis=0)
        dhn = np.swapaxes(np.matmul(self.w5.value.T, da1), 1, 2)
        dh = g + self.ln.backward(dhn)
        return dh[0] if self._squeeze else dh


class WjBlock:
    """Two stacked propagation layers mixing across channels: F -> R -> F.

    Each half runs propagate -> batch norm -> GELU -> dropout; both halves
    share one modulated adjacency. The caller adds any outer skip.
    """

    def __init__(self, n: int, f: int, r: int, adj: ModulatedAdjacency,
                 alpha: float, dropout_p: float, rng: Rng, name: str):
        self.wj1 = WjLayer.create(n, f, r, f, adj, alpha, rng, f"{name}.wj1")
        self.bn1 = BatchNorm(r, f"{name}.bn1")
        self.wj2 = WjLayer.create(n, r, f, f, adj, alpha, rng, f"{name}.wj2")
        self.bn2 = BatchNorm(f, f"{name}.bn2")
        self.act1 = Gelu()
        self.act2 = Gelu()
        self.drop1 = Dropout(dropout_p)
        self.drop2 = Dropout(dropout_p)

    def params(self):
        return (self.wj1.params() + self.bn1.params()
                + self.wj2.params() + self.bn2.params())

    def batch_norms(self):
        return [self.bn1, self.bn2]

    def forward(self, u: np.ndarray, x0: np.ndarray, training: bool = False,
                rng: Rng = None) -> np.ndarray:
        p = self.wj1.forward(u, x0)
        p = self.act1.forward(self.bn1.forward(p, training))
        p = self.drop1.forward(p, training, rng)
        q = self.wj2.forward(p, x0)
        q = self.act2.forward(self.bn2.forward(q, training))
        return self.drop2.forward(q, training, rng)

    def backward(self, g: np.ndarray):
        """Returns (du, dx0)."""
        g = self.bn2.backward(self.act2.backward(self.drop2.backward(g)))
        dp, dx0_b = self.wj2.backward(g)
        dp = self.bn1.backward(self.act1.backward(self.drop1.backward(dp)))
        du, dx0_a = self.wj1.backward(dp)
        return du, dx0_a + dx0_b


class RegressionHead:
    """LayerNorm followed by a linear map to 3-D joint coordinates."""

    def __init__(self, f: int, rng: Rng, name: str, out_dim: int = 3):
        self.ln = LayerNorm(f, f"{name}.ln")
        self.w = Parameter(f"{name}.w", glorot_uniform(rng, f, out_dim, (f, out_dim)))
        self.b = Parameter(f"{name}.b", np.zeros((1, out_dim)))

    def params(self):
        return self.ln.params() + [self.w, self.b]

    def forward(self, z: np.ndarray) -> np.ndarray:
        z, squeeze = _batched(z)
        zn = self.ln.forward(z)
        self._zn = zn
        self._squeeze = squeeze
        out = _flat_matmul(zn, self.w.value) + self.b.value
        return out[0] if squeeze else out

    def backward(self, g: np.ndarray) -> np.ndarray:
        g, _ = _batched(g)
        self.w.grad += _accum_weight_grad(self._zn, g)
        self.b.grad += g.sum(axis=(0, 1)).reshape(1, -1)
        dz = self.ln.backward(_flat_matmul(g, self.w.value.T))
        return dz[0] if self._squeeze else dz


# ---------------------------------------------------------------------------
# finite-difference audit harness
# ---------------------------------------------------------------------------

def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def gradcheck(loss_fn, tensors: dict, analytic: dict, h: float = 1e-5) -> dict:
    """Audit analytic gradients against central finite differences.

    loss_fn recomputes the scalar probe loss from the tensors' current values
    (any randomness inside must be frozen by the caller). Returns the max
    relative error per tensor; failures are reported, never raised.
    """
    report = {}
    for name, arr in tensors.items():
        ana = np.asarray(analytic[name]).reshape(-1)
        worst = 0.0
        for k in range(arr.size):
            orig = arr.flat[k]
            arr.flat[k] = orig + h
            loss_plus = loss_fn()
            arr.flat[k] = orig - h
            loss_minus = loss_fn()
            arr.flat[k] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            worst = max(worst, relative_error(ana[k], numeric))
        report[name] = worst
    return report
