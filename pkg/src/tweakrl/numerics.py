"""Dense-network numerics: MLPs with exact reverse-mode gradients, Adam,
Gaussian sampling and Polyak averaging.

Everything here is a pure function over float64 numpy arrays. Parameters are
flat vectors; the layout (per-layer weight matrix then bias) is derived from
an MlpSpec. Gradients are computed by hand-rolled backprop, not a generic
autodiff graph — actors and critics only ever need dL/dparams and dL/dinput.

RNG: numpy's Philox (counter-based, 4x64) wrapped in np.random.Generator.
Normal samples use numpy's ziggurat standard_normal. Seeds therefore
reproduce bit-identically across platforms for a given numpy major version.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    """Shape and activation description of a fully-connected network.

    layer_dims[0] is the input width, layer_dims[-1] the output width.
    """

    layer_dims: tuple
    activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ValueError("MlpSpec needs at least input and output dims")
        if any(d < 1 for d in dims):
            raise ValueError(f"layer dims must be positive, got {dims}")
        if self.activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(
                f"unknown output activation {self.output_activation!r}"
            )

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def layer_shapes(self):
        """List of (rows, cols) per layer; bias length equals rows."""
        dims = self.layer_dims
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    def param_count(self) -> int:
        return sum(r * c + r for r, c in self.layer_shapes())


def make_rng(seed: int) -> np.random.Generator:
    """Seeded Philox generator; the single RNG constructor for the system."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def mlp_init(spec: MlpSpec, seed: int) -> np.ndarray:
    """Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] weights, zero biases."""
    rng = make_rng(seed)
    chunks = []
    for rows, cols in spec.layer_shapes():
        bound = 1.0 / np.sqrt(cols)
        w = rng.uniform(-bound, bound, size=rows * cols)
        chunks.append(w)
        chunks.append(np.zeros(rows))
    return np.concatenate(chunks)


def unpack_params(params: np.ndarray, spec: MlpSpec):
    """Split a flat parameter vector into [(W, b), ...] views."""
    if params.shape != (spec.param_count(),):
        raise ValueError(
            f"expected {spec.param_count()} parameters, got {params.shape}"
        )
    layers = []
    off = 0
    for rows, cols in spec.layer_shapes():
        w = params[off:off + rows * cols].reshape(rows, cols)
        off += rows * cols
        b = params[off:off + rows]
        off += rows
        layers.append((w, b))
    return layers


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z  # identity


def _act_deriv(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def mlp_forward_cached(params: np.ndarray, spec: MlpSpec, x: np.ndarray):
    """Forward pass keeping pre/post activations for the backward pass.

    Accepts a single input (in_dim,) or a batch (B, in_dim).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.in_dim:
        raise ValueError(f"input width {x.shape[-1]} != {spec.in_dim}")
    layers = unpack_params(params, spec)
    acts = [x]
    pre = []
    a = x
    n = len(layers)
    for i, (w, b) in enumerate(layers):
        z = a @ w.T + b
        name = spec.output_activation if i == n - 1 else spec.activation
        a = _act(name, z)
        pre.append(z)
        acts.append(a)
    return a, (acts, pre)


def mlp_forward(params: np.ndarray, spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    """Evaluate the network; pure function of (params, spec, x)."""
    y, _ = mlp_forward_cached(params, spec, x)
    return y


def mlp_backward(params: np.ndarray, spec: MlpSpec, cache, upstream: np.ndarray):
    """Reverse-mode pass for upstream . output.

    Returns (flat param gradient, input gradient). Batched upstream rows are
    summed into the parameter gradient (a batch contributes one scalar loss).
    """
    acts, pre = cache
    layers = unpack_params(params, spec)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != acts[-1].shape:
        raise ValueError(
            f"upstream shape {upstream.shape} != output shape {acts[-1].shape}"
        )
    n = len(layers)
    grad_chunks = [None] * n
    d = upstream
    for i in range(n - 1, -1, -1):
        w, _ = layers[i]
        name = spec.output_activation if i == n - 1 else spec.activation
        dz = d * _act_deriv(name, pre[i], acts[i + 1])
        a_in = acts[i]
        if dz.ndim == 1:
            dw = np.outer(dz, a_in)
            db = dz
        else:
            dw = dz.T @ a_in
            db = dz.sum(axis=0)
        grad_chunks[i] = (dw, db)
        d = dz @ w
    flat = np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grad_chunks])
    return flat, d


def mlp_grad(params: np.ndarray, spec: MlpSpec, x: np.ndarray, upstream: np.ndarray):
    """Gradients of upstream . mlp_forward(params, spec, x) wrt params and x."""
    _, cache = mlp_forward_cached(params, spec, x)
    return mlp_backward(params, spec, cache, upstream)


@dataclass
class AdamState:
    """Per-parameter-vector Adam moments."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray,
              lr: float):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ValueError("parameter/gradient/moment shapes disagree")
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradients passed to adam_step")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


def gaussian_sample(rng: np.random.Generator, mean: np.ndarray, scale: float,
                    dim: int) -> np.ndarray:
    """Draw from N(mean, scale^2 I); scale -> 0 degenerates to the mean."""
    if scale <= 0.0:
        raise ValueError(f"noise scale must be positive, got {scale}")
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (dim,):
        raise ValueError(f"mean shape {mean.shape} != ({dim},)")
    return mean + scale * rng.standard_normal(dim)


def polyak_update(target: np.ndarray, online: np.ndarray, tau: float) -> np.ndarray:
    """target' = (1 - tau) * target + tau * online."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    if target.shape != online.shape:
        raise ValueError("target/online shapes disagree")
    return (1.0 - tau) * target + tau * online
