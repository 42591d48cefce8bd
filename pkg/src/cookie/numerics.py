"""Dense float64 matrix helpers, a fixed-architecture MLP with hand-written
reverse mode, the Adam optimizer, and a central finite-difference checker.

All batches are row-major ``(N, d)`` numpy arrays. Functions never mutate
their inputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, InputError, NumericError


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"


def as_matrix(x, name: str = "array") -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input to output plus one activation per hidden layer.

    The output layer is always affine (identity activation).
    """

    layer_dims: tuple[int, ...]
    activations: tuple[Activation, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise InputError(f"layer_dims needs >= 2 positive entries, got {dims}")
        acts = tuple(Activation(a) for a in self.activations)
        if not acts:
            acts = (Activation.RELU,) * (len(dims) - 2)
        if len(acts) != len(dims) - 2:
            raise InputError(
                f"{len(dims) - 2} hidden layers but {len(acts)} activations given"
            )
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "activations", acts)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def d_out(self) -> int:
        return self.layer_dims[-1]

    def activation(self, layer: int) -> Activation:
        if layer < self.n_layers - 1:
            return self.activations[layer]
        return Activation.IDENTITY

    def n_params(self) -> int:
        return sum(i * o + o for i, o in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def to_json(self) -> dict:
        return {"layer_dims": list(self.layer_dims), "activations": [a.value for a in self.activations]}

    @classmethod
    def from_json(cls, obj: dict) -> "MlpSpec":
        return cls(tuple(obj["layer_dims"]), tuple(obj.get("activations", ())))


@dataclass
class MlpParams:
    """Weights are ``(out, in)``; biases are ``(out,)``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "MlpParams":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check(self, spec: MlpSpec) -> None:
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise DimensionError(f"expected {spec.n_layers} layers, got {len(self.weights)}")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            d_in, d_out = spec.layer_dims[k], spec.layer_dims[k + 1]
            if w.shape != (d_out, d_in) or b.shape != (d_out,):
                raise DimensionError(
                    f"layer {k}: expected weight {(d_out, d_in)} and bias {(d_out,)}, "
                    f"got {w.shape} and {b.shape}"
                )


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """He-normal weights in front of ReLU, Glorot-normal otherwise; zero biases."""
    weights, biases = [], []
    for k in range(spec.n_layers):
        d_in, d_out = spec.layer_dims[k], spec.layer_dims[k + 1]
        if spec.activation(k) is Activation.RELU:
            std = np.sqrt(2.0 / d_in)
        else:
            std = np.sqrt(2.0 / (d_in + d_out))
        weights.append(rng.normal(0.0, std, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return MlpParams(weights, biases)


def _activate(z: np.ndarray, act: Activation) -> np.ndarray:
    if act is Activation.RELU:
        return np.maximum(z, 0.0)
    if act is Activation.TANH:
        return np.tanh(z)
    return z


def _activation_grad(g: np.ndarray, pre: np.ndarray, post: np.ndarray, act: Activation) -> np.ndarray:
    if act is Activation.RELU:
        return g * (pre > 0.0)
    if act is Activation.TANH:
        return g * (1.0 - post * post)
    return g


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations recorded during a forward pass."""

    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    start: int = 0


def forward_layers(spec: MlpSpec, params: MlpParams, pre0: np.ndarray, start: int,
                   first_input: np.ndarray | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Run layers ``start..`` given the pre-activation of layer ``start``.

    Lets callers build the first affine map themselves (e.g. a separable
    score matrix) and reuse the rest of the network.
    """
    cache = ForwardCache(start=start)
    cache.inputs.append(first_input)
    z = pre0
    for k in range(start, spec.n_layers):
        if k > start:
            w, b = params.weights[k], params.biases[k]
            if h.shape[1] != w.shape[1]:
                raise DimensionError(f"layer {k}: input width {h.shape[1]} != {w.shape[1]}")
            cache.inputs.append(h)
            z = h @ w.T + b
        h = _activate(z, spec.activation(k))
        cache.pre.append(z)
        cache.post.append(h)
    return h, cache


def backward_layers(spec: MlpSpec, params: MlpParams, cache: ForwardCache,
                    upstream: np.ndarray) -> tuple[dict[int, tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Reverse of :func:`forward_layers`.

    Returns weight/bias gradients for layers after ``cache.start`` and the
    gradient with respect to the pre-activation of layer ``cache.start``.
    """
    grads = {}
    g = upstream
    start = cache.start
    for idx in range(len(cache.pre) - 1, -1, -1):
        k = start + idx
        dz = _activation_grad(g, cache.pre[idx], cache.post[idx], spec.activation(k))
        if idx == 0:
            return grads, dz
        x = cache.inputs[idx]
        grads[k] = (dz.T @ x, dz.sum(axis=0))
        g = dz @ params.weights[k]
    raise AssertionError("unreachable")


def mlp_forward_cached(spec: MlpSpec, params: MlpParams, batch) -> tuple[np.ndarray, ForwardCache]:
    x = as_matrix(batch, "batch")
    if x.shape[1] != spec.d_in:
        raise DimensionError(f"layer 0: input width {x.shape[1]} != {spec.d_in}")
    pre0 = x @ params.weights[0].T + params.biases[0]
    return forward_layers(spec, params, pre0, 0, first_input=x)


def mlp_backward_cached(spec: MlpSpec, params: MlpParams, cache: ForwardCache,
                        upstream) -> tuple[MlpParams, np.ndarray]:
    g = as_matrix(upstream, "upstream_grad")
    if g.shape != cache.post[-1].shape:
        raise DimensionError(
            f"upstream gradient shape {g.shape} != output shape {cache.post[-1].shape}"
        )
    grads, dz0 = backward_layers(spec, params, cache, g)
    x = cache.inputs[0]
    grads[0] = (dz0.T @ x, dz0.sum(axis=0))
    out = MlpParams([grads[k][0] for k in range(spec.n_layers)],
                    [grads[k][1] for k in range(spec.n_layers)])
    return out, dz0 @ params.weights[0]


def mlp_forward(spec: MlpSpec, params: MlpParams, batch) -> np.ndarray:
    """Evaluate the network on an ``(N, d_in)`` batch."""
    params.check(spec)
    return mlp_forward_cached(spec, params, batch)[0]


def mlp_backward(spec: MlpSpec, params: MlpParams, batch, upstream_grad) -> tuple[MlpParams, np.ndarray]:
    """Gradients of ``sum(upstream_grad * mlp_forward(batch))``.

    Returns ``(param_grads, input_grad)``.
    """
    params.check(spec)
    _, cache = mlp_forward_cached(spec, params, batch)
    return mlp_backward_cached(spec, params, cache, upstream_grad)


def logsumexp_rows(s: np.ndarray) -> np.ndarray:
    mx = s.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(s - mx).sum(axis=1, keepdims=True)))[:, 0]


def softmax_rows(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def l2_normalize_rows(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True) + eps)
    return x / norm


def l2_normalize_rows_backward(x: np.ndarray, upstream: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True) + eps)
    y = x / norm
    return (upstream - y * (upstream * y).sum(axis=1, keepdims=True)) / norm


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: Sequence[np.ndarray], lr: float = 1e-4, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        if lr <= 0:
            raise InputError(f"lr must be > 0, got {lr}")
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, lr, beta1, beta2, eps)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              names: Sequence[str] | None = None) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns new parameters and a new state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError(
            f"{len(params)} params, {len(grads)} grads, {len(state.m)} moment slots"
        )
    if state.lr <= 0:
        raise InputError(f"lr must be > 0, got {state.lr}")
    for k, (p, g, m) in enumerate(zip(params, grads, state.m)):
        label = names[k] if names is not None else f"tensor {k}"
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"{label}: param {p.shape}, grad {g.shape}, moment {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {label}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)


LossAndGrad = Callable[[list[np.ndarray]], tuple[float, Sequence[np.ndarray]]]


def grad_check(loss: LossAndGrad, params: Sequence[np.ndarray], eps: float = 1e-5) -> float:
    """Largest ``|analytic - numeric| / max(1, |analytic|, |numeric|)`` over all entries.

    ``loss(params)`` returns ``(value, grads)``; the numeric side uses central
    differences of ``value`` only.
    """
    if eps <= 0:
        raise InputError(f"eps must be > 0, got {eps}")
    base = [np.array(p, dtype=np.float64, copy=True) for p in params]
    value, analytic = loss(base)
    if not np.isfinite(value):
        raise NumericError(f"loss is non-finite: {value}")
    worst = 0.0
    for k, p in enumerate(base):
        flat = p.reshape(-1)
        a_flat = np.asarray(analytic[k], dtype=np.float64).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up, _ = loss(base)
            flat[idx] = orig - eps
            down, _ = loss(base)
            flat[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"loss is non-finite near tensor {k}, entry {idx}")
            numeric = (up - down) / (2.0 * eps)
            a = a_flat[idx]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
