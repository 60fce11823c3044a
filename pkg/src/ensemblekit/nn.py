"""Minimal dense feed-forward networks on float64 numpy arrays.

Everything a small combiner network needs and nothing more: fully
connected layers with rectifier hidden activations and an identity final
layer, hand-derived backpropagation, a bias-corrected Adam optimizer, a
numerically stable softmax, and a central finite-difference gradient
checker used to validate the analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


@dataclass
class DenseNet:
    """Fully connected network.

    ``weights[l]`` has shape (layer_dims[l+1], layer_dims[l]) and
    ``biases[l]`` shape (layer_dims[l+1],). Hidden layers apply a
    rectifier; the final layer is identity so outputs live on the whole
    real line.
    """

    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass
class ForwardTrace:
    """Cached activations from one forward pass, consumed by backward.

    ``activations[0]`` is the input batch; ``activations[l+1]`` is the
    post-activation output of layer l.
    """

    activations: List[np.ndarray]
    single_instance: bool


@dataclass
class GradientBundle:
    """Loss gradients for every parameter of a DenseNet."""

    weight_grads: List[np.ndarray]
    bias_grads: List[np.ndarray]

    def parameters(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for w, b in zip(self.weight_grads, self.bias_grads):
            out.append(w)
            out.append(b)
        return out


def init_dense_net(layer_dims: Sequence[int], seed: int) -> DenseNet:
    """Create a DenseNet with scaled-uniform weights and zero biases.

    Weights for a layer with fan_in inputs are drawn uniformly from
    [-sqrt(6/fan_in), sqrt(6/fan_in)], a rectifier-friendly scale.
    Identical (layer_dims, seed) pairs yield bit-identical parameters.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ConfigError(f"need at least input and output dims, got {layer_dims}")
    if any(d <= 0 for d in dims):
        raise ConfigError(f"layer dims must be positive, got {layer_dims}")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNet(layer_dims=dims, weights=weights, biases=biases)


def forward(net: DenseNet, x: np.ndarray) -> Tuple[np.ndarray, ForwardTrace]:
    """Run the network on one instance (d0,) or a batch (B, d0).

    Returns the output plus a trace of post-activation values for
    backward. Output shape matches the input convention: (d_out,) for a
    single instance, (B, d_out) for a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise ShapeError(
            f"input has shape {np.asarray(x).shape}, expected (..., {net.layer_dims[0]})"
        )
    activations = [x]
    a = x
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        pre = a @ w.T + b
        a = pre if l == last else np.maximum(pre, 0.0)
        activations.append(a)
    trace = ForwardTrace(activations=activations, single_instance=single)
    out = activations[-1][0] if single else activations[-1]
    return out, trace


def backward(
    net: DenseNet, trace: ForwardTrace, output_gradient: np.ndarray
) -> Tuple[GradientBundle, np.ndarray]:
    """Backpropagate a loss gradient through a cached forward pass.

    ``output_gradient`` is dLoss/dOutput with the same shape as the
    forward output. Parameter gradients are summed over the batch, so
    they are exact for any scalar loss of the outputs. Also returns
    dLoss/dInput.
    """
    delta = np.asarray(output_gradient, dtype=np.float64)
    if trace.single_instance:
        delta = delta[None, :]
    out = trace.activations[-1]
    if delta.shape != out.shape:
        raise ShapeError(f"output gradient shape {delta.shape} != output shape {out.shape}")

    weight_grads: List[np.ndarray] = [np.empty(0)] * net.n_layers
    bias_grads: List[np.ndarray] = [np.empty(0)] * net.n_layers
    for l in range(net.n_layers - 1, -1, -1):
        a_prev = trace.activations[l]
        weight_grads[l] = delta.T @ a_prev
        bias_grads[l] = delta.sum(axis=0)
        delta = delta @ net.weights[l]
        if l > 0:
            # a_prev is post-rectifier output of layer l-1: zero entries
            # had non-positive pre-activations, so they block the gradient.
            delta = delta * (a_prev > 0.0)
    input_gradient = delta[0] if trace.single_instance else delta
    return GradientBundle(weight_grads=weight_grads, bias_grads=bias_grads), input_gradient


@dataclass
class AdamState:
    """Moment estimates and hyperparameters for bias-corrected Adam."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moments: List[np.ndarray] = field(default_factory=list)
    second_moments: List[np.ndarray] = field(default_factory=list)


def adam_init(
    params: Sequence[np.ndarray],
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    """Zero-initialized Adam state aligned with a list of parameter arrays."""
    if learning_rate < 0:
        raise ConfigError(f"learning rate must be nonnegative, got {learning_rate}")
    return AdamState(
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        step_count=0,
        first_moments=[np.zeros_like(p) for p in params],
        second_moments=[np.zeros_like(p) for p in params],
    )


def adam_step_arrays(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(state.first_moments) or len(params) != len(grads):
        raise ShapeError("params, grads and Adam state must have matching lengths")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to Adam update")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    state.step_count = t


def adam_step(net: DenseNet, grads: GradientBundle, state: AdamState) -> None:
    """Adam update for a DenseNet whose state was built from net.parameters()."""
    adam_step_arrays(net.parameters(), grads.parameters(), state)


def softmax(values: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis (max is subtracted first)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or v.shape[-1] == 0:
        raise ConfigError("softmax of an empty vector is undefined")
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def finite_difference_gradients(
    loss_fn: Callable[[], float], params: Sequence[np.ndarray], step: float = 1e-5
) -> List[np.ndarray]:
    """Central-difference gradient of a scalar loss w.r.t. parameter arrays.

    ``loss_fn`` must read the arrays in ``params`` (they are perturbed in
    place and restored). This is the independent oracle the analytic
    backward pass is checked against.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            original = flat_p[i]
            flat_p[i] = original + step
            up = loss_fn()
            flat_p[i] = original - step
            down = loss_fn()
            flat_p[i] = original
            flat_g[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def gradient_errors(
    analytic: Sequence[np.ndarray],
    numeric: Sequence[np.ndarray],
    scale_fraction: float = 1e-3,
    floor: float = 1e-5,
) -> Tuple[float, float]:
    """Compare analytic vs numeric gradients.

    Per-element relative error is |a - n| / max(|a|, |n|, d) where the
    denominator floor d = max(floor, scale_fraction * g) and g is the
    largest gradient magnitude across all arrays. The floor keeps
    finite-difference noise on near-zero elements from registering as
    error: central differences cannot resolve loss changes below the
    float64 resolution of the loss itself, so true gradients under
    ~1e-10 legitimately read as zero. A genuinely wrong element, large
    or small, still stands out against the overall gradient scale.

    Returns (max relative error, max absolute error) over all elements.
    """
    scale = 0.0
    pairs = []
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        n = np.asarray(n, dtype=np.float64)
        if a.shape != n.shape:
            raise ShapeError(f"gradient shapes differ: {a.shape} vs {n.shape}")
        pairs.append((a, n))
        if a.size:
            scale = max(scale, float(np.max(np.abs(a))), float(np.max(np.abs(n))))
    denom_floor = max(floor, scale_fraction * scale)
    max_rel = 0.0
    max_abs = 0.0
    for a, n in pairs:
        if not a.size:
            continue
        diff = np.abs(a - n)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), denom_floor)
        max_rel = max(max_rel, float(np.max(diff / denom)))
        max_abs = max(max_abs, float(np.max(diff)))
    return max_rel, max_abs
