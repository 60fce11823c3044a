"""Trainable per-instance ensemblers over frozen base-model predictions.

Two modes share one training loop:

* ``stacking``: a shared network scores each class column z^(c) (the M
  base-model outputs for class c) and the C scores go through a softmax
  (for regression, C=1, the score is the prediction).
* ``ma`` (model averaging): a deep-set gating network embeds every class
  column with a shared MLP, sums the embeddings, and maps the sum to M
  unnormalized weights. Their softmax gives per-instance simplex weights
  and the prediction is the weighted average of the base models.

Training regularizes with base-model dropout: each step samples one
Bernoulli retention mask shared across the batch, zeroes the dropped
models' inputs (and their MA weights, renormalizing over the survivors),
and scales retained inputs by 1/gamma so the inference-time forward pass
needs no compensation. Everything is deterministic in the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import nn
from .data import MetaDataset, SyntheticSpec, TaskKind, generate_preferred_model
from .errors import ConfigError, NumericError, ShapeError
from .metrics import PROB_CLAMP_HI, PROB_CLAMP_LO

MODE_STACKING = "stacking"
MODE_MA = "ma"

_MASK_RESAMPLE_LIMIT = 100


@dataclass(frozen=True)
class NEConfig:
    """Hyperparameters for one ensembler training run.

    ``dropout_rate`` is the probability delta of dropping a base model;
    the retention probability gamma is 1 - delta. ``layers`` and
    ``hidden_dim`` shape the stacking network; the model-averaging gater
    always uses a 3-layer embedding MLP plus a linear head, so ``layers``
    is ignored in that mode.
    """

    mode: str = MODE_MA
    dropout_rate: float = 0.75
    layers: int = 4
    hidden_dim: int = 32
    steps: int = 10000
    batch_size: int = 2048
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (MODE_STACKING, MODE_MA):
            raise ConfigError(f"mode must be '{MODE_STACKING}' or '{MODE_MA}', got {self.mode!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")

    @property
    def retain_prob(self) -> float:
        return 1.0 - self.dropout_rate


@dataclass
class NEParams:
    """Trained (or freshly initialized) ensembler networks."""

    mode: str
    n_models: int
    net: Optional[nn.DenseNet] = None  # stacking column scorer
    mlp1: Optional[nn.DenseNet] = None  # ma shared column embedding
    mlp2: Optional[nn.DenseNet] = None  # ma gating head

    def parameter_arrays(self) -> List[np.ndarray]:
        if self.mode == MODE_STACKING:
            return self.net.parameters()
        return self.mlp1.parameters() + self.mlp2.parameters()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameter_arrays())


def _stacking_dims(n_models: int, hidden_dim: int, layers: int) -> List[int]:
    return [n_models] + [hidden_dim] * (layers - 1) + [1]


def _ma_dims(n_models: int, hidden_dim: int) -> Tuple[List[int], List[int]]:
    return [n_models, hidden_dim, hidden_dim, hidden_dim], [hidden_dim, n_models]


def param_count(config: NEConfig, n_models: int) -> int:
    """Exact trainable-parameter count; depends on (mode, M, H, L) only,
    never on the number of classes."""

    def count(dims: List[int]) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(dims[:-1], dims[1:]))

    if config.mode == MODE_STACKING:
        return count(_stacking_dims(n_models, config.hidden_dim, config.layers))
    d1, d2 = _ma_dims(n_models, config.hidden_dim)
    return count(d1) + count(d2)


def init_ne_params(config: NEConfig, n_models: int) -> NEParams:
    """Fresh networks for a dataset with ``n_models`` base models,
    deterministic in config.seed."""
    if n_models < 1:
        raise ConfigError(f"need at least one base model, got {n_models}")
    seeds = np.random.SeedSequence(config.seed).generate_state(2)
    if config.mode == MODE_STACKING:
        net = nn.init_dense_net(_stacking_dims(n_models, config.hidden_dim, config.layers), int(seeds[0]))
        return NEParams(mode=MODE_STACKING, n_models=n_models, net=net)
    d1, d2 = _ma_dims(n_models, config.hidden_dim)
    return NEParams(
        mode=MODE_MA,
        n_models=n_models,
        mlp1=nn.init_dense_net(d1, int(seeds[0])),
        mlp2=nn.init_dense_net(d2, int(seeds[1])),
    )


def sample_mask(n_models: int, retain_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli retention mask with at least one survivor.

    All-zero draws are resampled up to 100 times; if every draw still
    comes up empty, one uniformly chosen model is forced on.
    """
    if not 0.0 < retain_prob <= 1.0:
        raise ConfigError(f"retain_prob must lie in (0, 1], got {retain_prob}")
    for _ in range(_MASK_RESAMPLE_LIMIT):
        mask = (rng.random(n_models) < retain_prob).astype(np.float64)
        if mask.any():
            return mask
    mask = np.zeros(n_models)
    mask[int(rng.integers(n_models))] = 1.0
    return mask


def _scaled_inputs(cube: np.ndarray, mask: Optional[np.ndarray], retain_prob: float) -> np.ndarray:
    """Apply the train-time mask and 1/gamma compensation to a (B, M, C) cube."""
    if mask is None:
        return cube
    return cube * (mask / retain_prob)[None, :, None]


def _masked_softmax(scores: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    """Row-wise softmax over the retained entries; masked entries exactly 0."""
    if mask is None:
        return nn.softmax(scores)
    blocked = np.where(mask[None, :] > 0, scores, -np.inf)
    shifted = blocked - blocked.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Forward passes (batched); traces are kept only when gradients are needed
# ---------------------------------------------------------------------------


def _stacking_scores(
    params: NEParams, cube: np.ndarray, mask: Optional[np.ndarray], retain_prob: float
) -> Tuple[np.ndarray, List[nn.ForwardTrace]]:
    x = _scaled_inputs(cube, mask, retain_prob)
    n_classes = cube.shape[2]
    scores = np.empty((cube.shape[0], n_classes))
    traces = []
    for c in range(n_classes):
        out, trace = nn.forward(params.net, x[:, :, c])
        scores[:, c] = out[:, 0]
        traces.append(trace)
    return scores, traces


def _ma_gate(
    params: NEParams, cube: np.ndarray, mask: Optional[np.ndarray], retain_prob: float
) -> Tuple[np.ndarray, List[nn.ForwardTrace], nn.ForwardTrace]:
    x = _scaled_inputs(cube, mask, retain_prob)
    embed = None
    traces1 = []
    for c in range(cube.shape[2]):
        out, trace = nn.forward(params.mlp1, x[:, :, c])
        embed = out if embed is None else embed + out
        traces1.append(trace)
    scores, trace2 = nn.forward(params.mlp2, embed)
    theta = _masked_softmax(scores, mask)
    return theta, traces1, trace2


def _check_cube(params: NEParams, cube: np.ndarray) -> np.ndarray:
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim != 3 or cube.shape[1] != params.n_models:
        raise ShapeError(
            f"prediction cube shape {cube.shape} does not match M={params.n_models}"
        )
    return cube


def forward_stacking(
    params: NEParams,
    z: np.ndarray,
    mask: Optional[np.ndarray] = None,
    retain_prob: float = 1.0,
) -> np.ndarray:
    """Stacking output for one instance z of shape (M, C).

    Returns class probabilities (C,) when C >= 2, or the raw scalar
    prediction when C = 1 (regression).
    """
    cube = _check_cube(params, np.asarray(z, dtype=np.float64)[None, :, :])
    scores, _ = _stacking_scores(params, cube, mask, retain_prob)
    if cube.shape[2] == 1:
        return float(scores[0, 0])
    return nn.softmax(scores)[0]


def forward_ma_weights(
    params: NEParams,
    z: np.ndarray,
    mask: Optional[np.ndarray] = None,
    retain_prob: float = 1.0,
) -> np.ndarray:
    """Per-instance model-averaging weights theta (M,) for one instance (M, C)."""
    cube = _check_cube(params, np.asarray(z, dtype=np.float64)[None, :, :])
    theta, _, _ = _ma_gate(params, cube, mask, retain_prob)
    return theta[0]


def predict_stacking(params: NEParams, cube: np.ndarray) -> np.ndarray:
    """Inference-path stacking predictions: (N, C) probabilities or (N,)."""
    cube = _check_cube(params, cube)
    scores, _ = _stacking_scores(params, cube, None, 1.0)
    if cube.shape[2] == 1:
        return scores[:, 0]
    return nn.softmax(scores)


def ma_weights(params: NEParams, cube: np.ndarray) -> np.ndarray:
    """Inference-path per-instance weights (N, M); rows are simplex vectors."""
    cube = _check_cube(params, cube)
    theta, _, _ = _ma_gate(params, cube, None, 1.0)
    return theta


def predict_ma(params: NEParams, cube: np.ndarray) -> np.ndarray:
    """Inference-path model-averaging predictions: (N, C) or (N,).

    Classification rows are convex combinations of base-model simplex
    rows, so they sum to 1 up to rounding.
    """
    cube = _check_cube(params, cube)
    theta = ma_weights(params, cube)
    combined = np.einsum("bm,bmc->bc", theta, cube)
    if cube.shape[2] == 1:
        return combined[:, 0]
    return combined


def predict(params: NEParams, cube: np.ndarray) -> np.ndarray:
    """Dispatch to the mode's inference path."""
    if params.mode == MODE_STACKING:
        return predict_stacking(params, cube)
    return predict_ma(params, cube)


# ---------------------------------------------------------------------------
# Training loss and analytic gradients
# ---------------------------------------------------------------------------


def _nll_output_grad(probs: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Clamped mean NLL, per-instance weight u (0 where clamped), true-class p."""
    n = probs.shape[0]
    p_true = probs[np.arange(n), labels]
    clamped = np.clip(p_true, PROB_CLAMP_LO, PROB_CLAMP_HI)
    loss = float(np.mean(-np.log(clamped)))
    inside = (p_true > PROB_CLAMP_LO) & (p_true < PROB_CLAMP_HI)
    u = np.where(inside, 1.0 / n, 0.0)
    return loss, u, clamped


def _training_loss(
    params: NEParams,
    cube: np.ndarray,
    labels: np.ndarray,
    task: TaskKind,
    mask: Optional[np.ndarray],
    retain_prob: float,
) -> float:
    """Forward-only training objective; the finite-difference oracle target."""
    if params.mode == MODE_STACKING:
        scores, _ = _stacking_scores(params, cube, mask, retain_prob)
        if task is TaskKind.CLASSIFICATION:
            probs = nn.softmax(scores)
            loss, _, _ = _nll_output_grad(probs, labels)
            return loss
        resid = scores[:, 0] - labels
        return float(np.mean(resid * resid))
    theta, _, _ = _ma_gate(params, cube, mask, retain_prob)
    combined = np.einsum("bm,bmc->bc", theta, cube)
    if task is TaskKind.CLASSIFICATION:
        loss, _, _ = _nll_output_grad(combined, labels)
        return loss
    resid = combined[:, 0] - labels
    return float(np.mean(resid * resid))


def _loss_and_gradients(
    params: NEParams,
    cube: np.ndarray,
    labels: np.ndarray,
    task: TaskKind,
    mask: Optional[np.ndarray],
    retain_prob: float,
) -> Tuple[float, List[np.ndarray]]:
    """Training loss plus analytic gradients for every parameter array.

    Gradient order matches params.parameter_arrays().
    """
    batch = cube.shape[0]
    n_classes = cube.shape[2]

    if params.mode == MODE_STACKING:
        scores, traces = _stacking_scores(params, cube, mask, retain_prob)
        if task is TaskKind.CLASSIFICATION:
            probs = nn.softmax(scores)
            loss, u, _ = _nll_output_grad(probs, labels)
            onehot = np.zeros_like(probs)
            onehot[np.arange(batch), labels] = 1.0
            dscores = (probs - onehot) * u[:, None]
        else:
            resid = scores[:, 0] - labels
            loss = float(np.mean(resid * resid))
            dscores = (2.0 * resid / batch)[:, None]
        grads = None
        for c in range(n_classes):
            bundle, _ = nn.backward(params.net, traces[c], dscores[:, c : c + 1])
            arrays = bundle.parameters()
            if grads is None:
                grads = arrays
            else:
                grads = [g + a for g, a in zip(grads, arrays)]
        return loss, grads

    theta, traces1, trace2 = _ma_gate(params, cube, mask, retain_prob)
    combined = np.einsum("bm,bmc->bc", theta, cube)
    if task is TaskKind.CLASSIFICATION:
        loss, u, clamped = _nll_output_grad(combined, labels)
        dcombined = np.zeros_like(combined)
        dcombined[np.arange(batch), labels] = -u / clamped
    else:
        resid = combined[:, 0] - labels
        loss = float(np.mean(resid * resid))
        dcombined = (2.0 * resid / batch)[:, None]
    dtheta = np.einsum("bc,bmc->bm", dcombined, cube)
    # Softmax Jacobian restricted to the retained support: masked entries
    # have theta = 0, so their score gradient vanishes exactly.
    dscores = theta * (dtheta - np.sum(theta * dtheta, axis=1, keepdims=True))
    bundle2, dembed = nn.backward(params.mlp2, trace2, dscores)
    grads1 = None
    for c in range(n_classes):
        bundle, _ = nn.backward(params.mlp1, traces1[c], dembed)
        arrays = bundle.parameters()
        if grads1 is None:
            grads1 = arrays
        else:
            grads1 = [g + a for g, a in zip(grads1, arrays)]
    return loss, grads1 + bundle2.parameters()


def train(ds: MetaDataset, config: NEConfig) -> Tuple[NEParams, List[float]]:
    """Fit an ensembler on the validation split of ``ds``.

    Runs config.steps Adam updates. Each step samples a with-replacement
    batch of min(batch_size, N) validation instances and one retention
    mask shared across the batch, then minimizes clamped NLL
    (classification) or MSE (regression). Returns the trained parameters
    and the per-step training-loss trace. Fully deterministic in
    config.seed; the test split is never touched.
    """
    cube = ds.val.predictions
    labels = ds.val.labels
    n = cube.shape[0]
    batch = min(config.batch_size, n)
    gamma = config.retain_prob

    params = init_ne_params(config, ds.n_models)
    state = nn.adam_init(params.parameter_arrays(), learning_rate=config.learning_rate)
    rng = np.random.default_rng(int(np.random.SeedSequence(config.seed).generate_state(3)[2]))

    trace: List[float] = []
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(config.steps):
            idx = rng.integers(0, n, size=batch)
            mask = sample_mask(ds.n_models, gamma, rng)
            loss, grads = _loss_and_gradients(
                params, cube[idx], labels[idx], ds.task, mask, gamma
            )
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at step {step}")
            nn.adam_step_arrays(params.parameter_arrays(), grads, state)
            trace.append(loss)
    return params, trace


# ---------------------------------------------------------------------------
# Diversity diagnostics
# ---------------------------------------------------------------------------


def diversity_limit_oracle(
    retain_prob: float,
    rho_p: float,
    n_models: int,
    n_samples: int = 20000,
    n_masks: int = 4000,
    seed: int = 0,
) -> float:
    """Monte-Carlo ambiguity of a dropout ensemble with correlation weights.

    Draws standardized preferred-model regression data, weights each
    model by its squared sample correlation with the target (normalized
    to a simplex), applies raw Bernoulli retention masks to the weighted
    mean, and averages sum_m theta_m (z_m - zbar)^2 over instances and
    masks. As rho_p -> 1 the result approaches the dropout rate
    1 - retain_prob; with full retention it approaches 0.
    """
    if not 0.0 < retain_prob <= 1.0:
        raise ConfigError(f"retain_prob must lie in (0, 1], got {retain_prob}")
    if n_samples < 2 or n_masks < 1:
        raise ConfigError("need n_samples >= 2 and n_masks >= 1")
    data_seed, mask_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(2))
    ds = generate_preferred_model(
        SyntheticSpec(kind="preferred", n_instances=n_samples, n_models=n_models,
                      rho_p=rho_p, seed=data_seed)
    )
    z = ds.val.predictions[:, :, 0]
    y = ds.val.labels
    rho_hat = (z * y[:, None]).mean(axis=0)
    theta = rho_hat**2
    theta = theta / theta.sum()

    rng = np.random.default_rng(mask_seed)
    masks = (rng.random((n_masks, n_models)) < retain_prob).astype(np.float64)
    # Per instance the spread is A_i - 2*zbar_i*B_i + zbar_i^2 with
    # A = (z*z) @ theta, B = z @ theta and zbar = z @ (mask*theta).
    # Averaging over instances first reduces each mask to O(M^2) work
    # via the second-moment matrix of the predictions.
    n = z.shape[0]
    z_theta = z @ theta
    a_bar = float(((z * z) @ theta).mean())
    cross = (z.T @ z_theta) / n
    second_moment = (z.T @ z) / n
    w = masks * theta
    quad = np.einsum("km,mn,kn->k", w, second_moment, w)
    return a_bar - 2.0 * float((w @ cross).mean()) + float(quad.mean())
