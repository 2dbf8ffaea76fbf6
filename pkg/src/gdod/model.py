"""Shared-bottom multi-task network with exact per-example gradients.

The trunk is a stack of affine + ReLU layers shared by every task; each task
owns a small tower ending in a single sigmoid unit. All parameters live in
flat ``float64`` vectors (``theta`` for the trunk, ``heads[i]`` for tower
``i``) so that combiners and optimizers can treat them as plain vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .combiners import CombinerConfig, GradientBundle, combine
from .errors import InvalidInputError

PROFILES = {
    "desk": {"shared": (32, 16), "tower": (8,)},
    "paper": {"shared": (256, 32), "tower": (16,)},
}

PROB_CLAMP = 1e-12


def _layer_shapes(widths):
    return [(fan_out, fan_in) for fan_in, fan_out in zip(widths[:-1], widths[1:])]


def _n_params(shapes):
    return sum(o * i + o for o, i in shapes)


def _unpack(vec, shapes):
    """(W, b) views into ``vec``; writes through to it."""
    layers, pos = [], 0
    for o, i in shapes:
        W = vec[pos:pos + o * i].reshape(o, i)
        pos += o * i
        b = vec[pos:pos + o]
        pos += o
        layers.append((W, b))
    return layers


def _glorot(vec, shapes, rng):
    for W, b in _unpack(vec, shapes):
        limit = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
        b[...] = 0.0


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(z):
    return np.logaddexp(0.0, z)


class SharedBottomModel:
    def __init__(self, n_features, n_tasks, shared=(32, 16), tower=(8,), rng=None):
        if n_features < 1 or n_tasks < 1:
            raise InvalidInputError("need at least one feature and one task")
        self.n_features = int(n_features)
        self.n_tasks = int(n_tasks)
        self.shared_shapes = _layer_shapes((self.n_features, *shared))
        self.tower_shapes = _layer_shapes((shared[-1], *tower, 1))
        self.theta = np.zeros(_n_params(self.shared_shapes))
        self.heads = [np.zeros(_n_params(self.tower_shapes)) for _ in range(self.n_tasks)]
        if rng is not None:
            _glorot(self.theta, self.shared_shapes, rng)
            for h in self.heads:
                _glorot(h, self.tower_shapes, rng)

    @classmethod
    def from_profile(cls, profile, n_features, n_tasks, rng=None):
        try:
            widths = PROFILES[profile]
        except KeyError:
            raise InvalidInputError(f"unknown model profile {profile!r}") from None
        return cls(n_features, n_tasks, widths["shared"], widths["tower"], rng)

    @property
    def D(self):
        return self.theta.size

    # -- forward ----------------------------------------------------------

    def _check_X(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise InvalidInputError(f"expected inputs of width {self.n_features}, got shape {X.shape}")
        return X

    def _trunk(self, X):
        acts, pre = [X], []
        for W, b in _unpack(self.theta, self.shared_shapes):
            z = acts[-1] @ W.T + b
            pre.append(z)
            acts.append(np.maximum(z, 0.0))
        return acts, pre

    def _tower(self, i, h):
        acts, pre = [h], []
        layers = _unpack(self.heads[i], self.tower_shapes)
        for k, (W, b) in enumerate(layers):
            z = acts[-1] @ W.T + b
            pre.append(z)
            acts.append(z if k == len(layers) - 1 else np.maximum(z, 0.0))
        return acts, pre

    def logits(self, X):
        """Task logits, shape ``K x m``."""
        X = self._check_X(X)
        acts, _ = self._trunk(X)
        return np.stack([self._tower(i, acts[-1])[0][-1][:, 0] for i in range(self.n_tasks)])

    def forward(self, X):
        """Per-task probabilities, shape ``K x m``."""
        return _sigmoid(self.logits(X))

    def example_losses(self, X, Y):
        """Binary cross-entropy of every (task, example) pair, shape ``K x m``."""
        Y = self._check_Y(Y, len(X))
        z = self.logits(X)
        return _softplus(z) - Y.T * z

    def task_losses(self, X, Y):
        return self.example_losses(X, Y).mean(axis=1)

    def _check_Y(self, Y, m):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1 and self.n_tasks == 1:
            Y = Y[:, None]
        if Y.shape != (m, self.n_tasks):
            raise InvalidInputError(f"labels must have shape ({m}, {self.n_tasks}), got {Y.shape}")
        if not np.all((Y == 0.0) | (Y == 1.0)):
            raise InvalidInputError("labels must be 0 or 1")
        return Y

    # -- backward ---------------------------------------------------------

    def per_example_gradients(self, X, Y):
        """Exact per-example gradients of every (task, example) loss.

        Returns ``(shared, heads)``: ``shared`` is ``K x m x D`` (trunk
        parameters), ``heads[i]`` is ``m x D_head`` for tower ``i``.
        """
        X = self._check_X(X)
        Y = self._check_Y(Y, len(X))
        m = len(X)
        t_acts, t_pre = self._trunk(X)
        t_layers = _unpack(self.theta, self.shared_shapes)
        shared = np.empty((self.n_tasks, m, self.D))
        heads = []
        for i in range(self.n_tasks):
            h_acts, h_pre = self._tower(i, t_acts[-1])
            h_layers = _unpack(self.heads[i], self.tower_shapes)
            delta = (_sigmoid(h_pre[-1][:, 0]) - Y[:, i])[:, None]
            head_grads, d_trunk = _backprop(h_layers, h_acts, h_pre, delta)
            heads.append(head_grads)
            shared[i], _ = _backprop(t_layers, t_acts, t_pre, d_trunk * (t_pre[-1] > 0))
        return shared, heads

    def batch_gradients(self, X, Y, task_weights=None):
        """Gradient of ``sum_i w_i * mean_j l_ij`` by ordinary batched backprop.

        Independent of :meth:`per_example_gradients` (no per-example tensors);
        returns ``(shared_grad, [head_grad_i])``.
        """
        X = self._check_X(X)
        Y = self._check_Y(Y, len(X))
        m = len(X)
        w = np.ones(self.n_tasks) if task_weights is None else np.asarray(task_weights, dtype=float)
        t_acts, t_pre = self._trunk(X)
        d_trunk_out = np.zeros_like(t_acts[-1])
        head_grads = []
        for i in range(self.n_tasks):
            h_acts, h_pre = self._tower(i, t_acts[-1])
            layers = _unpack(self.heads[i], self.tower_shapes)
            dz = w[i] * (_sigmoid(h_pre[-1]) - Y[:, i:i + 1]) / m
            grads = []
            for k in range(len(layers) - 1, -1, -1):
                W, _ = layers[k]
                grads.append((dz.T @ h_acts[k]).ravel())
                grads.append(dz.sum(axis=0))
                dh = dz @ W
                dz = dh * (h_pre[k - 1] > 0) if k > 0 else dh
            head_grads.append(_reorder(grads))
            d_trunk_out += dz
        layers = _unpack(self.theta, self.shared_shapes)
        dz = d_trunk_out * (t_pre[-1] > 0)
        grads = []
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            grads.append((dz.T @ t_acts[k]).ravel())
            grads.append(dz.sum(axis=0))
            if k > 0:
                dz = (dz @ W) * (t_pre[k - 1] > 0)
        return _reorder(grads), head_grads


def _reorder(reversed_grads):
    """Flatten [dW_L, db_L, ..., dW_1, db_1] into parameter order."""
    pairs = [reversed_grads[j:j + 2] for j in range(0, len(reversed_grads), 2)][::-1]
    return np.concatenate([np.concatenate(p) for p in pairs])


def _backprop(layers, acts, pre, delta):
    """Per-example backprop through affine layers.

    ``delta`` is dLoss/d(last pre-activation) per example (``m x out``).
    Returns the ``m x n_params`` per-example gradient and
    dLoss/d(input) per example.
    """
    m = delta.shape[0]
    blocks = []
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        blocks.append((np.einsum("mo,mi->moi", delta, acts[k]).reshape(m, -1), delta))
        d_in = delta @ W
        if k > 0:
            delta = d_in * (pre[k - 1] > 0)
    grads = np.concatenate([np.concatenate([gW, gb], axis=1) for gW, gb in blocks[::-1]], axis=1)
    return grads, d_in


# -- optimizers -------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)
    t: int = 0

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("sgd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.kind!r}")
        if self.lr < 0:
            raise InvalidInputError("learning rate must be non-negative")

    def fresh(self):
        return OptimizerState(self.kind, self.lr, self.beta1, self.beta2, self.eps)


def apply_update(state: OptimizerState, theta, u) -> np.ndarray:
    """One optimizer step treating ``u`` as the gradient; returns the new parameters."""
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)
    if theta.shape != u.shape:
        raise InvalidInputError(f"update shape {u.shape} does not match parameters {theta.shape}")
    if state.kind == "sgd":
        state.t += 1
        return theta - state.lr * u
    if state.m is None:
        state.m = np.zeros_like(theta)
        state.v = np.zeros_like(theta)
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * u
    state.v = state.beta2 * state.v + (1 - state.beta2) * u * u
    m_hat = state.m / (1 - state.beta1 ** state.t)
    v_hat = state.v / (1 - state.beta2 ** state.t)
    return theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def head_step(model: SharedBottomModel, X, Y, states, task_weights=None):
    """Ordinary batch-mean gradient step on every tower; the trunk is left alone."""
    _, head_grads = model.batch_gradients(X, Y, task_weights)
    for i, g in enumerate(head_grads):
        model.heads[i][...] = apply_update(states[i], model.heads[i], g)


# -- loss weighting -----------------------------------------------------------


def uncertainty_weighted_losses(raw_losses, s):
    """``sum_i exp(-s_i) L_i + s_i`` and the effective weights ``exp(-s_i)``."""
    raw = np.asarray(raw_losses, dtype=float)
    s = np.asarray(s, dtype=float)
    weights = np.exp(-s)
    return float(weights @ raw + s.sum()), weights


@dataclass
class LossWeights:
    """Fixed task weights, or learnable log-variances ``s`` (uncertainty weighting)."""

    mode: str = "fixed"
    weights: np.ndarray | None = None
    s: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("fixed", "uncertainty"):
            raise InvalidInputError(f"unknown loss weighting mode {self.mode!r}")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
                raise InvalidInputError("fixed task weights must be finite and non-negative")
        if self.s is not None:
            self.s = np.asarray(self.s, dtype=float)

    def effective(self, K):
        if self.mode == "uncertainty":
            if self.s is None:
                self.s = np.zeros(K)
            return np.exp(-self.s)
        return np.ones(K) if self.weights is None else self.weights


# -- training -------------------------------------------------------------------


@dataclass
class TrainState:
    """Optimizer states owned by one training run."""

    shared: OptimizerState
    heads: list
    s: OptimizerState | None = None

    @classmethod
    def create(cls, template: OptimizerState, n_tasks: int):
        return cls(template.fresh(), [template.fresh() for _ in range(n_tasks)], template.fresh())


@dataclass
class StepDiagnostics:
    task_losses: np.ndarray
    shared_mass_fraction: float
    rank: int | None
    update_norm: float
    empty_mask: bool


def per_example_shared_gradients(model: SharedBottomModel, X, Y, loss_weights: LossWeights | None = None) -> GradientBundle:
    shared, _ = model.per_example_gradients(X, Y)
    weights = (loss_weights or LossWeights()).effective(model.n_tasks)
    return GradientBundle(shared, weights)


def train_step(
    model: SharedBottomModel,
    X,
    Y,
    combiner: CombinerConfig,
    state: TrainState,
    rng: np.random.Generator,
    loss_weights: LossWeights | None = None,
) -> StepDiagnostics:
    """One step: combine trunk gradients, update trunk and towers (and ``s``)."""
    loss_weights = loss_weights or LossWeights()
    losses = model.task_losses(X, Y)
    bundle = per_example_shared_gradients(model, X, Y, loss_weights)
    result = combine(combiner, bundle, rng)
    _, head_grads = model.batch_gradients(X, Y, bundle.task_weights)

    model.theta[...] = apply_update(state.shared, model.theta, result.update)
    for i, g in enumerate(head_grads):
        model.heads[i][...] = apply_update(state.heads[i], model.heads[i], g)
    if loss_weights.mode == "uncertainty":
        grad_s = 1.0 - np.exp(-loss_weights.s) * losses
        loss_weights.s = apply_update(state.s, loss_weights.s, grad_s)

    return StepDiagnostics(
        task_losses=losses,
        shared_mass_fraction=result.shared_mass_fraction,
        rank=result.rank,
        update_norm=float(np.linalg.norm(result.update)),
        empty_mask=result.empty_mask,
    )
