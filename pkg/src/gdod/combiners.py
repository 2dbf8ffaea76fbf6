"""Combine per-task gradients of the shared parameters into one update vector.

``gdod_combine`` splits every task gradient along an orthogonal basis of the
gradient span into a *shared* part (basis directions on which the tasks agree
in sign) and a *conflict* part, and keeps only the shared parts. The other
combiners are the usual comparators: plain sum, PCGrad, MGDA and CAGrad.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import numerics
from .decomposition import BasisMethod, OrthogonalBasis, build_basis, project, reconstruct
from .errors import InvalidInputError

COMBINERS = ("gdod", "wgdod", "pcgrad", "mgda", "cagrad", "sum")


def _task_weights(weights, K):
    if weights is None:
        return np.ones(K)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != (K,):
        raise InvalidInputError(f"expected {K} task weights, got {w.shape[0]}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInputError("task weights must be finite and non-negative")
    return w


@dataclass
class GradientBundle:
    """Per-example gradients of the shared parameters, one ``m x D`` block per task."""

    per_example: np.ndarray  # K x m x D
    task_weights: np.ndarray = None

    def __post_init__(self):
        g = np.asarray(self.per_example, dtype=float)
        if g.ndim != 3 or 0 in g.shape:
            raise InvalidInputError(f"per_example must be a non-empty K x m x D array, got {g.shape}")
        if not np.all(np.isfinite(g)):
            raise InvalidInputError("per-example gradients contain non-finite entries")
        self.per_example = g
        self.task_weights = _task_weights(self.task_weights, g.shape[0])

    @property
    def K(self):
        return self.per_example.shape[0]

    @property
    def m(self):
        return self.per_example.shape[1]

    @property
    def D(self):
        return self.per_example.shape[2]

    def means(self):
        return self.per_example.mean(axis=1)


@dataclass
class GroupedBundle:
    """Average-pooled gradients: ``per_group[i, g]`` is the mean over group ``g``."""

    per_group: np.ndarray  # K x G x D
    group_sizes: np.ndarray
    task_weights: np.ndarray = None

    def __post_init__(self):
        self.per_group = np.asarray(self.per_group, dtype=float)
        self.group_sizes = np.asarray(self.group_sizes, dtype=float)
        K, G, _ = self.per_group.shape
        if self.group_sizes.shape != (G,) or np.any(self.group_sizes <= 0):
            raise InvalidInputError("group_sizes must hold one positive size per group")
        self.task_weights = _task_weights(self.task_weights, K)

    @property
    def K(self):
        return self.per_group.shape[0]

    @property
    def G(self):
        return self.per_group.shape[1]

    @property
    def D(self):
        return self.per_group.shape[2]

    def stacked(self):
        """All group rows as one ``(K*G) x D`` matrix, task-major."""
        return self.per_group.reshape(self.K * self.G, self.D)

    def means(self):
        # size-weighted so the result equals the plain per-example batch mean
        return np.einsum("g,kgd->kd", self.group_sizes, self.per_group) / self.group_sizes.sum()


def group_gradients(bundle: GradientBundle, G: int, rng: np.random.Generator | None = None) -> GroupedBundle:
    """Average-pool the ``m`` examples into ``G`` groups of near-equal size.

    One random permutation of the examples is shared by all tasks and cut into
    contiguous chunks. ``rng=None`` keeps the original example order.
    """
    m = bundle.m
    if not 1 <= G <= m:
        raise InvalidInputError(f"group count must satisfy 1 <= G <= m={m}, got {G}")
    order = np.arange(m) if rng is None else rng.permutation(m)
    chunks = np.array_split(order, G)
    per_group = np.stack([bundle.per_example[:, idx].mean(axis=1) for idx in chunks], axis=1)
    sizes = np.array([len(idx) for idx in chunks], dtype=float)
    return GroupedBundle(per_group, sizes, bundle.task_weights)


class MaskRule(str, enum.Enum):
    ALL_AGREE = "all_agree"
    LITERAL_PRODUCT = "literal_product"


def shared_mask(P, rule: MaskRule | str = MaskRule.ALL_AGREE) -> np.ndarray:
    """Which basis coordinates are shared, given task coordinates ``P`` (K x r).

    ``ALL_AGREE``: no two tasks have strictly opposite signs (zeros agree with
    anything). ``LITERAL_PRODUCT``: the product of the K coordinates is >= 0.
    The two differ only for K >= 3, e.g. signs (+, -, -).
    """
    P = numerics.as_matrix(P, "P")
    rule = MaskRule(rule)
    if rule is MaskRule.ALL_AGREE:
        return ~((P > 0).any(axis=0) & (P < 0).any(axis=0))
    # signs instead of raw values: a product of many small coordinates underflows
    return np.prod(np.sign(P), axis=0) >= 0


@dataclass
class GdodDecomposition:
    basis: OrthogonalBasis
    coords: np.ndarray  # K x r
    shared_mask: np.ndarray  # r
    g_sh: np.ndarray  # K x D
    g_con: np.ndarray  # K x D
    update: np.ndarray  # D
    shared_mass_fraction: float
    means: np.ndarray = field(repr=False, default=None)

    @property
    def rank(self):
        return self.basis.rank


def _shared_mass(P_sh, P):
    total = float(np.sum(P * P))
    return float(np.sum(P_sh * P_sh)) / max(total, np.finfo(float).tiny)


def _as_grouped(bundle):
    if isinstance(bundle, GroupedBundle):
        return bundle
    if isinstance(bundle, GradientBundle):
        return GroupedBundle(bundle.per_example, np.ones(bundle.m), bundle.task_weights)
    raise InvalidInputError(f"expected a gradient bundle, got {type(bundle).__name__}")


def gdod_combine(
    bundle: GroupedBundle | GradientBundle,
    method: BasisMethod | str = "svd",
    rule: MaskRule | str = MaskRule.ALL_AGREE,
    rng: np.random.Generator | None = None,
) -> GdodDecomposition:
    """One GDOD step: keep only the sign-agreeing components of the task means.

    The basis is built from every group row; task means are projected on it,
    masked by sign agreement and reconstructed. The update is the
    task-weighted sum of the shared parts; it is zero when no coordinate is
    shared.
    """
    bundle = _as_grouped(bundle)
    basis = build_basis(bundle.stacked(), method, rng)
    means = bundle.means()
    P = project(basis, means)
    mask = shared_mask(P, rule) if basis.rank else np.zeros(0, dtype=bool)
    P_sh = P * mask
    g_sh = reconstruct(basis, P_sh)
    g_con = reconstruct(basis, P - P_sh)
    return GdodDecomposition(
        basis=basis,
        coords=P,
        shared_mask=mask,
        g_sh=g_sh,
        g_con=g_con,
        update=bundle.task_weights @ g_sh,
        shared_mass_fraction=_shared_mass(P_sh, P),
        means=means,
    )


def coordinate_weights(P) -> np.ndarray:
    """Per-task, per-coordinate weights of the weighted variant.

    On each coordinate the tasks split into the ``a`` with ``p >= 0`` and the
    ``b`` with ``p < 0``. The majority side gets weight ``|a - b| / K`` and the
    minority side gets 0.
    """
    P = numerics.as_matrix(P, "P")
    K = P.shape[0]
    positive = P >= 0
    a = positive.sum(axis=0)
    b = K - a
    majority = np.where(a >= b, positive, ~positive)
    return majority * (np.abs(a - b) / K)


def weighted_gdod_combine(
    bundle: GroupedBundle | GradientBundle,
    method: BasisMethod | str = "svd",
    rng: np.random.Generator | None = None,
) -> GdodDecomposition:
    """GDOD variant for many tasks: majority-sign components are kept, down-weighted by the margin."""
    bundle = _as_grouped(bundle)
    basis = build_basis(bundle.stacked(), method, rng)
    means = bundle.means()
    P = project(basis, means)
    W = coordinate_weights(P) if basis.rank else np.zeros_like(P)
    P_sh = W * P
    g_sh = reconstruct(basis, P_sh)
    g_con = reconstruct(basis, P - P_sh)
    return GdodDecomposition(
        basis=basis,
        coords=P,
        shared_mask=W.any(axis=0),
        g_sh=g_sh,
        g_con=g_con,
        update=bundle.task_weights @ g_sh,
        shared_mass_fraction=_shared_mass(P_sh, P),
        means=means,
    )


def pcgrad_combine(means, rng: np.random.Generator, weights=None) -> np.ndarray:
    """Project each task gradient off the normal planes of the tasks it conflicts with.

    For task ``i`` the other tasks are visited in a fresh random order; when
    ``g_i . g_j < 0``, ``g_i`` loses its component along ``g_j``.
    """
    G = numerics.as_matrix(means, "means")
    K = G.shape[0]
    w = _task_weights(weights, K)
    sq_norms = np.einsum("kd,kd->k", G, G)
    out = G.copy()
    for i in range(K):
        others = np.array([j for j in range(K) if j != i], dtype=int)
        gi = out[i]
        for j in rng.permutation(others):
            if sq_norms[j] == 0.0:
                continue
            dot = gi @ G[j]
            if dot < 0:
                gi -= (dot / sq_norms[j]) * G[j]
    return w @ out


def mgda_combine(means, weights=None, iters: int = 250) -> np.ndarray:
    """Minimum-norm convex combination of the (weight-scaled) task gradients."""
    G = numerics.as_matrix(means, "means")
    G = _task_weights(weights, G.shape[0])[:, None] * G
    if G.shape[0] == 1:
        return G[0].copy()
    if G.shape[0] == 2:
        return numerics.min_norm_point_2(G[0], G[1])[1]
    return numerics.frank_wolfe_min_norm(G, iters)[1]


def cagrad_dual_weights(G, g0, c, iters=200):
    """Minimise ``w.(G g0) + c ||g0|| ||w G||`` over the simplex by projected gradient.

    The step starts at ``1/L`` with ``L`` estimated from the Gram matrix, is
    doubled before every iteration and halved until the quadratic upper bound
    holds.
    """
    K = G.shape[0]
    Q = G @ G.T
    b = G @ g0
    phi = c * np.linalg.norm(g0)

    def objective(w):
        return w @ b + phi * np.sqrt(max(w @ Q @ w, 0.0))

    def gradient(w):
        norm = np.sqrt(max(w @ Q @ w, 0.0))
        return b if norm == 0.0 else b + phi * (Q @ w) / norm

    w = np.full(K, 1.0 / K)
    lam = np.linalg.eigvalsh(Q)[-1]
    L = lam + phi * lam / max(np.sqrt(w @ Q @ w), 1e-12 * np.sqrt(lam) + np.finfo(float).tiny)
    step = 1.0 / max(L, np.finfo(float).tiny)
    f = objective(w)
    for _ in range(iters):
        grad = gradient(w)
        step *= 2.0  # let the step grow back after backtracking
        for _ in range(60):
            w_new = numerics.project_to_simplex(w - step * grad)
            delta = w_new - w
            f_new = objective(w_new)
            if f_new <= f + grad @ delta + (delta @ delta) / (2 * step) + 1e-15 * abs(f):
                break
            step *= 0.5
        if f_new > f:
            break
        w, f = w_new, f_new
        if delta @ delta <= 1e-30:
            break
    return w


def cagrad_combine(means, c: float = 0.5, weights=None, iters: int = 200) -> np.ndarray:
    """Best worst-case improvement inside a ball of radius ``c ||g0||`` around the mean gradient."""
    if not 0.0 <= c < 1.0:
        raise InvalidInputError(f"cagrad c must lie in [0, 1), got {c}")
    G = numerics.as_matrix(means, "means")
    G = _task_weights(weights, G.shape[0])[:, None] * G
    g0 = G.mean(axis=0)
    g0_norm = np.linalg.norm(g0)
    if c == 0.0 or g0_norm == 0.0:
        return g0
    w = cagrad_dual_weights(G, g0, c, iters)
    gw = w @ G
    gw_norm = np.linalg.norm(gw)
    d = g0 if gw_norm == 0.0 else g0 + (c * g0_norm / gw_norm) * gw
    polished = _cagrad_primal(G, g0, c * g0_norm, d)
    if polished is not None and (G @ polished).min() > (G @ d).min():
        return polished
    return d


def _cagrad_primal(G, g0, R, d0):
    """Maximise ``min_i g_i.d`` over ``||d - g0|| <= R`` directly, warm-started at ``d0``.

    The dual objective has a kink at ``g_w = 0``; when the convex hull of the
    gradients contains the origin, projected gradient can stall next to it.
    The primal is smooth: with ``d = g0 + R B^T u`` for an orthonormal basis
    ``B`` of the gradients' span it is a tiny problem in ``(u, t)``.
    Returns ``None`` if the solver fails.
    """
    _, B = numerics.thin_svd(G)
    a = G @ g0
    H = R * (G @ B.T)
    scale = max(np.abs(a).max(), np.abs(H).max())
    if not scale > 0:
        return None
    a, H = a / scale, H / scale
    u0 = B @ (d0 - g0) / R
    x0 = np.append(u0, (a + H @ u0).min())
    r = B.shape[0]
    res = optimize.minimize(
        lambda x: -x[r], x0, jac=lambda x: np.append(np.zeros(r), -1.0), method="SLSQP",
        constraints=[
            {"type": "ineq", "fun": lambda x: a + H @ x[:r] - x[r],
             "jac": lambda x: np.hstack([H, -np.ones((len(a), 1))])},
            {"type": "ineq", "fun": lambda x: 1.0 - x[:r] @ x[:r],
             "jac": lambda x: np.append(-2.0 * x[:r], 0.0)},
        ],
        options={"maxiter": 200, "ftol": 1e-15},
    )
    u = res.x[:r]
    norm = np.linalg.norm(u)
    if not np.all(np.isfinite(u)):
        return None
    if norm > 1.0:
        u = u / norm
    return g0 + R * (u @ B)


def sum_combine(means, weights=None) -> np.ndarray:
    G = numerics.as_matrix(means, "means")
    return _task_weights(weights, G.shape[0]) @ G


@dataclass(frozen=True)
class CombinerConfig:
    name: str = "gdod"
    basis: BasisMethod = field(default_factory=BasisMethod)
    mask_rule: MaskRule = MaskRule.ALL_AGREE
    groups: int = 16
    cagrad_c: float = 0.5

    def __post_init__(self):
        if self.name not in COMBINERS:
            raise InvalidInputError(f"unknown combiner {self.name!r}; expected one of {COMBINERS}")
        object.__setattr__(self, "basis", BasisMethod.parse(self.basis))
        object.__setattr__(self, "mask_rule", MaskRule(self.mask_rule))
        if self.groups < 1:
            raise InvalidInputError("groups must be >= 1")
        if not 0.0 <= self.cagrad_c < 1.0:
            raise InvalidInputError(f"cagrad_c must lie in [0, 1), got {self.cagrad_c}")


@dataclass
class CombineResult:
    update: np.ndarray
    shared_mass_fraction: float = float("nan")
    rank: int | None = None  # None for combiners without a basis
    empty_mask: bool = False


def combine(config: CombinerConfig, bundle: GradientBundle, rng: np.random.Generator) -> CombineResult:
    """Dispatch one combination step by name."""
    if config.name in ("gdod", "wgdod"):
        grouped = group_gradients(bundle, min(config.groups, bundle.m), rng)
        if config.name == "gdod":
            dec = gdod_combine(grouped, config.basis, config.mask_rule, rng)
        else:
            dec = weighted_gdod_combine(grouped, config.basis, rng)
        return CombineResult(
            update=dec.update,
            shared_mass_fraction=dec.shared_mass_fraction,
            rank=dec.rank,
            empty_mask=not dec.shared_mask.any(),
        )
    means = bundle.means()
    w = bundle.task_weights
    if config.name == "sum":
        update = sum_combine(means, w)
    elif config.name == "pcgrad":
        update = pcgrad_combine(means, rng, w)
    elif config.name == "mgda":
        update = mgda_combine(means, w)
    else:
        update = cagrad_combine(means, config.cagrad_c, w)
    return CombineResult(update=update)
