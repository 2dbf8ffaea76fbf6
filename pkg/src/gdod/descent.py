"""Full-batch GDOD on convex two-task quadratics: an executable check of the descent bound.

For ``L(theta) = sum_i 0.5 (theta - c_i)^T A_i (theta - c_i)`` the gradient is
Lipschitz with constant ``lambda_max(sum_i A_i)``. With ``gamma <= 1/L`` every
GDOD step must satisfy

    L(theta+) <= L(theta) - gamma/2 * ||sum_i g_i^sh||^2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .combiners import GradientBundle, gdod_combine
from .decomposition import BasisMethod
from .errors import InvalidInputError
from .numerics import make_rng


@dataclass
class QuadraticProblem:
    A: np.ndarray  # K x d x d, symmetric PSD
    c: np.ndarray  # K x d

    @classmethod
    def random(cls, seed, dim=10, n_tasks=2):
        """Random PSD curvatures (``R R^T / dim``) and centres, reproducible from ``seed``."""
        rng = make_rng(seed)
        R = rng.standard_normal((n_tasks, dim, dim))
        A = np.einsum("kij,klj->kil", R, R) / dim
        return cls(A, rng.standard_normal((n_tasks, dim)))

    @classmethod
    def isotropic(cls, dim=2, offset=1.0):
        """``A_1 = A_2 = I`` with centres ``c_1 = -c_2``; the sum is minimised at the origin."""
        c = np.zeros(dim)
        c[0] = offset
        return cls(np.stack([np.eye(dim), np.eye(dim)]), np.stack([c, -c]))

    @property
    def lipschitz(self):
        return float(np.linalg.eigvalsh(self.A.sum(axis=0))[-1])

    def task_losses(self, theta):
        r = theta[None, :] - self.c
        return 0.5 * np.einsum("ki,kij,kj->k", r, self.A, r)

    def loss(self, theta):
        return float(self.task_losses(theta).sum())

    def gradients(self, theta):
        return np.einsum("kij,kj->ki", self.A, theta[None, :] - self.c)


@dataclass
class DescentTrace:
    gamma: float
    lipschitz: float
    losses: list = field(default_factory=list)
    shared_sq_norms: list = field(default_factory=list)
    violations: list = field(default_factory=list)  # (step, slack) where the bound failed
    theta: np.ndarray | None = None  # final iterate

    @property
    def passed(self):
        return not self.violations

    def stationarity_holds(self):
        """``min_{t<T} ||g_t^sh||^2 <= 2 (L_0 - L_T) / (T gamma)`` for every prefix ``T``."""
        sq = np.asarray(self.shared_sq_norms)
        if sq.size == 0:
            return True
        L = np.asarray(self.losses)
        T = np.arange(1, sq.size + 1)
        bound = 2.0 * (L[0] - L[1:]) / (T * self.gamma)
        return bool(np.all(np.minimum.accumulate(sq) <= bound + 1e-9))


def descent_check(
    problem: QuadraticProblem,
    gamma: float | None = None,
    steps: int = 500,
    theta0=None,
    method: BasisMethod | str = "svd",
    tol: float = 1e-9,
) -> DescentTrace:
    """Run full-batch GDOD with plain SGD steps and test the per-step descent bound.

    ``gamma`` defaults to ``1/L``; larger values are rejected because the bound
    does not apply to them.
    """
    L = problem.lipschitz
    if gamma is None:
        gamma = 1.0 / L
    if not 0.0 < gamma <= 1.0 / L * (1.0 + 1e-12):
        raise InvalidInputError(f"gamma={gamma} must lie in (0, 1/L] with L={L:.6g}")
    if steps < 0:
        raise InvalidInputError("steps must be non-negative")
    theta = np.zeros(problem.c.shape[1]) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    trace = DescentTrace(gamma=gamma, lipschitz=L)
    loss = problem.loss(theta)
    trace.losses.append(loss)
    for t in range(steps):
        grads = problem.gradients(theta)
        update = gdod_combine(GradientBundle(grads[:, None, :]), method).update
        sq = float(update @ update)
        theta = theta - gamma * update
        new_loss = problem.loss(theta)
        slack = loss - 0.5 * gamma * sq + tol - new_loss
        if slack < 0 or new_loss > loss + tol:
            trace.violations.append((t, slack))
        trace.losses.append(new_loss)
        trace.shared_sq_norms.append(sq)
        loss = new_loss
    trace.theta = theta
    return trace
