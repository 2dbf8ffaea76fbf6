"""Dense linear-algebra and small convex-solver kernels.

Matrices are plain ``float64`` numpy arrays. Every entry point validates that
its inputs are finite; nothing here keeps global state, and randomness always
comes from an explicit :class:`numpy.random.Generator`.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import InvalidInputError

DEFAULT_REL_CUTOFF = 1e-8

# Pairwise orthogonality threshold used to stop the Jacobi sweeps.
_JACOBI_TOL = 1e-14
_JACOBI_MAX_SWEEPS = 60
# Rows whose Gram-Schmidt residual is below this fraction of their norm are
# linearly dependent to working precision.
_FRAME_CUTOFF = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: PCG64 seeded with ``seed``.

    PCG64 produces the same stream on every platform numpy supports, which is
    what run-to-run reproducibility relies on.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(M, name="M") -> np.ndarray:
    A = np.asarray(M, dtype=float)
    if A.ndim == 1:
        A = A.reshape(1, -1)
    if A.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-dimensional, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return A


def as_vector(v, name="v") -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def _check_cutoff(rel_cutoff):
    if not 0.0 < rel_cutoff < 1.0:
        raise InvalidInputError(f"rel_cutoff must lie in (0, 1), got {rel_cutoff}")


@njit(cache=True)
def _norm(v):
    # scaled so that tiny rows do not square into subnormals
    m = np.max(np.abs(v))
    if m == 0.0:
        return 0.0
    w = v / m
    return m * np.sqrt(np.dot(w, w))


@njit(cache=True)
def _mgs_rows(A, rel_cutoff):
    """Modified Gram-Schmidt over the rows of ``A`` with one re-orthogonalisation pass."""
    n, d = A.shape
    Q = np.empty((n, d))
    r = 0
    for i in range(n):
        v = A[i].copy()
        n0 = _norm(v)
        if n0 == 0.0:
            continue
        for _ in range(2):
            for k in range(r):
                v -= np.dot(Q[k], v) * Q[k]
        nv = _norm(v)
        if nv <= rel_cutoff * n0:
            continue
        Q[r] = v / nv
        r += 1
    return Q[:r].copy()


@njit(cache=True)
def _jacobi_rows(W, X, tol, max_sweeps):
    """Cyclic one-sided Jacobi: rotate row pairs of ``W`` (and ``X`` alongside)
    until the rows of ``W`` are mutually orthogonal."""
    n = W.shape[0]
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = np.dot(W[p], W[p])
                beta = np.dot(W[q], W[q])
                gamma = np.dot(W[p], W[q])
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = 1.0 / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                if zeta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wp = W[p].copy()
                W[p] = c * wp - s * W[q]
                W[q] = s * wp + c * W[q]
                xp = X[p].copy()
                X[p] = c * xp - s * X[q]
                X[q] = s * xp + c * X[q]
        if not rotated:
            break


def thin_svd(M, rel_cutoff: float = DEFAULT_REL_CUTOFF):
    """Singular values and right singular vectors of ``M`` above a relative cutoff.

    The rows of ``M`` are expressed in an orthonormal frame of their span,
    ``M = C @ F``. Jacobi rotations then act on the columns of ``C``; each
    angle annihilates one off-diagonal entry of the Gram matrix ``C.T @ C``,
    so the sweeps diagonalise it without forming it. The accumulated
    rotations are the right singular vectors in frame coordinates and the
    rotated column norms are the singular values.

    Returns ``(sigma, V)`` with ``sigma`` descending and ``V`` of shape
    ``(r, cols)`` whose rows are orthonormal. Components with
    ``sigma <= rel_cutoff * sigma_max`` are discarded.
    """
    A = as_matrix(M)
    _check_cutoff(rel_cutoff)
    d = A.shape[1]
    if A.shape[0] == 0 or d == 0:
        return np.zeros(0), np.zeros((0, d))
    # unit max-entry scaling keeps squared norms away from under/overflow
    scale = np.max(np.abs(A))
    if scale == 0.0:
        return np.zeros(0), np.zeros((0, d))
    A = A / scale

    frame = _mgs_rows(np.ascontiguousarray(A), _FRAME_CUTOFF)
    k = frame.shape[0]
    if k == 0:
        return np.zeros(0), np.zeros((0, d))
    W = np.ascontiguousarray((A @ frame.T).T)
    X = np.eye(k)
    _jacobi_rows(W, X, _JACOBI_TOL, _JACOBI_MAX_SWEEPS)

    norms = np.linalg.norm(W, axis=1)
    order = np.argsort(-norms, kind="stable")
    order = order[norms[order] > rel_cutoff * norms.max()]
    return scale * norms[order], X[order] @ frame


def qr_orthonormalize(M, rel_cutoff: float = DEFAULT_REL_CUTOFF) -> np.ndarray:
    """Orthonormal basis for the row space of ``M`` by modified Gram-Schmidt.

    Rows are processed in order. A row whose residual norm falls to
    ``rel_cutoff`` times its original norm (or below) is treated as dependent
    and dropped. A second orthogonalisation pass keeps the output orthonormal
    to working precision.
    """
    A = as_matrix(M)
    _check_cutoff(rel_cutoff)
    scale = np.max(np.abs(A), initial=0.0)
    if scale == 0.0:
        return np.zeros((0, A.shape[1]))
    return _mgs_rows(np.ascontiguousarray(A / scale), rel_cutoff)


def random_orthonormal(r: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``r`` orthonormal rows in ``R^d``: Gram-Schmidt of i.i.d. standard normal rows."""
    if r < 0 or d < 1 or r > d:
        raise InvalidInputError(f"need 0 <= r <= d, got r={r}, d={d}")
    while True:
        B = qr_orthonormalize(rng.standard_normal((r, d))) if r else np.zeros((0, d))
        if B.shape[0] == r:
            return B


def randomized_range_basis(
    M,
    target_r: int,
    oversample: int,
    rng: np.random.Generator,
    rel_cutoff: float = DEFAULT_REL_CUTOFF,
) -> np.ndarray:
    """Approximate top-``target_r`` right singular subspace by random sketching.

    A Gaussian test matrix mixes the rows of ``M``; the sketch ``M.T @ Omega``
    spans (w.h.p.) the dominant row space. After orthonormalising the sketch
    into ``Q``, the small matrix ``M @ Q.T`` is decomposed exactly and its
    leading right vectors are lifted back through ``Q``.
    """
    A = as_matrix(M)
    if target_r < 1:
        raise InvalidInputError(f"target_r must be >= 1, got {target_r}")
    if oversample < 0:
        raise InvalidInputError(f"oversample must be >= 0, got {oversample}")
    n, d = A.shape
    width = min(target_r + oversample, n, d)
    if width == 0:
        return np.zeros((0, d))
    omega = rng.standard_normal((n, width))
    Q = qr_orthonormalize((A.T @ omega).T, rel_cutoff)
    if Q.shape[0] == 0:
        return np.zeros((0, d))
    _, W = thin_svd(A @ Q.T, rel_cutoff)
    W = W[:target_r]
    return qr_orthonormalize(W @ Q, rel_cutoff)


def min_norm_point_2(g1, g2):
    """Closed-form minimum-norm point of the segment ``[g1, g2]``.

    Returns ``(w, d)`` with ``w = (gamma, 1 - gamma)`` and
    ``d = gamma * g1 + (1 - gamma) * g2``.
    """
    g1 = as_vector(g1, "g1")
    g2 = as_vector(g2, "g2")
    if g1.shape != g2.shape:
        raise InvalidInputError("g1 and g2 must have the same dimension")
    diff = g1 - g2
    denom = diff @ diff
    if denom == 0.0:
        return np.array([0.5, 0.5]), g1.copy()
    gamma = float(np.clip(((g2 - g1) @ g2) / denom, 0.0, 1.0))
    return np.array([gamma, 1.0 - gamma]), gamma * g1 + (1.0 - gamma) * g2


def frank_wolfe_min_norm(G, iters: int = 250, tol: float = 1e-12):
    """Minimum-norm point of the convex hull of the rows of ``G``.

    Solves ``min_w 0.5 * ||w @ G||^2`` over the probability simplex with
    Frank-Wolfe steps from uniform weights. Each step picks either the
    standard FW vertex or an away vertex (whichever has the larger gap) and
    takes the exact line-search step, which gives linear convergence on the
    simplex. Stops early once the FW duality gap drops below
    ``tol * max(1, ||d||^2)``, then finishes with Wolfe's exact active-set
    iterations from the FW point (kept only if they lower the objective).
    """
    G = as_matrix(G, "G")
    if iters < 1:
        raise InvalidInputError("iters must be >= 1")
    K = G.shape[0]
    if K == 0:
        raise InvalidInputError("need at least one gradient")
    if K == 1:
        return np.ones(1), G[0].copy()
    w = _frank_wolfe(G @ G.T, iters, tol)
    return w, w @ G


def _frank_wolfe(Q, iters, tol):
    K = Q.shape[0]
    w = np.full(K, 1.0 / K)
    for _ in range(iters):
        grad = Q @ w
        value = w @ grad
        s = int(np.argmin(grad))
        fw_gap = value - grad[s]
        if fw_gap <= tol * max(1.0, value):
            break
        support = np.flatnonzero(w > 0)
        a = int(support[np.argmax(grad[support])])
        away_gap = grad[a] - value
        if fw_gap >= away_gap:
            direction = -w.copy()
            direction[s] += 1.0
            step_max = 1.0
        else:
            direction = w.copy()
            direction[a] -= 1.0
            step_max = w[a] / (1.0 - w[a]) if w[a] < 1.0 else np.inf
        curvature = direction @ Q @ direction
        slope = grad @ direction
        step = step_max if curvature <= 0 else min(-slope / curvature, step_max)
        w = w + max(step, 0.0) * direction
        w = np.clip(w, 0.0, None)
        w /= w.sum()
    refined = _wolfe_refine(Q, w, tol)
    return refined if refined @ Q @ refined <= w @ Q @ w else w


def _affine_min(Q, S):
    """Minimiser of ``w^T Q w`` subject to ``sum(w) = 1`` with ``w`` supported on ``S``."""
    k = len(S)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = Q[np.ix_(S, S)]
    kkt[:k, k] = kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    y = np.zeros(Q.shape[0])
    y[S] = sol[:k]
    return y if np.all(np.isfinite(y)) else None


def _wolfe_refine(Q, w, tol, max_major=100):
    """Wolfe's min-norm-point iterations started from ``w``.

    Minor cycles move towards the affine minimiser of the current support
    until it is feasible, dropping points that hit zero; major cycles add the
    most improving vertex. Exact after finitely many steps, which removes the
    slow tail of Frank-Wolfe on degenerate faces.
    """
    S = [int(i) for i in np.flatnonzero(w > 0)]
    for _ in range(max_major):
        for _ in range(Q.shape[0] + 1):
            y = _affine_min(Q, S)
            if y is None:
                return w
            if all(y[i] > 0 for i in S):
                w = y / y.sum()
                break
            theta, blocking = min((w[i] / (w[i] - y[i]), i) for i in S if y[i] <= 0)
            w = np.clip(w + theta * (y - w), 0.0, None)
            w[blocking] = 0.0
            w /= w.sum()
            S = [i for i in S if w[i] > 0]
        grad = Q @ w
        value = w @ grad
        s = int(np.argmin(grad))
        if value - grad[s] <= tol * max(1.0, value) or s in S:
            break
        S.append(s)
    return w


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = 1}`` (sort and threshold)."""
    v = as_vector(v)
    if v.size == 0:
        raise InvalidInputError("cannot project an empty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)
