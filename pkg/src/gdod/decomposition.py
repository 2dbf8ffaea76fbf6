"""Orthogonal bases for the span of stacked task gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import InvalidInputError

METHODS = ("svd", "qr", "random", "randdec")


@dataclass(frozen=True)
class BasisMethod:
    """How to build the basis.

    ``r`` is only meaningful for ``"random"`` (``None`` means rows(M) capped
    at D); ``target_r``/``oversample`` only for ``"randdec"`` (``None`` target
    means rows(M)).
    """

    kind: str = "svd"
    r: int | None = None
    target_r: int | None = None
    oversample: int = 4
    rel_cutoff: float = numerics.DEFAULT_REL_CUTOFF

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in METHODS:
            raise InvalidInputError(f"unknown basis method {self.kind!r}; expected one of {METHODS}")
        object.__setattr__(self, "kind", kind)
        if self.r is not None and kind != "random":
            raise InvalidInputError("'r' only applies to the random basis")
        if self.target_r is not None and kind != "randdec":
            raise InvalidInputError("'target_r' only applies to the randdec basis")

    @classmethod
    def parse(cls, spec) -> "BasisMethod":
        if isinstance(spec, cls):
            return spec
        if isinstance(spec, str):
            return cls(kind=spec)
        return cls(**spec)


@dataclass(frozen=True)
class OrthogonalBasis:
    vectors: np.ndarray  # r x D, orthonormal rows
    method: BasisMethod
    source_rank: int

    @property
    def rank(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def build_basis(M, method: BasisMethod | str = "svd", rng: np.random.Generator | None = None) -> OrthogonalBasis:
    """Orthonormal basis for the subspace used to split gradients.

    ``svd``, ``qr`` and ``randdec`` span the row space of ``M``; ``random``
    draws ``r`` orthonormal directions without looking at ``M``'s values.
    ``source_rank`` is the dimension of the span recovered from ``M``
    (0 for ``random``, which ignores the data).
    """
    M = numerics.as_matrix(M)
    method = BasisMethod.parse(method)
    rows, D = M.shape
    if rows == 0 or D == 0:
        raise InvalidInputError("gradient matrix must have at least one row and one column")

    if method.kind == "svd":
        _, B = numerics.thin_svd(M, method.rel_cutoff)
    elif method.kind == "qr":
        B = numerics.qr_orthonormalize(M, method.rel_cutoff)
    elif method.kind == "randdec":
        if rng is None:
            raise InvalidInputError("randdec basis needs an rng")
        target = method.target_r if method.target_r is not None else rows
        B = numerics.randomized_range_basis(M, target, method.oversample, rng, method.rel_cutoff)
    else:
        if rng is None:
            raise InvalidInputError("random basis needs an rng")
        r = method.r if method.r is not None else min(rows, D)
        if r > D:
            raise InvalidInputError(f"random basis dimension r={r} exceeds D={D}")
        B = numerics.random_orthonormal(r, D, rng)
    source_rank = 0 if method.kind == "random" else B.shape[0]
    return OrthogonalBasis(vectors=B, method=method, source_rank=source_rank)


def project(basis: OrthogonalBasis, g) -> np.ndarray:
    """Coordinates of ``g`` (a D-vector, or rows of a matrix) along each basis vector."""
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != basis.dim:
        raise InvalidInputError(f"gradient has dimension {g.shape[-1]}, basis has {basis.dim}")
    return g @ basis.vectors.T


def reconstruct(basis: OrthogonalBasis, p) -> np.ndarray:
    """Inverse of :func:`project` on the span: ``sum_u p[u] * b_u``."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != basis.rank:
        raise InvalidInputError(f"coordinate vector has length {p.shape[-1]}, basis rank is {basis.rank}")
    return p @ basis.vectors
