"""Finite metric spaces: validation, restriction, Hausdorff distance and the
four-point (0-hyperbolicity) defect."""

import math
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .config import config
from .errors import MetricError

TOL = config.solver.tol

# Largest (y, z, t) block materialized at once by four_point_defect.
_QUAD_BLOCK = 2_000_000


def _as_matrix(dist) -> np.ndarray:
    matrix = np.array(dist, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise MetricError(f"Distance matrix must be square, got shape {matrix.shape}")
    return matrix


class FiniteMetricSpace(BaseModel):
    """Labelled points with a square distance matrix.

    Construction only checks the shape; use validate_metric for the axioms.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    labels: list[str]
    dist: np.ndarray

    @field_validator("dist", mode="before")
    @classmethod
    def _coerce_dist(cls, value):
        matrix = _as_matrix(value)
        matrix.setflags(write=False)
        return matrix

    @model_validator(mode="after")
    def _check_labels(self):
        if len(self.labels) != self.dist.shape[0]:
            raise ValueError(f"{len(self.labels)} labels for {self.dist.shape[0]} points")
        return self

    @classmethod
    def from_matrix(cls, dist, labels: Sequence[str] | None = None) -> "FiniteMetricSpace":
        matrix = _as_matrix(dist)
        if labels is None:
            labels = [str(i) for i in range(matrix.shape[0])]
        if len(labels) != matrix.shape[0]:
            raise MetricError(f"{len(labels)} labels for {matrix.shape[0]} points")
        return cls(labels=[str(label) for label in labels], dist=matrix)

    @property
    def size(self) -> int:
        return self.dist.shape[0]


class ValidationReport(BaseModel):
    ok: bool
    worst_violation: float
    kind: str = ""
    witness: tuple[int, ...] = ()


def _space(value) -> FiniteMetricSpace:
    if isinstance(value, FiniteMetricSpace):
        return value
    return FiniteMetricSpace.from_matrix(value)


def eccentricities(space: FiniteMetricSpace) -> np.ndarray:
    return space.dist.max(axis=1) if space.size else np.zeros(0)


def diameter(space: FiniteMetricSpace) -> float:
    return float(space.dist.max()) if space.size else 0.0


def validate_metric(candidate, tol: float = TOL) -> ValidationReport:
    """Reports the largest violation of symmetry, identity, positivity and the
    triangle inequality.

    Distinct points at distance <= tol count as an unbounded violation.
    Triangle witnesses are (i, j, k) with d(i, j) > d(i, k) + d(k, j).
    """
    D = _space(candidate).dist
    n = D.shape[0]
    worst, kind, witness = 0.0, "", ()

    def consider(amount: float, name: str, where: tuple[int, ...]):
        nonlocal worst, kind, witness
        if amount > worst:
            worst, kind, witness = amount, name, where

    if n == 0:
        return ValidationReport(ok=True, worst_violation=0.0)

    asym = np.abs(D - D.T)
    i, j = np.unravel_index(np.argmax(asym), asym.shape)
    consider(float(asym[i, j]), "symmetry", (int(min(i, j)), int(max(i, j))))

    diag = np.abs(np.diag(D))
    i = int(np.argmax(diag))
    consider(float(diag[i]), "identity", (i,))

    off = D + np.diag(np.full(n, np.inf))
    i, j = np.unravel_index(np.argmin(off), off.shape)
    if n > 1 and off[i, j] <= tol:
        consider(math.inf, "positivity", (int(min(i, j)), int(max(i, j))))

    for k in range(n):
        excess = D - D[:, k : k + 1] - D[k : k + 1, :]
        i, j = np.unravel_index(np.argmax(excess), excess.shape)
        consider(float(excess[i, j]), "triangle", (int(i), int(j), k))

    return ValidationReport(ok=worst <= tol, worst_violation=worst, kind=kind, witness=witness)


def restrict(space: FiniteMetricSpace, subset: Sequence[int]) -> FiniteMetricSpace:
    """Submatrix on the given point indices, labels preserved."""
    idx = _indices(space, subset)
    return FiniteMetricSpace(
        labels=[space.labels[i] for i in idx],
        dist=space.dist[np.ix_(idx, idx)],
    )


def _indices(space: FiniteMetricSpace, subset: Sequence[int]) -> list[int]:
    idx = [int(i) for i in subset]
    if not idx:
        raise MetricError("Subset must be non-empty")
    bad = [i for i in idx if not 0 <= i < space.size]
    if bad:
        raise MetricError(f"Indices out of range for a {space.size}-point space: {bad}")
    if len(set(idx)) != len(idx):
        raise MetricError("Subset contains repeated indices")
    return idx


def hausdorff_distance(space: FiniteMetricSpace, A: Sequence[int], B: Sequence[int]) -> float:
    a, b = _indices(space, A), _indices(space, B)
    block = space.dist[np.ix_(a, b)]
    return float(max(block.min(axis=1).max(), block.min(axis=0).max()))


def four_point_defect(space: FiniteMetricSpace) -> float:
    """max over all quadruples of (largest - second largest) pairwise sum.

    Zero exactly when the space is 0-hyperbolic. Quadruples with repeated
    points are included.
    """
    D = space.dist
    n = D.shape[0]
    if n < 2:
        return 0.0
    block = max(1, _QUAD_BLOCK // (n * n))
    worst = 0.0
    for x in range(n):
        dx = D[x]
        for start in range(x, n, block):
            ys = slice(start, min(n, start + block))
            Dy = D[ys]
            s1 = dx[ys][:, None, None] + D[None, :, :]
            s2 = dx[None, :, None] + Dy[:, None, :]
            s3 = dx[None, None, :] + Dy[:, :, None]
            sums = np.sort(np.stack([s1, s2, s3]), axis=0)
            worst = max(worst, float((sums[2] - sums[1]).max()))
    return worst
