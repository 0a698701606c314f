"""Degree-2 multivariate polynomial regression.

Features are expanded in a fixed order::

    [x0 .. x_{n-1},  x0^2 .. x_{n-1}^2,  x0*x1, x0*x2, x1*x2 (i<k),  1]

and fitted by least squares through a column-pivoted QR factorisation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
import scipy.linalg


class RankDeficientError(ValueError):
    """Design matrix does not determine every coefficient."""


def n_coefficients(n_vars: int) -> int:
    return 2 * n_vars + n_vars * (n_vars - 1) // 2 + 1


def feature_names(n_vars: int) -> list[str]:
    names = [f"x{i}" for i in range(n_vars)]
    names += [f"x{i}^2" for i in range(n_vars)]
    names += [f"x{i}*x{k}" for i, k in combinations(range(n_vars), 2)]
    names.append("1")
    return names


def expand(x: np.ndarray) -> np.ndarray:
    """Expand an ``(m, n)`` input array into the ``(m, p)`` design matrix."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m, n = x.shape
    cols = [x, x * x]
    cross = [x[:, i] * x[:, k] for i, k in combinations(range(n), 2)]
    if cross:
        cols.append(np.stack(cross, axis=1))
    cols.append(np.ones((m, 1)))
    return np.hstack(cols)


@dataclass(frozen=True)
class MprModel:
    n_vars: int
    coefficients: tuple[float, ...]

    def __post_init__(self):
        coefs = tuple(float(c) for c in self.coefficients)
        if len(coefs) != n_coefficients(self.n_vars):
            raise ValueError(f"{self.n_vars}-variable model needs {n_coefficients(self.n_vars)} coefficients")
        if not all(np.isfinite(coefs)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coefficients", coefs)

    @property
    def linear(self) -> tuple[float, ...]:
        return self.coefficients[: self.n_vars]

    @property
    def quadratic(self) -> tuple[float, ...]:
        return self.coefficients[self.n_vars: 2 * self.n_vars]

    @property
    def interactions(self) -> tuple[float, ...]:
        return self.coefficients[2 * self.n_vars: -1]

    @property
    def intercept(self) -> float:
        return self.coefficients[-1]

    @classmethod
    def zeros(cls, n_vars: int, intercept: float = 0.0) -> "MprModel":
        return cls(n_vars, (0.0,) * (n_coefficients(n_vars) - 1) + (intercept,))

    def predict(self, x: Sequence[float]) -> float:
        return predict(self, x)

    def predict_many(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_vars:
            raise ValueError(f"expected {self.n_vars} inputs per row, got {x.shape[-1]}")
        return expand(x.reshape(-1, self.n_vars)) @ np.asarray(self.coefficients)

    def to_dict(self) -> dict:
        return {"n_vars": self.n_vars, "features": feature_names(self.n_vars),
                "coefficients": list(self.coefficients)}

    @classmethod
    def from_dict(cls, d: dict) -> "MprModel":
        return cls(int(d["n_vars"]), tuple(d["coefficients"]))


@dataclass
class ProfileDataset:
    """Rows of ``(x, target)`` gathered at one ``(core type, core count)``."""

    x: np.ndarray
    y: np.ndarray
    tag: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x and y row counts differ")

    @property
    def n_vars(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.y.shape[0]


def fit(dataset: ProfileDataset, rcond: float = 1e-10) -> MprModel:
    """Least-squares fit over the expanded features.

    Raises :class:`RankDeficientError` naming the collinear columns when the
    expanded design matrix is not of full column rank.
    """
    n = dataset.n_vars
    p = n_coefficients(n)
    names = feature_names(n)
    if len(dataset) < p:
        raise RankDeficientError(
            f"{len(dataset)} rows cannot determine {p} coefficients"
            f" (under-determined; columns {names[len(dataset):]} unresolved)")
    a = expand(dataset.x)
    q, r, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = rcond * max(diag[0], 1.0) * max(a.shape)
    rank = int(np.sum(diag > tol))
    if rank < p:
        bad = sorted(names[j] for j in piv[rank:])
        raise RankDeficientError(f"design matrix has rank {rank} < {p}; collinear columns: {bad}")
    z = scipy.linalg.solve_triangular(r, q.T @ dataset.y)
    coef = np.empty(p)
    coef[piv] = z
    return MprModel(n, tuple(coef))


def predict(model: MprModel, x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != model.n_vars:
        raise ValueError(f"expected {model.n_vars} inputs, got {x.shape[0]}")
    c = model.coefficients
    n = model.n_vars
    total = c[-1]
    for i in range(n):
        total += c[i] * x[i] + c[n + i] * x[i] * x[i]
    for j, (i, k) in enumerate(combinations(range(n), 2)):
        total += c[2 * n + j] * x[i] * x[k]
    return float(total)
