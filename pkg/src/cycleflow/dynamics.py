"""Graph-masked dynamics fitting and the log-reward.

A candidate sparsity graph G is scored by how well a masked linear model
dx/dt = A x explains observed (state, derivative) pairs: each variable's
coefficients are fit independently by ridge least squares restricted to
that variable's parent set, and the log-reward is the negative scaled
squared error minus an l0 edge penalty.  The l0 term enters with a minus
sign: a positive multiple of edge count inside the exponent would reward
dense graphs, which contradicts its stated purpose of encouraging sparse
ones.  In sigmoid mode the linear fit is kept as a surrogate and only the
prediction is passed through the sigmoid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class DynamicsDataset:
    x: np.ndarray          # N x n states
    dx: np.ndarray         # N x n time derivatives
    names: list | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.dx = np.asarray(self.dx, dtype=np.float64)
        if self.x.shape != self.dx.shape or self.x.ndim != 2 or self.x.shape[0] < 1:
            raise ValueError("x and dx must be equal-shape N x n with N >= 1")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.dx))):
            raise ValueError("dataset entries must be finite")
        if self.names is not None and len(self.names) != self.x.shape[1]:
            raise ValueError("variable-name count does not match columns")

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def rows(self) -> int:
        return self.x.shape[0]

    def to_csv(self, x_path, dx_path):
        names = self.names or [f"v{i}" for i in range(self.n)]
        for path, mat in ((x_path, self.x), (dx_path, self.dx)):
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(names)
                for row in mat:
                    writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, x_path, dx_path) -> "DynamicsDataset":
        def read(path):
            with open(path, newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader)
                data = [[float(v) for v in row] for row in reader if row]
            return header, np.array(data, dtype=np.float64)

        names, x = read(x_path)
        names_dx, dx = read(dx_path)
        if names != names_dx:
            raise ValueError("x/dx CSV headers disagree")
        return cls(x=x, dx=dx, names=names)


@dataclass
class RewardConfig:
    l0: float = 0.01          # sparsity coefficient
    ridge: float = 1e-6
    mode: str = "linear"      # or "sigmoid"
    batch_size: int = 64      # reward-evaluation rows
    # multiplier on the total squared error; None means 1/rows (average)
    error_scale: float | None = None

    def __post_init__(self):
        if self.l0 < 0 or self.ridge < 0:
            raise ValueError("l0 and ridge must be non-negative")
        if self.mode not in ("linear", "sigmoid"):
            raise ValueError(f"unknown mode: {self.mode!r}")


@dataclass
class FittedTheta:
    A: np.ndarray            # n x n, exactly zero off the graph support
    residuals: np.ndarray    # per-variable squared residual


def fit_theta(G, data: DynamicsDataset, config: RewardConfig) -> FittedTheta:
    """Per-variable masked ridge least squares.

    For variable i with parent set S, solves
    min_w ||dx[:,i] - x[:,S] w||^2 + ridge ||w||^2 and writes w into
    A[i, S]; everything outside S stays exactly zero.
    """
    G = np.asarray(G)
    n = data.n
    if G.shape != (n, n):
        raise ValueError(f"graph must be {n} x {n}")
    A = np.zeros((n, n))
    residuals = np.zeros(n)
    x, dx = data.x, data.dx
    for i in range(n):
        support = np.flatnonzero(G[i])
        y = dx[:, i]
        if support.size == 0:
            residuals[i] = float(y @ y)
            continue
        xs = x[:, support]
        gram = xs.T @ xs
        if config.ridge > 0:
            gram = gram + config.ridge * np.eye(support.size)
        try:
            w = np.linalg.solve(gram, xs.T @ y)
        except np.linalg.LinAlgError as err:
            raise np.linalg.LinAlgError(
                "singular normal equations; increase RewardConfig.ridge"
            ) from err
        A[i, support] = w
        r = y - xs @ w
        residuals[i] = float(r @ r)
    return FittedTheta(A=A, residuals=residuals)


def predict_dx(theta: FittedTheta, x, mode: str = "linear") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    pred = x @ theta.A.T
    if mode == "sigmoid":
        pred = 1.0 / (1.0 + np.exp(-pred))
    return pred


class RewardEvaluator:
    """log R over batches of graphs against one fixed data batch.

    log R(G) = -scale * ||dx - dx_hat||^2 - l0 * ||G||_0.  Results are
    memoized per graph, which matters when small instances revisit the
    same terminal graphs many times.
    """

    def __init__(self, data: DynamicsDataset, config: RewardConfig):
        self.data = data
        self.config = config
        self.scale = (1.0 / data.rows) if config.error_scale is None \
            else config.error_scale
        self._cache: dict = {}

    def log_reward_single(self, G) -> float:
        key = np.ascontiguousarray(G, dtype=np.uint8).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        theta = fit_theta(G, self.data, self.config)
        if self.config.mode == "sigmoid":
            pred = predict_dx(theta, self.data.x, mode="sigmoid")
            err = float(np.sum((self.data.dx - pred) ** 2))
        else:
            err = float(theta.residuals.sum())
        value = -self.scale * err - self.config.l0 * float(np.sum(G != 0))
        if not np.isfinite(value):
            raise ValueError("non-finite reward residual")
        self._cache[key] = value
        return value

    def __call__(self, graphs) -> np.ndarray:
        graphs = np.asarray(graphs)
        if graphs.ndim == 2:
            graphs = graphs[None]
        return np.array([self.log_reward_single(g) for g in graphs])


def log_reward(graphs, data: DynamicsDataset, config: RewardConfig) -> np.ndarray:
    """One-shot convenience wrapper around RewardEvaluator."""
    return RewardEvaluator(data, config)(graphs)
