"""Synthetic ground-truth generators and the admissibility oracle.

Systems are sparse coefficient matrices A with support bounded away from
zero.  Indeterminacy is injected by duplicating a variable: the copy
replicates the original's values and inherits its parent row, so several
graphs explain the resulting data identically and only a sparsity penalty
separates them.  Admissibility is defined behaviorally: a graph is
admissible when its best-fit residual on noiseless data stays below a
tolerance while using exactly as many edges as the true graph.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .dynamics import DynamicsDataset, RewardConfig, fit_theta

# deterministic design used for residual-based admissibility checks
_ORACLE_SEED = 20240517
_ORACLE_RIDGE = 1e-9


@dataclass
class GroundTruthSystem:
    A_true: np.ndarray
    mode: str = "linear"            # or "sigmoid"
    sparsity: float = 0.0
    duplicates: list = field(default_factory=list)  # (original, copy) pairs
    admissible: list = field(default_factory=list)  # binary n x n arrays
    rho: float = 1.0                # duplicate correlation; 1 = exact copy

    def __post_init__(self):
        self.A_true = np.asarray(self.A_true, dtype=np.float64)
        if not self.admissible:
            self.admissible = [self.G_true.copy()]

    @property
    def d(self) -> int:
        return self.A_true.shape[0]

    @property
    def G_true(self) -> np.ndarray:
        return (self.A_true != 0).astype(np.uint8)

    @property
    def n_edges(self) -> int:
        return int(self.G_true.sum())

    def to_json(self) -> str:
        return json.dumps({
            "n": self.d,
            "mode": self.mode,
            "sparsity": self.sparsity,
            "rho": self.rho,
            "A_true": self.A_true.ravel().tolist(),
            "duplicates": [list(p) for p in self.duplicates],
            "admissible": [g.ravel().astype(int).tolist() for g in self.admissible],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruthSystem":
        blob = json.loads(text)
        n = blob["n"]
        return cls(
            A_true=np.array(blob["A_true"]).reshape(n, n),
            mode=blob["mode"],
            sparsity=blob["sparsity"],
            rho=blob.get("rho", 1.0),
            duplicates=[tuple(p) for p in blob["duplicates"]],
            admissible=[np.array(g, dtype=np.uint8).reshape(n, n)
                        for g in blob["admissible"]],
        )


def gen_sparse_system(d: int, s: float, mode: str = "linear",
                      seed: int = 0) -> GroundTruthSystem:
    """Random system with exactly round((1-s) d^2) nonzero coefficients.

    Magnitudes are drawn uniform from [-1,-0.25] u [0.25,1]: bounded away
    from zero so the support (and hence admissibility) is unambiguous.
    """
    if d < 2 or not (0 <= s < 1):
        raise ValueError("need d >= 2 and 0 <= s < 1")
    m = round((1 - s) * d * d)
    if m < 1:
        raise ValueError("requested sparsity leaves zero nonzero entries")
    rng = np.random.default_rng(seed)
    positions = rng.choice(d * d, size=m, replace=False)
    magnitudes = rng.uniform(0.25, 1.0, size=m)
    signs = rng.choice([-1.0, 1.0], size=m)
    A = np.zeros(d * d)
    A[positions] = magnitudes * signs
    A = A.reshape(d, d)
    system = GroundTruthSystem(A_true=A, mode=mode, sparsity=s)
    system.admissible = [system.G_true.copy()]
    return system


def add_indeterminacy(system: GroundTruthSystem, v: int,
                      recompute_admissible: bool = True) -> GroundTruthSystem:
    """Append a variable that mirrors v and inherits v's parent row."""
    d = system.d
    if not (0 <= v < d):
        raise ValueError(f"variable index {v} out of range for d={d}")
    A = np.zeros((d + 1, d + 1))
    A[:d, :d] = system.A_true
    A[d, :d] = system.A_true[v]
    extended = GroundTruthSystem(
        A_true=A, mode=system.mode, sparsity=system.sparsity,
        duplicates=list(system.duplicates) + [(v, d)], rho=system.rho)
    if recompute_admissible:
        extended.admissible = enumerate_admissible(extended)
    else:
        extended.admissible = [extended.G_true.copy()]
    return extended


def simulate(system: GroundTruthSystem, N: int, noise: float = 0.0,
             rng=None) -> DynamicsDataset:
    """Draw N iid standard-normal states and their model derivatives.

    Duplicated columns are copied (or correlated when rho < 1) before
    derivatives are computed; Gaussian observation noise is optional.
    """
    if N < 1:
        raise ValueError("need N >= 1 samples")
    if rng is None:
        rng = np.random.default_rng(0)
    d = system.d
    x = rng.standard_normal((N, d))
    for orig, copy in system.duplicates:
        if system.rho >= 1.0:
            x[:, copy] = x[:, orig]
        else:
            x[:, copy] = (system.rho * x[:, orig]
                          + math.sqrt(1 - system.rho ** 2) * rng.standard_normal(N))
    dx = x @ system.A_true.T
    if system.mode == "sigmoid":
        dx = 1.0 / (1.0 + np.exp(-dx))
    if noise > 0:
        dx = dx + noise * rng.standard_normal(dx.shape)
    return DynamicsDataset(x=x, dx=dx)


def _oracle_data(system: GroundTruthSystem) -> DynamicsDataset:
    return simulate(system, N=max(64, 8 * system.d), noise=0.0,
                    rng=np.random.default_rng(_ORACLE_SEED))


def _row_residual(xs: np.ndarray, y: np.ndarray, ridge: float) -> float:
    if xs.shape[1] == 0:
        return float(y @ y)
    gram = xs.T @ xs + ridge * np.eye(xs.shape[1])
    w = np.linalg.solve(gram, xs.T @ y)
    r = y - xs @ w
    return float(r @ r)


def enumerate_admissible(system: GroundTruthSystem, tol: float = 1e-8):
    """All equal-edge-count graphs whose best-fit residual is <= tol.

    Full enumeration is per-row (residuals decompose over rows) and
    guarded to d <= 6.  Larger systems fall back to a restricted search
    that only substitutes duplicate originals/copies as edge sources.
    """
    if system.d > 6:
        return _restricted_admissible(system, tol)
    data = _oracle_data(system)
    d = system.d
    k = system.n_edges
    x, dx = data.x, data.dx

    # per-row candidate supports surviving the residual bound
    row_options = []
    for i in range(d):
        y = dx[:, i]
        options = []
        for size in range(d + 1):
            for support in itertools.combinations(range(d), size):
                res = _row_residual(x[:, list(support)], y, _ORACLE_RIDGE)
                if res <= tol:
                    options.append((support, size, res))
        if not options:
            return [system.G_true.copy()]
        row_options.append(options)

    results = []
    sizes = [sorted({o[1] for o in opts}) for opts in row_options]
    min_tail = [0] * (d + 1)
    max_tail = [0] * (d + 1)
    for i in range(d - 1, -1, -1):
        min_tail[i] = min_tail[i + 1] + sizes[i][0]
        max_tail[i] = max_tail[i + 1] + sizes[i][-1]

    def recurse(i, used, total_res, chosen):
        if total_res > tol:
            return
        if i == d:
            if used == k:
                g = np.zeros((d, d), dtype=np.uint8)
                for row, support in enumerate(chosen):
                    g[row, list(support)] = 1
                results.append(g)
            return
        remaining = k - used
        if remaining < min_tail[i] or remaining > max_tail[i]:
            return
        for support, size, res in row_options[i]:
            recurse(i + 1, used + size, total_res + res, chosen + [support])

    recurse(0, 0, 0.0, [])
    results.sort(key=lambda g: g.tobytes())
    return results


def _restricted_admissible(system: GroundTruthSystem, tol: float):
    """Duplicate-source substitution search for d > 6 systems.

    Only edges sourced at a duplicated variable (or its copy) are allowed
    to swap between the two; each candidate is still verified behaviorally
    by its fit residual.
    """
    if not system.duplicates:
        return [system.G_true.copy()]
    data = _oracle_data(system)
    config = RewardConfig(ridge=_ORACLE_RIDGE)
    G0 = system.G_true

    swap_slots = []  # (row, source_a, source_b)
    for orig, copy in system.duplicates:
        for i in range(system.d):
            if G0[i, orig] or G0[i, copy]:
                swap_slots.append((i, orig, copy))
    if len(swap_slots) > 16:
        raise ValueError("restricted admissibility search too large")

    seen = {}
    for assignment in itertools.product((0, 1), repeat=len(swap_slots)):
        g = G0.copy()
        for (i, a, b), pick in zip(swap_slots, assignment):
            g[i, a], g[i, b] = (1, 0) if pick == 0 else (0, 1)
        key = g.tobytes()
        if key in seen or int(g.sum()) != system.n_edges:
            continue
        theta = fit_theta(g, data, config)
        if float(theta.residuals.sum()) <= tol:
            seen[key] = g
    results = sorted(seen.values(), key=lambda g: g.tobytes())
    return results


# ---------------------------------------------------------------------------
# fixtures


def _load_fixture(name: str) -> dict:
    text = resources.files("cycleflow.fixtures").joinpath(name).read_text()
    return json.loads(text)


def load_graph_list(blob: dict):
    n = blob["n"]
    return [np.array(g, dtype=np.uint8).reshape(n, n) for g in blob["graphs"]]


def cell_cycle_fixture():
    """The 5-gene cell-cycle reference admissible set (81 structures).

    Loaded from a bundled reconstruction, not derived; the published
    description does not print the matrices.  Returns (graphs, names).
    """
    blob = _load_fixture("cell_cycle_admissible.json")
    return load_graph_list(blob), blob["names"]


def three_explanations_fixture():
    """Small chain plus a mirrored variable with three listed explanations.

    Reconstructed set; the third graph uses both the original and the copy
    as sources and therefore carries one extra edge, so it is excluded by
    the equal-edge-count enumeration above.
    """
    blob = _load_fixture("three_explanations.json")
    return load_graph_list(blob), blob["names"]


def save_system(path, system: GroundTruthSystem):
    with open(path, "w") as fh:
        fh.write(system.to_json())


def load_system(path) -> GroundTruthSystem:
    with open(path) as fh:
        return GroundTruthSystem.from_json(fh.read())
