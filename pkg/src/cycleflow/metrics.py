"""Evaluation of sampled graph posteriors.

Directed structural Hamming distance (diagonal included -- self-loops are
legal structures here), expected distance to the nearest admissible graph,
edge-marginal AUROC via the rank formula, and exact small-instance
posterior oracles.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, asdict

import numpy as np


@dataclass
class PosteriorSampleSet:
    """Sampled binary adjacency matrices plus derived edge marginals."""

    n: int
    graphs: np.ndarray     # count x n x n, uint8
    marginals: np.ndarray  # n x n floats in [0, 1]

    @classmethod
    def from_graphs(cls, graphs: np.ndarray) -> "PosteriorSampleSet":
        graphs = np.asarray(graphs, dtype=np.uint8)
        if graphs.ndim != 3 or graphs.shape[0] < 1:
            raise ValueError("need a non-empty stack of n x n graphs")
        return cls(n=graphs.shape[1], graphs=graphs,
                   marginals=graphs.mean(axis=0))

    @property
    def count(self) -> int:
        return self.graphs.shape[0]

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n,
            "count": self.count,
            "graphs": [g.ravel().tolist() for g in self.graphs.astype(int)],
            "marginals": [[float(v) for v in row] for row in self.marginals],
        })

    @classmethod
    def from_json(cls, text: str) -> "PosteriorSampleSet":
        blob = json.loads(text)
        n = blob["n"]
        graphs = np.array(blob["graphs"], dtype=np.uint8).reshape(-1, n, n)
        return cls.from_graphs(graphs)


@dataclass
class EvalReport:
    bayes_shd: float
    auc: float
    sample_count: int
    seed: int
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def shd(g, h) -> int:
    """Directed structural Hamming distance, diagonal included."""
    g = np.asarray(g)
    h = np.asarray(h)
    if g.shape != h.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {h.shape}")
    return int(np.sum(g != h))


def bayes_shd(samples: PosteriorSampleSet, admissible) -> float:
    """Mean over samples of the distance to the nearest admissible graph."""
    adm = np.asarray(admissible, dtype=np.uint8)
    if adm.ndim != 3 or adm.shape[0] < 1:
        raise ValueError("admissible set must be a non-empty graph stack")
    if samples.count < 1:
        raise ValueError("empty sample set")
    flat_s = samples.graphs.reshape(samples.count, -1).astype(np.int16)
    flat_a = adm.reshape(adm.shape[0], -1).astype(np.int16)
    dists = np.abs(flat_s[:, None, :] - flat_a[None, :, :]).sum(axis=2)
    return float(dists.min(axis=1).mean())


def auc(marginals, labels, exclude_diagonal: bool = False) -> float:
    """AUROC of marginal scores against binary labels (Mann-Whitney U).

    Ties between a positive and a negative score contribute 1/2.
    """
    scores = np.asarray(marginals, dtype=np.float64)
    y = np.asarray(labels)
    if scores.shape != y.shape:
        raise ValueError("marginals/labels shape mismatch")
    if exclude_diagonal:
        off = ~np.eye(scores.shape[0], dtype=bool)
        scores, y = scores[off], y[off]
    scores = scores.ravel()
    y = y.ravel().astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("labels must contain at least one 0 and one 1")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    # midranks for ties
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def all_graphs(n: int):
    """All binary n x n adjacency matrices, row-major bit order."""
    cells = n * n
    for bits in itertools.product((0, 1), repeat=cells):
        yield np.array(bits, dtype=np.uint8).reshape(n, n)


def exact_posterior(reward_fn, n: int) -> dict:
    """R(G)/Z over every binary n x n graph; map keyed by graph bytes.

    Enumeration guard: n <= 3 (512 graphs).
    """
    if n > 3:
        raise ValueError("exact_posterior only enumerates up to n=3")
    graphs = np.stack(list(all_graphs(n)))
    log_r = np.asarray(reward_fn(graphs.astype(np.float64)), dtype=np.float64)
    log_z = _logsumexp(log_r)
    probs = np.exp(log_r - log_z)
    return {g.tobytes(): float(p) for g, p in zip(graphs, probs)}


def _logsumexp(x: np.ndarray) -> float:
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def empirical_distribution(samples: PosteriorSampleSet) -> dict:
    counts: dict = {}
    for g in samples.graphs:
        key = np.ascontiguousarray(g, dtype=np.uint8).tobytes()
        counts[key] = counts.get(key, 0) + 1
    total = samples.count
    return {k: v / total for k, v in counts.items()}


def tv_distance(p: dict, q: dict) -> float:
    """Total variation distance between two distributions over graph keys."""
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def admissible_union_labels(admissible) -> np.ndarray:
    """Default AUC labels: an edge is positive if any admissible graph has it."""
    adm = np.asarray(admissible, dtype=np.uint8)
    return (adm.max(axis=0) > 0).astype(np.uint8)


def admissible_labels(admissible, scheme: str = "union", marginals=None) -> np.ndarray:
    """Label matrix for multi-truth AUC: union, intersection, or best-match.

    best-match picks the admissible graph with the highest AUC against the
    given marginals, mirroring the nearest-truth reading of the metric.
    """
    adm = np.asarray(admissible, dtype=np.uint8)
    if scheme == "union":
        return (adm.max(axis=0) > 0).astype(np.uint8)
    if scheme == "intersection":
        return (adm.min(axis=0) > 0).astype(np.uint8)
    if scheme == "best":
        if marginals is None:
            raise ValueError("best-match labels need marginals")
        best, best_auc = None, -1.0
        for g in adm:
            try:
                a = auc(marginals, g)
            except ValueError:
                continue
            if a > best_auc:
                best, best_auc = g, a
        if best is None:
            raise ValueError("no admissible graph with non-degenerate labels")
        return best
    raise ValueError(f"unknown label scheme: {scheme!r}")
