"""Canonical view mining.

A canonical view set is a small subset of a training pool chosen to score
high on representativeness (total similarity to the whole pool) while
keeping redundancy (total intra-set similarity) low.  The score

    h(V) = Rep(V) - Red(V)

is monotone submodular in the regime |V| << pool size, so greedy selection
by marginal gain carries the usual (1 - 1/e) approximation guarantee.  The
greedy loop uses incremental gain bookkeeping: selecting u changes every
remaining candidate's gain by exactly -2 g(u, v), so each step costs one
pass over the candidates and the whole run stays at O(N * T) gain
evaluations.

Similarity is a Gaussian kernel on Euclidean distance with self-similarity
fixed at 1.  Per-candidate gain evaluation within a step is data parallel;
the select-and-update step is sequential.  Modalities are independent and a
returned CanonicalViewSet is immutable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, ModalityFeatures


@dataclass(frozen=True)
class SimilarityFn:
    """Gaussian similarity g(u, v) = exp(-||u - v||^2 / (2 * bandwidth^2))."""

    bandwidth: float
    kind: str = "gaussian"

    def __post_init__(self) -> None:
        if self.kind != "gaussian":
            raise ValueError(f"unsupported similarity kind: {self.kind}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")


@dataclass(frozen=True)
class CanonicalViewSet:
    """Greedy-selected exemplars for one modality.

    ``indices`` are column positions in the mined pool, ``exemplars`` the
    corresponding feature columns, and ``score_trace[t]`` the h value after
    step t.  ``gain_evaluations`` counts marginal-gain computations, which
    stays within N * T by construction.
    """

    modality_id: int
    indices: np.ndarray
    exemplars: np.ndarray
    score_trace: np.ndarray
    gain_evaluations: int

    def __post_init__(self) -> None:
        if len(np.unique(self.indices)) != self.indices.size:
            raise ValueError("selected view indices must be distinct")


def _pool_matrix(pool: ModalityFeatures | np.ndarray) -> np.ndarray:
    data = pool.data if isinstance(pool, ModalityFeatures) else np.asarray(pool, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"pool must be a d x N matrix, got shape {data.shape}")
    return data


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between columns of x, clipped at 0."""
    sq = np.einsum("ij,ij->j", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x.T @ x)
    return np.maximum(d2, 0.0)


def auto_bandwidth(pool: ModalityFeatures | np.ndarray, max_pairs: int = 1000, seed: int = 0) -> float:
    """Mean pairwise Euclidean distance over at most ``max_pairs`` sampled pairs."""
    x = _pool_matrix(pool)
    n = x.shape[1]
    if n < 2:
        return 1.0
    total_pairs = n * (n - 1) // 2
    if total_pairs <= max_pairs:
        d2 = pairwise_sq_dists(x)
        mean = np.sqrt(d2[np.triu_indices(n, k=1)]).mean()
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        j = rng.integers(0, n - 1, size=max_pairs)
        j = np.where(j >= i, j + 1, j)  # avoid self pairs
        mean = float(np.linalg.norm(x[:, i] - x[:, j], axis=0).mean())
    return float(mean) if mean > 0 else 1.0


def similarity_matrix(pool: ModalityFeatures | np.ndarray, sim: SimilarityFn) -> np.ndarray:
    x = _pool_matrix(pool)
    g = np.exp(-pairwise_sq_dists(x) / (2.0 * sim.bandwidth**2))
    np.fill_diagonal(g, 1.0)
    return g


def _check_indices(view_indices, n: int) -> np.ndarray:
    idx = np.asarray(view_indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"view index out of range for pool of size {n}")
    if len(np.unique(idx)) != idx.size:
        raise ValueError("duplicate view indices")
    return idx


def rep_score(view_indices, pool: ModalityFeatures | np.ndarray, sim: SimilarityFn) -> float:
    """Total similarity from the view set to the rest of the pool (self pairs excluded)."""
    g = similarity_matrix(pool, sim)
    idx = _check_indices(view_indices, g.shape[0])
    if idx.size == 0:
        return 0.0
    return float((g[idx].sum(axis=1) - 1.0).sum())


def red_score(view_indices, pool: ModalityFeatures | np.ndarray, sim: SimilarityFn) -> float:
    """Total intra-set similarity over ordered pairs; 0 for |V| <= 1."""
    g = similarity_matrix(pool, sim)
    idx = _check_indices(view_indices, g.shape[0])
    if idx.size <= 1:
        return 0.0
    sub = g[np.ix_(idx, idx)]
    return float(sub.sum() - idx.size)


def h_score(view_indices, pool: ModalityFeatures | np.ndarray, sim: SimilarityFn) -> float:
    """Representativeness minus redundancy; h of the empty set is 0."""
    return rep_score(view_indices, pool, sim) - red_score(view_indices, pool, sim)


def greedy_mine(
    pool: ModalityFeatures | np.ndarray,
    t: int,
    sim: SimilarityFn,
    modality_id: int = 1,
) -> CanonicalViewSet:
    """Select t views by greedy marginal gain, ties broken by lowest index.

    The marginal gain of candidate v given the current selection C is
    Rep({v}) - 2 * sum_{u in C} g(u, v), maintained incrementally.
    """
    x = _pool_matrix(pool)
    n = x.shape[1]
    if t < 1:
        raise ValueError(f"need t >= 1, got {t}")
    if t > n:
        raise ValueError(f"t={t} exceeds pool size {n}")

    g = similarity_matrix(x, sim)
    gain = g.sum(axis=1) - 1.0  # Rep({v}) for every candidate
    chosen: list[int] = []
    trace = np.empty(t)
    h_val = 0.0
    evaluations = 0
    active = np.ones(n, dtype=bool)
    for step in range(t):
        evaluations += int(active.sum())
        masked = np.where(active, gain, -np.inf)
        best = int(np.argmax(masked))  # argmax returns the lowest index on ties
        h_val += gain[best]
        trace[step] = h_val
        chosen.append(best)
        active[best] = False
        gain -= 2.0 * g[best]

    idx = np.array(chosen, dtype=np.int64)
    return CanonicalViewSet(
        modality_id=modality_id,
        indices=idx,
        exemplars=x[:, idx].copy(),
        score_trace=trace,
        gain_evaluations=evaluations,
    )


def mine_all_modalities(
    ds: Dataset,
    t: int,
    sim: SimilarityFn | None = None,
) -> list[CanonicalViewSet]:
    """Mine one view set per modality on the train split only.

    With ``sim=None`` each modality gets an automatic bandwidth (mean sampled
    pairwise distance of its own train pool).
    """
    if ds.split is None or ds.split.train.size == 0:
        raise ValueError("dataset needs a non-empty train split for mining")
    out = []
    for m in ds.modalities:
        train_pool = m.data[:, ds.split.train]
        modality_sim = sim if sim is not None else SimilarityFn(bandwidth=auto_bandwidth(train_pool))
        out.append(greedy_mine(train_pool, t, modality_sim, modality_id=m.modality_id))
    return out


def export_trace_csv(views: CanonicalViewSet, path: str | Path) -> None:
    """Dump (step, chosen_index, h_value) rows for inspection."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "chosen_index", "h_value"])
        for step, (idx, h) in enumerate(zip(views.indices, views.score_trace), start=1):
            w.writerow([step, int(idx), f"{h:.12g}"])


def read_trace_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    idx = np.array([int(r["chosen_index"]) for r in rows], dtype=np.int64)
    trace = np.array([float(r["h_value"]) for r in rows])
    return idx, trace
