"""Visual graph over training images and the combined solver matrix.

The graph is a Gaussian-weighted k-NN graph on intermediate-representation
columns, symmetrized by taking the elementwise maximum of the directed
weights.  Its unnormalized Laplacian L = D - W feeds the combined matrix

    A = L + (beta / alpha) * (I - Y^T Q Y),    Q = (Y Y^T + gamma I)^(-1)

which the binary-embedding solver only ever touches through products of the
form M @ A.  A is materialized densely up to ``dense_threshold`` training
images; beyond that, products are applied as M @ L plus the low-rank
correction (two TP-sized multiplications), which is algebraically the same
matrix without the N x N allocation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .intermediate import IntermediateRep

DENSE_THRESHOLD = 20_000


@dataclass(frozen=True)
class VisualGraph:
    """Symmetric non-negative k-NN adjacency with zero diagonal."""

    adjacency: sp.csr_matrix
    k: int
    bandwidth: float


def _columns(y: IntermediateRep | np.ndarray) -> np.ndarray:
    data = y.data if isinstance(y, IntermediateRep) else np.asarray(y, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError(f"expected a feature-by-image matrix, got shape {data.shape}")
    return data


def build_graph(y: IntermediateRep | np.ndarray, k: int, bandwidth: float | None = None) -> VisualGraph:
    """Gaussian-weighted union k-NN graph over the columns of y.

    ``bandwidth=None`` self-tunes to the mean k-NN distance.  Neighbor ties
    resolve to the lowest column index, so the graph is deterministic.
    """
    x = _columns(y)
    n = x.shape[1]
    if k <= 0:
        raise ValueError(f"need k >= 1, got {k}")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the number of columns {n}")

    sq = np.einsum("ij,ij->j", x, x)
    rows = np.repeat(np.arange(n), k)
    cols = np.empty(n * k, dtype=np.int64)
    dists = np.empty(n * k)
    block = max(1, min(n, 8_388_608 // max(n, 1)))  # ~64MB of float64 per distance block
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        d2 = np.maximum(sq[lo:hi, None] + sq[None, :] - 2.0 * (x[:, lo:hi].T @ x), 0.0)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf  # exclude self
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        cols[lo * k : hi * k] = order.ravel()
        dists[lo * k : hi * k] = np.sqrt(np.take_along_axis(d2, order, axis=1)).ravel()

    bw = float(bandwidth) if bandwidth is not None else float(dists.mean())
    if bw <= 0:
        bw = 1.0  # all-coincident columns: weights are exp(0) anyway
    weights = np.exp(-(dists**2) / (2.0 * bw**2))
    w = sp.csr_matrix((weights, (rows, cols)), shape=(n, n))
    w = w.maximum(w.T)
    w.setdiag(0.0)
    w.eliminate_zeros()
    return VisualGraph(adjacency=w.tocsr(), k=k, bandwidth=bw)


def laplacian(graph: VisualGraph) -> sp.csr_matrix:
    """Unnormalized Laplacian L = D - W; L @ 1 = 0 by construction."""
    w = graph.adjacency
    degrees = np.asarray(w.sum(axis=1)).ravel()
    return (sp.diags(degrees) - w).tocsr()


@dataclass
class SolverMatrices:
    """Laplacian, ridge-regularized Gram inverse, and the combined matrix A.

    ``dense`` is None above the materialization threshold; ``right_product``
    then applies the same operator lazily.  All members are immutable after
    construction.
    """

    laplacian: sp.csr_matrix
    q: np.ndarray
    dense: np.ndarray | None
    alpha: float
    beta: float
    gamma: float
    _y: np.ndarray
    _qy: np.ndarray

    @property
    def n(self) -> int:
        return self.laplacian.shape[0]

    def right_product(self, m: np.ndarray) -> np.ndarray:
        """Compute m @ A for a row-block matrix m of shape (*, N)."""
        if self.dense is not None:
            return m @ self.dense
        lap_part = (self.laplacian @ m.T).T  # L is symmetric
        low_rank = m - (m @ self._y.T) @ self._qy
        return lap_part + (self.beta / self.alpha) * low_rank

    def materialize(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        a = self.laplacian.toarray() + (self.beta / self.alpha) * (
            np.eye(self.n) - self._y.T @ self._qy
        )
        return (a + a.T) / 2.0


def build_A(
    lap: sp.csr_matrix,
    y: IntermediateRep | np.ndarray,
    alpha: float,
    beta: float,
    gamma: float,
    dense_threshold: int = DENSE_THRESHOLD,
) -> SolverMatrices:
    """Assemble the solver matrix from a Laplacian and code matrix.

    Q comes from a symmetric positive-definite solve (gamma > 0 keeps the
    Gram matrix invertible); the dense A is symmetrized as (A + A^T) / 2 to
    absorb roundoff.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    ym = _columns(y)
    tp, n = ym.shape
    if lap.shape != (n, n):
        raise ValueError(f"Laplacian shape {lap.shape} does not match N={n}")

    gram = ym @ ym.T + gamma * np.eye(tp)
    factor = cho_factor(gram)
    q = cho_solve(factor, np.eye(tp))
    q = (q + q.T) / 2.0
    qy = cho_solve(factor, ym)

    dense = None
    if n <= dense_threshold:
        a = sp.csr_matrix(lap).toarray() + (beta / alpha) * (np.eye(n) - ym.T @ qy)
        dense = (a + a.T) / 2.0
    return SolverMatrices(
        laplacian=sp.csr_matrix(lap),
        q=q,
        dense=dense,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        _y=ym,
        _qy=qy,
    )
