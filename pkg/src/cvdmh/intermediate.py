"""Locality-constrained sparse coding onto canonical views.

Each image column x is coded against a modality's exemplar matrix E: the
support is the r exemplars nearest to x in Euclidean distance, and on that
support the coefficients solve

    min ||x - E_s y||^2 + sigma * ||d_s * y||^2   s.t.  sum(y) = 1

where d_s[t] = exp(||x - e_t|| / rho) grows with distance, damping
coefficients on far exemplars.  With the support fixed this is an
equality-constrained quadratic with an exact (r+1)-dimensional KKT system,
solved directly per column.  Off-support entries are exactly zero.

Per-modality codes are stacked row-wise into a (T*P) x N matrix.  Column
encodings are independent; a thread pool fans them out when more than one
worker is available (the output assembly is a disjoint-column write).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .canonical_views import CanonicalViewSet
from .dataset import Dataset
from .util import worker_count

RhoSpec = float | str
ViewLike = CanonicalViewSet | np.ndarray


def _exemplars(view: ViewLike) -> np.ndarray:
    """Accept a mined view set or a bare exemplar matrix (d x T)."""
    e = view.exemplars if isinstance(view, CanonicalViewSet) else np.asarray(view, dtype=np.float64)
    if e.ndim != 2:
        raise ValueError(f"exemplars must be a d x T matrix, got shape {e.shape}")
    return e


@dataclass(frozen=True)
class SparseCodeConfig:
    """r active views per image, locality weight sigma, distance scale rho.

    ``rho="auto"`` resolves to the mean pairwise distance of the training
    pool (sampled when the pool is large); the resolved value is frozen and
    reused for query encoding.
    """

    r: int
    sigma: float = 1e-4
    rho: RhoSpec = "auto"

    def __post_init__(self) -> None:
        if self.r < 1:
            raise ValueError(f"need r >= 1, got {self.r}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not isinstance(self.rho, str) and not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if isinstance(self.rho, str) and self.rho != "auto":
            raise ValueError(f'rho must be a positive number or "auto", got {self.rho!r}')


@dataclass(frozen=True)
class IntermediateRep:
    """Stacked sparse-code matrix, one modality block of T rows per modality."""

    data: np.ndarray
    per_modality_offsets: tuple[int, ...]
    r: int
    sigma: float
    rhos: tuple[float, ...]

    @property
    def n_modalities(self) -> int:
        return len(self.per_modality_offsets)

    @property
    def views_per_modality(self) -> int:
        return self.data.shape[0] // self.n_modalities


def resolve_rho(cfg: SparseCodeConfig, pool: np.ndarray, max_pairs: int = 1_000_000, seed: int = 0) -> float:
    """Resolve rho="auto" against a training pool; numeric rho passes through."""
    if not isinstance(cfg.rho, str):
        return float(cfg.rho)
    n = pool.shape[1]
    if n < 2:
        return 1.0
    total = n * (n - 1) // 2
    if total <= max_pairs:
        sq = np.einsum("ij,ij->j", pool, pool)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (pool.T @ pool), 0.0)
        mean = float(np.sqrt(d2[np.triu_indices(n, k=1)]).mean())
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        j = rng.integers(0, n - 1, size=max_pairs)
        j = np.where(j >= i, j + 1, j)
        mean = float(np.linalg.norm(pool[:, i] - pool[:, j], axis=0).mean())
    return mean if mean > 0 else 1.0


def locality_weights(x: np.ndarray, exemplars: np.ndarray, rho: float) -> np.ndarray:
    """exp(||x - e_t|| / rho) per exemplar; strictly positive, grows with distance."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if not np.isfinite(x).all():
        raise ValueError("non-finite query vector")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    dists = np.linalg.norm(exemplars - x[:, None], axis=0)
    return np.exp(dists / rho)


def _kkt_solve(es: np.ndarray, x: np.ndarray, d: np.ndarray, sigma: float) -> np.ndarray:
    """Solve the support-restricted quadratic with the sum-to-one constraint."""
    r = es.shape[1]
    gram = es.T @ es
    h = 2.0 * (gram + sigma * np.diag(d * d))
    kkt = np.zeros((r + 1, r + 1))
    kkt[:r, :r] = h
    kkt[:r, r] = 1.0
    kkt[r, :r] = 1.0
    rhs = np.concatenate([2.0 * (es.T @ x), [1.0]])
    try:
        sol = np.linalg.solve(kkt, rhs)
        if np.isfinite(sol).all():
            return sol[:r]
    except np.linalg.LinAlgError:
        pass
    # degenerate support (duplicate exemplars): trace-scaled ridge and one retry
    ridge = 1e-10 * (np.trace(gram) / r + sigma * float((d * d).mean()))
    kkt[:r, :r] = h + 2.0 * max(ridge, 1e-300) * np.eye(r)
    sol = np.linalg.solve(kkt, rhs)
    if not np.isfinite(sol).all():
        raise np.linalg.LinAlgError("sparse-coding KKT system is singular even after ridge bump")
    return sol[:r]


def sparse_code_one(x: np.ndarray, exemplars: np.ndarray, cfg: SparseCodeConfig, rho: float | None = None) -> np.ndarray:
    """Code one vector against exemplar columns; at most r nonzeros, sum 1."""
    x = np.asarray(x, dtype=np.float64).ravel()
    t = exemplars.shape[1]
    if cfg.r > t:
        raise ValueError(f"r={cfg.r} exceeds number of exemplars {t}")
    rho_val = float(rho) if rho is not None else cfg.rho
    if isinstance(rho_val, str):
        raise ValueError('rho="auto" must be resolved against a training pool before coding')

    dists = np.linalg.norm(exemplars - x[:, None], axis=0)
    support = np.argsort(dists, kind="stable")[: cfg.r]
    d = np.exp(dists[support] / rho_val)
    y = np.zeros(t)
    y[support] = _kkt_solve(exemplars[:, support], x, d, cfg.sigma)
    return y


def _encode_block(x: np.ndarray, exemplars: np.ndarray, cfg: SparseCodeConfig, rho: float) -> np.ndarray:
    """Code every column of x against one modality's exemplars."""
    t, n = exemplars.shape[1], x.shape[1]
    sq_e = np.einsum("ij,ij->j", exemplars, exemplars)
    sq_x = np.einsum("ij,ij->j", x, x)
    d2 = np.maximum(sq_e[:, None] + sq_x[None, :] - 2.0 * (exemplars.T @ x), 0.0)
    dists = np.sqrt(d2)
    supports = np.argsort(dists, axis=0, kind="stable")[: cfg.r]

    out = np.zeros((t, n))

    def code_range(lo: int, hi: int) -> None:
        for col in range(lo, hi):
            s = supports[:, col]
            d = np.exp(dists[s, col] / rho)
            out[s, col] = _kkt_solve(exemplars[:, s], x[:, col], d, cfg.sigma)

    workers = min(worker_count(), max(1, n // 64))
    if workers <= 1:
        code_range(0, n)
    else:
        bounds = np.linspace(0, n, workers + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda w: code_range(bounds[w], bounds[w + 1]), range(workers)))
    return out


def encode_matrix(
    columns: Sequence[np.ndarray],
    views: Sequence[ViewLike],
    cfg: SparseCodeConfig,
    rhos: Sequence[float],
) -> IntermediateRep:
    """Code per-modality feature matrices and stack the blocks row-wise."""
    if len(columns) != len(views) or len(views) != len(rhos):
        raise ValueError("need one feature matrix, view set, and rho per modality")
    blocks = [
        _encode_block(np.asarray(x, dtype=np.float64), _exemplars(v), cfg, rho)
        for x, v, rho in zip(columns, views, rhos)
    ]
    offsets = tuple(int(o) for o in np.cumsum([0] + [b.shape[0] for b in blocks[:-1]]))
    return IntermediateRep(
        data=np.vstack(blocks),
        per_modality_offsets=offsets,
        r=cfg.r,
        sigma=cfg.sigma,
        rhos=tuple(float(r) for r in rhos),
    )


def encode_dataset(ds: Dataset, views: Sequence[ViewLike], cfg: SparseCodeConfig) -> IntermediateRep:
    """Code every image of the dataset against frozen exemplars.

    rho="auto" resolves per modality on the train split (all images are
    then coded with the frozen values, matching the query path).
    """
    if len(views) != ds.n_modalities:
        raise ValueError(f"got {len(views)} view sets for {ds.n_modalities} modalities")
    rhos = []
    for m, v in zip(ds.modalities, views):
        pool = m.data[:, ds.split.train] if ds.split is not None else m.data
        rhos.append(resolve_rho(cfg, pool))
    return encode_matrix([m.data for m in ds.modalities], views, cfg, rhos)


def encode_query(
    x_multi: Sequence[np.ndarray],
    views: Sequence[ViewLike],
    cfg: SparseCodeConfig,
    rhos: Sequence[float] | None = None,
) -> np.ndarray:
    """Code one image (one feature vector per modality) into a stacked column.

    ``rhos`` must carry the train-time values when cfg.rho is "auto"; the
    scale is frozen at training and never re-estimated from queries.
    """
    if len(x_multi) != len(views):
        raise ValueError(f"got {len(x_multi)} query vectors for {len(views)} modalities")
    if rhos is None:
        if isinstance(cfg.rho, str):
            raise ValueError('query encoding with rho="auto" needs the frozen train-time rhos')
        rhos = [float(cfg.rho)] * len(views)
    parts = []
    for p, (x, v, rho) in enumerate(zip(x_multi, views, rhos), start=1):
        exemplars = _exemplars(v)
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.shape[0] != exemplars.shape[0]:
            raise ValueError(
                f"modality {p}: query dim {x.shape[0]} != exemplar dim {exemplars.shape[0]}"
            )
        parts.append(sparse_code_one(x, exemplars, cfg, rho=rho))
    return np.concatenate(parts)
