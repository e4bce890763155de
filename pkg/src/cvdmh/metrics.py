"""Retrieval metrics: average precision at a cutoff and precision-scope curves.

Relevance is label equality: a retrieved item is relevant iff it carries the
query's landmark label.  Average precision at cutoff R is

    AP = (1 / NR) * sum_{r=1..R} pre(r) * rel(r)

where pre(r) is the precision of the top r items, rel(r) the relevance
indicator, and NR counts the relevant items among the top R retrieved (so a
fully relevant prefix scores exactly 1).  NR = 0 yields AP = 0.  Evaluation
consumes an already-deterministic ranking; tie handling belongs to search.

Per-query computations are independent; aggregation is a plain mean.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_SCOPES = tuple(range(100, 1001, 100))


def average_precision(ranked_labels: Sequence[int], query_label: int, r_cutoff: int) -> float:
    labels = np.asarray(ranked_labels)
    if labels.size == 0:
        raise ValueError("empty ranking")
    if r_cutoff < 1 or r_cutoff > labels.size:
        raise ValueError(f"cutoff {r_cutoff} outside [1, {labels.size}]")
    rel = (labels[:r_cutoff] == query_label).astype(np.float64)
    n_rel = rel.sum()
    if n_rel == 0:
        return 0.0
    precision = np.cumsum(rel) / np.arange(1, r_cutoff + 1)
    return float((precision * rel).sum() / n_rel)


def mean_ap(
    ranked_labels_per_query: Sequence[Sequence[int]],
    query_labels: Sequence[int],
    r_cutoff: int = 100,
) -> float:
    if len(ranked_labels_per_query) == 0:
        raise ValueError("need at least one query")
    aps = [
        average_precision(ranked, lab, r_cutoff)
        for ranked, lab in zip(ranked_labels_per_query, query_labels)
    ]
    return float(np.mean(aps))


def precision_scope(
    ranked_labels_per_query: Sequence[Sequence[int]],
    query_labels: Sequence[int],
    scopes: Iterable[int] = DEFAULT_SCOPES,
) -> dict[int, float]:
    """Mean precision over queries at each retrieval scope."""
    scopes = [int(s) for s in scopes]
    n_items = min(len(r) for r in ranked_labels_per_query)
    for s in scopes:
        if s < 1 or s > n_items:
            raise ValueError(f"scope {s} exceeds ranking length {n_items}")
    curve: dict[int, float] = {}
    for s in scopes:
        per_query = [
            float((np.asarray(ranked[:s]) == lab).mean())
            for ranked, lab in zip(ranked_labels_per_query, query_labels)
        ]
        curve[s] = float(np.mean(per_query))
    return curve


@dataclass
class MetricReport:
    """mAP, the precision-scope curve, per-query APs, and a config echo."""

    map: float
    precision_at: dict[int, float]
    per_query_ap: list[float]
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = [self.map, *self.precision_at.values(), *self.per_query_ap]
        if any(v < -1e-12 or v > 1 + 1e-12 for v in values):
            raise ValueError("metric values must lie in [0, 1]")

    def to_json(self, path: str | Path) -> None:
        payload = {
            "map": self.map,
            "precision_at": {str(k): v for k, v in sorted(self.precision_at.items())},
            "per_query_ap": self.per_query_ap,
            "config": self.config,
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def evaluate_ranking(
    ranked_labels_per_query: Sequence[Sequence[int]],
    query_labels: Sequence[int],
    r_cutoff: int = 100,
    scopes: Iterable[int] | None = None,
    config: dict | None = None,
) -> MetricReport:
    aps = [
        average_precision(ranked, lab, r_cutoff)
        for ranked, lab in zip(ranked_labels_per_query, query_labels)
    ]
    n_items = min(len(r) for r in ranked_labels_per_query)
    if scopes is None:
        scopes = [s for s in DEFAULT_SCOPES if s <= n_items] or [n_items]
    curve = precision_scope(ranked_labels_per_query, query_labels, scopes)
    return MetricReport(
        map=float(np.mean(aps)),
        precision_at=curve,
        per_query_ap=[float(a) for a in aps],
        config=dict(config or {}),
    )


def write_map_csv(path: str | Path, rows: Iterable[tuple[str, int, int, float]]) -> None:
    """Rows of (method, code_length, seed, map)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "c", "seed", "map"])
        for method, c, seed, value in rows:
            w.writerow([method, c, seed, f"{value:.6f}"])


def write_precision_csv(path: str | Path, rows: Iterable[tuple[str, int, int, float]]) -> None:
    """Rows of (method, code_length, scope, precision)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "c", "scope", "precision"])
        for method, c, scope, value in rows:
            w.writerow([method, c, scope, f"{value:.6f}"])
