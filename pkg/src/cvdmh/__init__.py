"""Canonical-view multi-modal hashing.

Learns compact binary codes for multi-modal image collections: greedy
submodular mining of canonical views, locality-constrained sparse coding
into an intermediate representation, a discrete penalty-method binary
embedding, and exact Hamming-ranking retrieval with a mAP/precision-scope
evaluation harness.
"""

from .canonical_views import CanonicalViewSet, SimilarityFn, greedy_mine, mine_all_modalities
from .config import RunConfig
from .dataset import (
    Dataset,
    DatasetError,
    ModalityFeatures,
    Split,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .graph import SolverMatrices, VisualGraph, build_A, build_graph, laplacian
from .hashing import (
    HashConfig,
    HashModel,
    SolverDivergence,
    SolverState,
    hash_matrix,
    hash_vector,
    learn_w,
    pcah_init,
    solve,
)
from .intermediate import (
    IntermediateRep,
    SparseCodeConfig,
    encode_dataset,
    encode_query,
    locality_weights,
    sparse_code_one,
)
from .metrics import MetricReport, average_precision, mean_ap, precision_scope
from .search import PackedCodes, SearchResult, hamming, pack, query, unpack

__all__ = [
    "CanonicalViewSet",
    "Dataset",
    "DatasetError",
    "HashConfig",
    "HashModel",
    "IntermediateRep",
    "MetricReport",
    "ModalityFeatures",
    "PackedCodes",
    "RunConfig",
    "SearchResult",
    "SimilarityFn",
    "SolverDivergence",
    "SolverMatrices",
    "SolverState",
    "SparseCodeConfig",
    "Split",
    "SyntheticSpec",
    "VisualGraph",
    "average_precision",
    "build_A",
    "build_graph",
    "encode_dataset",
    "encode_query",
    "generate_synthetic",
    "greedy_mine",
    "hamming",
    "hash_matrix",
    "hash_vector",
    "laplacian",
    "learn_w",
    "load_dataset",
    "locality_weights",
    "mean_ap",
    "mine_all_modalities",
    "pack",
    "pcah_init",
    "precision_scope",
    "query",
    "save_dataset",
    "solve",
    "sparse_code_one",
    "split_dataset",
    "unpack",
]

__version__ = "0.1.0"
