"""End-to-end orchestration: offline learning, query hashing, evaluation.

Offline learning mines canonical views on the train split, codes every
image against the frozen exemplars, builds the visual graph and solver
matrix on the train columns only, solves the discrete embedding, and learns
the linear projection.  Database and query images are then hashed through
the projection, so anything outside the train split never influences model
selection.

Stage outputs are written with an ``input_key`` content hash (dataset bytes
plus the stage-relevant part of the config); a rerun whose key matches
reuses the artifact, which makes code-length sweeps cheap because mining
and coding dominate wall time.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import canonical_views as cv
from . import graph as graph_mod
from . import hashing, intermediate, metrics, search
from .config import RunConfig
from .dataset import Dataset, generate_synthetic, load_dataset, read_matrix, split_dataset, write_matrix
from .util import sha256_file, sha256_obj


def prepare_dataset(cfg: RunConfig) -> Dataset:
    """Load or synthesize the dataset named by the config and split it."""
    if (cfg.manifest is None) == (cfg.synthetic is None):
        raise ValueError("config must name exactly one of manifest or synthetic")
    ds = load_dataset(cfg.manifest) if cfg.manifest else generate_synthetic(cfg.synthetic)
    return split_dataset(ds, cfg.query_frac, cfg.train_frac, cfg.db_frac, cfg.seed)


def dataset_content_key(cfg: RunConfig) -> str:
    """Content hash of the dataset source, independent of where it is stored."""
    if cfg.synthetic is not None:
        return sha256_obj(dataclasses.asdict(cfg.synthetic))
    manifest = Path(cfg.manifest)
    spec = json.loads(manifest.read_text())
    parts = [sha256_file(manifest)]
    for entry in spec.get("modalities", []):
        parts.append(sha256_file(manifest.parent / entry["path"]))
    parts.append(sha256_file(manifest.parent / spec["labels"]))
    return sha256_obj(parts)


@dataclass
class TrainedArtifacts:
    views: list[cv.CanonicalViewSet]
    rep: intermediate.IntermediateRep
    model: hashing.HashModel
    db_codes: search.PackedCodes
    db_indices: np.ndarray
    db_labels: np.ndarray
    solver_state: hashing.SolverState
    dataset: Dataset


def mine_stage(ds: Dataset, cfg: RunConfig) -> list[cv.CanonicalViewSet]:
    sim = None
    if cfg.mining_bandwidth is not None:
        sim = cv.SimilarityFn(bandwidth=cfg.mining_bandwidth)
    return cv.mine_all_modalities(ds, cfg.t, sim)


def encode_stage(ds: Dataset, views, cfg: RunConfig) -> intermediate.IntermediateRep:
    return intermediate.encode_dataset(ds, views, cfg.sparse_config())


def embed_stage(ds: Dataset, rep: intermediate.IntermediateRep, cfg: RunConfig, c: int | None = None):
    """Graph, solver matrix, discrete codes, and projection on the train split."""
    y_train = rep.data[:, ds.split.train]
    graph = graph_mod.build_graph(y_train, cfg.graph_k, cfg.graph_bandwidth)
    lap = graph_mod.laplacian(graph)
    a = graph_mod.build_A(lap, y_train, cfg.alpha, cfg.beta, cfg.gamma)
    v, state = hashing.solve(y_train, a, cfg.hash_config(c))
    meta = {
        "t": cfg.t,
        "p": ds.n_modalities,
        "r": rep.r,
        "sigma": rep.sigma,
        "rhos": list(rep.rhos),
        "modality_dims": list(ds.dims),
    }
    model = hashing.learn_w(y_train, v, cfg.gamma, meta=meta)
    return model, state


def train(ds: Dataset, cfg: RunConfig, c: int | None = None) -> TrainedArtifacts:
    views = mine_stage(ds, cfg)
    rep = encode_stage(ds, views, cfg)
    model, state = embed_stage(ds, rep, cfg, c)
    db_idx = ds.split.database
    db_codes = search.pack(hashing.hash_matrix(model, rep.data[:, db_idx]))
    return TrainedArtifacts(
        views=views,
        rep=rep,
        model=model,
        db_codes=db_codes,
        db_indices=db_idx,
        db_labels=ds.labels[db_idx],
        solver_state=state,
        dataset=ds,
    )


def query_codes(art: TrainedArtifacts) -> search.PackedCodes:
    """Hash the query split through the same intermediate + projection path."""
    q_idx = art.dataset.split.query
    return search.pack(hashing.hash_matrix(art.model, art.rep.data[:, q_idx]))


def rankings_from_codes(
    db_codes: search.PackedCodes,
    db_labels: np.ndarray,
    q_codes: search.PackedCodes,
) -> list[np.ndarray]:
    """Full deterministic ranking of database labels for every query."""
    out = []
    for i in range(q_codes.n):
        result = search.query(db_codes, q_codes.blob[i], k=db_codes.n)
        out.append(db_labels[result.ids])
    return out


def evaluate(art: TrainedArtifacts, r_cutoff: int = 100, scopes=None, config: dict | None = None) -> metrics.MetricReport:
    q_idx = art.dataset.split.query
    ranked = rankings_from_codes(art.db_codes, art.db_labels, query_codes(art))
    return metrics.evaluate_ranking(
        ranked, art.dataset.labels[q_idx], r_cutoff=min(r_cutoff, art.db_codes.n), scopes=scopes, config=config
    )


def map_for_codes(
    db_codes: search.PackedCodes,
    db_labels: np.ndarray,
    q_codes: search.PackedCodes,
    q_labels: np.ndarray,
    r_cutoff: int = 100,
) -> float:
    ranked = rankings_from_codes(db_codes, db_labels, q_codes)
    return metrics.mean_ap(ranked, q_labels, min(r_cutoff, db_codes.n))


def random_code_baseline(c: int, db_labels, q_labels, seed: int = 0, r_cutoff: int = 100) -> float:
    """mAP of uniformly random +-1 codes at the same length."""
    rng = np.random.default_rng(seed)
    v_db = hashing.sgn(rng.standard_normal((c, len(db_labels))))
    v_q = hashing.sgn(rng.standard_normal((c, len(q_labels))))
    return map_for_codes(search.pack(v_db), np.asarray(db_labels), search.pack(v_q), np.asarray(q_labels), r_cutoff)


def sign_pca_baseline(ds: Dataset, c: int, r_cutoff: int = 100) -> float:
    """mAP of sign-of-PCA codes on stacked raw features, fit on the train split."""
    stacked = np.vstack([m.data for m in ds.modalities])
    train = stacked[:, ds.split.train]
    mean = train.mean(axis=1, keepdims=True)
    p, s, _ = np.linalg.svd(train - mean, full_matrices=False)
    keep = min(c, int((s > (s[0] * 1e-12 if s.size else 0.0)).sum()))
    dirs = p[:, :keep]

    def codes_for(idx: np.ndarray) -> search.PackedCodes:
        proj = dirs.T @ (stacked[:, idx] - mean)
        v = np.empty((c, idx.size))
        v[:keep] = hashing.sgn(proj)
        for i in range(keep, c):
            v[i] = np.where((np.arange(idx.size) + i) % 2 == 0, 1.0, -1.0)
        return search.pack(v)

    return map_for_codes(
        codes_for(ds.split.database),
        ds.labels[ds.split.database],
        codes_for(ds.split.query),
        ds.labels[ds.split.query],
        r_cutoff,
    )


# ---------------------------------------------------------------------------
# on-disk artifacts
# ---------------------------------------------------------------------------


def _write_stage_meta(path: Path, input_key: str, extra: dict) -> None:
    path.write_text(json.dumps({"input_key": input_key, **extra}, indent=2) + "\n")


def _stage_key_matches(path: Path, input_key: str) -> bool:
    if not path.is_file():
        return False
    try:
        return json.loads(path.read_text()).get("input_key") == input_key
    except (json.JSONDecodeError, OSError):
        return False


def mining_key(cfg: RunConfig, dataset_key: str) -> str:
    split = [cfg.query_frac, cfg.train_frac, cfg.db_frac, cfg.seed]
    return sha256_obj([dataset_key, split, cfg.t, cfg.mining_bandwidth])


def coding_key(cfg: RunConfig, dataset_key: str) -> str:
    return sha256_obj([mining_key(cfg, dataset_key), cfg.r, cfg.sigma, cfg.rho])


def save_views(out_dir: Path, views: list[cv.CanonicalViewSet], input_key: str) -> None:
    for v in views:
        write_matrix(out_dir / f"views_p{v.modality_id}.cvdm", v.exemplars)
        cv.export_trace_csv(v, out_dir / f"views_p{v.modality_id}.csv")
    _write_stage_meta(
        out_dir / "views.json",
        input_key,
        {"modalities": [v.modality_id for v in views], "t": int(views[0].indices.size)},
    )


def load_views(out_dir: Path) -> list[np.ndarray]:
    meta = json.loads((out_dir / "views.json").read_text())
    return [read_matrix(out_dir / f"views_p{pid}.cvdm") for pid in meta["modalities"]]


def save_rep(out_dir: Path, rep: intermediate.IntermediateRep, input_key: str) -> None:
    write_matrix(out_dir / "intermediate.cvdm", rep.data)
    _write_stage_meta(
        out_dir / "intermediate.json",
        input_key,
        {
            "t": rep.views_per_modality,
            "p": rep.n_modalities,
            "r": rep.r,
            "sigma": rep.sigma,
            "rho": list(rep.rhos),
            "offsets": list(rep.per_modality_offsets),
        },
    )


def load_rep(out_dir: Path) -> intermediate.IntermediateRep:
    meta = json.loads((out_dir / "intermediate.json").read_text())
    return intermediate.IntermediateRep(
        data=read_matrix(out_dir / "intermediate.cvdm"),
        per_modality_offsets=tuple(meta["offsets"]),
        r=int(meta["r"]),
        sigma=float(meta["sigma"]),
        rhos=tuple(meta["rho"]),
    )


@dataclass
class QueryEncoder:
    """Frozen exemplars plus coding parameters, rebuilt from a trained run."""

    exemplars: list[np.ndarray]
    cfg: intermediate.SparseCodeConfig
    rhos: tuple[float, ...]

    @classmethod
    def from_model(cls, out_dir: str | Path, model: hashing.HashModel) -> "QueryEncoder":
        meta = model.meta
        exemplars = [
            read_matrix(Path(out_dir) / path) for path in meta["exemplar_files"]
        ]
        cfg = intermediate.SparseCodeConfig(r=int(meta["r"]), sigma=float(meta["sigma"]), rho="auto")
        return cls(exemplars=exemplars, cfg=cfg, rhos=tuple(meta["rhos"]))

    def encode(self, x_multi) -> np.ndarray:
        return intermediate.encode_query(x_multi, self.exemplars, self.cfg, rhos=self.rhos)

    def encode_columns(self, matrices) -> np.ndarray:
        rep = intermediate.encode_matrix(matrices, self.exemplars, self.cfg, self.rhos)
        return rep.data


def train_to_dir(ds: Dataset, cfg: RunConfig, out_dir: str | Path, c: int | None = None) -> TrainedArtifacts:
    """Run offline learning, reusing cached mining/coding stages when the
    input keys match, and write every artifact plus a run manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset_key = dataset_content_key(cfg)

    mine_key = mining_key(cfg, dataset_key)
    views: list | None = None
    if _stage_key_matches(out_dir / "views.json", mine_key):
        views = load_views(out_dir)
    else:
        views = mine_stage(ds, cfg)
        save_views(out_dir, views, mine_key)

    code_key = coding_key(cfg, dataset_key)
    if _stage_key_matches(out_dir / "intermediate.json", code_key):
        rep = load_rep(out_dir)
    else:
        rep = encode_stage(ds, views, cfg)
        save_rep(out_dir, rep, code_key)

    model, state = embed_stage(ds, rep, cfg, c)
    mined_ids = json.loads((out_dir / "views.json").read_text())["modalities"]
    model.meta["exemplar_files"] = [f"views_p{pid}.cvdm" for pid in mined_ids]
    hashing.save_model(model, out_dir / "model")

    db_idx = ds.split.database
    db_codes = search.pack(hashing.hash_matrix(model, rep.data[:, db_idx]))
    search.write_codes(out_dir / "codes.cvdh", db_codes)
    (out_dir / "database.json").write_text(
        json.dumps(
            {"indices": db_idx.tolist(), "labels": ds.labels[db_idx].tolist()}, indent=2
        )
        + "\n"
    )

    manifest = {
        "config": cfg.to_dict(),
        "code_length": model.c,
        "dataset_key": dataset_key,
        "stage_keys": {"mine": mine_key, "encode": code_key},
        "artifacts": {
            name: sha256_file(out_dir / name)
            for name in ["intermediate.cvdm", "codes.cvdh", "model/projection.cvdm"]
        },
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    mined = views if views and isinstance(views[0], cv.CanonicalViewSet) else []
    return TrainedArtifacts(
        views=mined,
        rep=rep,
        model=model,
        db_codes=db_codes,
        db_indices=db_idx,
        db_labels=ds.labels[db_idx],
        solver_state=state,
        dataset=ds,
    )


def load_trained_dir(out_dir: str | Path):
    """Reload the pieces a query or eval command needs from a trained run."""
    out_dir = Path(out_dir)
    model = hashing.load_model(out_dir / "model")
    encoder = QueryEncoder.from_model(out_dir, model)
    codes = search.read_codes(out_dir / "codes.cvdh")
    db = json.loads((out_dir / "database.json").read_text())
    return model, encoder, codes, np.array(db["indices"]), np.array(db["labels"])
