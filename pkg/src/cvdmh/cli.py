"""Command-line pipeline driver.

Subcommands cover the offline stages (``synth``, ``mine``, ``encode``,
``train``, ``index``), the online path (``query``), evaluation (``eval``),
and the acceptance harness (``reproduce``).  A run is configured by a flat
JSON file whose keys mirror the config dataclass fields; command-line flags
override file values.  Exit codes: 0 success, 2 validation error, 3
numerical divergence.  CVDMH_THREADS caps internal worker counts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import acceptance, metrics, pipeline, search
from .config import RunConfig
from .dataset import (
    Dataset,
    DatasetError,
    SyntheticSpec,
    generate_synthetic,
    read_matrix,
    save_dataset,
)
from .hashing import SolverDivergence, hash_vector

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags below override its values")
    p.add_argument("--manifest", help="dataset manifest path")
    p.add_argument("--out", dest="out_dir", help="artifact output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--c", type=int, help="code length in bits")
    p.add_argument("--t", type=int, help="canonical views per modality")
    p.add_argument("--r", type=int, help="active views per image")
    p.add_argument("--sigma", type=float)
    p.add_argument("--graph-k", dest="graph_k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--mu0", type=float)
    p.add_argument("--eta0", type=float)
    p.add_argument("--rho-lm", dest="rho_lm", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    override_keys = [
        "manifest", "out_dir", "seed", "c", "t", "r", "sigma", "graph_k",
        "alpha", "beta", "gamma", "mu0", "eta0", "rho_lm", "tol", "max_iters",
    ]
    overrides = {k: getattr(args, k, None) for k in override_keys}
    return cfg.with_overrides(overrides)


def cmd_synth(args: argparse.Namespace) -> int:
    dims = tuple(int(d) for d in args.dims.split(","))
    spec = SyntheticSpec(
        num_landmarks=args.landmarks,
        images_per_landmark=args.per_landmark,
        dims=dims,
        noise_scale=args.noise,
        cross_modality_correlation=args.correlation,
        seed=args.seed,
    )
    ds = generate_synthetic(spec)
    manifest = save_dataset(ds, args.out)
    print(manifest)
    return EXIT_OK


def cmd_mine(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    ds = pipeline.prepare_dataset(cfg)
    views = pipeline.mine_stage(ds, cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    key = pipeline.mining_key(cfg, pipeline.dataset_content_key(cfg))
    pipeline.save_views(out, views, key)
    for v in views:
        print(f"modality {v.modality_id}: {v.indices.size} views, final score {v.score_trace[-1]:.4f}")
    return EXIT_OK


def cmd_encode(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    ds = pipeline.prepare_dataset(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset_key = pipeline.dataset_content_key(cfg)
    mine_key = pipeline.mining_key(cfg, dataset_key)
    if pipeline._stage_key_matches(out / "views.json", mine_key):
        views = pipeline.load_views(out)
    else:
        views = pipeline.mine_stage(ds, cfg)
        pipeline.save_views(out, views, mine_key)
    rep = pipeline.encode_stage(ds, views, cfg)
    pipeline.save_rep(out, rep, pipeline.coding_key(cfg, dataset_key))
    print(f"intermediate representation {rep.data.shape[0]} x {rep.data.shape[1]} "
          f"(r={rep.r}, rho={[round(x, 4) for x in rep.rhos]})")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    ds = pipeline.prepare_dataset(cfg)
    art = pipeline.train_to_dir(ds, cfg, cfg.out_dir)
    state = art.solver_state
    print(f"trained c={art.model.c} in {state.iterations} sweeps "
          f"(converged={state.converged}); artifacts in {cfg.out_dir}")
    return EXIT_OK


def cmd_index(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    ds = pipeline.prepare_dataset(cfg)
    out = Path(cfg.out_dir)
    model, encoder, _, _, _ = pipeline.load_trained_dir(out)
    db_idx = ds.split.database
    stacked = encoder.encode_columns([m.data[:, db_idx] for m in ds.modalities])
    codes = search.pack(np.where(model.w.T @ stacked >= 0, 1.0, -1.0))
    search.write_codes(out / "codes.cvdh", codes)
    (out / "database.json").write_text(
        json.dumps({"indices": db_idx.tolist(), "labels": ds.labels[db_idx].tolist()}, indent=2) + "\n"
    )
    print(f"indexed {codes.n} codes of {codes.c} bits")
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    model_dir = Path(args.model_dir)
    model, encoder, codes, db_indices, _ = pipeline.load_trained_dir(model_dir)
    feature_paths = args.features.split(",")
    mats = [read_matrix(p) for p in feature_paths]
    if len({m.shape[1] for m in mats}) != 1:
        raise DatasetError("query feature files disagree on the number of columns")
    results = []
    for col in range(mats[0].shape[1]):
        y_q = encoder.encode([m[:, col] for m in mats])
        code = search.pack(hash_vector(model, y_q)[:, None])
        hits = search.query(codes, code.blob[0], k=args.k)
        results.append(
            [{"id": int(db_indices[i]), "distance": int(d)} for i, d in hits]
        )
    if args.json:
        print(json.dumps({"queries": results}, indent=2))
    else:
        for qi, hits in enumerate(results):
            for rank, hit in enumerate(hits, start=1):
                print(f"query {qi}  rank {rank:4d}  image {hit['id']:6d}  distance {hit['distance']}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    ds = pipeline.prepare_dataset(cfg)
    out = Path(cfg.out_dir)
    model, encoder, codes, _, db_labels = pipeline.load_trained_dir(out)
    q_idx = ds.split.query
    stacked = encoder.encode_columns([m.data[:, q_idx] for m in ds.modalities])
    q_codes = search.pack(np.where(model.w.T @ stacked >= 0, 1.0, -1.0))
    ranked = pipeline.rankings_from_codes(codes, db_labels, q_codes)
    report = metrics.evaluate_ranking(
        ranked,
        ds.labels[q_idx],
        r_cutoff=min(cfg.eval_r, codes.n),
        config={"c": model.c, "t": cfg.t, "r": cfg.r, "seed": cfg.seed},
    )
    report.to_json(out / "report.json")
    metrics.write_map_csv(out / "map.csv", [("cvdmh", model.c, cfg.seed, report.map)])
    metrics.write_precision_csv(
        out / "precision.csv",
        [("cvdmh", model.c, scope, value) for scope, value in sorted(report.precision_at.items())],
    )
    print(f"mAP@{min(cfg.eval_r, codes.n)} = {report.map:.4f} over {len(report.per_query_ap)} queries")
    return EXIT_OK


def cmd_reproduce(args: argparse.Namespace) -> int:
    results = acceptance.run_all(quick=args.quick)
    for res in results:
        print(res.line())
    if args.out:
        payload = [
            {"number": r.number, "name": r.name, "passed": r.passed, "details": r.details}
            for r in results
        ]
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvdmh",
        description="Canonical-view multi-modal hashing: train binary codes and search them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-modal dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--landmarks", type=int, default=5)
    p.add_argument("--per-landmark", type=int, default=200)
    p.add_argument("--dims", default="24,32", help="comma-separated feature dims per modality")
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--correlation", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    for name, fn, descr in [
        ("mine", cmd_mine, "mine canonical views on the train split"),
        ("encode", cmd_encode, "compute the intermediate representation"),
        ("train", cmd_train, "run the full offline learning pipeline"),
        ("index", cmd_index, "re-pack database codes from a trained model"),
        ("eval", cmd_eval, "evaluate retrieval on the query split"),
    ]:
        p = sub.add_parser(name, help=descr)
        _add_config_flags(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("query", help="hash query features and rank the database")
    p.add_argument("--model-dir", required=True, help="output directory of a train run")
    p.add_argument("--features", required=True, help="comma-separated feature files, one per modality")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("reproduce", help="run the acceptance suite and report pass/fail")
    p.add_argument("--quick", action="store_true", help="smaller sampling counts for a smoke run")
    p.add_argument("--out", help="optional JSON report path")
    p.set_defaults(fn=cmd_reproduce)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SolverDivergence as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DatasetError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
