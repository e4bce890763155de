"""Self-contained acceptance checks for the whole engine.

Each criterion is a function returning a :class:`CriterionResult`; the CLI's
``reproduce`` subcommand and the test suite both run them.  The checks are
property- and trend-based on synthetic data: greedy near-optimality against
exhaustive enumeration, coding and factorization identities against
independent numerical oracles, solver stability, and retrieval lift over
random and sign-of-PCA codes.

The synthetic benchmark is five landmarks with 400 images each over two
modalities at noise 1.5; the solver runs with a gentle penalty schedule
(mu0=0.08, eta0=1e-6, rho=1.4) on a k=4 graph, which keeps the printed
update rules in their stable regime for the full 50 sweeps (see the solver
module notes on the penalty-growth instability).
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import canonical_views as cv
from . import graph as gm
from . import hashing as hs
from . import metrics, pipeline, search
from .config import RunConfig
from .dataset import SyntheticSpec
from .intermediate import SparseCodeConfig, sparse_code_one


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number}: {self.name} -- {self.details}"


def benchmark_config(seed: int, c: int) -> RunConfig:
    spec = SyntheticSpec(
        num_landmarks=5,
        images_per_landmark=400,
        dims=(24, 32),
        noise_scale=1.5,
        cross_modality_correlation=0.5,
        seed=seed,
    )
    return RunConfig(
        synthetic=spec,
        t=100,
        r=70,
        c=c,
        graph_k=4,
        mu0=0.08,
        eta0=1e-6,
        rho_lm=1.4,
        seed=seed + 100,
    )


# -- independent oracles ----------------------------------------------------


def coding_objective(y: np.ndarray, x: np.ndarray, e: np.ndarray, d: np.ndarray, sigma: float) -> float:
    return float(np.linalg.norm(x - e @ y) ** 2 + sigma * np.linalg.norm(d * y) ** 2)


def projected_gradient_coding_oracle(
    x: np.ndarray, e: np.ndarray, d: np.ndarray, sigma: float, iters: int = 4000
) -> np.ndarray:
    """Minimize the coding quadratic on the sum-to-one affine set by projected
    gradient with exact line search; independent of the KKT path."""
    r = e.shape[1]
    h_full = e.T @ e + sigma * np.diag(d * d)
    y = np.full(r, 1.0 / r)
    for _ in range(iters):
        grad = 2.0 * (h_full @ y) - 2.0 * (e.T @ x)
        step_dir = grad - grad.mean()  # projection onto the sum-zero subspace
        curv = float(step_dir @ h_full @ step_dir)
        if curv <= 1e-300 or np.linalg.norm(step_dir) < 1e-14:
            break
        t = float(step_dir @ grad) / (2.0 * curv)
        y = y - t * step_dir
    return y


def random_feasible_factor(rng: np.random.Generator, c: int, n: int) -> np.ndarray:
    """Random Theta with Theta Theta^T = N I and Theta 1 = 0."""
    g = rng.standard_normal((c, n))
    g = g - g.mean(axis=1, keepdims=True)
    w, u = np.linalg.eigh(g @ g.T)
    inv_sqrt = u @ np.diag(1.0 / np.sqrt(w)) @ u.T
    return np.sqrt(n) * inv_sqrt @ g


def brute_force_ranking(db_bits: np.ndarray, q_bits: np.ndarray) -> np.ndarray:
    """Ranking oracle on unpacked +-1 codes: mismatch count, ties by index."""
    mismatches = (db_bits != q_bits[:, None]).sum(axis=0)
    return np.argsort(mismatches, kind="stable")


# -- criteria ---------------------------------------------------------------


def criterion_1_greedy_bound(instances: int = 200) -> CriterionResult:
    start = time.time()
    bound = (np.e - 1.0) / np.e
    worst = np.inf
    rng = np.random.default_rng(11)
    for _ in range(instances):
        pool = rng.standard_normal((4, 12))
        sim = cv.SimilarityFn(bandwidth=cv.auto_bandwidth(pool))
        g = cv.similarity_matrix(pool, sim)
        rep = g.sum(axis=1) - 1.0
        best = -np.inf
        for combo in itertools.combinations(range(12), 3):
            i, j, k = combo
            h = rep[i] + rep[j] + rep[k] - 2.0 * (g[i, j] + g[i, k] + g[j, k])
            best = max(best, h)
        mined = cv.greedy_mine(pool, 3, sim)
        worst = min(worst, mined.score_trace[-1] - bound * best)
    elapsed = time.time() - start
    passed = worst >= -1e-9 and elapsed < 10.0
    return CriterionResult(
        1, "greedy approximation bound",
        passed, f"min h(greedy) - 0.632*h(opt) = {worst:.3e} over {instances} instances in {elapsed:.1f}s",
    )


def criterion_2_submodularity(samples: int = 120) -> CriterionResult:
    rng = np.random.default_rng(23)
    worst_gain = np.inf
    worst_mono = np.inf
    for _ in range(samples):
        n = int(rng.integers(8, 16))
        pool = rng.standard_normal((3, n))
        sim = cv.SimilarityFn(bandwidth=cv.auto_bandwidth(pool))
        perm = rng.permutation(n)
        s1 = int(rng.integers(1, max(2, n // 4)))
        s2 = int(rng.integers(s1, n // 4 + 1))
        v1, v2 = perm[:s1], perm[:s2]  # nested, both small next to the pool
        v = int(perm[-1])
        gain1 = cv.h_score(np.append(v1, v), pool, sim) - cv.h_score(v1, pool, sim)
        gain2 = cv.h_score(np.append(v2, v), pool, sim) - cv.h_score(v2, pool, sim)
        worst_gain = min(worst_gain, gain1 - gain2)
        worst_mono = min(worst_mono, cv.h_score(v2, pool, sim) - cv.h_score(v1, pool, sim))
    passed = worst_gain >= -1e-9 and worst_mono >= -1e-9
    return CriterionResult(
        2, "submodularity and monotonicity",
        passed, f"min gain difference {worst_gain:.3e}, min nested h difference {worst_mono:.3e} over {samples} samples",
    )


def criterion_3_sparse_coding(instances: int = 50) -> CriterionResult:
    rng = np.random.default_rng(31)
    worst_sum = 0.0
    worst_gap = 0.0
    max_nnz_excess = 0
    for _ in range(instances):
        t = int(rng.integers(3, 9))
        d = int(rng.integers(2, 7))
        r = int(rng.integers(1, t + 1))
        e = rng.standard_normal((d, t))
        x = rng.standard_normal(d)
        cfg = SparseCodeConfig(r=r, sigma=10.0 ** rng.uniform(-4, 0), rho=float(rng.uniform(0.5, 3.0)))
        y = sparse_code_one(x, e, cfg)
        worst_sum = max(worst_sum, abs(y.sum() - 1.0))
        max_nnz_excess = max(max_nnz_excess, int((y != 0).sum()) - r)
        support = np.flatnonzero(y != 0) if r < t else np.arange(t)
        # compare on the solver's own support against the independent minimizer
        dists = np.linalg.norm(e - x[:, None], axis=0)
        sup = np.argsort(dists, kind="stable")[:r]
        d_sup = np.exp(dists[sup] / cfg.rho)
        y_oracle = projected_gradient_coding_oracle(x, e[:, sup], d_sup, cfg.sigma)
        gap = coding_objective(y[sup], x, e[:, sup], d_sup, cfg.sigma) - coding_objective(
            y_oracle, x, e[:, sup], d_sup, cfg.sigma
        )
        worst_gap = max(worst_gap, gap)
        del support
    passed = worst_sum <= 1e-8 and max_nnz_excess <= 0 and worst_gap <= 1e-6
    return CriterionResult(
        3, "sparse-coding contract",
        passed, f"max |sum-1| {worst_sum:.2e}, nnz excess {max_nnz_excess}, max objective gap {worst_gap:.2e}",
    )


def criterion_4_projection_identity(trials: int = 100) -> CriterionResult:
    rng = np.random.default_rng(41)
    worst = 0.0
    for _ in range(trials):
        tp = int(rng.integers(3, 10))
        n = int(rng.integers(tp + 1, 25))
        c = int(rng.integers(1, min(tp, n - 1) + 1))
        y = rng.standard_normal((tp, n))
        v = np.where(rng.standard_normal((c, n)) >= 0, 1.0, -1.0)
        gamma = float(10.0 ** rng.uniform(-1, 2))
        q = np.linalg.inv(y @ y.T + gamma * np.eye(tp))
        w = q @ y @ v.T
        lhs = np.linalg.norm(v - w.T @ y) ** 2 + gamma * np.linalg.norm(w) ** 2
        rhs = np.trace(v @ (np.eye(n) - y.T @ q @ y) @ v.T)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
    passed = worst <= 1e-8
    return CriterionResult(
        4, "projection elimination identity",
        passed, f"max relative mismatch {worst:.2e} over {trials} trials",
    )


def criterion_5_theta_feasibility(instances: int = 20, random_points: int = 10_000) -> CriterionResult:
    # feasibility during a real solve
    cfg = benchmark_config(0, 16)
    ds = pipeline.prepare_dataset(cfg)
    views = pipeline.mine_stage(ds, cfg)
    rep = pipeline.encode_stage(ds, views, cfg)
    y_train = rep.data[:, ds.split.train]
    n_train = y_train.shape[1]
    a = gm.build_A(gm.laplacian(gm.build_graph(y_train, cfg.graph_k)), y_train, cfg.alpha, cfg.beta, cfg.gamma)
    _, state = hs.solve(y_train, a, cfg.hash_config())
    orth_ok = max(state.theta_orth_errors) <= 1e-6 * n_train
    balance_ok = max(state.theta_balance_errors) <= 1e-6 * np.sqrt(n_train)

    # maximality against random feasible points on rank-deficient targets
    rng = np.random.default_rng(53)
    worst_margin = np.inf
    for _ in range(instances):
        c, rank, n = 4, 2, 20
        left = rng.standard_normal((c, rank))
        right = rng.standard_normal((rank, n))
        right = right - right.mean(axis=1, keepdims=True)
        target = left @ right
        theta, _, _ = hs.balanced_orthogonal_factor(target)
        ours = float((theta * target).sum())
        best_random = max(
            float((random_feasible_factor(rng, c, n) * target).sum()) for _ in range(random_points)
        )
        worst_margin = min(worst_margin, ours - best_random)
    passed = orth_ok and balance_ok and worst_margin >= -1e-9
    return CriterionResult(
        5, "orthogonal factor feasibility and maximality",
        passed,
        f"max orth err {max(state.theta_orth_errors):.2e} (bound {1e-6 * n_train:.2e}), "
        f"max balance err {max(state.theta_balance_errors):.2e}, "
        f"min margin over {random_points} random feasible points {worst_margin:.3e}",
    )


def criterion_6_solver_behavior() -> CriterionResult:
    start = time.time()
    cfg = benchmark_config(0, 16)
    ds = pipeline.prepare_dataset(cfg)
    views = pipeline.mine_stage(ds, cfg)
    rep = pipeline.encode_stage(ds, views, cfg)
    y_train = rep.data[:, ds.split.train]
    a = gm.build_A(gm.laplacian(gm.build_graph(y_train, cfg.graph_k)), y_train, cfg.alpha, cfg.beta, cfg.gamma)
    v0 = hs.pcah_init(y_train, cfg.c)
    obj0 = hs.embedding_objective(y_train, a, v0, cfg.alpha)
    v, state = hs.solve(y_train, a, cfg.hash_config())
    obj_final = hs.embedding_objective(y_train, a, v, cfg.alpha)
    elapsed = time.time() - start

    gaps = [r[1] for r in state.residual_trace]
    plateau = all(
        abs(gaps[i] - gaps[i - 1]) / max(gaps[i - 1], 1e-12) <= 0.01 for i in range(14, len(gaps))
    )
    passed = (
        state.iterations <= 50 and plateau and obj_final < obj0 and elapsed < 60.0
    )
    return CriterionResult(
        6, "solver termination, plateau, objective decrease",
        passed,
        f"{state.iterations} sweeps in {elapsed:.1f}s, gap plateau after 15 = {plateau}, "
        f"objective {obj0:.1f} -> {obj_final:.1f}",
    )


def criterion_7_retrieval_lift(seeds: int = 5) -> CriterionResult:
    ours32, ours128, randoms, pcas = [], [], [], []
    for seed in range(seeds):
        cfg = benchmark_config(seed, 32)
        ds = pipeline.prepare_dataset(cfg)
        q_labels = ds.labels[ds.split.query]
        art = pipeline.train(ds, cfg)
        ours32.append(
            pipeline.map_for_codes(art.db_codes, art.db_labels, pipeline.query_codes(art), q_labels, 100)
        )
        randoms.append(pipeline.random_code_baseline(32, art.db_labels, q_labels, seed=seed, r_cutoff=100))
        pcas.append(pipeline.sign_pca_baseline(ds, 32, 100))
        art128 = pipeline.train(ds, cfg, c=128)
        ours128.append(
            pipeline.map_for_codes(art128.db_codes, art128.db_labels, pipeline.query_codes(art128), q_labels, 100)
        )
    mean32, mean128 = float(np.mean(ours32)), float(np.mean(ours128))
    mean_rand, mean_pca = float(np.mean(randoms)), float(np.mean(pcas))
    trend = mean128 >= mean32 - 0.02
    passed = mean32 >= mean_rand + 0.20 and mean32 >= mean_pca
    return CriterionResult(
        7, "retrieval lift over random and sign-PCA codes",
        passed,
        f"mAP32 {mean32:.3f} vs random {mean_rand:.3f} (+{mean32 - mean_rand:.3f}) and sign-PCA {mean_pca:.3f}; "
        f"soft length trend mAP128 {mean128:.3f} >= mAP32 - 0.02: {trend}",
    )


def criterion_8_search_exactness(n_codes: int = 1000, n_queries: int = 20) -> CriterionResult:
    rng = np.random.default_rng(83)
    exact = True
    roundtrip = True
    for c in (32, 64, 128):
        v = np.where(rng.standard_normal((c, n_codes)) >= 0, 1.0, -1.0)
        packed = search.pack(v)
        roundtrip &= bool((search.unpack(packed) == v).all())
        for _ in range(n_queries):
            q = np.where(rng.standard_normal(c) >= 0, 1.0, -1.0)
            q_packed = search.pack(q[:, None])
            result = search.query(packed, q_packed.blob[0], k=n_codes)
            oracle = brute_force_ranking(v, q)
            exact &= bool((result.ids == oracle).all())
    passed = exact and roundtrip
    return CriterionResult(
        8, "search exactness and pack round-trip",
        passed, f"oracle-identical rankings: {exact}, bitwise pack/unpack: {roundtrip}",
    )


def criterion_9_metric_correctness() -> CriterionResult:
    hand = metrics.average_precision([1, 2, 1], query_label=1, r_cutoff=3)
    hand_ok = abs(hand - 5.0 / 6.0) < 1e-15
    oracle = metrics.mean_ap([[7] * 100 + [3] * 200], [7], 100)
    anti = metrics.mean_ap([[3] * 200 + [7] * 100], [7], 100)
    passed = hand_ok and oracle == 1.0 and anti == 0.0
    return CriterionResult(
        9, "average-precision formula",
        passed, f"hand example {hand:.6f} (want 0.833333), oracle map {oracle}, anti-oracle map {anti}",
    )


def run_all(quick: bool = False) -> list[CriterionResult]:
    """Run every criterion; quick mode shrinks sampling counts for smokes."""
    if quick:
        return [
            criterion_1_greedy_bound(instances=20),
            criterion_2_submodularity(samples=30),
            criterion_3_sparse_coding(instances=10),
            criterion_4_projection_identity(trials=20),
            criterion_5_theta_feasibility(instances=3, random_points=500),
            criterion_6_solver_behavior(),
            criterion_7_retrieval_lift(seeds=2),
            criterion_8_search_exactness(n_codes=200, n_queries=5),
            criterion_9_metric_correctness(),
        ]
    return [
        criterion_1_greedy_bound(),
        criterion_2_submodularity(),
        criterion_3_sparse_coding(),
        criterion_4_projection_identity(),
        criterion_5_theta_feasibility(),
        criterion_6_solver_behavior(),
        criterion_7_retrieval_lift(),
        criterion_8_search_exactness(),
        criterion_9_metric_correctness(),
    ]
