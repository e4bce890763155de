"""Discrete binary embedding via augmented Lagrangian splitting.

The target problem over codes V in {-1, +1}^(c x N) is

    min ||Y - U V||^2 + alpha * Tr(V A V^T)
    s.t. V V^T = N I_c   and   V 1_N = 0

handled by introducing auxiliary variables: Gamma tracks the factorization
residual Y - U V, and Theta carries the orthogonality and balance
constraints while V keeps only the sign constraint.  Multipliers E_eta and
E_mu (initialized to zero) tie the pairs together and the penalties eta, mu
grow geometrically each sweep, so the split variables are forced toward
agreement as the iteration proceeds.

One sweep updates, in order:

    Gamma = (eta * (Y - U V) + E_eta) / (2 + eta)
    U     = (Y - Gamma + E_eta / eta) V^T / N
    Theta = balanced orthogonal factor closest to V + E_mu/mu - (alpha/mu) V A
    V     = sign(Theta - E_mu/mu - (alpha/mu) Theta A
                 + (eta/mu) U^T (Y - Gamma + E_eta/eta))

with sign(0) = +1.  The Theta step row-centers its target before the thin
SVD: on the balanced feasible set the trace objective is unchanged by
centering, and it is what makes Theta 1_N = 0 hold exactly.  The rank-R
factor pair is completed to full size with orthonormal blocks, the right
completion also orthogonal to the all-ones direction.

The V step applies the printed closed form even though the factorization
term is not exactly separable in V's entries; a divergence guard aborts
with a diagnostic if the objective grows five sweeps in a row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import read_matrix, write_matrix
from .graph import SolverMatrices

PENALTY_CAP = 1e12
RANK_TOL = 1e-10


class SolverDivergence(RuntimeError):
    """Objective grew for five consecutive sweeps."""


@dataclass(frozen=True)
class HashConfig:
    """Code length, objective weights, and penalty schedule."""

    c: int
    alpha: float = 1e-2
    beta: float = 1e-4
    gamma: float = 1e2
    mu0: float = 1.0
    eta0: float = 1.0
    rho_lm: float = 1.02
    max_iters: int = 50
    tol: float = 1e-4

    def __post_init__(self) -> None:
        if self.c < 1:
            raise ValueError(f"need c >= 1, got {self.c}")
        for name in ("alpha", "beta", "gamma", "mu0", "eta0", "tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.rho_lm > 1:
            raise ValueError(f"rho_lm must exceed 1, got {self.rho_lm}")
        if self.max_iters < 1:
            raise ValueError(f"need max_iters >= 1, got {self.max_iters}")


@dataclass
class SolverState:
    """Mutable per-solve state; confined to one solve call."""

    cfg: HashConfig
    u: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    gamma_mat: np.ndarray
    e_eta: np.ndarray
    e_mu: np.ndarray
    eta: float
    mu: float
    objective_trace: list[float] = field(default_factory=list)
    residual_trace: list[tuple[float, float]] = field(default_factory=list)
    theta_orth_errors: list[float] = field(default_factory=list)
    theta_balance_errors: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def sgn(x: np.ndarray) -> np.ndarray:
    """Elementwise sign with sgn(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def _fix_svd_signs(p: np.ndarray, qt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # deterministic orientation: largest-magnitude entry of each left vector positive
    flip = p[np.abs(p).argmax(axis=0), np.arange(p.shape[1])] < 0
    p = p.copy()
    qt = qt.copy()
    p[:, flip] *= -1.0
    qt[flip] *= -1.0
    return p, qt


def pcah_init(y: np.ndarray, c: int) -> np.ndarray:
    """Sign-of-principal-component codes used to seed the solver.

    Columns are centered first; if the centered matrix has rank below c the
    remaining bit rows are padded with a deterministic +-1 alternation.
    """
    y = np.asarray(y, dtype=np.float64)
    tp, n = y.shape
    if c > tp:
        raise ValueError(f"code length c={c} exceeds feature dimension {tp}")
    centered = y - y.mean(axis=1, keepdims=True)
    p, s, qt = np.linalg.svd(centered, full_matrices=False)
    p, _ = _fix_svd_signs(p, qt)
    rank = int((s > (s[0] * 1e-12 if s.size else 0.0)).sum())
    keep = min(c, rank)
    v0 = np.empty((c, n))
    if keep:
        v0[:keep] = sgn(p[:, :keep].T @ centered)
    for i in range(keep, c):
        v0[i] = np.where((np.arange(n) + i) % 2 == 0, 1.0, -1.0)
    return v0


def update_gamma(state: SolverState, y: np.ndarray) -> np.ndarray:
    eta = state.eta
    return (eta * (y - state.u @ state.v) + state.e_eta) / (2.0 + eta)


def update_u(state: SolverState, y: np.ndarray) -> np.ndarray:
    n = y.shape[1]
    return (y - state.gamma_mat + state.e_eta / state.eta) @ state.v.T / n


def balanced_orthogonal_factor(c_target: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Maximize Tr(Theta^T C) over Theta with Theta Theta^T = N I and Theta 1 = 0.

    Returns the maximizer plus its feasibility errors ||Theta Theta^T - N I||_F
    and ||Theta 1||_inf.  The target is row-centered (a no-op on the feasible
    set's objective), thin-SVD'd with singular values below RANK_TOL * s_max
    dropped, and both factors are completed to full size with orthonormal
    blocks; the right completion is also orthogonal to the all-ones vector.
    """
    c, n = c_target.shape
    if c >= n:
        raise ValueError(f"need c < N for a balanced orthogonal factor, got c={c}, N={n}")
    centered = c_target - c_target.mean(axis=1, keepdims=True)
    p, s, qt = np.linalg.svd(centered, full_matrices=False)
    if s.size == 0 or s[0] <= 0:
        raise np.linalg.LinAlgError("all-zero target after centering; cannot orient the factor")
    p, qt = _fix_svd_signs(p, qt)
    rank = int((s > RANK_TOL * s[0]).sum())
    p_r = p[:, :rank]
    q_r = qt[:rank].T  # N x R, orthogonal to 1 because the target is centered

    if rank < c:
        ones = np.full((n, 1), 1.0 / np.sqrt(n))
        q_full = np.linalg.qr(np.hstack([q_r, ones]), mode="complete")[0]
        q_hat = q_full[:, rank + 1 : c + 1]
        p_full = np.linalg.qr(p_r, mode="complete")[0]
        p_hat = p_full[:, rank:c]
        theta = np.sqrt(n) * np.hstack([p_r, p_hat]) @ np.hstack([q_r, q_hat]).T
    else:
        theta = np.sqrt(n) * p_r @ q_r.T

    orth_err = float(np.linalg.norm(theta @ theta.T - n * np.eye(c)))
    balance_err = float(np.abs(theta @ np.ones(n)).max())
    return theta, orth_err, balance_err


def update_theta(state: SolverState, a: SolverMatrices) -> np.ndarray:
    alpha, mu = state.cfg.alpha, state.mu
    target = state.v + state.e_mu / mu - (alpha / mu) * a.right_product(state.v)
    theta, orth_err, balance_err = balanced_orthogonal_factor(target)
    state.theta_orth_errors.append(orth_err)
    state.theta_balance_errors.append(balance_err)
    return theta


def v_update_target(state: SolverState, y: np.ndarray, a: SolverMatrices) -> np.ndarray:
    alpha, eta, mu = state.cfg.alpha, state.eta, state.mu
    return (
        state.theta
        - state.e_mu / mu
        - (alpha / mu) * a.right_product(state.theta)
        + (eta / mu) * state.u.T @ (y - state.gamma_mat + state.e_eta / eta)
    )


def update_v(state: SolverState, y: np.ndarray, a: SolverMatrices) -> np.ndarray:
    return sgn(v_update_target(state, y, a))


def update_multipliers(state: SolverState, y: np.ndarray) -> None:
    state.e_eta = state.e_eta + state.eta * (y - state.u @ state.v - state.gamma_mat)
    state.e_mu = state.e_mu + state.mu * (state.v - state.theta)
    state.eta = min(state.eta * state.cfg.rho_lm, PENALTY_CAP)
    state.mu = min(state.mu * state.cfg.rho_lm, PENALTY_CAP)


def embedding_objective(y: np.ndarray, a: SolverMatrices, v: np.ndarray, alpha: float) -> float:
    """||Y - U V||^2 + alpha Tr(V A V^T) with the least-squares-optimal U for this V."""
    u = np.linalg.lstsq(v.T, y.T, rcond=None)[0].T
    fit = float(np.linalg.norm(y - u @ v) ** 2)
    reg = float((a.right_product(v) * v).sum())
    return fit + alpha * reg


def augmented_objective(state: SolverState, y: np.ndarray, a: SolverMatrices) -> float:
    """Penalty objective of one sweep; the Gamma term enters squared, which is
    the form whose stationary point the Gamma update is."""
    fit = y - state.u @ state.v - state.gamma_mat + state.e_eta / state.eta
    gap = state.v - state.theta + state.e_mu / state.mu
    trace_term = float((a.right_product(state.v) * state.theta).sum())
    return (
        float(np.linalg.norm(state.gamma_mat) ** 2)
        + 0.5 * state.eta * float(np.linalg.norm(fit) ** 2)
        + state.cfg.alpha * trace_term
        + 0.5 * state.mu * float(np.linalg.norm(gap) ** 2)
    )


def _diverged(objective_trace: list[float], window: int = 5, rel_growth: float = 1e-2) -> bool:
    """Five consecutive sweeps of material objective growth."""
    if len(objective_trace) < window + 1:
        return False
    tail = objective_trace[-(window + 1):]
    return all(b > a * (1.0 + rel_growth) + 1e-12 for a, b in zip(tail, tail[1:]))


def solve(y: np.ndarray, a: SolverMatrices, cfg: HashConfig) -> tuple[np.ndarray, SolverState]:
    """Run the penalty sweeps until the stopping rule fires or max_iters.

    Stopping rule: max(||V - Theta||_inf / 2, relative objective change)
    below cfg.tol.  Raises SolverDivergence when the objective grows five
    sweeps in a row.
    """
    y = np.asarray(y, dtype=np.float64)
    tp, n = y.shape
    if a.n != n:
        raise ValueError(f"A is {a.n} x {a.n} but Y has {n} columns")
    if cfg.c >= n:
        raise ValueError(f"code length c={cfg.c} must be smaller than N={n}")

    v0 = pcah_init(y, cfg.c)
    state = SolverState(
        cfg=cfg,
        u=np.zeros((tp, cfg.c)),
        v=v0,
        theta=v0.copy(),
        gamma_mat=np.zeros_like(y),
        e_eta=np.zeros_like(y),
        e_mu=np.zeros((cfg.c, n)),
        eta=cfg.eta0,
        mu=cfg.mu0,
    )

    prev_obj = embedding_objective(y, a, state.v, cfg.alpha)
    for it in range(1, cfg.max_iters + 1):
        state.gamma_mat = update_gamma(state, y)
        state.u = update_u(state, y)
        state.theta = update_theta(state, a)
        state.v = update_v(state, y, a)
        state.iterations = it

        gap = state.v - state.theta
        fit_res = float(np.linalg.norm(y - state.u @ state.v - state.gamma_mat))
        gap_res = float(np.linalg.norm(gap))
        state.residual_trace.append((fit_res, gap_res))

        obj = embedding_objective(y, a, state.v, cfg.alpha)
        state.objective_trace.append(obj)
        if _diverged(state.objective_trace):
            raise SolverDivergence(
                f"objective grew for 5 consecutive sweeps at iteration {it}: "
                f"tail={state.objective_trace[-6:]}"
            )

        rel_change = abs(obj - prev_obj) / max(1.0, abs(prev_obj))
        prev_obj = obj
        if max(float(np.abs(gap).max()) / 2.0, rel_change) < cfg.tol:
            state.converged = True
            break
        update_multipliers(state, y)

    return state.v, state


@dataclass
class HashModel:
    """Linear projection plus the encoder metadata needed to hash queries."""

    w: np.ndarray
    c: int
    gamma: float
    meta: dict = field(default_factory=dict)


def learn_w(y: np.ndarray, v: np.ndarray, gamma: float, meta: dict | None = None) -> HashModel:
    """Ridge projection W = (Y Y^T + gamma I)^(-1) Y V^T."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    y = np.asarray(y, dtype=np.float64)
    gram = y @ y.T + gamma * np.eye(y.shape[0])
    w = np.linalg.solve(gram, y @ v.T)
    return HashModel(w=w, c=v.shape[0], gamma=float(gamma), meta=dict(meta or {}))


def hash_vector(model: HashModel, y: np.ndarray) -> np.ndarray:
    """Code a stacked intermediate column; sign(0) = +1."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != model.w.shape[0]:
        raise ValueError(f"vector dim {y.shape[0]} != projection rows {model.w.shape[0]}")
    return sgn(model.w.T @ y)


def hash_matrix(model: HashModel, y: np.ndarray) -> np.ndarray:
    """Code every column of a stacked matrix."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != model.w.shape[0]:
        raise ValueError(f"matrix rows {y.shape[0]} != projection rows {model.w.shape[0]}")
    return sgn(model.w.T @ y)


def save_model(model: HashModel, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_matrix(out_dir / "projection.cvdm", model.w)
    payload = {"c": model.c, "gamma": model.gamma, "meta": model.meta}
    path = out_dir / "model.json"
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def load_model(model_dir: str | Path) -> HashModel:
    model_dir = Path(model_dir)
    payload = json.loads((model_dir / "model.json").read_text())
    w = read_matrix(model_dir / "projection.cvdm")
    return HashModel(w=w, c=int(payload["c"]), gamma=float(payload["gamma"]), meta=payload.get("meta", {}))
