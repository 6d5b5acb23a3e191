"""Comparison methods: KNN and iterative-SVD imputation, total-variation
regularized factorization, and factorization with frozen Laplacians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import air_reg, trainer
from .data_lab import SamplingMask
from .dmf import FactorChain
from .errors import ImputeError, InvalidInput
from .mat_core import as_matrix, svd

__all__ = [
    "TvConfig", "FixedLaplacians",
    "knn_impute", "svd_impute", "tv_value_and_grad",
    "train_fixed_laplacian", "train_tv",
]


@dataclass(frozen=True)
class TvConfig:
    eps: float = 1e-6
    lam_tv: float = 0.0

    def __post_init__(self):
        if not self.eps > 0:
            raise InvalidInput("tv smoothing eps must be positive")
        if self.lam_tv < 0:
            raise InvalidInput("tv weight must be nonnegative")


_LAP_TOL = 1e-8


@dataclass(frozen=True)
class FixedLaplacians:
    """Externally supplied or snapshotted graph Laplacians."""

    L_r: np.ndarray
    L_c: np.ndarray
    source: str = "external"

    def __post_init__(self):
        for name, L in (("L_r", self.L_r), ("L_c", self.L_c)):
            L = as_matrix(L, name)
            if L.shape[0] != L.shape[1]:
                raise InvalidInput(f"{name} must be square, got {L.shape}")
            scale = 1.0 + np.abs(L).max()
            if np.abs(L - L.T).max() > _LAP_TOL * scale:
                raise InvalidInput(f"{name} is not symmetric")
            if np.abs(L.sum(axis=1)).max() > _LAP_TOL * scale:
                raise InvalidInput(f"{name} rows do not sum to zero")
            object.__setattr__(self, name, L)

    @classmethod
    def from_state(cls, state: trainer.ModelState, source: str = "external"):
        """Snapshot the Laplacians a model currently encodes."""
        return cls(air_reg.build_laplacian(state.reg_row).L,
                   air_reg.build_laplacian(state.reg_col).L, source)


def knn_impute(Y_partial, mask: SamplingMask, k: int) -> np.ndarray:
    """Fill missing entries from the k most similar rows.

    Row distance is the mean squared difference over co-observed columns
    (count-normalized so sparsely overlapping rows are comparable). For a
    missing (i, j), the candidates are other rows observing column j,
    taken in order of distance; with no usable candidate the column mean
    steps in.
    """
    Y = as_matrix(Y_partial, "Y_partial")
    obs = mask.observed
    if Y.shape != obs.shape:
        raise InvalidInput(f"matrix {Y.shape} vs mask {obs.shape}")
    if k < 1:
        raise InvalidInput("k must be at least 1")
    m, n = Y.shape
    rows_obs = obs.sum(axis=1)
    if rows_obs.min() == 0:
        raise InvalidInput(f"row {int(np.argmin(rows_obs))} has no observed "
                           "entries")

    # pairwise distances over co-observed columns
    dist = np.full((m, m), np.inf)
    for i in range(m):
        for j in range(i + 1, m):
            co = obs[i] & obs[j]
            cnt = int(co.sum())
            if cnt == 0:
                continue
            d = Y[i, co] - Y[j, co]
            dist[i, j] = dist[j, i] = float(d @ d) / cnt

    col_sums = np.where(obs, Y, 0.0).sum(axis=0)
    col_counts = obs.sum(axis=0)

    out = Y.copy()
    for i in range(m):
        for j in range(n):
            if obs[i, j]:
                continue
            donors = np.where(obs[:, j] & np.isfinite(dist[:, i]))[0]
            if donors.size:
                order = donors[np.argsort(dist[donors, i], kind="stable")]
                chosen = order[:k]
                out[i, j] = float(Y[chosen, j].mean())
            elif col_counts[j] > 0:
                out[i, j] = col_sums[j] / col_counts[j]
            else:
                raise ImputeError(f"column {j} has no observed entries and "
                                  f"no neighbor of row {i} observes it")
    return out


def svd_impute(Y_partial, mask: SamplingMask, rank: int,
               tol: float = 1e-6, max_rounds: int = 200) -> np.ndarray:
    """Iterative low-rank imputation.

    Missing entries start at their column means (global observed mean for
    empty columns) and are repeatedly overwritten by a rank-truncated
    reconstruction until they move less than tol in max-norm. Observed
    entries are never touched.
    """
    Y = as_matrix(Y_partial, "Y_partial")
    obs = mask.observed
    if Y.shape != obs.shape:
        raise InvalidInput(f"matrix {Y.shape} vs mask {obs.shape}")
    if rank < 1 or rank > min(Y.shape):
        raise InvalidInput(f"rank must be in [1, {min(Y.shape)}], got {rank}")
    if max_rounds < 1:
        raise InvalidInput("max_rounds must be at least 1")

    miss = ~obs
    work = Y.copy()
    if miss.any():
        col_counts = obs.sum(axis=0)
        col_means = np.where(obs, Y, 0.0).sum(axis=0) / np.maximum(col_counts, 1)
        global_mean = float(Y[obs].mean())
        fill = np.where(col_counts > 0, col_means, global_mean)
        work[miss] = np.broadcast_to(fill, Y.shape)[miss]

    for _ in range(max_rounds):
        f = svd(work)
        low = (f.U[:, :rank] * f.S[:rank]) @ f.V[:, :rank].T
        change = np.abs(low[miss] - work[miss]).max() if miss.any() else 0.0
        work[miss] = low[miss]
        if change < tol:
            break
    return work


def tv_value_and_grad(X, cfg: TvConfig) -> tuple[float, np.ndarray]:
    """Smoothed anisotropic total variation and its gradient.

    Each horizontal and vertical neighbor difference d contributes
    sqrt(d^2 + eps^2) - eps, which vanishes with d and is differentiable
    at d = 0.
    """
    X = as_matrix(X, "X")
    eps = cfg.eps
    grad = np.zeros_like(X)
    value = 0.0
    dh = X[:, 1:] - X[:, :-1]
    root = np.sqrt(dh * dh + eps * eps)
    value += float((root - eps).sum())
    gh = dh / root
    grad[:, 1:] += gh
    grad[:, :-1] -= gh
    dv = X[1:, :] - X[:-1, :]
    root = np.sqrt(dv * dv + eps * eps)
    value += float((root - eps).sum())
    gv = dv / root
    grad[1:, :] += gv
    grad[:-1, :] -= gv
    return value, grad


class _TvReg:
    """Regularizer strategy plugging smoothed TV into the training loop."""

    w_params = ()

    def __init__(self, cfg: TvConfig):
        self.cfg = cfg

    def compute(self, X):
        value, grad = tv_value_and_grad(X, self.cfg)
        return value, 0.0, self.cfg.lam_tv * grad, ()

    def values(self, X):
        return tv_value_and_grad(X, self.cfg)[0], 0.0

    def post_step(self):
        pass


def _chain_of(state) -> FactorChain:
    return state.chain if isinstance(state, trainer.ModelState) else state


def train_fixed_laplacian(state, fixed: FixedLaplacians, mask: SamplingMask,
                          y_obs, cfg: trainer.TrainConfig, ground_truth=None):
    """Same loop as trainer.train but with L_r, L_c held at the supplied
    matrices. state may be a ModelState (whose graph parameters are then
    ignored) or a bare FactorChain."""
    chain = _chain_of(state)
    m, n = chain.shape
    if fixed.L_r.shape != (m, m) or fixed.L_c.shape != (n, n):
        raise InvalidInput(f"Laplacian shapes {fixed.L_r.shape}/{fixed.L_c.shape} "
                           f"vs model {(m, n)}")
    lam_r, lam_c = trainer.resolve_lambda(cfg, y_obs, m, n)
    if lam_r == 0 and lam_c == 0:
        strategy = trainer._NoReg()
    else:
        strategy = trainer._FrozenReg(fixed.L_r, fixed.L_c, lam_r, lam_c)
    trace = trainer._train_loop(chain, strategy, mask, y_obs, cfg,
                                lam_r, lam_c, ground_truth)
    return state, trace


def train_tv(state, mask: SamplingMask, y_obs, cfg: trainer.TrainConfig,
             tv_cfg: TvConfig | None = None, ground_truth=None):
    """Factorization trained against fidelity plus weighted TV on X.

    With tv_cfg omitted, the weight defaults to the same value auto
    lambda selection would pick, for comparability across regularizers.
    The trace's reg_r column carries the weighted TV term; reg_c is 0.
    """
    chain = _chain_of(state)
    m, n = chain.shape
    if tv_cfg is None:
        lam, _ = trainer.auto_lambda(y_obs, m, n)
        tv_cfg = TvConfig(lam_tv=lam)
    if tv_cfg.lam_tv == 0:
        strategy = trainer._NoReg()
    else:
        strategy = _TvReg(tv_cfg)
    trace = trainer._train_loop(chain, strategy, mask, y_obs, cfg,
                                tv_cfg.lam_tv, 0.0, ground_truth)
    return state, trace
