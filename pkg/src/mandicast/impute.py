"""Matrix completion for sparse panels via soft-thresholded SVD iterations.

Missing entries are filled by iterating Z <- SVT(observed X overlaid on Z), with
a warm-started descending regularization grid and holdout-based selection of the
regularization strength. Imputed price panels are floored at 1 Rs/quintal so
downstream relative changes never divide by a nonpositive value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from .ingest import SparsePanel

PRICE_FLOOR = 1.0  # Rs per quintal
VOLUME_FLOOR = 0.0


class ImputeError(ValueError):
    pass


@dataclass
class ImputeConfig:
    max_rank: int
    lambda_grid: list[float] = field(default_factory=list)  # empty = auto
    rel_tol: float = 1e-5
    max_iters: int = 200
    holdout_fraction: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_rank < 1:
            raise ValueError("max_rank must be positive")
        if self.lambda_grid:
            if any(lam < 0 for lam in self.lambda_grid):
                raise ValueError("lambda_grid entries must be nonnegative")
            if any(b >= a for a, b in zip(self.lambda_grid, self.lambda_grid[1:])):
                raise ValueError("lambda_grid must be strictly descending")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not 0 < self.holdout_fraction <= 0.5:
            raise ValueError("holdout_fraction must be in (0, 0.5]")


@dataclass
class DensePanel:
    """Fully observed panel on the same axes as the source SparsePanel."""

    produce: str
    markets: list[str]
    start_date: date
    num_days: int
    values: np.ndarray
    kind: str = "price"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.markets), self.num_days):
            raise ValueError("dense panel shape mismatch")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("dense panel must be finite everywhere")
        floor = PRICE_FLOOR if self.kind == "price" else VOLUME_FLOOR
        if np.any(self.values < floor):
            raise ValueError(f"dense {self.kind} panel has entries below floor {floor}")

    def dates(self) -> list[date]:
        return [self.start_date + timedelta(days=t) for t in range(self.num_days)]


@dataclass
class ImputeReport:
    chosen_lambda: float
    rank: int
    iters_per_lambda: list[int]
    holdout_rmse: float
    lambda_grid: list[float] = field(default_factory=list)
    refit_iters: int = 0
    # per lambda, the objective value after each iteration (used by monotonicity checks)
    objective_trace: list[list[float]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "lambda": self.chosen_lambda,
                "rank": self.rank,
                "iters_per_lambda": self.iters_per_lambda,
                "holdout_rmse": self.holdout_rmse,
            }
        )


def soft_threshold_svd(
    matrix: np.ndarray, lam: float, rank_cap: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """SVD with soft-thresholded singular values, truncated to rank_cap.

    Returns (U, d, V) with d_i = max(sigma_i - lam, 0) for the top rank_cap
    singular values; the reconstruction is U @ diag(d) @ V.T.
    """
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise ImputeError("matrix must be finite")
    try:
        u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ImputeError(f"SVD did not converge: {exc}") from exc
    r = min(rank_cap, s.size)
    d = np.maximum(s[:r] - lam, 0.0)
    return u[:, :r], d, vt[:r].T


def _reconstruct(u: np.ndarray, d: np.ndarray, v: np.ndarray) -> np.ndarray:
    return (u * d) @ v.T


def _objective(x: np.ndarray, mask: np.ndarray, z: np.ndarray, lam: float, d: np.ndarray) -> float:
    resid = x[mask] - z[mask]
    return 0.5 * float(resid @ resid) + lam * float(d.sum())


def _fit_single_lambda(
    x: np.ndarray,
    mask: np.ndarray,
    lam: float,
    config: ImputeConfig,
    z0: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, int, list[float]]:
    """Iterate Z <- SVT(fill(X, Z)) from warm start z0 until relative change < rel_tol."""
    z = z0
    d = np.zeros(0)
    trace: list[float] = []
    iters = 0
    for iters in range(1, config.max_iters + 1):
        work = np.where(mask, x, z)
        u, d, v = soft_threshold_svd(work, lam, config.max_rank)
        z_new = _reconstruct(u, d, v)
        trace.append(_objective(x, mask, z_new, lam, d))
        denom = np.linalg.norm(z)
        change = np.linalg.norm(z_new - z) / max(denom, 1e-12)
        z = z_new
        if change < config.rel_tol:
            break
    return z, d, iters, trace


def soft_impute(panel: SparsePanel, config: ImputeConfig) -> tuple[DensePanel, ImputeReport]:
    """Complete a sparse panel; returns the dense panel and a fit report.

    A seeded holdout of observed entries selects the regularization strength by
    RMSE; the winner is then refit on all observed entries (warm-started) and
    observed cells pass through unchanged in the output. Deterministic for a
    fixed config and seed.
    """
    x = np.where(np.isnan(panel.values), 0.0, panel.values)
    mask = panel.observed_mask
    n_obs = int(mask.sum())
    if n_obs == 0:
        raise ImputeError("panel has no observed entries")
    m, t = x.shape
    if config.max_rank > min(m, t):
        raise ImputeError(f"max_rank {config.max_rank} exceeds min(M, T) = {min(m, t)}")

    rng = np.random.default_rng(config.rng_seed)
    obs_flat = np.flatnonzero(mask.ravel())
    n_holdout = min(int(np.floor(config.holdout_fraction * n_obs)), n_obs - 1)
    holdout_flat = rng.choice(obs_flat, size=n_holdout, replace=False) if n_holdout > 0 else np.array([], dtype=int)
    holdout_mask = np.zeros(m * t, dtype=bool)
    holdout_mask[holdout_flat] = True
    holdout_mask = holdout_mask.reshape(m, t)
    train_mask = mask & ~holdout_mask

    if config.lambda_grid:
        grid = list(config.lambda_grid)
    else:
        sigma_max = float(np.linalg.svd(np.where(train_mask, x, 0.0), compute_uv=False)[0])
        sigma_max = max(sigma_max, 1e-12)
        grid = list(np.geomspace(sigma_max, sigma_max / 100.0, 10))

    z = np.zeros_like(x)
    iters_per_lambda: list[int] = []
    traces: list[list[float]] = []
    fits: list[np.ndarray] = []
    holdout_rmses: list[float] = []
    for lam in grid:
        z, _, iters, trace = _fit_single_lambda(x, train_mask, lam, config, z)
        iters_per_lambda.append(iters)
        traces.append(trace)
        fits.append(z)
        if n_holdout > 0:
            err = x[holdout_mask] - z[holdout_mask]
            holdout_rmses.append(float(np.sqrt(np.mean(err**2))))
        else:
            err = x[train_mask] - z[train_mask]
            holdout_rmses.append(float(np.sqrt(np.mean(err**2))))

    best = int(np.argmin(holdout_rmses))
    chosen_lambda = grid[best]

    # refit at the winning lambda with the holdout folded back in
    z_final, d_final, refit_iters, _ = _fit_single_lambda(
        x, mask, chosen_lambda, config, fits[best]
    )

    floor = PRICE_FLOOR if panel.kind == "price" else VOLUME_FLOOR
    dense = np.where(mask, x, z_final)
    dense = np.maximum(dense, floor)

    report = ImputeReport(
        chosen_lambda=float(chosen_lambda),
        rank=int(np.count_nonzero(d_final)),
        iters_per_lambda=iters_per_lambda,
        holdout_rmse=holdout_rmses[best],
        lambda_grid=[float(g) for g in grid],
        refit_iters=refit_iters,
        objective_trace=traces,
    )
    dense_panel = DensePanel(
        panel.produce, list(panel.markets), panel.start_date, panel.num_days, dense, panel.kind
    )
    return dense_panel, report
