"""Forecast evaluation: MSE, MAE, and normalized dynamic time warping.

The DTW variant reported here is the minimum over every monotone warping
path (steps right, down, diagonal; endpoints pinned) of the path's total
|a_u - b_v| cost divided by the number of cells it visits. Normalizing by
path cells makes scores comparable across horizon lengths, and taking the
minimum of the normalized cost makes the value well defined when several
paths tie on raw cost. Multivariate windows are scored per node and
averaged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, ShapeMismatchError


@dataclass
class MetricReport:
    mse: float
    mae: float
    dtw: float
    mse_std: float
    mae_std: float
    dtw_std: float
    n_windows: int
    per_window: dict

    def to_dict(self) -> dict:
        return {
            "mse": self.mse, "mae": self.mae, "dtw": self.dtw,
            "mse_std": self.mse_std, "mae_std": self.mae_std,
            "dtw_std": self.dtw_std, "n_windows": self.n_windows,
            "per_window": {k: [float(x) for x in v]
                           for k, v in self.per_window.items()},
        }


def _paired(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"shapes differ: {pred.shape} vs {target.shape}")
    return pred, target


def mse(pred, target) -> float:
    pred, target = _paired(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = _paired(pred, target)
    return float(np.mean(np.abs(pred - target)))


def dtw_normalized(a, b) -> float:
    """Best normalized alignment cost between two sequences.

    1-D inputs are treated as single sequences; 2-D inputs are scored row
    by row and averaged over rows.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[0] != b.shape[0]:
            raise ShapeMismatchError("row counts differ for multivariate DTW")
        return float(np.mean([_dtw_1d(a[i], b[i]) for i in range(a.shape[0])]))
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeMismatchError("dtw_normalized takes 1-D or matching 2-D arrays")
    return _dtw_1d(a, b)


def _dtw_1d(a: np.ndarray, b: np.ndarray) -> float:
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise InvalidParameterError("sequences must be non-empty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidParameterError("sequences must be finite")
    cost = np.abs(a[:, None] - b[None, :])
    # Layered dynamic program over path length: best[i, j] after l cells.
    # Tracking length explicitly keeps the cost/cells minimum exact even
    # when several raw-cost-optimal paths have different lengths.
    max_cells = n + m - 1
    inf = np.inf
    best_prev = np.full((n, m), inf)
    best_prev[0, 0] = cost[0, 0]
    result = inf
    if n == 1 and m == 1:
        return float(cost[0, 0])
    for cells in range(2, max_cells + 1):
        best = np.full((n, m), inf)
        best[1:, :] = best_prev[:-1, :]                        # step down
        np.minimum(best[:, 1:], best_prev[:, :-1], out=best[:, 1:])   # right
        np.minimum(best[1:, 1:], best_prev[:-1, :-1], out=best[1:, 1:])  # diag
        best += cost
        best[0, 0] = inf
        if np.isfinite(best[-1, -1]):
            result = min(result, best[-1, -1] / cells)
        best_prev = best
    return float(result)


def evaluate(forecasts, targets) -> MetricReport:
    """Aggregate per-window metrics over paired forecast/target windows."""
    forecasts = list(forecasts)
    targets = list(targets)
    if len(forecasts) != len(targets):
        raise ShapeMismatchError("forecast and target window counts differ")
    if not forecasts:
        raise InvalidParameterError("need at least one window")
    per = {"mse": [], "mae": [], "dtw": []}
    for pred, tgt in zip(forecasts, targets):
        per["mse"].append(mse(pred, tgt))
        per["mae"].append(mae(pred, tgt))
        per["dtw"].append(dtw_normalized(np.atleast_2d(pred), np.atleast_2d(tgt)))
    arr = {k: np.array(v) for k, v in per.items()}
    return MetricReport(
        mse=float(arr["mse"].mean()), mae=float(arr["mae"].mean()),
        dtw=float(arr["dtw"].mean()),
        mse_std=float(arr["mse"].std()), mae_std=float(arr["mae"].std()),
        dtw_std=float(arr["dtw"].std()),
        n_windows=len(forecasts), per_window=per,
    )
