"""Forecast accuracy metrics: MSE, MAPE and CV-RMSE.

``cv_rmse`` follows the relative-error definition used for the RCNN-SVR
results: the root mean squared *relative* error divided by the mean target.
The conventional coefficient of variation of the RMSE (RMSE / mean) is
``cv_rmse_conventional``. Percent-valued metrics return percent units, so
``1.975`` means 1.975 %.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import EmptyInputError, LengthMismatchError, NonFiniteError, ZeroMeanError, ZeroTargetError


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.size != yhat.size:
        raise LengthMismatchError(f"{y.size} targets but {yhat.size} predictions")
    if y.size == 0:
        raise EmptyInputError("metrics need at least one value")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yhat))):
        raise NonFiniteError("metric inputs must be finite")
    return y, yhat


def _nonzero_targets(y):
    if np.any(y == 0):
        bad = np.flatnonzero(y == 0).tolist()
        raise ZeroTargetError(f"target is zero at position(s) {bad}")


def mse(y, yhat) -> float:
    """Mean squared error ``mean((y - yhat)^2)``."""
    y, yhat = _pair(y, yhat)
    return float(np.mean((y - yhat) ** 2))


def mape(y, yhat) -> float:
    """Mean absolute percentage error, in percent."""
    y, yhat = _pair(y, yhat)
    _nonzero_targets(y)
    return float(100.0 * np.mean(np.abs((y - yhat) / y)))


def cv_rmse(y, yhat) -> float:
    """``100 * sqrt(mean(((y - yhat) / y)^2)) / mean(y)``.

    Scaling ``y`` and ``yhat`` together by ``k > 0`` divides the value by ``k``.
    """
    y, yhat = _pair(y, yhat)
    _nonzero_targets(y)
    mean_y = float(np.mean(y))
    if mean_y == 0:
        raise ZeroMeanError("mean target is zero")
    rel = (y - yhat) / y
    return float(100.0 * np.sqrt(np.mean(rel ** 2)) / mean_y)


def cv_rmse_conventional(y, yhat) -> float:
    """``100 * RMSE / mean(y)``."""
    y, yhat = _pair(y, yhat)
    mean_y = float(np.mean(y))
    if mean_y == 0:
        raise ZeroMeanError("mean target is zero")
    return float(100.0 * np.sqrt(np.mean((y - yhat) ** 2)) / mean_y)


@dataclass(frozen=True)
class EvalReport:
    mse: float
    mape_percent: float
    cv_rmse_percent: float
    n: int
    elapsed_seconds: float = 0.0
    cv_rmse_conventional_percent: float = 0.0
    # MSE on the standardized target scale; None when no scale is known
    mse_standardized: Optional[float] = None

    COLUMNS = ("mse", "mape_percent", "cv_rmse_percent", "elapsed_seconds")

    def row(self):
        """Values in table order: MSE, MAPE, CV-RMSE, Time."""
        return tuple(getattr(self, c) for c in self.COLUMNS)

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(y, yhat, elapsed: float = 0.0, target_sd: Optional[float] = None) -> EvalReport:
    """Bundle all metrics for one model run.

    ``target_sd`` is the standard deviation used to standardize targets;
    when given, the report also carries the MSE on that scale.
    """
    y, yhat = _pair(y, yhat)
    if elapsed < 0:
        raise ValueError("elapsed time cannot be negative")
    m = mse(y, yhat)
    return EvalReport(
        mse=m,
        mape_percent=mape(y, yhat),
        cv_rmse_percent=cv_rmse(y, yhat),
        n=int(y.size),
        elapsed_seconds=float(elapsed),
        cv_rmse_conventional_percent=cv_rmse_conventional(y, yhat),
        mse_standardized=None if target_sd is None else m / float(target_sd) ** 2,
    )
