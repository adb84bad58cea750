"""Reference forecasters: seasonal persistence and a per-hour linear model."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, DataError
from .features import SampleWindow, Scaler, stack

log = logging.getLogger(__name__)

RIDGE = 1e-8
COND_LIMIT = 1e12


def _lag_channel_name(sample: SampleWindow, lag: int) -> str:
    for name in (f"c{lag}", "holiday_lag" if lag == 168 else None):
        if name in sample.channel_names:
            return name
    raise ContractError(f"sample has no lag-{lag} demand channel (channels {sample.channel_names})")


def seasonal_naive(sample: SampleWindow, lag: int = 24, scaler: Scaler | None = None) -> np.ndarray:
    """Yesterday's (lag 24) or last week's (lag 168) demand as the forecast.

    If the sample is standardized, pass its ``scaler`` to get kWh per meter back.
    """
    if lag not in (24, 168):
        raise ContractError(f"seasonal naive lag must be 24 or 168, got {lag}")
    name = _lag_channel_name(sample, lag)
    values = sample.channel(name)
    if scaler is not None:
        i = scaler.channel_names.index(name)
        values = values * scaler.channel_std[i] + scaler.channel_mean[i]
    return np.array(values, dtype=np.float64)


@dataclass(frozen=True)
class LinearBaselineParams:
    channel_names: tuple[str, ...]
    weights: np.ndarray     # (F * 24, 24): column h predicts horizon hour h
    bias: np.ndarray        # (24,)
    ridge_fallback: bool = False


def _design(samples: Sequence[SampleWindow]) -> tuple[np.ndarray, np.ndarray]:
    x, y = stack(samples)
    return x.reshape(len(x), -1), y


def fit_linear_baseline(samples: Sequence[SampleWindow], ridge: float = RIDGE) -> LinearBaselineParams:
    """Least squares from all flattened channel values to each horizon hour.

    Regressors are centred so the intercept is not penalised; ``ridge`` is
    added to the diagonal of the normal equations. If they are still
    ill-conditioned the ridge is raised and the fallback is logged.
    """
    if len(samples) < 2:
        raise DataError("linear baseline needs at least two samples")
    x, y = _design(samples)
    xm, ym = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - xm, y - ym
    gram = xc.T @ xc
    rhs = xc.T @ yc
    lam = ridge
    eye = np.eye(gram.shape[0])
    fallback = False
    a = gram + lam * eye
    if np.linalg.cond(a) > COND_LIMIT:
        lam = max(lam, 1e2 * float(np.trace(gram)) / gram.shape[0] / COND_LIMIT)
        a = gram + lam * eye
        fallback = True
        log.warning("linear baseline normal equations ill-conditioned; ridge raised to %.3g", lam)
    w = np.linalg.solve(a, rhs)
    return LinearBaselineParams(samples[0].channel_names, w, ym - xm @ w, fallback)


def predict_linear(params: LinearBaselineParams, sample: SampleWindow,
                   scaler: Scaler | None = None) -> np.ndarray:
    if sample.channel_names != params.channel_names:
        raise ContractError(f"channel layout {sample.channel_names} != fitted {params.channel_names}")
    z = sample.channels.reshape(-1) @ params.weights + params.bias
    return scaler.inverse_target(z) if scaler is not None else z


class LinearBaseline:
    """Fit/predict wrapper around :func:`fit_linear_baseline`."""

    def __init__(self, ridge: float = RIDGE):
        self.ridge = ridge
        self.params: LinearBaselineParams | None = None

    def fit(self, samples: Sequence[SampleWindow]) -> "LinearBaseline":
        self.params = fit_linear_baseline(samples, self.ridge)
        return self

    def predict(self, samples: Sequence[SampleWindow], scaler: Scaler | None = None) -> np.ndarray:
        if self.params is None:
            raise ContractError("linear baseline used before fit")
        return np.array([predict_linear(self.params, s, scaler) for s in samples])
