"""Real mother wavelets and a direct-sum continuous wavelet transform.

For a signal ``x`` sampled at unit spacing, the coefficient at scale ``a``
and shift ``tau`` is::

    W(a, tau) = a**-0.5 * sum_t x[t] * psi((t - tau) / a)

with ``x`` zero outside the signal and ``psi`` zero outside ``[-8, 8]``.
At integer scale ``a`` that samples ``psi`` at spacing ``1/a`` (``16a + 1``
points over the support).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import hermite

from .errors import ConfigError, DataError

SUPPORT = 8.0
FAMILIES = ("mexh", "morl") + tuple(f"gaus{n}" for n in range(1, 9))
DEFAULT_SCALES = tuple(float(a) for a in range(1, 25))


@lru_cache(maxsize=None)
def _gaus_coeffs(order: int) -> tuple[np.ndarray, float]:
    """Hermite series of d^n/dt^n exp(-t^2) / exp(-t^2) and its L2 normaliser."""
    # d^n/dt^n exp(-t^2) = (-1)^n H_n(t) exp(-t^2), H_n physicists' Hermite
    coeffs = np.zeros(order + 1)
    coeffs[order] = (-1) ** order
    # int H_n(t)^2 exp(-2 t^2) dt, exact by Gauss-Hermite with u = sqrt(2) t
    u, w = hermite.hermgauss(order + 2)
    energy = np.sum(w * hermite.hermval(u / np.sqrt(2), coeffs) ** 2) / np.sqrt(2)
    return coeffs, 1.0 / np.sqrt(energy)


def wavelet_eval(family: str, t) -> np.ndarray:
    """Evaluate a real mother wavelet at ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=np.float64)
    if family == "mexh":
        return 2.0 / (np.sqrt(3.0) * np.pi ** 0.25) * (1 - t ** 2) * np.exp(-t ** 2 / 2)
    if family == "morl":
        return np.exp(-t ** 2 / 2) * np.cos(5 * t)
    if family.startswith("gaus") and family[4:].isdigit() and 1 <= int(family[4:]) <= 8:
        coeffs, norm = _gaus_coeffs(int(family[4:]))
        return norm * hermite.hermval(t, coeffs) * np.exp(-t ** 2)
    raise ConfigError(f"unknown wavelet family {family!r}; choose from {FAMILIES}")


def center_frequency(family: str) -> float:
    """Peak frequency of |FFT(psi)| in cycles per unit time."""
    t = np.linspace(-SUPPORT, SUPPORT, 2 ** 14 + 1)
    dt = t[1] - t[0]
    spectrum = np.abs(np.fft.rfft(wavelet_eval(family, t), n=2 ** 18))
    freqs = np.fft.rfftfreq(2 ** 18, dt)
    return float(freqs[np.argmax(spectrum)])


def _kernel(n: int, scale: float, family: str) -> np.ndarray:
    """K[tau, t] = a**-0.5 * psi((t - tau) / a), truncated to the support."""
    lag = (np.arange(n)[None, :] - np.arange(n)[:, None]) / scale
    k = wavelet_eval(family, lag) / np.sqrt(scale)
    k[np.abs(lag) > SUPPORT] = 0.0
    return k


@lru_cache(maxsize=64)
def transform_matrix(n: int, scales: tuple[float, ...], family: str) -> np.ndarray:
    """Stacked kernels, shape (M, n, n): coefficients = T @ signal."""
    if any(a <= 0 for a in scales):
        raise ConfigError("scales must be positive")
    m = np.stack([_kernel(n, a, family) for a in scales])
    m.setflags(write=False)
    return m


def cwt(signal, scales=DEFAULT_SCALES, family: str = "morl") -> np.ndarray:
    """CWT of a 1-D signal, or of the last axis of a stack of signals.

    Returns shape ``(..., M, n)``.
    """
    x = np.asarray(signal, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("CWT input contains non-finite values")
    t = transform_matrix(x.shape[-1], tuple(float(a) for a in scales), family)
    return np.einsum("mtk,...k->...mt", t, x)


@dataclass(frozen=True)
class ScalogramTensor:
    """``data[s, t, f]``: coefficient of channel ``f`` at ``scales[s]``, time ``t``."""

    scales: tuple[float, ...]
    data: np.ndarray
    channel_names: tuple[str, ...]
    family: str = "morl"


def build_tensor(channels, channel_names=None, scales=DEFAULT_SCALES,
                 family: str = "morl") -> ScalogramTensor:
    """Per-channel CWT stacked depth-wise. ``channels`` has shape (F, n)."""
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim != 2:
        raise DataError("channels must have shape (F, n)")
    names = tuple(channel_names or (f"ch{i}" for i in range(len(channels))))
    data = np.moveaxis(cwt(channels, scales, family), 0, -1)
    return ScalogramTensor(tuple(float(a) for a in scales), data, names, family)


def build_batch(channels, scales=DEFAULT_SCALES, family: str = "morl") -> np.ndarray:
    """Network input for many samples: (N, F, n) -> (N, M, n, F)."""
    return np.moveaxis(cwt(np.asarray(channels, dtype=np.float64), scales, family), 1, -1)
