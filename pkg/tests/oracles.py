"""Independent reference implementations used as test oracles.

Each oracle is written the slow, obvious way and shares no code with the
package beyond plain numpy/scipy/sympy.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
import sympy
from scipy import integrate, stats


# ---------------------------------------------------------------- wavelets

def _gaus_function(order: int):
    t = sympy.symbols("t", real=True)
    expr = sympy.diff(sympy.exp(-t ** 2), t, order)
    f = sympy.lambdify(t, expr, "math")
    energy, _ = integrate.quad(lambda u: f(u) ** 2, -np.inf, np.inf)
    c = 1.0 / math.sqrt(energy)
    return lambda u: c * f(u)


def mother(family: str):
    if family == "mexh":
        return lambda u: 2 / (math.sqrt(3) * math.pi ** 0.25) * (1 - u * u) * math.exp(-u * u / 2)
    if family == "morl":
        return lambda u: math.exp(-u * u / 2) * math.cos(5 * u)
    if family.startswith("gaus"):
        return _gaus_function(int(family[4:]))
    raise ValueError(family)


def cwt_direct(x, scales, family: str) -> np.ndarray:
    """Double loop over (scale, shift), inner sum over the signal."""
    psi = mother(family)
    n = len(x)
    out = np.zeros((len(scales), n))
    for i, a in enumerate(scales):
        for tau in range(n):
            acc = 0.0
            for t in range(n):
                u = (t - tau) / a
                if abs(u) <= 8.0:
                    acc += x[t] * psi(u)
            out[i, tau] = acc / math.sqrt(a)
    return out


# ---------------------------------------------------------------- network pieces

def conv3x3_direct(x, kernel, bias) -> np.ndarray:
    """'Same' 3x3 convolution (cross-correlation), channels-last, no activation."""
    n, h, w, c = x.shape
    cout = kernel.shape[-1]
    out = np.zeros((n, h, w, cout))
    for b in range(n):
        for i in range(h):
            for j in range(w):
                for o in range(cout):
                    acc = bias[o]
                    for di in range(3):
                        for dj in range(3):
                            ii, jj = i + di - 1, j + dj - 1
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += float(np.dot(x[b, ii, jj, :], kernel[di, dj, :, o]))
                    out[b, i, j, o] = acc
    return out


def finite_difference_grads(loss_fn, params, h=1e-4):
    """Central differences of ``loss_fn()`` w.r.t. every entry of every array in ``params``."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = loss_fn()
            p[idx] = old - h
            down = loss_fn()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def adam_scalar(grads, lr, b1=0.9, b2=0.999, eps=1e-8, theta=0.0):
    """Hand-stepped Adam on one scalar parameter; returns the trajectory."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(theta)
    return out


def plateau_counter(losses, lr, patience, factor):
    best, wait, out = math.inf, 0, []
    for loss in losses:
        if loss < best - 1e-12:
            best, wait = loss, 0
        else:
            wait += 1
            if wait == patience:
                lr *= factor
                wait = 0
        out.append(lr)
    return out


# ---------------------------------------------------------------- statistics

def wilcoxon_enumerate(d) -> float:
    """Two-sided exact signed-rank p-value by listing every sign assignment."""
    d = np.asarray(d, dtype=float)
    d = d[d != 0]
    n = len(d)
    ranks = stats.rankdata(np.abs(d))
    observed = ranks[d > 0].sum()
    le = ge = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(ranks, signs) if s)
        le += w <= observed + 1e-9
        ge += w >= observed - 1e-9
    return min(1.0, 2 * min(le, ge) / 2 ** n)


def metrics_direct(y, yhat):
    n = len(y)
    mae = sum(abs(a - b) for a, b in zip(y, yhat)) / n
    mape = 100 * sum(abs((a - b) / a) for a, b in zip(y, yhat)) / n
    mse = sum((a - b) ** 2 for a, b in zip(y, yhat)) / n
    return mae, mape, mse


def savgol_window_fit(x, window, polyorder, i):
    """Value at ``i`` of the least-squares polynomial fitted to the window centred on ``i``."""
    half = window // 2
    t = np.arange(-half, half + 1, dtype=float)
    a = np.vander(t, polyorder + 1)
    coef = np.linalg.solve(a.T @ a, a.T @ x[i - half:i + half + 1])
    return coef[-1]
