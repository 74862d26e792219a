"""Convergence diagnostics and the regional-shape likelihood-ratio test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_toeplitz
from scipy.special import gamma as gamma_fn
from scipy.special import kv
from scipy.stats import chi2

__all__ = [
    "DiagnosticError",
    "HeidelbergerWelch",
    "gelman_rubin",
    "spectrum0",
    "effective_sample_size",
    "pcramer",
    "heidelberger_welch",
    "lrt_regional_shape",
]


class DiagnosticError(ValueError):
    pass


def gelman_rubin(chains, min_length: int = 10) -> float:
    """Potential scale reduction factor for one scalar.

    ``chains`` has shape ``(m, n)``. Uses
    ``V = (n - 1) / n * W + (m + 1) / (m n) * B`` and ``R = sqrt(V / W)``.
    Chains shorter than ``min_length`` are refused.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DiagnosticError("need at least two chains")
    m, n = x.shape
    if n < max(min_length, 2):
        raise DiagnosticError(f"need chains of length at least {max(min_length, 2)}")
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    if not W > 0:
        raise DiagnosticError(f"zero within-chain variance (chain means {means})")
    B = n * means.var(ddof=1)
    V = (n - 1) / n * W + (m + 1) / (m * n) * B
    return float(math.sqrt(V / W))


def _yule_walker_all(x, order_max):
    """AIC-selected Yule-Walker AR fit: ``(coefficients, innovation variance)``."""
    n = x.size
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    full = np.fft.irfft(f * np.conj(f), nfft)[: order_max + 1] / n
    if not full[0] > 0:
        return np.zeros(0), 0.0
    best = (n * math.log(full[0]), np.zeros(0), full[0])
    for p in range(1, order_max + 1):
        try:
            a = solve_toeplitz(full[:p], full[1 : p + 1])
        except np.linalg.LinAlgError:
            break
        var = full[0] - a @ full[1 : p + 1]
        if not var > 0:
            break
        aic = n * math.log(var) + 2 * p
        if aic < best[0]:
            best = (aic, a, var)
    _, a, var = best
    # innovation variance with the usual n / (n - (p + 1)) correction
    return a, var * n / (n - (a.size + 1))


def spectrum0(x) -> float:
    """Spectral density at frequency zero from an AR fit (order by AIC)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    order_max = min(n - 1, int(math.floor(10 * math.log10(n))))
    a, var = _yule_walker_all(x, order_max)
    return float(var / (1.0 - a.sum()) ** 2)


def effective_sample_size(x) -> float:
    x = np.asarray(x, dtype=float)
    s0 = spectrum0(x)
    if s0 <= 0:
        return 0.0
    return float(x.size * x.var(ddof=1) / s0)


def pcramer(q, eps: float = 1e-5) -> float:
    """CDF of the Cramer-von Mises statistic (four-term Bessel series).

    The truncated series degrades past ``q = 2``, where the upper tail is
    already below ``2e-5``; larger statistics return 1.
    """
    if q <= 0:
        return 0.0
    if q > 2.0:
        return 1.0
    total = 0.0
    for k in range(4):
        z = gamma_fn(k + 0.5) * math.sqrt(4 * k + 1) / (gamma_fn(k + 1) * math.pi**1.5 * math.sqrt(q))
        u = (4 * k + 1) ** 2 / (16 * q)
        if u <= -math.log(eps):
            total += z * math.exp(-u) * kv(0.25, u)
    return float(total)


@dataclass(frozen=True)
class HeidelbergerWelch:
    passed: bool
    start: int
    pvalue: float


def heidelberger_welch(draws, alpha: float = 0.05) -> HeidelbergerWelch:
    """Stationarity test with successive 10% truncations of the series head.

    The spectral density at zero comes from the second half of the series;
    truncation stops at the first start index whose Cramer-von Mises
    statistic is not significant at level ``alpha``.
    """
    y = np.asarray(draws, dtype=float)
    n1 = y.size
    if n1 < 100:
        raise DiagnosticError("need at least 100 draws")
    s0 = spectrum0(y[n1 // 2 :])
    if not s0 > 0:
        return HeidelbergerWelch(False, 0, 0.0)
    starts = [int(round(i * n1 / 10)) for i in range(6)]
    pval = 0.0
    for s in starts:
        seg = y[s:]
        n = seg.size
        B = np.cumsum(seg) - seg.mean() * np.arange(1, n + 1)
        stat = float(np.sum(B * B / (n * s0)) / n)
        pval = 1.0 - pcramer(stat)
        if pval > alpha:
            return HeidelbergerWelch(True, s, pval)
    return HeidelbergerWelch(False, starts[-1], pval)


def lrt_regional_shape(loglik_regional: float, loglik_local: float, d: int) -> float:
    """p-value of ``2 (l_local - l_regional)`` against chi-square with ``d - 1`` df."""
    if d < 2:
        raise DiagnosticError("the test needs at least two sites")
    delta = loglik_local - loglik_regional
    if delta < 0:
        raise DiagnosticError(
            f"local fit log-likelihood {loglik_local} is below the regional one {loglik_regional}: optimization failed"
        )
    return float(chi2.sf(2.0 * delta, d - 1))
