"""Compact panel notation shared by the tests.

Each cell is a token: ``"E12"`` exact 12, ``"M"`` missing, ``"R15"`` above 15,
``"I3-8"`` between 3 and 8. A panel is a list of days, each a list of tokens.
"""

from __future__ import annotations

import datetime as dt
import math

import numpy as np

from dmpot.data_model import CensorKind, SeriesPanel


def cell(token: str):
    """``(kind, value, lower, upper)`` of one token."""
    tag, body = token[0], token[1:]
    if tag == "E":
        return CensorKind.EXACT, float(body), 0.0, math.inf
    if tag == "M":
        return CensorKind.MISSING, math.nan, 0.0, math.inf
    if tag == "R":
        return CensorKind.RIGHT_CENSORED, math.nan, float(body), math.inf
    if tag == "I":
        lo, hi = body.split("-")
        return CensorKind.INTERVAL_CENSORED, math.nan, float(lo), float(hi)
    raise ValueError(token)


def panel(days, names=None, start=dt.date(2000, 1, 1)) -> SeriesPanel:
    d = len(days[0])
    names = names or [f"s{j + 1}" for j in range(d)]
    cells = [[cell(t) for t in row] for row in days]
    kinds = np.array([[c[0] for c in row] for row in cells], dtype=np.int8)
    values = np.array([[c[1] for c in row] for row in cells])
    lower = np.array([[c[2] for c in row] for row in cells])
    upper = np.array([[c[3] for c in row] for row in cells])
    return SeriesPanel(names, start, kinds, values, lower, upper)


def series(tokens, **kw) -> SeriesPanel:
    """Single-site panel from a flat token list."""
    return panel([[t] for t in tokens], **kw)


def random_psi(rng, d=None, k=None, shape_range=(0.5, 40.0)):
    """A random mixture satisfying the centre-of-mass constraint.

    The first ``k - 1`` centres are drawn near the simplex centre so that the
    solved last centre stays inside the simplex; infeasible draws are retried.
    """
    from dmpot.angular import ConstraintError, DMParams

    d = d or int(rng.integers(2, 5))
    k = k or int(rng.integers(1, 4))
    while True:
        shapes = np.exp(rng.uniform(*np.log(shape_range), size=k))
        if k == 1:
            return DMParams.single(d, shapes[0])
        p = rng.dirichlet(np.full(k, 2.0))
        free = rng.dirichlet(np.full(d, 4.0), size=k - 1)
        try:
            return DMParams.from_free(p, free, shapes)
        except ConstraintError:
            continue


def simulated_data(cfg, run_length=1, tau=None):
    """Decluster a simulated panel and return ``(LikelihoodData, panel, truth)``."""
    from dmpot.data_model import ThresholdConfig
    from dmpot.decluster import decluster
    from dmpot.likelihood import LikelihoodData
    from dmpot.simulate import simulate_panel

    p, truth = simulate_panel(cfg)
    summary = decluster(p, ThresholdConfig(cfg.thresholds, run_length))
    return LikelihoodData.from_summary(summary, cfg.rates, tau), p, truth


def toy_config(n_days=20_000, seed=1, historical_days=0, d=2):
    """Small d=2 (or d=3) truth with optional interval-censored history."""
    from dmpot.angular import DMParams
    from dmpot.margins import MarginalParams
    from dmpot.simulate import CensoringScenario, SimConfig

    if d == 2:
        psi = DMParams.from_free([0.4, 0.6], [[0.7, 0.3]], [5.0, 15.0])
        scales, v = [50.0, 80.0], (100.0, 150.0)
    else:
        psi = DMParams.from_free([0.5, 0.5], [[0.5, 0.3, 0.2]], [6.0, 10.0])
        scales, v = [50.0, 80.0, 60.0], (100.0, 150.0, 120.0)
    scenario = CensoringScenario(historical_days, tuple(1.5 * t for t in v)) if historical_days else CensoringScenario()
    margins = MarginalParams(np.log(scales), np.full(d, 0.1))
    return SimConfig(margins, psi, (0.005,) * d, v, n_days, scenario, seed)
