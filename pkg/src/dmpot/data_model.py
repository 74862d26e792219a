"""Censored multivariate daily series: record types, CSV ingestion and validation.

Each site-day is stored as a censoring kind plus a value and a pair of bounds.
A :class:`SeriesPanel` keeps the whole grid as dense ``(n_days, n_sites)``
arrays so that declustering and likelihood code can work vectorized.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import TextIO

import numpy as np

__all__ = [
    "CensorKind",
    "Position",
    "Observation",
    "SeriesPanel",
    "ThresholdConfig",
    "PanelError",
    "classify_position",
    "classify_panel",
    "panel_summary",
    "parse_csv",
    "read_csv",
    "write_csv",
]

CSV_COLUMNS = ("date", "site", "kind", "value", "lower", "upper")


class PanelError(ValueError):
    """Raised when input records are malformed or violate their censoring kind."""


class CensorKind(enum.IntEnum):
    MISSING = 0
    EXACT = 1
    RIGHT_CENSORED = 2
    INTERVAL_CENSORED = 3


class Position(enum.IntEnum):
    """Position of a record with respect to a threshold."""

    BELOW = -1
    UNDETERMINED = 0
    ABOVE = 1


@dataclass(frozen=True)
class Observation:
    """One site-day record ``(kind, value, lower, upper)``.

    ``value`` is ``None`` unless the record is exact.
    """

    kind: CensorKind
    value: float | None = None
    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "kind", CensorKind(self.kind))
        problem = _observation_problem(self.kind, self.value, self.lower, self.upper)
        if problem:
            raise PanelError(problem)

    @classmethod
    def missing(cls) -> Observation:
        return cls(CensorKind.MISSING)

    @classmethod
    def exact(cls, value: float) -> Observation:
        return cls(CensorKind.EXACT, float(value))

    @classmethod
    def right(cls, lower: float) -> Observation:
        return cls(CensorKind.RIGHT_CENSORED, None, float(lower))

    @classmethod
    def interval(cls, lower: float, upper: float) -> Observation:
        return cls(CensorKind.INTERVAL_CENSORED, None, float(lower), float(upper))


def _observation_problem(kind, value, lower, upper) -> str | None:
    if kind == CensorKind.EXACT:
        if value is None or (isinstance(value, float) and math.isnan(value)):
            return "exact record missing value"
        if not math.isfinite(value) or value < 0:
            return f"exact value must be finite and non-negative, got {value}"
        if lower != 0.0 or upper != math.inf:
            return "exact record must carry bounds (0, +inf)"
        return None
    if value is not None and not (isinstance(value, float) and math.isnan(value)):
        return f"{kind.name.lower()} record must not carry a value"
    if kind == CensorKind.MISSING:
        if lower != 0.0 or upper != math.inf:
            return "missing record must carry bounds (0, +inf)"
    elif kind == CensorKind.RIGHT_CENSORED:
        if not (lower > 0 and math.isfinite(lower)):
            return f"right-censored record needs finite lower bound > 0, got {lower}"
        if upper != math.inf:
            return "right-censored record must have upper bound +inf"
    elif kind == CensorKind.INTERVAL_CENSORED:
        if not (0 <= lower <= upper < math.inf):
            return f"interval-censored record needs 0 <= lower <= upper < inf, got [{lower}, {upper}]"
    return None


@dataclass(frozen=True)
class ThresholdConfig:
    """Declustering thresholds ``v`` (discharge units) and run length ``tau`` in days."""

    thresholds: tuple[float, ...]
    run_length: int = 3

    def __post_init__(self):
        th = tuple(float(v) for v in self.thresholds)
        object.__setattr__(self, "thresholds", th)
        if not th or any(not (v > 0 and math.isfinite(v)) for v in th):
            raise ValueError(f"thresholds must be finite and positive, got {th}")
        if int(self.run_length) != self.run_length or self.run_length < 1:
            raise ValueError(f"run_length must be a positive integer, got {self.run_length}")
        object.__setattr__(self, "run_length", int(self.run_length))

    @property
    def v(self) -> np.ndarray:
        return np.asarray(self.thresholds)


@dataclass(frozen=True, eq=False)
class SeriesPanel:
    """Dense ``n_days x n_sites`` grid of censored observations.

    Days are contiguous: row ``t`` is ``start + t`` days. Absent site-days are
    stored as missing. Arrays are made read-only on construction.
    """

    site_names: tuple[str, ...]
    start: dt.date | None
    kinds: np.ndarray
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "site_names", tuple(self.site_names))
        d = len(self.site_names)
        arrays = {}
        for name, dtype in (("kinds", np.int8), ("values", float), ("lower", float), ("upper", float)):
            arr = np.array(getattr(self, name), dtype=dtype, copy=True)
            if arr.size == 0:
                arr = arr.reshape(0, d)
            if arr.ndim != 2 or arr.shape[1] != d:
                raise PanelError(f"{name} must have shape (n_days, {d}), got {arr.shape}")
            arr.setflags(write=False)
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        shapes = {a.shape for a in arrays.values()}
        if len(shapes) != 1:
            raise PanelError(f"inconsistent array shapes {shapes}")
        if len(set(self.site_names)) != d:
            raise PanelError("duplicate site names")
        if self.n_days and self.start is None:
            raise PanelError("non-empty panel needs a start date")
        self._validate()

    def _validate(self):
        k, y, lo, hi = self.kinds, self.values, self.lower, self.upper
        bad_kind = ~np.isin(k, [0, 1, 2, 3])
        exact = k == CensorKind.EXACT
        ok = ~bad_kind
        ok &= np.where(exact, np.isfinite(y) & (y >= 0), np.isnan(y))
        ok &= np.where(
            k == CensorKind.RIGHT_CENSORED,
            (lo > 0) & np.isfinite(lo) & np.isinf(hi),
            True,
        )
        ok &= np.where(
            k == CensorKind.INTERVAL_CENSORED,
            (lo >= 0) & (lo <= hi) & np.isfinite(hi),
            True,
        )
        ok &= np.where((k == CensorKind.MISSING) | exact, (lo == 0) & np.isinf(hi), True)
        if not ok.all():
            t, j = np.argwhere(~ok)[0]
            raise PanelError(f"invalid record on {self.date_of(t)} at site {self.site_names[j]}")

    @property
    def n_days(self) -> int:
        return self.kinds.shape[0]

    @property
    def n_sites(self) -> int:
        return len(self.site_names)

    @property
    def days(self) -> np.ndarray:
        """Integer day offsets from the first date."""
        return np.arange(self.n_days)

    def date_of(self, t: int) -> dt.date:
        return self.start + dt.timedelta(days=int(t))

    def index_of(self, date: dt.date) -> int:
        return (date - self.start).days

    def cell(self, t: int, j: int) -> Observation:
        y = self.values[t, j]
        return Observation(
            CensorKind(int(self.kinds[t, j])),
            None if np.isnan(y) else float(y),
            float(self.lower[t, j]),
            float(self.upper[t, j]),
        )

    def slice_days(self, first: int, stop: int) -> SeriesPanel:
        """Sub-panel of rows ``first:stop``."""
        first = max(0, first)
        return SeriesPanel(
            self.site_names,
            self.date_of(first) if stop > first else None,
            self.kinds[first:stop],
            self.values[first:stop],
            self.lower[first:stop],
            self.upper[first:stop],
        )

    def since(self, date: dt.date) -> SeriesPanel:
        """Sub-panel restricted to days on or after ``date``."""
        if self.start is None:
            return self
        return self.slice_days(max(0, self.index_of(date)), self.n_days)

    def select_sites(self, idx: Iterable[int]) -> SeriesPanel:
        idx = list(idx)
        return SeriesPanel(
            [self.site_names[j] for j in idx],
            self.start,
            self.kinds[:, idx],
            self.values[:, idx],
            self.lower[:, idx],
            self.upper[:, idx],
        )

    def equals(self, other: SeriesPanel) -> bool:
        """Field-by-field equality, NaN-aware."""
        return (
            self.site_names == other.site_names
            and (self.start == other.start or self.n_days == other.n_days == 0)
            and np.array_equal(self.kinds, other.kinds)
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    @classmethod
    def from_observations(
        cls, site_names: Iterable[str], start: dt.date, rows: Iterable[Iterable[Observation]]
    ) -> SeriesPanel:
        rows = [list(r) for r in rows]
        names = list(site_names)
        n, d = len(rows), len(names)
        kinds = np.zeros((n, d), dtype=np.int8)
        values = np.full((n, d), np.nan)
        lower = np.zeros((n, d))
        upper = np.full((n, d), np.inf)
        for t, row in enumerate(rows):
            if len(row) != d:
                raise PanelError(f"day {t} has {len(row)} records, expected {d}")
            for j, o in enumerate(row):
                kinds[t, j] = o.kind
                values[t, j] = np.nan if o.value is None else o.value
                lower[t, j] = o.lower
                upper[t, j] = o.upper
        return cls(names, start if n else None, kinds, values, lower, upper)

    @classmethod
    def from_exact(cls, values, site_names=None, start: dt.date = dt.date(2000, 1, 1)) -> SeriesPanel:
        """All-exact panel from an ``(n_days, n_sites)`` array; NaN means missing."""
        y = np.atleast_2d(np.asarray(values, dtype=float))
        if np.ndim(values) == 1:
            y = y.T
        n, d = y.shape
        names = list(site_names) if site_names is not None else [f"site{j + 1}" for j in range(d)]
        kinds = np.where(np.isnan(y), CensorKind.MISSING, CensorKind.EXACT).astype(np.int8)
        return cls(names, start if n else None, kinds, y, np.zeros((n, d)), np.full((n, d), np.inf))


def classify_position(o: Observation, v: float) -> Position:
    """Locate a record relative to threshold ``v``; exact ties count as below."""
    if not v > 0:
        raise ValueError("threshold must be positive")
    if o.kind == CensorKind.EXACT:
        return Position.ABOVE if o.value > v else Position.BELOW
    if o.kind in (CensorKind.RIGHT_CENSORED, CensorKind.INTERVAL_CENSORED) and o.lower > v:
        return Position.ABOVE
    if o.kind == CensorKind.INTERVAL_CENSORED and o.upper < v:
        return Position.BELOW
    return Position.UNDETERMINED


def classify_panel(panel: SeriesPanel, thresholds) -> np.ndarray:
    """Vectorized :func:`classify_position` over a panel; returns an int8 array."""
    v = np.asarray(thresholds, dtype=float)
    if v.shape != (panel.n_sites,):
        raise ValueError(f"expected {panel.n_sites} thresholds, got shape {v.shape}")
    k, y, lo, hi = panel.kinds, panel.values, panel.lower, panel.upper
    exact = k == CensorKind.EXACT
    censored = (k == CensorKind.RIGHT_CENSORED) | (k == CensorKind.INTERVAL_CENSORED)
    with np.errstate(invalid="ignore"):
        above = (exact & (y > v)) | (censored & (lo > v))
        below = (exact & ~(y > v)) | ((k == CensorKind.INTERVAL_CENSORED) & (hi < v) & ~above)
    out = np.zeros(k.shape, dtype=np.int8)
    out[above] = Position.ABOVE
    out[below] = Position.BELOW
    return out


def panel_summary(panel: SeriesPanel) -> dict[str, dict[CensorKind, int]]:
    """Per-site tallies of censoring kinds."""
    out = {}
    for j, name in enumerate(panel.site_names):
        counts = np.bincount(panel.kinds[:, j].astype(np.int64), minlength=4)
        out[name] = {kind: int(counts[kind]) for kind in CensorKind}
    return out


def _parse_float(text: str, default: float | None) -> float | None:
    text = text.strip()
    if text == "":
        return default
    low = text.lower()
    if low in ("+inf", "inf", "infinity", "+infinity"):
        return math.inf
    return float(text)


def parse_csv(stream: TextIO | str, schema: Mapping[str, str] | None = None) -> SeriesPanel:
    """Read a long-format CSV (``date,site,kind,value,lower,upper``) into a panel.

    Parameters
    ----------
    stream
        Text stream or the CSV content itself.
    schema
        Optional map from canonical column names to the header names used in
        the file.

    Days absent from the file between the first and last date, and absent
    (date, site) pairs, become missing records. Sites are ordered as first
    encountered.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    names = {c: c for c in CSV_COLUMNS}
    if schema:
        names.update(schema)
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise PanelError("empty input: header row required") from None
    try:
        col = {c: header.index(names[c]) for c in CSV_COLUMNS}
    except ValueError as exc:
        raise PanelError(f"header must contain columns {[names[c] for c in CSV_COLUMNS]}") from exc

    records: dict[tuple[dt.date, str], Observation] = {}
    sites: dict[str, int] = {}
    for row in reader:
        lineno = reader.line_num
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) < len(header):
            raise PanelError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            date = dt.date.fromisoformat(row[col["date"]].strip())
            site = row[col["site"]].strip()
            kind = CensorKind(int(row[col["kind"]]))
            value = _parse_float(row[col["value"]], None)
            lower = _parse_float(row[col["lower"]], 0.0)
            upper = _parse_float(row[col["upper"]], math.inf)
        except ValueError as exc:
            raise PanelError(f"line {lineno}: malformed row ({exc})") from exc
        if not site:
            raise PanelError(f"line {lineno}: empty site name")
        if kind == CensorKind.EXACT:
            lower, upper = 0.0, math.inf
        try:
            obs = Observation(kind, value, lower, upper)
        except PanelError as exc:
            raise PanelError(f"{date.isoformat()} at {site}: {exc}") from None
        if (date, site) in records:
            raise PanelError(f"line {lineno}: duplicate record for {date.isoformat()} at {site}")
        records[(date, site)] = obs
        sites.setdefault(site, len(sites))

    site_names = list(sites)
    if not records:
        return SeriesPanel(site_names, None, np.zeros((0, len(site_names))), [], [], [])
    first = min(d for d, _ in records)
    last = max(d for d, _ in records)
    n, d = (last - first).days + 1, len(site_names)
    kinds = np.zeros((n, d), dtype=np.int8)
    values = np.full((n, d), np.nan)
    lower = np.zeros((n, d))
    upper = np.full((n, d), np.inf)
    for (date, site), o in records.items():
        t, j = (date - first).days, sites[site]
        kinds[t, j] = o.kind
        if o.value is not None:
            values[t, j] = o.value
        lower[t, j] = o.lower
        upper[t, j] = o.upper
    return SeriesPanel(site_names, first, kinds, values, lower, upper)


def read_csv(path, schema: Mapping[str, str] | None = None) -> SeriesPanel:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_csv(fh, schema)


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return repr(float(x))


def write_csv(panel: SeriesPanel, stream: TextIO, skip_missing: bool = False) -> None:
    """Write a panel in the CSV dialect read by :func:`parse_csv`.

    With ``skip_missing`` missing cells are omitted, except on the first and
    last day so that the date range survives a round trip.
    """
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    n = panel.n_days
    for t in range(n):
        date = panel.date_of(t).isoformat()
        for j, site in enumerate(panel.site_names):
            kind = int(panel.kinds[t, j])
            if skip_missing and kind == CensorKind.MISSING and 0 < t < n - 1:
                continue
            y = panel.values[t, j]
            w.writerow(
                (
                    date,
                    site,
                    kind,
                    "" if np.isnan(y) else _fmt(y),
                    _fmt(panel.lower[t, j]),
                    _fmt(panel.upper[t, j]),
                )
            )
