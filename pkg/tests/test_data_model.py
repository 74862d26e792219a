import datetime as dt
import io
import math

import numpy as np
import pytest
from helpers import panel
from hypothesis import given, settings
from hypothesis import strategies as st

from dmpot.data_model import (
    CensorKind,
    Observation,
    PanelError,
    Position,
    SeriesPanel,
    ThresholdConfig,
    classify_position,
    panel_summary,
    parse_csv,
    write_csv,
)

HEADER = "date,site,kind,value,lower,upper\n"


def test_censor_kind_codes():
    assert [int(k) for k in CensorKind] == [0, 1, 2, 3]
    assert CensorKind(3) is CensorKind.INTERVAL_CENSORED


def test_interval_row_maps_fields():
    p = parse_csv(HEADER + "1604-09-10,Anduze,3,,0,1200\n")
    o = p.cell(0, 0)
    assert o.kind == CensorKind.INTERVAL_CENSORED
    assert (o.lower, o.upper, o.value) == (0.0, 1200.0, None)
    assert p.start == dt.date(1604, 9, 10)


def test_header_only_gives_empty_panel():
    p = parse_csv(HEADER)
    assert p.n_days == 0


def test_exact_without_value_is_rejected():
    with pytest.raises(PanelError, match="exact record missing value"):
        parse_csv(HEADER + "2000-01-01,A,1,,,\n")


def test_malformed_row_reports_line():
    with pytest.raises(PanelError, match="line 3"):
        parse_csv(HEADER + "2000-01-01,A,1,5,,\n2000-01-02,A,x,5,,\n")


def test_duplicate_record_is_rejected():
    with pytest.raises(PanelError, match="duplicate"):
        parse_csv(HEADER + "2000-01-01,A,1,5,,\n2000-01-01,A,1,6,,\n")


def test_gaps_become_missing_and_sites_keep_order():
    p = parse_csv(HEADER + "2000-01-01,B,1,5,,\n2000-01-03,A,2,,7,+inf\n")
    assert p.site_names == ("B", "A")
    assert p.n_days == 3
    assert p.kinds.tolist() == [[1, 0], [0, 0], [0, 2]]


def test_custom_column_names():
    text = "day,station,type,q,lo,hi\n2000-01-01,A,1,5,,\n"
    p = parse_csv(text, schema={"date": "day", "site": "station", "kind": "type", "value": "q",
                                "lower": "lo", "upper": "hi"})
    assert p.values[0, 0] == 5


@pytest.mark.parametrize(
    "obs, v, expected",
    [
        (Observation.exact(350), 300, Position.ABOVE),
        (Observation.interval(100, 250), 300, Position.BELOW),
        (Observation.interval(100, 600), 300, Position.UNDETERMINED),
        (Observation.exact(300), 300, Position.BELOW),
        (Observation.right(300), 300, Position.UNDETERMINED),
        (Observation.right(301), 300, Position.ABOVE),
        (Observation.missing(), 300, Position.UNDETERMINED),
    ],
)
def test_classify_position(obs, v, expected):
    assert classify_position(obs, v) == expected


def test_observation_invariants():
    with pytest.raises(PanelError):
        Observation(CensorKind.RIGHT_CENSORED, None, 0.0)
    with pytest.raises(PanelError):
        Observation(CensorKind.INTERVAL_CENSORED, None, 5.0, 3.0)
    with pytest.raises(PanelError):
        Observation(CensorKind.MISSING, 3.0)


def test_threshold_config_validation():
    with pytest.raises(ValueError):
        ThresholdConfig((0.0,), 3)
    with pytest.raises(ValueError):
        ThresholdConfig((1.0,), 0)


def test_panel_summary_tallies():
    p = panel([["M"]] * 10)
    assert panel_summary(p) == {"s1": {k: 10 * (k == CensorKind.MISSING) for k in CensorKind}}
    days = [["E5"]] * 3 + [["I1-2"]] * 4 + [["R3"]] * 2 + [["M"]]
    tally = panel_summary(panel(days))["s1"]
    assert tally[CensorKind.EXACT] == 3 and tally[CensorKind.INTERVAL_CENSORED] == 4
    assert tally[CensorKind.RIGHT_CENSORED] == 2 and tally[CensorKind.MISSING] == 1


def test_since_truncates():
    p = panel([["E1"], ["E2"], ["E3"]], start=dt.date(1891, 12, 31))
    q = p.since(dt.date(1892, 1, 1))
    assert q.n_days == 2 and q.start == dt.date(1892, 1, 1)


finite = st.floats(0.0, 1e6, allow_nan=False)


@st.composite
def observations(draw):
    kind = draw(st.sampled_from(list(CensorKind)))
    if kind == CensorKind.EXACT:
        return Observation.exact(draw(finite))
    if kind == CensorKind.RIGHT_CENSORED:
        return Observation.right(draw(st.floats(1e-3, 1e6)))
    if kind == CensorKind.INTERVAL_CENSORED:
        a, b = sorted((draw(finite), draw(finite)))
        return Observation.interval(a, b)
    return Observation.missing()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(observations(), min_size=2, max_size=2), min_size=1, max_size=15))
def test_csv_round_trip(rows):
    n, d = len(rows), 2
    kinds = np.array([[o.kind for o in r] for r in rows], dtype=np.int8)
    values = np.array([[math.nan if o.value is None else o.value for o in r] for r in rows])
    lower = np.array([[o.lower for o in r] for r in rows])
    upper = np.array([[o.upper for o in r] for r in rows])
    p = SeriesPanel(["a", "b"], dt.date(1700, 1, 1), kinds, values, lower, upper)
    buf = io.StringIO()
    write_csv(p, buf)
    q = parse_csv(buf.getvalue())
    assert q.equals(p)


@settings(max_examples=100, deadline=None)
@given(observations(), st.floats(0.1, 1e5), st.floats(0.0, 1e5))
def test_raising_threshold_never_moves_below_to_above(o, v, dv):
    if classify_position(o, v) == Position.BELOW:
        assert classify_position(o, v + dv) != Position.ABOVE
