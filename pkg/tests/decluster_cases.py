"""Twelve hand-traced declustering fixtures.

Each case lists the panel (helper token notation), the thresholds and run
length, and the expected outcome traced by hand from the run rule, the merge
priorities and the block rule:

* ``clusters``: ``(start, end)`` day ranges;
* ``maxima``: per cluster, per site ``(kind, value, lower, upper)`` after
  below-threshold censoring (``None`` value when not exact);
* ``blocks``: ``(start, length, bounds)``;
* ``below`` and ``missing`` day counts and the mean cluster size ``tau``.
"""

from math import inf

EX, RC, IC, MI = 1, 2, 3, 0

CASES = [
    dict(
        name="initiation and closure after a run of quiet days",
        days=[["E3"], ["E12"], ["E4"], ["E11"], ["E3"], ["E3"], ["E3"]],
        v=(10,), tau=2,
        clusters=[(1, 3)],
        maxima=[[(EX, 12.0, 0.0, inf)]],
        blocks=[], below=4, missing=0, tau_hat=3.0,
    ),
    dict(
        name="exactly tau quiet days terminate the cluster",
        days=[["E11"], ["E3"], ["E3"], ["E12"]],
        v=(10,), tau=2,
        clusters=[(0, 0), (3, 3)],
        maxima=[[(EX, 11.0, 0.0, inf)], [(EX, 12.0, 0.0, inf)]],
        blocks=[], below=2, missing=0, tau_hat=1.0,
    ),
    dict(
        name="fewer than tau quiet days keep the cluster open",
        days=[["E11"], ["E3"], ["E3"], ["E12"], ["E5"]],
        v=(10,), tau=3,
        clusters=[(0, 3)],
        maxima=[[(EX, 12.0, 0.0, inf)]],
        blocks=[], below=1, missing=0, tau_hat=4.0,
    ),
    dict(
        name="any site above opens a multivariate cluster",
        days=[["E5", "E25"], ["E15", "E5"], ["E5", "E5"]],
        v=(10, 20), tau=1,
        clusters=[(0, 1)],
        maxima=[[(EX, 15.0, 0.0, inf), (EX, 25.0, 0.0, inf)]],
        blocks=[], below=1, missing=0, tau_hat=1.0,
    ),
    dict(
        name="exact beats an interval whose lower bound it exceeds",
        days=[["E15"], ["I12-20"]],
        v=(10,), tau=1,
        clusters=[(0, 1)],
        maxima=[[(EX, 15.0, 0.0, inf)]],
        blocks=[], below=0, missing=0, tau_hat=2.0,
    ),
    dict(
        name="interval wins when its lower bound reaches the exact maximum",
        days=[["E13"], ["I14-20"]],
        v=(10,), tau=1,
        clusters=[(0, 1)],
        maxima=[[(IC, None, 14.0, 20.0)]],
        blocks=[], below=0, missing=0, tau_hat=2.0,
    ),
    dict(
        name="right-censored record dominates a smaller exact value",
        days=[["R15"], ["E12"]],
        v=(10,), tau=1,
        clusters=[(0, 1)],
        maxima=[[(RC, None, 15.0, inf)]],
        blocks=[], below=0, missing=0, tau_hat=2.0,
    ),
    dict(
        name="missing site stays missing and adds nothing to the bounds",
        days=[["E15", "M"], ["E16", "I12-20"], ["E4", "E4"]],
        v=(10, 10), tau=1,
        clusters=[(0, 1)],
        maxima=[[(EX, 16.0, 0.0, inf), (IC, None, 12.0, 20.0)]],
        blocks=[], below=1, missing=0, tau_hat=1.5,
    ),
    dict(
        name="exact value below threshold in a cluster becomes [0, v]",
        days=[["E15", "E3"], ["E2", "E2"], ["E11", "M"]],
        v=(10, 10), tau=1,
        clusters=[(0, 0), (2, 2)],
        maxima=[[(EX, 15.0, 0.0, inf), (IC, None, 0.0, 10.0)], [(EX, 11.0, 0.0, inf), (MI, None, 0.0, inf)]],
        blocks=[], below=1, missing=0, tau_hat=1.0,
    ),
    dict(
        name="exact tie with the threshold counts as below",
        days=[["E10"], ["E11"], ["E10"]],
        v=(10,), tau=1,
        clusters=[(1, 1)],
        maxima=[[(EX, 11.0, 0.0, inf)]],
        blocks=[], below=2, missing=0, tau_hat=1.0,
    ),
    dict(
        name="undetermined days group into blocks of identical bounds",
        days=[["I0-20", "E3"], ["I0-20", "E4"], ["I0-20", "I0-8"], ["I0-30", "E3"], ["M", "M"], ["E12", "E2"]],
        v=(10, 10), tau=1,
        clusters=[(5, 5)],
        maxima=[[(EX, 12.0, 0.0, inf), (IC, None, 0.0, 10.0)]],
        blocks=[(0, 3, (20.0, 10.0)), (3, 1, (30.0, 10.0))], below=0, missing=1, tau_hat=1.0,
    ),
    dict(
        name="a cluster splits otherwise identical undetermined days",
        days=[["I0-20"], ["I0-20"], ["E15"], ["I0-20"], ["E3"], ["M"], ["R5"]],
        v=(10,), tau=1,
        clusters=[(2, 2)],
        maxima=[[(EX, 15.0, 0.0, inf)]],
        blocks=[(0, 2, (20.0,)), (3, 1, (20.0,)), (6, 1, (inf,))], below=1, missing=1, tau_hat=1.0,
    ),
]


def run_case(case):
    """Decluster one fixture and return the observed outcome in fixture form."""
    import numpy as np

    from dmpot.data_model import ThresholdConfig
    from dmpot.decluster import decluster, extract_clusters

    from helpers import panel

    p = panel(case["days"])
    tc = ThresholdConfig(case["v"], case["tau"])
    s = decluster(p, tc)
    maxima = [
        [
            (int(cm.kind[j]), None if np.isnan(cm.value[j]) else float(cm.value[j]), float(cm.lower[j]),
             float(cm.upper[j]))
            for j in range(cm.n_sites)
        ]
        for cm in s.clusters
    ]
    return dict(
        clusters=[(c.start, c.end) for c in extract_clusters(p, tc)],
        maxima=maxima,
        blocks=[(b.start, b.length, tuple(b.upper_bounds)) for b in s.blocks],
        below=s.below_days,
        missing=s.missing_days,
        tau_hat=s.mean_cluster_size,
    )


def mismatches(case) -> list[str]:
    got = run_case(case)
    return [f"{key}: expected {case[key]!r}, got {got[key]!r}" for key in got if got[key] != case[key]]
