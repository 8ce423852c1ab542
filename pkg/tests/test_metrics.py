import csv
import io
import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmarl_explore.core import FREE, OCCUPIED, UNKNOWN, GridMap
from dmarl_explore.metrics import (
    EPISODE_COLUMNS,
    SUMMARY_COLUMNS,
    EpisodeTrace,
    MetricsReport,
    jaccard_aggregate,
    jaccard_pair,
    jaccard_table,
    pairwise_rows,
    report,
    robustness,
    rows_csv,
    shared_data,
    steps_to_coverage,
    summary_row,
)


def known_set(cells):
    return {(r, c) for r in range(cells.shape[0]) for c in range(cells.shape[1]) if cells[r, c] != UNKNOWN}


def set_jaccard(a, b):
    return 1.0 if not (a | b) else len(a & b) / len(a | b)


maps_strategy = st.lists(
    st.lists(st.sampled_from([FREE, OCCUPIED, UNKNOWN]), min_size=16, max_size=16), min_size=2, max_size=5
)


@given(maps_strategy)
def test_jaccard_matches_set_oracle(raw):
    maps = [np.array(m).reshape(4, 4) for m in raw]
    sets = [known_set(m) for m in maps]
    table = jaccard_table(maps)
    for i, j in combinations(range(len(maps)), 2):
        assert table[(i, j)] == set_jaccard(sets[i], sets[j])
    k = len(maps)
    ref = 2.0 / (k * (k - 1)) * sum(set_jaccard(sets[i], sets[j]) for i, j in combinations(range(k), 2))
    assert jaccard_aggregate(maps) == pytest.approx(ref, abs=0, rel=1e-15)


def test_jaccard_hand_values():
    a = np.full((2, 2), UNKNOWN)
    b = a.copy()
    a[0, :] = FREE
    b[0, 0] = OCCUPIED
    b[1, 1] = FREE
    assert jaccard_pair(a, b) == 1 / 3
    assert jaccard_pair(a, a) == 1.0
    # occupied and free both count as known
    assert jaccard_pair(GridMap(np.full((2, 2), OCCUPIED), 0.5), np.full((2, 2), FREE)) == 1.0
    assert jaccard_pair(np.full((2, 2), UNKNOWN), np.full((2, 2), UNKNOWN)) == 1.0


def test_jaccard_aggregate_needs_two_maps():
    with pytest.raises(ValueError):
        jaccard_aggregate([np.zeros((2, 2))])


def fake(success):
    return MetricsReport(n_steps=1 if success else None, jaccard=0.0, d_shared=0, success=success, pairwise={})


def test_robustness_sixty_of_hundred():
    results = [fake(True)] * 60 + [fake(False)] * 40
    assert robustness(results) == 0.60


@given(st.lists(st.booleans(), min_size=1, max_size=200))
def test_robustness_is_success_fraction(flags):
    assert robustness(fake(f) for f in flags) == sum(flags) / len(flags)


def test_robustness_empty_raises():
    with pytest.raises(ValueError):
        robustness([])


def test_steps_to_coverage():
    trace = EpisodeTrace(coverage=[0.1, 0.5, 0.89, 0.9, 0.95])
    assert steps_to_coverage(trace, 0.9) == 3
    assert steps_to_coverage(trace, 0.1) == 0
    assert steps_to_coverage(trace, 0.99) is None


def test_shared_data_sums_recipient_gains():
    trace = EpisodeTrace(coverage=[0.0], comm_events=[(3, [0, 1], [4, 0]), (7, [0, 1, 2], [1, 2, 3])])
    assert shared_data(trace) == 10


def test_collision_is_never_a_success():
    maps = [np.full((3, 3), FREE)] * 2
    rep = report(EpisodeTrace(coverage=[1.0], agent_specific=maps, terminal="collision"), 0.9)
    assert rep.n_steps == 0 and not rep.success
    rep = report(EpisodeTrace(coverage=[1.0], agent_specific=maps, terminal="success"), 0.9)
    assert rep.success and rep.jaccard == 1.0


def test_summary_row_uses_reached_episodes_for_steps():
    reps = [
        MetricsReport(10, 0.2, 5, True, {}),
        MetricsReport(20, 0.4, 15, True, {}),
        MetricsReport(None, 0.6, 10, False, {}),
    ]
    row = summary_row("case4", reps)
    assert row[:4] == ["case4", 3, 15.0, 5.0]
    assert row[4] == pytest.approx(0.4)
    assert row[6] == 10.0
    assert row[-1] == 2 / 3
    assert len(row) == len(SUMMARY_COLUMNS)
    empty = summary_row("x", [MetricsReport(None, 0.1, 0, False, {})])
    assert math.isnan(empty[2])


def test_rows_csv_formats_cells():
    text = rows_csv(EPISODE_COLUMNS, [[0, 3, None, 0.25, 4, True, "step_cap"]])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == EPISODE_COLUMNS
    assert rows[1] == ["0", "3", "", "0.25", "4", "1", "step_cap"]


def test_pairwise_rows_are_one_based():
    assert pairwise_rows({(0, 1): 0.5, (1, 2): 0.25, (0, 2): 1.0}) == [
        ["J_1_2", 0.5],
        ["J_1_3", 1.0],
        ["J_2_3", 0.25],
    ]
