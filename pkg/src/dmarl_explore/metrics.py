"""Evaluation metrics over recorded episodes: steps to coverage, Jaccard overlap, shared data, robustness."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .core import UNKNOWN


@dataclass
class EpisodeTrace:
    """What an evaluation episode leaves behind.

    ``coverage[t]`` is the best per-agent known-free fraction after step t
    (index 0 is the state right after spawn detection).
    """

    coverage: list
    comm_events: list = field(default_factory=list)  # (step, members, gains)
    agent_specific: list = field(default_factory=list)  # final (n, n) arrays per agent
    terminal: str = "none"
    actions: list = field(default_factory=list)
    positions: list = field(default_factory=list)


@dataclass
class MetricsReport:
    n_steps: int | None
    jaccard: float
    d_shared: int
    success: bool
    pairwise: dict


def steps_to_coverage(trace: EpisodeTrace, p: float):
    """First step index at which coverage reaches ``p``; None when never reached."""
    for t, cov in enumerate(trace.coverage):
        if cov >= p:
            return t
    return None


def _known(m) -> np.ndarray:
    cells = m.cells if hasattr(m, "cells") else np.asarray(m)
    return cells != UNKNOWN


def jaccard_pair(map_a, map_b) -> float:
    a, b = _known(map_a), _known(map_b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def jaccard_table(maps) -> dict:
    return {(i, j): jaccard_pair(maps[i], maps[j]) for i, j in combinations(range(len(maps)), 2)}


def jaccard_aggregate(maps) -> float:
    k = len(maps)
    if k < 2:
        raise ValueError("Jaccard aggregate needs at least two maps")
    return 2.0 * sum(jaccard_table(maps).values()) / (k * (k - 1))


def shared_data(trace: EpisodeTrace) -> int:
    return int(sum(sum(gains) for _, _, gains in trace.comm_events))


def robustness(results) -> float:
    results = list(results)
    if not results:
        raise ValueError("robustness of an empty result set is undefined")
    return sum(1 for r in results if r.success) / len(results)


def report(trace: EpisodeTrace, p: float) -> MetricsReport:
    n_steps = steps_to_coverage(trace, p)
    maps = trace.agent_specific
    return MetricsReport(
        n_steps=n_steps,
        jaccard=jaccard_aggregate(maps) if len(maps) >= 2 else 1.0,
        d_shared=shared_data(trace),
        success=n_steps is not None and trace.terminal != "collision",
        pairwise=jaccard_table(maps),
    )


SUMMARY_COLUMNS = [
    "label",
    "episodes",
    "n_steps_mean",
    "n_steps_std",
    "jaccard_mean",
    "jaccard_std",
    "d_shared_mean",
    "d_shared_std",
    "robustness",
]

EPISODE_COLUMNS = ["episode", "arena", "n_steps", "jaccard", "d_shared", "success", "terminal"]


def _mean_std(xs):
    if not xs:
        return math.nan, math.nan
    arr = np.asarray(xs, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def summary_row(label: str, reports) -> list:
    """One summary row per label. n_steps statistics cover the episodes that reached the threshold."""
    reports = list(reports)
    steps = [r.n_steps for r in reports if r.n_steps is not None]
    ns = _mean_std(steps)
    jj = _mean_std([r.jaccard for r in reports])
    dd = _mean_std([r.d_shared for r in reports])
    return [label, len(reports), *ns, *jj, *dd, robustness(reports)]


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def rows_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def pairwise_rows(pairwise: dict) -> list:
    return [[f"J_{i + 1}_{j + 1}", v] for (i, j), v in sorted(pairwise.items())]
