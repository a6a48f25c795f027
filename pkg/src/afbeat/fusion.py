"""Multiple-beat fusion: time-grouped means, thresholded decisions, risk trends."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from afbeat.io_formats import RiskSeries

AGGREGATIONS = ("max_group", "majority", "mean_of_all")

__all__ = ["RiskSeries", "TimeGroupSummary", "BidResult", "TrendRecord", "tgd", "bid", "bid_patient", "tri"]


@dataclass
class TimeGroupSummary:
    m: int            # 1-based group index
    alpha: int        # first member, 1-based position in the series
    beta: int         # last member, inclusive
    n_members: int
    p_avg: float
    t: int            # total number of groups
    af_overlap: bool = False
    decision: int | None = None
    threshold: float | None = None


def tgd(series: RiskSeries | np.ndarray, n: int, af_episodes=None) -> list[TimeGroupSummary]:
    """Split the series into consecutive groups of ``n`` beats and average each.

    The last group may be shorter; it is averaged over its own member count.
    With ``af_episodes`` (half-open sample intervals) each group records whether
    any member's R-peak falls inside an episode.
    """
    if int(n) != n or n < 1:
        raise ValueError("group size n must be an integer >= 1")
    n = int(n)
    if isinstance(series, RiskSeries):
        p, rpeaks = series.probabilities, series.rpeaks
    else:
        p, rpeaks = np.asarray(series, dtype=np.float64).reshape(-1), None
    k = len(p)
    t = math.ceil(k / n)
    groups = []
    for m in range(t):
        lo, hi = m * n, min(k, (m + 1) * n)
        overlap = False
        if af_episodes and rpeaks is not None:
            r = rpeaks[lo:hi]
            overlap = any(bool(np.any((r >= a) & (r < b))) for a, b in af_episodes)
        groups.append(TimeGroupSummary(
            m=m + 1, alpha=lo + 1, beta=hi, n_members=hi - lo,
            p_avg=float(math.fsum(p[lo:hi]) / (hi - lo)), t=t, af_overlap=overlap,
        ))
    return groups


def bid(summary: TimeGroupSummary | float, threshold: float = 0.5) -> int:
    """1 iff the group mean is at or above ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    p_avg = summary.p_avg if isinstance(summary, TimeGroupSummary) else float(summary)
    decision = int(p_avg >= threshold)
    if isinstance(summary, TimeGroupSummary):
        summary.decision = decision
        summary.threshold = threshold
    return decision


@dataclass
class BidResult:
    decision: int
    score: float
    groups: list[TimeGroupSummary] = field(default_factory=list)

    @property
    def group_decisions(self) -> list[int]:
        return [g.decision for g in self.groups]


def bid_patient(series: RiskSeries | np.ndarray, n: int, threshold: float = 0.5,
                aggregation: str = "max_group") -> BidResult:
    """Patient decision from per-group decisions.

    ``max_group``: any group at/above threshold; score is the largest group mean.
    ``majority``: more than half of the groups flagged; score is the flagged fraction.
    ``mean_of_all``: threshold the mean of all beats; score is that mean.
    """
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    groups = tgd(series, n)
    for g in groups:
        bid(g, threshold)
    if not groups:
        return BidResult(0, 0.0, groups)
    if aggregation == "max_group":
        score = max(g.p_avg for g in groups)
        decision = int(any(g.decision for g in groups))
    elif aggregation == "majority":
        flagged = sum(g.decision for g in groups)
        score = flagged / len(groups)
        decision = int(flagged * 2 > len(groups))
    else:
        p = series.probabilities if isinstance(series, RiskSeries) else np.asarray(series, dtype=np.float64)
        score = float(math.fsum(p) / len(p))
        decision = bid(score, threshold)
    return BidResult(decision, float(score), groups)


@dataclass
class TrendRecord:
    m: int
    alpha: int
    beta: int
    start_sample: int
    end_sample: int
    p_avg: float
    color_class: str    # "red" for AF-overlapping groups, otherwise "blue"
    intensity: int      # 0..4 bucket of p_avg for blue groups, -1 for red
    above_threshold: int


def tri(series: RiskSeries, groups: list[TimeGroupSummary], af_episodes, threshold: float = 0.5,
        buckets: int = 5) -> list[TrendRecord]:
    """Per-group trend records: red when overlapping AF, else blue with a risk bucket."""
    if not groups:
        if len(series):
            raise ValueError("no groups for a non-empty series")
        return []
    if groups[-1].beta != len(series) or groups[0].alpha != 1:
        raise ValueError("groups do not tile the series (misaligned inputs)")
    records = []
    for g in groups:
        lo, hi = g.alpha - 1, g.beta
        mean = float(math.fsum(series.probabilities[lo:hi]) / (hi - lo))
        if abs(mean - g.p_avg) > 1e-12:
            raise ValueError(f"group {g.m} mean does not match the series (misaligned inputs)")
        r = series.rpeaks[lo:hi]
        overlap = any(bool(np.any((r >= a) & (r < b))) for a, b in af_episodes)
        bucket = -1 if overlap else min(buckets - 1, int(g.p_avg * buckets))
        records.append(TrendRecord(
            m=g.m, alpha=g.alpha, beta=g.beta, start_sample=int(r[0]), end_sample=int(r[-1]),
            p_avg=g.p_avg, color_class="red" if overlap else "blue", intensity=bucket,
            above_threshold=int(g.p_avg >= threshold),
        ))
    return records


def trend_csv(records: list[TrendRecord], threshold: float) -> str:
    lines = [f"# threshold={threshold!r}",
             "group,alpha,beta,start_sample,end_sample,p_avg,color,intensity,above_threshold"]
    for r in records:
        lines.append(f"{r.m},{r.alpha},{r.beta},{r.start_sample},{r.end_sample},{r.p_avg!r},"
                     f"{r.color_class},{r.intensity},{r.above_threshold}")
    return "\n".join(lines) + "\n"
