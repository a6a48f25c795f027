"""Metrics, calibration, BID sweeps, subgroup analysis, average waveforms, latency."""

from __future__ import annotations

import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from afbeat.fusion import bid_patient
from afbeat.io_formats import Beat, EcgRecordBundle, ModelWeights, RiskSeries

CATEGORIES = ("Stable", "BeforeAF", "AfterAF", "BNA", "BNV")


# -- ROC / AUC --------------------------------------------------------------

def roc_auc(scores, labels) -> float | None:
    """Area under the ROC curve; ``None`` when only one class is present.

    Sort + trapezoid over tied score blocks, which equals the Mann-Whitney
    statistic with ties counted as one half. The area is accumulated in
    integer counts and divided once, so the result is exact.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    tp, fp = _block_counts(s, y)
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return twice_area / (2 * n_pos * n_neg)


def _block_counts(s: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative (tp, fp) counts at each distinct score, highest first, from (0, 0)."""
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_block = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y, dtype=np.int64)[last_of_block]
    fp = (last_of_block + 1) - tp
    return np.r_[0, tp], np.r_[0, fp]


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) from the highest threshold down, one point per distinct score."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    tp, fp = _block_counts(s, y)
    tpr = tp / n_pos if n_pos else np.zeros(len(tp))
    fpr = fp / n_neg if n_neg else np.zeros(len(fp))
    return fpr, tpr


def mann_whitney_auc(scores, labels) -> float:
    """Pairwise count: P(pos > neg) + 0.5 P(pos == neg)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    greater = int((pos[:, None] > neg[None, :]).sum())
    ties = int((pos[:, None] == neg[None, :]).sum())
    return (2 * greater + ties) / (2 * len(pos) * len(neg))


# -- thresholded metrics ------------------------------------------------------

@dataclass
class CalibrationBin:
    lower: float
    upper: float
    mean_predicted: float | None
    observed_rate: float | None
    count: int


@dataclass
class EvaluationReport:
    accuracy: float | None
    recall: float | None
    precision: float | None
    f1: float
    auc: float | None
    confusion: list[list[int]]  # [[tn, fp], [fn, tp]]
    threshold: float
    n_positive: int
    n_negative: int
    roc_points: list[tuple[float, float]] = field(default_factory=list)
    calibration_bins: list[CalibrationBin] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.n_positive + self.n_negative

    def to_dict(self, curves: bool = False) -> dict:
        d = asdict(self)
        if not curves:
            d.pop("roc_points")
            d.pop("calibration_bins")
        return d


def _ratio(num, den):
    return float(num / den) if den else None


def classification_metrics(scores, labels, threshold: float = 0.5, curves: bool = True) -> EvaluationReport:
    """Confusion at ``score >= threshold`` plus derived metrics.

    Precision or recall with a zero denominator is ``None``; F1 is then 0.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(int)
    if len(s) != len(y):
        raise ValueError("scores and labels differ in length")
    pred = (s >= threshold).astype(int)
    tp = int(((pred == 1) & (y == 1)).sum())
    tn = int(((pred == 0) & (y == 0)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    fn = int(((pred == 0) & (y == 1)).sum())
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    if precision and recall:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    report = EvaluationReport(
        accuracy=_ratio(tp + tn, len(s)), recall=recall, precision=precision, f1=f1,
        auc=roc_auc(s, y) if len(s) else None, confusion=[[tn, fp], [fn, tp]],
        threshold=threshold, n_positive=int((y == 1).sum()), n_negative=int((y == 0).sum()),
    )
    if curves and len(s):
        if report.auc is not None:
            fpr, tpr = roc_curve(s, y)
            report.roc_points = list(zip(fpr.tolist(), tpr.tolist()))
        report.calibration_bins = calibration(s, y)
    return report


def calibration(scores, labels, bins: int = 10) -> list[CalibrationBin]:
    """Equal-width bins over [0, 1]; the last bin is closed on the right."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(float)
    if len(s) == 0:
        raise ValueError("calibration needs at least one score")
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.floor(s * bins).astype(int), 0, bins - 1)
    out = []
    for b in range(bins):
        m = idx == b
        n = int(m.sum())
        out.append(CalibrationBin(
            lower=float(edges[b]), upper=float(edges[b + 1]),
            mean_predicted=float(s[m].mean()) if n else None,
            observed_rate=float(y[m].mean()) if n else None, count=n,
        ))
    return out


def average_reports(reports: list[EvaluationReport]) -> dict:
    """Arithmetic mean of each metric over the reports where it is defined."""
    out = {}
    for key in ("accuracy", "recall", "precision", "f1", "auc"):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        out[key] = float(np.mean(vals)) if vals else None
        out[f"{key}_folds"] = len(vals)
    return out


# -- BID sweep ----------------------------------------------------------------

def patient_scores(series: dict[str, RiskSeries], n: int, threshold: float = 0.5,
                   aggregation: str = "max_group") -> dict[str, tuple[float, int]]:
    """(score, decision) per patient."""
    out = {}
    for pid, s in series.items():
        res = bid_patient(s, n, threshold, aggregation)
        out[pid] = (res.score, res.decision)
    return out


def bid_sweep(series: dict[str, RiskSeries], labels: dict[str, int], n_values, threshold: float = 0.5,
              aggregation: str = "max_group") -> list[dict]:
    """AUC / accuracy / F1 of patient-level BID decisions for each group size."""
    rows = []
    ids = [pid for pid in sorted(series) if len(series[pid])]
    y = np.array([labels[pid] for pid in ids])
    for n in n_values:
        stats = [bid_patient(series[pid], n, threshold, aggregation) for pid in ids]
        score = np.array([st.score for st in stats])
        decision = np.array([st.decision for st in stats])
        rep = classification_metrics(decision, y, threshold=0.5, curves=False)
        rows.append({
            "n": int(n), "auc": roc_auc(score, y), "accuracy": rep.accuracy, "f1": rep.f1,
            "recall": rep.recall, "precision": rep.precision, "patients": len(ids),
        })
    aucs = [r["auc"] for r in rows if r["auc"] is not None]
    monotone = all(b >= a for a, b in zip(aucs, aucs[1:]))
    for r in rows:
        r["auc_monotone_nondecreasing"] = monotone
    return rows


# -- subgroup analysis --------------------------------------------------------

@dataclass(frozen=True)
class SubgroupAssignment:
    record_id: str
    ordinal: int
    rpeak: int
    af_patient: bool
    categories: frozenset
    window_seconds: float = 10.0


def _any_in(points: np.ndarray, lo: int, hi: int) -> bool:
    """Any point in the closed interval [lo, hi]."""
    return bool(np.any((points >= lo) & (points <= hi)))


def subgroup_classify(beat: Beat, record: EcgRecordBundle, window_s: float = 10.0) -> SubgroupAssignment:
    """Assign an AF patient's sinus beat to Stable/BeforeAF/AfterAF/BNA/BNV.

    Windows are ``window_s`` seconds either side of the beat's R-peak,
    clipped to the record. BeforeAF: an episode starts in the window after
    and none touches the window before; AfterAF mirrors it. Beats of non-AF
    patients get no categories.
    """
    if record.patient_label != 1:
        return SubgroupAssignment(record.record_id, beat.ordinal, beat.rpeak_index, False, frozenset(), window_s)
    w = int(round(window_s * record.fs))
    r = int(beat.rpeak_index)
    n = len(record.samples)
    before = (max(0, r - w), r)          # [lo, r)
    after = (r + 1, min(n, r + w + 1))   # [r+1, hi)
    cats = set()
    others = np.arange(len(record.rpeaks)) != beat.ordinal - 1
    rp = record.rpeaks[others]
    types = np.array(record.beat_types, dtype=object)[others]
    if _any_in(rp[types == "V"], r - w, r + w):
        cats.add("BNV")
    if _any_in(rp[types == "A"], r - w, r + w):
        cats.add("BNA")

    def intersects(a, b, lo, hi):
        return a < hi and b > lo

    af_before = any(intersects(a, b, *before) for a, b in record.af_episodes)
    af_after = any(intersects(a, b, *after) for a, b in record.af_episodes)
    starts_after = any(after[0] <= a < after[1] for a, _ in record.af_episodes)
    # half-open episodes: the last AF sample is b - 1
    ends_before = any(before[0] <= b - 1 < before[1] for _, b in record.af_episodes)
    if starts_after and not af_before:
        cats.add("BeforeAF")
    if ends_before and not af_after:
        cats.add("AfterAF")
    if not cats:
        cats.add("Stable")
    return SubgroupAssignment(record.record_id, beat.ordinal, beat.rpeak_index, True, frozenset(cats), window_s)


def subgroup_evaluate(assignments: list[SubgroupAssignment], scores, labels,
                      threshold: float = 0.5) -> dict[str, dict]:
    """Per category: that category's AF-patient beats plus every non-AF beat."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if not (len(assignments) == len(s) == len(y)):
        raise ValueError("assignments, scores and labels must align")
    non_af = np.array([not a.af_patient for a in assignments], dtype=bool)
    out = {}
    for cat in CATEGORIES:
        in_cat = np.array([a.af_patient and cat in a.categories for a in assignments], dtype=bool)
        n_in = int(in_cat.sum())
        entry = {"n_in_category": n_in, "n_non_af": int(non_af.sum())}
        if n_in == 0:
            entry["metrics"] = None
        else:
            m = in_cat | non_af
            entry["metrics"] = classification_metrics(s[m], y[m], threshold, curves=False).to_dict()
        out[cat] = entry
    return out


# -- average waveforms --------------------------------------------------------

def risk_quintile_waveforms(beats, scores, parts: int = 5) -> np.ndarray:
    """Pointwise mean beat of each of ``parts`` equal score-sorted slices."""
    x = np.asarray(beats, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or len(x) != len(s):
        raise ValueError("beats must be (n, L) and align with scores")
    if len(x) < parts:
        raise ValueError(f"need at least {parts} beats, got {len(x)}")
    order = np.argsort(s, kind="stable")
    return np.stack([x[idx].mean(axis=0) for idx in np.array_split(order, parts)])


# -- benchmark ----------------------------------------------------------------

def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        import contextlib
        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def benchmark(weights: ModelWeights, runs: int = 100, warmup: int = 5, seed: int = 0) -> dict:
    """Median eval-mode latency for one beat and for a batch of 32, single-threaded."""
    from afbeat.net1d.model import count_parameters, forward

    runs = max(runs, 100)
    w = weights.astype(np.float32)
    cfg = w.config
    rng = np.random.default_rng(seed)
    one = rng.normal(size=(1, cfg.in_channels, cfg.beat_length)).astype(np.float32)
    batch = rng.normal(size=(32, cfg.in_channels, cfg.beat_length)).astype(np.float32)
    result = {}
    with _single_thread():
        for key, x in (("single", one), ("batch32", batch)):
            for _ in range(warmup):
                forward(w, x)
            times = []
            for _ in range(runs):
                t0 = time.perf_counter()
                forward(w, x)
                times.append(time.perf_counter() - t0)
            result[f"median_{key}_latency_s"] = statistics.median(times)
    pc = count_parameters(weights)
    result.update({
        "parameters_trainable": pc.trainable, "parameters_running": pc.running, "runs": runs,
        "environment": {
            "python": platform.python_version(), "numpy": np.__version__, "machine": platform.machine(),
            "processor": platform.processor() or platform.machine(), "cpu_count": os.cpu_count(),
            "threads": 1,
        },
    })
    return result
