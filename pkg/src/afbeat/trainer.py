"""Mini-batch training and patient-level k-fold cross-validation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from afbeat.evaluation import EvaluationReport, average_reports, classification_metrics
from afbeat.io_formats import BeatArchive, EcgRecordBundle, ModelWeights, RiskSeries
from afbeat.net1d.config import Net1dConfig
from afbeat.net1d.model import backward, build_model, cross_entropy, forward, predict_proba
from afbeat.preprocess import FilterSpec, filter_bundle
from afbeat.segmentation import extract_archive

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float, beta2: float, eps: float):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads) -> None:
        for name, g in grads.items():
            params[name] -= self.lr * g


@dataclass
class TrainResult:
    weights: ModelWeights
    losses: list[float]
    config: TrainConfig
    n_beats: int
    class_counts: dict[int, int]

    def report(self) -> dict:
        return {
            "train_config": asdict(self.config), "epoch_losses": self.losses, "n_beats": self.n_beats,
            "class_counts": {str(k): v for k, v in self.class_counts.items()},
        }


def stack_archives(archives: list[BeatArchive]) -> tuple[np.ndarray, np.ndarray]:
    mats = [a.matrix() for a in archives if a.beats]
    if not mats:
        return np.zeros((0, archives[0].L if archives else 200)), np.zeros(0, dtype=np.int64)
    x = np.concatenate(mats).astype(np.float64)
    y = np.concatenate([a.labels for a in archives if a.beats])
    return x, y


def train(archives: list[BeatArchive], config: TrainConfig, model_config: Net1dConfig | None = None,
          init: ModelWeights | None = None) -> TrainResult:
    """Train in double precision; deterministic for a fixed ``config.seed``."""
    x, y = stack_archives(archives)
    counts = {c: int((y == c).sum()) for c in (0, 1)}
    if counts[0] == 0 or counts[1] == 0:
        raise ValueError(f"training data must contain both classes, got counts {counts}")
    if model_config is None:
        model_config = init.config if init is not None else Net1dConfig(beat_length=x.shape[1])
    if x.shape[1] != model_config.beat_length:
        raise ValueError(f"beats have length {x.shape[1]}, model expects {model_config.beat_length}")
    weights = init.astype(np.float64) if init is not None else build_model(model_config, config.seed)
    rng = np.random.default_rng(config.seed)
    trainable = {k: v for k, v in weights.tensors.items() if not k.endswith(("running_mean", "running_var"))}
    opt = (Adam(trainable, config.learning_rate, config.beta1, config.beta2, config.eps)
           if config.optimizer == "adam" else SGD(config.learning_rate))
    x = x[:, None, :]
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for b, start in enumerate(range(0, len(x), config.batch_size)):
            idx = order[start:start + config.batch_size]
            xb, yb = x[idx], y[idx]
            probs, trace = forward(weights, xb, mode="train", trace=True, rng=rng)
            loss = cross_entropy(yb, probs[:, 1]).value
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}")
            grads, _ = backward(weights, xb, yb, trace)
            opt.step(trainable, grads)
            total += loss * len(idx)
        losses.append(total / len(x))
        log.info("epoch %d/%d loss %.5f", epoch + 1, config.epochs, losses[-1])
    return TrainResult(weights, losses, config, len(x), counts)


# -- folds -------------------------------------------------------------------

@dataclass
class FoldSplit:
    fold_index: int                 # 1-based
    train_patients: list[str]
    test_patients: list[str]


def make_folds(patient_labels: dict[str, int], k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Patient-disjoint folds, dealt round-robin within each label after a seeded shuffle."""
    patients = sorted(patient_labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(patients) < k:
        raise ValueError(f"need at least k={k} patients, got {len(patients)}")
    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    pos = 0
    for label in (1, 0):
        group = [p for p in patients if patient_labels[p] == label]
        for i in rng.permutation(len(group)):
            assignment[group[i]] = pos % k
            pos += 1
    folds = []
    for f in range(k):
        test = sorted(p for p in patients if assignment[p] == f)
        train_ = sorted(p for p in patients if assignment[p] != f)
        folds.append(FoldSplit(f + 1, train_, test))
    return folds


@dataclass
class PipelineParams:
    filter_spec: FilterSpec | None = field(default_factory=FilterSpec)
    beat_length: int = 200
    skip_head: int = 10
    skip_tail: int = 5
    threshold: float = 0.5


def prepare_archive(bundle: EcgRecordBundle, params: PipelineParams) -> BeatArchive:
    """Filter (when a spec is given), segment, keep sinus beats and label."""
    if params.filter_spec is not None:
        bundle = filter_bundle(bundle, params.filter_spec)
    return extract_archive(bundle, params.beat_length, params.skip_head, params.skip_tail)


@dataclass
class FoldResult:
    split: FoldSplit
    report: EvaluationReport | None
    degenerate: bool
    losses: list[float]
    series: dict[str, RiskSeries]

    def to_dict(self) -> dict:
        return {
            "fold": self.split.fold_index, "train_patients": self.split.train_patients,
            "test_patients": self.split.test_patients, "degenerate": self.degenerate,
            "metrics": self.report.to_dict() if self.report else None, "epoch_losses": self.losses,
        }


@dataclass
class CrossValidationResult:
    folds: list[FoldResult]
    average: dict

    def to_dict(self) -> dict:
        return {"folds": [f.to_dict() for f in self.folds], "average": self.average}

    @property
    def series(self) -> dict[str, RiskSeries]:
        out = {}
        for f in self.folds:
            out.update(f.series)
        return out


def archives_by_patient(archives: list[BeatArchive]) -> dict[str, list[BeatArchive]]:
    out: dict[str, list[BeatArchive]] = {}
    for a in archives:
        out.setdefault(a.patient, []).append(a)
    return out


def patient_series(archives: list[BeatArchive], probs: np.ndarray, label: int) -> RiskSeries:
    """Concatenate a patient's records in order into one risk series."""
    ordinals = np.concatenate([[b.ordinal for b in a.beats] for a in archives]) if archives else []
    rpeaks = np.concatenate([[b.rpeak_index for b in a.beats] for a in archives]) if archives else []
    rid = archives[0].patient if archives else ""
    return RiskSeries(rid, probs, ordinals, rpeaks, label=label)


def run_fold(split: FoldSplit, by_patient: dict[str, list[BeatArchive]], labels: dict[str, int],
             config: TrainConfig, model_config: Net1dConfig, threshold: float = 0.5) -> FoldResult:
    train_archives = [a for p in split.train_patients for a in by_patient[p]]
    result = train(train_archives, config, model_config)
    weights = result.weights
    series = {}
    scores, ys = [], []
    for p in split.test_patients:
        arcs = by_patient[p]
        x, _ = stack_archives(arcs)
        probs = predict_proba(weights, x) if len(x) else np.zeros(0)
        series[p] = patient_series(arcs, probs, labels[p])
        scores.append(probs)
        ys.append(np.full(len(probs), labels[p]))
    s = np.concatenate(scores) if scores else np.zeros(0)
    y = np.concatenate(ys) if ys else np.zeros(0, dtype=int)
    degenerate = len(set(y.tolist())) < 2
    report = classification_metrics(s, y, threshold) if len(s) else None
    if degenerate:
        log.warning("fold %d test set has a single class; AUC undefined", split.fold_index)
    return FoldResult(split, report, degenerate, result.losses, series)


def cross_validate(bundles: list[EcgRecordBundle], k: int = 5, config: TrainConfig = TrainConfig(),
                   model_config: Net1dConfig | None = None, params: PipelineParams | None = None,
                   folds: list[int] | None = None) -> CrossValidationResult:
    """Patient-level k-fold CV from raw bundles (filtered and segmented here)."""
    params = params or PipelineParams()
    archives = [prepare_archive(b, params) for b in bundles]
    labels = {b.patient: b.patient_label for b in bundles}
    return cross_validate_archives(archives, labels, k, config, model_config, params.threshold, folds)


def cross_validate_archives(archives: list[BeatArchive], labels: dict[str, int], k: int = 5,
                            config: TrainConfig = TrainConfig(), model_config: Net1dConfig | None = None,
                            threshold: float = 0.5, folds: list[int] | None = None) -> CrossValidationResult:
    """Patient-level k-fold CV; ``folds`` restricts the run to some 1-based fold indices."""
    if model_config is None:
        model_config = Net1dConfig(beat_length=archives[0].L if archives else 200)
    by_patient = archives_by_patient(archives)
    splits = make_folds(labels, k, config.seed)
    for split in splits:
        if {labels[p] for p in split.train_patients} != {0, 1}:
            raise ValueError(f"fold {split.fold_index} training set lacks a class")
    results = []
    for split in splits:
        if folds is not None and split.fold_index not in folds:
            continue
        log.info("fold %d: %d train / %d test patients", split.fold_index,
                 len(split.train_patients), len(split.test_patients))
        results.append(run_fold(split, by_patient, labels, config, model_config, threshold))
    avg = average_reports([r.report for r in results if r.report is not None])
    return CrossValidationResult(results, avg)
