"""Beat windowing around annotated R-peaks, sinus selection and labelling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from afbeat.io_formats import Beat, BeatArchive, EcgRecordBundle

__all__ = ["Beat", "SegmentReport", "segment_beats", "select_sinus", "assign_labels", "extract_archive"]


@dataclass
class SegmentReport:
    usable: int = 0
    emitted: int = 0
    skipped_boundary: list[int] = field(default_factory=list)


def usable_ordinals(k: int, skip_head: int = 10, skip_tail: int = 5) -> range:
    """1-based R-peak ordinals ``skip_head..k-skip_tail`` inclusive."""
    return range(skip_head, k - skip_tail + 1)


def segment_beats(
    record: EcgRecordBundle,
    L: int = 200,
    skip_head: int = 10,
    skip_tail: int = 5,
    report: SegmentReport | None = None,
) -> list[Beat]:
    """Cut ``[Rloc[i] - L/2, Rloc[i] + L/2)`` for every usable ordinal ``i``.

    Windows that would cross the record boundary are skipped and listed in
    ``report.skipped_boundary`` when a report is passed.
    """
    if record.fs != 200:
        raise ValueError(f"segment_beats requires fs == 200 (1 s beats), got fs={record.fs}")
    if L < 2 or L % 2:
        raise ValueError("L must be a positive even integer")
    if report is None:
        report = SegmentReport()
    n = len(record.samples)
    half = L // 2
    beats = []
    ordinals = usable_ordinals(len(record.rpeaks), skip_head, skip_tail)
    report.usable = len(ordinals)
    for i in ordinals:
        r = int(record.rpeaks[i - 1])
        left, right = r - half, r + half
        if left < 0 or right > n:
            report.skipped_boundary.append(i)
            continue
        beats.append(Beat(
            samples=record.samples[left:right].copy(), rpeak_index=r, ordinal=i,
            beat_type=record.beat_types[i - 1], left=left, right=right,
        ))
    report.emitted = len(beats)
    return beats


def select_sinus(beats: list[Beat]) -> list[Beat]:
    return [b for b in beats if b.beat_type == "N"]


def assign_labels(record: EcgRecordBundle, beats: list[Beat], L: int = 200) -> BeatArchive:
    """Every beat inherits the patient-level label."""
    if record.patient_label not in (0, 1):
        raise ValueError("patient_label must be 0 or 1")
    labels = np.full(len(beats), record.patient_label, dtype=np.int64)
    return BeatArchive(record_id=record.record_id, L=L, beats=list(beats), labels=labels,
                       patient_id=record.patient_id, fs=record.fs)


def extract_archive(record: EcgRecordBundle, L: int = 200, skip_head: int = 10, skip_tail: int = 5,
                    keep: tuple[str, ...] | None = ("N",)) -> BeatArchive:
    """Segment, keep the requested beat types (``None`` keeps all) and label."""
    beats = segment_beats(record, L, skip_head, skip_tail)
    if keep == ("N",):
        beats = select_sinus(beats)
    elif keep is not None:
        beats = [b for b in beats if b.beat_type in keep]
    return assign_labels(record, beats, L)
