from __future__ import annotations

import sys

import numpy as np
import pytest

from afbeat.io_formats import EcgRecordBundle


def make_bundle(n_samples=4000, rpeaks=None, beat_types=None, af_episodes=(), label=0, fs=200,
                record_id="rec", seed=0, **kw) -> EcgRecordBundle:
    rng = np.random.default_rng(seed)
    if rpeaks is None:
        rpeaks = np.arange(150, n_samples - 150, 160)
    rpeaks = np.asarray(rpeaks, dtype=np.int64)
    if beat_types is None:
        beat_types = ["N"] * len(rpeaks)
    samples = rng.normal(size=n_samples).astype(np.float32)
    return EcgRecordBundle(record_id=record_id, fs=fs, samples=samples, rpeaks=rpeaks,
                           beat_types=list(beat_types), af_episodes=list(af_episodes),
                           patient_label=label, **kw)


@pytest.fixture
def bundle_factory():
    return make_bundle


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
