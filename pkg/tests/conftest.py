import time

import pytest

from heog.cnn.evaluate import train_and_evaluate
from heog.labeler import label_recording
from heog.synth import SynthConfig, generate_dataset

ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str) -> None:
    """Store one acceptance outcome for the end-of-run summary."""
    ACCEPTANCE[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def recordings():
    """Default synthetic dataset (20 subjects) labeled from the gaze channel."""
    recs = generate_dataset(SynthConfig())
    for r in recs:
        r.labels = label_recording(r.gaze, r.prompts).events
    return recs


class Trained:
    """Lazily trains and caches experiments keyed by (label set, subset, n)."""

    def __init__(self, recs):
        self.recs = recs
        self.cache = {}
        self.seconds = {}

    def __call__(self, label_set="full10", subset="all", n=100):
        key = (label_set, subset, n)
        if key not in self.cache:
            t0 = time.perf_counter()
            self.cache[key] = train_and_evaluate(self.recs, n, label_set, subset)
            self.seconds[key] = time.perf_counter() - t0
        return self.cache[key]


@pytest.fixture(scope="session")
def trained(recordings):
    return Trained(recordings)


@pytest.fixture(scope="session")
def reference(trained):
    """The 10-class, all-channel, n=100 model."""
    return trained()


@pytest.fixture(scope="session")
def test_recordings(recordings, reference):
    held_out = set(reference.test_ds.subject.tolist())
    return [r for r in recordings if r.subject in held_out]


@pytest.fixture(scope="session")
def latency_records(reference, test_recordings):
    """Sweep records for every true event of the held-out recordings."""
    from heog.stream import measure_latency

    out = []
    for r in test_recordings:
        out += measure_latency(reference.arch, reference.store, r.trace, r.events)
    return out
