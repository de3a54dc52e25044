"""Shared fixtures: corpora and trained detectors are expensive, so they are
session-scoped and reused by the unit, integration and acceptance tests."""

import time

import numpy as np
import pytest

from vdd_robust.corpus import gen_corpus
from vdd_robust.evaluation import SplitSpec, evaluate
from vdd_robust.training import quick_config, train_detector


@pytest.fixture(scope="session")
def corpus200(tmp_path_factory):
    """Balanced 100+100 synthetic corpus at 25 kHz, fixed seed."""
    out = tmp_path_factory.mktemp("corpus200")
    return gen_corpus(100, 100, seed=7, out_dir=out)


@pytest.fixture(scope="session")
def cnn_detector200(corpus200):
    """MelSpec CNN on the 1 s / 900 ms preset, trained on corpus200.

    Shared by the clean-quality and white-box acceptance criteria; the
    recorded wall time covers the full single-threaded train + test path.
    """
    t0 = time.perf_counter()
    cfg = quick_config("mel", "cnn", epochs=4, seed=0)
    result = train_detector(corpus200, cfg, SplitSpec(seed=0))
    test_paths = set(result.split_record["test"])
    entries = [e for e in corpus200.entries if str(e.path) in test_paths]
    report = evaluate(result.detector, entries)
    elapsed = time.perf_counter() - t0
    return {
        "detector": result.detector,
        "test_entries": entries,
        "report": report,
        "seconds": elapsed,
    }


@pytest.fixture(scope="session")
def corpus_small(tmp_path_factory):
    """Tiny 10+10 corpus for fast pipeline-level tests."""
    out = tmp_path_factory.mktemp("corpus_small")
    return gen_corpus(10, 10, seed=13, out_dir=out)


def measure_jitter_pct(samples: np.ndarray, rate: int,
                       fmin: float = 80.0, fmax: float = 300.0) -> float:
    """Independent jitter estimate: spread of frame-level period estimates.

    Periods come from FFT autocorrelation per 40 ms frame with parabolic
    peak interpolation; jitter is the relative standard deviation (%) of
    those estimates. Used as an oracle against the synthesis parameters.
    """
    frame = int(0.04 * rate)
    hop = frame // 2
    lag_min = int(rate / fmax)
    lag_max = int(rate / fmin)
    periods = []
    for start in range(0, len(samples) - frame, hop):
        w = samples[start : start + frame]
        w = w - w.mean()
        if np.sqrt(np.mean(w**2)) < 1e-4:
            continue
        spec = np.abs(np.fft.rfft(w, n=2 * frame)) ** 2
        ac = np.fft.irfft(spec)[: lag_max + 2]
        k = int(np.argmax(ac[lag_min : lag_max + 1])) + lag_min
        denom = ac[k - 1] - 2 * ac[k] + ac[k + 1]
        delta = 0.5 * (ac[k - 1] - ac[k + 1]) / denom if denom != 0 else 0.0
        periods.append(k + delta)
    periods = np.asarray(periods)
    if len(periods) < 2:
        return 0.0
    return 100.0 * float(np.std(periods) / np.mean(periods))
