import math

import numpy as np
import pytest

import ppgauth


def tone(freq, fs, n, phase=0.0):
    t = np.arange(n) / fs
    return np.sin(2 * np.pi * freq * t + phase)


def test_segment_count_matches_enumeration():
    assert ppgauth.segment_count(4900, 350, 175) == 27
    for length, window, hop in [(1000, 100, 30), (350, 350, 175), (351, 350, 1)]:
        assert ppgauth.segment_count(length, window, hop) == len(range(0, length - window + 1, hop))


def test_preprocess_shapes_and_range():
    raw = ppgauth.generate_subject(heart_rate_hz=1.1, duration_s=70.0, fs=14.0, seed=3)
    assert raw.shape == (980,)
    y, fs = ppgauth.preprocess(raw, 14.0)
    assert fs == 70.0
    assert y.shape == (4900,)
    assert y.min() == 0.0 and y.max() == 1.0
    names = [name for name, _, _ in ppgauth.preprocess_stages(raw, 14.0)]
    assert names == ["raw", "detrended", "artifact_suppressed", "bandpassed", "resampled", "normalized"]


def test_resample_reproduces_tone():
    y = ppgauth.resample(tone(2.0, 14.0, 980), 14.0, 5)
    ref = tone(2.0, 70.0, 4900)
    assert np.max(np.abs(y[350:-350] - ref[350:-350])) < 1e-6


def test_segment_and_scalogram():
    x = tone(1.5, 70.0, 4900)
    segs = ppgauth.segment(x, 70.0)
    assert len(segs) == 27 and all(s.shape == (350,) for s in segs)
    img, freqs, times = ppgauth.scalogram(segs[3], 70.0, 64, 64)
    assert img.shape == (64, 64) and img.dtype == np.float32
    assert 0.0 <= img.min() and img.max() <= 1.0
    assert freqs[0] > freqs[-1]
    peak = freqs[np.argmax(img.sum(axis=1))]
    assert abs(math.log(peak / 1.5)) < 0.1
    assert times.shape == (64,)


def test_identify_and_calibration():
    rng = np.random.default_rng(0)
    gallery = [(f"s{i}", rng.normal(size=16).tolist()) for i in range(5)]
    query = np.array(gallery[2][1]) * 4.0
    d = ppgauth.identify(query, gallery, 0.9)
    assert d["best_index"] == 2 and d["accepted"] and d["subject_id"] == "s2"
    assert ppgauth.cosine_similarity(query, np.array(gallery[2][1])) == pytest.approx(1.0)
    tmpl = ppgauth.enroll([[1.0, 2.0], [3.0, 4.0]])
    assert tmpl.tolist() == [2.0, 3.0]

    c = ppgauth.calibrate_threshold(np.full(10, 0.9), np.full(10, 0.1))
    assert c["eer"] == 0.0 and 0.1 < c["threshold"] <= 0.9


def test_metrics():
    m = ppgauth.confusion_metrics(95, 93, 7, 5)
    assert m["accuracy"] == pytest.approx(0.94)
    assert m["sensitivity"] == pytest.approx(0.95)
    assert m["specificity"] == pytest.approx(0.93)
    rng = np.random.default_rng(1)
    g, i = rng.normal(1.0, 1.0, 200), rng.normal(0.0, 1.0, 200)
    pairwise = np.mean((g[:, None] > i[None, :]) + 0.5 * (g[:, None] == i[None, :]))
    assert ppgauth.auc(g, i) == pytest.approx(pairwise, abs=1e-9)
    fpr, tpr, _ = ppgauth.roc(g, i)
    assert fpr[0] == 0.0 and tpr[-1] == 1.0


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        ppgauth.cosine_similarity(np.zeros(3), np.ones(3))
    with pytest.raises(ppgauth.InvalidArgument):
        ppgauth.segment_count(10, 0, 1)
    assert issubclass(ppgauth.InvalidArgument, ppgauth.Error)
    with pytest.raises(ppgauth.UndefinedMetric):
        ppgauth.confusion_metrics(0, 0, 0, 0)
    with pytest.raises(ppgauth.Error):
        ppgauth.confusion_metrics(0, 0, 0, 0)


def test_small_pipeline(tmp_path):
    r = ppgauth.run_pipeline(tmp_path / "run", subjects=3, epochs=2, input_size=32, ablation=False)
    assert r["num_classes"] == 3
    assert 0.0 <= r["auc"] <= 1.0
    assert r["lstm_only_accuracy"] is None
    assert (tmp_path / "run" / "metrics.json").exists()
