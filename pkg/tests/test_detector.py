import numpy as np
import pytest

from kan_koopman.detector import (DEFAULT_THRESHOLD, REPORT_HEADER, DetectionReport, Detector,
                                  DetectorConfig, calibrate_threshold, compare, metrics,
                                  moving_average, run_detector, write_reports_csv)
from kan_koopman.errors import CalibrationError, ComparisonError, ConfigError


def test_default_threshold():
    assert DEFAULT_THRESHOLD == 0.03
    assert DetectorConfig().threshold == 0.03


def test_config_validation():
    with pytest.raises(ConfigError):
        DetectorConfig(threshold=0.0)
    with pytest.raises(ConfigError):
        DetectorConfig(avg_window=0)
    with pytest.raises(ConfigError):
        DetectorConfig(warmup="sometimes")


def test_zero_residuals_never_flag():
    avgs, flags = run_detector(np.zeros(500), DetectorConfig(avg_window=20))
    assert not flags.any()


@pytest.mark.parametrize("warmup", ["full", "prefix"])
def test_constant_residual_flags_from_first_average(warmup):
    cfg = DetectorConfig(threshold=0.03, avg_window=10, warmup=warmup)
    det = Detector(cfg)
    out = [det.update(0.05) for _ in range(30)]
    first = next(i for i, (a, _) in enumerate(out) if a is not None)
    assert first == (9 if warmup == "full" else 0)
    assert all(f for a, f in out[first:])
    assert out[first][0] == pytest.approx(0.05)


def test_warmup_markers_pass_through():
    det = Detector(DetectorConfig(avg_window=3, warmup="prefix"))
    assert det.update(None) == (None, False)
    assert det.update(float("nan")) == (None, False)


def test_streaming_matches_vectorised(rng):
    r = np.concatenate([np.full(40, np.nan), rng.uniform(0, 0.1, 9000)])
    for warmup in ("full", "prefix"):
        avgs, _ = run_detector(r, DetectorConfig(avg_window=37, warmup=warmup))
        np.testing.assert_allclose(avgs, moving_average(r, 37, warmup), rtol=1e-10, equal_nan=True)


def test_hysteresis_holds_flag():
    r = np.array([0.05] * 5 + [0.028] * 5 + [0.01] * 5)
    _, plain = run_detector(r, DetectorConfig(threshold=0.03, avg_window=1))
    _, hyst = run_detector(r, DetectorConfig(threshold=0.03, avg_window=1, hysteresis=0.005))
    assert not plain[6] and hyst[6]
    assert not hyst[-1]


def test_calibration_arithmetic():
    r = np.full(100, 0.02)
    assert calibrate_threshold(r, 1.5, avg_window=10) == pytest.approx(0.03)
    assert calibrate_threshold(r, 1.0, avg_window=10) == pytest.approx(0.02)


def test_calibration_errors():
    with pytest.raises(CalibrationError):
        calibrate_threshold(np.full(10, np.nan), 1.5, avg_window=3)
    with pytest.raises(CalibrationError):
        calibrate_threshold(np.ones(10), 0.5, avg_window=3)


def test_calibrated_threshold_no_false_alarms_on_fresh_noise():
    calib = np.abs(np.random.default_rng(1).normal(0.02, 0.01, 5000))
    fresh = np.abs(np.random.default_rng(2).normal(0.02, 0.01, 5000))
    thr = calibrate_threshold(calib, 1.5, avg_window=100)
    _, flags = run_detector(fresh, DetectorConfig(threshold=thr, avg_window=100))
    assert not flags.any()


def _flags_at(t, rise, fall=None):
    f = t >= rise
    if fall is not None:
        f &= t < fall
    return f


def test_detection_delay():
    t = np.arange(0, 1500, 1.0)
    rep = metrics(_flags_at(t, 708), t, "c2", "proposed", 0.03, 700.0, 1200.0)
    assert rep.detection_t == 708.0
    assert rep.delay == pytest.approx(8.0)
    assert rep.false_alarms == 0


def test_never_flagged():
    t = np.arange(100.0)
    rep = metrics(np.zeros(100, bool), t, injection_t=50.0)
    assert rep.detection_t is None and rep.delay is None


def test_early_rise_is_false_alarm():
    t = np.arange(0, 1000, 1.0)
    flags = _flags_at(t, 650, 660) | _flags_at(t, 720)
    rep = metrics(flags, t, injection_t=700.0)
    assert rep.false_alarms == 1
    assert rep.detection_t == 720.0


def test_flag_held_across_injection_counts_false_alarm():
    t = np.arange(0, 1000, 1.0)
    flags = _flags_at(t, 650, 750) | _flags_at(t, 800)
    rep = metrics(flags, t, injection_t=700.0)
    assert rep.false_alarms == 1
    assert rep.detection_t == 800.0


def test_recovery_after_withdrawal():
    t = np.arange(0, 1500, 1.0)
    rep = metrics(_flags_at(t, 708, 1239), t, injection_t=700.0, withdrawal_t=1200.0)
    assert rep.recovery_t == 1239.0
    assert rep.recovery_delay == pytest.approx(39.0)
    assert rep.recovery_t > rep.detection_t


def _report(det, rec=None, scenario="s"):
    return DetectionReport(scenario, "x", 0.03, 700.0, 1200.0, det, rec, 0)


def test_compare_sixty_percent():
    c = compare(_report(708.0), _report(720.0))
    assert c.detection_improvement == pytest.approx(0.6)
    assert c.rows()[0][1] == "60% faster"


def test_compare_identical():
    c = compare(_report(708.0, 1239.0), _report(708.0, 1239.0))
    assert c.detection_improvement == 0.0 and c.recovery_improvement == 0.0


def test_compare_baseline_missed():
    c = compare(_report(708.0), _report(None))
    assert c.note == "baseline missed"
    assert c.rows()[0][1] == "baseline missed"


def test_compare_mismatched_timelines():
    with pytest.raises(ComparisonError):
        compare(_report(708.0, scenario="a"), _report(708.0, scenario="b"))


def test_report_round_trip_and_csv(tmp_path):
    rep = _report(708.0, 1239.0)
    assert DetectionReport.from_dict(rep.to_dict()) == rep
    p = tmp_path / "r.csv"
    write_reports_csv(p, [rep])
    lines = p.read_text().splitlines()
    assert lines[0].split(",") == REPORT_HEADER
    assert lines[1] == "s,x,700.000,708.000,8.000,1239.000,0,0.030000"
    assert "detected at 708.0s" in rep.summary()
