"""Moving-average threshold detection on residual streams and detection metrics."""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from .errors import CalibrationError, ComparisonError, ConfigError

DEFAULT_THRESHOLD = 0.03

WARMUP_MODES = ("full", "prefix")


@dataclass(frozen=True)
class DetectorConfig:
    """``warmup='full'`` keeps the flag down (and the average undefined) until
    ``avg_window`` residuals have accumulated; ``'prefix'`` averages whatever
    prefix exists. ``hysteresis`` > 0 resets the flag only below
    ``threshold - hysteresis``.
    """

    threshold: float = DEFAULT_THRESHOLD
    avg_window: int = 300
    warmup: str = "full"
    hysteresis: float = 0.0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ConfigError("threshold must be > 0")
        if self.avg_window < 1:
            raise ConfigError("avg_window must be >= 1")
        if self.warmup not in WARMUP_MODES:
            raise ConfigError(f"warmup must be one of {WARMUP_MODES}")
        if self.hysteresis < 0:
            raise ConfigError("hysteresis must be >= 0")


class Detector:
    """Streaming accumulator: feed residuals (``None``/NaN for warm-up) one by one."""

    def __init__(self, config: DetectorConfig):
        self.config = config
        self._buf: deque = deque(maxlen=config.avg_window)
        self._sum = 0.0
        self._count = 0
        self.flag = False

    def update(self, r_k) -> tuple[Optional[float], bool]:
        if r_k is None or (isinstance(r_k, float) and math.isnan(r_k)):
            return None, False
        if len(self._buf) == self._buf.maxlen:
            self._sum -= self._buf[0]
        self._buf.append(float(r_k))
        self._sum += float(r_k)
        self._count += 1
        if self._count % 4096 == 0:
            # re-sum to stop drift in the running total
            self._sum = float(sum(self._buf))
        if self.config.warmup == "full" and len(self._buf) < self.config.avg_window:
            return None, False
        avg = self._sum / len(self._buf)
        thr = self.config.threshold
        if self.flag and self.config.hysteresis > 0:
            self.flag = avg >= thr - self.config.hysteresis
        else:
            self.flag = avg >= thr
        return avg, self.flag


def moving_average(residuals, avg_window: int, warmup: str = "full") -> np.ndarray:
    """Vectorised sliding mean over defined (non-NaN) residuals; NaN where undefined."""
    r = np.asarray(residuals, dtype=float)
    out = np.full(r.shape, np.nan)
    idx = np.flatnonzero(~np.isnan(r))
    if idx.size == 0:
        return out
    cs = np.concatenate([[0.0], np.cumsum(r[idx])])
    j = np.arange(idx.size)
    lo = np.maximum(0, j + 1 - avg_window)
    means = (cs[j + 1] - cs[lo]) / (j + 1 - lo)
    if warmup == "full":
        ok = j + 1 >= avg_window
        out[idx[ok]] = means[ok]
    else:
        out[idx] = means
    return out


def run_detector(residuals, config: DetectorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Batch form of ``Detector``: returns ``(averages, flags)``."""
    det = Detector(config)
    avgs = np.full(len(residuals), np.nan)
    flags = np.zeros(len(residuals), dtype=bool)
    for k, r in enumerate(residuals):
        a, f = det.update(None if np.isnan(r) else float(r))
        if a is not None:
            avgs[k] = a
        flags[k] = f
    return avgs, flags


def calibrate_threshold(nominal_residuals, safety_factor: float = 1.5, avg_window: int = 300,
                        warmup: str = "full") -> float:
    """``safety_factor`` times the largest moving average of a nominal residual run."""
    if safety_factor < 1:
        raise CalibrationError("safety_factor must be >= 1")
    avgs = moving_average(nominal_residuals, avg_window, warmup)
    if np.all(np.isnan(avgs)):
        raise CalibrationError("no post-warm-up nominal residuals to calibrate on")
    return float(safety_factor * np.nanmax(avgs))


@dataclass
class DetectionReport:
    scenario: str
    variant: str
    threshold: float
    injection_t: Optional[float]
    withdrawal_t: Optional[float]
    detection_t: Optional[float]
    recovery_t: Optional[float]
    false_alarms: int
    rises: list = field(default_factory=list)
    falls: list = field(default_factory=list)

    @property
    def delay(self) -> Optional[float]:
        if self.detection_t is None or self.injection_t is None:
            return None
        return self.detection_t - self.injection_t

    @property
    def recovery_delay(self) -> Optional[float]:
        if self.recovery_t is None or self.withdrawal_t is None:
            return None
        return self.recovery_t - self.withdrawal_t

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionReport":
        return cls(**d)

    def csv_row(self) -> list[str]:
        return [self.scenario, self.variant, _fmt(self.injection_t), _fmt(self.detection_t),
                _fmt(self.delay), _fmt(self.recovery_t), str(self.false_alarms), f"{self.threshold:.6f}"]

    def summary(self) -> str:
        parts = [f"[{self.scenario}/{self.variant}] threshold={self.threshold:.4f}"]
        if self.injection_t is None:
            parts.append("nominal run")
        elif self.detection_t is None:
            parts.append(f"injection {self.injection_t:g}s: not detected")
        else:
            parts.append(f"injection {self.injection_t:g}s: detected at {self.detection_t:.1f}s "
                         f"(delay {self.delay:.1f}s)")
        if self.withdrawal_t is not None and math.isfinite(self.withdrawal_t):
            rec = "none" if self.recovery_t is None else f"{self.recovery_t:.1f}s"
            parts.append(f"recovery {rec}")
        parts.append(f"false alarms {self.false_alarms}")
        return ", ".join(parts)


REPORT_HEADER = ["scenario", "variant", "injection_t", "detection_t", "delay", "recovery_t",
                 "false_alarms", "threshold"]


def _fmt(v) -> str:
    return "" if v is None else f"{v:.3f}"


def metrics(flags, t, scenario: str = "", variant: str = "", threshold: float = float("nan"),
            injection_t: Optional[float] = None, withdrawal_t: Optional[float] = None) -> DetectionReport:
    """Detection/recovery times and false alarms from a flag series.

    A rise is a False->True transition (the series starts low). Rises strictly
    before injection are false alarms; detection is the first rise at or after
    injection; recovery is the first fall after withdrawal (and after detection).
    """
    flags = np.asarray(flags, dtype=bool)
    t = np.asarray(t, dtype=float)
    prev = np.concatenate([[False], flags[:-1]])
    rises = t[flags & ~prev]
    falls = t[~flags & prev]

    if injection_t is None:
        false_alarms = int(rises.size)
        detection = None
    else:
        false_alarms = int(np.sum(rises < injection_t))
        after = rises[rises >= injection_t]
        detection = float(after[0]) if after.size else None

    recovery = None
    if withdrawal_t is not None and math.isfinite(withdrawal_t):
        lower = withdrawal_t if detection is None else max(withdrawal_t, detection)
        cand = falls[falls > lower]
        recovery = float(cand[0]) if cand.size else None

    return DetectionReport(scenario, variant, float(threshold), injection_t,
                           withdrawal_t if withdrawal_t is None or math.isfinite(withdrawal_t) else None,
                           detection, recovery, false_alarms,
                           [float(x) for x in rises], [float(x) for x in falls])


@dataclass
class Comparison:
    scenario: str
    delay_a: Optional[float]
    delay_b: Optional[float]
    recovery_a: Optional[float]
    recovery_b: Optional[float]
    detection_improvement: Optional[float]
    recovery_improvement: Optional[float]
    note: str = ""

    def rows(self) -> list[tuple[str, str]]:
        def pct(v):
            return "n/a" if v is None else f"{100 * v:.0f}% faster"
        det = self.note if self.note else pct(self.detection_improvement)
        return [("detection", det), ("recovery", pct(self.recovery_improvement))]


def _improvement(a, b):
    if a is None or b is None:
        return None
    if b == 0:
        return 0.0 if a == 0 else None
    return (b - a) / b


def compare(report_a: DetectionReport, report_b: DetectionReport) -> Comparison:
    """Relative speed-up of ``a`` over ``b``: ``(delay_b - delay_a) / delay_b``."""
    if (report_a.scenario != report_b.scenario or report_a.injection_t != report_b.injection_t
            or report_a.withdrawal_t != report_b.withdrawal_t):
        raise ComparisonError("reports come from different scenario timelines")
    note = ""
    if report_a.delay is not None and report_b.delay is None:
        note = "baseline missed"
    elif report_a.delay is None and report_b.delay is not None:
        note = "proposed missed"
    elif report_a.delay is None and report_b.delay is None and report_a.injection_t is not None:
        note = "both missed"
    return Comparison(
        report_a.scenario, report_a.delay, report_b.delay,
        report_a.recovery_delay, report_b.recovery_delay,
        _improvement(report_a.delay, report_b.delay),
        _improvement(report_a.recovery_delay, report_b.recovery_delay),
        note,
    )


def write_reports_csv(path, reports: Sequence[DetectionReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for rep in reports:
            w.writerow(rep.csv_row())
