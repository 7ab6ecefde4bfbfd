"""Scenario configuration files.

INI-style files with ``[scenario]``, ``[anomaly]``, ``[cell]``, ``[koopman]``,
``[detector]``, ``[kan]`` and ``[data]`` sections. Window and averaging spans
are given in seconds and converted to samples at the stream rate
``1 / (cell dt * downsample)``, so switching the rate keeps the spans.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .cell_model import AnomalyProfile, CellParams
from .detector import DetectorConfig
from .errors import ConfigError
from .kan import TrainConfig
from .koopman import EmbedConfig

PACKAGE_DIR = Path(__file__).resolve().parent
CONFIG_DIR = PACKAGE_DIR / "configs"
MODEL_DIR = PACKAGE_DIR / "models"
DEFAULT_MODEL = MODEL_DIR / "kan_default.json"

FULL_RATE_DOWNSAMPLE = 1
EXPECT = ("detect", "none")


@dataclass(frozen=True)
class KoopmanSpans:
    learn_s: float = 30.0
    predict_s: float = 5.0
    delay_s: float = 21.0
    rcond: float = 1e-8
    rank: Optional[int] = None
    embed_inputs: bool = False


@dataclass(frozen=True)
class DetectorSpans:
    threshold: Optional[float] = None  # None: calibrate on a nominal run
    safety_factor: float = 1.5
    avg_s: float = 30.0
    warmup: str = "full"
    hysteresis: float = 0.0


@dataclass(frozen=True)
class KanSettings:
    model: Optional[str] = None
    widths: tuple[int, ...] = (4, 3, 1)
    grid: int = 5
    kappa: int = 3
    learning_rate: float = 0.5
    epochs: int = 1500
    seed: int = 0
    stride: int = 20  # every stride-th row trains, the rows half a stride later validate

    def __post_init__(self):
        if self.widths[0] != 4 or self.widths[-1] != 1:
            raise ConfigError("estimator maps 4 features to one temperature")
        if self.stride < 2:
            raise ConfigError("stride must be >= 2 to leave validation rows")
        # validates learning_rate / epochs
        self.train_config()

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs, seed=self.seed)


@dataclass(frozen=True)
class DataSettings:
    c_rates: tuple[float, ...] = (0.5, 1.0, 2.0)
    ambients: tuple[float, ...] = (25.0, 35.0)
    duration: float = 1500.0
    seed: int = 100


@dataclass(frozen=True)
class Scenario:
    name: str
    c_rate: float = 1.0
    ambient: float = 25.0
    qc: float = 0.0
    duration: float = 1500.0
    seed: int = 1
    calibration_seed: int = 1001
    noise_sigma: float = 0.05
    soc_init: float = 0.1
    downsample: int = 10
    expect: str = "none"
    anomaly: AnomalyProfile = field(default_factory=AnomalyProfile)
    cell: CellParams = field(default_factory=CellParams)
    koopman: KoopmanSpans = field(default_factory=KoopmanSpans)
    detector: DetectorSpans = field(default_factory=DetectorSpans)
    kan: KanSettings = field(default_factory=KanSettings)
    data: DataSettings = field(default_factory=DataSettings)
    source: Optional[str] = None

    def __post_init__(self):
        if not self.name:
            raise ConfigError("scenario needs a name")
        if self.duration <= 0:
            raise ConfigError("duration must be > 0")
        if self.downsample < 1:
            raise ConfigError("downsample must be >= 1")
        if self.expect not in EXPECT:
            raise ConfigError(f"expect must be one of {EXPECT}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    @property
    def sample_period(self) -> float:
        return self.cell.dt * self.downsample

    def samples(self, seconds: float) -> int:
        n = seconds / self.sample_period
        k = int(round(n))
        if abs(n - k) > 1e-6 or k < 1:
            raise ConfigError(f"span {seconds} s is not a whole number of {self.sample_period} s samples")
        return k

    @property
    def charging_current(self) -> float:
        # charging lowers -dt*I/Cb only with negative current, see cell_model
        return -self.c_rate * self.cell.capacity_ah

    def embed_config(self) -> EmbedConfig:
        k = self.koopman
        return EmbedConfig(wl=self.samples(k.learn_s), wp=self.samples(k.predict_s),
                           d=self.samples(k.delay_s), rcond=k.rcond, rank=k.rank,
                           embed_inputs=k.embed_inputs)

    def detector_config(self, threshold: float) -> DetectorConfig:
        d = self.detector
        return DetectorConfig(threshold=threshold, avg_window=self.samples(d.avg_s),
                              warmup=d.warmup, hysteresis=d.hysteresis)

    @property
    def injection_t(self) -> Optional[float]:
        return None if self.anomaly.kind == "none" else self.anomaly.start

    @property
    def withdrawal_t(self) -> Optional[float]:
        if self.anomaly.kind == "none" or not math.isfinite(self.anomaly.stop):
            return None
        return self.anomaly.stop

    def model_path(self) -> Path:
        if self.kan.model is None:
            return DEFAULT_MODEL
        p = Path(self.kan.model)
        if not p.is_absolute() and self.source is not None:
            p = Path(self.source).parent / p
        return p

    def validate_streams(self) -> None:
        """Cross-field checks that must pass before anything is simulated."""
        emb = self.embed_config()
        self.detector_config(1.0)
        n = int(math.floor(self.duration / self.cell.dt + 1e-9)) // self.downsample + 1
        if n < emb.wl + emb.wp:
            raise ConfigError(f"duration gives {n} samples, fewer than one learn+predict cycle")
        if self.anomaly.kind != "none" and self.anomaly.start >= self.duration:
            raise ConfigError("anomaly starts after the run ends")


def full_rate(sc: Scenario) -> Scenario:
    """Full-rate profile: same spans in seconds, no downsampling."""
    return replace(sc, downsample=FULL_RATE_DOWNSAMPLE)


# ---------------------------------------------------------------- parsing

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _opt_float(text: str) -> Optional[float]:
    text = text.strip().lower()
    return None if text in ("", "auto", "none") else float(text)


def _opt_int(text: str) -> Optional[int]:
    text = text.strip().lower()
    return None if text in ("", "none") else int(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_SCENARIO_KEYS = {
    "name": str, "c_rate": float, "ambient": float, "qc": float, "duration": float,
    "seed": int, "calibration_seed": int, "noise_sigma": float, "soc_init": float,
    "downsample": int, "expect": str,
}
_ANOMALY_KEYS = {"kind": str, "start": float, "stop": float, "fault_slope": float, "bias": float}
_KOOPMAN_KEYS = {"learn_s": float, "predict_s": float, "delay_s": float, "rcond": float,
                 "rank": _opt_int, "embed_inputs": _bool}
_DETECTOR_KEYS = {"threshold": _opt_float, "safety_factor": float, "avg_s": float,
                  "warmup": str, "hysteresis": float}
_KAN_KEYS = {"model": str, "widths": _ints, "grid": int, "kappa": int, "learning_rate": float,
             "epochs": int, "seed": int, "stride": int}
_DATA_KEYS = {"c_rates": _floats, "ambients": _floats, "duration": float, "seed": int}
_CELL_KEYS = {f.name: float for f in fields(CellParams) if f.name != "ocv_table"}


def _section(cp: configparser.ConfigParser, name: str, schema: dict, path) -> dict:
    if not cp.has_section(name):
        return {}
    out = {}
    for key, raw in cp.items(name):
        if key not in schema:
            raise ConfigError(f"{path}: unknown key [{name}] {key}")
        try:
            out[key] = schema[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for [{name}] {key}: {raw!r}") from exc
    return out


def parse_config(text: str, source: Optional[str] = None) -> Scenario:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep cell parameter case (Rb, Cinf)
    try:
        cp.read_string(text, source=source or "<string>")
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config {source}: {exc}") from exc
    known = {"scenario", "anomaly", "cell", "koopman", "detector", "kan", "data"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"{source}: unknown sections {sorted(extra)}")
    if not cp.has_section("scenario"):
        raise ConfigError(f"{source}: missing [scenario] section")

    sc = _section(cp, "scenario", _SCENARIO_KEYS, source)
    if "name" not in sc:
        raise ConfigError(f"{source}: [scenario] name is required")
    anomaly = _section(cp, "anomaly", _ANOMALY_KEYS, source)
    cell = _section(cp, "cell", _CELL_KEYS, source)
    return Scenario(
        **sc,
        anomaly=AnomalyProfile(**anomaly),
        cell=CellParams(**cell),
        koopman=KoopmanSpans(**_section(cp, "koopman", _KOOPMAN_KEYS, source)),
        detector=DetectorSpans(**_section(cp, "detector", _DETECTOR_KEYS, source)),
        kan=KanSettings(**_section(cp, "kan", _KAN_KEYS, source)),
        data=DataSettings(**_section(cp, "data", _DATA_KEYS, source)),
        source=source,
    )


def resolve_config_path(name_or_path) -> Path:
    """A path, or the bare name of a shipped config (``case1``, ``case2``, ``nominal``)."""
    p = Path(name_or_path)
    if p.exists():
        return p
    shipped = CONFIG_DIR / (p.name if p.suffix == ".cfg" else p.name + ".cfg")
    if shipped.exists():
        return shipped
    raise ConfigError(f"config {name_or_path} not found")


def load_config(name_or_path) -> Scenario:
    path = resolve_config_path(name_or_path)
    with open(path) as fh:
        return parse_config(fh.read(), source=os.fspath(path))
