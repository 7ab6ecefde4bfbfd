"""End-to-end runs: data generation, estimator training, scenario detection."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cell_model import AnomalyProfile, SimScenario, Trajectory, simulate
from .config import Scenario
from .detector import (DetectionReport, calibrate_threshold, compare, metrics, run_detector,
                       write_reports_csv)
from .errors import ConfigError, ModelMissingError
from .kan import (FEATURES, KanNetwork, features_of, forward, init_network, load_model,
                  rmse, save_model, train)
from .koopman import SlidingResult, run_sliding

log = logging.getLogger(__name__)

VARIANTS = ("proposed", "baseline")
DATA_COLUMNS = ("t2_meas", "tinf_meas", "current", "qc", "t1_true")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSED = 2
EXIT_FALSE_ALARM = 3


# ---------------------------------------------------------------- simulation

def sim_scenario(sc: Scenario, seed: Optional[int] = None, nominal: bool = False,
                 c_rate: Optional[float] = None, ambient: Optional[float] = None,
                 duration: Optional[float] = None) -> SimScenario:
    rate = sc.c_rate if c_rate is None else c_rate
    return SimScenario(
        duration=sc.duration if duration is None else duration,
        current=-rate * sc.cell.capacity_ah,
        qc=sc.qc,
        profile=AnomalyProfile() if nominal else sc.anomaly,
        noise_sigma=sc.noise_sigma,
        seed=sc.seed if seed is None else seed,
        t_init=sc.ambient if ambient is None else ambient,
        soc_init=sc.soc_init,
    )


def simulate_stream(sc: Scenario, seed: Optional[int] = None, nominal: bool = False) -> Trajectory:
    """Simulate at the cell rate and return the detector-rate stream."""
    return simulate(sim_scenario(sc, seed, nominal), sc.cell).downsample(sc.downsample)


# ---------------------------------------------------------------- training data

def generate_training_data(sc: Scenario, out_dir, seed: Optional[int] = None) -> list[Path]:
    """One nominal run per (C-rate, ambient) pair; noisy features, true core target."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = sc.data.seed if seed is None else seed
    paths = []
    k = 0
    for rate in sc.data.c_rates:
        for amb in sc.data.ambients:
            traj = simulate(sim_scenario(sc, seed=base + k, nominal=True, c_rate=rate, ambient=amb,
                                         duration=sc.data.duration), sc.cell).downsample(sc.downsample)
            path = out_dir / f"train_c{rate:g}_amb{amb:g}.csv"
            write_dataset(path, features_of(traj), traj.t1_true)
            paths.append(path)
            k += 1
    return paths


def write_dataset(path, features: np.ndarray, target: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATA_COLUMNS)
        for row, y in zip(features, target):
            w.writerow([f"{v:.6f}" for v in row] + [f"{y:.6f}"])


def read_dataset(paths: Sequence) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for p in paths:
        with open(p) as fh:
            header = fh.readline().strip().split(",")
        if tuple(header) != DATA_COLUMNS:
            raise ConfigError(f"{p}: expected columns {DATA_COLUMNS}, got {tuple(header)}")
        arr = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
        xs.append(arr[:, :4])
        ys.append(arr[:, 4])
    if not xs:
        raise ConfigError("no dataset files given")
    return np.vstack(xs), np.concatenate(ys)


def dataset_files(path_or_dir) -> list[Path]:
    p = Path(path_or_dir)
    files = sorted(p.glob("*.csv")) if p.is_dir() else [p]
    if not files or not all(f.exists() for f in files):
        raise ConfigError(f"no dataset CSV files at {p}")
    return files


def split_rows(n: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Interleaved, disjoint train / validation row indices."""
    idx = np.arange(n)
    return idx[idx % stride == 0], idx[idx % stride == stride // 2]


@dataclass
class TrainResult:
    net: KanNetwork
    history: np.ndarray
    train_rmse: float
    holdout_rmse: float


def train_estimator(sc: Scenario, features: np.ndarray, target: np.ndarray) -> TrainResult:
    k = sc.kan
    tr, va = split_rows(len(features), k.stride)
    net0 = init_network(k.widths, k.grid, k.kappa, seed=k.seed)
    net, hist = train(net0, features[tr], target[tr], k.train_config())
    return TrainResult(net, hist, rmse(net, features[tr], target[tr]), rmse(net, features[va], target[va]))


def save_training(result: TrainResult, sc: Scenario, model_path, history_path, sources=()) -> None:
    meta = {
        "train_rmse": result.train_rmse,
        "holdout_rmse": result.holdout_rmse,
        "epochs": sc.kan.epochs,
        "learning_rate": sc.kan.learning_rate,
        "seed": sc.kan.seed,
        "stride": sc.kan.stride,
        "sources": [Path(s).name for s in sources],
    }
    save_model(result.net, model_path, extra=meta)
    with open(history_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(result.history):
            w.writerow([i, repr(float(v))])


# ---------------------------------------------------------------- detection

def resolve_model(sc: Scenario, variants: Sequence[str], model_path=None) -> Optional[KanNetwork]:
    """Load the estimator when a variant needs it; fail before any simulation."""
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}, expected one of {VARIANTS}")
    if "proposed" not in variants:
        return None
    path = Path(model_path) if model_path is not None else sc.model_path()
    if not path.exists():
        raise ModelMissingError(f"estimator model {path} not found; run train-kan first")
    net = load_model(path)
    if net.widths[0] != len(FEATURES):
        raise ConfigError(f"model takes {net.widths[0]} features, pipeline supplies {len(FEATURES)}")
    return net


def variant_streams(traj: Trajectory, variant: str, net: Optional[KanNetwork]):
    """``(y, u, core_estimate)``; the baseline never touches the estimator."""
    u = np.column_stack([traj.current_nominal, traj.tinf_meas])
    if variant == "baseline":
        return traj.t2_meas[:, None], u, None
    if net is None:
        raise ModelMissingError("proposed variant needs an estimator model")
    est = forward(net, features_of(traj))
    return np.column_stack([est, traj.t2_meas]), u, est


@dataclass
class VariantRun:
    variant: str
    sliding: SlidingResult
    core_estimate: Optional[np.ndarray]
    averages: np.ndarray
    flags: np.ndarray
    report: DetectionReport


def residuals_for(traj: Trajectory, sc: Scenario, variant: str, net) -> tuple[SlidingResult, Optional[np.ndarray]]:
    y, u, est = variant_streams(traj, variant, net)
    return run_sliding(y, u, sc.embed_config()), est


def calibrate(sc: Scenario, net, variants: Sequence[str] = VARIANTS,
              seed: Optional[int] = None) -> dict[str, float]:
    """Per-variant threshold from a nominal run on the calibration seed."""
    traj = simulate_stream(sc, seed=sc.calibration_seed if seed is None else seed, nominal=True)
    out = {}
    for v in variants:
        res, _ = residuals_for(traj, sc, v, net)
        out[v] = calibrate_threshold(res.residuals, sc.detector.safety_factor,
                                     sc.samples(sc.detector.avg_s), sc.detector.warmup)
    return out


def thresholds_for(sc: Scenario, net, variants: Sequence[str]) -> dict[str, float]:
    if sc.detector.threshold is not None:
        return {v: sc.detector.threshold for v in variants}
    return calibrate(sc, net, variants)


def detect(traj: Trajectory, sc: Scenario, variant: str, net, threshold: float) -> VariantRun:
    res, est = residuals_for(traj, sc, variant, net)
    avgs, flags = run_detector(res.residuals, sc.detector_config(threshold))
    rep = metrics(flags, traj.t, sc.name, variant, threshold, sc.injection_t, sc.withdrawal_t)
    return VariantRun(variant, res, est, avgs, flags, rep)


@dataclass
class ScenarioRun:
    scenario: Scenario
    trajectory: Trajectory
    runs: dict
    thresholds: dict

    @property
    def reports(self) -> dict[str, DetectionReport]:
        return {v: r.report for v, r in self.runs.items()}


def run_scenario(sc: Scenario, variants: Sequence[str] = VARIANTS, model_path=None,
                 net: Optional[KanNetwork] = None, thresholds: Optional[dict] = None) -> ScenarioRun:
    """Simulate once and run every variant over the identical measurement stream."""
    sc.validate_streams()
    if net is None:
        net = resolve_model(sc, variants, model_path)
    else:
        resolve_model(sc, [v for v in variants if v != "proposed"])
    thr = dict(thresholds) if thresholds else thresholds_for(sc, net, variants)
    traj = simulate_stream(sc)
    runs = {v: detect(traj, sc, v, net, thr[v]) for v in variants}
    return ScenarioRun(sc, traj, runs, thr)


def exit_code(sc: Scenario, reports: dict) -> int:
    if any(r.false_alarms for r in reports.values()):
        return EXIT_FALSE_ALARM
    if sc.expect == "detect" and any(r.detection_t is None for r in reports.values()):
        return EXIT_MISSED
    return EXIT_OK


# ---------------------------------------------------------------- outputs

def _f(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"


TRACE_COLUMNS = ("t", "t1_true", "t1_est", "t2_meas", "tinf_meas", "current_nominal",
                 "current_effective", "delta1bar", "delta2", "residual", "avg_residual",
                 "threshold", "flag")


def write_trace(path, traj: Trajectory, run: VariantRun) -> None:
    """One row per sample with everything the figure panels need."""
    est = run.core_estimate
    thr = run.report.threshold
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k in range(len(traj)):
            w.writerow([
                _f(traj.t[k]), _f(traj.t1_true[k]), "" if est is None else _f(est[k]),
                _f(traj.t2_meas[k]), _f(traj.tinf_meas[k]), _f(traj.current_nominal[k]),
                _f(traj.current_effective[k]), _f(traj.delta1bar[k]), _f(traj.delta2[k]),
                _f(run.sliding.residuals[k]), _f(run.averages[k]), _f(thr), int(run.flags[k]),
            ])


def write_report_json(path, report: DetectionReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_report_json(path) -> DetectionReport:
    with open(path) as fh:
        return DetectionReport.from_dict(json.load(fh))


def write_outputs(result: ScenarioRun, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj = result.trajectory
    written = [out / "trajectory.csv"]
    traj.to_csv(written[0])
    for v, run in result.runs.items():
        p_trace, p_res, p_rep = out / f"trace_{v}.csv", out / f"residuals_{v}.csv", out / f"report_{v}.json"
        write_trace(p_trace, traj, run)
        run.sliding.to_csv(p_res, traj.t)
        write_report_json(p_rep, run.report)
        written += [p_trace, p_res, p_rep]
    write_reports_csv(out / "report.csv", list(result.reports.values()))
    written.append(out / "report.csv")
    return written


def comparison_table(proposed: DetectionReport, baseline: DetectionReport) -> tuple[str, list]:
    cmp = compare(proposed, baseline)
    rows = [("metric", "proposed_s", "baseline_s", "result")]
    rows.append(("detection", _f(cmp.delay_a), _f(cmp.delay_b), cmp.rows()[0][1]))
    rows.append(("recovery", _f(cmp.recovery_a), _f(cmp.recovery_b), cmp.rows()[1][1]))
    text = "\n".join(f"{r[0]:<10} {r[1]:>12} {r[2]:>12}  {r[3]}" for r in rows)
    return f"scenario {cmp.scenario}\n{text}\n", rows
