"""Sliding-window Koopman identification over delay-embedded outputs.

The lifted state stacks the last ``d`` output samples (oldest first). Inputs
enter through ``B`` only unless ``embed_inputs`` is set, in which case the
last ``d`` inputs are stacked under the outputs as well.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateDataError, FitError, NumericalError, ShapeError


@dataclass(frozen=True)
class EmbedConfig:
    wl: int = 300
    wp: int = 50
    d: int = 210
    rcond: float = 1e-8
    rank: Optional[int] = None
    embed_inputs: bool = False

    def __post_init__(self):
        if self.wp < 1:
            raise ConfigError("wp must be >= 1")
        if not 1 <= self.d < self.wl:
            raise ConfigError("need 1 <= d < wl")
        if self.rcond <= 0:
            raise ConfigError("rcond must be > 0")
        if self.rank is not None and self.rank < 1:
            raise ConfigError("rank must be >= 1 when given")


@dataclass
class WindowBatch:
    xb: np.ndarray
    xs: np.ndarray
    ub: np.ndarray
    yb: np.ndarray

    @property
    def n_cols(self) -> int:
        return self.xb.shape[1]


@dataclass
class KoopmanModel:
    a_mat: np.ndarray
    b_mat: np.ndarray
    c_mat: np.ndarray
    config: EmbedConfig
    fit_diagnostics: dict = field(default_factory=dict)

    @property
    def dim_z(self) -> int:
        return self.a_mat.shape[0]


def _as_2d(seq) -> np.ndarray:
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeError(f"expected (samples, channels) data, got shape {arr.shape}")
    return arr


def embed(history, config: EmbedConfig, u_history=None) -> np.ndarray:
    """Stack ``d`` samples (oldest first) into a lifted state vector."""
    y = _as_2d(history)
    if y.shape[0] != config.d:
        raise ShapeError(f"embedding needs exactly d={config.d} samples, got {y.shape[0]}")
    z = y.reshape(-1)
    if config.embed_inputs:
        if u_history is None:
            raise ShapeError("embed_inputs requires the input history")
        u = _as_2d(u_history)
        if u.shape[0] != config.d:
            raise ShapeError("input history length must equal d")
        z = np.concatenate([z, u.reshape(-1)])
    return z


def _hankel(data: np.ndarray, d: int, first_end: int, n_cols: int) -> np.ndarray:
    # column j holds data[first_end + j - d + 1 : first_end + j + 1] flattened
    windows = np.lib.stride_tricks.sliding_window_view(data, d, axis=0)
    # windows[i] has shape (channels, d) covering data[i:i+d]
    start = first_end - d + 1
    block = windows[start:start + n_cols]
    return block.transpose(0, 2, 1).reshape(n_cols, -1).T.copy()


def build_matrices(y_window, u_window, config: EmbedConfig) -> WindowBatch:
    """Hankel, shifted Hankel, input and output matrices for one learning window.

    Columns are indexed by t = d-1 .. wl-2 (zero-based), so column count is
    ``wl - d``; ``xs`` columns end one sample later and reach the last sample.
    """
    y = _as_2d(y_window)
    u = _as_2d(u_window)
    wl, d = config.wl, config.d
    if y.shape[0] != wl or u.shape[0] != wl:
        raise ShapeError(f"window must hold wl={wl} samples, got {y.shape[0]} / {u.shape[0]}")
    n_cols = wl - d
    xb = _hankel(y, d, d - 1, n_cols)
    xs = _hankel(y, d, d, n_cols)
    if config.embed_inputs:
        xb = np.vstack([xb, _hankel(u, d, d - 1, n_cols)])
        xs = np.vstack([xs, _hankel(u, d, d, n_cols)])
    ub = u[d - 1:d - 1 + n_cols].T.copy()
    yb = y[d - 1:d - 1 + n_cols].T.copy()
    return WindowBatch(xb=xb, xs=xs, ub=ub, yb=yb)


def pinv_svd(mat: np.ndarray, rcond: float, rank: Optional[int] = None) -> np.ndarray:
    """Pseudoinverse with a relative singular-value cutoff and optional rank cap."""
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise DegenerateDataError("data matrix is identically zero")
    keep = s > rcond * s[0]
    if rank is not None:
        keep[rank:] = False
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (vt.T * s_inv) @ u.T


def fit(batch: WindowBatch, config: EmbedConfig) -> KoopmanModel:
    """Least-squares ``[A B]`` from the shifted Hankel matrix and ``C`` from outputs."""
    if batch.n_cols < 2:
        raise ShapeError("need at least two columns to fit")
    if not np.any(batch.xb) or not np.any(batch.xs):
        raise DegenerateDataError("all-zero data matrix")
    ups = np.vstack([batch.xb, batch.ub])
    lam = batch.xs @ pinv_svd(ups, config.rcond, config.rank)
    nz = batch.xb.shape[0]
    a_mat, b_mat = lam[:, :nz], lam[:, nz:]
    c_mat = batch.yb @ pinv_svd(batch.xb, config.rcond, config.rank)
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(c_mat))):
        raise NumericalError("non-finite least-squares solution")
    diag = {
        "dyn": float(np.linalg.norm(batch.xs - lam @ ups)),
        "out": float(np.linalg.norm(batch.yb - c_mat @ batch.xb)),
    }
    return KoopmanModel(a_mat, b_mat, c_mat, config, diag)


def predict(model: KoopmanModel, z0, u_seq) -> np.ndarray:
    """Open-loop roll-out; row k is ``C z_{k+1}`` after applying ``u_seq[k]``.

    ``z0`` is the lifted state at the last learned sample, so the first row
    predicts the first sample after the window.
    """
    z = np.asarray(z0, dtype=float).reshape(-1)
    if z.shape[0] != model.dim_z:
        raise ShapeError(f"z0 has dimension {z.shape[0]}, model expects {model.dim_z}")
    u = _as_2d(u_seq)
    if u.shape[1] != model.b_mat.shape[1]:
        raise ShapeError("input dimension mismatch")
    out = np.empty((u.shape[0], model.c_mat.shape[0]))
    for k in range(u.shape[0]):
        z = model.a_mat @ z + model.b_mat @ u[k]
        out[k] = model.c_mat @ z
    return out


def residual(y, yhat) -> float:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ShapeError("residual operands differ in shape")
    diff = y - yhat
    scale = float(np.max(np.abs(diff))) if diff.size else 0.0
    if scale == 0.0:
        return 0.0
    # scaled so subnormal gaps do not square to zero
    return scale * float(np.linalg.norm(diff / scale))


@dataclass
class SlidingResult:
    """Residuals aligned to absolute sample index; NaN marks warm-up / uncovered samples."""

    residuals: np.ndarray
    cycle_index: np.ndarray
    predictions: np.ndarray
    fit_dyn: np.ndarray
    fit_out: np.ndarray
    n_cycles: int

    @property
    def warmup(self) -> np.ndarray:
        return np.isnan(self.residuals)

    def to_csv(self, path, t) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "residual", "cycle_index", "warmup_flag", "fit_residual_dyn", "fit_residual_out"])
            for k in range(len(self.residuals)):
                warm = bool(np.isnan(self.residuals[k]))
                w.writerow([
                    f"{t[k]:.6f}",
                    "" if warm else f"{self.residuals[k]:.9f}",
                    int(self.cycle_index[k]),
                    int(warm),
                    "" if warm else f"{self.fit_dyn[k]:.9f}",
                    "" if warm else f"{self.fit_out[k]:.9f}",
                ])


def run_sliding(y_stream, u_stream, config: EmbedConfig) -> SlidingResult:
    """Fit on the latest ``wl`` samples, predict the next ``wp``, advance by ``wp``."""
    y = _as_2d(y_stream)
    u = _as_2d(u_stream)
    n = y.shape[0]
    if u.shape[0] != n:
        raise ShapeError("output and input streams differ in length")
    if n < config.wl + config.wp:
        raise ShapeError(f"stream of {n} samples is shorter than wl + wp")
    res = np.full(n, np.nan)
    cyc = np.full(n, -1, dtype=int)
    preds = np.full((n, y.shape[1]), np.nan)
    fdyn = np.full(n, np.nan)
    fout = np.full(n, np.nan)

    start, cycle = 0, 0
    while start + config.wl + config.wp <= n:
        end = start + config.wl
        try:
            model = fit(build_matrices(y[start:end], u[start:end], config), config)
        except (DegenerateDataError, NumericalError, ShapeError, np.linalg.LinAlgError) as exc:
            raise FitError(cycle, exc) from exc
        z0 = embed(y[end - config.d:end], config, u[end - config.d:end])
        yhat = predict(model, z0, u[end - 1:end - 1 + config.wp])
        sl = slice(end, end + config.wp)
        preds[sl] = yhat
        res[sl] = np.linalg.norm(y[sl] - yhat, axis=1)
        cyc[sl] = cycle
        fdyn[sl] = model.fit_diagnostics["dyn"]
        fout[sl] = model.fit_diagnostics["out"]
        start += config.wp
        cycle += 1
    return SlidingResult(res, cyc, preds, fdyn, fout, cycle)
