"""Kolmogorov-Arnold network with B-spline edge activations.

Every edge carries ``w_base * silu(x) + w_spline * sum_i c_i B_i(x)`` where the
``B_i`` are ``G + kappa`` uniform B-splines of degree ``kappa`` over the edge's
own input range. Nodes sum their incoming edges. Inputs and the target are
standardised with statistics stored in the model.

Parameters live in per-layer arrays of shape ``(width_out, width_in, ...)``;
``KanLayer.edge`` exposes one edge as a ``SplineEdge`` view.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ModelLoadError, ModelVersionError, ShapeError, TrainingDiverged

FORMAT_VERSION = "kan-koopman/kan-model/1"
FEATURES = ("t2", "tinf", "current", "qc")


# ---------------------------------------------------------------- splines

def _check_grid(lo, hi, grid: int, kappa: int):
    if grid < 1 or kappa < 1:
        raise ConfigError("grid and kappa must be >= 1")
    if np.any(np.asarray(lo) >= np.asarray(hi)):
        raise ConfigError("degenerate grid: lo must be < hi")


def _basis_and_deriv(x, lo, hi, grid: int, kappa: int, deriv: bool = False):
    """Cox-de Boor on a uniform knot vector extended by kappa knots per side.

    ``x``, ``lo`` and ``hi`` broadcast together; the result has a trailing axis
    of length ``grid + kappa``. ``x`` is clamped to ``[lo, hi]``. When
    ``deriv`` is set, also returns dB/dx (zero where ``x`` was clamped).
    """
    x = np.asarray(x, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x, lo, hi = np.broadcast_arrays(x, lo, hi)
    h = (hi - lo) / grid
    xc = np.clip(x, lo, hi)
    # position in knot units measured from the first (extended) knot
    u = (xc - lo) / h + kappa
    span = np.clip(np.floor((xc - lo) / h), 0, grid - 1).astype(int) + kappa

    n_knots = grid + 2 * kappa + 1
    idx = np.arange(n_knots - 1)
    basis = (idx == span[..., None]).astype(float)
    lower = None
    for k in range(1, kappa + 1):
        lower = basis
        # uniform knots: B_{i,k}(u) = (u - i)/k B_{i,k-1} + (i + k + 1 - u)/k B_{i+1,k-1}
        i = np.arange(lower.shape[-1] - 1)
        left = (u[..., None] - i) / k * lower[..., :-1]
        right = (i + k + 1 - u[..., None]) / k * lower[..., 1:]
        basis = left + right
    if not deriv:
        return basis
    if kappa == 0:
        d = np.zeros_like(basis)
    else:
        d = (lower[..., :-1] - lower[..., 1:]) / h[..., None]
    inside = (x >= lo) & (x <= hi)
    d = d * inside[..., None]
    return basis, d


def bspline_basis(x, lo: float, hi: float, grid: int, kappa: int) -> np.ndarray:
    """Values of the ``grid + kappa`` B-splines at ``x`` (scalar or array)."""
    _check_grid(lo, hi, grid, kappa)
    return _basis_and_deriv(x, lo, hi, grid, kappa)


def silu(x):
    return x / (1.0 + np.exp(-x))


def silu_prime(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


# ---------------------------------------------------------------- structure

@dataclass
class SplineEdge:
    coeffs: np.ndarray
    w_base: float
    w_spline: float
    grid_lo: float
    grid_hi: float

    def __post_init__(self):
        if not self.grid_lo < self.grid_hi:
            raise ConfigError("grid_lo must be < grid_hi")


def edge_activation(x, edge: SplineEdge, kappa: int, grid: int):
    if len(edge.coeffs) != grid + kappa:
        raise ShapeError(f"edge needs {grid + kappa} coefficients, has {len(edge.coeffs)}")
    b = bspline_basis(x, edge.grid_lo, edge.grid_hi, grid, kappa)
    return edge.w_base * silu(np.asarray(x, dtype=float)) + edge.w_spline * (b @ np.asarray(edge.coeffs))


@dataclass
class KanLayer:
    coeffs: np.ndarray  # (out, in, grid + kappa)
    w_base: np.ndarray  # (out, in)
    w_spline: np.ndarray  # (out, in)
    grid_lo: np.ndarray  # (out, in)
    grid_hi: np.ndarray  # (out, in)

    @property
    def width_in(self) -> int:
        return self.w_base.shape[1]

    @property
    def width_out(self) -> int:
        return self.w_base.shape[0]

    def edge(self, b: int, a: int) -> SplineEdge:
        return SplineEdge(self.coeffs[b, a].copy(), float(self.w_base[b, a]),
                          float(self.w_spline[b, a]), float(self.grid_lo[b, a]),
                          float(self.grid_hi[b, a]))

    def copy(self) -> "KanLayer":
        return KanLayer(*(np.array(v, copy=True) for v in
                          (self.coeffs, self.w_base, self.w_spline, self.grid_lo, self.grid_hi)))


@dataclass
class FeatureNorm:
    x_shift: np.ndarray
    x_scale: np.ndarray
    y_shift: float = 0.0
    y_scale: float = 1.0

    @classmethod
    def identity(cls, width: int) -> "FeatureNorm":
        return cls(np.zeros(width), np.ones(width), 0.0, 1.0)

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray) -> "FeatureNorm":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        sx = x.std(axis=0)
        sy = float(y.std())
        # constant channels (e.g. qc held at zero) keep unit scale
        sx = np.where(sx > 0, sx, 1.0)
        return cls(x.mean(axis=0), sx, float(y.mean()), sy if sy > 0 else 1.0)


@dataclass
class KanNetwork:
    layers: list
    grid: int = 5
    kappa: int = 3
    norm: Optional[FeatureNorm] = None

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.width_out != nxt.width_in:
                raise ShapeError("adjacent layer widths do not chain")
        for layer in self.layers:
            if layer.coeffs.shape[-1] != self.grid + self.kappa:
                raise ShapeError("coefficient count must equal grid + kappa")
        if self.norm is None:
            self.norm = FeatureNorm.identity(self.widths[0])

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].width_in] + [layer.width_out for layer in self.layers]

    @property
    def n_edges(self) -> int:
        return sum(layer.width_in * layer.width_out for layer in self.layers)

    def copy(self) -> "KanNetwork":
        n = self.norm
        return KanNetwork([layer.copy() for layer in self.layers], self.grid, self.kappa,
                          FeatureNorm(n.x_shift.copy(), n.x_scale.copy(), n.y_shift, n.y_scale))

    def params(self) -> list[dict]:
        return [{"coeffs": l.coeffs, "w_base": l.w_base, "w_spline": l.w_spline} for l in self.layers]


def init_network(widths: Sequence[int] = (4, 3, 1), grid: int = 5, kappa: int = 3,
                 seed: int = 0, noise: float = 0.1) -> KanNetwork:
    """Small uniform-noise spline coefficients, unit base and spline weights.

    Grids start at [-1, 1]; ``train`` re-places them from data.
    """
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ConfigError(f"invalid architecture {widths}")
    rng = np.random.default_rng(seed)
    layers = []
    for w_in, w_out in zip(widths, widths[1:]):
        shape = (w_out, w_in)
        layers.append(KanLayer(
            coeffs=rng.uniform(-noise, noise, size=shape + (grid + kappa,)),
            w_base=np.ones(shape),
            w_spline=np.ones(shape),
            grid_lo=-np.ones(shape),
            grid_hi=np.ones(shape),
        ))
    return KanNetwork(layers, grid, kappa)


# ---------------------------------------------------------------- forward / backward

def _layer_forward(layer: KanLayer, a: np.ndarray, grid: int, kappa: int, keep: bool):
    # a: (n, in) -> out (n, out)
    x = a[:, None, :]  # broadcast against (out, in)
    if keep:
        basis, dbasis = _basis_and_deriv(x, layer.grid_lo, layer.grid_hi, grid, kappa, deriv=True)
    else:
        basis = _basis_and_deriv(x, layer.grid_lo, layer.grid_hi, grid, kappa)
        dbasis = None
    spline = np.einsum("noik,oik->noi", basis, layer.coeffs)
    phi = layer.w_base * silu(x) + layer.w_spline * spline
    out = phi.sum(axis=2)
    cache = (a, basis, dbasis, spline) if keep else None
    return out, cache


def _forward_normalized(net: KanNetwork, xn: np.ndarray, keep: bool = False):
    caches = []
    a = xn
    for layer in net.layers:
        a, cache = _layer_forward(layer, a, net.grid, net.kappa, keep)
        caches.append(cache)
    return a, caches


def _check_features(net: KanNetwork, alpha) -> np.ndarray:
    x = np.asarray(alpha, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != net.widths[0]:
        raise ShapeError(f"expected {net.widths[0]} features, got {x.shape[1]}")
    return x, single


def forward(net: KanNetwork, alpha):
    """Estimate for one feature vector or a ``(n, width_in)`` batch."""
    x, single = _check_features(net, alpha)
    xn = (x - net.norm.x_shift) / net.norm.x_scale
    out, _ = _forward_normalized(net, xn)
    y = out * net.norm.y_scale + net.norm.y_shift
    if net.widths[-1] == 1:
        y = y[:, 0]
    return y[0] if single else y


def loss(net: KanNetwork, features, targets) -> float:
    """Mean squared error in standardised target units."""
    x, _ = _check_features(net, features)
    xn = (x - net.norm.x_shift) / net.norm.x_scale
    yn = (np.asarray(targets, dtype=float).reshape(len(x), -1) - net.norm.y_shift) / net.norm.y_scale
    out, _ = _forward_normalized(net, xn)
    return float(np.mean((out - yn) ** 2))


def _loss_and_grad(net: KanNetwork, xn: np.ndarray, yn: np.ndarray):
    out, caches = _forward_normalized(net, xn, keep=True)
    err = out - yn
    g = 2.0 * err / out.size  # dL/d out, (n, out)

    grads = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        a, basis, dbasis, spline = caches[li]
        x3 = a[:, None, :]
        grads[li] = {
            "coeffs": np.einsum("no,noik->oik", g, basis) * layer.w_spline[..., None],
            "w_base": np.einsum("no,ni->oi", g, silu(a)),
            "w_spline": np.einsum("no,noi->oi", g, spline),
        }
        if li > 0:
            dspline = np.einsum("noik,oik->noi", dbasis, layer.coeffs)
            dphi = layer.w_base * silu_prime(x3) + layer.w_spline * dspline
            g = np.einsum("no,noi->ni", g, dphi)
    return float(np.mean(err ** 2)), grads


def _normalized_batch(net: KanNetwork, features, targets):
    x, _ = _check_features(net, features)
    if len(x) == 0:
        raise ShapeError("empty batch")
    xn = (x - net.norm.x_shift) / net.norm.x_scale
    yn = (np.asarray(targets, dtype=float).reshape(len(x), -1) - net.norm.y_shift) / net.norm.y_scale
    return xn, yn


def gradient(net: KanNetwork, features, targets) -> list[dict]:
    """Analytic gradient of ``loss`` w.r.t. every coeff, w_base and w_spline.

    One dict per layer with arrays shaped like the layer's parameters.
    """
    return _loss_and_grad(net, *_normalized_batch(net, features, targets))[1]


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 3000
    seed: int = 0
    tol: float = 0.0  # stop once |loss change| < tol; 0 disables early stopping
    grid_margin: float = 0.1

    def __post_init__(self):
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ConfigError("learning_rate must be finite and >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


def place_grids(net: KanNetwork, xn: np.ndarray, margin: float = 0.1) -> None:
    """Set each edge's grid to its input's data range widened by ``margin`` per side."""
    a = xn
    for layer in net.layers:
        lo = a.min(axis=0)
        hi = a.max(axis=0)
        span = hi - lo
        span = np.where(span > 0, span, 2.0)
        lo = np.where(hi > lo, lo, lo - 1.0) - margin * span
        hi = np.where(hi > a.min(axis=0), hi, hi + 1.0) + margin * span
        layer.grid_lo[:] = lo[None, :]
        layer.grid_hi[:] = hi[None, :]
        a, _ = _layer_forward(layer, a, net.grid, net.kappa, keep=False)


def train(net: KanNetwork, features, targets, cfg: TrainConfig, fit_norm: bool = True):
    """Full-batch gradient descent with a fixed step.

    Returns ``(trained_copy, history)``; ``history[0]`` is the loss before the
    first update and one entry follows each epoch.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    net = net.copy()
    if fit_norm:
        net.norm = FeatureNorm.fit(x, y)
    xn = (x - net.norm.x_shift) / net.norm.x_scale
    place_grids(net, xn, cfg.grid_margin)

    yn = ((y.reshape(len(x), -1)) - net.norm.y_shift) / net.norm.y_scale
    history = []
    for epoch in range(cfg.epochs):
        # overflow shows up as a non-finite loss below
        with np.errstate(over="ignore", invalid="ignore"):
            current, grads = _loss_and_grad(net, xn, yn)
        if not math.isfinite(current):
            raise TrainingDiverged(epoch)
        history.append(current)
        if cfg.tol > 0 and len(history) > 1 and abs(history[-2] - current) < cfg.tol:
            break
        for layer, g in zip(net.layers, grads):
            layer.coeffs -= cfg.learning_rate * g["coeffs"]
            layer.w_base -= cfg.learning_rate * g["w_base"]
            layer.w_spline -= cfg.learning_rate * g["w_spline"]
    with np.errstate(over="ignore", invalid="ignore"):
        final = loss(net, x, y)
    if not math.isfinite(final):
        raise TrainingDiverged(len(history))
    history.append(final)
    return net, np.array(history)


def rmse(net: KanNetwork, features, targets) -> float:
    return float(np.sqrt(np.mean((forward(net, features) - np.asarray(targets)) ** 2)))


# ---------------------------------------------------------------- persistence

def _floats(arr) -> list:
    return np.asarray(arr, dtype=float).tolist()


def save_model(net: KanNetwork, path, extra: Optional[dict] = None) -> None:
    """JSON container; Python float repr makes the round trip exact."""
    doc = {
        "format": FORMAT_VERSION,
        "architecture": net.widths,
        "grid": net.grid,
        "kappa": net.kappa,
        "features": list(FEATURES) if net.widths[0] == len(FEATURES) else None,
        "normalization": {
            "x_shift": _floats(net.norm.x_shift),
            "x_scale": _floats(net.norm.x_scale),
            "y_shift": float(net.norm.y_shift),
            "y_scale": float(net.norm.y_scale),
        },
        "layers": [
            {k: _floats(getattr(layer, k)) for k in ("coeffs", "w_base", "w_spline", "grid_lo", "grid_hi")}
            for layer in net.layers
        ],
        "meta": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_model(path) -> KanNetwork:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelLoadError(f"corrupt model file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelLoadError(f"corrupt model file {path}")
    if doc.get("format") != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported model format {doc.get('format')!r}, expected {FORMAT_VERSION!r}")
    try:
        norm = doc["normalization"]
        layers = [KanLayer(*(np.array(ld[k], dtype=float) for k in
                             ("coeffs", "w_base", "w_spline", "grid_lo", "grid_hi")))
                  for ld in doc["layers"]]
        net = KanNetwork(layers, int(doc["grid"]), int(doc["kappa"]),
                         FeatureNorm(np.array(norm["x_shift"]), np.array(norm["x_scale"]),
                                     float(norm["y_shift"]), float(norm["y_scale"])))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ModelLoadError(f"corrupt model file {path}: {exc}") from exc
    if net.widths != list(doc["architecture"]):
        raise ModelLoadError("architecture header does not match stored layers")
    return net


def model_meta(path) -> dict:
    with open(path) as fh:
        return json.load(fh).get("meta", {})


# ---------------------------------------------------------------- error growth under current corruption

# K/A. For the default cell dQ/dI is about 0.11 W/A near 2C and the
# core-to-coolant resistance is R1 + R2 = 5.13 K/W, so the true core moves by
# roughly 0.56 K per amp of hidden current; 1.0 leaves headroom for the
# estimator's own response.
LIPSCHITZ_BOUND = 1.0


@dataclass
class LipschitzStats:
    perturbations: np.ndarray
    ratios: np.ndarray
    error_norms: np.ndarray  # RMS estimation error per perturbation, index 0 is nominal

    @property
    def max(self) -> float:
        return float(np.max(self.ratios)) if self.ratios.size else 0.0

    @property
    def median(self) -> float:
        return float(np.median(self.ratios)) if self.ratios.size else 0.0


def features_of(traj) -> np.ndarray:
    """Online feature matrix ``(t2_meas, tinf_meas, nominal current, qc)``."""
    return np.column_stack([traj.t2_meas, traj.tinf_meas, traj.current_nominal, traj.qc])


def empirical_lipschitz(net: KanNetwork, scenario, perturbations, params=None,
                        sample_times: Optional[Sequence[float]] = None,
                        n_points: int = 50, settle: float = 60.0) -> LipschitzStats:
    """Growth of the estimation error when the applied current is corrupted by ``delta``.

    For each ``delta`` the scenario is re-simulated with a constant bias over
    the whole run (same seed, so the noise draw is shared). The network sees
    the measured features with the nominal current, and the error is taken
    against the simulator's true core temperature at the sampled times. The
    ratio is ``|rms(e_delta) - rms(e_0)| / |delta|``, defined as 0 at delta=0.
    """
    from dataclasses import replace as _replace

    from .cell_model import AnomalyProfile, CellParams, simulate

    params = params or CellParams()
    deltas = np.asarray(perturbations, dtype=float)

    def error_at(delta: float, idx=None):
        prof = AnomalyProfile("bias_attack", start=0.0, bias=delta) if delta != 0 else AnomalyProfile()
        traj = simulate(_replace(scenario, profile=prof), params)
        if idx is None:
            if sample_times is not None:
                idx = np.searchsorted(traj.t, np.asarray(sample_times, dtype=float))
            else:
                first = np.searchsorted(traj.t, settle)
                idx = np.linspace(first, len(traj) - 1, n_points).astype(int)
        e = forward(net, features_of(traj)[idx]) - traj.t1_true[idx]
        return float(np.sqrt(np.mean(e ** 2))), idx

    e0, idx = error_at(0.0)
    norms = [e0]
    ratios = []
    for d in deltas:
        if d == 0:
            norms.append(e0)
            ratios.append(0.0)
            continue
        ed, _ = error_at(float(d), idx)
        norms.append(ed)
        ratios.append(abs(ed - e0) / abs(d))
    return LipschitzStats(deltas, np.array(ratios), np.array(norms))
