"""Alternating gradient-descent MAP estimate of latent image and bias field.

Each iteration updates every latent pixel simultaneously with the bias
held fixed, then every bias pixel with the latent image held fixed.  The
product ``m * b`` is invariant under ``(m / c, c * b)``; the ambiguity is
removed by keeping ``mean(b) == 1``.

The solver works on intensities divided by a robust image scale (the 99th
percentile), so ``intensity_sigma`` and the rates are unit-free and
``reconstruct(c * v)`` equals ``c * reconstruct(v)`` with the same bias.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage
import scipy.sparse

from .energy import EnergyWeights, edge_weights
from .errors import ConfigError, DataError, DegeneracyError
from .lattice import CliqueConfig, LatticeDims, StochasticGraph, build_stochastic_graph

logger = logging.getLogger(__name__)

BIAS_FLOOR = 1e-6
ENERGY_EPS = 1e-12
BIAS_INITS = ("uniform_one", "lowpass_ratio")


@dataclass(frozen=True)
class NcbcConfig:
    """Model weights, clique sampling, step sizes and stopping rules.

    ``mu1`` multiplies the whole latent step, whose unary and pairwise
    gradient parts are scaled by ``rho`` and ``eta``; ``mu2`` is the step
    on the full bias gradient.  ``lowpass_sigma`` is the smoothing width
    used by the ``lowpass_ratio`` initialisation (``None``: an eighth of
    the larger image side).
    """

    weights: EnergyWeights = field(default_factory=EnergyWeights)
    clique: CliqueConfig = field(default_factory=CliqueConfig)
    mu1: float = 0.0625
    mu2: float = 0.1
    rho: float = 0.3
    eta: float = 0.3
    max_iters: int = 500
    rel_tol: float = 1e-5
    bias_init: str = "lowpass_ratio"
    lowpass_sigma: float | None = None
    seed: int = 0
    annotations: dict = field(default_factory=lambda: {"b_values_s_per_mm2": [100, 400, 1000]})

    def __post_init__(self):
        for name in ("mu1", "mu2", "rho", "eta"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be finite and > 0, got {value}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError(f"max_iters must be an integer >= 1, got {self.max_iters}")
        if not (0 < self.rel_tol < 1):
            raise ConfigError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if self.bias_init not in BIAS_INITS:
            raise ConfigError(f"bias_init must be one of {BIAS_INITS}, got {self.bias_init!r}")
        if self.lowpass_sigma is not None and not self.lowpass_sigma > 0:
            raise ConfigError(f"lowpass_sigma must be > 0, got {self.lowpass_sigma}")

    def replace(self, **changes) -> "NcbcConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Diagnostics:
    energy_trace: list[float]
    iters_run: int
    converged: bool
    final_rel_change: float
    seed: int
    graph_edge_count: int
    intensity_scale: float = 1.0
    final_rates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self, config: NcbcConfig | None = None) -> str:
        doc = {"diagnostics": self.to_dict()}
        if config is not None:
            doc["config"] = config.to_dict()
        return json.dumps(doc, indent=2, sort_keys=True)


@dataclass
class NcbcResult:
    latent: np.ndarray
    bias: np.ndarray
    diagnostics: Diagnostics


def normalize_bias(b, m):
    """Rescale so that ``mean(b) == 1`` while keeping ``m * b`` unchanged."""
    b = np.asarray(b, dtype=float)
    m = np.asarray(m, dtype=float)
    c = float(np.mean(b))
    if not c > 0:
        raise DegeneracyError(f"bias field mean must be positive, got {c}")
    return b / c, m * c


def _check_observed(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 2:
        raise DataError(f"observed image must be 2D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DataError("observed image contains non-finite values")
    if np.any(v < 0):
        raise DataError("observed image contains negative intensities")
    return v


def _lowpass_bias(v: np.ndarray, sigma: float) -> np.ndarray:
    # with reflection the signal has period 2N, so beyond 4N every non-DC
    # mode is damped below 1e-30 and the blur is the mean
    if sigma >= 4.0 * max(v.shape):
        b = np.full(v.shape, float(np.mean(v)))
    else:
        b = scipy.ndimage.gaussian_filter(v, sigma=sigma, mode="reflect")
    b = np.maximum(b, BIAS_FLOOR * max(float(np.max(b)), 1.0))
    return b / np.mean(b)


def lowpass_baseline(v, kernel_sigma: float) -> NcbcResult:
    """Homomorphic-style baseline: the bias is a Gaussian blur of the image.

    No noise handling, so dividing by the blurred field amplifies noise in
    dark regions.
    """
    if not (np.isfinite(kernel_sigma) and kernel_sigma > 0):
        raise ConfigError(f"kernel_sigma must be > 0, got {kernel_sigma}")
    v = _check_observed(v)
    if not np.any(v > 0):
        b = np.ones_like(v)
    else:
        b = _lowpass_bias(v, kernel_sigma)
    diag = Diagnostics(
        energy_trace=[],
        iters_run=0,
        converged=True,
        final_rel_change=0.0,
        seed=0,
        graph_edge_count=0,
    )
    return NcbcResult(latent=v / b, bias=b, diagnostics=diag)


def _laplacian(graph: StochasticGraph, weights: np.ndarray):
    n = graph.n_nodes
    rows = np.concatenate([graph.src, graph.dst])
    cols = np.concatenate([graph.dst, graph.src])
    vals = np.concatenate([weights, weights])
    adj = scipy.sparse.csr_matrix((-vals, (rows, cols)), shape=(n, n))
    deg = np.bincount(graph.src, weights, minlength=n) + np.bincount(
        graph.dst, weights, minlength=n
    )
    return (adj + scipy.sparse.diags(deg)).tocsr()


class _Problem:
    """Energy and gradients on flattened, scale-normalised fields."""

    def __init__(self, v: np.ndarray, graph: StochasticGraph, w: EnergyWeights):
        self.v = v
        self.graph = graph
        self.w = w
        self.omega = edge_weights(v, graph, w)
        self.lap_m = _laplacian(graph, self.omega)
        self.lap_b = _laplacian(graph, np.ones(graph.n_edges))

    def energy(self, m, b) -> float:
        g, w = self.graph, self.w
        r = self.v - m * b
        dm = m[g.src] - m[g.dst]
        db = b[g.src] - b[g.dst]
        unary = w.alpha_u * np.sum(r * r)
        pair = np.sum(w.alpha_p[0] * self.omega * dm * dm + w.bias_smooth_weight * db * db)
        return float(unary + pair)

    def grad_m_parts(self, m, b):
        gu = -2.0 * self.w.alpha_u * b * (self.v - m * b)
        gp = 2.0 * self.w.alpha_p[0] * (self.lap_m @ m)
        return gu, gp

    def grad_b(self, m, b):
        gu = -2.0 * self.w.alpha_u * m * (self.v - m * b)
        return gu + 2.0 * self.w.bias_smooth_weight * (self.lap_b @ b)


def _image_scale(v: np.ndarray) -> float:
    scale = float(np.percentile(v, 99))
    if scale <= 0:
        scale = float(np.max(v))
    return scale


def _initial_fields(vn: np.ndarray, cfg: NcbcConfig):
    if cfg.bias_init == "uniform_one":
        b = np.ones_like(vn)
    else:
        sigma = cfg.lowpass_sigma or max(vn.shape) / 8.0
        b = _lowpass_bias(vn, sigma)
    return vn / b, b


def ncbc_reconstruct(v, cfg: NcbcConfig | None = None, init=None) -> NcbcResult:
    """Jointly estimate the latent image and the bias field from ``v``.

    Parameters
    ----------
    v : (H, W) array
        Observed magnitude image, finite and nonnegative.
    cfg : NcbcConfig
        Model and solver settings; the defaults suit images scaled to any
        intensity range.
    init : (latent, bias) pair, optional
        Starting fields in the units of ``v``; overrides ``cfg.bias_init``.

    Returns
    -------
    NcbcResult
        ``latent`` and ``bias`` in the units of ``v`` with ``mean(bias) == 1``.
    """
    cfg = cfg or NcbcConfig()
    v = _check_observed(v)
    if min(v.shape) < 2:
        raise DataError(f"observed image must be at least 2x2, got {v.shape}")
    dims = LatticeDims.of(v)

    if not np.any(v > 0):
        diag = Diagnostics([0.0], 0, True, 0.0, int(cfg.seed), 0)
        return NcbcResult(np.zeros_like(v), np.ones_like(v), diag)

    scale = _image_scale(v)
    vn = (v / scale).ravel()
    if init is None:
        m, b = _initial_fields(vn.reshape(v.shape), cfg)
    else:
        m = np.asarray(init[0], dtype=float) / scale
        b = np.asarray(init[1], dtype=float)
        if m.shape != v.shape or b.shape != v.shape:
            raise DataError("initial fields must match the observed image shape")
    b, m = normalize_bias(np.maximum(b.ravel(), BIAS_FLOOR), np.maximum(m.ravel(), 0.0))

    graph = build_stochastic_graph(dims, cfg.clique, cfg.seed)
    problem = _Problem(vn, graph, cfg.weights)
    energy = problem.energy(m, b)
    trace = [energy]
    mu1, mu2 = cfg.mu1, cfg.mu2
    converged = False
    rel = float("inf")
    it = 0

    for it in range(1, cfg.max_iters + 1):
        if cfg.clique.resample_each_iteration and it > 1:
            seed_t = np.random.SeedSequence([cfg.seed & 0xFFFFFFFFFFFFFFFF, it]).generate_state(1)[0]
            graph = build_stochastic_graph(dims, cfg.clique, int(seed_t))
            problem = _Problem(vn, graph, cfg.weights)
            energy = problem.energy(m, b)
        prev = energy
        rejected = False

        # latent half-step, bias fixed
        gu, gp = problem.grad_m_parts(m, b)
        step = cfg.rho * gu + cfg.eta * gp
        for attempt in range(2):
            m_new = np.maximum(m - mu1 * step, 0.0)
            e_new = problem.energy(m_new, b)
            if e_new <= energy:
                m, energy = m_new, e_new
                break
            mu1 *= 0.5
        else:
            rejected = True

        # bias half-step, latent fixed; the gradient is projected onto
        # zero-mean directions so the mean-one constraint is preserved
        g = problem.grad_b(m, b)
        g = g - np.mean(g)
        for attempt in range(2):
            b_new = np.maximum(b - mu2 * g, BIAS_FLOOR)
            b_new, m_new = normalize_bias(b_new, m)
            e_new = problem.energy(m_new, b_new)
            if e_new <= energy:
                m, b, energy = m_new, b_new, e_new
                break
            mu2 *= 0.5
        else:
            rejected = True

        trace.append(energy)
        rel = abs(prev - energy) / max(prev, ENERGY_EPS)
        if not rejected and rel < cfg.rel_tol:
            converged = True
            break

    logger.debug("ncbc: %d iterations, energy %.6g -> %.6g", it, trace[0], trace[-1])
    diag = Diagnostics(
        energy_trace=[float(e) for e in trace],
        iters_run=it,
        converged=converged,
        final_rel_change=float(rel),
        seed=int(cfg.seed),
        graph_edge_count=graph.n_edges,
        intensity_scale=scale,
        final_rates={"mu1": mu1, "mu2": mu2, "rho": cfg.rho, "eta": cfg.eta},
    )
    return NcbcResult(
        latent=(m * scale).reshape(v.shape),
        bias=b.reshape(v.shape),
        diagnostics=diag,
    )
