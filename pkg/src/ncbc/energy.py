"""Joint energy over the latent image and bias field, with analytic gradients.

    E(m, b; v) = sum_s alpha_u (v_s - m_s b_s)^2
               + sum_{(s,t) in C} [ alpha_p w_st (m_s - m_t)^2
                                    + lambda_b (b_s - b_t)^2 ]

where ``w_st`` is a bilateral weight: a Gaussian in the observed intensity
difference times a Gaussian in spatial distance.  The latent image is
smoothed except across strong observed edges; the bias field is smoothed
unconditionally.

All fields are 2D float arrays of shape ``(height, width)``; the graph
indexes them row-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .lattice import StochasticGraph


@dataclass(frozen=True)
class EnergyWeights:
    alpha_u: float = 1.0
    alpha_p: tuple[float, ...] = (4.0,)
    intensity_sigma: float = 0.06
    bias_smooth_weight: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "alpha_p", tuple(float(a) for a in self.alpha_p))
        if len(self.alpha_p) != 1:
            # a single bilateral family on the latent image; bias smoothness
            # is carried separately by bias_smooth_weight
            raise ConfigError(f"alpha_p must hold exactly one weight, got {self.alpha_p}")
        weights = (self.alpha_u, *self.alpha_p, self.bias_smooth_weight)
        if any(not np.isfinite(a) or a < 0 for a in weights):
            raise ConfigError(f"energy weights must be finite and >= 0, got {weights}")
        if not any(a > 0 for a in weights):
            raise ConfigError("at least one energy weight must be positive")
        if not self.intensity_sigma > 0:
            raise ConfigError(f"intensity_sigma must be > 0, got {self.intensity_sigma}")

    def scaled(self, factor: float) -> "EnergyWeights":
        return EnergyWeights(
            alpha_u=self.alpha_u * factor,
            alpha_p=tuple(a * factor for a in self.alpha_p),
            intensity_sigma=self.intensity_sigma,
            bias_smooth_weight=self.bias_smooth_weight * factor,
        )


def _check(graph: StochasticGraph | None, *fields):
    shape = np.shape(fields[0])
    for f in fields:
        if np.shape(f) != shape or len(shape) != 2:
            raise ShapeError(f"field shapes differ or are not 2D: {[np.shape(g) for g in fields]}")
    if graph is not None and shape != graph.dims.shape:
        raise ShapeError(f"fields have shape {shape}, graph lattice is {graph.dims.shape}")


def edge_weights(v: np.ndarray, graph: StochasticGraph, w: EnergyWeights) -> np.ndarray:
    """Bilateral weight per edge from the observed image."""
    vf = np.asarray(v, dtype=float).ravel()
    spatial = graph.spatial_weights()
    if np.isinf(w.intensity_sigma):
        return spatial
    dv = vf[graph.src] - vf[graph.dst]
    return np.exp(-(dv**2) / (2.0 * w.intensity_sigma**2)) * spatial


def unary_energy(m, b, v, w: EnergyWeights) -> float:
    _check(None, m, b, v)
    r = np.asarray(v, dtype=float) - np.asarray(m, dtype=float) * np.asarray(b, dtype=float)
    return float(w.alpha_u * np.sum(r * r))


def _pairwise(mf, bf, graph, omega, w):
    dm = mf[graph.src] - mf[graph.dst]
    db = bf[graph.src] - bf[graph.dst]
    terms = w.alpha_p[0] * omega * dm * dm + w.bias_smooth_weight * db * db
    return float(np.sum(terms))


def pairwise_energy(m, b, graph: StochasticGraph, w: EnergyWeights, v=None) -> float:
    """Pairwise smoothness over the clique set.

    ``v`` supplies the observed intensities for the bilateral weights; when
    omitted the intensity factor is taken as 1.
    """
    _check(graph, m, b)
    if v is None:
        omega = graph.spatial_weights()
    else:
        _check(graph, m, v)
        omega = edge_weights(v, graph, w)
    mf = np.asarray(m, dtype=float).ravel()
    bf = np.asarray(b, dtype=float).ravel()
    return _pairwise(mf, bf, graph, omega, w)


def total_energy(m, b, v, graph: StochasticGraph, w: EnergyWeights) -> float:
    return unary_energy(m, b, v, w) + pairwise_energy(m, b, graph, w, v=v)


def _scatter(graph, per_edge, n):
    return np.bincount(graph.src, per_edge, minlength=n) - np.bincount(
        graph.dst, per_edge, minlength=n
    )


def grad_m(m, b, v, graph: StochasticGraph, w: EnergyWeights) -> np.ndarray:
    """dE/dm, one component per pixel."""
    _check(graph, m, b, v)
    mf, bf, vf = (np.asarray(a, dtype=float).ravel() for a in (m, b, v))
    omega = edge_weights(v, graph, w)
    g = -2.0 * w.alpha_u * bf * (vf - mf * bf)
    per_edge = 2.0 * w.alpha_p[0] * omega * (mf[graph.src] - mf[graph.dst])
    g = g + _scatter(graph, per_edge, mf.size)
    return g.reshape(np.shape(m))


def grad_b(m, b, v, graph: StochasticGraph, w: EnergyWeights) -> np.ndarray:
    """dE/db, one component per pixel."""
    _check(graph, m, b, v)
    mf, bf, vf = (np.asarray(a, dtype=float).ravel() for a in (m, b, v))
    g = -2.0 * w.alpha_u * mf * (vf - mf * bf)
    per_edge = 2.0 * w.bias_smooth_weight * (bf[graph.src] - bf[graph.dst])
    g = g + _scatter(graph, per_edge, bf.size)
    return g.reshape(np.shape(b))
