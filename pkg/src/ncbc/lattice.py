"""Pixel lattice and stochastically sampled pairwise cliques.

Every pixel of a ``height x width`` image is a node, indexed row-major
(``s = y * width + x``).  Besides the guaranteed 4-neighbourhood, each
other node pair is joined with a probability that decays with spatial
distance, which approximates a fully connected graph at a fraction of the
cost.  Edges are stored once per unordered pair with ``src < dst`` and
sorted lexicographically so that every reduction over them has a fixed
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError

# non-local candidates beyond this many sigmas have inclusion probability
# below exp(-18) and are never drawn
CUTOFF_SIGMAS = 6.0


@dataclass(frozen=True)
class LatticeDims:
    width: int
    height: int

    def __post_init__(self):
        for name in ("width", "height"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")

    @property
    def size(self) -> int:
        return int(self.width) * int(self.height)

    @property
    def shape(self) -> tuple[int, int]:
        """Numpy array shape ``(height, width)``."""
        return (int(self.height), int(self.width))

    @classmethod
    def of(cls, image: np.ndarray) -> "LatticeDims":
        if np.ndim(image) != 2:
            raise ConfigError(f"expected a 2D image, got shape {np.shape(image)}")
        h, w = np.shape(image)
        return cls(width=int(w), height=int(h))


@dataclass(frozen=True)
class CliqueConfig:
    base_prob: float = 0.5
    spatial_sigma: float = 2.0
    max_degree: int = 24
    include_local_4: bool = True
    resample_each_iteration: bool = False

    def __post_init__(self):
        # base_prob == 0 is accepted and yields a local-only graph
        if not (0.0 <= self.base_prob <= 1.0):
            raise ConfigError(f"base_prob must lie in [0, 1], got {self.base_prob}")
        if not (np.isfinite(self.spatial_sigma) and self.spatial_sigma > 0):
            raise ConfigError(f"spatial_sigma must be > 0, got {self.spatial_sigma}")
        if isinstance(self.max_degree, bool) or int(self.max_degree) != self.max_degree:
            raise ConfigError(f"max_degree must be an integer, got {self.max_degree!r}")
        if self.max_degree < 4:
            raise ConfigError(f"max_degree must be >= 4, got {self.max_degree}")

    def inclusion_probability(self, dist):
        """Probability that a non-local pair at distance ``dist`` is joined."""
        d = np.asarray(dist, dtype=float)
        return self.base_prob * np.exp(-(d**2) / (2.0 * self.spatial_sigma**2))


@dataclass(frozen=True, eq=False)
class StochasticGraph:
    """Immutable sampled clique set.

    ``src``, ``dst`` and ``dist`` are parallel arrays, one entry per
    undirected edge, with ``src < dst`` and lexicographic ordering.
    """

    dims: LatticeDims
    src: np.ndarray
    dst: np.ndarray
    dist: np.ndarray
    seed: int
    config: CliqueConfig = field(default_factory=CliqueConfig)

    def __post_init__(self):
        for arr in (self.src, self.dst, self.dist):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.dims.size

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist()))

    def degrees(self) -> np.ndarray:
        n = self.n_nodes
        return np.bincount(self.src, minlength=n) + np.bincount(self.dst, minlength=n)

    @cached_property
    def _adjacency(self):
        # CSR-style adjacency, partners sorted by node index
        n = self.n_nodes
        a = np.concatenate([self.src, self.dst])
        b = np.concatenate([self.dst, self.src])
        d = np.concatenate([self.dist, self.dist])
        order = np.lexsort((b, a))
        a, b, d = a[order], b[order], d[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(a, minlength=n), out=indptr[1:])
        return indptr, b, d

    def spatial_weights(self) -> np.ndarray:
        """Gaussian distance factor ``exp(-d^2 / 2 sigma^2)`` per edge."""
        sigma = self.config.spatial_sigma
        return np.exp(-(self.dist**2) / (2.0 * sigma**2))


def _local_edges(dims: LatticeDims):
    h, w = dims.shape
    idx = np.arange(dims.size, dtype=np.int64).reshape(h, w)
    horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    return np.concatenate([horiz, vert], axis=0)


def _candidate_offsets(dims: LatticeDims, cfg: CliqueConfig):
    """Offsets (dy, dx) in the positive half-plane, so each pair appears once."""
    h, w = dims.shape
    radius = int(np.ceil(CUTOFF_SIGMAS * cfg.spatial_sigma))
    offsets = []
    for dy in range(0, min(radius, h - 1) + 1):
        for dx in range(-min(radius, w - 1), min(radius, w - 1) + 1):
            if dy == 0 and dx <= 0:
                continue
            if dy * dy + dx * dx > radius * radius:
                continue
            if cfg.include_local_4 and dy * dy + dx * dx == 1:
                continue
            offsets.append((dy, dx))
    return offsets


def _sample_nonlocal(dims: LatticeDims, cfg: CliqueConfig, rng: np.random.Generator):
    h, w = dims.shape
    idx = np.arange(dims.size, dtype=np.int64).reshape(h, w)
    pairs, dists = [], []
    for dy, dx in _candidate_offsets(dims, cfg):
        x0, x1 = max(0, -dx), min(w, w - dx)
        a = idx[0 : h - dy, x0:x1].ravel()
        d = float(np.hypot(dy, dx))
        p = float(cfg.inclusion_probability(d))
        # one draw per candidate in a fixed order keeps sampling reproducible
        keep = rng.random(a.size) < p
        a = a[keep]
        if a.size:
            pairs.append(np.stack([a, a + dy * w + dx], axis=1))
            dists.append(np.full(a.size, d))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64), np.empty(0)
    return np.concatenate(pairs), np.concatenate(dists)


def _cap_degree(pairs, dists, n_nodes, max_degree):
    """Keep nearest edges first while both endpoints stay within ``max_degree``."""
    deg = np.bincount(pairs[:, 0], minlength=n_nodes) + np.bincount(
        pairs[:, 1], minlength=n_nodes
    )
    if deg.max(initial=0) <= max_degree:
        return pairs, dists
    order = np.lexsort((pairs[:, 1], pairs[:, 0], dists))
    count = np.zeros(n_nodes, dtype=np.int64)
    keep = np.zeros(len(order), dtype=bool)
    for k, (a, b) in zip(order.tolist(), pairs[order].tolist()):
        if count[a] < max_degree and count[b] < max_degree:
            count[a] += 1
            count[b] += 1
            keep[k] = True
    return pairs[keep], dists[keep]


def build_stochastic_graph(dims: LatticeDims, cfg: CliqueConfig, seed: int) -> StochasticGraph:
    """Sample the clique set for a lattice.

    Each non-local pair is included independently with probability
    ``base_prob * exp(-d^2 / (2 spatial_sigma^2))``.  Nodes whose sampled
    non-local degree exceeds ``cfg.max_degree`` keep their nearest partners.
    The 4-neighbourhood is always present when ``cfg.include_local_4``.
    """
    if not isinstance(dims, LatticeDims):
        raise ConfigError("dims must be a LatticeDims")
    if not isinstance(cfg, CliqueConfig):
        raise ConfigError("cfg must be a CliqueConfig")
    seed = int(seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF))

    if cfg.base_prob > 0:
        pairs, dists = _sample_nonlocal(dims, cfg, rng)
        pairs, dists = _cap_degree(pairs, dists, dims.size, int(cfg.max_degree))
    else:
        pairs, dists = np.empty((0, 2), dtype=np.int64), np.empty(0)

    if cfg.include_local_4:
        local = _local_edges(dims)
        pairs = np.concatenate([local, pairs])
        dists = np.concatenate([np.ones(len(local)), dists])

    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs, dists = pairs[order], dists[order]
    return StochasticGraph(
        dims=dims,
        src=np.ascontiguousarray(pairs[:, 0]),
        dst=np.ascontiguousarray(pairs[:, 1]),
        dist=np.ascontiguousarray(dists, dtype=float),
        seed=seed,
        config=cfg,
    )


def neighbors(graph: StochasticGraph, s: int) -> list[tuple[int, float]]:
    """Partners of node ``s`` as ``(index, distance)``, sorted by index."""
    if not (0 <= s < graph.n_nodes):
        raise IndexError(f"node {s} outside lattice of {graph.n_nodes} nodes")
    indptr, partners, dist = graph._adjacency
    lo, hi = indptr[s], indptr[s + 1]
    return list(zip(partners[lo:hi].tolist(), dist[lo:hi].tolist()))
