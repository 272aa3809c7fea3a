import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncbc.errors import ConfigError
from ncbc.lattice import CliqueConfig, LatticeDims, build_stochastic_graph, neighbors


def local_only():
    return CliqueConfig(base_prob=0.0, include_local_4=True)


def test_zero_probability_leaves_only_local_edges():
    g = build_stochastic_graph(LatticeDims(3, 3), local_only(), seed=1)
    assert g.n_edges == 12
    assert all(d == 1.0 for d in g.dist)


def test_single_pixel_has_no_edges():
    g = build_stochastic_graph(LatticeDims(1, 1), CliqueConfig(base_prob=1.0), seed=3)
    assert g.n_edges == 0


def test_center_of_local_grid_has_four_partners():
    g = build_stochastic_graph(LatticeDims(3, 3), local_only(), seed=0)
    nb = neighbors(g, 4)
    assert [s for s, _ in nb] == [1, 3, 5, 7]
    assert all(d == 1.0 for _, d in nb)


def test_two_pixel_lattice():
    g = build_stochastic_graph(LatticeDims(2, 1), local_only(), seed=0)
    assert neighbors(g, 0) == [(1, 1.0)]


def test_neighbors_out_of_range():
    g = build_stochastic_graph(LatticeDims(2, 2), local_only(), seed=0)
    with pytest.raises(IndexError):
        neighbors(g, 4)
    with pytest.raises(IndexError):
        neighbors(g, -1)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"base_prob": 1.5},
        {"base_prob": -0.1},
        {"spatial_sigma": 0.0},
        {"max_degree": 3},
        {"max_degree": 4.5},
    ],
)
def test_invalid_clique_config(kwargs):
    with pytest.raises(ConfigError):
        CliqueConfig(**kwargs)


@pytest.mark.parametrize("w,h", [(0, 3), (3, 0), (2.5, 2)])
def test_invalid_dims(w, h):
    with pytest.raises(ConfigError):
        LatticeDims(w, h)


@settings(max_examples=40, deadline=None)
@given(
    w=st.integers(1, 9),
    h=st.integers(1, 9),
    p=st.floats(0.0, 1.0),
    sigma=st.floats(0.5, 3.0),
    max_degree=st.integers(4, 12),
    local=st.booleans(),
    seed=st.integers(0, 2**63 - 1),
)
def test_graph_invariants(w, h, p, sigma, max_degree, local, seed):
    dims = LatticeDims(w, h)
    cfg = CliqueConfig(base_prob=p, spatial_sigma=sigma, max_degree=max_degree, include_local_4=local)
    g = build_stochastic_graph(dims, cfg, seed)
    pairs = list(zip(g.src.tolist(), g.dst.tolist()))
    # ordered, unique, no self edges
    assert all(a < b for a, b in pairs)
    assert pairs == sorted(set(pairs))
    deg = g.degrees()
    assert deg.max(initial=0) <= max_degree + 4
    # handshake
    assert sum(len(neighbors(g, s)) for s in range(dims.size)) == 2 * g.n_edges
    # symmetry through the neighbour lists
    for s in range(dims.size):
        for t, d in neighbors(g, s):
            assert (s, d) in neighbors(g, t)
    # distances are Euclidean lattice distances
    ys, xs = np.divmod(np.arange(dims.size), w)
    expected = np.hypot(ys[g.src] - ys[g.dst], xs[g.src] - xs[g.dst])
    np.testing.assert_allclose(g.dist, expected)
    if local:
        edges = g.edge_set()
        for s in range(dims.size):
            y, x = divmod(s, w)
            if x + 1 < w:
                assert (s, s + 1) in edges
            if y + 1 < h:
                assert (s, s + w) in edges
        assert _connected(dims.size, pairs)
    # determinism
    again = build_stochastic_graph(dims, cfg, seed)
    assert np.array_equal(g.src, again.src) and np.array_equal(g.dst, again.dst)
    assert np.array_equal(g.dist, again.dist)


def _connected(n, pairs):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in pairs:
        parent[find(a)] = find(b)
    return len({find(i) for i in range(n)}) == 1


def test_different_seeds_differ():
    cfg = CliqueConfig(base_prob=0.5, spatial_sigma=2.0, max_degree=64)
    a = build_stochastic_graph(LatticeDims(12, 12), cfg, 1)
    b = build_stochastic_graph(LatticeDims(12, 12), cfg, 2)
    assert a.edge_set() != b.edge_set()


def test_degree_cap_keeps_nearest_partners():
    cfg = CliqueConfig(base_prob=1.0, spatial_sigma=3.0, max_degree=4, include_local_4=False)
    g = build_stochastic_graph(LatticeDims(9, 9), cfg, 0)
    assert g.degrees().max() <= 4
    # with certain inclusion the greedy cap admits only unit-distance pairs
    # before any longer one can be considered for the central node
    centre = neighbors(g, 40)
    assert sorted(d for _, d in centre) == [1.0, 1.0, 1.0, 1.0]


def test_inclusion_frequency_matches_distance_law():
    """Monte Carlo over 1000 seeds: per-distance frequency within 3 standard errors."""
    dims = LatticeDims(16, 16)
    cfg = CliqueConfig(base_prob=0.5, spatial_sigma=2.0, max_degree=64)
    n_seeds = 1000

    ys, xs = np.divmod(np.arange(dims.size), dims.width)
    iu = np.triu_indices(dims.size, k=1)
    all_d = np.hypot(ys[iu[0]] - ys[iu[1]], xs[iu[0]] - xs[iu[1]])
    candidates = all_d != 1.0  # local pairs are always present
    bins = np.round(all_d[candidates] ** 2).astype(int)
    n_pairs = np.bincount(bins)

    hits = np.zeros_like(n_pairs, dtype=float)
    capped = 0
    for seed in range(n_seeds):
        g = build_stochastic_graph(dims, cfg, seed)
        capped += int(g.degrees().max() > cfg.max_degree + 4)
        d = g.dist[g.dist != 1.0]
        hits += np.bincount(np.round(d**2).astype(int), minlength=hits.size)[: hits.size]
    assert capped == 0

    for d2 in np.flatnonzero(n_pairs):
        trials = n_pairs[d2] * n_seeds
        p = 0.5 * np.exp(-d2 / (2 * 2.0**2))
        freq = hits[d2] / trials
        se = np.sqrt(p * (1 - p) / trials)
        assert abs(freq - p) <= 3 * se + 1e-12, (d2, freq, p, se)
