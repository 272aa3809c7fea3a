import numpy as np
import pytest

from conftest import card_phantom
from oracles import quantized_minimum
from ncbc.energy import EnergyWeights, total_energy
from ncbc.errors import ConfigError, DataError, DegeneracyError
from ncbc.inference import NcbcConfig, lowpass_baseline, ncbc_reconstruct, normalize_bias
from ncbc.lattice import CliqueConfig, LatticeDims, build_stochastic_graph
from ncbc.metrics import correlation_coefficient
from ncbc.phantom import ProstateCard

FAST = NcbcConfig(max_iters=200)


def test_constant_image_is_fixed():
    v = np.full((6, 7), 3.3)
    res = ncbc_reconstruct(v)
    np.testing.assert_allclose(res.latent, 3.3, atol=1e-6)
    np.testing.assert_allclose(res.bias, 1.0, atol=1e-6)


@pytest.mark.parametrize("bias_init", ["uniform_one", "lowpass_ratio"])
def test_clean_unbiased_image_keeps_flat_bias(bias_init):
    clean = ProstateCard().render(LatticeDims(32, 32))
    res = ncbc_reconstruct(clean, NcbcConfig(bias_init=bias_init, max_iters=20_000))
    assert res.diagnostics.converged
    np.testing.assert_allclose(res.bias, 1.0, atol=1e-3)
    assert correlation_coefficient(res.latent, clean) >= 0.999


def test_piecewise_constant_image_keeps_flat_bias():
    rng = np.random.default_rng(0)
    blocks = np.kron(rng.integers(1, 5, (4, 4)), np.ones((6, 6))).astype(float)
    res = ncbc_reconstruct(blocks, NcbcConfig(max_iters=20_000))
    np.testing.assert_allclose(res.bias, 1.0, atol=1e-3)
    assert correlation_coefficient(res.latent, blocks) >= 0.999


def test_smooth_image_is_partly_explained_as_bias():
    # a smooth image looks like a bias field: (v, 1) is not the energy
    # minimum, so starting there the descent moves the bias away from 1
    v = np.add.outer(np.linspace(0.5, 1.0, 16), np.zeros(16))
    cfg = NcbcConfig(bias_init="uniform_one", max_iters=2000)
    res = ncbc_reconstruct(v, cfg)
    trace = res.diagnostics.energy_trace
    assert trace[-1] < trace[0]
    assert np.abs(res.bias - 1).max() > 1e-3


def test_small_phantom_improves_correlation():
    obs, truth, _ = card_phantom(size=8, seed=42)
    res = ncbc_reconstruct(obs, NcbcConfig(seed=42))
    assert correlation_coefficient(res.latent, truth) > correlation_coefficient(obs, truth)


def test_normalize_bias_examples():
    b, m = normalize_bias(np.full((2, 2), 2.0), np.ones((2, 2)))
    np.testing.assert_array_equal(b, 1.0)
    np.testing.assert_array_equal(m, 2.0)
    b0 = np.array([[1.0, 3.0]])
    m0 = np.array([[5.0, 7.0]])
    b, m = normalize_bias(b0, m0)
    assert b.mean() == pytest.approx(1.0)
    np.testing.assert_allclose(m * b, m0 * b0)
    with pytest.raises(DegeneracyError):
        normalize_bias(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(DegeneracyError):
        normalize_bias(-np.ones((2, 2)), np.ones((2, 2)))


def test_normalize_bias_identity_and_product(rng):
    b0 = np.array([[0.5, 1.5], [1.0, 1.0]])
    m0 = rng.uniform(0, 3, (2, 2))
    b, m = normalize_bias(b0, m0)
    np.testing.assert_array_equal(b, b0)
    np.testing.assert_array_equal(m, m0)
    for _ in range(20):
        b0 = rng.uniform(0.01, 10, (5, 7))
        m0 = rng.uniform(0, 100, (5, 7))
        b, m = normalize_bias(b0, m0)
        assert abs(b.mean() - 1) <= 1e-12
        assert np.max(np.abs(m * b - m0 * b0)) <= 1e-9 * np.max(m0 * b0)


def test_lowpass_baseline_examples():
    v = np.full((5, 5), 2.5)
    res = lowpass_baseline(v, 2.0)
    np.testing.assert_allclose(res.bias, 1.0, atol=1e-12)
    np.testing.assert_allclose(res.latent, v, atol=1e-12)

    obs, truth, _ = card_phantom(size=32, seed=3)
    for sigma in (10 * 32, 1e6):
        wide = lowpass_baseline(obs, sigma)
        np.testing.assert_allclose(wide.bias, 1.0, atol=1e-12)
    assert lowpass_baseline(obs, 10.0).bias.mean() == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        lowpass_baseline(obs, 0.0)


@pytest.mark.parametrize("noise_fraction", [0.0, 0.05])
def test_lowpass_baseline_helps_on_phantom(noise_fraction):
    obs, truth, _ = card_phantom(size=64, seed=2, noise_fraction=noise_fraction)
    res = lowpass_baseline(obs, 64 / 3)
    assert correlation_coefficient(res.latent, truth) > correlation_coefficient(obs, truth)


@pytest.mark.parametrize("seed", range(3))
def test_energy_trace_non_increasing(seed):
    obs, _, _ = card_phantom(size=32, seed=seed)
    res = ncbc_reconstruct(obs, FAST.replace(seed=seed))
    trace = np.asarray(res.diagnostics.energy_trace)
    assert len(trace) == res.diagnostics.iters_run + 1
    assert np.all(np.diff(trace) <= 0)


def test_energy_trace_matches_public_energy():
    obs, _, _ = card_phantom(size=16, seed=5)
    cfg = NcbcConfig(max_iters=20, seed=5)
    res = ncbc_reconstruct(obs, cfg)
    s = res.diagnostics.intensity_scale
    graph = build_stochastic_graph(LatticeDims.of(obs), cfg.clique, cfg.seed)
    e = total_energy(res.latent / s, res.bias, obs / s, graph, cfg.weights)
    assert e == pytest.approx(res.diagnostics.energy_trace[-1], rel=1e-10)


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_scale_invariance(c):
    obs, _, _ = card_phantom(size=32, seed=1)
    a = ncbc_reconstruct(obs, FAST)
    b = ncbc_reconstruct(c * obs, FAST)
    np.testing.assert_allclose(b.latent, c * a.latent, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(b.bias, a.bias, rtol=1e-9)


def test_deterministic():
    obs, _, _ = card_phantom(size=24, seed=4)
    cfg = FAST.replace(seed=11)
    a, b = ncbc_reconstruct(obs, cfg), ncbc_reconstruct(obs, cfg)
    np.testing.assert_array_equal(a.latent, b.latent)
    np.testing.assert_array_equal(a.bias, b.bias)
    assert a.diagnostics.energy_trace == b.diagnostics.energy_trace


def test_resampling_is_deterministic_and_monotone_within_step():
    obs, _, _ = card_phantom(size=16, seed=4)
    cfg = NcbcConfig(max_iters=30, clique=CliqueConfig(resample_each_iteration=True), seed=3)
    a, b = ncbc_reconstruct(obs, cfg), ncbc_reconstruct(obs, cfg)
    np.testing.assert_array_equal(a.latent, b.latent)


def test_all_zero_input():
    res = ncbc_reconstruct(np.zeros((4, 5)))
    np.testing.assert_array_equal(res.latent, 0.0)
    np.testing.assert_array_equal(res.bias, 1.0)
    assert res.diagnostics.converged


@pytest.mark.parametrize(
    "v",
    [
        np.array([[1.0, np.nan], [1.0, 1.0]]),
        np.array([[1.0, np.inf], [1.0, 1.0]]),
        np.array([[1.0, -1.0], [1.0, 1.0]]),
        np.ones((1, 5)),
        np.ones(4),
    ],
)
def test_bad_input(v):
    with pytest.raises(DataError):
        ncbc_reconstruct(v)


def test_bad_config():
    for kw in ({"mu1": 0}, {"rel_tol": -1}, {"max_iters": 0}, {"bias_init": "x"}):
        with pytest.raises(ConfigError):
            NcbcConfig(**kw)


def test_bias_mean_one_and_positive():
    obs, _, _ = card_phantom(size=32, seed=6)
    res = ncbc_reconstruct(obs, FAST)
    assert res.bias.mean() == pytest.approx(1.0, abs=1e-12)
    assert np.all(res.bias > 0)
    assert np.all(res.latent >= 0)


def test_stationary_point_is_kept():
    # without pairwise terms every (m, b) with m * b == v is a minimum
    rng = np.random.default_rng(0)
    v = rng.uniform(0.5, 1.5, (6, 6))
    b = rng.uniform(0.8, 1.2, (6, 6))
    b /= b.mean()
    cfg = NcbcConfig(weights=EnergyWeights(alpha_p=(0.0,), bias_smooth_weight=0.0), max_iters=5)
    res = ncbc_reconstruct(v, cfg, init=(v / b, b))
    np.testing.assert_allclose(res.latent * res.bias, v, rtol=1e-12)
    np.testing.assert_allclose(res.bias, b, rtol=1e-12)


def test_one_iteration_from_constant_truth_is_still():
    v = np.full((6, 6), 2.0)
    res = ncbc_reconstruct(v, NcbcConfig(max_iters=1), init=(v, np.ones_like(v)))
    assert np.max(np.abs(res.latent - v)) <= 1e-9
    assert np.max(np.abs(res.bias - 1)) <= 1e-9


def test_init_shape_mismatch():
    with pytest.raises(DataError):
        ncbc_reconstruct(np.ones((3, 3)), init=(np.ones((2, 2)), np.ones((3, 3))))


@pytest.mark.parametrize("seed", [0, 1])
def test_converged_energy_not_above_quantized_minimum(seed):
    v = np.random.default_rng(seed).uniform(0.2, 1.0, (2, 2))
    cfg = NcbcConfig(seed=seed)
    res = ncbc_reconstruct(v, cfg)
    s = res.diagnostics.intensity_scale
    graph = build_stochastic_graph(LatticeDims(2, 2), cfg.clique, cfg.seed)
    e_cont = total_energy(res.latent / s, res.bias, v / s, graph, cfg.weights)
    e_grid, gap = quantized_minimum(v / s, graph, cfg.weights)
    assert e_grid >= e_cont - gap
