"""Joint bias-field correction and noise compensation for single MR slices.

A latent image and a multiplicative bias field are estimated together by
minimising the energy of a conditional random field whose pairwise cliques
are sampled stochastically over the whole lattice.
"""

__version__ = "0.1.0"

from .energy import EnergyWeights, grad_b, grad_m, pairwise_energy, total_energy, unary_energy
from .errors import (
    ConfigError,
    DataError,
    DegeneracyError,
    FormatError,
    NcbcError,
    ShapeError,
    ValidationError,
)
from .inference import (
    Diagnostics,
    NcbcConfig,
    NcbcResult,
    lowpass_baseline,
    ncbc_reconstruct,
    normalize_bias,
)
from .lattice import CliqueConfig, LatticeDims, StochasticGraph, build_stochastic_graph, neighbors
from .metrics import (
    MetricsReport,
    Roi,
    cnr_db,
    correlation_coefficient,
    cv,
    fisher_criterion,
    paired_p_value,
    probability_of_error,
    snr_db,
)
from .phantom import (
    BiasParams,
    NoiseParams,
    apply_rician_noise,
    gaussian_bias_field,
    make_synthetic_phantom,
    render_test_card,
)
