"""AFDM link-level simulation toolkit.

Builds chirp-multiplexed frames, runs them through synthetic
doubly-dispersive channels, and benchmarks zero-forcing, Wiener,
exhaustive-search, message-passing, and variational Bayesian detectors
under a seeded Monte-Carlo harness.
"""

from .afdm import (
    AfdmParams,
    DaftOperator,
    append_cpp,
    build_daft,
    cpp_phase_factors,
    default_chirp_rates,
    demodulate,
    demodulate_fast,
    modulate,
    modulate_fast,
)
from .channel import (
    ChannelPath,
    ChannelProfile,
    ChannelRealization,
    EffectiveChannel,
    apply_channel_time,
    build_time_matrix,
    effective_channel,
    sample_realization,
)
from .constellation import Constellation, build_constellation, demap_hard, map_bits
from .detectors import (
    DetectionResult,
    DetectorConfig,
    ScalarObservation,
    VbState,
    elbo_diagnostic,
    lmmse_detect,
    map_detect,
    mpa_detect,
    residual_vb,
    vb_detect,
    zf_detect,
)
from .errors import ConfigError, SingularChannelError
from .simharness import (
    BerResult,
    DetectorSpec,
    ResidualReport,
    SimConfig,
    replay_trial,
    run_ber,
    run_residuals,
    split_seed,
)

__version__ = "0.1.0"
