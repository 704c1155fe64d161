"""Linear parallel interference cancellation for synchronous DS-CDMA.

Matrix-filter multistage detectors (conventional and zero-diagonal series,
eigenvalue-weighted MMSE-converging variants, per-user weighted stages),
closed-form output SINR and optimal stage weights, multicarrier Type I / II
combining, brute-force expansion oracles, and a deterministic Monte Carlo
BER harness.
"""

from .config import ConfigError, DetectorSpec, ExperimentConfig, load_config, parse_config
from .filters import (
    FILTER_KINDS,
    LimitScaling,
    MatrixFilter,
    SingularMatrixError,
    WeightSchedule,
    build_conventional,
    build_decorrelator,
    build_filter,
    build_mf,
    build_mmse,
    build_mmse_converging,
    build_modified_mmse,
    build_proposed,
    build_weighted_proposed,
    limit_scaling_matrix,
    zero_diagonal,
)
from .model import (
    NotPositiveSemidefiniteError,
    SpreadingSet,
    SymbolBlock,
    bit_decision,
    convergence_check,
    correlation_matrix,
    equicorrelated_matrix,
    generate_spreading_set,
    matched_filter_output,
    noise_transform,
    sample_channel,
    sample_noise,
)
from .multicarrier import (
    McEffectiveModel,
    build_conventional_mcc,
    build_proposed_mcc,
    effective_matrices,
    mcc_combine,
    type1_receive,
    type2_receive,
)
from .simulate import (
    BerRecord,
    SinrPoint,
    emit_csv,
    parse_records,
    render_ber_csv,
    render_sinr_csv,
    run_ber_experiment,
    run_sinr_experiment,
    wilson_interval,
)
from .sinr import (
    EquicorrSirReport,
    QCoefficients,
    SinrBreakdown,
    compute_weight_schedule,
    equicorr_sir_report,
    q_coefficients,
    q_matrix,
    sinr_breakdown,
    sinr_sweep,
)

__version__ = "0.1.0"
