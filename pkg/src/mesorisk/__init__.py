"""Mesoscale structure and default risk for credit spread panels.

The library walks a spread panel through the full study: log-returns at
several sampling resolutions, correlation spectra filtered against the
random-matrix noise band, community detection on the filtered structure,
partition stability metrics, factor models built from the detected
groups, and a Monte Carlo default-loss engine with VaR reporting.
"""
from .community import (
    CommunityNode,
    DetectionContext,
    Hierarchy,
    Partition,
    community_name,
    detect,
    detect_strength_null,
    hierarchy,
    louvain,
    modularity,
)
from .errors import (
    ConfigError,
    DataError,
    EmptyPanelError,
    MesoriskError,
    NumericalError,
    PanelFormatError,
    ZeroVarianceError,
)
from .estimators import CreditFactorModel, RMTCommunityDetection
from .factors import (
    VARIANTS,
    CalibratedModel,
    CorrelationErrorReport,
    FactorDiagnostics,
    FactorSet,
    build_factors,
    calibrate,
    correlation_error_report,
    model_implied_correlations,
    orthogonalize,
    variant_name,
)
from .panels import (
    IssuerMeta,
    LoadReport,
    Resolution,
    ReturnPanel,
    SpreadPanel,
    load_panel,
    log_returns,
    read_meta,
    standardize,
    windows,
)
from .partitions import (
    CooccurrenceMatrix,
    StabilityReport,
    cooccurrence,
    joint_entropy,
    mutual_information,
    stability_study,
    variation_of_information,
)
from .risk import (
    DEFAULT_PD_TABLE,
    NORMAL_REFERENCE_RATIO,
    LossDistribution,
    Portfolio,
    Position,
    QuantileReport,
    RatingPDTable,
    bind_portfolio,
    default_threshold,
    load_portfolio_csv,
    pd_lookup,
    quantile_report,
    save_portfolio_csv,
    schematic_portfolio,
    simulate,
    var,
    vasicek_var,
)
from .rmt import (
    CorrelationMatrix,
    MPBounds,
    ShuffleResult,
    SpectralDecomposition,
    correlation,
    decompose,
    mp_bounds,
    shuffle_test,
)
from .rng import block_generator, block_paths, derive_seed, seed_sequence, substream

__version__ = "0.1.0"

__all__ = [
    "CalibratedModel",
    "CommunityNode",
    "ConfigError",
    "CooccurrenceMatrix",
    "CorrelationErrorReport",
    "CorrelationMatrix",
    "CreditFactorModel",
    "DEFAULT_PD_TABLE",
    "DataError",
    "DetectionContext",
    "EmptyPanelError",
    "FactorDiagnostics",
    "FactorSet",
    "Hierarchy",
    "IssuerMeta",
    "LoadReport",
    "LossDistribution",
    "MPBounds",
    "MesoriskError",
    "NORMAL_REFERENCE_RATIO",
    "NumericalError",
    "PanelFormatError",
    "Partition",
    "Portfolio",
    "Position",
    "QuantileReport",
    "RMTCommunityDetection",
    "RatingPDTable",
    "Resolution",
    "ReturnPanel",
    "ShuffleResult",
    "SpectralDecomposition",
    "SpreadPanel",
    "StabilityReport",
    "VARIANTS",
    "ZeroVarianceError",
    "bind_portfolio",
    "block_generator",
    "block_paths",
    "build_factors",
    "calibrate",
    "community_name",
    "cooccurrence",
    "correlation",
    "correlation_error_report",
    "decompose",
    "default_threshold",
    "derive_seed",
    "detect",
    "detect_strength_null",
    "hierarchy",
    "joint_entropy",
    "load_panel",
    "load_portfolio_csv",
    "log_returns",
    "louvain",
    "model_implied_correlations",
    "modularity",
    "mp_bounds",
    "mutual_information",
    "orthogonalize",
    "pd_lookup",
    "quantile_report",
    "read_meta",
    "save_portfolio_csv",
    "schematic_portfolio",
    "seed_sequence",
    "shuffle_test",
    "simulate",
    "stability_study",
    "standardize",
    "substream",
    "var",
    "variant_name",
    "variation_of_information",
    "vasicek_var",
    "windows",
]
