"""Reduced-rank correlation matrices, market-state clustering and precursor indicators."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DegenerateClusteringError,
    DegenerateResidualError,
    DegenerateWindowError,
    IngestError,
    NumericalError,
    RRStatesError,
)
from .market_data import (  # noqa: E402
    PricePanel,
    ReturnPanel,
    SectorMap,
    WindowGrid,
    build_window_grid,
    compute_log_returns,
    load_price_panel,
    load_sector_map,
    slice_window,
)
from .spectral import (  # noqa: E402
    Approach,
    ReducedRankCorr,
    SpectralResult,
    correlation_matrix,
    covariance_matrix,
    reduced_rank_pipeline,
    rescale_to_correlation,
    spectral_decompose,
    subtract_market_dyad,
)
from .indicators import (  # noqa: E402
    averaged_distance,
    distance_matrix,
    indicator_series,
    mean_matrix_value,
    sector_index,
)
from .market_states import (  # noqa: E402
    ClusterConfig,
    StateAssignment,
    cluster_states,
    detect_transition,
    kmeans,
    snapshot_sequence,
    typical_state,
)
