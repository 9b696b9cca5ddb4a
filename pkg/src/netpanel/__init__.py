"""Heterogeneous spatial panel estimation with data-driven network recovery.

The package covers the full workflow for panels where cross-section
dependence flows through an unknown sparse network: common-factor removal,
one-link-at-a-time network selection with multiple-testing control,
per-unit and mean-group IV estimation, direct/indirect/total effect
decomposition with group spill-in splits, homophily diagnostics, a
synthetic-data laboratory, and a command-line interface.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    BalanceError,
    ConfigError,
    ConvergenceError,
    DegenerateDistanceError,
    DegenerateGroupError,
    DegenerateLabelsError,
    DimensionError,
    DomainError,
    DuplicateError,
    InsufficientUnitsError,
    MetadataError,
    NetpanelError,
    NormalizationError,
    ParseError,
    QuantileError,
    SingularDesignError,
    SingularityError,
    StabilityError,
    UnderidentifiedError,
    UnreliableSEError,
    WeakInstrumentError,
)
from .estimation import MGResult, TWFEResult, UnitEstimates, estimate_all_units, mgiv, twfe, unit_iv  # noqa: F401
from .factors import (  # noqa: F401
    DefactoredPanel,
    FactorCountSelection,
    FactorModel,
    defactor,
    defactor_panel,
    estimate_factors,
    select_num_factors,
)
from .homophily import (  # noqa: F401
    HomophilyReport,
    LinkFormationFit,
    RankSumResult,
    category_homophily,
    distance_rank_sum,
    link_formation_logit,
    rank_sum_test,
)
from .impacts import (  # noqa: F401
    EffectsTable,
    ImpactMatrices,
    QuintileSpillinTable,
    SpillinTable,
    effects,
    effects_se,
    impact_matrices,
    quintile_spillins,
    spillins,
)
from .networks import (  # noqa: F401
    NetworkMatrix,
    NetworkStats,
    category_network,
    gaussian_network,
    haversine_miles,
    knn_network,
    network_stats,
    pairwise_distances,
    read_edge_list,
    row_normalize,
    threshold_distance_network,
    write_dot,
    write_edge_list,
)
from .panel import (  # noqa: F401
    FacilityMeta,
    LoadOptions,
    PanelDataset,
    load_panel,
    summarize,
    write_panel_csv,
)
from .pipeline import RunConfig, parse_network_spec, run_pipeline  # noqa: F401
from .reports import (  # noqa: F401
    homophily_payload,
    normal_p_value,
    stars,
    write_coefficient_csv,
    write_effects_csv,
    write_homophily_csv,
    write_json,
    write_quintile_spillin_csv,
    write_spillin_csv,
    write_twfe_csv,
)
from .selection import (  # noqa: F401
    AdjacencyEstimate,
    SelectionState,
    StageRecord,
    critical_value,
    estimate_network,
    iv_t_ratio,
    select_links_for_unit,
    validate_selection,
    write_trace_json,
)
from .simulate import (  # noqa: F401
    DGPConfig,
    RecoveryResult,
    SyntheticDataset,
    generate,
    recovery_experiment,
    write_truth,
)
