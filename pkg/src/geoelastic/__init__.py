"""Elastic distinguishability metrics for location privacy.

Build graph-induced metrics whose balls always hold enough "privacy mass",
turn them into obfuscation mechanisms with location-privacy guarantees, and
evaluate those mechanisms against Bayesian adversaries on real check-in
traces.
"""

from .grid import (
    EARTH_RADIUS_M,
    CellId,
    GridSpec,
    PlanarPoint,
    all_cell_centers,
    ball_offsets,
    cell_center,
    cell_center_latlon,
    cell_of,
    euclid_ball,
    euclidean,
    load_grid_spec,
    project,
    save_grid_spec,
    unproject,
)
from .mass import (
    MassGrid,
    MassNormalizers,
    QualityGrid,
    aggregate_quality,
    compute_normalizers,
    default_calibration_cells,
    load_mass_csv,
    load_quality_csv,
    mass_of,
    privacy_mass,
    save_mass_csv,
)
from .metric import (
    AuditReport,
    AuditViolation,
    BuildResult,
    FenceSet,
    MetricFormatError,
    MetricGraph,
    Requirement,
    audit_requirement,
    build_elastic_graph,
    deserialize,
    fenced_distance,
    frame_mask,
    frame_threshold_cells,
    load_fence_file,
    load_metric,
    reach_levels,
    save_edges_csv,
    save_metric,
    serialize,
)
from .mech import (
    EpsilonConfig,
    MechanismMatrix,
    PrivacyCheck,
    compose_level,
    expected_error,
    exponential_mechanism,
    planar_laplace_matrix,
    planar_laplace_sample,
    sample_report,
    save_matrix_csv,
    verify_dx_privacy,
)
from .evaluate import (
    CheckinRecord,
    LossSpec,
    Prior,
    adv_error,
    adv_error_optimal,
    build_prior,
    calibrate_pl,
    group_by_user,
    load_checkins,
    load_region,
    optimal_remap,
    per_user_adv_error,
    rectangle_region,
    utility,
)

__version__ = "0.1.0"
