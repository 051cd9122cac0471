"""DC state estimation, bad-data identification and minimum-cardinality data attacks."""
from .attacks import (
    AttackVector,
    Verdict,
    assemble_attack,
    check_bounds,
    detectable_mincut,
    detectable_oracle,
    detectable_sdp,
    hidden_attack,
    verify_end_to_end,
)
from .estimator import detect, identify_and_clean, residual_analysis, wls_estimate
from .graphcut import Cut, connected_after_removal, cut_of_partition, enumerate_optimal_cut, stoer_wagner_min_cut
from .grid import (
    GridTopology,
    Line,
    MeasurementDescriptor,
    MeasurementGraph,
    MeasurementSystem,
    build_measurement_system,
    ieee14,
    import_matpower,
    to_graph,
)

__version__ = "0.1.0"
