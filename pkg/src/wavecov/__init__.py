"""Waveform covariance design for multi-element transducer arrays.

Designs the covariance matrix of correlated transmit waveforms so the
delivered acoustic power focuses on a target region while staying capped on
the surrounding tissue, with optional robustness to steering-vector
uncertainty via semidefinite programming.
"""

from .design import (
    CovarianceDesign,
    design_nominal_eq5,
    design_nominal_generalized,
    design_robust,
    design_sum_energy_robust,
    design_weighted_robust,
)
from .evaluate import (
    PowerMap,
    ReportTable,
    WaveformBlock,
    beampattern_at,
    from_db,
    nominal_power_map,
    perturbed_power_map,
    region_report,
    synthesize_waveforms,
    to_db,
)
from .geometry import (
    ArrayGeometry,
    ConfigurationError,
    RegionGrids,
    build_curvilinear_array,
    build_region_grids,
)
from .solver import SdpProblem, SdpSolution, SolverOptions, assemble, solve
from .steering import (
    SteeringField,
    SteeringVector,
    UncertaintyModel,
    build_steering_field,
    nominal_steering,
)
from .worstcase import (
    TrsSolution,
    max_power_over_ball,
    min_power_over_ball,
    worst_case_power_map,
)

__version__ = "1.0.0"

__all__ = [
    "ArrayGeometry",
    "ConfigurationError",
    "CovarianceDesign",
    "PowerMap",
    "RegionGrids",
    "ReportTable",
    "SdpProblem",
    "SdpSolution",
    "SolverOptions",
    "SteeringField",
    "SteeringVector",
    "TrsSolution",
    "UncertaintyModel",
    "WaveformBlock",
    "assemble",
    "beampattern_at",
    "build_curvilinear_array",
    "build_region_grids",
    "build_steering_field",
    "design_nominal_eq5",
    "design_nominal_generalized",
    "design_robust",
    "design_sum_energy_robust",
    "design_weighted_robust",
    "from_db",
    "max_power_over_ball",
    "min_power_over_ball",
    "nominal_power_map",
    "perturbed_power_map",
    "nominal_steering",
    "region_report",
    "solve",
    "synthesize_waveforms",
    "to_db",
    "worst_case_power_map",
    "__version__",
]
