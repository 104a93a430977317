"""Simulation and likelihood-based inference for spatiotemporal metapopulation models."""

from .anomaly import AnomalyMatrix, anomalies, top_outliers
from .benchmarks import NegBinArFit, NegBinIidFit, conditional_logliks, fit_ar, fit_iid, negbin_logpmf
from .core import (
    DomainError,
    ObservationPanel,
    ParameterSet,
    RngStream,
    Simulation,
    SpatPompModel,
    TimeGrid,
    UnitGraph,
    from_estimation_scale,
    percentile_summary,
    simulate,
    to_estimation_scale,
)
from .filters import FilterResult, block_particle_filter, compare_filters, enkf, particle_filter
from .ibpf import ParamTrace, PerturbationSchedule, ibpf, replicated_search
from .mobility import (
    GeoTable,
    GravityConfig,
    MobilityTensor,
    connectivity_check,
    great_circle_distance,
    gravity_adjust,
    interpolate_missing_flows,
)
from .profile import BoundaryMaximumError, McapResult, ProfilePoint, boundary_lrt, mcap, profile_grid
from .seair import PRESETS, SeairModel, SeairParams, r0
from .synthetic import make_synthetic

__version__ = "0.1.0"
