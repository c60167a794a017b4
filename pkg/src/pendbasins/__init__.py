"""Basins of attraction for the pendulum with oscillating support under time-varying damping."""

from pendbasins.dynamics import DampingProfile, State, SystemParams, damping_at, vector_field
from pendbasins.integrator import IntegratorConfig, StroboscopicOrbit, integrate, stroboscopic_orbit
from pendbasins.attractor import AttractorCatalog, AttractorLabel, Kind, classify
from pendbasins.atlas import Atlas, Mesh, build_atlas, load_atlas, nearest_node, save_atlas
from pendbasins.fast_method import (
    BasinResult,
    InitialSet,
    MovementMapRecord,
    accuracy,
    choose_t1,
    fast_basins,
    full_basins,
    movement_map,
)
from pendbasins.analysis import contracted_region, density_map, find_clusters, jump_scan, overlay
from pendbasins.stats import ConfidenceSpec, ci_half_width, ci_table, within_ci

__version__ = "0.1.0"

__all__ = [
    "contracted_region",
    "density_map",
    "find_clusters",
    "jump_scan",
    "overlay",
    "Atlas",
    "AttractorCatalog",
    "AttractorLabel",
    "BasinResult",
    "ConfidenceSpec",
    "DampingProfile",
    "InitialSet",
    "IntegratorConfig",
    "Kind",
    "Mesh",
    "MovementMapRecord",
    "State",
    "StroboscopicOrbit",
    "SystemParams",
    "accuracy",
    "build_atlas",
    "choose_t1",
    "ci_half_width",
    "ci_table",
    "classify",
    "damping_at",
    "fast_basins",
    "full_basins",
    "integrate",
    "load_atlas",
    "movement_map",
    "nearest_node",
    "save_atlas",
    "stroboscopic_orbit",
    "vector_field",
    "within_ci",
]
