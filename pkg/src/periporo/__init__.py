"""Meshfree unsaturated poromechanics with energy-based bond breakage and fracture flow."""
from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .discretization import (Neighborhoods, PointCloud, apply_precrack, build_neighborhoods, generate_grid,
                             shape_tensor, weighted_volume)
from .fracture import FractureParams, critical_energy_density, critical_energy_from_mode_I
from .io import read_snapshot, write_snapshot, write_timeseries
from .scenarios import RunOutputs, build_simulation, load_preset, run_scenario
from .solid import MaterialParams, RetentionParams
from .solver import BoundaryConditions, DisplacementBC, FluidSourceBC, Simulation, TimeIntegration

__version__ = "0.1.0"
