"""Energy-based bond breakage, damage, dissipated energy and fracture-point promotion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import Neighborhoods

__all__ = [
    "FractureParams",
    "critical_energy_density",
    "critical_energy_from_mode_I",
    "accumulate_bond_energy",
    "update_bond_status",
    "compute_damage",
    "promote_fracture_points",
    "gamma_mask",
]


def critical_energy_density(horizon: float, toughness: float, dim: int = 3, thickness: float = 1.0) -> float:
    """Critical bond energy density from the fracture energy G_c.

    3D: ``4 G_c / (pi delta^4)``.  The plane analog, obtained from the same
    crossing-bond integral over a disc neighborhood, is ``3 G_c / (2 t delta^3)``.
    """
    if dim == 3:
        return 4.0 * toughness / (np.pi * horizon**4)
    return 1.5 * toughness / (thickness * horizon**3)


def critical_energy_from_mode_I(horizon: float, k_ic: float, youngs: float, poisson: float,
                                dim: int = 3, thickness: float = 1.0) -> float:
    """Same threshold with ``G_c = K_I^2 (1 - nu^2) / E``."""
    return critical_energy_density(horizon, k_ic**2 * (1 - poisson**2) / youngs, dim, thickness)


@dataclass
class FractureParams:
    critical_energy: float = np.inf
    damage_threshold: float = 0.5

    def problems(self) -> list[str]:
        out = []
        if not self.critical_energy > 0:
            out.append("fracture.critical_energy must be positive")
        if not 0 < self.damage_threshold <= 1:
            out.append("fracture.damage_threshold must lie in (0, 1]")
        return out


def accumulate_bond_energy(hood: Neighborhoods, force_state: np.ndarray, du: np.ndarray,
                           energy: np.ndarray | None = None) -> np.ndarray:
    """Add ``(T - T') . (du' - du)`` on intact bonds and return the new energies.

    ``force_state`` is the end-of-step effective force state per directed bond.
    The increment is symmetric between the two halves of a bond.
    """
    if energy is None:
        energy = hood.energy
    pair = force_state - force_state[hood.reverse]
    deta = du[hood.neighbor] - du[hood.owner]
    inc = np.einsum("bi,bi->b", pair, deta)
    return energy + np.where(hood.intact, inc, 0.0)


def update_bond_status(hood: Neighborhoods, threshold: float) -> np.ndarray:
    """Break every intact bond with energy >= threshold (both halves); returns new breaks."""
    return hood.break_bonds(hood.intact & (hood.energy >= threshold))


def compute_damage(hood: Neighborhoods) -> np.ndarray:
    """Broken fraction of the initial bond weight at each point."""
    intact = np.bincount(hood.owner, weights=hood.bond_weight(), minlength=hood.cloud.n_points)
    w0 = hood.omega0_initial
    return np.clip(1.0 - np.divide(intact, w0, out=np.ones_like(intact), where=w0 > 0), 0.0, 1.0)


def gamma_mask(hood: Neighborhoods, is_fracture: np.ndarray) -> np.ndarray:
    """Gamma = broken bond whose two end points are both fracture points."""
    return ~hood.intact & is_fracture[hood.owner] & is_fracture[hood.neighbor]


def promote_fracture_points(damage: np.ndarray, is_fracture: np.ndarray, threshold: float = 0.5
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Irreversibly flag points with damage >= threshold; returns (flags, newly promoted)."""
    new = (damage >= threshold) & ~is_fracture
    return is_fracture | new, np.flatnonzero(new)
