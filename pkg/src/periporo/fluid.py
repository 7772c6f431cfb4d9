"""Unsaturated retention, relative permeability, nonlocal flow states and fracture flow.

Pressures follow the soil-mechanics convention: ``p_w < 0`` is suction.
Mobilities always carry the water viscosity, ``k_r * k / mu_w``.
"""
from __future__ import annotations

import numpy as np

from .discretization import Neighborhoods
from .solid import RetentionParams

__all__ = [
    "retention_saturation",
    "retention_curvature",
    "relative_permeability",
    "relative_permeability_slope",
    "fluid_stabilization_parameter",
    "nonlocal_pressure_gradient",
    "residual_potential_state",
    "darcy_flux",
    "flow_state",
    "fracture_flow_state",
    "bond_aperture",
    "aperture_and_fracture_permeability",
    "leakoff_source",
    "leakoff_area",
]


def retention_saturation(p_w, ret: RetentionParams) -> tuple[np.ndarray, np.ndarray]:
    """Van Genuchten saturation and dS/dp_w; flat at its maximum for p_w >= 0."""
    p = np.asarray(p_w, dtype=float)
    s = np.maximum(-p, 0.0)
    x = (s / ret.sa) ** ret.n
    base = 1.0 + x
    S = ret.s1 + (1.0 - ret.s2) * base ** (-ret.m)
    # dS/dp = -dS/ds
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(s > 0, (s / ret.sa) ** (ret.n - 1.0), 0.0)
    dS = (1.0 - ret.s2) * ret.m * ret.n / ret.sa * ratio * base ** (-ret.m - 1.0)
    return S, dS


def retention_curvature(p_w, ret: RetentionParams) -> np.ndarray:
    """Second derivative d2S/dp_w2 (zero on the flat branch; unbounded at s -> 0 when n < 2)."""
    p = np.asarray(p_w, dtype=float)
    s = np.maximum(-p, 0.0)
    n, m, sa = ret.n, ret.m, ret.sa
    r = s / sa
    base = 1.0 + r**n
    with np.errstate(divide="ignore", invalid="ignore"):
        # dS/ds = -A r^(n-1) base^(-m-1) with A = (1-S2) m n / sa; d2S/dp2 = d2S/ds2
        A = (1.0 - ret.s2) * m * n / sa
        term1 = (n - 1.0) * r ** (n - 2.0) * base ** (-m - 1.0)
        term2 = r ** (n - 1.0) * (-m - 1.0) * base ** (-m - 2.0) * n * r ** (n - 1.0)
        out = -A * (term1 + term2) / sa
    return np.where(s > 0, out, 0.0)


def relative_permeability(S, n: float) -> np.ndarray:
    """Mualem / van Genuchten k_r = S^(1/2) [1 - (1 - S^(1/m))^m]^2."""
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise ValueError("relative permeability needs S_r > 0")
    m = (n - 1.0) / n
    Sc = np.minimum(S, 1.0)
    b = -np.expm1(np.log(Sc) / m)
    return np.sqrt(Sc) * (1.0 - b**m) ** 2


def relative_permeability_slope(S, n: float) -> np.ndarray:
    """dk_r/dS; unbounded as S -> 1 (returned finite for S < 1, and 0 at S >= 1)."""
    S = np.asarray(S, dtype=float)
    m = (n - 1.0) / n
    Sc = np.clip(S, 1e-300, 1.0)
    b = -np.expm1(np.log(Sc) / m)
    c = 1.0 - b**m
    with np.errstate(divide="ignore", invalid="ignore"):
        dc = np.where(b > 0, b ** (m - 1.0) * Sc ** (1.0 / m - 1.0), 0.0)
        out = 0.5 / np.sqrt(Sc) * c**2 + np.sqrt(Sc) * 2.0 * c * dc
    return np.where(S >= 1.0, 0.0, out)


def fluid_stabilization_parameter(water_density: float, permeability: float, horizon: float) -> float:
    """K_p = 6 rho_w k_w / (pi delta^4)."""
    return 6.0 * water_density * permeability / (np.pi * horizon**4)


def _bond_sum(hood: Neighborhoods, values: np.ndarray) -> np.ndarray:
    out = np.zeros((hood.cloud.n_points,) + values.shape[1:])
    np.add.at(out, hood.owner, values)
    return out


def nonlocal_pressure_gradient(hood: Neighborhoods, pressure: np.ndarray, which: str = "bulk",
                               gamma: np.ndarray | None = None) -> np.ndarray:
    """Nonlocal potential gradient per point.

    ``bulk``: ``sum rho w (p' - p) V' K^-1 xi`` over intact bonds.
    ``fracture``: ``(dim / m_v0) sum w (p' - p) xi V'`` over the bonds in ``gamma``.
    """
    p = np.asarray(pressure, dtype=float)
    phi = p[hood.neighbor] - p[hood.owner]
    if which == "bulk":
        w = hood.bond_weight()
        return _bond_sum(hood, (w * phi)[:, None] * hood.kxi)
    if gamma is None:
        raise ValueError("fracture gradient needs the Gamma bond mask")
    w = hood.bond_weight(intact_only=False) * gamma
    g = _bond_sum(hood, (w * phi)[:, None] * hood.xi)
    return hood.dim * g / hood.weighted_volume0[:, None]


def residual_potential_state(hood: Neighborhoods, pressure: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """R^w = Phi - grad(Phi) . xi per bond (zero for linear fields)."""
    p = np.asarray(pressure, dtype=float)
    return p[hood.neighbor] - p[hood.owner] - np.einsum("bi,bi->b", gradient[hood.owner], hood.xi)


def darcy_flux(gradient: np.ndarray, kr, permeability, viscosity: float) -> np.ndarray:
    """q = -(k_r k / mu_w) grad(Phi)."""
    mob = np.asarray(kr, dtype=float) * np.asarray(permeability, dtype=float) / viscosity
    return -mob[..., None] * gradient if np.ndim(mob) else -mob * gradient


def flow_state(hood: Neighborhoods, pressure: np.ndarray, kr: np.ndarray, permeability: float,
               viscosity: float, water_density: float, g_stab: float = 1.0,
               kp: float | None = None) -> np.ndarray:
    """Bulk scalar flow state per bond with zero-energy-mode control.

    ``Q = rho w [rho_w q . K^-1 xi - G k_r K_p / (mu_w |xi|) R^w]``.  The control
    term diffuses bond-scale pressure oscillations and vanishes for linear fields.
    """
    if kp is None:
        kp = fluid_stabilization_parameter(water_density, permeability, hood.horizon)
    grad = nonlocal_pressure_gradient(hood, pressure)
    q = darcy_flux(grad, kr, permeability, viscosity)
    Rw = residual_potential_state(hood, pressure, grad)
    w = hood.influence * hood.intact
    Q = water_density * np.einsum("bi,bi->b", q[hood.owner], hood.kxi)
    Q -= g_stab * np.asarray(kr)[hood.owner] * kp / (viscosity * hood.length) * Rw
    Q = w * Q
    Q[hood.isolated[hood.owner]] = 0.0
    return Q


def fracture_flow_state(hood: Neighborhoods, p_frac: np.ndarray, gamma: np.ndarray, kr_f: np.ndarray,
                        k_frac: np.ndarray, viscosity: float, water_density: float) -> np.ndarray:
    """Ordinary fracture flow state ``(dim / m_v0) w rho_w q_f . xi`` on Gamma bonds, no stabilization."""
    grad = nonlocal_pressure_gradient(hood, p_frac, "fracture", gamma)
    q = darcy_flux(grad, np.asarray(kr_f) * np.asarray(k_frac), 1.0, viscosity)
    coef = hood.dim * hood.influence * gamma / hood.weighted_volume0[hood.owner]
    return coef * water_density * np.einsum("bi,bi->b", q[hood.owner], hood.xi)


def bond_aperture(hood: Neighborhoods, Y: np.ndarray) -> np.ndarray:
    """Axial opening per bond ``c = Y . xi / |xi| - |xi|``."""
    return np.einsum("bi,bi->b", Y, hood.xi) / hood.length - hood.length


def aperture_and_fracture_permeability(hood: Neighborhoods, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean broken-bond aperture (negative openings clamped to 0) and cubic-law permeability.

    Points without broken bonds get ``a_f = k_f = 0``.
    """
    broken = ~hood.intact
    c = np.maximum(bond_aperture(hood, Y), 0.0)
    w = hood.bond_weight(intact_only=False) * broken
    num = np.bincount(hood.owner, weights=w * c, minlength=hood.cloud.n_points)
    den = np.bincount(hood.owner, weights=w, minlength=hood.cloud.n_points)
    a = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return a, a**2 / 12.0


def leakoff_area(hood: Neighborhoods) -> float:
    return hood.cloud.face_area


def leakoff_source(p_frac, p_bulk, kr, permeability: float, viscosity: float, spacing: float,
                   area: float, volume: float, is_fracture=True) -> np.ndarray:
    """Q_s = A [-(k_r k_w / mu_w) (p_f - p_w) / l] / V with l = d/2; zero at bulk points.

    Enters the bulk balance with + and the fracture balance with -.
    """
    l = 0.5 * spacing
    q = -np.asarray(kr) * permeability / viscosity * (np.asarray(p_frac) - np.asarray(p_bulk)) / l
    return np.where(is_fracture, area * q / volume, 0.0)
