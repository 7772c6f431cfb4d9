"""Deformation states, nonlocal deformation gradient and skeleton force states.

All functions are vectorized over points (leading axis ``N``) or directed bonds
(leading axis ``nb``) of a :class:`~periporo.discretization.Neighborhoods`.
Sign convention: skeleton tension positive, pore-water compression positive,
so the total stress is ``sigma_eff - S_r * p_w * 1``.

2D runs are plane strain with unit (or configured) thickness.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discretization import Neighborhoods

__all__ = [
    "RetentionParams",
    "MaterialParams",
    "InvertedNeighborhoodError",
    "NonphysicalPorosityError",
    "micromodulus",
    "deformation_state",
    "deformation_gradient",
    "small_strain",
    "effective_stress",
    "elasticity_matrix",
    "stabilization_coefficient",
    "cofactor",
    "cofactor_derivative",
    "correspondence_effective_force_state",
    "residual_deformation_state",
    "dilatation",
    "ordinary_force_state",
    "fluid_force_state",
    "fracture_fluid_force_state",
    "porosity",
    "mixture_density",
]


class InvertedNeighborhoodError(RuntimeError):
    """Raised when det(F) <= 0 at some material point."""


class NonphysicalPorosityError(RuntimeError):
    """Raised when the porosity update leaves (0, 1)."""


@dataclass
class RetentionParams:
    s1: float = 0.0
    s2: float = 0.0
    sa: float = 18.6e6
    n: float = 1.7844

    @property
    def m(self) -> float:
        return (self.n - 1.0) / self.n


@dataclass
class MaterialParams:
    bulk_modulus: float
    shear_modulus: float
    solid_density: float = 2000.0
    water_density: float = 1000.0
    water_viscosity: float = 1e-3
    porosity0: float = 0.25
    permeability: float = 6e-21
    retention: RetentionParams = field(default_factory=RetentionParams)

    @property
    def youngs_modulus(self) -> float:
        K, G = self.bulk_modulus, self.shear_modulus
        return 9 * K * G / (3 * K + G)

    @property
    def poisson_ratio(self) -> float:
        K, G = self.bulk_modulus, self.shear_modulus
        return (3 * K - 2 * G) / (2 * (3 * K + G))

    def problems(self) -> list[str]:
        out = []
        for name in ("bulk_modulus", "shear_modulus", "solid_density", "water_density",
                     "water_viscosity", "permeability"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        if not 0 < self.porosity0 < 1:
            out.append("porosity0 must lie in (0, 1)")
        r = self.retention
        if not r.n > 1:
            out.append("retention.n must exceed 1")
        if not r.sa > 0:
            out.append("retention.sa must be positive")
        for name in ("s1", "s2"):
            if not 0 <= getattr(r, name) < 1:
                out.append(f"retention.{name} must lie in [0, 1)")
        return out


def micromodulus(bulk_modulus: float, horizon: float, dim: int = 3, thickness: float = 1.0,
                 shear_modulus: float = 0.0) -> float:
    """Bond micromodulus C of the matching bond-based material.

    3D: ``18 K / (pi delta^4)``.  Plane strain uses the planar bulk modulus
    ``K + G/3`` and gives ``12 (K + G/3) / (pi t delta^3)``.
    """
    if dim == 3:
        return 18.0 * bulk_modulus / (np.pi * horizon**4)
    planar = bulk_modulus + shear_modulus / 3.0
    return 12.0 * planar / (np.pi * thickness * horizon**3)


def deformation_state(hood: Neighborhoods, u: np.ndarray) -> np.ndarray:
    """Y = (x' + u') - (x + u) on every directed bond."""
    return hood.xi + u[hood.neighbor] - u[hood.owner]


def _segment_sum(hood: Neighborhoods, values: np.ndarray) -> np.ndarray:
    out = np.zeros((hood.cloud.n_points,) + values.shape[1:])
    np.add.at(out, hood.owner, values)
    return out


def deformation_gradient(hood: Neighborhoods, u: np.ndarray, Y: np.ndarray | None = None) -> np.ndarray:
    """Nonlocal F = (sum rho w Y (x) xi V') K^-1; identity at isolated points."""
    if Y is None:
        Y = deformation_state(hood, u)
    w = hood.bond_weight()
    F = _segment_sum(hood, (w[:, None] * Y)[:, :, None] * hood.kxi[:, None, :])
    F[hood.isolated] = np.eye(hood.dim)
    return F


def small_strain(F: np.ndarray) -> np.ndarray:
    eye = np.eye(F.shape[-1])
    return 0.5 * (F + np.swapaxes(F, -1, -2)) - eye


def effective_stress(F: np.ndarray, mat: MaterialParams, initial_stress: float | np.ndarray = 0.0) -> np.ndarray:
    """Isotropic small-strain elasticity on eps = sym(F) - 1, plus an initial offset.

    ``initial_stress`` is either a scalar (isotropic) or a full tensor per point.
    In 2D the out-of-plane strain is zero (plane strain) and the returned tensor
    holds the in-plane components.
    """
    J = np.linalg.det(F)
    if np.any(J <= 0):
        bad = np.flatnonzero(J <= 0)
        raise InvertedNeighborhoodError(f"det(F) <= 0 at points {bad[:10].tolist()}")
    eps = small_strain(F)
    dim = F.shape[-1]
    eye = np.eye(dim)
    tr = np.trace(eps, axis1=-2, axis2=-1)[..., None, None]
    sigma = mat.bulk_modulus * tr * eye + 2 * mat.shear_modulus * (eps - tr / 3.0 * eye)
    init = np.asarray(initial_stress, dtype=float)
    if init.ndim == 0 or init.shape == F.shape[:-2]:
        sigma = sigma + init[..., None, None] * eye
    else:
        sigma = sigma + init
    return sigma


def elasticity_matrix(mat: MaterialParams, dim: int) -> np.ndarray:
    """d sigma / d F as a (dim*dim, dim*dim) matrix acting on row-major vec(F)."""
    eye = np.eye(dim)
    K, G = mat.bulk_modulus, mat.shear_modulus
    C = np.zeros((dim, dim, dim, dim))
    for a in range(dim):
        for b in range(dim):
            for c in range(dim):
                for e in range(dim):
                    sym = 0.5 * (eye[a, c] * eye[b, e] + eye[a, e] * eye[b, c])
                    C[a, b, c, e] = (K - 2 * G / 3) * eye[a, b] * eye[c, e] + 2 * G * sym
    return C.reshape(dim * dim, dim * dim)


def cofactor(F: np.ndarray) -> np.ndarray:
    """J F^-T, computed without inversion."""
    if F.shape[-1] == 2:
        out = np.empty_like(F)
        out[..., 0, 0] = F[..., 1, 1]
        out[..., 0, 1] = -F[..., 1, 0]
        out[..., 1, 0] = -F[..., 0, 1]
        out[..., 1, 1] = F[..., 0, 0]
        return out
    c0 = np.cross(F[..., :, 1], F[..., :, 2])
    c1 = np.cross(F[..., :, 2], F[..., :, 0])
    c2 = np.cross(F[..., :, 0], F[..., :, 1])
    # columns of J F^-T are cross products of pairs of columns of F
    return np.stack([c0, c1, c2], axis=-1)


def cofactor_derivative(F: np.ndarray) -> np.ndarray:
    """d cof(F) / d F as (..., dim*dim, dim*dim) on row-major vec."""
    dim = F.shape[-1]
    if dim == 2:
        D = np.zeros(F.shape[:-2] + (4, 4))
        D[..., 0, 3] = 1.0
        D[..., 1, 2] = -1.0
        D[..., 2, 1] = -1.0
        D[..., 3, 0] = 1.0
        return D
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    # cof_iI = 1/2 e_ijk e_IJK F_jJ F_kK  ->  d cof_iI / d F_kK = e_ijk e_IJK F_jJ
    D = np.einsum("ijk,IJK,...jJ->...iIkK", eps, eps, F)
    return D.reshape(F.shape[:-2] + (9, 9))


def residual_deformation_state(hood: Neighborhoods, Y: np.ndarray, F: np.ndarray) -> np.ndarray:
    """R^s = Y - F xi (zero for any affine deformation)."""
    return Y - np.einsum("bij,bj->bi", F[hood.owner], hood.xi)


def stabilization_coefficient(hood: Neighborhoods, g_stab: float, C: float) -> np.ndarray:
    """Per-bond modulus of the zero-energy-mode control term, ``G C / |xi|``."""
    return g_stab * C / hood.length


def correspondence_effective_force_state(hood: Neighborhoods, Y: np.ndarray, F: np.ndarray,
                                         sigma: np.ndarray, g_stab: float, C: float) -> np.ndarray:
    """T_eff = rho w (P K^-1 xi + G C / |xi| R^s); zero on broken bonds."""
    w = hood.influence * hood.intact
    Rs = residual_deformation_state(hood, Y, F)
    T = np.einsum("bij,bj->bi", sigma[hood.owner], hood.kxi)
    T += stabilization_coefficient(hood, g_stab, C)[:, None] * Rs
    T *= w[:, None]
    T[hood.isolated[hood.owner]] = 0.0
    return T


def _ordinary_coefficients(mat: MaterialParams, dim: int) -> tuple[float, float]:
    if dim == 3:
        return 3 * mat.bulk_modulus, 15 * mat.shear_modulus
    return 2 * (mat.bulk_modulus + mat.shear_modulus / 3), 8 * mat.shear_modulus


def dilatation(hood: Neighborhoods, Y: np.ndarray) -> np.ndarray:
    """theta = (dim / m_v) sum rho w e x V' with e = |Y| - |xi|."""
    e = np.linalg.norm(Y, axis=1) - hood.length
    s = np.bincount(hood.owner, weights=hood.bond_weight() * e * hood.length,
                    minlength=hood.cloud.n_points)
    mv = hood.weighted_volume
    return np.divide(hood.dim * s, mv, out=np.zeros_like(s), where=mv > 0)


def ordinary_force_state(hood: Neighborhoods, Y: np.ndarray, mat: MaterialParams) -> np.ndarray:
    """Bond-parallel effective force state of the ordinary poroelastic model.

    3D: ``t = w (3K theta x / m_v + 15 G e_d / m_v)`` with ``e_d = e - theta x / 3``;
    plane strain uses ``2 (K + G/3)``, ``8 G`` and ``e_d = e - theta x / 2``.
    """
    dim = hood.dim
    y = np.linalg.norm(Y, axis=1)
    if np.any(y == 0):
        raise InvertedNeighborhoodError("coincident deformed points on a bond")
    x = hood.length
    theta = dilatation(hood, Y)[hood.owner]
    e = y - x
    ed = e - theta * x / dim
    kb, gb = _ordinary_coefficients(mat, dim)
    mv = hood.weighted_volume[hood.owner]
    t = hood.influence * hood.intact * (kb * theta * x + gb * ed) / np.where(mv > 0, mv, np.inf)
    return t[:, None] * Y / y[:, None]


def fluid_force_state(hood: Neighborhoods, pressure: np.ndarray, F: np.ndarray | None = None,
                      mode: str = "bulk", Y: np.ndarray | None = None) -> np.ndarray:
    """Pore-pressure force state per bond.

    ``bulk``: correspondence form ``w J p F^-T K^-1 xi`` on intact bonds.
    ``ordinary``: ``w (dim x / m_v) p Y / |Y|`` on intact bonds.
    ``fracture``: the ordinary form with the fracture pressure, on every bond
    whose both ends are fracture points (use :func:`fracture_fluid_force_state`
    with the Gamma mask for the solver path).

    The total force state is ``T_eff - S_r * T_w``.
    """
    p = np.asarray(pressure, dtype=float)
    if mode == "bulk":
        if F is None:
            F = np.broadcast_to(np.eye(hood.dim), (hood.cloud.n_points, hood.dim, hood.dim))
        P = p[:, None, None] * cofactor(F)
        T = np.einsum("bij,bj->bi", P[hood.owner], hood.kxi)
        return T * (hood.influence * hood.intact)[:, None]
    if Y is None:
        Y = hood.xi
    mask = hood.intact if mode == "ordinary" else np.ones(hood.n_bonds, dtype=bool)
    return fracture_fluid_force_state(hood, p, Y, mask)


def fracture_fluid_force_state(hood: Neighborhoods, p_frac: np.ndarray, Y: np.ndarray,
                               mask: np.ndarray) -> np.ndarray:
    """Ordinary fluid force state ``w (dim x / m_v0) p_f Y / |Y|`` on the masked bonds."""
    y = np.linalg.norm(Y, axis=1)
    mv0 = hood.weighted_volume0[hood.owner]
    t = hood.influence * mask * hood.dim * hood.length * p_frac[hood.owner] / mv0
    return (t / np.where(y > 0, y, 1.0))[:, None] * Y


def porosity(J: np.ndarray, porosity0: float) -> np.ndarray:
    """phi = 1 - (1 - phi0) / J; refuses values outside (0, 1)."""
    J = np.asarray(J, dtype=float)
    if np.any(J <= 0):
        raise InvertedNeighborhoodError("det(F) <= 0 in porosity update")
    phi = 1.0 - (1.0 - porosity0) / J
    if np.any((phi <= 0) | (phi >= 1)):
        bad = np.flatnonzero((phi <= 0) | (phi >= 1))
        raise NonphysicalPorosityError(f"porosity left (0, 1) at points {bad[:10].tolist()}")
    return phi


def mixture_density(phi: np.ndarray, saturation: np.ndarray, mat: MaterialParams) -> np.ndarray:
    """rho = rho_s (1 - phi) + S_r phi rho_w."""
    return mat.solid_density * (1 - phi) + saturation * phi * mat.water_density
