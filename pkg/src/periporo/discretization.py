"""Uniform material-point lattices, horizon neighborhoods and bond geometry.

Bonds are stored as flat directed arrays sorted by owner point, so that the
bond ``b = (i -> j)`` has ``owner[b] == i`` and ``neighbor[b] == j``.  Every
directed bond has a partner ``reverse[b]`` pointing the other way.  Breakage
always acts on both halves of a pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "PointCloud",
    "Neighborhoods",
    "generate_grid",
    "build_neighborhoods",
    "apply_precrack",
    "weighted_volume",
    "shape_tensor",
    "tag_band",
]

AXES = "xyz"
# Relative slack for "|xi| <= delta" on lattice distances that are exact multiples of d.
_HORIZON_SLACK = 1e-9
# A point whose smallest shape-tensor eigenvalue falls below this fraction of the
# intact isotropic value is treated as isolated.
_ISOLATION_TOL = 1e-8


@dataclass
class PointCloud:
    positions: np.ndarray
    spacing: float
    thickness: float = 1.0
    tags: dict[str, np.ndarray] = field(default_factory=dict)
    fictitious: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.fictitious is None:
            self.fictitious = np.zeros(self.n_points, dtype=bool)
        if self.lower is None:
            self.lower = self.positions.min(axis=0) - 0.5 * self.spacing
        if self.upper is None:
            self.upper = self.positions.max(axis=0) + 0.5 * self.spacing

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    @property
    def volume_per_point(self) -> float:
        d = self.spacing
        return d**3 if self.dim == 3 else d * d * self.thickness

    @property
    def volumes(self) -> np.ndarray:
        return np.full(self.n_points, self.volume_per_point)

    @property
    def face_area(self) -> float:
        """Cross-section of one material point normal to an axis."""
        d = self.spacing
        return d * d if self.dim == 3 else d * self.thickness

    def tag(self, name: str) -> np.ndarray:
        try:
            return self.tags[name]
        except KeyError:
            raise KeyError(f"unknown boundary tag {name!r}; known: {sorted(self.tags)}") from None


def generate_grid(lower: Sequence[float], upper: Sequence[float], spacing: float,
                  thickness: float = 1.0) -> PointCloud:
    """Place one material point at the center of every ``spacing``-sized cell.

    Each face of the box gets a tag (``xmin``, ``xmax``, ``ymin``, ...) holding
    the first/last layer of points along that axis.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or lower.ndim != 1 or lower.size not in (2, 3):
        raise ValueError("box corners must both be 2D or both 3D")
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    extent = upper - lower
    if np.any(extent <= 0):
        raise ValueError(f"box extents must be positive, got {extent}")
    cells = extent / spacing
    counts = np.rint(cells).astype(int)
    if np.any(np.abs(cells - counts) > 1e-9 * np.maximum(cells, 1.0)) or np.any(counts < 1):
        raise ValueError(f"box extents {extent} are not integer multiples of d={spacing}")

    axes = [lower[a] + (np.arange(counts[a]) + 0.5) * spacing for a in range(lower.size)]
    grids = np.meshgrid(*axes, indexing="ij")
    positions = np.column_stack([g.ravel() for g in grids])
    index = np.column_stack([g.ravel() for g in np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")])

    tags = {}
    for a in range(lower.size):
        tags[f"{AXES[a]}min"] = index[:, a] == 0
        tags[f"{AXES[a]}max"] = index[:, a] == counts[a] - 1
    return PointCloud(positions, float(spacing), float(thickness), tags, lower=lower, upper=upper)


def tag_band(cloud: PointCloud, name: str, axis: str | int, side: str, thickness: float,
             fictitious: bool = False) -> np.ndarray:
    """Tag every point whose center lies within ``thickness`` of a box face."""
    a = AXES.index(axis) if isinstance(axis, str) else int(axis)
    x = cloud.positions[:, a]
    if side == "min":
        mask = x - cloud.lower[a] < thickness
    elif side == "max":
        mask = cloud.upper[a] - x < thickness
    else:
        raise ValueError("side must be 'min' or 'max'")
    cloud.tags[name] = mask
    if fictitious:
        cloud.fictitious |= mask
    return mask


def constant_influence(length: np.ndarray, horizon: float) -> np.ndarray:
    return np.ones_like(length)


@dataclass
class Neighborhoods:
    cloud: PointCloud
    horizon: float
    owner: np.ndarray
    neighbor: np.ndarray
    xi: np.ndarray
    length: np.ndarray
    influence: np.ndarray
    reverse: np.ndarray
    intact: np.ndarray
    energy: np.ndarray
    offsets: np.ndarray
    weighted_volume0: np.ndarray = field(init=False)
    omega0_initial: np.ndarray = field(init=False)

    def __post_init__(self):
        self.weighted_volume0 = self._moment(self.length**2, intact_only=False)
        self.omega0_initial = self._moment(np.ones_like(self.length), intact_only=False)
        self.refresh()

    @property
    def n_bonds(self) -> int:
        return self.owner.size

    @property
    def dim(self) -> int:
        return self.cloud.dim

    @property
    def m_ratio(self) -> float:
        return self.horizon / self.cloud.spacing

    @property
    def neighbor_volume(self) -> np.ndarray:
        return self.cloud.volumes[self.neighbor]

    @property
    def owner_volume(self) -> np.ndarray:
        return self.cloud.volumes[self.owner]

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def bond_weight(self, intact_only: bool = True) -> np.ndarray:
        """Per-bond ``rho * omega * V'`` (``omega * V'`` when ``intact_only`` is False)."""
        w = self.influence * self.neighbor_volume
        return w * self.intact if intact_only else w

    def _moment(self, values: np.ndarray, intact_only: bool = True) -> np.ndarray:
        return np.bincount(self.owner, weights=self.bond_weight(intact_only) * values,
                           minlength=self.cloud.n_points)

    def refresh(self):
        """Recompute m_v, omega_0, K and K^-1 from the current bond statuses."""
        n, dim = self.cloud.n_points, self.dim
        w = self.bond_weight()
        self.weighted_volume = self._moment(self.length**2)
        self.omega0 = self._moment(np.ones_like(self.length))
        outer = w[:, None, None] * self.xi[:, :, None] * self.xi[:, None, :]
        K = np.zeros((n, dim, dim))
        np.add.at(K, self.owner, outer)
        self.shape_tensor = K

        reference = np.maximum(self.weighted_volume0 / dim, np.finfo(float).tiny)
        eig_min = np.linalg.eigvalsh(K)[:, 0]
        self.isolated = eig_min <= _ISOLATION_TOL * reference
        Kinv = np.zeros_like(K)
        ok = ~self.isolated
        Kinv[ok] = np.linalg.inv(K[ok])
        self.shape_inverse = Kinv
        # K^-1 xi per bond, zero on bonds of isolated points
        self.kxi = np.einsum("bij,bj->bi", Kinv[self.owner], self.xi)

    def break_bonds(self, mask: np.ndarray) -> np.ndarray:
        """Break the bonds in ``mask`` together with their reverse halves.

        Returns the indices of bonds that were intact and are now broken.
        """
        mask = np.asarray(mask, dtype=bool)
        mask = mask | mask[self.reverse]
        newly = np.flatnonzero(mask & self.intact)
        self.intact[newly] = False
        return newly

    def copy(self) -> "Neighborhoods":
        new = object.__new__(Neighborhoods)
        new.__dict__.update({k: (v.copy() if isinstance(v, np.ndarray) else v)
                             for k, v in self.__dict__.items()})
        return new


def build_neighborhoods(cloud: PointCloud, horizon: float,
                        influence: Callable[[np.ndarray, float], np.ndarray] = constant_influence
                        ) -> Neighborhoods:
    """All bonds with ``0 < |x_j - x_i| <= horizon``, symmetric by construction."""
    if horizon <= cloud.spacing:
        raise ValueError(f"horizon {horizon} must exceed the spacing {cloud.spacing}")
    tree = cKDTree(cloud.positions)
    pairs = tree.query_pairs(horizon * (1 + _HORIZON_SLACK), output_type="ndarray")
    n = cloud.n_points
    owner = np.concatenate([pairs[:, 0], pairs[:, 1]])
    neighbor = np.concatenate([pairs[:, 1], pairs[:, 0]])
    order = np.lexsort((neighbor, owner))
    owner, neighbor = owner[order], neighbor[order]

    key = owner.astype(np.int64) * n + neighbor
    reverse = np.searchsorted(key, neighbor.astype(np.int64) * n + owner)

    xi = cloud.positions[neighbor] - cloud.positions[owner]
    length = np.linalg.norm(xi, axis=1)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(owner, minlength=n), out=offsets[1:])
    return Neighborhoods(
        cloud=cloud,
        horizon=float(horizon),
        owner=owner,
        neighbor=neighbor,
        xi=xi,
        length=length,
        influence=np.asarray(influence(length, horizon), dtype=float),
        reverse=reverse,
        intact=np.ones(owner.size, dtype=bool),
        energy=np.zeros(owner.size),
        offsets=offsets,
    )


def weighted_volume(hood: Neighborhoods, point: int | None = None):
    """m_v = sum of rho * omega * |xi|^2 * V' over the bonds of a point."""
    return hood.weighted_volume if point is None else hood.weighted_volume[point]


def shape_tensor(hood: Neighborhoods, point: int | None = None):
    """K = sum of rho * omega * xi (x) xi * V' over the bonds of a point."""
    return hood.shape_tensor if point is None else hood.shape_tensor[point]


def _orient2d(a, b, c):
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def _crossing_2d(hood: Neighborhoods, p0, p1) -> np.ndarray:
    x = hood.cloud.positions
    xa, xb = x[hood.owner], x[hood.neighbor]
    scale = np.linalg.norm(p1 - p0) * hood.horizon
    tol = 1e-12 * scale
    s_a, s_b = _orient2d(p0, p1, xa), _orient2d(p0, p1, xb)
    strictly_opposite = ((s_a > tol) & (s_b < -tol)) | ((s_a < -tol) & (s_b > tol))
    # crack end points on (or touching) opposite sides of the bond line
    t0, t1 = _orient2d(xa, xb, p0), _orient2d(xa, xb, p1)
    return strictly_opposite & (t0 * t1 <= tol * tol)


def _crossing_3d(hood: Neighborhoods, polygon: np.ndarray) -> np.ndarray:
    x = hood.cloud.positions
    xa, xb = x[hood.owner], x[hood.neighbor]
    origin = polygon[0]
    normal = np.cross(polygon[1] - polygon[0], polygon[2] - polygon[0])
    area_scale = np.linalg.norm(normal)
    normal = normal / area_scale
    tol = 1e-12 * hood.horizon
    h_a, h_b = (xa - origin) @ normal, (xb - origin) @ normal
    opposite = ((h_a > tol) & (h_b < -tol)) | ((h_a < -tol) & (h_b > tol))
    cut = np.zeros(hood.n_bonds, dtype=bool)
    idx = np.flatnonzero(opposite)
    t = h_a[idx] / (h_a[idx] - h_b[idx])
    hit = xa[idx] + t[:, None] * (xb[idx] - xa[idx])
    inside = np.ones(idx.size, dtype=bool)
    nv = len(polygon)
    for k in range(nv):
        edge = polygon[(k + 1) % nv] - polygon[k]
        side = np.cross(edge, hit - polygon[k]) @ normal
        inside &= side >= -tol * np.linalg.norm(edge)
    cut[idx] = inside
    return cut


def apply_precrack(hood: Neighborhoods, primitive=None) -> np.ndarray:
    """Remove every bond that crosses a segment (2D) or convex planar polygon (3D).

    A bond is cut only when its two end points lie strictly on opposite sides
    of the primitive; an end point lying exactly on it does not count.  The
    end points are not promoted to fracture points.  Returns the newly broken
    bond indices.
    """
    if primitive is None:
        return np.empty(0, dtype=np.int64)
    prim = np.atleast_2d(np.asarray(primitive, dtype=float))
    cloud = hood.cloud
    if prim.shape[1] != cloud.dim:
        raise ValueError("pre-crack primitive dimension does not match the cloud")
    slack = 1e-9 * cloud.spacing
    if np.any(prim < cloud.lower - slack) or np.any(prim > cloud.upper + slack):
        raise ValueError("pre-crack primitive must lie within the domain")
    if cloud.dim == 2:
        if prim.shape[0] != 2:
            raise ValueError("a 2D pre-crack is a segment given by two end points")
        if np.linalg.norm(prim[1] - prim[0]) <= slack:
            raise ValueError("degenerate pre-crack segment (zero length)")
        cut = _crossing_2d(hood, prim[0], prim[1])
    else:
        if prim.shape[0] < 3:
            raise ValueError("a 3D pre-crack is a planar polygon with at least three vertices")
        area = np.linalg.norm(np.cross(prim[1] - prim[0], prim[2] - prim[0]))
        if area <= slack * slack:
            raise ValueError("degenerate pre-crack polygon (zero area)")
        cut = _crossing_3d(hood, prim)
    newly = hood.break_bonds(cut)
    hood.refresh()
    return newly
