"""Implicit fractional-step integrator: undrained mechanics, bond commit, coupled flow.

Degrees of freedom are stored point-major: displacement component ``a`` of
point ``i`` is entry ``i * dim + a`` of the flattened vector.

All sparse operators that depend only on bond statuses are rebuilt whenever a
bond breaks; operators that depend on the current iterate (stress tangent,
saturation, mobility) are rebuilt when a tangent is requested.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fluid, fracture, solid
from .discretization import Neighborhoods
from .fracture import FractureParams
from .solid import MaterialParams

log = logging.getLogger(__name__)

__all__ = [
    "TimeIntegration",
    "DisplacementBC",
    "FluidSourceBC",
    "BoundaryConditions",
    "SolverState",
    "Simulation",
    "NewtonDivergence",
    "StepRejected",
    "newmark_kinematics",
    "undrained_pressure_predictors",
    "mechanical_stage",
    "fluid_stage",
    "advance_time_step",
]


class NewtonDivergence(RuntimeError):
    pass


class StepRejected(RuntimeError):
    """A step failed even after the allowed number of time-step halvings."""

    def __init__(self, message, step=None, history=None):
        super().__init__(message)
        self.step = step
        self.history = history or []


@dataclass
class TimeIntegration:
    dt: float
    t_final: float
    beta1: float = 0.6
    beta2: float = 0.6
    beta3: float = 1.0
    tol: float = 1e-6
    max_iter: int = 30
    max_halvings: int = 4
    linear_solver: str = "direct"
    reuse_tangent: bool = True
    storage_floor: float = 1e-12
    consistent_start: bool = True

    def problems(self) -> list[str]:
        out = []
        if not self.dt > 0:
            out.append("time.dt must be positive")
        if not self.t_final >= 0:
            out.append("time.t_final must be non-negative")
        if not self.beta1 >= self.beta2 >= 0.5:
            out.append("time integration needs beta1 >= beta2 >= 0.5")
        if not self.beta3 >= 0.5:
            out.append("time integration needs beta3 >= 0.5")
        if not 0 < self.tol < 1:
            out.append("solver.tol must lie in (0, 1)")
        if self.linear_solver not in ("direct", "iterative"):
            out.append("solver.linear_solver must be 'direct' or 'iterative'")
        if not self.storage_floor > 0:
            out.append("solver.storage_floor must be positive")
        return out


@dataclass
class DisplacementBC:
    tag: str
    component: int
    rate: float = 0.0
    value: float = 0.0

    def at(self, t: float) -> float:
        return self.value + self.rate * t


@dataclass
class FluidSourceBC:
    """Volumetric water source (kg per m^3 per s) on a tagged band; negative extracts."""
    tag: str
    rate: float


@dataclass
class BoundaryConditions:
    displacement: list[DisplacementBC] = field(default_factory=list)
    sources: list[FluidSourceBC] = field(default_factory=list)
    gravity: tuple[float, ...] | None = None
    reaction_tag: str | None = None
    reaction_component: int | None = None


@dataclass
class SolverState:
    t: float
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    p: np.ndarray
    pdot: np.ndarray
    pf: np.ndarray
    pfdot: np.ndarray
    is_fracture: np.ndarray
    damage: np.ndarray
    dissipated: np.ndarray
    porosity: np.ndarray
    aperture: np.ndarray
    flow_rate: np.ndarray  # flow + leak-off + source per unit volume at the last step (1/s)
    step: int = 0
    reaction: float = 0.0
    iterations: tuple[int, int] = (0, 0)

    def copy(self) -> "SolverState":
        return SolverState(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                              for k, v in self.__dict__.items()})


def newmark_kinematics(du, u_n, v_n, a_n, dt, beta1=0.6, beta2=0.6):
    """Displacement, velocity and acceleration at n+1 from the increment."""
    u = u_n + du
    v = 2 * beta2 / (beta1 * dt) * du - (2 * beta2 / beta1 - 1) * v_n - dt * (beta2 / beta1 - 1) * a_n
    a = 2 / (beta1 * dt**2) * du - 2 / (beta1 * dt) * v_n - (1 / beta1 - 1) * a_n
    return u, v, a


def _splu(A):
    # both operators are structurally symmetric; minimum degree on A + A^T fills less than COLAMD
    return spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})


def _csr(vals, rows, cols, shape):
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape)


class _BondOperators:
    """Sparse maps that depend on bond statuses and geometry only."""

    def __init__(self, hood: Neighborhoods, g_stab: float, C: float):
        n, d, nb = hood.cloud.n_points, hood.dim, hood.n_bonds
        own, nbr = hood.owner, hood.neighbor
        V = hood.cloud.volumes
        w = hood.influence * hood.intact
        wv = w * V[nbr]
        self.w = w
        b = np.arange(nb)

        # dY/du, point-major (nb*d x n*d)
        ba = (b[:, None] * d + np.arange(d)).ravel()
        oa = (own[:, None] * d + np.arange(d)).ravel()
        na = (nbr[:, None] * d + np.arange(d)).ravel()
        ones = np.ones(nb * d)
        self.Yop = _csr([ones, -ones], [ba, ba], [na, oa], (nb * d, n * d))

        # dvec(F)/du with vec row-major over (a, c)
        B, A, Cc = np.meshgrid(b, np.arange(d), np.arange(d), indexing="ij")
        rows = (own[B] * d * d + A * d + Cc).ravel()
        val = (wv[B] * hood.kxi[B, Cc]).ravel()
        self.Bf = _csr([val, -val], [rows, rows], [(nbr[B] * d + A).ravel(), (own[B] * d + A).ravel()],
                       (n * d * d, n * d))

        # div(v) = tr(dF) = sum w V' (v' - v) . K^-1 xi
        B2, E = np.meshgrid(b, np.arange(d), indexing="ij")
        dv = (wv[B2] * hood.kxi[B2, E]).ravel()
        r2 = own[B2].ravel()
        self.Div = _csr([dv, -dv], [r2, r2], [(nbr[B2] * d + E).ravel(), (own[B2] * d + E).ravel()], (n, n * d))

        # tau_b = E1 vec(Pi_owner) + ... ; E2 picks F_owner xi for the stabilization term
        gb = solid.stabilization_coefficient(hood, g_stab, C)
        self.gb = gb
        rows_e = (B * d + A).ravel()
        cols_e = (own[B] * d * d + A * d + Cc).ravel()
        E1 = sp.csr_matrix(((w[B] * hood.kxi[B, Cc]).ravel(), (rows_e, cols_e)), shape=(nb * d, n * d * d))
        E2 = sp.csr_matrix(((w[B] * gb[B] * hood.xi[B, Cc]).ravel(), (rows_e, cols_e)), shape=(nb * d, n * d * d))
        self.E1, self.E2 = E1, E2

        vv = V[own] * V[nbr]
        vva = np.repeat(vv, d)
        self.Asm = _csr([vva, -vva], [oa, na], [ba, ba], (n * d, nb * d))
        self.AsmE1 = (self.Asm @ E1).tocsr()
        wg = np.repeat(w * gb, d)
        self.Lstab = (self.Asm @ (sp.diags(wg) @ self.Yop - E2 @ self.Bf)).tocsr()

        # scalar bond maps for the flow problem
        ones_b = np.ones(nb)
        self.Dif = _csr([ones_b, -ones_b], [b, b], [nbr, own], (nb, n))
        self.AsmP = _csr([vv, -vv], [own, nbr], [b, b], (n, nb))
        self.Own = sp.csr_matrix((ones_b, (own, b)), shape=(n, nb))


class Simulation:
    """Model definition plus evolving state; drives one time step at a time."""

    def __init__(self, hood: Neighborhoods, material: MaterialParams, fracture_params: FractureParams,
                 integration: TimeIntegration, bcs: BoundaryConditions, g_stab: float = 1.0,
                 initial_stress: float = 0.0, initial_pressure: float = 0.0):
        self.hood = hood
        self.cloud = hood.cloud
        self.mat = material
        self.frac = fracture_params
        self.ti = integration
        self.bcs = bcs
        self.g_stab = g_stab
        self.initial_stress = initial_stress
        n, d = self.cloud.n_points, self.cloud.dim
        self.dim = d
        self.C = solid.micromodulus(material.bulk_modulus, hood.horizon, d, self.cloud.thickness,
                                    material.shear_modulus)
        self.kp = fluid.fluid_stabilization_parameter(material.water_density, material.permeability, hood.horizon)
        self.Cmat = solid.elasticity_matrix(material, d)
        self.V = self.cloud.volumes
        self.gravity = np.zeros(d) if bcs.gravity is None else np.asarray(bcs.gravity, dtype=float)

        self.fixed = np.zeros(n * d, dtype=bool)
        for bc in bcs.displacement:
            if not 0 <= bc.component < d:
                raise ValueError(f"displacement component {bc.component} out of range for {d}D")
            self.fixed[np.flatnonzero(self.cloud.tag(bc.tag)) * d + bc.component] = True
        self.free = ~self.fixed
        self.detached = np.zeros(n, dtype=bool)
        self.source = np.zeros(n)
        for src in bcs.sources:
            self.source[self.cloud.tag(src.tag)] += src.rate
        if bcs.reaction_tag is None:
            loaded = [bc for bc in bcs.displacement if bc.rate != 0.0]
            self.reaction_bc = (loaded[0].tag, loaded[0].component) if loaded else None
        else:
            self.reaction_bc = (bcs.reaction_tag, bcs.reaction_component or 0)

        p0 = np.full(n, float(initial_pressure))
        self.state = SolverState(
            t=0.0, u=np.zeros((n, d)), v=np.zeros((n, d)), a=np.zeros((n, d)),
            p=p0, pdot=np.zeros(n), pf=p0.copy(), pfdot=np.zeros(n),
            is_fracture=np.zeros(n, dtype=bool), damage=fracture.compute_damage(hood),
            dissipated=np.zeros(n), porosity=np.full(n, material.porosity0), aperture=np.zeros(n),
            flow_rate=np.zeros(n),
        )
        self._ops = None
        self._flow_ops = None
        self._lu = None
        self._lu_dt = None
        self._last_mech_iters = 0
        self._started = False
        self._hold_detached()
        self.history: list[dict] = []

    def __getstate__(self):
        # factorizations are not picklable; they are rebuilt on demand
        state = self.__dict__.copy()
        state["_lu"] = None
        state["_lu_dt"] = None
        return state

    # ------------------------------------------------------------------ helpers
    @property
    def ops(self) -> _BondOperators:
        if self._ops is None:
            self._ops = _BondOperators(self.hood, self.g_stab, self.C)
        return self._ops

    def invalidate(self):
        self._ops = None
        self._lu = None
        self._flow_ops = None

    def prescribed(self, t: float) -> np.ndarray:
        n, d = self.cloud.n_points, self.dim
        out = np.zeros(n * d)
        for bc in self.bcs.displacement:
            out[np.flatnonzero(self.cloud.tag(bc.tag)) * d + bc.component] = bc.at(t)
        return out

    def gamma(self) -> np.ndarray:
        return fracture.gamma_mask(self.hood, self.state.is_fracture)

    def total_dissipated(self) -> float:
        return float(np.sum(self.state.dissipated * self.V))

    def water_content(self, state: SolverState | None = None) -> float:
        """Stored water volume sum V (phi S_r + c_f p) plus fracture storage."""
        s = self.state if state is None else state
        S, _ = fluid.retention_saturation(s.p, self.mat.retention)
        total = np.sum(self.V * (s.porosity * S + self.ti.storage_floor * s.p))
        fr = s.is_fracture
        if np.any(fr):
            Sf, _ = fluid.retention_saturation(s.pf[fr], self.mat.retention)
            total += np.sum(self.V[fr] * (Sf + self.ti.storage_floor * s.pf[fr]))
        return float(total)

    # ----------------------------------------------------------- predictors
    def predictor_terms(self, dt: float):
        """Pieces of the undrained pressure predictor that do not depend on the iterate.

        Returns (base, slope): p_tilde = base + slope * div(v_{n+1}).
        """
        s, ti, ret = self.state, self.ti, self.mat.retention
        Sn, dSn = fluid.retention_saturation(s.p, ret)
        storage = s.porosity * dSn + ti.storage_floor
        floor_active = np.count_nonzero(ti.storage_floor > s.porosity * dSn)
        if floor_active:
            log.debug("storage floor dominates the predictor at %d points", floor_active)
        rate0 = -s.flow_rate / storage
        base = s.p + dt * (1 - ti.beta3) * s.pdot + ti.beta3 * dt * rate0
        slope = -ti.beta3 * dt * Sn / storage
        pf_tilde = s.pf + dt * s.pfdot
        return base, slope, pf_tilde

    # ------------------------------------------------------------ mechanics
    def _mechanics(self, du_flat: np.ndarray, dt: float, pred, need_tangent: bool):
        """Residual (and optionally the consistent tangent) of the momentum balance."""
        s, ti, mat, hood, ops = self.state, self.ti, self.mat, self.hood, self.ops
        n, d = self.cloud.n_points, self.dim
        du = du_flat.reshape(n, d)
        u, v, a = newmark_kinematics(du, s.u, s.v, s.a, dt, ti.beta1, ti.beta2)
        uf = u.ravel()
        Y = hood.xi + (ops.Yop @ uf).reshape(-1, d)
        F = np.eye(d) + (ops.Bf @ uf).reshape(n, d, d)
        J = np.linalg.det(F)
        if np.any(J <= 0):
            raise solid.InvertedNeighborhoodError(f"det(F) <= 0 at points {np.flatnonzero(J <= 0)[:10].tolist()}")
        phi = solid.porosity(J, mat.porosity0)
        divv = ops.Div @ v.ravel()
        base, slope, pf_tilde = pred
        pt = base + slope * divv
        St, dSt = fluid.retention_saturation(pt, mat.retention)
        cof = solid.cofactor(F)
        sigma = solid.effective_stress(F, mat, self.initial_stress)
        Pi = sigma - (St * pt)[:, None, None] * cof

        tau = (ops.E1 @ Pi.reshape(-1)).reshape(-1, d)
        tau += (ops.w * ops.gb)[:, None] * Y
        tau -= (ops.E2 @ F.reshape(-1)).reshape(-1, d)

        gam = self.gamma()
        gidx = np.flatnonzero(gam)
        if gidx.size:
            Sf, _ = fluid.retention_saturation(pf_tilde, mat.retention)
            Yg = Y[gidx]
            y = np.linalg.norm(Yg, axis=1)
            coef = (hood.influence[gidx] * d * hood.length[gidx] / hood.weighted_volume0[hood.owner[gidx]]
                    * (Sf * pf_tilde)[hood.owner[gidx]])
            tau[gidx] -= (coef / y)[:, None] * Yg

        rho = solid.mixture_density(phi, St, mat)
        M = (self.V * rho)[:, None] * (a - self.gravity)
        R = M.ravel() - ops.Asm @ tau.ravel()
        out = {"R": R, "u": u, "v": v, "a": a, "Y": Y, "F": F, "sigma": sigma, "pt": pt, "phi": phi}
        if not need_tangent:
            return out

        ca = 2 / (ti.beta1 * dt**2)
        cv = 2 * ti.beta2 / (ti.beta1 * dt)
        # stress tangent blocks
        dcof = solid.cofactor_derivative(F)
        blocks = self.Cmat[None] - (St * pt)[:, None, None] * dcof
        BD = sp.block_diag(blocks, format="csr") if n < 2 else sp.bsr_matrix(
            (blocks, np.arange(n), np.arange(n + 1)), shape=(n * d * d, n * d * d)).tocsr()
        dpt = sp.diags(slope * cv) @ ops.Div          # d p_tilde / d du
        bvec = -((St + dSt * pt)[:, None] * cof.reshape(n, d * d))
        Bp = sp.csr_matrix((bvec.ravel(), (np.arange(n * d * d), np.repeat(np.arange(n), d * d))),
                           shape=(n * d * d, n))
        dPi = BD @ ops.Bf + Bp @ dpt
        K = ops.AsmE1 @ dPi + ops.Lstab

        if gidx.size:
            e = Yg / y[:, None]
            proj = (np.eye(d)[None] - e[:, :, None] * e[:, None, :]) * (coef / y)[:, None, None]
            rows = (gidx[:, None, None] * d + np.arange(d)[None, :, None]) * np.ones((1, 1, d), dtype=int)
            o = hood.owner[gidx][:, None, None] * d + np.arange(d)[None, None, :]
            nb_ = hood.neighbor[gidx][:, None, None] * d + np.arange(d)[None, None, :]
            o = np.broadcast_to(o, rows.shape)
            nb_ = np.broadcast_to(nb_, rows.shape)
            dTf = _csr([proj.ravel(), -proj.ravel()], [rows.ravel(), rows.ravel()], [nb_.ravel(), o.ravel()],
                       (hood.n_bonds * d, n * d))
            K = K - ops.Asm @ dTf

        # inertia, with porosity and saturation feeding the density
        dphi = (1 - mat.porosity0) / J**2
        drho_dJ = (mat.water_density * St - mat.solid_density) * dphi
        cofrow = sp.csr_matrix((cof.reshape(-1), (np.repeat(np.arange(n), d * d), np.arange(n * d * d))),
                               shape=(n, n * d * d))
        drho = sp.diags(drho_dJ) @ (cofrow @ ops.Bf) + sp.diags(mat.water_density * phi * dSt) @ dpt
        acc = (self.V[:, None] * (a - self.gravity)).ravel()
        arow = sp.csr_matrix((acc, (np.arange(n * d), np.repeat(np.arange(n), d))), shape=(n * d, n))
        A = sp.diags(np.repeat(self.V * rho * ca, d)) + arow @ drho - K
        out["A"] = A.tocsr()
        return out

    def mechanical_tangent(self, du_flat, dt=None):
        dt = self.ti.dt if dt is None else dt
        return self._mechanics(du_flat, dt, self.predictor_terms(dt), True)["A"]

    def mechanical_residual(self, du_flat, dt=None):
        dt = self.ti.dt if dt is None else dt
        return self._mechanics(du_flat, dt, self.predictor_terms(dt), False)["R"]

    def _factor(self, A):
        Aff = A[self.free][:, self.free].tocsc()
        if self.ti.linear_solver == "direct":
            return _splu(Aff).solve
        ilu = spla.spilu(Aff, drop_tol=1e-6, fill_factor=20)
        pre = spla.LinearOperator(Aff.shape, ilu.solve)

        def solve(b):
            x, info = spla.gmres(Aff, b, M=pre, rtol=1e-10, atol=0.0, restart=100, maxiter=50)
            if info != 0:
                raise NewtonDivergence(f"GMRES did not converge (info={info})")
            return x
        return solve

    def _force_scale(self) -> float:
        return 1e-12 * self.mat.bulk_modulus * self.cloud.face_area * self.cloud.spacing

    # ---------------------------------------------------------------- fluid
    def _fluid_operators(self):
        hood, mat, ops = self.hood, self.mat, self.ops
        n, d, nb = self.cloud.n_points, self.dim, hood.n_bonds
        b = np.arange(nb)
        own = hood.owner
        wv = ops.w * self.V[hood.neighbor]
        B2, E = np.meshgrid(b, np.arange(d), indexing="ij")
        rows = (own[B2] * d + E).ravel()
        gv = (wv[B2] * hood.kxi[B2, E]).ravel()
        G = _csr([gv, -gv], [rows, rows], [hood.neighbor[B2].ravel(), own[B2].ravel()], (n * d, n))
        Kop = sp.csr_matrix((hood.kxi.ravel(), (B2.ravel(), rows)), shape=(nb, n * d))
        Xop = sp.csr_matrix((hood.xi.ravel(), (B2.ravel(), rows)), shape=(nb, n * d))
        Rop = ops.Dif - Xop @ G
        cstab = self.g_stab * self.kp / (mat.water_viscosity * hood.length)
        L = sp.diags(ops.w) @ (mat.water_density * mat.permeability / mat.water_viscosity * (Kop @ G)
                               + sp.diags(cstab) @ Rop)

        gam = self.gamma().astype(float)
        w0 = hood.influence * gam
        mv0 = hood.weighted_volume0
        gf = (w0[B2] * self.V[hood.neighbor][B2] * hood.xi[B2, E] * d / mv0[own][B2]).ravel()
        Gf = _csr([gf, -gf], [rows, rows], [hood.neighbor[B2].ravel(), own[B2].ravel()], (n * d, n))
        Lf = sp.diags(mat.water_density / mat.water_viscosity * d * w0 / mv0[own]) @ (Xop @ Gf)
        return L.tocsr(), Lf.tocsr()

    def _fluid_residual(self, x, fidx, aux, need_jac):
        s, mat, ti, ops = self.state, self.mat, self.ti, self.ops
        n = self.cloud.n_points
        dt, L, Lf, divv, kf, phi = aux["dt"], aux["L"], aux["Lf"], aux["divv"], aux["kf"], aux["phi"]
        ret = mat.retention
        cf = ti.storage_floor
        V = self.V
        p = x[:n]
        pf = s.pf.copy()
        pf[fidx] = x[n:]

        S, dS = fluid.retention_saturation(p, ret)
        kr = fluid.relative_permeability(S, ret.n)
        dkr = fluid.relative_permeability_slope(S, ret.n) * dS
        Lp = L @ p
        Q = -kr[self.hood.owner] * Lp
        own = self.hood.owner

        st_p, dst_p = self._storage(p, s.p, s.pdot, phi, dt)
        rp = V * st_p + dt / mat.water_density * (ops.AsmP @ Q) + dt * S * divv * V
        rp += -dt * V * self.source / mat.water_density

        nf = fidx.size
        if nf:
            area = self.cloud.face_area
            kap = dt * area * mat.permeability / (mat.water_viscosity * 0.5 * self.cloud.spacing)
            Qs = -kap * kr[fidx] * (pf[fidx] - p[fidx])
            rp[fidx] += Qs
            Sf, dSf = fluid.retention_saturation(pf, ret)
            krf = fluid.relative_permeability(Sf, ret.n)
            dkrf = fluid.relative_permeability_slope(Sf, ret.n) * dSf
            Lfp = Lf @ pf
            mobf = krf * kf
            Qf = -mobf[own] * Lfp
            st_f, dst_f = self._storage(pf[fidx], s.pf[fidx], s.pfdot[fidx], np.ones(nf), dt)
            rf = V[fidx] * st_f + (dt / mat.water_density * (ops.AsmP @ Qf))[fidx] - Qs
        else:
            rf = np.zeros(0)
        r = np.concatenate([rp, rf])
        out = {"r": r, "Q": Q, "p": p, "pf": pf}
        if nf:
            out["Qs"] = Qs
        if not need_jac:
            return out

        c = dt / mat.water_density
        dQ = -(sp.diags(kr[own]) @ L) - sp.diags(Lp) @ (ops.Own.T @ sp.diags(dkr))
        Jpp = sp.diags(V * dst_p + dt * dS * divv * V) + c * (ops.AsmP @ dQ)
        if not nf:
            return out | {"J": Jpp.tocsr()}
        dQs_dp = kap * kr[fidx] - kap * dkr[fidx] * (pf[fidx] - p[fidx])
        dQs_dpf = -kap * kr[fidx]
        sel = sp.csr_matrix((np.ones(nf), (np.arange(nf), fidx)), shape=(nf, n))
        Jpp = Jpp + sel.T @ sp.diags(dQs_dp) @ sel
        Jpf = sel.T @ sp.diags(dQs_dpf)
        dQf = -(sp.diags(mobf[own]) @ Lf) - sp.diags(Lfp) @ (ops.Own.T @ sp.diags(dkrf * kf))
        Jff = sp.diags(V[fidx] * dst_f - dQs_dpf) + c * (sel @ ops.AsmP @ dQf @ sel.T)
        Jfp = -sp.diags(dQs_dp) @ sel
        J = sp.bmat([[Jpp, Jpf], [Jfp, Jff]], format="csr")
        return out | {"J": J}

    def _storage(self, p, p_n, pdot_n, phi, dt):
        """Mass-conservative storage term and its derivative in the pressure increment."""
        ti, ret = self.ti, self.mat.retention
        cf = ti.storage_floor
        S, dS = fluid.retention_saturation(p, ret)
        Sn, _ = fluid.retention_saturation(p_n, ret)
        dp = p - p_n
        if ti.beta3 == 1.0:
            return phi * (S - Sn) + cf * dp, phi * dS + cf
        small = np.abs(dp) < 1e-9 * (np.abs(p_n) + ret.sa)
        safe = np.where(small, 1.0, dp)
        chord = np.where(small, dS, (S - Sn) / safe)
        dchord = np.where(small, 0.5 * fluid.retention_curvature(p, ret), (dS - chord) / safe)
        h = dp / ti.beta3 - dt * (1 / ti.beta3 - 1) * pdot_n
        g = phi * chord + cf
        return g * h, phi * dchord * h + g / ti.beta3

    # ---------------------------------------------------------- step phases
    def mechanical_stage(self, dt: float):
        s, ti = self.state, self.ti
        n, d = self.cloud.n_points, self.dim
        pred = self.predictor_terms(dt)
        du = np.zeros(n * d)
        du[self.fixed] = self.prescribed(s.t + dt)[self.fixed] - s.u.ravel()[self.fixed]
        refresh = (self._lu is None or not ti.reuse_tangent or self._lu_dt != dt
                   or self._last_mech_iters > 6)
        res = self._mechanics(du, dt, pred, refresh)
        if refresh:
            self._lu, self._lu_dt = self._factor(res["A"]), dt
        r0 = np.linalg.norm(res["R"][self.free])
        atol = self._force_scale()
        norms = [r0]
        k = 0
        while norms[-1] > max(ti.tol * r0, atol):
            if k >= ti.max_iter:
                raise NewtonDivergence(f"mechanical Newton: no convergence in {k} iterations, history {norms}")
            du[self.free] -= self._lu(res["R"][self.free])
            k += 1
            res = self._mechanics(du, dt, pred, False)
            rn = np.linalg.norm(res["R"][self.free])
            if not np.isfinite(rn):
                raise NewtonDivergence("mechanical residual is not finite")
            if rn > 0.5 * norms[-1]:
                res = self._mechanics(du, dt, pred, True)
                self._lu, self._lu_dt = self._factor(res["A"]), dt
            norms.append(rn)
        self._last_mech_iters = k
        return du, res, k, norms

    def commit_fracture(self, du: np.ndarray, res: dict) -> np.ndarray:
        """Bond energies from end-of-step effective force states, breakage, damage, promotion."""
        hood, s, ops = self.hood, self.state, self.ops
        d = self.dim
        tbar = (ops.E1 @ res["sigma"].reshape(-1)).reshape(-1, d)
        tbar += (ops.w * ops.gb)[:, None] * res["Y"]
        tbar -= (ops.E2 @ res["F"].reshape(-1)).reshape(-1, d)
        hood.energy = fracture.accumulate_bond_energy(hood, tbar, du.reshape(-1, d))
        newly = fracture.update_bond_status(hood, self.frac.critical_energy)
        if newly.size:
            half = 0.5 * hood.energy[newly] * self.V[hood.neighbor[newly]]
            np.add.at(s.dissipated, hood.owner[newly], half)
            hood.refresh()
            self.invalidate()
            self._hold_detached()
            s.damage = np.maximum(s.damage, fracture.compute_damage(hood))
            flags, promoted = fracture.promote_fracture_points(s.damage, s.is_fracture, self.frac.damage_threshold)
            if promoted.size:
                s.pf[promoted] = s.p[promoted]
                s.pfdot[promoted] = s.pdot[promoted]
            s.is_fracture = flags
        return newly

    def _hold_detached(self):
        """Points with no intact bond carry no stiffness; hold them where they are."""
        hood, s, d = self.hood, self.state, self.dim
        n_intact = np.bincount(hood.owner, weights=hood.intact.astype(float), minlength=self.cloud.n_points)
        detached = n_intact == 0
        if np.count_nonzero(detached) > np.count_nonzero(self.detached):
            log.debug("%d points have lost all bonds and are held fixed", np.count_nonzero(detached))
        self.detached = detached
        self.free = ~self.fixed & ~np.repeat(detached, d)

    def fluid_system(self, dt: float, v: np.ndarray, phi: np.ndarray, Y: np.ndarray):
        """(aux, fracture indices) describing the flow problem for a fixed skeleton state."""
        # the flow operators change only when bonds break or fracture points are promoted
        cache = self._flow_ops
        if cache is None or cache[0] is not self.ops or not np.array_equal(cache[1], self.state.is_fracture):
            cache = (self.ops, self.state.is_fracture.copy(), *self._fluid_operators())
            self._flow_ops = cache
        L, Lf = cache[2], cache[3]
        a_f, kf = fluid.aperture_and_fracture_permeability(self.hood, Y)
        aux = {"dt": dt, "L": L, "Lf": Lf, "divv": self.ops.Div @ v.ravel(), "kf": kf, "phi": phi, "a_f": a_f}
        return aux, np.flatnonzero(self.state.is_fracture)

    def fluid_residual(self, x: np.ndarray, system, jacobian: bool = False):
        """Residual (and Jacobian) of the flow problem at unknowns ``[p_w, p_f at fracture points]``."""
        aux, fidx = system
        out = self._fluid_residual(x, fidx, aux, jacobian)
        return (out["r"], out["J"]) if jacobian else out["r"]

    def fluid_stage(self, dt: float, v: np.ndarray, phi: np.ndarray, Y: np.ndarray):
        s, ti, mat = self.state, self.ti, self.mat
        aux, fidx = self.fluid_system(dt, v, phi, Y)
        a_f = aux["a_f"]
        base, slope, pf_tilde = self.predictor_terms(dt)
        p_guess = base + slope * aux["divv"]
        x = np.concatenate([p_guess, pf_tilde[fidx]])
        out = self._fluid_residual(x, fidx, aux, False)
        r0 = np.linalg.norm(out["r"])
        # the undrained guess can be poor; fall back to the previous pressures if it is worse
        x_alt = np.concatenate([s.p, s.pf[fidx]])
        alt = self._fluid_residual(x_alt, fidx, aux, False)
        if np.linalg.norm(alt["r"]) < r0 or not np.isfinite(r0):
            x, out, r0 = x_alt, alt, np.linalg.norm(alt["r"])
        atol = 1e-15 * np.sum(self.V)
        # pressure increments this small are below what the residual can resolve
        xtol = 1e-3 * ti.tol * (mat.retention.sa + np.max(np.abs(x)))
        norms = [r0]
        k = 0
        lu = None           # chord iterations: refactor only on poor contraction or a failed search
        while norms[-1] > max(ti.tol * r0, atol):
            if k >= ti.max_iter:
                raise NewtonDivergence(f"fluid Newton: no convergence in {k} iterations, history {norms}")
            fresh = lu is None
            if fresh:
                if "J" not in out:
                    out = self._fluid_residual(x, fidx, aux, True)
                lu = _splu(out["J"])
            step = lu.solve(out["r"])
            if not np.all(np.isfinite(step)):
                raise NewtonDivergence("fluid Newton step is not finite")
            # backtrack when the full step overshoots across the retention kink
            small = np.max(np.abs(step)) <= xtol
            lam = 1.0
            for _ in range(12):
                trial = self._fluid_residual(x - lam * step, fidx, aux, False)
                rn = np.linalg.norm(trial["r"])
                if np.isfinite(rn) and rn < norms[-1]:
                    break
                lam *= 0.5
            else:
                if not fresh:
                    lu = None
                    continue
                if small:       # already at the round-off floor of the residual
                    break
                raise NewtonDivergence(f"fluid Newton: line search failed, history {norms}")
            k += 1
            x, out = x - lam * step, trial
            if rn > 0.25 * norms[-1]:
                lu = None
            norms.append(rn)
            if small and fresh:
                break

        # flow + leak-off + source per unit volume, reused by the next predictor
        rate = (self.ops.AsmP @ out["Q"]) / (mat.water_density * self.V) - self.source / mat.water_density
        if fidx.size:
            rate[fidx] += out["Qs"] / (dt * self.V[fidx])
        p = out["p"]
        pf = out["pf"]
        b3 = ti.beta3
        pdot = (p - s.p) / (b3 * dt) - (1 / b3 - 1) * s.pdot
        pfdot = (pf - s.pf) / (b3 * dt) - (1 / b3 - 1) * s.pfdot
        return p, pdot, pf, pfdot, rate, a_f, k, norms

    def reaction_force(self, R: np.ndarray) -> float:
        if self.reaction_bc is None:
            return 0.0
        tag, comp = self.reaction_bc
        idx = np.flatnonzero(self.cloud.tag(tag)) * self.dim + comp
        return float(np.sum(R[idx]))

    def applied_displacement(self, t: float) -> float:
        if self.reaction_bc is None:
            return 0.0
        tag, comp = self.reaction_bc
        for bc in self.bcs.displacement:
            if bc.tag == tag and bc.component == comp:
                return bc.at(t)
        return 0.0

    def _single_step(self, dt: float):
        s = self.state
        du, res, km, mech_norms = self.mechanical_stage(dt)
        self.commit_fracture(du, res)
        p, pdot, pf, pfdot, rate, a_f, kfl, fl_norms = self.fluid_stage(dt, res["v"], res["phi"], res["Y"])
        s.u, s.v, s.a = res["u"], res["v"], res["a"]
        s.v[self.detached] = 0.0
        s.a[self.detached] = 0.0
        s.p, s.pdot, s.pf, s.pfdot = p, pdot, pf, pfdot
        s.flow_rate = rate
        s.porosity = res["phi"]
        s.aperture = a_f
        s.t = s.t + dt
        s.reaction = self.reaction_force(res["R"])
        s.iterations = (km, kfl)
        log.debug("t=%.6g mech iters=%d fluid iters=%d", s.t, km, kfl)

    def initialize_velocity(self) -> np.ndarray:
        """Start from the undrained quasi-static velocity matching the prescribed rates.

        With beta1 = beta2 the velocity recursion is ``v' = 2 du / dt - v``; starting
        from rest under a ramp it alternates between 0 and twice the rate and the
        undrained pressure predictor inherits the oscillation.  Solving the rate
        problem once removes it.
        """
        n, d = self.cloud.n_points, self.dim
        rates = np.zeros(n * d)
        for bc in self.bcs.displacement:
            rates[np.flatnonzero(self.cloud.tag(bc.tag)) * d + bc.component] = bc.rate
        if not np.any(rates):
            return self.state.v
        # a long step makes the inertia terms vanish and leaves the undrained stiffness
        A = self.mechanical_tangent(np.zeros(n * d), 1e6 * self.ti.dt)
        v = rates.copy()
        rhs = -(A[self.free][:, self.fixed] @ rates[self.fixed])
        v[self.free] = self._factor(A)(rhs)
        self.state.v = v.reshape(n, d)
        return self.state.v

    def advance(self, dt: float | None = None) -> SolverState:
        """One full step with rejection and halving on failure."""
        dt = self.ti.dt if dt is None else dt
        if not dt > 0:
            raise ValueError("time step must be positive")
        if self.state.step == 0 and self.ti.consistent_start and not self._started:
            self.initialize_velocity()
        self._started = True
        failures = []
        for level in range(self.ti.max_halvings + 1):
            nsub = 2**level
            h = dt / nsub
            saved_state, saved_hood = self.state.copy(), self.hood.copy()
            try:
                for _ in range(nsub):
                    self._single_step(h)
                break
            except (NewtonDivergence, solid.InvertedNeighborhoodError, solid.NonphysicalPorosityError,
                    RuntimeError, np.linalg.LinAlgError) as exc:
                failures.append(f"dt={h:.4g}: {exc}")
                log.warning("step %d rejected at dt=%.4g: %s", self.state.step + 1, h, exc)
                self.state, self.hood = saved_state, saved_hood
                self.invalidate()
                self._hold_detached()
        else:
            raise StepRejected(f"step {self.state.step + 1} failed after {self.ti.max_halvings} halvings",
                               step=self.state.step + 1, history=failures)
        self.state.step += 1
        return self.state


def undrained_pressure_predictors(sim: Simulation, div_v: np.ndarray, dt: float | None = None):
    """(p_tilde, p_f_tilde, pdot_tilde, p_fdot_tilde) for a given velocity divergence."""
    dt = sim.ti.dt if dt is None else dt
    base, slope, pf_tilde = sim.predictor_terms(dt)
    pt = base + slope * div_v
    s, b3 = sim.state, sim.ti.beta3
    pdot = (pt - s.p - dt * (1 - b3) * s.pdot) / (b3 * dt)
    return pt, pf_tilde, pdot, s.pfdot.copy()


def mechanical_stage(sim: Simulation, dt: float | None = None):
    return sim.mechanical_stage(sim.ti.dt if dt is None else dt)


def fluid_stage(sim: Simulation, dt: float, v: np.ndarray, phi: np.ndarray, Y: np.ndarray):
    return sim.fluid_stage(dt, v, phi, Y)


def advance_time_step(sim: Simulation, dt: float | None = None) -> SolverState:
    return sim.advance(dt)
