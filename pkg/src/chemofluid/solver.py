"""Time integration of the coupled transport-fluid system.

One step advances (n, c, u, p) with first-order IMEX splitting in the order
c -> n -> u, so the cell drift always sees the freshest chemoattractant:

    c:  explicit upwind advection by u, implicit diffusion, then consumption
        in the ratio form c <- c / (1 + dt n f(c)/max(c, c_floor)) which keeps
        c nonnegative and its sup norm non-increasing;
    n:  explicit conservative upwind fluxes for the combined drift
        u + chi(c) grad c, implicit diffusion; total mass is preserved to
        solver accuracy and n stays nonnegative under the CFL bound;
    u:  explicit advection kappa (u.grad)u (skipped for kappa = 0, the Stokes
        regime), implicit viscosity, buoyancy n grad(phi), then a MAC
        pressure projection with mean-zero gauge.

The step size combines a per-cell outflow CFL bound (exactly the positivity
condition of the upwind fluxes, equal to cfl_safety * h / speed for
unidirectional flow) with dt_max; diffusion is implicit and imposes no bound.
Implicit systems are symmetric positive (semi)definite and solved either by
cached sparse LU factorizations (default; the step size is quantized to
dt_max / 2^k so factorizations are reused) or by conjugate gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from chemofluid.fields import (
    ScalarField,
    VectorField,
    advect_conservative,
    chemotactic_face_velocity,
    divergence,
)
from chemofluid.geometry import GridGeometry
from chemofluid.model import KineticsModel, buoyancy_force

DT_UNDERFLOW = 1e-12


class SolverAbort(RuntimeError):
    """Unrecoverable state during time stepping (blow-up suspicion, lost invariants)."""

    def __init__(self, message, step_index=None, t=None, dt=None):
        ctx = []
        if step_index is not None:
            ctx.append(f"step {step_index}")
        if t is not None:
            ctx.append(f"t = {t:.6g}")
        if dt is not None:
            ctx.append(f"dt = {dt:.3g}")
        super().__init__(message + (f" [{', '.join(ctx)}]" if ctx else ""))
        self.step_index = step_index
        self.t = t
        self.dt = dt


class LinearSolverError(RuntimeError):
    """Iterative solve exceeded its iteration cap."""


@dataclass
class SolverConfig:
    dt_max: float = 0.05
    cfl_safety: float = 0.5
    end_time: float = 1.0
    tol: float = 1e-8                 # relative residual of iterative solves
    max_iters: int = 50_000
    linear_solver: str = "direct"     # "direct" (cached LU) or "cg"
    c_floor: float = 1e-10
    check_invariants: bool = True

    def __post_init__(self):
        if min(self.dt_max, self.cfl_safety, self.end_time, self.tol) <= 0:
            raise ValueError("solver parameters must be positive")
        if self.cfl_safety > 1.0:
            raise ValueError("cfl_safety must be <= 1")
        if self.linear_solver not in ("direct", "cg"):
            raise ValueError(f"unknown linear solver '{self.linear_solver}'")


@dataclass
class SimState:
    n: ScalarField
    c: ScalarField
    u: VectorField
    p: ScalarField
    t: float

    def copy(self) -> "SimState":
        return SimState(self.n.copy(), self.c.copy(), self.u.copy(), self.p.copy(), self.t)


@dataclass
class InitialData:
    """Initial fields; validate() enforces positivity and solenoidality."""

    n0: ScalarField
    c0: ScalarField
    u0: VectorField

    def validate(self, tol: float = 1e-10):
        g = self.n0.geom
        act = g.active
        if np.any(self.n0.data[act] <= 0.0):
            raise ValueError("n0 must be strictly positive on the domain")
        if np.any(self.c0.data[act] <= 0.0):
            raise ValueError("c0 must be strictly positive on the domain")
        div = divergence(self.u0)
        if np.abs(div.data).max() > tol * max(1.0, self.u0.max_speed() / g.h):
            raise ValueError("u0 is not discretely divergence-free")
        off_x = self.u0.u[~g.fluid_face_x]
        off_y = self.u0.v[~g.fluid_face_y]
        if (off_x.size and np.abs(off_x).max() > 0) or (off_y.size and np.abs(off_y).max() > 0):
            raise ValueError("u0 must vanish on and beyond the boundary faces")

    def make_state(self) -> SimState:
        g = self.n0.geom
        return SimState(self.n0.copy(), self.c0.copy(), self.u0.copy(),
                        ScalarField.zeros(g), 0.0)


# ---------------------------------------------------------------------------
# conjugate gradients
# ---------------------------------------------------------------------------

def solve_spd(operator, rhs: np.ndarray, tol: float = 1e-8, max_iters: int = 50_000,
              jacobi: np.ndarray | None = None, project=None) -> np.ndarray:
    """Conjugate gradients for a symmetric positive (semi)definite system.

    operator is a sparse matrix or a callable x -> Ax. For singular Neumann
    systems pass ``project`` to remove the nullspace component from the rhs
    and the iterates; the returned solution then has zero nullspace part.
    Optional ``jacobi`` is the diagonal for preconditioning.

    Raises LinearSolverError when the iteration cap is reached.
    """
    apply_a = operator.dot if sp.issparse(operator) else operator
    b = rhs.astype(float).copy()
    if project is not None:
        b = project(b)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x
    r = b.copy()
    z = r / jacobi if jacobi is not None else r.copy()
    p = z.copy()
    rz = float(r @ z)
    for it in range(max_iters):
        Ap = apply_a(p)
        denom = float(p @ Ap)
        if denom <= 0.0:
            if abs(denom) < 1e-300:
                return x
            raise LinearSolverError("operator is not positive definite on the Krylov space")
        alpha = rz / denom
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            if project is not None:
                x = project(x)
            return x
        z = r / jacobi if jacobi is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise LinearSolverError(f"CG did not reach {tol:.1e} in {max_iters} iterations")


# ---------------------------------------------------------------------------
# implicit operators
# ---------------------------------------------------------------------------

class LinearSystems:
    """Sparse operators of the grid plus a factorization cache.

    Scalar diffusion acts on active cells in flux form (aperture-weighted
    faces over wet volumes), so the Helmholtz system is symmetrized as
    (V - dt*L) x = V*b with V the wet-volume diagonal. Viscosity acts per
    velocity component on the fluid faces with homogeneous Dirichlet walls.
    The pressure Poisson operator on interior cells is singular (constants
    per connected component); the direct path pins one cell per component,
    the CG path projects the nullspace.
    """

    def __init__(self, geom: GridGeometry, config: SolverConfig):
        self.geom = geom
        self.config = config
        self._factor_cache: dict = {}
        self._build_scalar()
        self._build_pressure()
        self._build_viscous()

    # -- assembly ------------------------------------------------------

    def _build_scalar(self):
        g = self.geom
        act = g.active
        idx = -np.ones((g.nx, g.ny), dtype=int)
        self.n_scalar = int(act.sum())
        idx[act] = np.arange(self.n_scalar)
        self.scalar_idx = idx
        rows, cols, vals = [], [], []
        ax = g.aperture_x[1:-1, :]
        m = (ax > 0) & act[:-1, :] & act[1:, :]
        r = idx[:-1, :][m]
        c = idx[1:, :][m]
        w = ax[m]
        rows += [r, c]
        cols += [c, r]
        vals += [w, w]
        ay = g.aperture_y[:, 1:-1]
        m = (ay > 0) & act[:, :-1] & act[:, 1:]
        r = idx[:, :-1][m]
        c = idx[:, 1:][m]
        w = ay[m]
        rows += [r, c]
        cols += [c, r]
        vals += [w, w]
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        off = sp.coo_matrix((vals, (rows, cols)), shape=(self.n_scalar, self.n_scalar))
        deg = np.asarray(off.sum(axis=1)).ravel()
        # L x = sum_f a_f (x_nb - x): face flux (a h) * difference / h
        self.L_scalar = (off - sp.diags(deg)).tocsr()
        self.vol = g.cell_vol[act]

    def _build_pressure(self):
        g = self.geom
        interior = g.interior
        idx = -np.ones((g.nx, g.ny), dtype=int)
        self.n_pressure = int(interior.sum())
        idx[interior] = np.arange(self.n_pressure)
        self.pressure_idx = idx
        rows, cols = [], []
        m = interior[:-1, :] & interior[1:, :]
        rows += [idx[:-1, :][m], idx[1:, :][m]]
        cols += [idx[1:, :][m], idx[:-1, :][m]]
        m = interior[:, :-1] & interior[:, 1:]
        rows += [idx[:, :-1][m], idx[:, 1:][m]]
        cols += [idx[:, 1:][m], idx[:, :-1][m]]
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        off = sp.coo_matrix((np.ones(len(rows)), (rows, cols)),
                            shape=(self.n_pressure, self.n_pressure))
        deg = np.asarray(off.sum(axis=1)).ravel()
        self.L_pressure = (off - sp.diags(deg)).tocsr()
        labels, ncomp = ndimage.label(interior)
        self.pressure_comp = labels[interior] - 1
        self.n_comp = int(ncomp)
        self._pressure_factor = None

    def _build_viscous(self):
        g = self.geom
        self.u_idx, self.n_u, self.adj_u = self._face_adjacency(g.fluid_face_x)
        self.v_idx, self.n_v, self.adj_v = self._face_adjacency(g.fluid_face_y)

    @staticmethod
    def _face_adjacency(mask: np.ndarray):
        idx = -np.ones(mask.shape, dtype=int)
        n = int(mask.sum())
        idx[mask] = np.arange(n)
        rows, cols = [], []
        m = mask[:-1, :] & mask[1:, :]
        rows += [idx[:-1, :][m], idx[1:, :][m]]
        cols += [idx[1:, :][m], idx[:-1, :][m]]
        m = mask[:, :-1] & mask[:, 1:]
        rows += [idx[:, :-1][m], idx[:, 1:][m]]
        cols += [idx[:, 1:][m], idx[:, :-1][m]]
        if rows:
            rows = np.concatenate(rows)
            cols = np.concatenate(cols)
        adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
        return idx, n, adj

    # -- solves --------------------------------------------------------

    def _factorize(self, key, build):
        f = self._factor_cache.get(key)
        if f is None:
            f = spla.splu(build().tocsc())
            self._factor_cache[key] = f
        return f

    def helmholtz_solve(self, dt: float, rhs: ScalarField) -> ScalarField:
        """(V - dt L) x = V b: backward-Euler diffusion of a scalar."""
        g = self.geom
        act = g.active
        b = self.vol * rhs.data[act]

        def build():
            return sp.diags(self.vol) - dt * self.L_scalar

        if self.config.linear_solver == "direct":
            x = self._factorize(("helm", dt), build).solve(b)
        else:
            A = build()
            x = solve_spd(A, b, tol=self.config.tol, max_iters=self.config.max_iters,
                          jacobi=A.diagonal())
        out = np.zeros((g.nx, g.ny))
        out[act] = x
        return ScalarField(g, out)

    def viscous_solve(self, dt: float, vel: VectorField) -> VectorField:
        """(I - dt Lap) per component with no-slip walls."""
        g = self.geom
        h2 = g.h * g.h
        out = VectorField.zeros(g)
        for comp, nf, adj, mask, arr, dest in (
                ("u", self.n_u, self.adj_u, g.fluid_face_x, vel.u, out.u),
                ("v", self.n_v, self.adj_v, g.fluid_face_y, vel.v, out.v)):
            if nf == 0:
                continue
            b = arr[mask]

            def build(nf=nf, adj=adj):
                return sp.identity(nf) * (1.0 + 4.0 * dt / h2) - (dt / h2) * adj

            if self.config.linear_solver == "direct":
                x = self._factorize(("visc", comp, dt), build).solve(b)
            else:
                A = build()
                x = solve_spd(A, b, tol=self.config.tol, max_iters=self.config.max_iters,
                              jacobi=A.diagonal())
            dest[mask] = x
        return out

    def pressure_solve(self, rhs: ScalarField) -> ScalarField:
        """Neumann Poisson Lap(p) = rhs on interior cells, mean-zero gauge.

        Compatibility (zero mean of the rhs per connected component) is
        asserted before solving; a violation signals broken boundary fluxes.
        """
        g = self.geom
        interior = g.interior
        b_cells = rhs.data[interior]
        scale = float(np.abs(b_cells).sum()) + 1e-300
        for comp in range(self.n_comp):
            mcomp = self.pressure_comp == comp
            resid = abs(float(b_cells[mcomp].sum()))
            if resid > 1e-6 * scale + 1e-12:
                raise SolverAbort(
                    f"pressure rhs incompatible on component {comp}: residual {resid:.3e}")
            b_cells[mcomp] -= b_cells[mcomp].mean()
        b = b_cells * (g.h * g.h)

        if self.config.linear_solver == "direct":
            if self._pressure_factor is None:
                A = (-self.L_pressure).tolil()
                for comp in range(self.n_comp):
                    pin = int(np.nonzero(self.pressure_comp == comp)[0][0])
                    A.rows[pin] = [pin]
                    A.data[pin] = [1.0]
                self._pressure_factor = spla.splu(A.tocsc())
            x = self._pressure_factor.solve(-b)
        else:
            comp = self.pressure_comp

            def project(v):
                w = v.copy()
                for k in range(self.n_comp):
                    m = comp == k
                    w[m] -= w[m].mean()
                return w

            x = solve_spd(-self.L_pressure, -b, tol=self.config.tol,
                          max_iters=self.config.max_iters, project=project)
        for k in range(self.n_comp):
            m = self.pressure_comp == k
            x[m] -= x[m].mean()
        out = np.zeros((g.nx, g.ny))
        out[interior] = x
        return ScalarField(g, out)


# ---------------------------------------------------------------------------
# CFL control
# ---------------------------------------------------------------------------

def _outflow_sum(wx: np.ndarray, wy: np.ndarray, geom: GridGeometry) -> np.ndarray:
    """Per-cell aperture-weighted outflow rate Sum_f a_f h max(w_f . nu, 0)."""
    h = geom.h
    oE = np.maximum(wx[1:, :], 0.0) * geom.aperture_x[1:, :]
    oW = np.maximum(-wx[:-1, :], 0.0) * geom.aperture_x[:-1, :]
    oN = np.maximum(wy[:, 1:], 0.0) * geom.aperture_y[:, 1:]
    oS = np.maximum(-wy[:, :-1], 0.0) * geom.aperture_y[:, :-1]
    return (oE + oW + oN + oS) * h


def cfl_dt(state: SimState, config: SolverConfig, model: KineticsModel) -> float:
    """Advective step bound: cfl_safety times the per-cell positivity limit.

    The limit is cell_volume / outflow_rate for the larger of the fluid
    velocity alone (transport of c) and the combined drift u + chi(c) grad c
    (transport of n); for unidirectional uniform flow it reduces to
    cfl_safety * h / max_speed. Diffusion is implicit and contributes no
    bound; the result is capped at dt_max. A collapse below 1e-12 aborts
    with a blow-up report.
    """
    g = state.n.geom
    chem = chemotactic_face_velocity(state.c, model.chi)
    out_u = _outflow_sum(state.u.u, state.u.v, g)
    out_w = _outflow_sum(state.u.u + chem.u, state.u.v + chem.v, g)
    out = np.maximum(out_u, out_w)[g.active]
    vol = g.cell_vol[g.active]
    with np.errstate(divide="ignore"):
        limits = np.where(out > 0.0, vol / np.maximum(out, 1e-300), np.inf)
    dt = config.cfl_safety * float(limits.min(initial=np.inf))
    dt = min(dt, config.dt_max)
    if dt < DT_UNDERFLOW:
        k = int(np.argmin(limits))
        raise SolverAbort(
            f"dt underflow ({dt:.3e}): advective speeds suggest blow-up "
            f"(worst cell limit {limits[k]:.3e})", t=state.t)
    return dt


def quantize_dt(dt_raw: float, dt_max: float) -> float:
    """Largest dt_max / 2^k not exceeding dt_raw (reuses LU factorizations)."""
    if dt_raw >= dt_max:
        return dt_max
    k = math.ceil(math.log2(dt_max / dt_raw))
    return dt_max / (2.0 ** k)


# ---------------------------------------------------------------------------
# substeps
# ---------------------------------------------------------------------------

def step_c(state: SimState, dt: float, model: KineticsModel, lin: LinearSystems,
           c_floor: float, source: np.ndarray | None = None) -> ScalarField:
    """Advect by the fluid, diffuse implicitly, then apply consumption.

    The consumption update c/(1 + dt n f(c)/max(c, c_floor)) is exact for
    f(s) = s and keeps c in [0, max c] for any admissible f with n >= 0.
    """
    g = state.c.geom
    adv = advect_conservative(state.c, state.u)
    rhs = state.c.data + dt * adv.data
    if source is not None:
        rhs = rhs + dt * source
    c_star = lin.helmholtz_solve(dt, ScalarField(g, np.where(g.active, rhs, 0.0)))
    cs = c_star.data
    n_pos = np.maximum(state.n.data, 0.0)
    f_val = model.f(np.maximum(cs, 0.0))
    denom = 1.0 + dt * n_pos * f_val / np.maximum(cs, c_floor)
    out = np.where(g.active, cs / denom, 0.0)
    return ScalarField(g, out)


def step_n(state: SimState, c_new: ScalarField, dt: float, model: KineticsModel,
           lin: LinearSystems, source: np.ndarray | None = None) -> ScalarField:
    """Upwind transport by u + chi(c) grad c, then implicit diffusion."""
    g = state.n.geom
    chem = chemotactic_face_velocity(c_new, model.chi)
    drift = VectorField(g, state.u.u + chem.u, state.u.v + chem.v)
    adv = advect_conservative(state.n, drift)
    rhs = state.n.data + dt * adv.data
    if source is not None:
        rhs = rhs + dt * source
    n_new = lin.helmholtz_solve(dt, ScalarField(g, np.where(g.active, rhs, 0.0)))
    n_max = n_new.max_active()
    n_min = n_new.min_active()
    if n_min < -1e-10 * max(n_max, 1e-300):
        raise SolverAbort(f"cell density went negative: min n = {n_min:.3e}", t=state.t, dt=dt)
    return n_new


def _mac_advection(vel: VectorField, kappa: float) -> VectorField:
    """Explicit tendency kappa (u.grad)u, upwinded against the transport direction."""
    g = vel.geom
    h = g.h
    u, v = vel.u, vel.v
    out = VectorField.zeros(g)

    ax = -kappa * u
    ay = np.zeros_like(u)
    ay[1:-1, :] = -kappa * 0.25 * (v[:-1, :-1] + v[:-1, 1:] + v[1:, :-1] + v[1:, 1:])
    dm = np.zeros_like(u)
    dp = np.zeros_like(u)
    dm[1:, :] = (u[1:, :] - u[:-1, :]) / h
    dp[:-1, :] = (u[1:, :] - u[:-1, :]) / h
    dudx = np.where(ax > 0.0, dm, dp)
    dm = np.zeros_like(u)
    dp = np.zeros_like(u)
    dm[:, 1:] = (u[:, 1:] - u[:, :-1]) / h
    dp[:, :-1] = (u[:, 1:] - u[:, :-1]) / h
    dudy = np.where(ay > 0.0, dm, dp)
    out.u[:] = np.where(g.fluid_face_x, -(ax * dudx + ay * dudy), 0.0)

    ayv = -kappa * v
    axv = np.zeros_like(v)
    axv[:, 1:-1] = -kappa * 0.25 * (u[:-1, :-1] + u[1:, :-1] + u[:-1, 1:] + u[1:, 1:])
    dm = np.zeros_like(v)
    dp = np.zeros_like(v)
    dm[1:, :] = (v[1:, :] - v[:-1, :]) / h
    dp[:-1, :] = (v[1:, :] - v[:-1, :]) / h
    dvdx = np.where(axv > 0.0, dm, dp)
    dm = np.zeros_like(v)
    dp = np.zeros_like(v)
    dm[:, 1:] = (v[:, 1:] - v[:, :-1]) / h
    dp[:, :-1] = (v[:, 1:] - v[:, :-1]) / h
    dvdy = np.where(ayv > 0.0, dm, dp)
    out.v[:] = np.where(g.fluid_face_y, -(axv * dvdx + ayv * dvdy), 0.0)
    return out


def step_u(state: SimState, n_new: ScalarField, dt: float, model: KineticsModel,
           lin: LinearSystems, source_u: np.ndarray | None = None,
           source_v: np.ndarray | None = None) -> tuple[VectorField, ScalarField]:
    """Explicit advection + buoyancy, implicit viscosity, MAC projection.

    Solves Lap(p) = div(u*)/dt and corrects u <- u* - dt grad p, leaving the
    discrete divergence at solver accuracy and p with zero mean.
    """
    g = state.u.geom
    rhs = state.u.copy()
    if model.kappa_ns != 0.0:
        adv = _mac_advection(state.u, model.kappa_ns)
        rhs.u += dt * adv.u
        rhs.v += dt * adv.v
    if source_u is not None:
        rhs.u += dt * np.where(g.fluid_face_x, source_u, 0.0)
    if source_v is not None:
        rhs.v += dt * np.where(g.fluid_face_y, source_v, 0.0)
    rhs.u[~g.fluid_face_x] = 0.0
    rhs.v[~g.fluid_face_y] = 0.0

    u_star = lin.viscous_solve(dt, rhs)
    # buoyancy joins after the viscous solve: a pure-gradient force (the
    # hydrostatic balance with uniform n) is then removed exactly by the
    # projection instead of leaking through the no-slip viscous operator
    force = buoyancy_force(n_new, model)
    u_star.u += dt * force.u
    u_star.v += dt * force.v
    div = divergence(u_star)
    p = lin.pressure_solve(ScalarField(g, div.data / dt))
    u_new = u_star.copy()
    gpx = (p.data[1:, :] - p.data[:-1, :]) / g.h
    u_new.u[1:-1, :] -= dt * np.where(g.fluid_face_x[1:-1, :], gpx, 0.0)
    gpy = (p.data[:, 1:] - p.data[:, :-1]) / g.h
    u_new.v[:, 1:-1] -= dt * np.where(g.fluid_face_y[:, 1:-1], gpy, 0.0)
    return u_new, p


def step(state: SimState, config: SolverConfig, model: KineticsModel,
         lin: LinearSystems, dt: float | None = None, sources=None) -> SimState:
    """One full IMEX step c -> n -> u; returns the new state at t + dt.

    When dt is not supplied it is the quantized CFL bound. ``sources``, when
    given, provides manufactured right-hand sides as callables
    (x, y, t) -> array for keys 'c', 'n', 'u', 'v' (verification runs).
    """
    g = state.n.geom
    if dt is None:
        dt = quantize_dt(cfl_dt(state, config, model), config.dt_max)

    src_c = src_n = src_u = src_v = None
    if sources is not None:
        X, Y = g.cell_centers()
        t_mid = state.t
        if "c" in sources:
            src_c = np.where(g.active, sources["c"](X, Y, t_mid), 0.0)
        if "n" in sources:
            src_n = np.where(g.active, sources["n"](X, Y, t_mid), 0.0)
        if "u" in sources:
            Xf, Yf = np.meshgrid(g.xn, g.yc, indexing="ij")
            src_u = sources["u"](Xf, Yf, t_mid)
        if "v" in sources:
            Xf, Yf = np.meshgrid(g.xc, g.yn, indexing="ij")
            src_v = sources["v"](Xf, Yf, t_mid)

    c_new = step_c(state, dt, model, lin, config.c_floor, source=src_c)
    n_new = step_n(state, c_new, dt, model, lin, source=src_n)
    u_new, p_new = step_u(state, n_new, dt, model, lin, source_u=src_u, source_v=src_v)

    new = SimState(n_new, c_new, u_new, p_new, state.t + dt)
    if config.check_invariants:
        _check_state(new, config, dt)
    return new


def _check_state(state: SimState, config: SolverConfig, dt: float):
    g = state.n.geom
    state.n.check_finite("n")
    state.c.check_finite("c")
    if not (np.all(np.isfinite(state.u.u)) and np.all(np.isfinite(state.u.v))):
        raise FloatingPointError("velocity contains NaN/Inf")
    div = divergence(state.u)
    div_tol = 10.0 * config.tol / dt * max(1.0, state.u.max_speed())
    worst = float(np.abs(div.data).max())
    if worst > max(div_tol, 1e-9):
        raise SolverAbort(f"divergence {worst:.3e} above tolerance after projection",
                          t=state.t, dt=dt)
    interior = g.interior
    pmean = abs(float(state.p.data[interior].mean()))
    pmax = float(np.abs(state.p.data[interior]).max())
    if pmean > 1e-12 * max(pmax, 1e-300):
        raise SolverAbort("pressure gauge lost (nonzero mean)", t=state.t, dt=dt)
