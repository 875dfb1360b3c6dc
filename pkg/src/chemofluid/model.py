"""Kinetics model: sensitivity chi(c), consumption f(c), gravitational potential.

The transport coupling is stable only for model functions with a specific
structure; ``validate_assumptions`` checks it on [0, c_max] before any run:

    chi in C^2, chi > 0
    f in C^2, f(0) = 0, f > 0 on (0, c_max]
    (f/chi)' > 0,   (f/chi)'' <= 0,   (chi*f)' >= 0

From g = f/chi the diagnostics use two integral transforms anchored at 1,

    psi(s) = int_1^s dsigma / sqrt(g(sigma)),   rho(s) = int_1^s dsigma / g(sigma),

tabulated once by adaptive Simpson quadrature and evaluated through monotone
cubic interpolation. Since g(0) = 0 both transforms blow up as s -> 0+, the
regime the decaying chemoattractant enters at late times, so all evaluations
clamp their argument at a configurable floor c_floor > 0.

Models and derived tables are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from chemofluid.fields import ScalarField, VectorField
from chemofluid.geometry import GridGeometry

DEFAULT_C_FLOOR_REL = 1e-10


class ModelError(ValueError):
    """Model functions violate the structural assumptions."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to converge while tabulating a transform."""


@dataclass(frozen=True)
class KineticsModel:
    """chi, f with two derivatives each, gravitational potential, fluid regime.

    kappa_ns = 0 selects the Stokes fluid, any other value the Navier-Stokes
    advection with that prefactor. The potential defaults to phi = -G*y
    (gravity pointing down for G > 0) but arbitrary smooth potentials can be
    supplied as (phi_pot, grad_phi_pot) callables.
    """

    chi: Callable
    chi_p: Callable
    chi_pp: Callable
    f: Callable
    f_p: Callable
    f_pp: Callable
    kappa_ns: float = 0.0
    grav: float = 1.0
    phi_pot: Callable | None = None
    grad_phi_pot: Callable | None = None
    name: str = "custom"

    def potential(self, x, y):
        if self.phi_pot is not None:
            return self.phi_pot(x, y)
        return -self.grav * np.asarray(y, dtype=float)

    def potential_gradient(self, x, y):
        if self.grad_phi_pot is not None:
            return self.grad_phi_pot(x, y)
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x), np.full_like(x, -self.grav)

    # g = f / chi and its derivatives, straight from the user callables
    def g(self, s):
        return self.f(s) / self.chi(s)

    def g_prime(self, s):
        chi, f = self.chi(s), self.f(s)
        return (self.f_p(s) * chi - f * self.chi_p(s)) / chi ** 2

    def g_pp(self, s):
        chi, f = self.chi(s), self.f(s)
        chi_p, f_p = self.chi_p(s), self.f_p(s)
        num = (self.f_pp(s) * chi - f * self.chi_pp(s)) * chi - 2.0 * chi_p * (f_p * chi - f * chi_p)
        return num / chi ** 3


def linear_model(G: float = 1.0, kappa_ns: float = 0.0) -> KineticsModel:
    """chi = 1, f(s) = s: the simplest model satisfying every assumption strictly."""
    one = np.ones_like
    zero = np.zeros_like

    def as_arr(s):
        return np.asarray(s, dtype=float)

    return KineticsModel(
        chi=lambda s: one(as_arr(s)), chi_p=lambda s: zero(as_arr(s)), chi_pp=lambda s: zero(as_arr(s)),
        f=lambda s: as_arr(s), f_p=lambda s: one(as_arr(s)), f_pp=lambda s: zero(as_arr(s)),
        kappa_ns=kappa_ns, grav=G, name="linear")


def saturating_model(G: float = 1.0, kappa_ns: float = 0.0) -> KineticsModel:
    """chi = 1, f(s) = s/(1+s): saturating consumption, concave f/chi."""

    def as_arr(s):
        return np.asarray(s, dtype=float)

    return KineticsModel(
        chi=lambda s: np.ones_like(as_arr(s)),
        chi_p=lambda s: np.zeros_like(as_arr(s)),
        chi_pp=lambda s: np.zeros_like(as_arr(s)),
        f=lambda s: as_arr(s) / (1.0 + as_arr(s)),
        f_p=lambda s: 1.0 / (1.0 + as_arr(s)) ** 2,
        f_pp=lambda s: -2.0 / (1.0 + as_arr(s)) ** 3,
        kappa_ns=kappa_ns, grav=G, name="saturating")


def polynomial_model(chi_coeffs, f_coeffs, G: float = 1.0, kappa_ns: float = 0.0) -> KineticsModel:
    """Model from polynomial coefficients (ascending order)."""
    chi = np.polynomial.Polynomial(np.asarray(chi_coeffs, dtype=float))
    f = np.polynomial.Polynomial(np.asarray(f_coeffs, dtype=float))
    return KineticsModel(
        chi=chi, chi_p=chi.deriv(1), chi_pp=chi.deriv(2),
        f=f, f_p=f.deriv(1), f_pp=f.deriv(2),
        kappa_ns=kappa_ns, grav=G, name="poly")


# ---------------------------------------------------------------------------
# assumption validator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionResult:
    name: str
    passed: bool
    worst_value: float
    worst_point: float
    margin: float


@dataclass(frozen=True)
class AssumptionReport:
    c_max: float
    conditions: tuple[ConditionResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    @property
    def failures(self) -> list[ConditionResult]:
        return [c for c in self.conditions if not c.passed]

    def summary_lines(self) -> list[str]:
        out = []
        for c in self.conditions:
            status = "pass" if c.passed else "FAIL"
            out.append(f"{status:4s}  {c.name:18s} worst {c.worst_value: .6e} at s = {c.worst_point:.6g}")
        return out


def validate_assumptions(model: KineticsModel, c_max: float, n_samples: int = 10_000) -> AssumptionReport:
    """Check the structural assumptions on [0, c_max] by dense sampling.

    c_max should be the sup norm of the initial chemoattractant field (its
    sup norm never grows). Each condition reports its worst sample point and
    margin; a single failure blocks the simulation.
    """
    if c_max <= 0:
        raise ValueError("c_max must be positive")
    s = np.linspace(0.0, c_max, n_samples)
    chi = model.chi(s)
    f = model.f(s)
    gp = model.g_prime(s)
    gpp = model.g_pp(s)
    chif_p = model.chi_p(s) * f + chi * model.f_p(s)

    def cond(name, values, points, low, tol):
        """passes when min(values) > low - tol; margin = worst - low."""
        k = int(np.argmin(values))
        worst = float(values[k])
        return ConditionResult(name, worst > low - tol, worst, float(points[k]), worst - low)

    f0 = float(np.asarray(model.f(np.asarray(0.0))))
    conditions = (
        cond("chi > 0", chi, s, 0.0, 0.0),
        ConditionResult("f(0) = 0", abs(f0) < 1e-12, f0, 0.0, 1e-12 - abs(f0)),
        cond("f > 0 on (0, c_max]", f[1:], s[1:], 0.0, 0.0),
        cond("(f/chi)' > 0", gp, s, 0.0, 0.0),
        cond("(f/chi)'' <= 0", -gpp, s, 0.0, 1e-10),
        cond("(chi f)' >= 0", chif_p, s, 0.0, 1e-10),
    )
    return AssumptionReport(c_max=c_max, conditions=conditions)


# ---------------------------------------------------------------------------
# derived transforms
# ---------------------------------------------------------------------------

def _adaptive_simpson(fn, a, b, rel_tol, max_depth=40):
    """Adaptive Simpson quadrature of fn on [a, b], relative tolerance rel_tol."""
    fa, fm, fb = fn(a), fn(0.5 * (a + b)), fn(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    scale = max(abs(whole), 1e-300)

    def recurse(a, b, fa, fm, fb, whole, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = fn(lm), fn(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        if depth > max_depth:
            raise QuadratureError(f"adaptive Simpson did not converge on [{a}, {b}]")
        if abs(left + right - whole) <= 15.0 * rel_tol * scale:
            return left + right + (left + right - whole) / 15.0
        return (recurse(a, m, fa, flm, fm, left, depth + 1)
                + recurse(m, b, fm, frm, fb, right, depth + 1))

    if a == b:
        return 0.0
    return recurse(a, b, fa, fm, fb, whole, 0)


class DerivedScalars:
    """Tabulated transforms psi, rho of the model on [c_floor, max(1, c_max)].

    psi and rho are anchored at 1 (psi(1) = rho(1) = 0 exactly). Evaluations
    outside the table clamp to its ends; ``clamped_fraction`` of a field can
    be queried by the diagnostics. g and its derivatives are evaluated
    directly from the model with the same argument clamp.
    """

    def __init__(self, model: KineticsModel, c_floor: float, c_max: float,
                 rel_tol: float = 1e-9, n_knots: int = 1600):
        if not 0.0 < c_floor < c_max:
            raise ValueError("need 0 < c_floor < c_max")
        top = max(1.0, c_max) * (1.0 + 1e-12)
        g_at_floor = float(model.g(np.asarray(c_floor)))
        if not np.isfinite(g_at_floor) or g_at_floor <= 0.0:
            raise QuadratureError(f"g({c_floor}) = {g_at_floor}; transforms undefined")

        # psi is tabulated against t = sqrt(s) and rho against l = log(s);
        # in these variables both transforms stay smooth down to c_floor when
        # g vanishes linearly at 0 (psi ~ sqrt, rho ~ log), so a cubic Hermite
        # interpolant with exact analytic knot derivatives is accurate and
        # monotone on a moderate uniform knot grid.
        def knots(lo_v, hi_v, anchor):
            k = np.unique(np.concatenate([np.linspace(lo_v, hi_v, n_knots), [anchor]]))
            return k[(k >= lo_v) & (k <= hi_v)]

        t = knots(np.sqrt(c_floor), np.sqrt(top), 1.0)
        ell = knots(np.log(c_floor), np.log(top), 0.0)

        def dpsi_dt(tv):
            return 2.0 * tv / np.sqrt(float(model.g(np.asarray(tv * tv))))

        def drho_dl(lv):
            sv = np.exp(lv)
            return sv / float(model.g(np.asarray(sv)))

        def cumulative(x, fn):
            inc = np.zeros(len(x))
            for k in range(1, len(x)):
                inc[k] = _adaptive_simpson(fn, x[k - 1], x[k], rel_tol)
            return np.cumsum(inc)

        psi_tab = cumulative(t, dpsi_dt)
        rho_tab = cumulative(ell, drho_dl)
        k1 = int(np.argmin(np.abs(t - 1.0)))
        if abs(t[k1] - 1.0) > 1e-13:
            raise QuadratureError("anchor point 1 missing from the psi table")
        psi_tab -= psi_tab[k1]
        k1 = int(np.argmin(np.abs(ell)))
        if abs(ell[k1]) > 1e-13:
            raise QuadratureError("anchor point 1 missing from the rho table")
        rho_tab -= rho_tab[k1]

        s_check = np.exp(np.linspace(np.log(c_floor), np.log(top), 4000))
        gp = model.g_prime(s_check)
        gpp = model.g_pp(s_check)
        if np.any(gp <= 0.0):
            raise ModelError("g' must stay positive on the tabulated range")
        if np.any(gpp > 1e-10):
            raise ModelError("g'' must stay nonpositive on the tabulated range")

        from scipy.interpolate import CubicHermiteSpline
        self.model = model
        self.c_floor = float(c_floor)
        self.c_max = float(c_max)
        self.top = float(top)
        self._psi_t = CubicHermiteSpline(t, psi_tab, np.array([dpsi_dt(tv) for tv in t]))
        self._rho_l = CubicHermiteSpline(ell, rho_tab, np.array([drho_dl(lv) for lv in ell]))
        self._t_knots = t
        self._l_knots = ell
        self._psi_tab = psi_tab
        self._rho_tab = rho_tab
        # g' bounds on the physically visited range [0, c_max]
        span = np.linspace(0.0, c_max, 10_000)
        gps = model.g_prime(span)
        self.g_prime_min = float(gps.min())
        self.g_prime_max = float(gps.max())

    # -- evaluation helpers (all clamp to the table range) ---------------

    def clamp(self, s):
        return np.clip(s, self.c_floor, self.top)

    def clamped_fraction(self, field: ScalarField) -> float:
        act = field.geom.active
        return float(np.mean(field.data[act] < self.c_floor))

    def psi(self, s):
        return self._psi_t(np.sqrt(self.clamp(s)))

    def rho(self, s):
        return self._rho_l(np.log(self.clamp(s)))

    def psi_prime(self, s):
        return 1.0 / np.sqrt(self.g(s))

    def rho_prime(self, s):
        return 1.0 / self.g(s)

    def g(self, s):
        return self.model.g(self.clamp(s))

    def g_prime(self, s):
        return self.model.g_prime(self.clamp(s))

    def g_pp(self, s):
        return self.model.g_pp(self.clamp(s))

    @property
    def table(self):
        """(s-points of the psi table, psi values, s-points of the rho table, rho values)."""
        return self._t_knots ** 2, self._psi_tab, np.exp(self._l_knots), self._rho_tab


def build_derived(model: KineticsModel, c_floor: float, c_max: float) -> DerivedScalars:
    """Tabulate psi, rho for a validated model (adaptive Simpson, rel tol 1e-9)."""
    return DerivedScalars(model, c_floor, c_max)


def default_c_floor(c_max: float) -> float:
    return DEFAULT_C_FLOOR_REL * max(1.0, c_max)


# ---------------------------------------------------------------------------
# buoyancy
# ---------------------------------------------------------------------------

def buoyancy_force(n: ScalarField, model: KineticsModel) -> VectorField:
    """Face-staggered force n * grad(phi_pot), zero off the fluid faces."""
    g: GridGeometry = n.geom
    d = n.data
    fx = np.zeros((g.nx + 1, g.ny))
    fy = np.zeros((g.nx, g.ny + 1))

    Xfx, Yfx = np.meshgrid(g.xn[1:-1], g.yc, indexing="ij")
    gpx, _ = model.potential_gradient(Xfx, Yfx)
    nbar_x = 0.5 * (d[1:, :] + d[:-1, :])
    fx[1:-1, :] = np.where(g.fluid_face_x[1:-1, :], nbar_x * gpx, 0.0)

    Xfy, Yfy = np.meshgrid(g.xc, g.yn[1:-1], indexing="ij")
    _, gpy = model.potential_gradient(Xfy, Yfy)
    nbar_y = 0.5 * (d[:, 1:] + d[:, :-1])
    fy[:, 1:-1] = np.where(g.fluid_face_y[:, 1:-1], nbar_y * gpy, 0.0)
    return VectorField(g, fx, fy)
