import numpy as np
import pytest
from scipy.integrate import quad

from chemofluid.fields import ScalarField, gradient_neumann, laplacian_neumann
from chemofluid.model import (
    KineticsModel,
    build_derived,
    buoyancy_force,
    linear_model,
    polynomial_model,
    saturating_model,
    validate_assumptions,
)


def inverse_chi_model():
    # chi = 1/(1+s), f = s: g = s(1+s) has g'' = 2 > 0
    arr = lambda s: np.asarray(s, dtype=float)
    return KineticsModel(
        chi=lambda s: 1.0 / (1.0 + arr(s)),
        chi_p=lambda s: -1.0 / (1.0 + arr(s)) ** 2,
        chi_pp=lambda s: 2.0 / (1.0 + arr(s)) ** 3,
        f=lambda s: arr(s),
        f_p=lambda s: np.ones_like(arr(s)),
        f_pp=lambda s: np.zeros_like(arr(s)))


class TestValidator:
    def test_linear_passes(self):
        rep = validate_assumptions(linear_model(), 1.0)
        assert rep.passed

    def test_quadratic_consumption_fails_concavity(self):
        rep = validate_assumptions(polynomial_model([1.0], [0.0, 0.0, 1.0]), 1.0)
        assert not rep.passed
        assert any(c.name == "(f/chi)'' <= 0" for c in rep.failures)

    def test_inverse_chi_fails_concavity(self):
        rep = validate_assumptions(inverse_chi_model(), 1.0)
        assert not rep.passed
        assert any(c.name == "(f/chi)'' <= 0" for c in rep.failures)

    def test_saturating_passes(self):
        assert validate_assumptions(saturating_model(), 1.0).passed

    def test_finer_scan_agrees(self):
        # soundness: passing builtins still pass a 10^6-point scan
        for model in (linear_model(), saturating_model()):
            assert validate_assumptions(model, 1.0, n_samples=1_000_000).passed

    def test_report_has_all_six_conditions(self):
        rep = validate_assumptions(linear_model(), 2.0)
        assert len(rep.conditions) == 6


class TestDerivedScalars:
    def test_closed_forms_linear_model(self, derived_linear):
        s = np.geomspace(1e-9, 2.0, 2000)
        assert np.abs(derived_linear.psi(s) - 2 * (np.sqrt(s) - 1)).max() < 1e-8
        assert np.abs(derived_linear.rho(s) - np.log(s)).max() < 1e-8

    def test_anchor(self, derived_linear):
        assert derived_linear.psi(1.0) == 0.0
        assert derived_linear.rho(1.0) == 0.0

    def test_monotone(self, derived_linear):
        s = np.geomspace(derived_linear.c_floor, derived_linear.top * 0.999, 50_000)
        assert np.all(np.diff(derived_linear.psi(s)) >= -1e-15)
        assert np.all(np.diff(derived_linear.rho(s)) >= -1e-15)

    def test_derivative_identity_at_knots(self, derived_linear):
        der = derived_linear
        s_psi, _, s_rho, _ = der.table
        for pts, fn, exact in ((s_psi[1:-1], der.psi, lambda s: 1 / np.sqrt(s)),
                               (s_rho[1:-1], der.rho, lambda s: 1 / s)):
            d = 3e-4 * pts
            lo = np.maximum(pts - d, der.c_floor)
            hi = np.minimum(pts + d, der.top)
            num = (fn(hi) - fn(lo)) / (hi - lo)
            rel = np.abs(num - exact(pts)) / np.abs(exact(pts))
            assert rel.max() < 1e-7

    def test_g_prime_bounds_linear(self, derived_linear):
        assert derived_linear.g_prime_min == pytest.approx(1.0)
        assert derived_linear.g_prime_max == pytest.approx(1.0)

    def test_saturating_against_quadrature(self):
        der = build_derived(saturating_model(), 1e-10, 1.5)
        g = lambda s: s / (1.0 + s)
        for sv in (0.01, 0.3, 1.4):
            psi_q, _ = quad(lambda x: 1 / np.sqrt(g(x)), 1.0, sv, epsrel=1e-12)
            rho_q, _ = quad(lambda x: 1 / g(x), 1.0, sv, epsrel=1e-12)
            assert der.psi(sv) == pytest.approx(psi_q, abs=1e-9)
            assert der.rho(sv) == pytest.approx(rho_q, abs=1e-8)

    def test_clamp_below_floor(self, derived_linear):
        assert derived_linear.psi(0.0) == derived_linear.psi(derived_linear.c_floor)
        assert np.isfinite(derived_linear.rho(0.0))

    def test_invalid_model_rejected(self):
        from chemofluid.model import ModelError
        with pytest.raises(ModelError):
            build_derived(inverse_chi_model(), 1e-10, 1.0)   # g'' = 2 > 0


class TestTransformFieldIdentity:
    def test_sqrt_g_lap_rho_relation(self, disk64, derived_linear):
        # sqrt(g) lap rho(c) = lap psi(c) - g' |grad c|^2 / (2 g^(3/2))
        c = ScalarField.from_function(
            disk64, lambda x, y: 1.2 + 0.3 * np.cos(1.5 * x) * np.cos(y))
        der = derived_linear
        rho_c = ScalarField(disk64, np.where(disk64.active, der.rho(c.data), 0.0))
        psi_c = ScalarField(disk64, np.where(disk64.active, der.psi(c.data), 0.0))
        cx, cy = gradient_neumann(c)
        grad_c2 = cx.data ** 2 + cy.data ** 2
        lhs = np.sqrt(der.g(c.data)) * laplacian_neumann(rho_c).data
        rhs = laplacian_neumann(psi_c).data - 0.5 * der.g_prime(c.data) * grad_c2 / der.g(c.data) ** 1.5
        ok = disk64.stencil_ok
        scale = np.abs(lhs[ok]).max()
        assert np.abs(lhs[ok] - rhs[ok]).max() < 0.02 * scale


class TestBuoyancy:
    def test_zero_density(self, disk64):
        f = buoyancy_force(ScalarField.zeros(disk64), linear_model(G=2.0))
        assert np.abs(f.u).max() == 0.0
        assert np.abs(f.v).max() == 0.0

    def test_uniform_density_vertical_force(self, disk64):
        n0 = 1.7
        G = 0.9
        f = buoyancy_force(ScalarField.full(disk64, n0), linear_model(G=G))
        assert np.abs(f.u).max() == 0.0
        fy = f.v[disk64.fluid_face_y]
        assert np.abs(fy - (-n0 * G)).max() < 1e-13

    def test_zero_gravity(self, disk64):
        f = buoyancy_force(ScalarField.full(disk64, 1.0), linear_model(G=0.0))
        assert np.abs(f.v).max() == 0.0
