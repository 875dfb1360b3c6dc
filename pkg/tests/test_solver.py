import numpy as np
import pytest
import scipy.sparse as sp

from chemofluid.fields import ScalarField, VectorField, divergence
from chemofluid.geometry import LevelSetDomain, classify_cells, volume_integral
from chemofluid.model import linear_model
from chemofluid.solver import (
    InitialData,
    LinearSolverError,
    LinearSystems,
    SimState,
    SolverAbort,
    SolverConfig,
    cfl_dt,
    quantize_dt,
    solve_spd,
    step,
    step_c,
    step_n,
    step_u,
)


@pytest.fixture(scope="module")
def grid96():
    dom = LevelSetDomain.disk(1.0)
    return classify_cells(dom, 2.4 / 96)


@pytest.fixture(scope="module")
def systems96(grid96):
    return LinearSystems(grid96, SolverConfig())


def uniform_state(geom, n=1.0, c=1.0):
    return SimState(ScalarField.full(geom, n), ScalarField.full(geom, c),
                    VectorField.zeros(geom), ScalarField.zeros(geom), 0.0)


class TestCfl:
    def test_zero_velocity_gives_dt_max(self, grid96):
        cfg = SolverConfig(dt_max=0.037)
        st = uniform_state(grid96)
        assert cfl_dt(st, cfg, linear_model()) == 0.037

    def test_uniform_speed_arithmetic(self):
        # h = 1/64: max face speed 2 and safety 0.5 give exactly 1/256
        dom = LevelSetDomain.disk(5.0 / 6.0, margin=0.2)   # bbox side 2.0
        g = classify_cells(dom, 1.0 / 64.0)
        assert g.h == pytest.approx(1.0 / 64.0, abs=1e-15)
        st = uniform_state(g)
        st.u.u[g.fluid_face_x] = 2.0
        cfg = SolverConfig(dt_max=1.0, cfl_safety=0.5)
        dt = cfl_dt(st, cfg, linear_model())
        assert dt == pytest.approx(1.0 / 256.0, rel=1e-12)

    def test_sharp_gradient_shrinks_dt(self, grid96):
        cfg = SolverConfig(dt_max=1.0)
        st = uniform_state(grid96)
        X, _ = grid96.cell_centers()
        st.c = ScalarField(grid96, np.where(grid96.active, 50.0 * np.tanh(X / 0.01) + 51, 0.0))
        dt = cfl_dt(st, cfg, linear_model())
        st2 = uniform_state(grid96)
        st2.c = ScalarField(grid96, np.where(grid96.active, 0.5 * np.tanh(X / 0.01) + 1, 0.0))
        assert dt < cfl_dt(st2, cfg, linear_model()) / 20

    def test_underflow_aborts(self, grid96):
        cfg = SolverConfig(dt_max=1.0)
        st = uniform_state(grid96)
        st.u.u[grid96.fluid_face_x] = 1e15
        with pytest.raises(SolverAbort):
            cfl_dt(st, cfg, linear_model())

    def test_quantize(self):
        assert quantize_dt(0.05, 0.05) == 0.05
        assert quantize_dt(0.013, 0.05) == 0.05 / 4
        assert quantize_dt(1.0, 0.05) == 0.05


class TestStepC:
    def test_pure_heat_monotone_and_conservative(self, grid96, systems96):
        X, Y = grid96.cell_centers()
        c0 = ScalarField(grid96, np.where(grid96.active,
                                          1.0 + 0.3 * np.cos(3 * X) * np.cos(2 * Y), 0.0))
        st = SimState(ScalarField.zeros(grid96), c0.copy(), VectorField.zeros(grid96),
                      ScalarField.zeros(grid96), 0.0)
        mass0 = volume_integral(c0, grid96)
        cmax = c0.max_active()
        for _ in range(60):
            st.c = step_c(st, 0.02, linear_model(), systems96, 1e-10)
            new_max = st.c.max_active()
            assert new_max <= cmax + 1e-12 * c0.max_active()
            cmax = new_max
        assert abs(volume_integral(st.c, grid96) - mass0) / mass0 < 1e-10

    def test_consumption_matches_scalar_recurrence(self, grid96, systems96):
        C0, N0, dt = 0.8, 2.0, 0.02
        st = uniform_state(grid96, n=N0, c=C0)
        ck = C0
        for _ in range(30):
            st.c = step_c(st, dt, linear_model(), systems96, 1e-10)
            ck = ck / (1 + dt * N0)
        assert np.abs(st.c.data[grid96.active] - ck).max() < 1e-13

    def test_zero_stays_zero(self, grid96, systems96):
        st = uniform_state(grid96, n=1.5, c=1.0)
        st.c = ScalarField.zeros(grid96)
        for _ in range(5):
            st.c = step_c(st, 0.02, linear_model(), systems96, 1e-10)
        assert np.abs(st.c.data).max() < 1e-14


class TestStepN:
    def test_pure_heat_mass_and_flattening(self, grid96, systems96):
        X, Y = grid96.cell_centers()
        n0 = ScalarField(grid96, np.where(grid96.active,
                                          1.0 + 0.8 * np.exp(-(X ** 2 + Y ** 2) / 0.05), 0.0))
        st = SimState(n0.copy(), ScalarField.full(grid96, 1.0), VectorField.zeros(grid96),
                      ScalarField.zeros(grid96), 0.0)
        mass0 = volume_integral(n0, grid96)
        spread0 = n0.max_active() - n0.min_active()
        for _ in range(100):
            st.n = step_n(st, st.c, 0.02, linear_model(G=0.0), systems96)
        assert abs(volume_integral(st.n, grid96) - mass0) / mass0 < 1e-10
        assert (st.n.max_active() - st.n.min_active()) < 0.05 * spread0

    def test_negative_density_aborts(self, grid96, systems96):
        # a step far beyond the CFL bound drives the upwind update negative
        X, Y = grid96.cell_centers()
        st = uniform_state(grid96, n=1.0, c=1.0)
        st.n = ScalarField(grid96, np.where(grid96.active,
                                            1.0 + np.exp(-(X ** 2 + Y ** 2) / 0.02), 0.0))
        st.c = ScalarField(grid96, np.where(grid96.active, 70.0 + 50.0 * X, 0.0))
        with pytest.raises(SolverAbort):
            step_n(st, st.c, 1.0, linear_model(), systems96)

    def test_mass_over_thousand_steps(self):
        dom = LevelSetDomain.disk(1.0)
        g = classify_cells(dom, 2.4 / 64)
        cfg = SolverConfig(dt_max=0.01, end_time=10.0)
        lin = LinearSystems(g, cfg)
        model = linear_model(G=0.5, kappa_ns=1.0)
        X, Y = g.cell_centers()
        n0 = ScalarField(g, np.where(g.active, 1 + 0.5 * np.exp(-((X - 0.2) ** 2 + Y ** 2) / 0.05), 0.0))
        c0 = ScalarField(g, np.where(g.active, 1 + 0.2 * np.cos(2 * X) * np.cos(Y), 0.0))
        u0 = VectorField.from_stream(g, lambda x, y: 0.1 * np.exp(-(x * x + y * y) / 0.2))
        st = InitialData(n0, c0, u0).make_state()
        mass0 = volume_integral(n0, g)
        for _ in range(1000):
            st = step(st, cfg, model, lin, dt=0.01)
        assert abs(volume_integral(st.n, g) - mass0) / mass0 <= 1e-8
        assert st.n.min_active() >= -1e-10 * st.n.max_active()


class TestStepU:
    def test_zero_everything_stays_zero(self, grid96, systems96):
        st = uniform_state(grid96, n=0.0, c=1.0)
        u, p = step_u(st, st.n, 0.02, linear_model(G=1.0), systems96)
        assert np.abs(u.u).max() == 0.0
        assert np.abs(p.data).max() == 0.0

    def test_hydrostatic_balance(self, grid96, systems96):
        # uniform density in gravity: velocity stays ~0, p = -n0 G y + const
        n0, G = 1.3, 0.8
        st = uniform_state(grid96, n=n0, c=1.0)
        u, p = step_u(st, st.n, 0.02, linear_model(G=G), systems96)
        assert max(np.abs(u.u).max(), np.abs(u.v).max()) < 1e-10
        _, Y = grid96.cell_centers()
        expect = -n0 * G * Y
        expect -= expect[grid96.interior].mean()
        assert np.abs(p.data[grid96.interior] - expect[grid96.interior]).max() < 1e-8

    def test_unforced_energy_decay(self, grid96, systems96):
        from chemofluid.fields import mac_norm_sq
        st = uniform_state(grid96, n=0.0, c=1.0)
        st.u = VectorField.from_stream(grid96, lambda x, y: 0.3 * np.exp(-(x * x + y * y) / 0.1))
        model = linear_model(G=0.0, kappa_ns=1.0)
        k_prev = mac_norm_sq(st.u)
        for _ in range(20):
            st.u, st.p = step_u(st, st.n, 0.01, model, systems96)
            k = mac_norm_sq(st.u)
            assert k <= k_prev * (1 + 1e-12)
            k_prev = k

    def test_divergence_after_projection(self, grid96, systems96):
        rng = np.random.default_rng(2)
        st = uniform_state(grid96, n=1.0, c=1.0)
        st.n = ScalarField(grid96, np.where(grid96.active, 1 + rng.random((grid96.nx, grid96.ny)), 0.0))
        u, p = step_u(st, st.n, 0.02, linear_model(G=1.0), systems96)
        dv = divergence(VectorField(grid96, u.u, u.v))
        assert np.abs(dv.data).max() < 1e-10
        assert abs(p.data[grid96.interior].mean()) <= 1e-12 * np.abs(p.data).max()


class TestFullStep:
    def test_steady_state_is_fixed_point(self, grid96):
        cfg = SolverConfig(dt_max=0.02, end_time=1.0)
        lin = LinearSystems(grid96, cfg)
        model = linear_model(G=0.7)
        st = uniform_state(grid96, n=1.4, c=0.0)
        new = step(st, cfg, model, lin, dt=0.02)
        assert np.abs(new.n.data - st.n.data).max() < 1e-11
        assert np.abs(new.c.data - st.c.data).max() < 1e-14
        assert new.u.max_speed() < 1e-11

    def test_stokes_vs_navier_stokes_paths(self, grid96):
        cfg = SolverConfig(dt_max=0.01, end_time=1.0)
        X, Y = grid96.cell_centers()
        n0 = ScalarField(grid96, np.where(grid96.active, 1 + 0.3 * np.exp(-(X ** 2 + Y ** 2) / 0.1), 0.0))
        c0 = ScalarField.full(grid96, 1.0)
        u0 = VectorField.from_stream(grid96, lambda x, y: 0.3 * np.exp(-(x * x + y * y) / 0.15))
        base = InitialData(n0, c0, u0).make_state()

        lin = LinearSystems(grid96, cfg)
        stokes = step(base.copy(), cfg, linear_model(G=0.5, kappa_ns=0.0), lin, dt=0.01)
        navier = step(base.copy(), cfg, linear_model(G=0.5, kappa_ns=1.0), lin, dt=0.01)
        assert np.abs(stokes.u.u - navier.u.u).max() > 1e-9   # advection path active

        still = base.copy()
        still.u = VectorField.zeros(grid96)
        s0 = step(still.copy(), cfg, linear_model(G=0.0, kappa_ns=0.0), lin, dt=0.01)
        s1 = step(still.copy(), cfg, linear_model(G=0.0, kappa_ns=1.0), lin, dt=0.01)
        assert np.abs(s0.u.u - s1.u.u).max() == 0.0            # no flow: paths agree


class TestInitialData:
    def test_rejects_nonpositive_n(self, grid96):
        bad = InitialData(ScalarField.zeros(grid96), ScalarField.full(grid96, 1.0),
                          VectorField.zeros(grid96))
        with pytest.raises(ValueError):
            bad.validate()

    def test_rejects_divergent_u(self, grid96):
        u = VectorField.zeros(grid96)
        u.u[grid96.fluid_face_x] = 1.0   # pure x-flow with walls is not solenoidal
        bad = InitialData(ScalarField.full(grid96, 1.0), ScalarField.full(grid96, 1.0), u)
        with pytest.raises(ValueError):
            bad.validate()

    def test_accepts_stream_function(self, grid96):
        u = VectorField.from_stream(grid96, lambda x, y: 0.1 * np.exp(-x * x - y * y))
        InitialData(ScalarField.full(grid96, 1.0), ScalarField.full(grid96, 1.0), u).validate()


class TestSolveSpd:
    def test_zero_rhs(self):
        A = sp.identity(10, format="csr")
        assert np.abs(solve_spd(A, np.zeros(10))).max() == 0.0

    def test_neumann_nullspace(self, grid96):
        # lap p = 0 with the mean-zero gauge gives exactly zero
        lin = LinearSystems(grid96, SolverConfig(linear_solver="cg"))
        p = lin.pressure_solve(ScalarField.zeros(grid96))
        assert np.abs(p.data).max() == 0.0

    def test_helmholtz_residual(self, grid96):
        lin = LinearSystems(grid96, SolverConfig())
        rng = np.random.default_rng(9)
        dt = 0.02
        A = sp.diags(lin.vol) - dt * lin.L_scalar
        b = rng.standard_normal(lin.n_scalar)
        x = solve_spd(A, b, tol=1e-8)
        assert np.linalg.norm(b - A @ x) <= 1e-8 * np.linalg.norm(b)

    def test_iteration_cap(self):
        A = sp.identity(50, format="csr")
        d = np.ones(50)
        d[0] = 1e12
        A = sp.diags(d).tocsr()
        with pytest.raises(LinearSolverError):
            solve_spd(A, np.ones(50), tol=1e-16, max_iters=2)

    def test_cg_and_direct_agree(self, grid96):
        cfg_cg = SolverConfig(linear_solver="cg", tol=1e-12)
        cfg_lu = SolverConfig(linear_solver="direct")
        rng = np.random.default_rng(4)
        rhs = ScalarField(grid96, np.where(grid96.active,
                                           rng.standard_normal((grid96.nx, grid96.ny)), 0.0))
        a = LinearSystems(grid96, cfg_cg).helmholtz_solve(0.02, rhs)
        b = LinearSystems(grid96, cfg_lu).helmholtz_solve(0.02, rhs)
        assert np.abs(a.data - b.data).max() < 1e-9
