import numpy as np
import pytest

from crossdiffsim.grid import Mesh1D, StateField
from crossdiffsim.model import ModelError, preset
from crossdiffsim.matrices import diffusion_matrix
from crossdiffsim.solver import (
    NewtonError,
    SolverConfig,
    initial_profile,
    interface_fluxes,
    jacobian_banded,
    jacobian_dense,
    jacobian_fd,
    newton_solve,
    recover_fluxes,
    residual_array,
    run,
    simplex_project,
)

from conftest import constant_spec, interior_points


def tanh_field(mesh, pad=0.0):
    return initial_profile(mesh, pad=pad)[0]


class TestMesh:
    def test_too_small_rejected(self):
        with pytest.raises(ModelError):
            Mesh1D(3)

    def test_geometry(self):
        mesh = Mesh1D(8)
        assert mesh.dx == 0.125
        assert mesh.centers[0] == pytest.approx(0.0625)


class TestInitialProfile:
    def test_far_field_limits_raw(self):
        mesh = Mesh1D(600)
        field, meta = initial_profile(mesh, normalize=False)
        assert not meta["normalized"]
        # tanh saturates: u1 -> eps0, u2 -> 2 c0 at the right end
        assert field.values[-1, 0] == pytest.approx(0.01, rel=1e-6)
        assert field.values[-1, 1] == pytest.approx(1.0, rel=1e-6)
        assert meta["raw_max_sum"] == pytest.approx(1.01)

    def test_midpoint_value(self):
        mesh = Mesh1D(5)  # first center sits exactly at x0 = 0.1
        field, _ = initial_profile(mesh, normalize=False)
        assert field.values[0, 0] == pytest.approx(0.51)
        assert field.values[0, 1] == pytest.approx(0.50)

    def test_zero_eps_exact_filling(self):
        mesh = Mesh1D(32)
        field, meta = initial_profile(mesh, eps0=0.0)
        assert meta["normalization_factor"] == 1.0
        assert np.allclose(field.values.sum(axis=1), 1.0, atol=1e-15)

    def test_normalization_puts_state_on_simplex(self):
        mesh = Mesh1D(64)
        field, meta = initial_profile(mesh)
        assert meta["normalized"]
        assert meta["normalization_factor"] == pytest.approx(1 / 1.01)
        assert field.min_fraction >= -1e-15

    def test_negative_parameters_rejected(self):
        with pytest.raises(ModelError):
            initial_profile(Mesh1D(16), eps0=-0.2)


class TestSimplexProjection:
    @staticmethod
    def brute_force(point, resolution=400):
        """Nearest feasible point in the augmented metric on a fine grid."""
        w = np.array([point[0], point[1], 1.0 - point.sum()])
        best, best_d = None, np.inf
        for i in range(resolution + 1):
            for j in range(resolution + 1 - i):
                cand = np.array([i, j, resolution - i - j], dtype=float) / resolution
                d = ((w - cand) ** 2).sum()
                if d < best_d:
                    best, best_d = cand, d
        return best[:2], best_d

    def test_interior_unchanged(self, rng):
        for u in interior_points(rng, 20):
            assert np.allclose(simplex_project(u), u, atol=1e-15)

    def test_known_points(self):
        assert np.allclose(simplex_project(np.array([1.2, 0.0])), [1.0, 0.0],
                           atol=1e-12)
        proj = simplex_project(np.array([-0.1, 0.5]))
        ref, _ = self.brute_force(np.array([-0.1, 0.5]))
        assert np.allclose(proj, ref, atol=2.5e-3)

    def test_against_brute_force(self, rng):
        for _ in range(10):
            p = rng.uniform(-0.4, 1.4, size=2)
            proj = simplex_project(p)
            ref, ref_d = self.brute_force(p)
            w = np.array([p[0], p[1], 1.0 - p.sum()])
            wp = np.array([proj[0], proj[1], 1.0 - proj.sum()])
            assert ((w - wp) ** 2).sum() <= ref_d + 1e-9
            assert np.allclose(proj, ref, atol=2.5e-3)
            assert wp.min() >= -1e-12

    def test_batch_shape(self, rng):
        P = simplex_project(rng.uniform(-0.5, 1.5, size=(50, 2)))
        W = np.concatenate([P, 1 - P.sum(1, keepdims=True)], axis=1)
        assert W.min() >= -1e-12


class TestResidual:
    def test_constant_state_zero(self):
        spec = preset("tumor-jb")
        mesh = Mesh1D(16)
        vals = np.full((16, 2), 0.3)
        R, _ = residual_array(spec, vals, vals.copy(), mesh.dx, 1e-3, 0.0)
        assert np.all(R == 0)

    def test_manufactured_linear_state(self):
        # 8 cells, identity pressure, unit drag: interior residual equals the
        # hand-computed divided difference of the interface fluxes
        spec = constant_spec(np.eye(2))
        mesh = Mesh1D(8)
        a = np.array([0.2, 0.3])
        b = np.array([0.08, -0.05])
        vals = a[None, :] + mesh.centers[:, None] * b[None, :]
        R, _ = residual_array(spec, vals, vals.copy(), mesh.dx, 1e-3, 0.0)

        def flux(uh):
            return -diffusion_matrix(spec, uh) @ b

        for j in range(1, 7):
            east = flux(0.5 * (vals[j] + vals[j + 1]))
            west = flux(0.5 * (vals[j - 1] + vals[j]))
            assert np.allclose(R[j], (east - west) / mesh.dx, rtol=1e-12)

    def test_recover_fluxes(self):
        spec = constant_spec(np.eye(2))
        mesh = Mesh1D(8)
        a = np.array([0.2, 0.3])
        b = np.array([0.08, -0.05])
        vals = a[None, :] + mesh.centers[:, None] * b[None, :]
        field = StateField(mesh, vals)
        F, vel = recover_fluxes(spec, field)
        assert np.all(F[0] == 0) and np.all(F[-1] == 0)
        for m in range(1, 8):
            uh = 0.5 * (vals[m - 1] + vals[m])
            expect = -diffusion_matrix(spec, uh) @ b
            assert np.allclose(F[m], expect, rtol=1e-12)
            assert np.allclose(vel[m], expect / uh, rtol=1e-12)
        const = StateField(mesh, np.full((8, 2), 0.25))
        Fc, _ = recover_fluxes(spec, const)
        assert np.all(Fc == 0)


class TestJacobian:
    def test_pure_regularization_is_heat_stencil(self):
        spec = constant_spec(np.zeros((2, 2)))
        mesh = Mesh1D(8)
        eta, dt = 0.37, 1e-3
        vals = tanh_field(mesh).values
        J = jacobian_dense(spec, vals, mesh.dx, dt, eta=eta)
        N, n = 8, 2
        expect = np.eye(N * n) / dt
        lap = (np.diag(2.0 * np.ones(N)) - np.diag(np.ones(N - 1), 1)
               - np.diag(np.ones(N - 1), -1))
        lap[0, 0] = lap[-1, -1] = 1.0  # no-flux walls
        for i in range(n):
            expect[i::n, i::n] += eta * lap / mesh.dx**2
        assert np.allclose(J, expect, rtol=1e-13)

    @pytest.mark.parametrize("name", ["tumor-jb", "vf-busenberg-travis"])
    def test_matches_finite_differences(self, name, rng):
        spec = preset(name)
        mesh = Mesh1D(8)
        base = tanh_field(mesh).values
        for _ in range(5):
            vals = np.clip(base + rng.normal(scale=0.02, size=base.shape), 0.01, None)
            vals /= np.maximum(vals.sum(1, keepdims=True) + 0.05, 1.0)
            Ja = jacobian_dense(spec, vals, mesh.dx, 1e-3, eta=spec.eta)
            Jf = jacobian_fd(spec, vals, vals.copy(), mesh.dx, 1e-3, eta=spec.eta)
            scale = np.abs(Jf).max()
            assert np.abs(Ja - Jf).max() / scale < 1e-6

    def test_transport_annihilates_constants(self):
        # at a spatially constant state the flux blocks act on differences
        # only, so a per-species constant shift sees just the 1/dt identity
        spec = preset("tumor-jb")
        mesh = Mesh1D(12)
        vals = np.tile(np.array([0.22, 0.47]), (12, 1))
        dt = 1e-3
        J = jacobian_dense(spec, vals, mesh.dx, dt)
        for i in range(2):
            c = np.zeros((12, 2))
            c[:, i] = 1.0
            out = J @ c.reshape(-1) - c.reshape(-1) / dt
            assert np.abs(out).max() < 1e-9 * np.abs(J).max()


class TestNewton:
    def test_constant_state_is_fixed_point(self):
        spec = preset("tumor-jb")
        mesh = Mesh1D(32)
        field = StateField(mesh, np.full((32, 2), 0.25))
        cfg = SolverConfig(dt=1e-3, t_final=1e-3)
        new, stats = newton_solve(spec, field, mesh, cfg)
        assert stats.iterations <= 1
        assert np.allclose(new.values, field.values, atol=1e-12)

    def test_first_step_of_tumor_run(self):
        spec = preset("tumor-jb")
        mesh = Mesh1D(600)
        field = tanh_field(mesh)
        cfg = SolverConfig(dt=1e-3, t_final=1e-3)
        new, stats = newton_solve(spec, field, mesh, cfg)
        assert stats.residual_norm <= 1e-10
        assert stats.iterations >= 1
        assert new.min_fraction >= -1e-12

    def test_failure_reported(self):
        spec = preset("tumor-jb", theta=1000.0)
        mesh = Mesh1D(64)
        field = tanh_field(mesh)
        cfg = SolverConfig(dt=1e-3, t_final=1e-3, newton_max_iters=4,
                           substep_rescue=False, levenberg=False)
        with pytest.raises(NewtonError):
            newton_solve(spec, field, mesh, cfg)


class TestRun:
    def test_zero_horizon_returns_initial(self):
        spec = preset("tumor-jb")
        mesh = Mesh1D(16)
        field = tanh_field(mesh)
        res = run(spec, mesh, SolverConfig(dt=1e-3, t_final=0.0), field)
        assert list(res.snapshots) == [0.0]
        assert np.array_equal(res.snapshots[0.0].values, field.values)

    def test_mass_conservation_short_run(self):
        spec = preset("tumor-jb")
        mesh = Mesh1D(64)
        field = tanh_field(mesh)
        res = run(spec, mesh, SolverConfig(dt=1e-3, t_final=0.05), field)
        drift = np.abs(res.diagnostics.masses - res.diagnostics.masses[0]).max()
        assert drift <= 1e-12

    def test_snapshots_recorded(self):
        spec = preset("tumor-jb")
        mesh = Mesh1D(32)
        field = tanh_field(mesh)
        cfg = SolverConfig(dt=1e-3, t_final=0.02, snapshot_times=(0.01,))
        res = run(spec, mesh, cfg, field)
        assert set(res.snapshots) == {0.0, 0.01, 0.02}

    def test_analysis_only_refused(self):
        spec = preset("maxwell-stefan")
        mesh = Mesh1D(16)
        field = tanh_field(mesh)
        with pytest.raises(ModelError):
            run(spec, mesh, SolverConfig(dt=1e-3, t_final=0.001), field)

    def test_projection_mode_reports_activations(self):
        spec = preset("tumor-jb")
        mesh = Mesh1D(32)
        field = tanh_field(mesh)
        cfg = SolverConfig(dt=1e-3, t_final=0.01, projection_enabled=True)
        res = run(spec, mesh, cfg, field)
        assert sum(s.projection_activations for s in res.stats) == 0

    def test_fd_jacobian_mode_agrees(self):
        spec = preset("vf-skt")
        mesh = Mesh1D(16)
        field = tanh_field(mesh)
        res_a = run(spec, mesh, SolverConfig(dt=1e-3, t_final=0.005), field)
        res_f = run(spec, mesh, SolverConfig(dt=1e-3, t_final=0.005,
                                             jacobian_mode="finite-difference"),
                    tanh_field(mesh))
        assert np.allclose(res_a.final.values, res_f.final.values, atol=1e-9)
