import math

import numpy as np
import pytest

from modules.config_manager import SimConfig
from modules.diagnostics import amplitude
from modules.dynamics import (State, cfl_dt, convergence_study, e_law_residual, e_quantity,
                              e_source, initial_state, output_times, perturbation_shapes, rhs,
                              run, step)
from modules.errors import ConfigError, NumericalAbort
from modules.fractional_kernel import build_kernel_spec
from modules.progress_tracker import ProgressTracker
from modules.torus_fields import ScalarField, TorusGrid, VectorField, derivative, translate


def _flock_state(grid, ubar=(0.5,)):
    cfg = SimConfig(dim=grid.dim, n=grid.points_per_dim, preset="flock", ubar=tuple(ubar))
    return initial_state(cfg, grid)


class TestRightHandSide:
    def test_flock_is_a_traveling_wave(self, spec1, grid1):
        s = _flock_state(grid1)
        rho_t, u_t = rhs(s, spec1)
        assert u_t[0].max_abs() < 1e-12
        assert (rho_t + 0.5 * derivative(s.rho, 0)).max_abs() < 1e-12

    def test_rest_state(self, spec1, grid1):
        s = State(ScalarField.constant(grid1, 2.0), VectorField.constant(grid1, [0.0]), 0.0)
        rho_t, u_t = rhs(s, spec1)
        assert rho_t.max_abs() < 1e-14
        assert u_t[0].max_abs() < 1e-14

    def test_unit_density_sine_velocity(self, spec1, grid1):
        eps = 0.1
        s = State(ScalarField.constant(grid1, 1.0),
                  VectorField((ScalarField.from_function(grid1, lambda x: eps * np.sin(x)),)), 0.0)
        _, u_t = rhs(s, spec1)
        expected = ScalarField.from_function(
            grid1, lambda x: -eps ** 2 * np.sin(x) * np.cos(x) - math.pi * eps * np.sin(x))
        assert (u_t[0] - expected).max_abs() < 1e-10

    def test_non_finite_state_aborts(self, spec1, grid1):
        values = np.ones(grid1.shape)
        values[3] = np.nan
        s = State(ScalarField(grid1, values), VectorField.constant(grid1, [0.0]), 0.0)
        with pytest.raises(NumericalAbort):
            rhs(s, spec1)


class TestEQuantity:
    def test_constant_state(self, spec1, grid1):
        s = State(ScalarField.constant(grid1, 1.5), VectorField.constant(grid1, [0.3]), 0.0)
        assert e_quantity(s, spec1).sup() < 1e-13

    def test_density_cosine(self, spec1, grid1):
        a = 0.3
        s = State(ScalarField.from_function(grid1, lambda x: 1 + a * np.cos(x)),
                  VectorField.constant(grid1, [0.0]), 0.0)
        expected = ScalarField.from_function(grid1, lambda x: -a * math.pi * np.cos(x))
        assert (e_quantity(s, spec1).e - expected).max_abs() < 1e-12

    def test_mean_free(self, spec1, grid1, generator):
        s = generator.random_state(grid1)
        assert abs(e_quantity(s, spec1).mean()) < 1e-13

    def test_source_vanishes_in_1d(self, grid1, generator):
        u = VectorField((generator.random_field(grid1, kmax=8),))
        assert e_source(u).max_abs() == 0.0

    def test_source_mean_free_in_2d(self, grid2, generator):
        u = VectorField((generator.random_field(grid2, kmax=4), generator.random_field(grid2, kmax=4)))
        assert abs(e_source(u).mean()) < 1e-10


class TestELaw:
    def test_flock_residual_is_tiny(self, spec1, grid1):
        assert e_law_residual(_flock_state(grid1), spec1, probe="euler") < 1e-8

    def test_preset_residual_below_threshold(self, spec1):
        s = initial_state(SimConfig())
        assert e_law_residual(s, spec1, 1e-6) < 1e-5

    def test_residual_halves_with_probe_step(self, spec1):
        s = initial_state(SimConfig())
        coarse = e_law_residual(s, spec1, 1e-4)
        fine = e_law_residual(s, spec1, 5e-5)
        assert coarse / fine == pytest.approx(2.0, abs=0.4)

    def test_2d_residual(self, spec2):
        cfg = SimConfig(dim=2, n=32, alpha=1.5, k0=2, a=0.1)
        assert e_law_residual(initial_state(cfg), spec2, 1e-6, probe="euler") < 1e-6

    def test_probe_validation(self, spec1, grid1):
        s = _flock_state(grid1)
        with pytest.raises(ValueError):
            e_law_residual(s, spec1, probe="midpoint")
        with pytest.raises(ValueError):
            e_law_residual(s, spec1, dt_probe=0.0)


class TestTimeStep:
    def test_diffusive_limit_at_rest(self, spec1, grid1):
        s = State(ScalarField.constant(grid1, 1.0), VectorField.constant(grid1, [0.0]), 0.0)
        expected = 0.2 * (2 * math.pi / 128) / math.pi
        assert cfl_dt(s, spec1) == pytest.approx(expected, rel=1e-12)

    def test_refinement_halves_dt(self, spec1):
        coarse = State(ScalarField.constant(TorusGrid(1, 64), 1.0),
                       VectorField.constant(TorusGrid(1, 64), [0.0]), 0.0)
        fine = State(ScalarField.constant(TorusGrid(1, 128), 1.0),
                     VectorField.constant(TorusGrid(1, 128), [0.0]), 0.0)
        spec64 = build_kernel_spec(1.0, TorusGrid(1, 64))
        assert cfl_dt(fine, spec1) <= 0.5 * cfl_dt(coarse, spec64) * (1 + 1e-12)

    def test_fast_flow_forces_small_dt(self, spec1, grid1):
        s = State(ScalarField.constant(grid1, 1.0), VectorField.constant(grid1, [1e8]), 0.0)
        assert cfl_dt(s, spec1) < 1e-9

    def test_zero_step_is_identity(self, spec1, grid1):
        s = _flock_state(grid1)
        assert step(s, 0.0, spec1) is s

    def test_negative_step(self, spec1, grid1):
        with pytest.raises(ValueError):
            step(_flock_state(grid1), -1e-3, spec1)

    def test_flock_step_translates_density(self, spec1, grid1):
        s = _flock_state(grid1)
        dt = cfl_dt(s, spec1)
        new = step(s, dt, spec1)
        assert (new.u[0] - s.u[0]).max_abs() < 1e-13
        assert (new.rho - translate(s.rho, [-0.5 * dt])).max_abs() < 1e-10
        assert new.t == pytest.approx(dt)

    def test_density_floor_aborts(self, spec1, grid1):
        cfg = SimConfig(abort_rho_min=0.5)
        s = State(ScalarField.from_function(grid1, lambda x: 1 + 0.6 * np.cos(x)),
                  VectorField.constant(grid1, [0.0]), 0.0)
        with pytest.raises(NumericalAbort) as info:
            step(s, 1e-3, spec1, cfg)
        assert info.value.last_good is s


class TestInitialData:
    def test_shapes_are_unit_size_and_mean_free(self, grid1):
        density, velocity = perturbation_shapes(grid1, 3, seed=5)
        assert density.max_abs() <= 1.0 + 1e-12
        assert abs(density.mean()) < 1e-14
        assert abs(velocity[0].mean()) < 1e-14

    def test_profile_is_resolution_independent(self):
        cfg = SimConfig(n=64)
        coarse = initial_state(cfg, TorusGrid(1, 32))
        fine = initial_state(cfg, TorusGrid(1, 64))
        np.testing.assert_allclose(fine.rho.values[::2], coarse.rho.values, atol=1e-14)
        np.testing.assert_allclose(fine.u[0].values[::2], coarse.u[0].values, atol=1e-14)

    def test_presets(self, grid1):
        uniform = initial_state(SimConfig(preset="uniform"))
        assert uniform.rho.max_abs() == 1.0 and amplitude(uniform) < 1e-15
        flock = initial_state(SimConfig(preset="flock"))
        assert amplitude(flock) < 1e-15
        perturbed = initial_state(SimConfig(eps=0.05))
        assert 0 < amplitude(perturbed) <= 2 * 0.05

    def test_2d_preset(self):
        s = initial_state(SimConfig(dim=2, n=32, ubar=(0.5, -0.25), k0=2))
        assert s.u.dim == 2
        assert s.rho.min() > 0

    def test_wavenumber_cap(self):
        with pytest.raises(ConfigError):
            initial_state(SimConfig(k0=6), TorusGrid(1, 16))


class TestRun:
    def test_zero_end_time_keeps_initial_snapshot(self):
        traj = run(SimConfig(t_end=0.0, n=32))
        assert len(traj) == 1
        assert traj.final.t == 0.0

    def test_flock_stays_a_flock(self):
        cfg = SimConfig(n=64, t_end=5.0, preset="flock", output_cadence=0.5)
        traj = run(cfg, recorder=amplitude)
        assert len(traj) == 11
        assert max(traj.records) <= 1e-13

    def test_frames_and_progress(self):
        progress = ProgressTracker()
        seen = []
        cfg = SimConfig(n=32, t_end=0.5, output_cadence=0.2)
        traj = run(cfg, on_frame=lambda i, s, r: seen.append((i, s.t)), progress=progress)
        assert [round(t, 12) for t in traj.times] == [0.0, 0.2, 0.4, 0.5]
        assert seen == [(i, s.t) for i, s in enumerate(traj.states)]
        stats = progress.get_stats()
        assert stats["total_frames"] == 4 and stats["total_steps"] == traj.steps > 0

    def test_abort_carries_partial_trajectory(self):
        cfg = SimConfig(n=32, t_end=1.0, a=0.5, abort_rho_min=0.99, output_cadence=0.5)
        with pytest.raises(NumericalAbort) as info:
            run(cfg)
        assert info.value.trajectory is not None
        assert info.value.trajectory.aborted

    def test_output_times(self):
        assert output_times(1.0, 0.5) == [0.0, 0.5, 1.0]
        times = output_times(1.0, 0.3)
        assert times[-1] == 1.0 and len(times) == 5


@pytest.mark.slow
class TestConvergence:
    def test_rk4_order_and_spectral_rate(self):
        report = convergence_study(SimConfig())
        assert report.temporal_order >= 3.7
        assert all(rate >= 4.0 for rate in report.spatial_rates)
        assert report.temporal_errors[0] > report.temporal_errors[-1]
