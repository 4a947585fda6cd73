import math

import numpy as np
import pytest

from modules.errors import KernelSpecError, SingularPointError
from modules.fractional_kernel import (_certified_phi_min, _kernel_sum, apply_Lphi,
                                       build_kernel_spec, check_multiplier,
                                       closed_form_norm_constant, commutator,
                                       dissipation_functional, kernel_scan_minimum, kernel_value,
                                       lphi_by_quadrature, multiplier_table, norm_constant,
                                       norm_constant_by_quadrature, phi_min)
from modules.torus_fields import ScalarField, TorusGrid, VectorField


def _direct_cube_sum(x, power: float, cutoff: int) -> float:
    """Σ |x + 2πk|^{-power} over |k|_∞ <= cutoff, no tail"""
    k = np.arange(-cutoff, cutoff + 1) * (2 * math.pi)
    dx, dy = np.meshgrid(x[0] + k, x[1] + k, indexing="ij")
    return float(np.sum((dx ** 2 + dy ** 2) ** (-power / 2)))


class TestKernelValue:
    def test_far_point_closed_form(self, spec1):
        # Σ_k (π + 2πk)^{-2} = 1/4
        assert kernel_value(math.pi, spec1) == pytest.approx(0.25, abs=1e-8)

    def test_nearest_image_dominates_near_zero(self, spec1):
        assert kernel_value(1e-3, spec1) > 1e5

    def test_periodic(self, spec1):
        assert kernel_value(1.0, spec1) == pytest.approx(kernel_value(1.0 + 2 * math.pi, spec1), rel=1e-12)
        assert kernel_value(1.0, spec1) == pytest.approx(kernel_value(-1.0, spec1), rel=1e-12)

    def test_singular_at_lattice_points(self, spec1):
        with pytest.raises(SingularPointError):
            kernel_value(0.0, spec1)

    def test_2d_corner_against_extrapolated_direct_sums(self):
        spec = build_kernel_spec(1.0, TorusGrid(2, 16))
        corner = np.array([math.pi, math.pi])
        cutoffs = np.array([50, 100, 200, 400])
        sums = [_direct_cube_sum(corner, 3.0, k) for k in cutoffs]
        # truncation error expands in powers of 1/(K + 1/2)
        reference = np.polyfit(1.0 / (cutoffs + 0.5), sums, 3)[-1]
        assert kernel_value(corner, spec) == pytest.approx(reference, rel=1e-7)

    def test_tail_correction_converges_in_images(self):
        coarse = float(_kernel_sum(np.array([2.0]), 0.5, 1, 10)[0])
        fine = float(_kernel_sum(np.array([2.0]), 0.5, 1, 400)[0])
        assert coarse == pytest.approx(fine, rel=1e-9)


class TestPhiMin:
    def test_alpha_one_is_a_quarter(self, spec1):
        assert phi_min(spec1) == pytest.approx(0.25, abs=1e-8)
        assert spec1.phi_min == pytest.approx(0.25, abs=1e-8)

    def test_matches_fine_scan(self):
        spec = build_kernel_spec(0.5, TorusGrid(1, 32))
        assert phi_min(spec) == pytest.approx(kernel_scan_minimum(0.5, 1, points_per_dim=4096), abs=1e-8)

    def test_positive_in_2d(self, spec2):
        assert phi_min(spec2) > 0

    def test_certification_is_shared_across_grids(self):
        first = build_kernel_spec(0.7, TorusGrid(1, 32))
        hits = _certified_phi_min.cache_info().hits
        second = build_kernel_spec(0.7, TorusGrid(1, 64))
        assert _certified_phi_min.cache_info().hits == hits + 1
        assert second.phi_min == first.phi_min
        assert second.multiplier.shape == (64,)


class TestNormalization:
    @pytest.mark.parametrize("alpha", [0.3, 1.0, 1.7])
    @pytest.mark.parametrize("dim", [1, 2])
    def test_matches_closed_form(self, alpha, dim):
        assert norm_constant(alpha, dim) == pytest.approx(closed_form_norm_constant(alpha, dim), rel=1e-9)

    def test_quadrature_gives_pi_for_alpha_one(self):
        assert norm_constant_by_quadrature(1.0, 1) == pytest.approx(math.pi, abs=1e-8)

    def test_alpha_range(self):
        with pytest.raises(KernelSpecError, match=r"alpha must lie in \(0,2\)"):
            norm_constant(2.0, 1)
        with pytest.raises(KernelSpecError):
            build_kernel_spec(0.0, TorusGrid(1, 32))


class TestMultiplier:
    def test_values_alpha_one(self, grid1):
        table = multiplier_table(1.0, 1, grid1)
        assert table[0] == 0.0
        assert table[1] == pytest.approx(-math.pi, abs=1e-12)
        assert table[2] == pytest.approx(-2 * math.pi, abs=1e-12)
        assert table[-1] == table[1]

    def test_audit_of_healthy_table(self, spec1, spec2):
        for spec in (spec1, spec2):
            audit = check_multiplier(spec)
            assert audit["lambda0"] == 0.0
            assert audit["max_nonzero"] < 0
            assert audit["homogeneity_error"] < 1e-10
            assert audit["radial_spread"] < 1e-9
            assert audit["radial_increase"] == 0.0

    def test_audit_catches_corrupted_homogeneity(self, spec1):
        table = np.array(spec1.multiplier)
        table[3] *= 1.01
        table[-3] *= 1.01
        audit = check_multiplier(spec1.with_multiplier(table))
        assert audit["homogeneity_error"] > 1e-3

    def test_positive_entry_is_rejected(self, spec1):
        table = np.array(spec1.multiplier)
        table[5] = 1.0
        with pytest.raises(KernelSpecError):
            spec1.with_multiplier(table)

    def test_table_is_read_only(self, spec1):
        with pytest.raises(ValueError):
            spec1.multiplier[1] = 0.0


class TestLphi:
    def test_constant_is_in_the_kernel(self, spec1, grid1):
        assert apply_Lphi(ScalarField.constant(grid1, 3.0), spec1).max_abs() < 1e-13

    def test_cosine_eigenfunction(self, spec1, grid1):
        f = ScalarField.from_function(grid1, np.cos)
        assert (apply_Lphi(f, spec1) + math.pi * f).max_abs() < 1e-10

    def test_spectral_matches_direct_quadrature(self, spec1, grid1, generator):
        f = generator.random_field(grid1, kmax=5)
        spectral = apply_Lphi(f, spec1)
        direct = lphi_by_quadrature(f, spec1, rel_tol=1e-8)
        assert (spectral - direct).max_abs() / spectral.max_abs() < 1e-4

    def test_negative_semidefinite(self, spec2, generator):
        f = generator.random_field(spec2.grid, kmax=6)
        assert float(np.mean(f.values * apply_Lphi(f, spec2).values)) < 0


class TestCommutator:
    def test_constant_velocity_gives_zero(self, spec1, grid1, generator):
        rho = generator.random_field(grid1, kmax=6, mean=2.0)
        u = VectorField.constant(grid1, [0.7])
        assert commutator(rho, u, spec1)[0].max_abs() < 1e-12

    def test_unit_density_reduces_to_lphi(self, spec1, grid1):
        rho = ScalarField.constant(grid1, 1.0)
        u = VectorField((ScalarField.from_function(grid1, np.cos),))
        expected = -math.pi * u[0]
        assert (commutator(rho, u, spec1)[0] - expected).max_abs() < 1e-12

    def test_definition_on_band_limited_fields(self, spec1, grid1, generator):
        rho = generator.random_field(grid1, kmax=6, mean=2.0)
        u = VectorField((generator.random_field(grid1, kmax=6),))
        direct = apply_Lphi(rho * u[0], spec1) - apply_Lphi(rho, spec1) * u[0]
        assert (commutator(rho, u, spec1)[0] - direct).max_abs() < 1e-12


class TestDissipation:
    def test_constant_has_no_dissipation(self, spec1, grid1):
        assert dissipation_functional(ScalarField.constant(grid1, 2.0), 5, spec1) == 0.0

    def test_cosine_at_origin(self, spec1, grid1):
        # ∫ (1 - cos z)² / z² dz = 2π - π
        f = ScalarField.from_function(grid1, np.cos)
        assert dissipation_functional(f, 0, spec1) == pytest.approx(math.pi, abs=1e-3)

    def test_nonnegative_everywhere(self, spec1, grid1, generator):
        f = generator.random_field(grid1, kmax=6)
        for x in (0, 17, 64, 101):
            assert dissipation_functional(f, x, spec1) >= 0.0
            assert dissipation_functional(f, x, spec1, shell="exclude") >= 0.0

    def test_taylor_shell_adds_to_excluded_shell(self, spec1, grid1):
        f = ScalarField.from_function(grid1, np.sin)
        assert (dissipation_functional(f, 0, spec1, shell="taylor")
                > dissipation_functional(f, 0, spec1, shell="exclude"))

    def test_unknown_shell(self, spec1, grid1):
        with pytest.raises(ValueError):
            dissipation_functional(ScalarField.constant(grid1, 1.0), 0, spec1, shell="none")
