"""
Self-check suite: oracles and invariants of every numerical module

fast: transforms, kernel, multiplier and L_φ oracles
full: adds the e-law residual, the dissipation certificate and the convergence study
"""
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from rich.console import Console
from rich.table import Table

from .config_manager import SimConfig
from .diagnostics import nmp_certificate
from .dynamics import convergence_study, e_law_residual, e_source, initial_state
from .fractional_kernel import (apply_Lphi, build_kernel_spec, check_multiplier,
                                closed_form_norm_constant, commutator, lphi_by_quadrature,
                                norm_constant, norm_constant_by_quadrature, phi_min)
from .torus_fields import (ScalarField, TorusGrid, VectorField, derivative, transform_backward,
                           transform_forward)
from .utils import format_duration, log_message, make_rng

LEVELS = ("fast", "full")


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class VerifyReport:
    level: str
    checks: List[CheckResult] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def add(self, name: str, measured: float, tolerance: float, detail: str = "",
            upper: bool = True) -> None:
        """upper=True: pass when measured <= tolerance; else when measured >= tolerance"""
        ok = measured <= tolerance if upper else measured >= tolerance
        ok = bool(ok and np.isfinite(measured))
        self.checks.append(CheckResult(name, float(measured), float(tolerance), ok, detail))


def _random_band_limited(grid: TorusGrid, rng: np.random.Generator, kmax: int = 6,
                         mean: float = 0.0) -> ScalarField:
    modes = np.zeros(grid.shape, dtype=complex)
    keep = np.ones(grid.shape, dtype=bool)
    for k in grid.wavenumbers:
        keep &= np.abs(k) <= kmax
    modes[keep] = rng.normal(size=keep.sum()) + 1j * rng.normal(size=keep.sum())
    f = transform_backward(modes, grid)
    return f * (1.0 / f.max_abs()) + mean


def _transform_checks(report: VerifyReport, rng: np.random.Generator) -> None:
    grid = TorusGrid(1, 128)
    f = ScalarField(grid, rng.normal(size=grid.shape))
    report.add("transform_roundtrip", (transform_backward(transform_forward(f), grid) - f).max_abs(), 1e-13)

    g = ScalarField.from_function(grid, lambda x: np.sin(3 * x))
    exact = ScalarField.from_function(grid, lambda x: 3 * np.cos(3 * x))
    report.add("derivative_oracle", (derivative(g, 0) - exact).max_abs(), 1e-12)

    grid2 = TorusGrid(2, 32)
    h = ScalarField.from_function(grid2, lambda x, y: np.sin(x) * np.cos(2 * y))
    exact2 = ScalarField.from_function(grid2, lambda x, y: -2 * np.sin(x) * np.sin(2 * y))
    report.add("derivative_oracle_2d", (derivative(h, 1) - exact2).max_abs(), 1e-12)


def _kernel_checks(report: VerifyReport, rng: np.random.Generator, alpha: float,
                   multiplier_hook: Optional[Callable[[np.ndarray], np.ndarray]]) -> None:
    grid = TorusGrid(1, 128)
    spec = build_kernel_spec(alpha, grid)
    if multiplier_hook is not None:
        spec = spec.with_multiplier(multiplier_hook(np.array(spec.multiplier)))

    unit = build_kernel_spec(1.0, grid)
    report.add("phi_min_closed_form", abs(phi_min(unit) - 0.25), 1e-8, "n=1, alpha=1: 1/4")
    lam1 = float(unit.multiplier[1])
    report.add("lambda1_vs_quadrature", abs(lam1 + norm_constant_by_quadrature(1.0, 1)), 1e-8,
               f"lambda(1) = {lam1!r}")

    worst = 0.0
    for a in (0.5, 1.0, 1.5):
        for n in (1, 2):
            exact = closed_form_norm_constant(a, n)
            worst = max(worst, abs(norm_constant(a, n) - exact) / exact)
    report.add("norm_constant_closed_form", worst, 1e-8)

    audit = check_multiplier(spec)
    report.add("multiplier_lambda0", abs(audit["lambda0"]), 0.0)
    report.add("multiplier_negative", audit["max_nonzero"], 0.0)
    report.add("multiplier_homogeneity", audit["homogeneity_error"], 1e-10)
    scale = float(np.max(np.abs(spec.multiplier)))
    report.add("multiplier_radial", audit["radial_spread"] + audit["radial_increase"], 1e-12 * scale)

    f = _random_band_limited(grid, rng)
    report.add("lphi_mean_free", abs(apply_Lphi(f, spec).mean()), 1e-13)
    report.add("lphi_negative_semidefinite", float(np.mean(f.values * apply_Lphi(f, spec).values)), 1e-10)

    spectral = apply_Lphi(f, spec)
    direct = lphi_by_quadrature(f, spec, rel_tol=1e-8)
    report.add("lphi_vs_quadrature", (spectral - direct).max_abs() / spectral.max_abs(), 1e-4)

    rho = _random_band_limited(grid, rng, mean=2.0)
    u = VectorField((_random_band_limited(grid, rng),))
    const_u = VectorField.constant(grid, [0.7])
    report.add("commutator_constant_u", commutator(rho, const_u, spec)[0].max_abs(), 1e-12)
    const_rho = ScalarField.constant(grid, 1.5)
    gap = (commutator(const_rho, u, spec)[0] - 1.5 * apply_Lphi(u[0], spec)).max_abs()
    report.add("commutator_constant_rho", gap, 1e-12)


def _full_checks(report: VerifyReport, rng: np.random.Generator, alpha: float) -> None:
    cfg = SimConfig(alpha=alpha, n=128, t_end=1.0)
    spec = build_kernel_spec(cfg.alpha, cfg.grid)
    state = initial_state(cfg)
    report.add("e_law_residual", e_law_residual(state, spec, cfg.dt_probe), 1e-5)
    coarse = e_law_residual(state, spec, 1e-4)
    fine = e_law_residual(state, spec, 5e-5)
    report.add("e_law_richardson", abs(coarse / fine - 2.0), 0.4, f"ratio {coarse / fine:.3f}")
    report.add("e_source_1d", e_source(state.u).max_abs(), 0.0)

    grid2 = TorusGrid(2, 32)
    u2 = VectorField((_random_band_limited(grid2, rng, kmax=4), _random_band_limited(grid2, rng, kmax=4)))
    report.add("e_source_2d_mean", abs(e_source(u2).mean()), 1e-10)

    floor = nmp_certificate(state.u, spec, sample_count=200, seed=cfg.seed)
    report.add("nmp_certificate", floor, 1e-300, "empirical c0 floor", upper=False)

    study = convergence_study(cfg)
    report.add("rk4_order", study.temporal_order, 3.7, f"errors {study.temporal_errors}", upper=False)
    rates = study.spatial_rates or (math.inf,)
    report.add("spatial_rate", min(rates), 4.0, f"errors {study.spatial_errors}", upper=False)


def verify(level: str = "fast", alpha: float = 1.0, seed: int = 2024,
           multiplier_hook: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> VerifyReport:
    """Run the suite; multiplier_hook lets tests corrupt the table under audit"""
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
    started = time.time()
    rng = make_rng(seed)
    report = VerifyReport(level)
    _transform_checks(report, rng)
    _kernel_checks(report, rng, alpha, multiplier_hook)
    if level == "full":
        _full_checks(report, rng, alpha)
    report.elapsed = time.time() - started

    for check in report.failures:
        log_message(f"verify: {check.name} FAILED (measured {check.measured!r}, "
                    f"tolerance {check.tolerance!r})", "error")
    log_message(f"verify {level}: {len(report.checks) - len(report.failures)}/{len(report.checks)} "
                f"checks passed in {format_duration(report.elapsed)}")
    return report


def render_report(report: VerifyReport, console: Optional[Console] = None) -> None:
    console = console or Console(stderr=True)
    table = Table(title=f"verify ({report.level})")
    table.add_column("check")
    table.add_column("measured", justify="right")
    table.add_column("tolerance", justify="right")
    table.add_column("status")
    for c in report.checks:
        status = "[green]pass[/green]" if c.passed else "[red]FAIL[/red]"
        table.add_row(c.name, f"{c.measured:.3e}", f"{c.tolerance:.3e}", status)
    console.print(table)
