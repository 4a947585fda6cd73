"""
Traveling-wave analysis of a run

The shifted density ρ̃(x,t) = ρ(x + tū, t) is Cauchy in time for a flocking
solution; its limit ρ_∞ and the mean velocity ū form the flock (ū, ρ_∞(x - tū)).
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from .config_manager import SimConfig
from .diagnostics import DecayFit, amplitude, conserved, decay_fit_above_floor, forcing
from .dynamics import State, Trajectory, perturbation_shapes, run
from .errors import DecayFitError, NotFlockedError, NumericalAbort
from .fractional_kernel import KernelSpec, build_kernel_spec
from .progress_tracker import ProgressTracker
from .torus_fields import ScalarField, VectorField, gradient, translate
from .utils import log_message
from .worker_planner import run_jobs

# relative amplitude a run must reach before its limit is extracted
FLOCK_AMPLITUDE_RATIO = 1e-6
# Cauchy differences below this multiple of max ρ count as converged
TAIL_FLOOR = 1e-10
# frames before this time are the initial transient; the flock decay fits start here
FLOCK_FIT_T_MIN = 1.0


@dataclass(frozen=True)
class FlockState:
    rho_inf: ScalarField
    u_bar: Tuple[float, ...]
    extracted_at: float
    cauchy_tail: float
    tail_times: Tuple[float, ...] = ()
    tail_values: Tuple[float, ...] = ()

    @property
    def mass(self) -> float:
        return self.rho_inf.integral()


def shifted_density(s: State, u_bar: Sequence[float]) -> ScalarField:
    """ρ̃(x,t) = ρ(x + tū, t)"""
    return translate(s.rho, s.t * np.asarray(u_bar, dtype=np.float64))


def shifted_forcing(s: State, u_bar: Sequence[float]) -> ScalarField:
    """-(u - ū)·∇ρ - (∇·u)ρ evaluated at shifted coordinates: the ∂_t ρ̃ predicted by the PDE"""
    return translate(forcing(s, u_bar), s.t * np.asarray(u_bar, dtype=np.float64))


def cauchy_series(states: Sequence[State], u_bar: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """(t_{j+1}, |ρ̃(t_{j+1}) - ρ̃(t_j)|_∞) over consecutive frames"""
    shifted = [shifted_density(s, u_bar) for s in states]
    times = np.array([s.t for s in states[1:]])
    values = np.array([(b - a).max_abs() for a, b in zip(shifted[:-1], shifted[1:])])
    return times, values


def flock_limit(traj: Trajectory, amplitude_ratio: float = FLOCK_AMPLITUDE_RATIO,
                tail_floor: float = TAIL_FLOOR) -> FlockState:
    """Final shifted frame as ρ_∞, certified by a nonincreasing Cauchy tail
    over the last quarter of the frames"""
    states = traj.states
    if len(states) < 2:
        raise NotFlockedError("need at least two frames to extract a flock")
    a0 = amplitude(states[0])
    a_end = amplitude(states[-1])
    if a0 > 0 and a_end >= amplitude_ratio * a0:
        raise NotFlockedError(f"amplitude only fell from {a0:.3e} to {a_end:.3e}; run longer")

    _, _, u_bar = conserved(states[-1])
    start = min(int(math.floor(0.75 * (len(states) - 1))), len(states) - 2)
    times, tail = cauchy_series(states[start:], u_bar)
    floor = tail_floor * states[-1].rho.max_abs()
    for j in range(1, len(tail)):
        if tail[j] > floor and tail[j] > tail[j - 1] * (1.0 + 1e-9):
            raise NotFlockedError(
                f"Cauchy tail grew from {tail[j - 1]:.3e} to {tail[j]:.3e} at t={times[j]!r}; run longer")

    rho_inf = shifted_density(states[-1], u_bar)
    log_message(f"Flock extracted at t={states[-1].t!r}: ubar={u_bar}, tail={tail[-1]:.3e}")
    return FlockState(rho_inf, tuple(u_bar), states[-1].t, float(tail[-1]),
                      tuple(times.tolist()), tuple(tail.tolist()))


def density_distance(a: ScalarField, b: ScalarField) -> Tuple[float, float]:
    """(sup|a - b|, sup|a - b| + sup|∇a - ∇b|); symmetric in a and b"""
    diff = a - b
    d_inf = diff.max_abs()
    return d_inf, d_inf + gradient(diff).max_norm()


def flock_distance(s: State, f: FlockState) -> Tuple[float, float]:
    """Distance of ρ(·,t) to the traveling flock ρ_∞(x - tū) in C⁰ and C¹"""
    comparison = translate(f.rho_inf, -s.t * np.asarray(f.u_bar, dtype=np.float64))
    return density_distance(s.rho, comparison)


@dataclass(frozen=True)
class FlockDecay:
    tail: Optional[DecayFit]
    dist_c1: Optional[DecayFit]

    def as_row(self) -> Dict[str, float]:
        row = {}
        for name, fit in (("tail", self.tail), ("dist_c1", self.dist_c1)):
            row[f"{name}_rate"] = fit.rate if fit else float("nan")
            row[f"{name}_residual"] = fit.residual if fit else float("nan")
        return row


def _fit_or_none(times, values, t_min: float, label: str) -> Optional[DecayFit]:
    try:
        return decay_fit_above_floor(times, values, t_min=t_min)
    except DecayFitError as exc:
        log_message(f"No {label} decay fit: {exc}", "debug")
        return None


def flock_decay(states: Sequence[State], flock: FlockState,
                t_min: float = FLOCK_FIT_T_MIN) -> FlockDecay:
    """Log-linear fits of the ρ̃ Cauchy tail and of the C¹ distance to the flock,
    over t >= t_min"""
    times, tail = cauchy_series(states, flock.u_bar)
    dist_c1 = [flock_distance(s, flock)[1] for s in states]
    decay = FlockDecay(_fit_or_none(times, tail, t_min, "Cauchy tail"),
                       _fit_or_none([s.t for s in states], dist_c1, t_min, "flock distance"))
    for name, fit in (("Cauchy tail", decay.tail), ("C1 flock distance", decay.dist_c1)):
        if fit is not None:
            log_message(f"{name} decays at rate {fit.rate:.4f} (residual {fit.residual:.3f})")
    return decay


# ---------------------------------------------------------------------------
# stability experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityRow:
    eps: float
    dist_inf: float
    a0: float
    run_constant: float


@dataclass(frozen=True)
class StabilityTable:
    rows: Tuple[StabilityRow, ...]
    theta: float

    def is_monotone(self, tol: float = 1e-12) -> bool:
        ordered = sorted(self.rows, key=lambda r: r.eps)
        return all(b.dist_inf >= a.dist_inf - tol for a, b in zip(ordered[:-1], ordered[1:]))

    def bound_violations(self) -> List[float]:
        """ε of the rows whose distance exceeds C_ε·ε"""
        return [r.eps for r in self.rows
                if r.eps > 0 and not r.dist_inf <= r.run_constant * r.eps]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "eps": [r.eps for r in self.rows],
            "dist_inf": [r.dist_inf for r in self.rows],
            "A0": [r.a0 for r in self.rows],
            "fitted_theta": [self.theta] * len(self.rows),
            "C_eps": [r.run_constant for r in self.rows],
        })


def fit_theta(eps: Sequence[float], distances: Sequence[float]) -> float:
    """Slope of log(distance) against log(ε) over the positive entries"""
    e = np.asarray(eps, dtype=np.float64)
    d = np.asarray(distances, dtype=np.float64)
    keep = (e > 0) & (d > 0)
    if keep.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(e[keep]), np.log(d[keep]), 1)
    return float(slope)


def perturbed_flock(base: FlockState, eps: float, cfg: SimConfig) -> State:
    """(r₀, u₀) with |u₀ - ū|_∞ <= ε/2 and |r₀ - ρ_∞|_∞ = ε/2, mean-free in ρ"""
    grid = base.rho_inf.grid
    density, velocity = perturbation_shapes(grid, cfg.k0, cfg.seed + 1)
    rho0 = base.rho_inf + density * (eps / 2.0)
    if rho0.min() <= cfg.abort_rho_min:
        raise NotFlockedError(f"eps={eps!r} perturbation makes the density non-positive")
    u0 = VectorField.constant(grid, base.u_bar) + velocity * (eps / (2.0 * math.sqrt(grid.dim)))
    return State(rho0, u0, 0.0)


def _forcing_sup(s: State) -> float:
    _, _, u_bar = conserved(s)
    return forcing(s, u_bar).max_abs()


def _stability_member(base: FlockState, eps: float, cfg: SimConfig, spec: KernelSpec,
                      progress: Optional[ProgressTracker]) -> StabilityRow:
    initial = perturbed_flock(base, eps, cfg)
    member_cfg = cfg.override("name", f"{cfg.name}_eps{eps:g}".replace("+", ""))
    try:
        traj = run(member_cfg, spec, initial=initial, recorder=_forcing_sup, progress=progress)
        limit = flock_limit(traj)
    except (NotFlockedError, NumericalAbort) as exc:
        if progress:
            progress.finish_run(False)
        raise NotFlockedError(f"stability run eps={eps!r} did not flock: {exc}") from exc
    if progress:
        progress.finish_run(True)

    distance = (limit.rho_inf - base.rho_inf).max_abs()
    displacement = (initial.rho - base.rho_inf).max_abs()
    integrated = float(trapezoid(traj.records, traj.times)) if len(traj) > 1 else 0.0
    constant = (integrated + displacement) / eps if eps > 0 else float("nan")
    return StabilityRow(float(eps), float(distance), amplitude(initial), float(constant))


def stability_experiment(base: FlockState, eps_list: Sequence[float], cfg: SimConfig,
                         workers: int = 1, spec: Optional[KernelSpec] = None,
                         progress: Optional[ProgressTracker] = None) -> StabilityTable:
    """Perturb the flock by ε for each entry, run to convergence, measure |r_∞ - ρ_∞|_∞

    Rows come back in ascending ε regardless of completion order.
    """
    eps_values = sorted(float(e) for e in eps_list)
    if not eps_values:
        raise ValueError("eps list must not be empty")
    if eps_values[0] < 0:
        raise ValueError("eps values must be >= 0")
    grid = base.rho_inf.grid
    if cfg.dim != grid.dim:
        raise ValueError(f"config dim {cfg.dim} does not match the flock profile dim {grid.dim}")
    if cfg.n != grid.points_per_dim:
        cfg = cfg.override("n", grid.points_per_dim)
    spec = spec or build_kernel_spec(cfg.alpha, grid, cfg.lattice_images)

    rows = run_jobs(lambda e: _stability_member(base, e, cfg, spec, progress),
                    eps_values, workers, description="stability")
    theta = fit_theta([r.eps for r in rows], [r.dist_inf for r in rows])
    log_message(f"Stability experiment: {len(rows)} runs, fitted theta={theta:.3f}")
    return StabilityTable(tuple(rows), theta)
