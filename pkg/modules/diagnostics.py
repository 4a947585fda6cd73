"""
Monitored scalars of a run: conserved quantities, amplitude, Hölder seminorms,
density bounds, e-norms, decay fits and the dissipation certificate
"""
import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .dynamics import State, e_quantity
from .errors import DecayFitError, NMPCertificateError, NonPositiveMassError
from .fractional_kernel import KernelSpec, dissipation_functional
from .torus_fields import (GridShift, ScalarField, VectorField, divergence, finite_difference,
                           gradient, lattice_shifts, transform_backward)
from .utils import log_message, make_rng

Field = Union[ScalarField, VectorField]

# smallest value a decay fit accepts, relative to float64 epsilon
FIT_FLOOR = 100.0 * np.finfo(np.float64).eps
# relative roundoff slack of the interpolation inequality
INTERPOLATION_RTOL = 1e-12
# samples with |δ³_h u(x)| below this multiple of [u]₂|h|² are skipped
NMP_SKIP_THRESHOLD = 1e-8


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass: float
    momentum: Tuple[float, ...]
    mean_velocity: Tuple[float, ...]
    amplitude: float
    rho_min: float
    rho_max: float
    e_inf: float
    e_lip: float
    u_c1: float
    u_c2: float
    u_c2g: float
    flock_dist_inf: float = float("nan")
    flock_dist_c1: float = float("nan")
    div_inf: float = float("nan")
    forcing_inf: float = float("nan")

    def as_row(self) -> Dict[str, float]:
        row = {"t": self.t, "mass": self.mass}
        for i, p in enumerate(self.momentum, start=1):
            row[f"p{i}"] = p
        for i, v in enumerate(self.mean_velocity, start=1):
            row[f"ubar{i}"] = v
        for key in ("amplitude", "rho_min", "rho_max", "e_inf", "e_lip", "u_c1", "u_c2",
                    "u_c2g", "flock_dist_inf", "flock_dist_c1", "div_inf", "forcing_inf"):
            row[key] = getattr(self, key)
        return row

    def with_flock_distances(self, d_inf: float, d_c1: float) -> "DiagnosticsRecord":
        values = asdict(self)
        values.update(flock_dist_inf=d_inf, flock_dist_c1=d_c1)
        return DiagnosticsRecord(**values)


def record_columns(dim: int) -> List[str]:
    """diagnostics.csv column order"""
    return (["t", "mass"] + [f"p{i}" for i in range(1, dim + 1)]
            + [f"ubar{i}" for i in range(1, dim + 1)]
            + ["amplitude", "rho_min", "rho_max", "e_inf", "e_lip", "u_c1", "u_c2", "u_c2g",
               "flock_dist_inf", "flock_dist_c1", "div_inf", "forcing_inf"])


@dataclass(frozen=True)
class DecayFit:
    rate: float
    prefactor: float
    fit_window: Tuple[float, float]
    residual: float

    def envelope(self, t) -> np.ndarray:
        return self.prefactor * np.exp(-self.rate * np.asarray(t, dtype=np.float64))


# ---------------------------------------------------------------------------
# conserved quantities and amplitude
# ---------------------------------------------------------------------------

def conserved(s: State) -> Tuple[float, Tuple[float, ...], Tuple[float, ...]]:
    """(M, P, ū) by the trapezoid rule, which is spectral on the periodic grid"""
    mass = s.rho.integral()
    if not mass > 0:
        raise NonPositiveMassError(f"total mass {mass!r} must be positive")
    momentum = tuple((s.rho * ui).integral() for ui in s.u)
    return mass, momentum, tuple(p / mass for p in momentum)


def amplitude(s: State) -> float:
    """A = max_x |u(x) - ū|"""
    _, _, ubar = conserved(s)
    return float(np.max(np.sqrt(sum((c.values - v) ** 2 for c, v in zip(s.u, ubar)))))


def relative_drift(series: Sequence[float]) -> float:
    """max_t |q(t) - q(0)| / |q(0)|, or the absolute drift when q(0) = 0"""
    values = np.asarray(series, dtype=np.float64)
    scale = abs(values[0])
    drift = float(np.max(np.abs(values - values[0])))
    return drift / scale if scale > 0 else drift


# ---------------------------------------------------------------------------
# Hölder seminorms
# ---------------------------------------------------------------------------

def _order_of(s: float) -> int:
    if s == 1:
        return 1
    if s == 2:
        return 2
    if 2 < s < 3:
        return 3
    raise ValueError(f"seminorm order must be 1, 2 or in (2,3), got {s}")


def _norm_values(f: Field) -> np.ndarray:
    if isinstance(f, VectorField):
        return f.norm_values()
    return np.abs(f.values)


def holder_seminorm(u: Field, s: float, shifts: Optional[Sequence[GridShift]] = None) -> float:
    """sup_{x,h} |δ_h^m u(x)| / |h|^s with m = 1, 2, 3 for s = 1, 2, 2+γ

    Shifts with 0 < |h| <= π; in 2D the axis and diagonal directions.
    """
    order = _order_of(s)
    grid = u.grid
    shifts = shifts if shifts is not None else lattice_shifts(grid)
    best = 0.0
    for h in shifts:
        diff = finite_difference(u, h, order)
        best = max(best, float(np.max(_norm_values(diff))) / h.as_length ** s)
    return best


def interpolation_violation(u: VectorField, amplitude_value: float, seminorm: float,
                            s: float, shifts: Optional[Sequence[GridShift]] = None) -> float:
    """Largest excess of |δ³_h u(x)| over min(8A, [u]_s |h|^s), relative to that bound

    Excesses up to INTERPOLATION_RTOL are roundoff and count as 0.
    """
    grid = u.grid
    shifts = shifts if shifts is not None else lattice_shifts(grid)
    worst = 0.0
    for h in shifts:
        third = float(np.max(_norm_values(finite_difference(u, h, 3))))
        bound = min(8.0 * amplitude_value, seminorm * h.as_length ** s)
        excess = (third - bound) / max(bound, 1e-300)
        if excess > INTERPOLATION_RTOL:
            worst = max(worst, excess)
    return worst


def heat_smooth(f: ScalarField, s: float) -> ScalarField:
    """Multiplier e^{-|k|² s}"""
    if s < 0:
        raise ValueError("smoothing time must be >= 0")
    return transform_backward(f.modes * np.exp(-f.grid.kmag ** 2 * s), f.grid)


# ---------------------------------------------------------------------------
# decay fits
# ---------------------------------------------------------------------------

def decay_fit(times: Sequence[float], values: Sequence[float],
              window: Optional[Tuple[float, float]] = None) -> DecayFit:
    """Least-squares line through (t, log v); rate = -slope"""
    t = np.asarray(times, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if t.shape != v.shape:
        raise DecayFitError("times and values must have the same length")
    if window is not None:
        keep = (t >= window[0]) & (t <= window[1])
        t, v = t[keep], v[keep]
    if len(t) < 2:
        raise DecayFitError("a decay fit needs at least two samples in the window")
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise DecayFitError("series must be positive and finite on the fit window")
    if np.any(v < FIT_FLOOR):
        raise DecayFitError(f"series drops below {FIT_FLOOR:.2e} on the fit window")

    logs = np.log(v)
    slope, intercept = np.polyfit(t, logs, 1)
    residual = float(np.sqrt(np.mean((logs - (slope * t + intercept)) ** 2)))
    rate = float(-slope)
    if rate < 0:
        log_message(f"decay fit found growth (slope {slope:.3e}); rate reported as 0", "warning")
        rate = 0.0
    return DecayFit(rate, float(math.exp(intercept)), (float(t[0]), float(t[-1])), residual)


def decay_fit_above_floor(times: Sequence[float], values: Sequence[float],
                          rel_floor: float = 1e-9, t_min: float = 0.0) -> DecayFit:
    """decay_fit over t >= t_min, up to the first sample below rel_floor·v(0) or the fit floor"""
    t = np.asarray(times, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    floor = max(FIT_FLOOR, rel_floor * abs(v[0])) if len(v) else FIT_FLOOR
    below = np.nonzero(~(v > floor))[0]
    stop = int(below[0]) if len(below) else len(v)
    keep = np.arange(stop)
    keep = keep[t[keep] >= t_min]
    if len(keep) < 2:
        raise DecayFitError(f"fewer than two samples above the floor {floor:.2e}")
    return decay_fit(t[keep], v[keep])


# ---------------------------------------------------------------------------
# dissipation certificate
# ---------------------------------------------------------------------------

def nmp_ratio(u: Field, x, h: GridShift, spec: KernelSpec, seminorm2: Optional[float] = None,
              shell: str = "taylor", third: Optional[Field] = None) -> Optional[float]:
    """D_α(δ³_h u)(x)·[u]₂^α·|h|^{3α} / |δ³_h u(x)|^{2+α}, or None for a degenerate sample"""
    seminorm2 = holder_seminorm(u, 2) if seminorm2 is None else seminorm2
    third = finite_difference(u, h, 3) if third is None else third
    idx = tuple(int(i) for i in np.atleast_1d(x))
    size = float(_norm_values(third)[idx])
    length = h.as_length
    if size < NMP_SKIP_THRESHOLD * seminorm2 * length ** 2 or size == 0.0:
        return None
    alpha = spec.alpha
    dissipation = dissipation_functional(third, idx, spec, shell=shell)
    return dissipation * seminorm2 ** alpha * length ** (3 * alpha) / size ** (2 + alpha)


def nmp_certificate(u: Field, spec: KernelSpec, sample_count: int = 200, seed: int = 0,
                    shell: str = "taylor") -> float:
    """Minimum ratio over random (x, h) samples: an empirical floor for c₀"""
    grid = u.grid
    rng = make_rng(seed)
    shifts = lattice_shifts(grid)
    seminorm2 = holder_seminorm(u, 2, shifts)
    thirds: Dict[Tuple[int, ...], Field] = {}
    best = math.inf
    skipped = 0
    for _ in range(sample_count):
        x = tuple(int(i) for i in rng.integers(0, grid.points_per_dim, size=grid.dim))
        h = shifts[int(rng.integers(0, len(shifts)))]
        if h.offsets not in thirds:
            thirds[h.offsets] = finite_difference(u, h, 3)
        ratio = nmp_ratio(u, x, h, spec, seminorm2, shell, thirds[h.offsets])
        if ratio is None:
            skipped += 1
            continue
        best = min(best, ratio)
    if skipped:
        log_message(f"NMP certificate: skipped {skipped}/{sample_count} degenerate samples "
                    f"(threshold {NMP_SKIP_THRESHOLD:g}·[u]₂|h|²)", "debug")
    if skipped == sample_count:
        raise NMPCertificateError("every NMP sample was degenerate (is u constant?)")
    return best


# ---------------------------------------------------------------------------
# per-frame records and trajectory checks
# ---------------------------------------------------------------------------

def forcing(s: State, ubar: Sequence[float]) -> ScalarField:
    """-(u - ū)·∇ρ - (∇·u)ρ, the right side of the shifted-density equation"""
    grad_rho = gradient(s.rho)
    total = divergence(s.u) * s.rho
    for ui, gi, vi in zip(s.u, grad_rho, ubar):
        total = total + (ui - vi) * gi
    return -total


def record_state(s: State, spec: KernelSpec, gamma: float = 0.25,
                 flock_distances: Tuple[float, float] = (float("nan"), float("nan")),
                 shifts: Optional[Sequence[GridShift]] = None) -> DiagnosticsRecord:
    mass, momentum, ubar = conserved(s)
    shifts = shifts if shifts is not None else lattice_shifts(s.grid)
    e = e_quantity(s, spec).e
    return DiagnosticsRecord(
        t=s.t,
        mass=mass,
        momentum=momentum,
        mean_velocity=ubar,
        amplitude=amplitude(s),
        rho_min=s.rho.min(),
        rho_max=s.rho.max(),
        e_inf=e.max_abs(),
        e_lip=holder_seminorm(e, 1, shifts),
        u_c1=holder_seminorm(s.u, 1, shifts),
        u_c2=holder_seminorm(s.u, 2, shifts),
        u_c2g=holder_seminorm(s.u, 2.0 + gamma, shifts),
        flock_dist_inf=flock_distances[0],
        flock_dist_c1=flock_distances[1],
        div_inf=divergence(s.u).max_abs(),
        forcing_inf=forcing(s, ubar).max_abs(),
    )


def make_recorder(spec: KernelSpec, gamma: float = 0.25) -> Callable[[State], DiagnosticsRecord]:
    shifts = lattice_shifts(spec.grid)

    def recorder(s: State) -> DiagnosticsRecord:
        return record_state(s, spec, gamma, shifts=shifts)

    return recorder


def max_principle_violations(states: Sequence[State], tol: float = 1e-8) -> List[Tuple[int, int, str, float]]:
    """Frames where max u_i grew or min u_i fell by more than tol: (frame, component, side, excess)"""
    found = []
    for j in range(1, len(states)):
        for i, (prev, cur) in enumerate(zip(states[j - 1].u, states[j].u)):
            grew = cur.max() - prev.max()
            fell = prev.min() - cur.min()
            if grew > tol:
                found.append((j, i, "max", grew))
            if fell > tol:
                found.append((j, i, "min", fell))
    return found


def density_envelope_violations(times: Sequence[float], rho_min: Sequence[float],
                                rho_max: Sequence[float], div_inf: Sequence[float],
                                slack: float = 1e-3) -> List[int]:
    """Frames outside ρ_min(0)e^{-∫|∇·u|_∞}(1-slack) <= ρ <= ρ_max(0)e^{∫|∇·u|_∞}(1+slack)"""
    t = np.asarray(times, dtype=np.float64)
    lo = np.asarray(rho_min, dtype=np.float64)
    hi = np.asarray(rho_max, dtype=np.float64)
    accumulated = cumulative_trapezoid(np.asarray(div_inf, dtype=np.float64), t, initial=0.0)
    lower = lo[0] * np.exp(-accumulated) * (1.0 - slack)
    upper = hi[0] * np.exp(accumulated) * (1.0 + slack)
    return [int(j) for j in np.nonzero((lo < lower) | (hi > upper))[0]]


def amplitude_bound_violations(times: Sequence[float], amplitudes: Sequence[float],
                               phi_min_value: float, mass: float, slack: float = 1.02) -> List[int]:
    """Frames with A(t) > slack·A₀·e^{-φ_min M t}"""
    t = np.asarray(times, dtype=np.float64)
    a = np.asarray(amplitudes, dtype=np.float64)
    bound = slack * a[0] * np.exp(-phi_min_value * mass * (t - t[0]))
    return [int(j) for j in np.nonzero(a > bound)[0]]


def amplitude_monotonicity_violations(amplitudes: Sequence[float], tol: float = 1e-6) -> List[int]:
    a = np.asarray(amplitudes, dtype=np.float64)
    return [int(j) + 1 for j in np.nonzero(a[1:] > a[:-1] * (1.0 + tol))[0]]
