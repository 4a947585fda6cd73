"""
Periodized fractional kernel, the alignment operator L_φ and related functionals

    φ_α(x) = Σ_{k ∈ Z^n} |x + 2πk|^{-(n+α)},    0 < α < 2
    L_φ f(x) = ∫_{T^n} φ(x - y) (f(y) - f(x)) dy
    L_φ e^{ik·x} = -c(n,α) |k|^α e^{ik·x},  c(n,α) = ∫_{R^n} (1 - cos z_1) |z|^{-n-α} dz

L_φ is applied spectrally in the hot path. The kernel itself is only used for
φ_min, the quadrature oracles and the dissipation functional D_α.
"""
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Tuple, Union

import numpy as np
from scipy import integrate, special

from .errors import (GridMismatchError, KernelCertificationError, KernelSpecError,
                     QuadratureError, SingularPointError)
from .torus_fields import (TWO_PI, ScalarField, TorusGrid, VectorField, derivative,
                           evaluate_at, multiply, transform_backward, translate)

DEFAULT_LATTICE_IMAGES = 20
SCAN_POINTS_PER_DIM = 64

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(48)
_PANEL_X, _PANEL_W = np.polynomial.legendre.leggauss(8)

# points x images handled per chunk in the lattice sum
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Kernel parameters and the spectral multiplier table for one grid"""

    alpha: float
    dim: int
    lattice_images: int
    multiplier: np.ndarray = field(repr=False)
    phi_min: float
    norm_const: float
    grid: TorusGrid

    def __post_init__(self):
        _check_alpha(self.alpha)
        if self.dim != self.grid.dim:
            raise KernelSpecError(f"kernel dim {self.dim} does not match grid dim {self.grid.dim}")
        if self.lattice_images < 1:
            raise KernelSpecError("lattice_images must be >= 1")
        table = np.array(self.multiplier, dtype=np.float64)
        if table.shape != self.grid.shape:
            raise KernelSpecError(f"multiplier table shape {table.shape} does not match grid")
        if table.flat[0] != 0.0:
            raise KernelSpecError("multiplier must vanish at k = 0")
        if np.any(table.ravel()[1:] >= 0.0):
            raise KernelSpecError("multiplier must be negative for k != 0")
        if not self.phi_min > 0.0:
            raise KernelSpecError("phi_min must be positive")
        if not self.norm_const > 0.0:
            raise KernelSpecError("norm_const must be positive")
        table.setflags(write=False)
        object.__setattr__(self, "multiplier", table)

    def with_multiplier(self, table: np.ndarray) -> "KernelSpec":
        """Same kernel with a replaced table (used by fault-injection checks)"""
        return KernelSpec(self.alpha, self.dim, self.lattice_images, table,
                          self.phi_min, self.norm_const, self.grid)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 2.0:
        raise KernelSpecError("alpha must lie in (0,2)")


# ---------------------------------------------------------------------------
# normalization constant c(n, α)
# ---------------------------------------------------------------------------

def closed_form_norm_constant(alpha: float, dim: int) -> float:
    """c(n,α) = Γ(1-α/2) π^{n/2} / (α 2^{α-1} Γ((n+α)/2))"""
    _check_alpha(alpha)
    return (special.gamma(1.0 - alpha / 2.0) * math.pi ** (dim / 2.0)
            / (alpha * 2.0 ** (alpha - 1.0) * special.gamma((dim + alpha) / 2.0)))


def _transverse_factor(alpha: float) -> float:
    """∫_R (1 + t²)^{-(2+α)/2} dt, which turns c(1,α) into c(2,α)"""
    value, err = integrate.quad(lambda t: (1.0 + t * t) ** (-(2.0 + alpha) / 2.0),
                                0.0, np.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    if not np.isfinite(value) or err > 1e-10 * abs(value):
        raise QuadratureError(f"transverse factor did not converge (alpha={alpha}, err={err:.2e})")
    return 2.0 * value


def norm_constant(alpha: float, dim: int) -> float:
    """c(n,α): closed form in 1D, 1D constant times adaptive quadrature in 2D"""
    _check_alpha(alpha)
    c1 = math.pi / (special.gamma(1.0 + alpha) * math.sin(math.pi * alpha / 2.0))
    if dim == 1:
        return c1
    if dim != 2:
        raise KernelSpecError(f"dim must be 1 or 2, got {dim}")
    c2 = c1 * _transverse_factor(alpha)
    oracle = closed_form_norm_constant(alpha, 2)
    if abs(c2 - oracle) > 1e-8 * oracle:
        raise QuadratureError(f"c(2,{alpha}) by quadrature {c2!r} disagrees with closed form {oracle!r}")
    return c2


def _one_minus_cos_over_square(z: float) -> float:
    if z < 1e-4:
        return 0.5 - z * z / 24.0
    s = math.sin(z / 2.0)
    return 2.0 * s * s / (z * z)


def norm_constant_by_quadrature(alpha: float, dim: int) -> float:
    """c(n,α) from adaptive quadrature only

    1D: 2[∫_0^1 (1-cos z) z^{-1-α} dz + 1/α - ∫_1^∞ cos z · z^{-1-α} dz]
    2D: the 1D value times the transverse factor.
    """
    _check_alpha(alpha)
    near, err_near = integrate.quad(_one_minus_cos_over_square, 0.0, 1.0,
                                    weight="alg", wvar=(1.0 - alpha, 0.0), epsabs=1e-14)
    far, err_far = integrate.quad(lambda z: z ** (-1.0 - alpha), 1.0, np.inf,
                                  weight="cos", wvar=1.0, epsabs=1e-14)
    if err_near > 1e-10 or err_far > 1e-10:
        raise QuadratureError(f"c(1,{alpha}) quadrature did not converge "
                              f"(errors {err_near:.2e}, {err_far:.2e})")
    c1 = 2.0 * (near + 1.0 / alpha - far)
    if dim == 1:
        return c1
    return c1 * _transverse_factor(alpha)


def multiplier_table(alpha: float, dim: int, grid: TorusGrid) -> np.ndarray:
    """λ(k) = -c(n,α)|k|^α on the grid's wavenumbers"""
    if grid.dim != dim:
        raise GridMismatchError(f"grid dim {grid.dim} does not match kernel dim {dim}")
    return -norm_constant(alpha, dim) * grid.kmag ** alpha


# ---------------------------------------------------------------------------
# lattice sum
# ---------------------------------------------------------------------------

def _reduce_points(points, dim: int) -> Tuple[np.ndarray, Tuple[int, ...]]:
    pts = np.asarray(points, dtype=np.float64)
    if dim == 1:
        out_shape = pts.shape
        pts = pts.reshape(-1, 1)
    else:
        if pts.shape[-1] != dim:
            raise KernelSpecError(f"points must have a trailing axis of length {dim}")
        out_shape = pts.shape[:-1]
        pts = pts.reshape(-1, dim)
    reduced = np.mod(pts + math.pi, TWO_PI) - math.pi
    return reduced, out_shape


def _side_integrals(w: np.ndarray, half_side: float, q: float) -> np.ndarray:
    """∫_0^{2π} r(θ)^{-q} dθ, r(θ) = distance from 0 to the boundary of the square
    of half-side `half_side` centred at w (origin inside)"""
    total = np.zeros(len(w))
    w1, w2 = w[:, 0], w[:, 1]
    sides = (
        (half_side + w1, w2 - half_side, w2 + half_side),
        (half_side - w1, w2 - half_side, w2 + half_side),
        (half_side + w2, w1 - half_side, w1 + half_side),
        (half_side - w2, w1 - half_side, w1 + half_side),
    )
    for dist, lo, hi in sides:
        psi_lo = np.arctan(lo / dist)
        psi_hi = np.arctan(hi / dist)
        mid = 0.5 * (psi_hi + psi_lo)
        half = 0.5 * (psi_hi - psi_lo)
        psi = mid[:, None] + half[:, None] * _GAUSS_X[None, :]
        total += dist ** (-q) * half * (np.cos(psi) ** q @ _GAUSS_W)
    return total


def _tail_correction(w: np.ndarray, alpha: float, dim: int, images: int) -> np.ndarray:
    """Sum over the discarded shells |k|_∞ > K, by comparison with the integral
    over the complement of the truncation cube (midpoint rule corrections)"""
    a = TWO_PI * (images + 0.5)
    p = dim + alpha
    if dim == 1:
        tail = np.zeros(len(w))
        for side in (a + w[:, 0], a - w[:, 0]):
            tail += (side ** (-alpha) / (TWO_PI * alpha)
                     - TWO_PI * p / 24.0 * side ** (-p - 1.0)
                     + 7.0 / 5760.0 * p * (p + 1.0) * (p + 2.0) * TWO_PI ** 3 * side ** (-p - 3.0))
        return tail
    return (_side_integrals(w, a, alpha) / (TWO_PI ** 2 * alpha)
            - p / 24.0 * _side_integrals(w, a, p))


@lru_cache(maxsize=16)
def _image_offsets(dim: int, images: int) -> np.ndarray:
    k = np.arange(-images, images + 1, dtype=np.float64)
    mesh = np.meshgrid(*([k] * dim), indexing="ij")
    offsets = TWO_PI * np.stack([m.ravel() for m in mesh], axis=1)
    offsets.setflags(write=False)
    return offsets


def _kernel_sum(points, alpha: float, dim: int, images: int) -> np.ndarray:
    w, out_shape = _reduce_points(points, dim)
    singular = np.all(w == 0.0, axis=1)
    if np.any(singular):
        raise SingularPointError("kernel is singular at x = 0 (mod 2π)")
    offsets = _image_offsets(dim, images)
    p = dim + alpha
    result = np.empty(len(w))
    chunk = max(1, _CHUNK_ELEMENTS // len(offsets))
    for start in range(0, len(w), chunk):
        block = w[start:start + chunk]
        dist2 = ((block[:, None, :] + offsets[None, :, :]) ** 2).sum(axis=-1)
        result[start:start + chunk] = (dist2 ** (-p / 2.0)).sum(axis=1)
    result += _tail_correction(w, alpha, dim, images)
    return result.reshape(out_shape)


def kernel_value(x, spec: KernelSpec) -> Union[float, np.ndarray]:
    """φ_α(x): truncated lattice sum over |k|_∞ <= K plus analytic tail"""
    values = _kernel_sum(x, spec.alpha, spec.dim, spec.lattice_images)
    return float(values) if np.ndim(values) == 0 else values


def kernel_scan_minimum(alpha: float, dim: int, images: int = DEFAULT_LATTICE_IMAGES,
                        points_per_dim: int = SCAN_POINTS_PER_DIM) -> float:
    """Minimum of φ over a uniform scan of the torus (origin excluded)"""
    x = np.arange(points_per_dim) * (TWO_PI / points_per_dim)
    mesh = np.meshgrid(*([x] * dim), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)[1:]
    if dim == 1:
        pts = pts[:, 0]
    return float(np.min(_kernel_sum(pts, alpha, dim, images)))


@lru_cache(maxsize=32)
def _certified_phi_min(alpha: float, dim: int, images: int) -> float:
    far = float(_kernel_sum(np.full(dim, math.pi) if dim > 1 else math.pi, alpha, dim, images))
    scanned = kernel_scan_minimum(alpha, dim, images)
    if scanned < far * (1.0 - 1e-12):
        raise KernelCertificationError(
            f"grid scan found φ = {scanned!r} below the far-corner value {far!r}")
    return far


def phi_min(spec: KernelSpec) -> float:
    """min_x φ(x): the far corner (π,…,π), certified by a 64-per-dim scan"""
    return _certified_phi_min(spec.alpha, spec.dim, spec.lattice_images)


def build_kernel_spec(alpha: float, grid: TorusGrid,
                      lattice_images: int = DEFAULT_LATTICE_IMAGES) -> KernelSpec:
    _check_alpha(alpha)
    table = multiplier_table(alpha, grid.dim, grid)
    return KernelSpec(
        alpha=float(alpha),
        dim=grid.dim,
        lattice_images=int(lattice_images),
        multiplier=table,
        phi_min=_certified_phi_min(float(alpha), grid.dim, int(lattice_images)),
        norm_const=norm_constant(alpha, grid.dim),
        grid=grid,
    )


def check_multiplier(spec: KernelSpec) -> Dict[str, float]:
    """Audit of the table: λ(0), sign, radial dependence and homogeneity"""
    grid = spec.grid
    table = spec.multiplier
    n = grid.points_per_dim

    small = np.ones(grid.shape, dtype=bool)
    for k in grid.wavenumbers:
        small &= np.abs(k) <= n // 4
    small.flat[0] = False
    doubled = tuple(np.mod(2 * k[small], n) for k in grid.wavenumbers)
    ratio = table[doubled] / table[small]
    homogeneity = float(np.max(np.abs(ratio - 2.0 ** spec.alpha)))

    radii = np.round(grid.kmag.ravel(), 9)
    values = table.ravel()
    order = np.argsort(radii, kind="stable")
    radii, values = radii[order], values[order]
    unique, start = np.unique(radii, return_index=True)
    spread = 0.0
    means = []
    for i, s in enumerate(start):
        stop = start[i + 1] if i + 1 < len(start) else len(values)
        group = values[s:stop]
        spread = max(spread, float(group.max() - group.min()))
        means.append(group.mean())
    increments = np.diff(np.asarray(means))
    radial = float(max(0.0, increments.max())) if len(increments) else 0.0

    return {
        "lambda0": float(table.flat[0]),
        "max_nonzero": float(values[1:].max()),
        "homogeneity_error": homogeneity,
        "radial_spread": spread,
        "radial_increase": radial,
    }


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def _check_grid(grid: TorusGrid, spec: KernelSpec) -> None:
    if grid != spec.grid:
        raise GridMismatchError(f"field grid {grid} does not match kernel grid {spec.grid}")


def apply_Lphi(f: ScalarField, spec: KernelSpec) -> ScalarField:
    """L_φ f by spectral multiplication"""
    _check_grid(f.grid, spec)
    return transform_backward(f.modes * spec.multiplier, f.grid)


def commutator(rho: ScalarField, u: VectorField, spec: KernelSpec,
               dealiased: bool = True) -> VectorField:
    """[L_φ, u](ρ) = L_φ(ρu) - L_φ(ρ)u, componentwise"""
    _check_grid(rho.grid, spec)
    if u.grid != rho.grid:
        raise GridMismatchError("rho and u live on different grids")
    l_rho = apply_Lphi(rho, spec)
    comps = []
    for ui in u:
        flux = apply_Lphi(multiply(rho, ui, dealiased), spec)
        comps.append(flux - multiply(l_rho, ui, dealiased))
    return VectorField(tuple(comps))


def lphi_by_quadrature(f: ScalarField, spec: KernelSpec, rel_tol: float = 1e-10,
                       n_theta: int = 32, n_radial: int = 64) -> ScalarField:
    """Direct quadrature of ∫ φ(z)(f(x+z) - f(x)) dz at every node (test oracle)

    The integrand is symmetrized, φ(z)(f(x+z) + f(x-z) - 2f(x)), over half the cell.
    1D uses adaptive vector quadrature; 2D a polar Gauss rule with r = R s².
    """
    _check_grid(f.grid, spec)
    base = f.values

    def symmetric_part(z: np.ndarray) -> np.ndarray:
        return translate(f, z).values + translate(f, -z).values - 2.0 * base

    if spec.dim == 1:
        def integrand(z):
            phi = _kernel_sum(np.array([z]), spec.alpha, 1, spec.lattice_images)[0]
            return phi * symmetric_part(np.array([z]))

        value, err = integrate.quad_vec(integrand, 0.0, math.pi, epsrel=rel_tol, epsabs=1e-13)
        if not np.all(np.isfinite(value)):
            raise QuadratureError("direct quadrature of L_φ produced non-finite values")
        return ScalarField(f.grid, value)

    psi_x, psi_w = np.polynomial.legendre.leggauss(n_theta)
    s_x, s_w = np.polynomial.legendre.leggauss(n_radial)
    psi = (math.pi / 4.0) * psi_x
    psi_w = (math.pi / 4.0) * psi_w
    s = 0.5 * (s_x + 1.0)
    s_w = 0.5 * s_w
    total = np.zeros(f.grid.shape)
    for normal in (0.0, math.pi / 2.0):
        for p_i, p_w in zip(psi, psi_w):
            theta = normal + p_i
            reach = math.pi / math.cos(p_i)
            direction = np.array([math.cos(theta), math.sin(theta)])
            radii = reach * s ** 2
            weights = p_w * s_w * 2.0 * reach ** 2 * s ** 3
            phis = _kernel_sum(radii[:, None] * direction[None, :], spec.alpha, 2, spec.lattice_images)
            for r, wgt, phi in zip(radii, weights, phis):
                total += wgt * phi * symmetric_part(r * direction)
    return ScalarField(f.grid, total)


# ---------------------------------------------------------------------------
# dissipation functional D_α
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _dissipation_nodes(alpha: float, dim: int, points_per_dim: int, images: int,
                       panels: int, n_theta: int) -> Tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes on the periodic cell minus the ball |z| < spacing,
    with weights already multiplied by φ(z). Radii use r = Δ (R/Δ)^s."""
    spacing = TWO_PI / points_per_dim
    edges = np.linspace(0.0, 1.0, panels + 1)
    s = ((edges[:-1, None] + edges[1:, None]) / 2.0
         + (edges[1:, None] - edges[:-1, None]) / 2.0 * _PANEL_X[None, :]).ravel()
    s_w = ((edges[1:, None] - edges[:-1, None]) / 2.0 * _PANEL_W[None, :]).ravel()

    if dim == 1:
        log_ratio = math.log(math.pi / spacing)
        z = spacing * (math.pi / spacing) ** s
        w = s_w * z * log_ratio
        points = np.concatenate([z, -z])[:, None]
        weights = np.concatenate([w, w])
    else:
        psi_x, psi_w = np.polynomial.legendre.leggauss(n_theta)
        psi = (math.pi / 4.0) * psi_x
        psi_w = (math.pi / 4.0) * psi_w
        pts, wts = [], []
        for normal in (0.0, math.pi / 2.0, math.pi, 1.5 * math.pi):
            for p_i, p_w in zip(psi, psi_w):
                reach = math.pi / math.cos(p_i)
                log_ratio = math.log(reach / spacing)
                r = spacing * (reach / spacing) ** s
                theta = normal + p_i
                pts.append(np.stack([r * math.cos(theta), r * math.sin(theta)], axis=1))
                wts.append(p_w * s_w * r * r * log_ratio)
        points = np.concatenate(pts)
        weights = np.concatenate(wts)

    weights = weights * _kernel_sum(points if dim > 1 else points[:, 0], alpha, dim, images)
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


def _node_index(x, dim: int) -> Tuple[int, ...]:
    idx = tuple(int(i) for i in np.atleast_1d(x))
    if len(idx) != dim:
        raise ValueError(f"node index needs {dim} entries, got {idx}")
    return idx


def dissipation_functional(f: Union[ScalarField, VectorField], x, spec: KernelSpec,
                           shell: str = "taylor", panels: int = 48,
                           n_theta: int = 24) -> float:
    """D_α f(x) = ∫ |f(x+z) - f(x)|² |z|^{-n-α} dz at the node with index x

    The shell |z| < spacing is replaced by its second-order Taylor term
    (|∇f(x)|²/n)·ω_n Δ^{2-α}/(2-α) with shell="taylor", or dropped with
    shell="exclude".
    """
    if shell not in ("taylor", "exclude"):
        raise ValueError(f"shell must be 'taylor' or 'exclude', got {shell!r}")
    comps = f.components if isinstance(f, VectorField) else (f,)
    grid = comps[0].grid
    _check_grid(grid, spec)
    idx = _node_index(x, grid.dim)
    spacing = grid.spacing

    points, weights = _dissipation_nodes(spec.alpha, grid.dim, grid.points_per_dim,
                                         spec.lattice_images, panels, n_theta)
    x0 = np.asarray(idx, dtype=np.float64) * spacing
    total = 0.0
    grad_sq = 0.0
    for c in comps:
        diff = evaluate_at(c, x0[None, :] + points) - c.values[idx]
        total += float(weights @ (diff * diff))
        if shell == "taylor":
            grad_sq += sum(derivative(c, a).values[idx] ** 2 for a in range(grid.dim))

    if shell == "taylor":
        omega = 2.0 if grid.dim == 1 else TWO_PI
        total += grad_sq / grid.dim * omega * spacing ** (2.0 - spec.alpha) / (2.0 - spec.alpha)
    return max(total, 0.0)
