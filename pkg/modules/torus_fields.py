"""
Periodic grid, field storage and discrete operators on the torus [0, 2π)^n

Fields are immutable: every operation returns a new field, and the spectral
representation of a field is computed at most once and cached.

Modes are normalized so that the k = 0 mode equals the spatial mean:
    modes = fftn(values) / N^n,   values = Re ifftn(modes * N^n)
"""
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np

from .errors import FieldShapeError, GridMismatchError, ZeroShiftError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic lattice on [0, 2π)^dim with N points per dimension"""

    dim: int
    points_per_dim: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        n = self.points_per_dim
        if n < 16 or n & (n - 1):
            raise ValueError(f"points_per_dim must be a power of two >= 16, got {n}")

    @property
    def spacing(self) -> float:
        return TWO_PI / self.points_per_dim

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points_per_dim,) * self.dim

    @property
    def num_points(self) -> int:
        return self.points_per_dim ** self.dim

    @property
    def volume(self) -> float:
        return TWO_PI ** self.dim

    @cached_property
    def axis_wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers in FFT order, Nyquist stored as +N/2"""
        n = self.points_per_dim
        k = np.rint(np.fft.fftfreq(n, d=1.0 / n)).astype(np.int64)
        k[n // 2] = n // 2
        k.setflags(write=False)
        return k

    @cached_property
    def wavenumbers(self) -> Tuple[np.ndarray, ...]:
        """Per-axis wavenumber arrays broadcast to the grid shape"""
        mesh = np.meshgrid(*([self.axis_wavenumbers] * self.dim), indexing="ij")
        for m in mesh:
            m.setflags(write=False)
        return tuple(mesh)

    @cached_property
    def deriv_wavenumbers(self) -> Tuple[np.ndarray, ...]:
        """Wavenumbers used for odd derivatives: Nyquist zeroed to keep fields real"""
        n = self.points_per_dim
        out = []
        for k in self.wavenumbers:
            kd = k.astype(np.float64).copy()
            kd[np.abs(k) == n // 2] = 0.0
            kd.setflags(write=False)
            out.append(kd)
        return tuple(out)

    @cached_property
    def kmag(self) -> np.ndarray:
        mag = np.sqrt(sum(k.astype(np.float64) ** 2 for k in self.wavenumbers))
        mag.setflags(write=False)
        return mag

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule: False exactly where some |k_i| > N/3"""
        cutoff = self.points_per_dim / 3.0
        mask = np.ones(self.shape, dtype=bool)
        for k in self.wavenumbers:
            mask &= np.abs(k) <= cutoff
        mask.setflags(write=False)
        return mask

    def coordinates(self) -> Tuple[np.ndarray, ...]:
        x = np.arange(self.points_per_dim) * self.spacing
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))


class ScalarField:
    """Real grid samples with a lazily cached spectral representation"""

    __slots__ = ("grid", "_values", "_modes")

    def __init__(self, grid: TorusGrid, values):
        arr = np.array(values, dtype=np.float64)
        if arr.shape == () and grid.dim >= 1:
            arr = np.full(grid.shape, float(arr))
        if arr.shape != grid.shape:
            raise FieldShapeError(f"values of shape {arr.shape} do not fit grid {grid.shape}")
        arr.setflags(write=False)
        self.grid = grid
        self._values = arr
        self._modes = None

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "ScalarField":
        return cls(grid, fn(*grid.coordinates()))

    @classmethod
    def from_modes(cls, grid: TorusGrid, modes: np.ndarray) -> "ScalarField":
        return transform_backward(modes, grid)

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def modes(self) -> np.ndarray:
        if self._modes is None:
            modes = transform_forward(self)
            modes.setflags(write=False)
            self._modes = modes
        return self._modes

    def mean(self) -> float:
        return float(self._values.mean())

    def integral(self) -> float:
        """Trapezoid (= spectral) quadrature over the torus"""
        return self.mean() * self.grid.volume

    def max_abs(self) -> float:
        return float(np.max(np.abs(self._values)))

    def min(self) -> float:
        return float(self._values.min())

    def max(self) -> float:
        return float(self._values.max())

    def _other_values(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise GridMismatchError(f"grid {other.grid} does not match {self.grid}")
            return other._values
        return float(other)

    def __add__(self, other):
        return ScalarField(self.grid, self._values + self._other_values(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self._values - self._other_values(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other_values(other) - self._values)

    def __mul__(self, other):
        return ScalarField(self.grid, self._values * self._other_values(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self._values / self._other_values(other))

    def __neg__(self):
        return ScalarField(self.grid, -self._values)

    def __repr__(self) -> str:
        return f"ScalarField(dim={self.grid.dim}, N={self.grid.points_per_dim}, max|f|={self.max_abs():.3e})"


@dataclass(frozen=True)
class VectorField:
    """dim-many scalar components on one grid"""

    components: Tuple[ScalarField, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise FieldShapeError("a vector field needs at least one component")
        grid = comps[0].grid
        if any(c.grid != grid for c in comps):
            raise GridMismatchError("all components of a vector field must share one grid")
        if len(comps) != grid.dim:
            raise FieldShapeError(f"expected {grid.dim} components, got {len(comps)}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_arrays(cls, grid: TorusGrid, arrays: Sequence) -> "VectorField":
        return cls(tuple(ScalarField(grid, a) for a in arrays))

    @classmethod
    def constant(cls, grid: TorusGrid, vector: Sequence[float]) -> "VectorField":
        vector = np.atleast_1d(np.asarray(vector, dtype=np.float64))
        return cls(tuple(ScalarField.constant(grid, v) for v in vector))

    @property
    def grid(self) -> TorusGrid:
        return self.components[0].grid

    @property
    def dim(self) -> int:
        return len(self.components)

    def norm_values(self) -> np.ndarray:
        """Euclidean norm of the vector at every node"""
        return np.sqrt(sum(c.values ** 2 for c in self.components))

    def max_norm(self) -> float:
        return float(np.max(self.norm_values()))

    def __getitem__(self, i: int) -> ScalarField:
        return self.components[i]

    def __iter__(self) -> Iterator[ScalarField]:
        return iter(self.components)

    def __len__(self) -> int:
        return len(self.components)

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(tuple(a - b for a, b in zip(self.components, other.components)))

    def __mul__(self, scalar: float) -> "VectorField":
        return VectorField(tuple(c * scalar for c in self.components))

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(tuple(-c for c in self.components))


@dataclass(frozen=True)
class GridShift:
    """Lattice shift h = offsets * spacing, offsets reduced into (-N/2, N/2]"""

    offsets: Tuple[int, ...]
    points_per_dim: int

    @classmethod
    def of(cls, grid: TorusGrid, offsets: Union[int, Sequence[int]]) -> "GridShift":
        offsets = np.atleast_1d(np.asarray(offsets, dtype=np.int64))
        if offsets.shape != (grid.dim,):
            raise FieldShapeError(f"shift needs {grid.dim} offsets, got {offsets.tolist()}")
        n = grid.points_per_dim
        reduced = []
        for o in offsets:
            r = int(o) % n
            if r > n // 2:
                r -= n
            reduced.append(r)
        if not any(reduced):
            raise ZeroShiftError("finite differences need a nonzero shift")
        return cls(tuple(reduced), n)

    @property
    def spacing(self) -> float:
        return TWO_PI / self.points_per_dim

    @property
    def as_length(self) -> float:
        """|h| in the torus metric, in (0, π√n]"""
        return self.spacing * math.sqrt(sum(o * o for o in self.offsets))

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.offsets, dtype=np.float64) * self.spacing


def transform_forward(f: ScalarField) -> np.ndarray:
    """Spectral modes of f; mode 0 is the mean"""
    return np.fft.fftn(f.values) / f.grid.num_points


def transform_backward(modes: np.ndarray, grid: TorusGrid) -> ScalarField:
    """Real field whose modes are `modes`"""
    modes = np.asarray(modes)
    if modes.shape != grid.shape:
        raise GridMismatchError(f"modes of shape {modes.shape} do not match grid {grid.shape}")
    return ScalarField(grid, np.fft.ifftn(modes * grid.num_points).real)


def derivative(f: ScalarField, axis: int) -> ScalarField:
    """Spectral derivative: mode k multiplied by i k_axis"""
    if not 0 <= axis < f.grid.dim:
        raise ValueError(f"invalid axis {axis} for a {f.grid.dim}D grid")
    return transform_backward(f.modes * (1j * f.grid.deriv_wavenumbers[axis]), f.grid)


def gradient(f: ScalarField) -> VectorField:
    return VectorField(tuple(derivative(f, a) for a in range(f.grid.dim)))


def divergence(u: VectorField) -> ScalarField:
    grid = u.grid
    modes = sum(c.modes * (1j * grid.deriv_wavenumbers[a]) for a, c in enumerate(u.components))
    return transform_backward(modes, grid)


def velocity_gradient(u: VectorField) -> List[List[ScalarField]]:
    """G[i][j] = ∂_j u_i"""
    return [[derivative(c, j) for j in range(u.grid.dim)] for c in u.components]


def translate(f: ScalarField, v: Sequence[float]) -> ScalarField:
    """g(x) = f(x + v) for arbitrary v, by spectral phase factors e^{ik·v}"""
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if v.shape != (f.grid.dim,):
        raise FieldShapeError(f"translation needs {f.grid.dim} components")
    if not np.any(v):
        return f
    phase = sum(k * vi for k, vi in zip(f.grid.wavenumbers, v))
    return transform_backward(f.modes * np.exp(1j * phase), f.grid)


def shift(f: ScalarField, h: GridShift) -> ScalarField:
    """τ_h f(x) = f(x + h) by index rotation (exact)"""
    values = f.values
    for axis, o in enumerate(h.offsets):
        if o:
            values = np.roll(values, -o, axis=axis)
    return ScalarField(f.grid, values)


def _difference(values: np.ndarray, h: GridShift) -> np.ndarray:
    shifted = values
    for axis, o in enumerate(h.offsets):
        if o:
            shifted = np.roll(shifted, -o, axis=axis)
    return shifted - values


def finite_difference(f: Union[ScalarField, VectorField], h: GridShift,
                      order: int = 1) -> Union[ScalarField, VectorField]:
    """δ_h^order f with δ_h f(x) = f(x+h) - f(x), by index rotation"""
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    if not any(h.offsets):
        raise ZeroShiftError("finite differences need a nonzero shift")
    if isinstance(f, VectorField):
        return VectorField(tuple(finite_difference(c, h, order) for c in f.components))
    if h.points_per_dim != f.grid.points_per_dim:
        raise GridMismatchError("shift was built for a different grid")
    values = f.values
    for _ in range(order):
        values = _difference(values, h)
    return ScalarField(f.grid, values)


def dealias(f: ScalarField) -> ScalarField:
    return transform_backward(f.modes * f.grid.dealias_mask, f.grid)


def multiply(f: ScalarField, g: ScalarField, dealiased: bool = True) -> ScalarField:
    """Pseudo-spectral product; with the two-thirds rule on inputs and output"""
    if f.grid != g.grid:
        raise GridMismatchError("cannot multiply fields on different grids")
    if not dealiased:
        return f * g
    return dealias(dealias(f) * dealias(g))


def evaluate_at(f: ScalarField, points, prune: float = 1e-14) -> np.ndarray:
    """Trigonometric interpolant of f at arbitrary points (exact for band-limited f)

    points: shape (P,) in 1D or (P, dim). Modes below prune * max|mode| are skipped.
    """
    pts = np.asarray(points, dtype=np.float64)
    if f.grid.dim == 1 and (pts.ndim == 1 or pts.ndim == 0):
        pts = np.atleast_1d(pts)[:, None]
    pts = pts.reshape(-1, f.grid.dim)
    modes = f.modes
    amp = np.abs(modes)
    keep = amp > prune * amp.max() if amp.max() > 0 else np.zeros(modes.shape, bool)
    if not keep.any():
        return np.zeros(len(pts))
    kvec = np.stack([k[keep] for k in f.grid.wavenumbers], axis=1).astype(np.float64)
    return (np.exp(1j * pts @ kvec.T) @ modes[keep]).real


def lattice_shifts(grid: TorusGrid, max_length: float = math.pi,
                   complete: bool = False) -> List[GridShift]:
    """Lattice shifts with 0 < |h| <= max_length

    1D: all positive shifts. 2D: axis-aligned and diagonal shifts, or with
    `complete` every shift in the upper half plane.
    """
    n = grid.points_per_dim
    dx = grid.spacing
    limit = max_length + 1e-12
    if grid.dim == 1:
        return [GridShift.of(grid, m) for m in range(1, n // 2 + 1) if m * dx <= limit]
    shifts = []
    if complete:
        for a in range(-(n // 2) + 1, n // 2 + 1):
            for b in range(0, n // 2 + 1):
                if b == 0 and a <= 0:
                    continue
                if math.hypot(a, b) * dx <= limit:
                    shifts.append(GridShift.of(grid, (a, b)))
        return shifts
    for m in range(1, n // 2 + 1):
        if m * dx <= limit:
            shifts.append(GridShift.of(grid, (m, 0)))
            shifts.append(GridShift.of(grid, (0, m)))
        if math.sqrt(2.0) * m * dx <= limit:
            shifts.append(GridShift.of(grid, (m, m)))
            shifts.append(GridShift.of(grid, (m, -m)))
    return shifts
