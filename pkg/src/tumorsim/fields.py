"""Uniform rectangular grid with cell-centered scalars and face-staggered vectors.

The discrete gradient maps cell values to face-normal values, the divergence
maps face values back to cells, and the Laplacian is defined as their exact
composition.  Boundary closure uses ghost cells: mirror for homogeneous
Neumann (and no-flux), ``ghost = 2*g - interior`` for a Dirichlet value ``g``.
With the half-weighted boundary faces of :func:`face_inner`, gradient and
(negative) divergence are adjoint, which is what the energy bookkeeping in
the time stepper relies on.

Fields are plain data and the operators are pure functions; nothing here
holds mutable shared state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class BoundaryCondition(enum.Enum):
    """Ghost-cell rule used when differencing across a domain edge."""

    DIRICHLET_ZERO = "dirichlet_zero"
    DIRICHLET_ONE = "dirichlet_one"
    NEUMANN_ZERO = "neumann_zero"
    NO_FLUX = "no_flux"


# Mirror-type conditions (zero normal derivative at the wall).
_MIRROR = (BoundaryCondition.NEUMANN_ZERO, BoundaryCondition.NO_FLUX)

_DIRICHLET_VALUE = {
    BoundaryCondition.DIRICHLET_ZERO: 0.0,
    BoundaryCondition.DIRICHLET_ONE: 1.0,
}


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centered rectangular grid: nx*ny cells on [0,lx]x[0,ly]."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid must be at least 4x4, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain side lengths must be positive")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_volume(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        # row-major storage: data[j, i] is cell (i, j), j indexing y
        return (self.ny, self.nx)

    def xcenters(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.hx

    def ycenters(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.hy

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) arrays of shape (ny, nx) with the cell-center coordinates."""
        return np.meshgrid(self.xcenters(), self.ycenters())


@dataclass
class BoundarySpec:
    """Boundary-condition tag for each unknown of the coupled model."""

    mu: BoundaryCondition = BoundaryCondition.DIRICHLET_ZERO
    pi: BoundaryCondition = BoundaryCondition.DIRICHLET_ZERO
    n: BoundaryCondition = BoundaryCondition.DIRICHLET_ONE
    phi: BoundaryCondition = BoundaryCondition.NEUMANN_ZERO
    p: BoundaryCondition = BoundaryCondition.DIRICHLET_ZERO

    @classmethod
    def default(cls) -> "BoundarySpec":
        return cls()

    @classmethod
    def no_flux_pressure(cls) -> "BoundarySpec":
        """Variant used by the vanishing-interface experiment driver."""
        return cls(pi=BoundaryCondition.NO_FLUX)


class ScalarField:
    """Cell-centered samples of one unknown, stored row-major as (ny, nx)."""

    __slots__ = ("grid", "data")

    def __init__(self, grid: GridSpec, data):
        arr = np.asarray(data, dtype=float)
        if arr.shape == (grid.ny * grid.nx,):
            arr = arr.reshape(grid.shape)
        if arr.shape != grid.shape:
            raise ValueError(f"data shape {arr.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("scalar field contains non-finite entries")
        self.grid = grid
        self.data = arr

    @classmethod
    def full(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "ScalarField":
        """Sample fn(x, y) at the cell centers."""
        X, Y = grid.cell_centers()
        return cls(grid, fn(X, Y))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.data.copy())

    def min(self) -> float:
        return float(self.data.min())

    def max(self) -> float:
        return float(self.data.max())


class FaceVectorField:
    """Face-normal components on a MAC-staggered grid.

    x_faces has shape (ny, nx+1) (normal component on vertical faces),
    y_faces has shape (ny+1, nx).
    """

    __slots__ = ("grid", "x_faces", "y_faces")

    def __init__(self, grid: GridSpec, x_faces, y_faces):
        xf = np.asarray(x_faces, dtype=float)
        yf = np.asarray(y_faces, dtype=float)
        if xf.shape != (grid.ny, grid.nx + 1):
            raise ValueError(f"x_faces shape {xf.shape}, expected {(grid.ny, grid.nx + 1)}")
        if yf.shape != (grid.ny + 1, grid.nx):
            raise ValueError(f"y_faces shape {yf.shape}, expected {(grid.ny + 1, grid.nx)}")
        if not (np.all(np.isfinite(xf)) and np.all(np.isfinite(yf))):
            raise ValueError("face field contains non-finite entries")
        self.grid = grid
        self.x_faces = xf
        self.y_faces = yf

    @classmethod
    def zeros(cls, grid: GridSpec) -> "FaceVectorField":
        return cls(grid, np.zeros((grid.ny, grid.nx + 1)), np.zeros((grid.ny + 1, grid.nx)))

    def copy(self) -> "FaceVectorField":
        return FaceVectorField(self.grid, self.x_faces.copy(), self.y_faces.copy())

    def max_abs(self) -> float:
        return max(float(np.abs(self.x_faces).max()), float(np.abs(self.y_faces).max()))


def _ghost(interior: np.ndarray, bc: BoundaryCondition) -> np.ndarray:
    """Ghost values just outside the wall, given the first interior layer."""
    if bc in _MIRROR:
        return interior
    return 2.0 * _DIRICHLET_VALUE[bc] - interior


def gradient_to_faces(f: ScalarField, bc: BoundaryCondition) -> FaceVectorField:
    """Difference-quotient gradient on faces; ghost closure at the walls."""
    g = f.grid
    d = f.data
    gx = np.empty((g.ny, g.nx + 1))
    gy = np.empty((g.ny + 1, g.nx))

    gx[:, 1:-1] = (d[:, 1:] - d[:, :-1]) / g.hx
    gx[:, 0] = (d[:, 0] - _ghost(d[:, 0], bc)) / g.hx
    gx[:, -1] = (_ghost(d[:, -1], bc) - d[:, -1]) / g.hx

    gy[1:-1, :] = (d[1:, :] - d[:-1, :]) / g.hy
    gy[0, :] = (d[0, :] - _ghost(d[0, :], bc)) / g.hy
    gy[-1, :] = (_ghost(d[-1, :], bc) - d[-1, :]) / g.hy

    return FaceVectorField(g, gx, gy)


def divergence_from_faces(v: FaceVectorField) -> ScalarField:
    """Per-cell signed sum of face values scaled by the spacings."""
    g = v.grid
    div = (v.x_faces[:, 1:] - v.x_faces[:, :-1]) / g.hx \
        + (v.y_faces[1:, :] - v.y_faces[:-1, :]) / g.hy
    return ScalarField(g, div)


def laplacian(f: ScalarField, bc: BoundaryCondition) -> ScalarField:
    """Five-point Laplacian, defined as divergence(gradient(.)) exactly."""
    return divergence_from_faces(gradient_to_faces(f, bc))


def face_average(f: ScalarField, bc: BoundaryCondition) -> FaceVectorField:
    """Arithmetic two-cell mean of a scalar on every face (ghosts at walls)."""
    g = f.grid
    d = f.data
    ax = np.empty((g.ny, g.nx + 1))
    ay = np.empty((g.ny + 1, g.nx))

    ax[:, 1:-1] = 0.5 * (d[:, 1:] + d[:, :-1])
    ax[:, 0] = 0.5 * (d[:, 0] + _ghost(d[:, 0], bc))
    ax[:, -1] = 0.5 * (d[:, -1] + _ghost(d[:, -1], bc))

    ay[1:-1, :] = 0.5 * (d[1:, :] + d[:-1, :])
    ay[0, :] = 0.5 * (d[0, :] + _ghost(d[0, :], bc))
    ay[-1, :] = 0.5 * (d[-1, :] + _ghost(d[-1, :], bc))

    return FaceVectorField(g, ax, ay)


def integrate(f: ScalarField) -> float:
    """Midpoint quadrature of f over the domain."""
    return float(f.data.sum()) * f.grid.cell_volume


def cell_inner(f: ScalarField, g: ScalarField) -> float:
    """L2 pairing of two cell fields."""
    return float(np.vdot(f.data, g.data)) * f.grid.cell_volume


def face_inner(v: FaceVectorField, w: FaceVectorField) -> float:
    """L2 pairing of two face fields; boundary faces carry half weight.

    The half weights make gradient and negative divergence exactly adjoint
    for Dirichlet-zero cell fields.
    """
    g = v.grid
    sx = np.vdot(v.x_faces[:, 1:-1], w.x_faces[:, 1:-1])
    sx += 0.5 * (np.vdot(v.x_faces[:, 0], w.x_faces[:, 0])
                 + np.vdot(v.x_faces[:, -1], w.x_faces[:, -1]))
    sy = np.vdot(v.y_faces[1:-1, :], w.y_faces[1:-1, :])
    sy += 0.5 * (np.vdot(v.y_faces[0, :], w.y_faces[0, :])
                 + np.vdot(v.y_faces[-1, :], w.y_faces[-1, :]))
    return float(sx + sy) * g.cell_volume


def boundary_flux(v: FaceVectorField) -> float:
    """Net outward flux of a face field through the domain boundary."""
    g = v.grid
    out = (v.x_faces[:, -1].sum() - v.x_faces[:, 0].sum()) * g.hy
    out += (v.y_faces[-1, :].sum() - v.y_faces[0, :].sum()) * g.hx
    return float(out)


def write_snapshot(f: ScalarField, path, time: float) -> None:
    """Plain-text snapshot: header 'nx ny hx hy time', then row-major values."""
    g = f.grid
    lines = [f"{g.nx} {g.ny} {g.hx!r} {g.hy!r} {float(time)!r}"]
    lines.extend(repr(float(v)) for v in f.data.ravel())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path, grid: GridSpec | None = None) -> tuple[ScalarField, float]:
    """Read a snapshot file; checks the grid when one is supplied."""
    with open(path) as fh:
        header = fh.readline().split()
        nx, ny = int(header[0]), int(header[1])
        hx, hy, time = float(header[2]), float(header[3]), float(header[4])
        values = np.array([float(line) for line in fh if line.strip()])
    if values.size != nx * ny:
        raise ValueError(f"snapshot {path}: expected {nx * ny} values, got {values.size}")
    if grid is None:
        grid = GridSpec(nx, ny, lx=nx * hx, ly=ny * hy)
    elif (grid.nx, grid.ny) != (nx, ny):
        raise ValueError(f"snapshot {path}: grid {nx}x{ny} does not match {grid.nx}x{grid.ny}")
    return ScalarField(grid, values), time
