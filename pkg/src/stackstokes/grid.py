"""Staggered-grid fields, differential operators, and space-time quadrature.

Layout (MAC arrangement) on the rectangle [0, Lx] x [0, Ly]:

* ``u`` (horizontal velocity) lives on vertical cell faces, shape ``(nx+1, ny)``;
  ``u[i, j]`` sits at ``(i*hx, (j+1/2)*hy)``.
* ``v`` (vertical velocity) lives on horizontal cell faces, shape ``(nx, ny+1)``;
  ``v[i, j]`` sits at ``((i+1/2)*hx, j*hy)``.
* scalars (pressure, potentials) live at cell centers, shape ``(nx, ny)``.

No-slip walls are encoded by zero normal faces (``u[0]=u[nx]=0``,
``v[:,0]=v[:,ny]=0``) plus odd ghost reflection of the tangential component,
so the discrete divergence/gradient pair is an exact adjoint pair and the
Leray projection below is structurally divergence-free.

The velocity inner product uses cell-area weights with half weight on the
normal-boundary faces; with zero boundary faces this is the plain flat
metric, while integrals of non-vanishing fields (quadrature checks) come out
exact for constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dctn, idctn, dst, idst

from .errors import ConfigurationError, NumericalError

__all__ = [
    "GridSpec",
    "ScalarField",
    "VelocityField",
    "Region",
    "SmoothCutoff",
    "Trajectory",
    "divergence",
    "gradient",
    "laplacian",
    "project_div_free",
    "poisson_neumann",
    "diffusion_solve",
    "inner",
    "norm",
    "h1_norm",
    "inner_space_time",
    "trapezoid_weights",
    "stream_function_velocity",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time grid: nx*ny cells on [0,Lx]x[0,Ly], nt steps on [0,T]."""

    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0
    nt: int = 32
    T: float = 1.0

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ConfigurationError(f"need nx, ny >= 8, got {self.nx}x{self.ny}")
        if self.nt < 8:
            raise ConfigurationError(f"need nt >= 8, got nt={self.nt}")
        if not (self.T > 0 and self.Lx > 0 and self.Ly > 0):
            raise ConfigurationError("domain lengths and horizon must be positive")

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    # coordinates of the three samplings
    def cell_centers(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return x, y

    def u_face_coords(self):
        x = np.arange(self.nx + 1) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return x, y

    def v_face_coords(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return x, y


@dataclass
class ScalarField:
    """Cell-centered scalar; pressure-like fields are kept mean-zero."""

    grid: GridSpec
    values: np.ndarray

    __array_ufunc__ = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ConfigurationError(
                f"scalar shape {self.values.shape} does not match grid "
                f"{(self.grid.nx, self.grid.ny)}"
            )

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(grid, np.zeros((grid.nx, grid.ny)))

    @classmethod
    def from_function(cls, grid: GridSpec, f) -> "ScalarField":
        x, y = grid.cell_centers()
        return cls(grid, np.asarray(f(x[:, None], y[None, :]), dtype=float))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def demean(self) -> "ScalarField":
        return ScalarField(self.grid, self.values - self.values.mean())

    def max_abs(self) -> float:
        return float(np.abs(self.values).max())

    def __add__(self, other):
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, a: float):
        return ScalarField(self.grid, self.values * a)

    __rmul__ = __mul__


@dataclass
class VelocityField:
    """Face-staggered velocity pair (u on vertical faces, v on horizontal)."""

    grid: GridSpec
    u: np.ndarray
    v: np.ndarray

    __array_ufunc__ = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        g = self.grid
        if self.u.shape != (g.nx + 1, g.ny) or self.v.shape != (g.nx, g.ny + 1):
            raise ConfigurationError(
                f"velocity shapes {self.u.shape}/{self.v.shape} do not match grid "
                f"{(g.nx + 1, g.ny)}/{(g.nx, g.ny + 1)}"
            )

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VelocityField":
        return cls(grid, np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))

    @classmethod
    def from_functions(cls, grid: GridSpec, fu, fv) -> "VelocityField":
        xu, yu = grid.u_face_coords()
        xv, yv = grid.v_face_coords()
        u = np.asarray(fu(xu[:, None], yu[None, :]), dtype=float)
        v = np.asarray(fv(xv[:, None], yv[None, :]), dtype=float)
        u = np.broadcast_to(u, (grid.nx + 1, grid.ny)).copy()
        v = np.broadcast_to(v, (grid.nx, grid.ny + 1)).copy()
        return cls(grid, u, v)

    def copy(self) -> "VelocityField":
        return VelocityField(self.grid, self.u.copy(), self.v.copy())

    def apply_noslip(self) -> "VelocityField":
        """Zero the normal boundary faces (no-penetration closure)."""
        out = self.copy()
        out.u[0, :] = 0.0
        out.u[-1, :] = 0.0
        out.v[:, 0] = 0.0
        out.v[:, -1] = 0.0
        return out

    def boundary_is_closed(self, tol: float = 0.0) -> bool:
        return (
            np.abs(self.u[0, :]).max(initial=0.0) <= tol
            and np.abs(self.u[-1, :]).max(initial=0.0) <= tol
            and np.abs(self.v[:, 0]).max(initial=0.0) <= tol
            and np.abs(self.v[:, -1]).max(initial=0.0) <= tol
        )

    def max_abs(self) -> float:
        return max(float(np.abs(self.u).max()), float(np.abs(self.v).max()))

    def __add__(self, other):
        return VelocityField(self.grid, self.u + other.u, self.v + other.v)

    def __sub__(self, other):
        return VelocityField(self.grid, self.u - other.u, self.v - other.v)

    def __mul__(self, a: float):
        return VelocityField(self.grid, self.u * a, self.v * a)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def mul_mask(self, mask: "FaceMask") -> "VelocityField":
        return VelocityField(self.grid, self.u * mask.on_u, self.v * mask.on_v)


@dataclass(frozen=True)
class FaceMask:
    """A multiplier sampled on both face families (weights or indicators)."""

    on_u: np.ndarray
    on_v: np.ndarray


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise ConfigurationError("fields live on different grids")


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle inside the domain, used as an indicator set."""

    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ConfigurationError(f"degenerate region {self}")

    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, other: "Region") -> bool:
        return (
            self.x0 <= other.x0
            and other.x1 <= self.x1
            and self.y0 <= other.y0
            and other.y1 <= self.y1
        )

    def intersects(self, other: "Region") -> bool:
        return not (
            self.x1 <= other.x0
            or other.x1 <= self.x0
            or self.y1 <= other.y0
            or other.y1 <= self.y0
        )

    def intersection(self, other: "Region") -> "Region | None":
        if not self.intersects(other):
            return None
        return Region(
            max(self.x0, other.x0),
            min(self.x1, other.x1),
            max(self.y0, other.y0),
            min(self.y1, other.y1),
        )

    def contains_point(self, x: float, y: float, strict: bool = False) -> bool:
        if strict:
            return self.x0 < x < self.x1 and self.y0 < y < self.y1
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def cell_mask(self, grid: GridSpec) -> np.ndarray:
        """0/1 indicator on cells (center-in-region test)."""
        x, y = grid.cell_centers()
        in_x = (x >= self.x0) & (x < self.x1)
        in_y = (y >= self.y0) & (y < self.y1)
        return (in_x[:, None] & in_y[None, :]).astype(float)

    def face_mask(self, grid: GridSpec) -> FaceMask:
        """Face weights by adjacent-cell averaging (exact area for aligned boxes)."""
        c = self.cell_mask(grid)
        on_u = np.zeros((grid.nx + 1, grid.ny))
        on_u[1:-1, :] = 0.5 * (c[1:, :] + c[:-1, :])
        on_u[0, :] = c[0, :]
        on_u[-1, :] = c[-1, :]
        on_v = np.zeros((grid.nx, grid.ny + 1))
        on_v[:, 1:-1] = 0.5 * (c[:, 1:] + c[:, :-1])
        on_v[:, 0] = c[:, 0]
        on_v[:, -1] = c[:, -1]
        return FaceMask(on_u, on_v)

    def face_indicator(self, grid: GridSpec) -> FaceMask:
        """Sharp 0/1 support indicator on faces (idempotent projection).

        A face counts only when both adjacent cells lie in the region, so
        multiplying twice equals multiplying once; this is the mask used to
        restrict control fields, while :meth:`face_mask` provides integral
        weights.
        """
        fm = self.face_mask(grid)
        return FaceMask((fm.on_u >= 1.0).astype(float), (fm.on_v >= 1.0).astype(float))


@dataclass(frozen=True)
class SmoothCutoff:
    """Smooth plateau function: 0 outside ``region``, 1 on the tapered interior.

    The profile is a separable product of cosine ramps of width ``taper``
    (physical length), so ``supp chi = closure(region)`` and ``0 <= chi <= 1``.
    """

    region: Region
    taper: float

    def __post_init__(self):
        w = min(self.region.x1 - self.region.x0, self.region.y1 - self.region.y0)
        if not (0 < self.taper <= 0.5 * w):
            raise ConfigurationError(
                f"taper {self.taper} must lie in (0, half the shortest side {0.5 * w}]"
            )

    @classmethod
    def for_grid(cls, region: Region, grid: GridSpec, cells: float = 4.0) -> "SmoothCutoff":
        """Default taper of ``cells`` grid cells (resolves the ramp on coarse grids)."""
        taper = cells * max(grid.hx, grid.hy)
        w = min(region.x1 - region.x0, region.y1 - region.y0)
        taper = min(taper, 0.5 * w)
        return cls(region, taper)

    @staticmethod
    def _ramp(t: np.ndarray, a: float, b: float, taper: float) -> np.ndarray:
        """1D plateau: 0 outside [a,b], cosine ramp over [a, a+taper] and [b-taper, b]."""
        out = np.zeros_like(t, dtype=float)
        inside = (t > a) & (t < b)
        s = np.minimum(t - a, b - t)
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.clip(s / taper, 0.0, 1.0)))
        out[inside] = ramp[inside]
        return out

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        r, w = self.region, self.taper
        return self._ramp(np.asarray(x, dtype=float), r.x0, r.x1, w) * self._ramp(
            np.asarray(y, dtype=float), r.y0, r.y1, w
        )

    def cell_values(self, grid: GridSpec) -> np.ndarray:
        x, y = grid.cell_centers()
        return self.evaluate(x[:, None], y[None, :])

    def face_mask(self, grid: GridSpec) -> FaceMask:
        xu, yu = grid.u_face_coords()
        xv, yv = grid.v_face_coords()
        return FaceMask(
            self.evaluate(xu[:, None], yu[None, :]),
            self.evaluate(xv[:, None], yv[None, :]),
        )


class Trajectory:
    """Time-indexed sequence of nt+1 velocity snapshots on one grid."""

    __array_ufunc__ = None

    def __init__(self, grid: GridSpec, fields, pressures=None):
        fields = list(fields)
        if len(fields) != grid.nt + 1:
            raise ConfigurationError(
                f"trajectory needs nt+1={grid.nt + 1} snapshots, got {len(fields)}"
            )
        for f in fields:
            if f.grid != grid:
                raise ConfigurationError("trajectory snapshot on a different grid")
        self.grid = grid
        self.fields = fields
        self.pressures = list(pressures) if pressures is not None else None

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Trajectory":
        return cls(grid, [VelocityField.zeros(grid) for _ in range(grid.nt + 1)])

    @classmethod
    def from_function(cls, grid: GridSpec, fu, fv) -> "Trajectory":
        """Sample (fu, fv)(x, y, t) on the face points at every time level."""
        xu, yu = grid.u_face_coords()
        xv, yv = grid.v_face_coords()
        out = []
        for t in grid.times():
            u = np.broadcast_to(
                np.asarray(fu(xu[:, None], yu[None, :], t), dtype=float),
                (grid.nx + 1, grid.ny),
            ).copy()
            v = np.broadcast_to(
                np.asarray(fv(xv[:, None], yv[None, :], t), dtype=float),
                (grid.nx, grid.ny + 1),
            ).copy()
            out.append(VelocityField(grid, u, v))
        return cls(grid, out)

    @classmethod
    def constant(cls, snapshot: VelocityField) -> "Trajectory":
        return cls(snapshot.grid, [snapshot.copy() for _ in range(snapshot.grid.nt + 1)])

    def __len__(self) -> int:
        return len(self.fields)

    def __getitem__(self, m: int) -> VelocityField:
        return self.fields[m]

    def __setitem__(self, m: int, f: VelocityField):
        if f.grid != self.grid:
            raise ConfigurationError("snapshot on a different grid")
        self.fields[m] = f

    def __iter__(self):
        return iter(self.fields)

    def copy(self) -> "Trajectory":
        return Trajectory(self.grid, [f.copy() for f in self.fields])

    def __add__(self, other: "Trajectory") -> "Trajectory":
        _check_same_grid(self, other)
        return Trajectory(self.grid, [a + b for a, b in zip(self.fields, other.fields)])

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        _check_same_grid(self, other)
        return Trajectory(self.grid, [a - b for a, b in zip(self.fields, other.fields)])

    def __mul__(self, a: float) -> "Trajectory":
        return Trajectory(self.grid, [f * a for f in self.fields])

    __rmul__ = __mul__

    def mul_mask(self, mask: FaceMask) -> "Trajectory":
        return Trajectory(self.grid, [f.mul_mask(mask) for f in self.fields])

    def max_abs(self) -> float:
        return max(f.max_abs() for f in self.fields)


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------

def divergence(vel: VelocityField) -> ScalarField:
    """Per-cell central divergence (exact adjoint of -gradient)."""
    g = vel.grid
    d = (vel.u[1:, :] - vel.u[:-1, :]) / g.hx + (vel.v[:, 1:] - vel.v[:, :-1]) / g.hy
    return ScalarField(g, d)


def gradient(p: ScalarField) -> VelocityField:
    """Cell-to-face gradient with zero normal-boundary faces (Neumann closure)."""
    g = p.grid
    u = np.zeros((g.nx + 1, g.ny))
    v = np.zeros((g.nx, g.ny + 1))
    u[1:-1, :] = (p.values[1:, :] - p.values[:-1, :]) / g.hx
    v[:, 1:-1] = (p.values[:, 1:] - p.values[:, :-1]) / g.hy
    return VelocityField(g, u, v)


def laplacian(vel: VelocityField) -> VelocityField:
    """Componentwise 5-point Laplacian with no-slip ghost closure.

    Normal direction uses the zero boundary faces; tangential direction uses
    odd ghost reflection (wall value = 0 at the half cell).  Output is zero on
    the normal-boundary faces.
    """
    g = vel.grid
    hx2, hy2 = g.hx**2, g.hy**2

    u = vel.u
    lu = np.zeros_like(u)
    lu[1:-1, :] = (u[2:, :] - 2.0 * u[1:-1, :] + u[:-2, :]) / hx2
    ug = np.empty((g.nx + 1, g.ny + 2))
    ug[:, 1:-1] = u
    ug[:, 0] = -u[:, 0]
    ug[:, -1] = -u[:, -1]
    lu[1:-1, :] += (ug[1:-1, 2:] - 2.0 * u[1:-1, :] + ug[1:-1, :-2]) / hy2

    v = vel.v
    lv = np.zeros_like(v)
    lv[:, 1:-1] = (v[:, 2:] - 2.0 * v[:, 1:-1] + v[:, :-2]) / hy2
    vg = np.empty((g.nx + 2, g.ny + 1))
    vg[1:-1, :] = v
    vg[0, :] = -v[0, :]
    vg[-1, :] = -v[-1, :]
    lv[:, 1:-1] += (vg[2:, 1:-1] - 2.0 * v[:, 1:-1] + vg[:-2, 1:-1]) / hx2

    return VelocityField(g, lu, lv)


# ---------------------------------------------------------------------------
# fast solvers (cosine/sine diagonalization on the uniform rectangle)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _neumann_eigs(nx, ny, hx, hy):
    lamx = (2.0 * np.cos(np.pi * np.arange(nx) / nx) - 2.0) / hx**2
    lamy = (2.0 * np.cos(np.pi * np.arange(ny) / ny) - 2.0) / hy**2
    lam = lamx[:, None] + lamy[None, :]
    lam_safe = lam.copy()
    lam_safe[0, 0] = 1.0
    return lam, lam_safe


def _poisson_neumann_direct(grid: GridSpec, rhs: np.ndarray) -> np.ndarray:
    """Exact mean-zero solve of the cell-centered Neumann Laplacian."""
    _, lam_safe = _neumann_eigs(grid.nx, grid.ny, grid.hx, grid.hy)
    rhat = dctn(rhs, type=2, norm="ortho")
    rhat[0, 0] = 0.0
    return idctn(rhat / lam_safe, type=2, norm="ortho")


def _lap_neumann_cells(grid: GridSpec, p: np.ndarray) -> np.ndarray:
    pe = np.pad(p, 1, mode="edge")
    return (pe[2:, 1:-1] - 2.0 * p + pe[:-2, 1:-1]) / grid.hx**2 + (
        pe[1:-1, 2:] - 2.0 * p + pe[1:-1, :-2]
    ) / grid.hy**2


def poisson_neumann(grid: GridSpec, rhs: ScalarField, tol: float = 1e-12,
                    max_iter: int = 50) -> ScalarField:
    """Mean-zero Neumann Poisson solve by preconditioned CG.

    The preconditioner is the exact cosine-transform inverse, so the loop
    normally exits after one iteration; the CG wrapper enforces the mean-zero
    gauge each iteration and certifies the relative residual <= ``tol``.
    """
    b = rhs.values - rhs.values.mean()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return ScalarField.zeros(grid)
    x = np.zeros_like(b)
    r = b.copy()
    z = _poisson_neumann_direct(grid, r)
    p = z.copy()
    rz = float((r * z).sum())
    for _ in range(max_iter):
        Ap = _lap_neumann_cells(grid, p)
        alpha = rz / float((p * Ap).sum())
        x += alpha * p
        x -= x.mean()
        r -= alpha * Ap
        if float(np.linalg.norm(r)) <= tol * bnorm:
            return ScalarField(grid, x)
        z = _poisson_neumann_direct(grid, r)
        rz_new = float((r * z).sum())
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = float(np.linalg.norm(r)) / bnorm
    raise NumericalError(
        f"Neumann Poisson CG stalled at relative residual {res:.3e} (tol {tol:.1e})",
        residual=res,
    )


def project_div_free(vel: VelocityField) -> VelocityField:
    """Leray projection: remove the gradient part of ``vel``.

    Zeroes the normal boundary faces first (no-penetration closure), solves
    the Neumann Poisson problem for the potential, and subtracts its gradient.
    """
    out, _ = project_div_free_with_potential(vel)
    return out


def project_div_free_with_potential(vel: VelocityField):
    # The direct transform solve (the CG preconditioner by itself) is used
    # here because the projection must be an exactly linear, self-adjoint
    # operator for the discrete duality identities; CG step lengths depend on
    # the data and would break transposition at the 1e-12 level.
    w = vel.apply_noslip()
    d = divergence(w)
    phi = ScalarField(vel.grid, _poisson_neumann_direct(vel.grid, d.values - d.values.mean()))
    proj = w - gradient(phi)
    return proj, phi


@lru_cache(maxsize=32)
def _dirichlet_eigs(nx, ny, hx, hy):
    # u component: DST-I in x (interior faces), DST-II in y (ghost-odd closure)
    lamx_u = (2.0 * np.cos(np.pi * np.arange(1, nx) / nx) - 2.0) / hx**2
    lamy_u = (2.0 * np.cos(np.pi * np.arange(1, ny + 1) / ny) - 2.0) / hy**2
    lam_u = lamx_u[:, None] + lamy_u[None, :]
    lamx_v = (2.0 * np.cos(np.pi * np.arange(1, nx + 1) / nx) - 2.0) / hx**2
    lamy_v = (2.0 * np.cos(np.pi * np.arange(1, ny) / ny) - 2.0) / hy**2
    lam_v = lamx_v[:, None] + lamy_v[None, :]
    return lam_u, lam_v


def diffusion_solve(rhs: VelocityField, dt: float) -> VelocityField:
    """Solve (I - dt*Laplacian) out = rhs componentwise (exact transform solve).

    Only interior unknowns are solved; boundary faces of the result are zero
    and boundary-face values of ``rhs`` are ignored, matching the no-slip
    closure of :func:`laplacian`.
    """
    g = rhs.grid
    lam_u, lam_v = _dirichlet_eigs(g.nx, g.ny, g.hx, g.hy)

    fu = rhs.u[1:-1, :]
    fhat = dst(dst(fu, type=1, axis=0, norm="ortho"), type=2, axis=1, norm="ortho")
    uin = idst(
        idst(fhat / (1.0 - dt * lam_u), type=2, axis=1, norm="ortho"),
        type=1, axis=0, norm="ortho",
    )
    u = np.zeros_like(rhs.u)
    u[1:-1, :] = uin

    fv = rhs.v[:, 1:-1]
    fhat = dst(dst(fv, type=2, axis=0, norm="ortho"), type=1, axis=1, norm="ortho")
    vin = idst(
        idst(fhat / (1.0 - dt * lam_v), type=2, axis=0, norm="ortho"),
        type=1, axis=1, norm="ortho",
    )
    v = np.zeros_like(rhs.v)
    v[:, 1:-1] = vin

    return VelocityField(g, u, v)


# ---------------------------------------------------------------------------
# inner products and norms
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _face_weights(nx, ny):
    wu = np.ones((nx + 1, ny))
    wu[0, :] = 0.5
    wu[-1, :] = 0.5
    wv = np.ones((nx, ny + 1))
    wv[:, 0] = 0.5
    wv[:, -1] = 0.5
    return wu, wv


def inner(a: VelocityField, b: VelocityField, mask: FaceMask | None = None) -> float:
    """Discrete L2 pairing of velocities (optionally weighted by a face mask)."""
    _check_same_grid(a, b)
    g = a.grid
    wu, wv = _face_weights(g.nx, g.ny)
    pu = wu * a.u * b.u
    pv = wv * a.v * b.v
    if mask is not None:
        pu = pu * mask.on_u
        pv = pv * mask.on_v
    return g.cell_area * (float(pu.sum()) + float(pv.sum()))


def norm(a: VelocityField, mask: FaceMask | None = None) -> float:
    return math.sqrt(max(inner(a, a, mask), 0.0))


def inner_cells(a: ScalarField, b: ScalarField) -> float:
    _check_same_grid(a, b)
    return a.grid.cell_area * float((a.values * b.values).sum())


def h1_norm(a: VelocityField) -> float:
    """Discrete H1(=V) norm: L2 norm plus L2 norm of the no-slip gradient."""
    l = laplacian(a)
    grad_sq = -inner(a, l)  # = ||grad a||^2 by summation by parts
    return math.sqrt(max(inner(a, a) + grad_sq, 0.0))


def trapezoid_weights(nt: int) -> np.ndarray:
    w = np.ones(nt + 1)
    w[0] = 0.5
    w[-1] = 0.5
    return w


def inner_space_time(a: Trajectory, b: Trajectory, mask=None) -> float:
    """Trapezoid-in-time, cell-area-in-space quadrature of sum_i a_i b_i."""
    _check_same_grid(a, b)
    g = a.grid
    fm: FaceMask | None
    if mask is None:
        fm = None
    elif isinstance(mask, FaceMask):
        fm = mask
    else:
        fm = mask.face_mask(g)
    w = trapezoid_weights(g.nt)
    total = 0.0
    for m in range(g.nt + 1):
        total += float(w[m]) * inner(a[m], b[m], fm)
    return g.dt * total


def traj_norm(a: Trajectory, mask=None) -> float:
    return math.sqrt(max(inner_space_time(a, a, mask), 0.0))


def stream_function_velocity(grid: GridSpec, psi_nodes: np.ndarray) -> VelocityField:
    """Exactly divergence-free velocity from a nodal stream function.

    ``psi_nodes`` has shape (nx+1, ny+1); u = d(psi)/dy, v = -d(psi)/dx by
    face differencing, so the discrete divergence vanishes identically.  A
    stream function that is constant on the boundary yields zero normal faces.
    """
    psi = np.asarray(psi_nodes, dtype=float)
    if psi.shape != (grid.nx + 1, grid.ny + 1):
        raise ConfigurationError("stream function must be nodal (nx+1, ny+1)")
    u = (psi[:, 1:] - psi[:, :-1]) / grid.hy
    v = -(psi[1:, :] - psi[:-1, :]) / grid.hx
    return VelocityField(grid, u, v)
