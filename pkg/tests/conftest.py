import numpy as np
import pytest

from stackstokes.grid import (
    GridSpec,
    Region,
    SmoothCutoff,
    Trajectory,
    VelocityField,
    stream_function_velocity,
)
from stackstokes.saddle import RobustParams, SaddleProblem
from stackstokes.stokes import SolverOptions


def closed_noise(grid, rng, amp=1.0):
    """Random velocity with zero normal-boundary faces."""
    u = rng.standard_normal((grid.nx + 1, grid.ny))
    v = rng.standard_normal((grid.nx, grid.ny + 1))
    return VelocityField(grid, u, v).apply_noslip() * amp


def control_traj(grid, rng, amp=1.0):
    """Random control trajectory; the inert level-0 slot is zero."""
    zero = VelocityField.zeros(grid)
    return Trajectory(
        grid, [zero.copy()] + [closed_noise(grid, rng, amp) for _ in range(grid.nt)]
    )


def state_traj(grid, rng, amp=1.0):
    return Trajectory(grid, [closed_noise(grid, rng, amp) for _ in range(grid.nt + 1)])


def eddy(grid, amp=0.1, lobes=1):
    """Exactly divergence-free eddy from a boundary-constant stream function."""
    xn = np.arange(grid.nx + 1) * grid.hx
    yn = np.arange(grid.ny + 1) * grid.hy
    sx = np.sin(lobes * np.pi * xn[:, None] / grid.Lx)
    sy = np.sin(lobes * np.pi * yn[None, :] / grid.Ly)
    if lobes == 1:
        psi = amp * sx * sy
    else:
        psi = amp * sx**2 * sy**2
    return stream_function_velocity(grid, psi)


def make_setup(nx=16, ny=16, nt=32, T=1.0, L=1.0, wide_omega=False):
    grid = GridSpec(nx=nx, ny=ny, Lx=L, Ly=L, nt=nt, T=T)
    om = (0.30, 0.95) if wide_omega else (0.35, 0.75)
    omega = Region(om[0] * L, om[1] * L, om[0] * L, om[1] * L)
    follower = Region(0.05 * L, 0.25 * L, 0.05 * L, 0.25 * L)
    obs = Region(0.45 * L, 0.95 * L, 0.45 * L, 0.95 * L)
    inner = Region(0.46 * L, 0.74 * L, 0.46 * L, 0.74 * L)
    chi = SmoothCutoff.for_grid(follower, grid)
    return {
        "grid": grid,
        "omega": omega,
        "follower": follower,
        "chi": chi,
        "obs": obs,
        "inner": inner,
    }


def make_problem(setup, y0, yd=None, ell=10.0, gamma=10.0, mu=1.0, **opts):
    return SaddleProblem(
        setup["grid"],
        setup["omega"],
        setup["chi"],
        setup["obs"],
        y0,
        yd,
        RobustParams(ell=ell, gamma=gamma, mu=mu),
        SolverOptions(**opts) if opts else SolverOptions(),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
