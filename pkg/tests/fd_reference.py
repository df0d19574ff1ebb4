"""Independent finite-difference oracles used only by the test suite.

These deliberately avoid the package's own differentiation and quadrature
machinery so that agreement between the two routes is meaningful.
"""
import numpy as np
from scipy.linalg import solve_banded


def burgers_crank_nicolson(nu, dx=1e-3, dt=1e-4, t_end=1.0, snap_times=()):
    """Solve u_t + u u_x = nu u_xx on [-1,1], u(x,0)=-sin(pi x), u(+-1,t)=0.

    Crank-Nicolson on the diffusion term, explicit central differencing on
    the advection term. Returns (x grid, {snap_time: u}).
    """
    x = np.arange(-1.0, 1.0 + dx / 2, dx)
    n = len(x)
    u = -np.sin(np.pi * x)
    r = nu * dt / (2 * dx * dx)
    ab = np.zeros((3, n - 2))
    ab[0, 1:] = -r
    ab[1, :] = 1 + 2 * r
    ab[2, :-1] = -r
    snap_idx = {int(round(ts / dt)): ts for ts in snap_times}
    snaps = {}
    if 0 in snap_idx:
        snaps[snap_idx[0]] = u.copy()
    n_steps = int(round(t_end / dt))
    for k in range(1, n_steps + 1):
        ux = np.zeros_like(u)
        ux[1:-1] = (u[2:] - u[:-2]) / (2 * dx)
        rhs = u[1:-1] + r * (u[2:] - 2 * u[1:-1] + u[:-2]) - dt * (u * ux)[1:-1]
        u_new = np.zeros_like(u)
        u_new[1:-1] = solve_banded((1, 1), ab, rhs)
        u = u_new
        if k in snap_idx:
            snaps[snap_idx[k]] = u.copy()
    return x, snaps


def fd_second_derivative(f, x, h=1e-4):
    """Fourth-order central second derivative of a scalar-vectorized f."""
    return (
        -f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)
    ) / (12 * h * h)


def fd_first_derivative(f, x, h=1e-4):
    """Fourth-order central first derivative."""
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)
