"""Manufactured Navier-Stokes solution on the unit square with closed-form derivatives.

The velocity is the curl of the stream function
``8 g(t) sin^2(pi x) (y (1 - y))^2`` with ``g(t) = (6 + 4 cos 4t) / 10`` and the
pressure is ``g(t) sin(pi x) cos(pi y)``.
"""

from __future__ import annotations

import numpy as np

PI = np.pi


def amplitude(t):
    return (6.0 + 4.0 * np.cos(4.0 * t)) / 10.0


def amplitude_rate(t):
    return -1.6 * np.sin(4.0 * t)


def _sx(x, n):
    """n-th derivative of sin^2(pi x)."""
    if n == 0:
        return np.sin(PI * x) ** 2
    if n == 1:
        return PI * np.sin(2 * PI * x)
    if n == 2:
        return 2 * PI**2 * np.cos(2 * PI * x)
    if n == 3:
        return -4 * PI**3 * np.sin(2 * PI * x)
    raise ValueError(n)


def _yy(y, n):
    """n-th derivative of (y (1 - y))^2."""
    if n == 0:
        return (y * (1 - y)) ** 2
    if n == 1:
        return 2 * y * (1 - y) * (1 - 2 * y)
    if n == 2:
        return 2 - 12 * y + 12 * y**2
    if n == 3:
        return -12 + 24 * y
    raise ValueError(n)


class ManufacturedSolution:
    """Exact velocity, pressure and forcing.

    All methods accept broadcastable arrays ``x, y`` and a scalar ``t``.  Vector
    results carry the component axis first: velocity (2, ...), gradient
    ``grad[i, j] = d u_i / d x_j`` of shape (2, 2, ...).
    """

    def velocity(self, x, y, t):
        g = 8 * amplitude(t)
        return np.array([g * _sx(x, 0) * _yy(y, 1), -g * _sx(x, 1) * _yy(y, 0)])

    def velocity_gradient(self, x, y, t):
        g = 8 * amplitude(t)
        return np.array([
            [g * _sx(x, 1) * _yy(y, 1), g * _sx(x, 0) * _yy(y, 2)],
            [-g * _sx(x, 2) * _yy(y, 0), -g * _sx(x, 1) * _yy(y, 1)],
        ])

    def velocity_hessian(self, x, y, t):
        """``hess[i, j, l] = d^2 u_i / dx_j dx_l``."""
        g = 8 * amplitude(t)
        u1xx = g * _sx(x, 2) * _yy(y, 1)
        u1xy = g * _sx(x, 1) * _yy(y, 2)
        u1yy = g * _sx(x, 0) * _yy(y, 3)
        u2xx = -g * _sx(x, 3) * _yy(y, 0)
        u2xy = -g * _sx(x, 2) * _yy(y, 1)
        u2yy = -g * _sx(x, 1) * _yy(y, 2)
        return np.array([[[u1xx, u1xy], [u1xy, u1yy]],
                         [[u2xx, u2xy], [u2xy, u2yy]]])

    def velocity_laplacian(self, x, y, t):
        hess = self.velocity_hessian(x, y, t)
        return hess[:, 0, 0] + hess[:, 1, 1]

    def velocity_rate(self, x, y, t):
        return amplitude_rate(t) / amplitude(t) * self.velocity(x, y, t)

    def pressure(self, x, y, t):
        return amplitude(t) * np.sin(PI * x) * np.cos(PI * y)

    def pressure_gradient(self, x, y, t):
        g = amplitude(t)
        return np.array([g * PI * np.cos(PI * x) * np.cos(PI * y),
                         -g * PI * np.sin(PI * x) * np.sin(PI * y)])

    def forcing(self, x, y, t, nu):
        """``u_t - nu * lap(u) + (u . grad) u + grad p``."""
        u = self.velocity(x, y, t)
        grad = self.velocity_gradient(x, y, t)
        convection = np.einsum("j...,ij...->i...", u, grad)
        return (self.velocity_rate(x, y, t) - nu * self.velocity_laplacian(x, y, t)
                + convection + self.pressure_gradient(x, y, t))

    def eval_exact(self, x, y, t) -> dict:
        return {
            "u": self.velocity(x, y, t),
            "p": self.pressure(x, y, t),
            "grad_u": self.velocity_gradient(x, y, t),
            "lap_u": self.velocity_laplacian(x, y, t),
            "u_t": self.velocity_rate(x, y, t),
            "grad_p": self.pressure_gradient(x, y, t),
        }


def gradient_perturbation(phi_amplitude: float):
    """Forcing ``grad(A sin(pi x) cos(pi y))`` as a callable ``(x, y, t) -> (2, ...)``."""

    def field(x, y, t=0.0):
        x, y = np.broadcast_arrays(np.asarray(x), np.asarray(y))
        return phi_amplitude * PI * np.array([np.cos(PI * x) * np.cos(PI * y),
                                              -np.sin(PI * x) * np.sin(PI * y)])

    return field


def gradient_potential(phi_amplitude: float):
    def field(x, y, t=0.0):
        return phi_amplitude * np.sin(PI * x) * np.cos(PI * y)

    return field
