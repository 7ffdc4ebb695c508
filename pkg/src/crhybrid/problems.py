"""Test problems: the Green-Taylor vortex, a constant force and the lid-driven cavity.

Fields take point arrays ``x`` of shape ``(N, d)`` and a time ``t``; velocities
return ``(N, d)`` and pressures ``(N,)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class ManufacturedSolution:
    velocity: Callable
    pressure: Callable
    force: Callable | None = None
    name: str = ""
    exact: bool = True   # False when no closed form exists (boundary data only)


def green_taylor(x, t: float, Re: float, dim: int = 2, stokes: bool = False):
    """Decaying vortex on the unit square, extruded in ``x_3`` when ``dim == 3``.

    The velocity decays like ``exp(-8 pi^2 t)``, the pressure like
    ``exp(-16 pi^2 t)``; both solve the equations with unit viscosity and
    zero force. The 3D Stokes variant has zero pressure, since there the
    pressure is not needed to balance convection.
    """
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = 2 * np.pi * (x[:, 0] + 0.25)
    b = 2 * np.pi * (x[:, 1] + 0.5)
    ev = np.exp(-8 * np.pi**2 * t)
    u = np.zeros((len(x), dim))
    u[:, 0] = -Re * np.cos(a) * np.sin(b) * ev
    u[:, 1] = Re * np.sin(a) * np.cos(b) * ev
    if stokes and dim == 3:
        p = np.zeros(len(x))
    else:
        p = -(Re**2 / 4) * (np.cos(2 * a) + np.cos(2 * b)) * np.exp(-16 * np.pi**2 * t)
    return u, p


def green_taylor_solution(Re: float, dim: int = 2, stokes: bool = False) -> ManufacturedSolution:
    return ManufacturedSolution(
        velocity=lambda x, t: green_taylor(x, t, Re, dim, stokes)[0],
        pressure=lambda x, t: green_taylor(x, t, Re, dim, stokes)[1],
        force=None,
        name=f"green-taylor-{dim}d" + ("-stokes" if stokes else ""),
    )


def constant_force_solution(f) -> ManufacturedSolution:
    """Zero velocity and pressure ``f . x`` (up to a constant) under force ``f``."""
    f = np.asarray(f, dtype=float)

    def force(x, t):
        return np.broadcast_to(f, np.shape(x)).copy()

    return ManufacturedSolution(
        velocity=lambda x, t: np.zeros(np.shape(x)),
        pressure=lambda x, t: np.atleast_2d(x) @ f,
        force=force,
        name="constant-force",
    )


def lid_velocity(dim: int = 2, speed: float = 1.0):
    """Boundary data of the cavity: tangential ``speed`` on the top side
    (``x_d = 1``), zero elsewhere. The corners are not regularized."""

    def velocity(x, t):
        x = np.atleast_2d(x)
        u = np.zeros((len(x), dim))
        u[np.isclose(x[:, dim - 1], 1.0), 0] = speed
        return u

    return ManufacturedSolution(
        velocity=velocity, pressure=lambda x, t: np.zeros(len(np.atleast_2d(x))),
        force=None, name="cavity", exact=False,
    )
