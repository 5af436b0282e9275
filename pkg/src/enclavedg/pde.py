"""Hyperbolic system descriptors: conservative flux plus wave speed bound."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class PdeDescriptor:
    """A first-order hyperbolic system dq/dt + div F(q) = 0.

    flux(q, axis) and max_eigenvalue(q, axis) act pointwise on nodal arrays of
    shape (m, ...).  max_eigenvalue must bound the spectral radius of the flux
    Jacobian along that axis for all admissible states.
    """

    name: str
    m: int
    dim: int
    flux: Callable[[np.ndarray, int], np.ndarray]
    max_eigenvalue: Callable[[np.ndarray, int], np.ndarray]
    is_linear: bool


def advection(velocity: tuple[float, ...] = (1.0, 0.5), dim: int = 2) -> PdeDescriptor:
    """Scalar linear advection with constant velocity."""
    a = tuple(float(v) for v in velocity[:dim])

    def flux(q, axis):
        return a[axis] * q

    def max_eig(q, axis):
        return np.full(q.shape[1:], abs(a[axis]))

    return PdeDescriptor("advection", 1, dim, flux, max_eig, is_linear=True)


def burgers(dim: int = 2) -> PdeDescriptor:
    """Scalar Burgers equation with flux q^2/2 along every axis."""

    def flux(q, axis):
        return 0.5 * q * q

    def max_eig(q, axis):
        return np.abs(q[0])

    return PdeDescriptor("burgers", 1, dim, flux, max_eig, is_linear=False)


def make_pde(name: str, dim: int = 2) -> PdeDescriptor:
    if name == "advection":
        return advection(dim=dim)
    if name == "burgers":
        return burgers(dim=dim)
    raise ValueError(f"unknown pde {name!r}")
