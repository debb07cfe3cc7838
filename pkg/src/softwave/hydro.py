"""Morison-type fluid loading on the arm: added mass and quadratic drag."""

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .dynamics import DynamicParams, model_arrays
from .kinematics import BasePose, SegmentGeometry


@dataclass(frozen=True)
class HydroCoeffs:
    C_d: float = 1.1
    C_f: float = 0.05
    C_a: float = 1.0
    rho_f: float = 1025.0
    C_a_z: float = None  # heave added-mass coefficient, defaults to C_a
    fluid_acceleration: bool = False  # add M_A times the fluid acceleration to the load

    def __post_init__(self):
        vals = [self.C_d, self.C_f, self.C_a, self.rho_f] + ([] if self.C_a_z is None else [self.C_a_z])
        if min(vals) < 0:
            raise ValueError("hydrodynamic coefficients must be non-negative")

    @property
    def C_m(self):
        cz = self.C_a if self.C_a_z is None else self.C_a_z
        return np.array([1.0 + self.C_a, 1.0 + cz])

    def added_mass_diagonal(self, geom):
        return np.pi * geom.d_s**2 / 4.0 * geom.L * self.rho_f * self.C_m


@dataclass
class ElementState:
    position: tuple
    theta: float
    v: tuple
    area: float

    def __post_init__(self):
        if not self.area > 0:
            raise ValueError("incident area must be positive")


def added_mass_matrix(geom=SegmentGeometry(), coeffs=HydroCoeffs()):
    """2x2 added-mass matrix of one whole segment (world x, z)."""
    return np.diag(coeffs.added_mass_diagonal(geom))


def element_area(geom=SegmentGeometry(), n_quad=10):
    return geom.d_s * geom.L / n_quad


def drag_force(elem, v_f, coeffs=HydroCoeffs()):
    """Quadratic normal/tangential drag on one element, world frame."""
    th = elem.theta
    t_hat = np.array([np.cos(th), np.sin(th)])
    n_hat = np.array([-np.sin(th), np.cos(th)])
    rel = np.asarray(elem.v, dtype=float) - np.asarray(v_f, dtype=float)
    vn = n_hat @ rel
    vt = t_hat @ rel
    k = 0.5 * coeffs.rho_f * elem.area
    return -k * (coeffs.C_d * abs(vn) * vn * n_hat + coeffs.C_f * abs(vt) * vt * t_hat)


def generalized_disturbance(q, qdot, sea, t, base=BasePose(), geom=SegmentGeometry(),
                            coeffs=HydroCoeffs(), params=DynamicParams()):
    """Joint-space fluid load and generalized added inertia.

    Returns ``(F_E, M_A_gen)``. F_E collects J^T (drag - M_A Jdot qd) over
    all lumping nodes; the M_A J qdd part is returned as the inertia
    ``M_A_gen = sum J^T M_A J`` to be added to the mass matrix.
    """
    if coeffs.rho_f != params.rho_f:
        raise ValueError("fluid density differs between hydro coefficients and dynamic params")
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    m = model_arrays(geom, params, base, coeffs)
    w = K.field_for(sea, m)
    _, Ma, _, _, fe = K.assemble(q, qdot, float(t), m, w, True)
    return fe, Ma
