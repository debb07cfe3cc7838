"""Lumped-parameter equation of motion for the PCC arm.

Each segment is split into ``n_quad`` point masses at the arc-length
midpoints, so that

    M(q) qdd + C(q, qd) qd + D qd + K(q) + G(q) = tau + F_E

with M = sum m_j J_j^T J_j and C built from the Christoffel symbols of M.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _kernels as K
from .kinematics import BasePose, SegmentGeometry


@dataclass(frozen=True)
class DynamicParams:
    rho_body: float = 1100.0
    rho_f: float = 1025.0
    g: float = 9.81
    k_stiff: tuple = (2.0, 2.0, 2.0)
    d_damp: tuple = (0.5, 0.5, 0.5)
    n_quad: int = 10

    def __post_init__(self):
        if not (self.rho_body > 0 and self.rho_f > 0 and self.g > 0):
            raise ValueError("densities and gravity must be positive")
        if self.n_quad < 4:
            raise ValueError("n_quad must be at least 4")
        if np.any(np.asarray(self.k_stiff) < 0) or np.any(np.asarray(self.d_damp) < 0):
            raise ValueError("stiffness and damping must be non-negative")

    def stiffness(self, n):
        return _per_joint(self.k_stiff, n)

    def damping(self, n):
        return _per_joint(self.d_damp, n)


def _per_joint(v, n):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size == 1:
        return np.full(n, v[0])
    if v.size != n:
        raise ValueError(f"expected {n} per-joint values, got {v.size}")
    return v


def node_mass(geom, params):
    return params.rho_body * geom.cross_section * geom.L / params.n_quad


def model_arrays(geom, params, base=BasePose(), coeffs=None):
    """Pack everything the compiled kernels need.

    ``coeffs=None`` switches hydrodynamics off (no added mass, no drag).
    """
    vol = geom.cross_section * geom.L / params.n_quad
    if coeffs is None:
        ma_x = ma_z = area = cd = cf = 0.0
        fk = 0.0
    else:
        ma = coeffs.added_mass_diagonal(geom) / params.n_quad
        ma_x, ma_z = float(ma[0]), float(ma[1])
        area = geom.d_s * geom.L / params.n_quad
        cd, cf = coeffs.C_d, coeffs.C_f
        fk = 1.0 if coeffs.fluid_acceleration else 0.0
    return K.ModelArrays(
        int(geom.n),
        int(params.n_quad),
        float(geom.L),
        float(base.position[0]),
        float(base.position[1]),
        float(base.heading),
        float(node_mass(geom, params)),
        float(vol),
        float(params.rho_f),
        float(params.g),
        params.stiffness(geom.n),
        params.damping(geom.n),
        ma_x,
        ma_z,
        float(area),
        float(cd),
        float(cf),
        fk,
    )


def _terms(q, qdot, geom, params, base=BasePose(), coeffs=None):
    q = np.asarray(q, dtype=float)
    qdot = np.zeros_like(q) if qdot is None else np.asarray(qdot, dtype=float)
    m = model_arrays(geom, params, base, coeffs)
    return K.assemble(q, qdot, 0.0, m, K.empty_field(), False)


def mass_matrix(q, geom=SegmentGeometry(), params=DynamicParams()):
    return _terms(q, None, geom, params)[0]


def coriolis_matrix(q, qdot, geom=SegmentGeometry(), params=DynamicParams(), step=1e-6):
    """Christoffel-symbol Coriolis matrix from central differences of M."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    n = q.size
    dM = np.empty((n, n, n))  # dM[k] = dM/dq_k
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        dM[k] = (mass_matrix(q + e, geom, params) - mass_matrix(q - e, geom, params)) / (2 * step)
    C = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            C[i, j] = 0.5 * sum(
                (dM[k][i, j] + dM[j][i, k] - dM[i][j, k]) * qdot[k] for k in range(n)
            )
    return C


def mass_matrix_rate(q, qdot, geom=SegmentGeometry(), params=DynamicParams(), step=1e-6):
    """dM/dt along qdot, by central differences."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    return (mass_matrix(q + step * qdot, geom, params) - mass_matrix(q - step * qdot, geom, params)) / (
        2 * step
    )


def velocity_product(q, qdot, geom=SegmentGeometry(), params=DynamicParams()):
    """C(q, qd) qd evaluated directly as sum m_j J_j^T Jdot_j qd."""
    return _terms(q, qdot, geom, params)[2]


def stiffness_vector(q, params=DynamicParams()):
    q = np.asarray(q, dtype=float)
    return params.stiffness(q.size) * q


def damping_matrix(params=DynamicParams(), n=3):
    return np.diag(params.damping(n))


def gravity_buoyancy(q, geom=SegmentGeometry(), params=DynamicParams(), base=BasePose()):
    """Generalized weight minus buoyancy, as it appears on the left of the EOM.

    It is the gradient of the potential sum_j (m_j - rho_f V_j) g z_j.
    """
    return _terms(q, None, geom, params, base)[3]


def potential_energy(q, geom=SegmentGeometry(), params=DynamicParams(), base=BasePose()):
    q = np.asarray(q, dtype=float)
    m = model_arrays(geom, params, base)
    pos = K.node_states(q, np.zeros_like(q), m)[0]
    w_net = (m.m_node - params.rho_f * m.vol_node) * params.g
    elastic = 0.5 * np.sum(params.stiffness(q.size) * q**2)
    return elastic + w_net * np.sum(pos[:, 1])


def mechanical_energy(q, qdot, geom=SegmentGeometry(), params=DynamicParams(), base=BasePose(),
                      coeffs=None):
    """Kinetic (body plus added mass) + elastic + gravitational energy."""
    Mb, Ma, _, _, _ = _terms(q, qdot, geom, params, base, coeffs)
    qdot = np.asarray(qdot, dtype=float)
    return 0.5 * qdot @ (Mb + Ma) @ qdot + potential_energy(q, geom, params, base)


def forward_dynamics(q, qdot, tau, F_E, added_inertia=None, geom=SegmentGeometry(),
                     params=DynamicParams(), base=BasePose()):
    """Joint accelerations from the equation of motion.

    Raises ``numpy.linalg.LinAlgError`` if the effective inertia is not
    positive definite.
    """
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    Mb, _, cor, grav, _ = _terms(q, qdot, geom, params, base)
    M = Mb if added_inertia is None else Mb + np.asarray(added_inertia, dtype=float)
    rhs = (
        np.asarray(tau, dtype=float)
        + np.asarray(F_E, dtype=float)
        - cor
        - params.damping(q.size) * qdot
        - stiffness_vector(q, params)
        - grav
    )
    try:
        factor = scipy.linalg.cho_factor(M)
    except scipy.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("effective mass matrix is not positive definite") from exc
    return scipy.linalg.cho_solve(factor, rhs)


def integrate_passive(q0, qdot0, duration, geom=SegmentGeometry(), params=DynamicParams(),
                      base=BasePose(), coeffs=None, sea=None, n_out=101, rtol=1e-10, atol=1e-12):
    """Unactuated trajectory (tau = 0) sampled on a uniform grid.

    With ``coeffs`` given the fluid loads are included; ``sea`` then supplies
    the wave field (still water otherwise).
    """
    n = geom.n
    m = model_arrays(geom, params, base, coeffs)
    w = K.field_for(sea, m)
    zeros = np.zeros(n)
    Z = np.zeros((n, n))
    args = (zeros, zeros, Z, Z, zeros, m, w, K.empty_forecast(n), coeffs is None)
    times = np.linspace(0.0, duration, n_out)
    y = np.concatenate([np.asarray(q0, float), np.asarray(qdot0, float)])
    out = np.empty((n_out, 2 * n))
    out[0] = y
    h = 0.0
    scratch = np.empty(1)
    for i in range(1, n_out):
        y, h, _, status = K.integrate(times[i - 1], times[i], y, h, rtol, atol, 1e-12, np.inf, 10**6, args,
                                      scratch)
        if status != K.OK:
            raise RuntimeError(f"integration failed at t={times[i - 1]:.3f} (status {status})")
        out[i] = y
    return times, out
