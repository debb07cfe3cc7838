"""Shape controllers.

Both strategies produce a commanded configuration ``q_bar`` that feeds the
same low-level feedforward+PD torque law. The baseline plans ``q_bar`` with a
resolved-rate kinematic loop; the MPC optimizes a whole ``q_bar`` sequence
against predicted wave loading.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import _kernels as K
from .dynamics import gravity_buoyancy, stiffness_vector
from .kinematics import jacobian, tip_position
from .model import Plant

log = logging.getLogger(__name__)


def _mat(v, n):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return np.eye(n) * float(a)
    if a.ndim == 1:
        if a.size != n:
            raise ValueError(f"expected {n} diagonal entries, got {a.size}")
        return np.diag(a)
    if a.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} matrix, got {a.shape}")
    return a


def _is_spd(a):
    return np.allclose(a, a.T) and np.all(np.linalg.eigvalsh(a) > 0)


@dataclass(frozen=True)
class GainSet:
    """Gains of the inner loop, the kinematic planner and the MPC cost.

    Scalars, diagonals or full matrices are accepted for every entry.
    """

    alpha: tuple = (10.0, 10.0, 10.0)
    beta: tuple = (0.5, 0.2, 0.05)
    K_e: float = 2.0
    Q: tuple = (100.0, 100.0)
    R: tuple = (1.0, 1.0, 1.0)

    def matrices(self, n):
        alpha, beta = _mat(self.alpha, n), _mat(self.beta, n)
        Ke, Q, R = _mat(self.K_e, 2), _mat(self.Q, 2), _mat(self.R, n)
        if not (_is_spd(Q) and _is_spd(R)):
            raise ValueError("Q and R must be symmetric positive definite")
        if np.any(np.diag(alpha) <= 0) or np.any(np.diag(beta) <= 0):
            raise ValueError("alpha and beta need positive diagonals")
        return alpha, beta, Ke, Q, R


@dataclass(frozen=True)
class MpcSettings:
    dt: float = 0.1
    horizon_K: int = 15
    max_iters: int = 30
    fd_step: float = 1e-4
    actuation_mask: tuple = (True, True, True)
    q_min: float = -np.pi
    q_max: float = np.pi
    rtol: float = 1e-5
    atol: float = 1e-7
    ftol: float = 1e-3  # relative (predicted) cost decrease that ends a solve
    reuse_linearization: bool = True  # carry interval maps to the next tick
    gtol: float = 1e-6
    relinearize_after: int = 0  # chord failures past this iteration count end the solve

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon_K >= 1):
            raise ValueError("dt must be positive and the horizon at least one step")

    def mask(self, n):
        m = np.asarray(self.actuation_mask, dtype=float)
        if m.size != n:
            raise ValueError(f"actuation mask has {m.size} entries for {n} joints")
        return m


@dataclass
class ControlCommand:
    q_bar: np.ndarray
    q_min: float = -np.pi
    q_max: float = np.pi

    def __post_init__(self):
        self.q_bar = np.asarray(self.q_bar, dtype=float)
        if np.any(self.q_bar < self.q_min) or np.any(self.q_bar > self.q_max):
            raise ValueError("commanded configuration outside its bounds")


def feedforward_pd(q_bar, q, qdot, gains, plant=None, mask=None):
    """Inner-loop torque K(q_bar) + G(q_bar) + alpha (q_bar - q) - beta qdot.

    Entries of passive joints (``mask`` false) are zero.
    """
    plant = Plant() if plant is None else plant
    n = plant.n
    q_bar = np.asarray(q_bar, dtype=float)
    alpha, beta, _, _, _ = gains.matrices(n)
    mask = np.ones(n) if mask is None else np.asarray(mask, dtype=float)
    ff = stiffness_vector(q_bar, plant.params) + gravity_buoyancy(
        q_bar, plant.geom, plant.params, plant.base
    )
    tau = ff + alpha @ (q_bar - np.asarray(q, float)) - beta @ np.asarray(qdot, float)
    return tau * mask


def damped_pinv(J, damping=1e-4):
    return J.T @ np.linalg.inv(J @ J.T + damping * np.eye(J.shape[0]))


def kinematic_plan_step(x_target, q_bar_prev, gains, dt, plant=None, q_min=-np.pi, q_max=np.pi,
                        damping=1e-4):
    """One Euler step of the resolved-rate planner, clamped to the command bounds."""
    plant = Plant() if plant is None else plant
    q_bar_prev = np.asarray(q_bar_prev, dtype=float)
    _, _, Ke, _, _ = gains.matrices(plant.n)
    err = np.asarray(x_target, float) - tip_position(q_bar_prev, plant.base, plant.geom)
    J = jacobian(q_bar_prev, plant.n, 1.0, plant.base, plant.geom)
    q_bar = q_bar_prev + dt * damped_pinv(J, damping) @ (Ke @ err)
    return np.clip(q_bar, q_min, q_max)


def stable_step(y, q_bar, t, m, alpha, beta, mask, fc, dt, factor=2.0):
    """Largest prediction step that keeps explicit Dormand-Prince stable near ``y``.

    The error estimate vanishes on exact equilibria, so step control alone can
    grow the step past the stability limit of the stiff inner loop; replaying
    such steps would make the finite-difference linearization meaningless.
    The cap is ``factor / rho`` with rho the spectral radius of the local
    state Jacobian, and never more than dt / 2.
    """
    y = np.asarray(y, dtype=float)
    ff = K.feedforward(np.asarray(q_bar, float), m, mask)
    args = (np.asarray(q_bar, float), ff, alpha, beta, mask, m, K.empty_field(), fc, True)
    f0 = K.rhs(t, y, args)
    A = np.empty((y.size, y.size))
    for i in range(y.size):
        e = max(1e-7, 1e-7 * abs(y[i]))
        yp = y.copy()
        yp[i] += e
        A[:, i] = (K.rhs(t, yp, args) - f0) / e
    rho = np.max(np.abs(np.linalg.eigvals(A)))
    return min(dt / 2, factor / rho) if rho > 0 else dt / 2


def disturbance_forecast(sea_estimate, q_bar_plan, t_now, q, qdot, settings, gains, plant,
                         predicted_states=None):
    """Generalized fluid load at each horizon knot along the predicted motion.

    The load is evaluated with the full fluid model under the estimated sea
    at the knot states ``predicted_states`` (shape (K + 1, 2n), knot 0 at
    ``t_now``). Without them the plan is first rolled out under that sea.
    Returns an array of shape (K + 1, n).
    """
    n = plant.n
    m = plant.arrays
    wf = K.field_for(sea_estimate, m)
    y0 = np.concatenate([np.asarray(q, float), np.asarray(qdot, float)])
    if predicted_states is not None:
        states = np.array(predicted_states, dtype=float)
        states[0] = y0
        return K.loads_at(states, float(t_now), settings.dt, m, wf)
    alpha, beta, _, _, _ = gains.matrices(n)
    plan = np.ascontiguousarray(q_bar_plan, dtype=float)
    mask = settings.mask(n)
    hmax = stable_step(y0, plan[0], float(t_now), m, alpha, beta, mask, K.empty_forecast(n), settings.dt)
    fe, _, status = K.hydro_rollout(
        y0, float(t_now), settings.dt, plan, m, alpha, beta, mask, wf,
        settings.rtol, settings.atol, 1e-10, hmax, 100000, hmax,
    )
    if status != K.OK:
        log.warning("forecast rollout failed at t=%.2f (status %d); holding last value", t_now, status)
    return fe


@dataclass
class MpcResult:
    commands: np.ndarray
    cost: float
    warm_cost: float
    iterations: int
    evaluations: int
    capped: bool
    predicted_states: np.ndarray = field(repr=False, default=None)
    maps: tuple = field(repr=False, default=None)


class _Problem:
    """One horizon problem: prediction rollouts, residuals and their linearization.

    The cost is |r|^2 with r stacking Lq (tip_{k+1} - xref_k) for k < K and
    Lr (qbar_k - qbar_{k-1}); Q = Lq^T Lq and R = Lr^T Lr.
    """

    def __init__(self, x_ref, q, qdot, q_bar_prev, forecast, t_now, settings, gains, plant,
                 max_steps=400):
        n = plant.n
        Kh = settings.horizon_K
        self.n, self.Kh, self.settings, self.plant = n, Kh, settings, plant
        self.t_now = float(t_now)
        self.alpha, self.beta, _, Q, R = gains.matrices(n)
        self.mask = settings.mask(n)
        self.xref = np.ascontiguousarray(x_ref, dtype=float).reshape(Kh, 2)
        self.qprev = np.asarray(q_bar_prev, dtype=float)
        self.y0 = np.concatenate([np.asarray(q, float), np.asarray(qdot, float)])
        self.fc = K.Forecast(self.t_now, settings.dt, np.ascontiguousarray(forecast, dtype=float))
        self.Q, self.R = Q, R
        self.Lq = np.linalg.cholesky(Q).T
        self.Lr = np.linalg.cholesky(R).T
        # increment operator: D x stacks qbar_k - qbar_{k-1}
        D = np.eye(Kh * n) - np.eye(Kh * n, k=-n)
        self.WR = np.kron(np.eye(Kh), self.Lr) @ D
        self.free = np.flatnonzero(np.tile(self.mask != 0.0, Kh))
        self.max_steps = max_steps
        self.hmax = stable_step(self.y0, self.qprev, self.t_now, plant.arrays, self.alpha, self.beta,
                                self.mask, self.fc, settings.dt)
        self.evaluations = 0

    def rollout(self, x):
        """Predicted cost of the stacked commands ``x``; inf if the prediction fails."""
        Kh, n, st = self.Kh, self.n, self.settings
        steps = np.zeros((Kh, self.max_steps))
        nsteps = np.zeros(Kh, dtype=np.int64)
        ystates = np.zeros((Kh + 1, 2 * n))
        track = np.zeros(Kh)
        qb = np.ascontiguousarray(x, dtype=float).reshape(Kh, n)
        cost, status = K.mpc_rollout(
            self.y0, self.t_now, st.dt, qb, self.qprev, self.Q, self.R, self.xref,
            self.plant.arrays, self.alpha, self.beta, self.mask, self.fc, st.rtol, st.atol, 1e-10,
            self.hmax, self.max_steps, min(st.dt / 4, self.hmax), steps, nsteps, ystates, track,
        )
        self.evaluations += 1
        ok = status == K.OK and np.isfinite(cost)
        return (cost if ok else np.inf), dict(steps=steps, nsteps=nsteps, ystates=ystates)

    def residuals(self, x, info):
        Kh, n, m = self.Kh, self.n, self.plant.arrays
        ys = info["ystates"]
        rt = np.zeros(2 * Kh)
        for k in range(Kh):
            tip = np.array(K.tip_position(ys[k + 1, :n], m))
            rt[2 * k:2 * k + 2] = self.Lq @ (tip - self.xref[k])
        rr = self.WR @ np.ravel(x)
        rr[:n] -= self.Lr @ self.qprev
        return np.concatenate([rt, rr])

    def jacobian(self, x, info, carry=None):
        """d r / d x on the free (actuated) commands, and the interval maps (A, B).

        Each interval is linearized by finite differences that replay the
        nominal step sizes; the interval maps are then chained forward.
        ``carry`` = (A, B) supplies maps for intervals 1..K-2 from an earlier
        linearization; intervals 0 and K-1 are always linearized here.
        """
        Kh, n, st = self.Kh, self.n, self.settings
        qb = np.ascontiguousarray(x, dtype=float).reshape(Kh, n)
        todo = np.ones(Kh, dtype=np.bool_)
        if carry is not None:
            todo[1:Kh - 1] = False
        A, B, C = K.mpc_linearize(self.t_now, st.dt, qb, self.plant.arrays, self.alpha, self.beta,
                                  self.mask, self.fc, info["steps"], info["nsteps"],
                                  info["ystates"], st.fd_step, todo)
        if carry is not None:
            A[1:Kh - 1] = carry[0][1:Kh - 1]
            B[1:Kh - 1] = carry[1][1:Kh - 1]
        S = np.zeros((2 * n, Kh * n))
        Jt = np.zeros((2 * Kh, Kh * n))
        for k in range(Kh):
            S = A[k] @ S
            S[:, k * n:(k + 1) * n] += B[k]
            Jt[2 * k:2 * k + 2] = self.Lq @ C[k + 1] @ S[:n]
        return np.vstack([Jt, self.WR])[:, self.free], (A, B)


def mpc_cost_gradient(x_ref, q, qdot, q_bar, q_bar_prev, forecast, t_now, settings, gains, plant):
    """Predicted cost and its gradient with respect to the full (K, n) command sequence.

    Gradient entries of passive joints are zero.
    """
    pb = _Problem(x_ref, q, qdot, q_bar_prev, forecast, t_now, settings, gains, plant)
    x = np.asarray(q_bar, dtype=float).reshape(pb.Kh, pb.n)
    cost, info = pb.rollout(x)
    g = np.zeros(pb.Kh * pb.n)
    if np.isfinite(cost) and pb.free.size:
        g[pb.free] = 2.0 * pb.jacobian(x, info)[0].T @ pb.residuals(x, info)
    return cost, g.reshape(pb.Kh, pb.n)


def mpc_solve(x_ref, q, qdot, q_bar_warm, q_bar_prev, forecast, t_now, settings, gains, plant,
              carry=None):
    """Optimize the command sequence over the horizon.

    ``x_ref`` holds the K task-space targets for the states reached after
    each command; ``forecast`` the (K + 1, n) disturbance knots.

    Projected Gauss-Newton: every interval of the prediction is linearized by
    finite differences, chained into the Jacobian of the cost residuals, and
    the bounded linear least-squares step is safeguarded by backtracking on
    the true predicted cost. The linearization is reused across iterations
    (chord iterations); when a chord step fails the solve relinearizes only
    while ``it <= settings.relinearize_after``. The result is never worse than
    the (clipped) warm start.

    ``carry`` = (A, B) seeds the first linearization with interval maps from
    the previous tick, shifted by one interval; only the first and last
    intervals are then linearized. A failed step from carried maps always
    triggers a full relinearization.
    """
    pb = _Problem(x_ref, q, qdot, q_bar_prev, forecast, t_now, settings, gains, plant)
    Kh, n, free = pb.Kh, pb.n, pb.free
    x = np.clip(np.asarray(q_bar_warm, dtype=float).reshape(Kh, n), settings.q_min, settings.q_max)

    cost, info = pb.rollout(x)
    warm_cost = cost
    if not np.isfinite(cost):
        log.warning("warm start rollout failed at t=%.2f", t_now)
        return MpcResult(x, cost, cost, 0, pb.evaluations, False, None)
    if free.size == 0:
        return MpcResult(x, cost, cost, 0, pb.evaluations, False, info["ystates"])

    it = 0
    capped = False
    Jr = None  # last linearization, reused while steps succeed
    maps = None
    if carry is not None and carry[0].shape[0] == Kh and Kh > 2:
        Jr, maps = pb.jacobian(x, info, carry)
    carried = Jr is not None
    while True:
        if it >= settings.max_iters:
            capped = True
            break
        it += 1
        fresh = Jr is None
        if fresh:
            Jr, maps = pb.jacobian(x, info)
            carried = False
        r = pb.residuals(x, info)
        grad = 2.0 * Jr.T @ r
        xd = x.ravel()
        xf = xd[free]
        lo = settings.q_min - xf
        hi = settings.q_max - xf
        # projected gradient test
        pg = np.where(grad > 0, np.maximum(-grad, lo), np.minimum(-grad, hi))
        step = None
        if np.max(np.abs(pg)) >= settings.gtol:
            step = scipy.optimize.lsq_linear(Jr, -r, bounds=(lo, hi), method="bvls").x
            pred = cost - np.sum((Jr @ step + r) ** 2)
            if not pred > settings.ftol * max(cost, 1e-12):
                step = None
        accepted = False
        if step is not None:
            lam = 1.0
            for _ in range(4):
                trial = xd.copy()
                trial[free] = np.clip(xf + lam * step, settings.q_min, settings.q_max)
                c_new, i_new = pb.rollout(trial)
                if c_new <= cost - 1e-4 * lam * pred:
                    accepted = True
                    break
                lam *= 0.5
        if not accepted:
            if fresh:
                break
            if carried and step is None:
                break  # the carried model predicts convergence
            if it > settings.relinearize_after and not carried:
                break
            Jr = None  # stale sensitivities: relinearize and try again
            continue
        rel = (cost - c_new) / max(cost, 1e-12)
        x = trial.reshape(Kh, n)
        cost, info = c_new, i_new
        if rel < settings.ftol:
            break
    if capped:
        log.debug("MPC hit the iteration cap at t=%.2f", t_now)
    return MpcResult(x, cost, warm_cost, it, pb.evaluations, capped, info["ystates"], maps)


class MpcController:
    """Receding-horizon wrapper: keeps the warm start between ticks."""

    def __init__(self, plant, gains, settings):
        self.plant = plant
        self.gains = gains
        self.settings = settings
        self.plan = None
        self.last = None
        self.states = None

    def reset(self, q):
        q = np.clip(np.asarray(q, float), self.settings.q_min, self.settings.q_max)
        self.plan = np.tile(q, (self.settings.horizon_K, 1))
        self.last = q.copy()
        self.states = None
        self.maps = None

    def predicted_states(self, q, qdot):
        """Knot states for the next forecast: the last prediction shifted by one tick."""
        y0 = np.concatenate([np.asarray(q, float), np.asarray(qdot, float)])
        if self.states is None:
            return np.tile(y0, (self.settings.horizon_K + 1, 1))
        st = np.vstack([self.states[1:], self.states[-1:]])
        st[0] = y0
        return st

    def solve(self, t_now, q, qdot, x_ref, forecast):
        if self.plan is None:
            self.reset(q)
        carry = None
        if self.maps is not None and self.settings.reuse_linearization:
            carry = tuple(np.concatenate([a[1:], a[-1:]]) for a in self.maps)
        res = mpc_solve(x_ref, q, qdot, self.plan, self.last, forecast, t_now, self.settings,
                        self.gains, self.plant, carry)
        self.maps = res.maps
        cmd = res.commands
        self.last = cmd[0].copy()
        self.states = res.predicted_states
        # zero-order-hold shift for the next tick
        self.plan = np.vstack([cmd[1:], cmd[-1:]])
        return cmd[0].copy(), res
