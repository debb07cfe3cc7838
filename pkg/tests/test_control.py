import time

import numpy as np
import pytest

from softwave import _kernels as K
from softwave.control import (
    ControlCommand,
    GainSet,
    MpcController,
    MpcSettings,
    disturbance_forecast,
    feedforward_pd,
    kinematic_plan_step,
    mpc_cost_gradient,
    _Problem,
    mpc_solve,
)
from softwave.dynamics import DynamicParams, gravity_buoyancy
from softwave.kinematics import SegmentGeometry, tip_position
from softwave.model import Plant
from softwave.waves import calm_sea, synthesize_jonswap

PLANT = Plant()
GAINS = GainSet()
SET = MpcSettings()


def one_segment():
    plant = Plant(geom=SegmentGeometry(n=1), params=DynamicParams(k_stiff=(2.0,), d_damp=(0.5,)))
    gains = GainSet(alpha=10.0, beta=0.5, R=1.0)
    return plant, gains


def _tip_refs(q, Kh, plant=PLANT):
    return np.tile(tip_position(q, plant.base, plant.geom), (Kh, 1))


# ---- inner loop ------------------------------------------------------------

def test_feedforward_at_command():
    qb = np.array([0.4, -0.2, 0.7])
    tau = feedforward_pd(qb, qb, np.zeros(3), GAINS, PLANT)
    expected = 2.0 * qb + gravity_buoyancy(qb, PLANT.geom, PLANT.params, PLANT.base)
    assert np.allclose(tau, expected, atol=1e-14)


def test_feedforward_neutral_and_slack():
    params = DynamicParams(rho_body=1025.0, k_stiff=(0.0, 0.0, 0.0))
    plant = Plant(params=params)
    qb = np.array([0.4, -0.2, 0.7])
    assert np.allclose(feedforward_pd(qb, qb, np.zeros(3), GAINS, plant), 0.0, atol=1e-14)


def test_feedforward_mask(rng):
    for _ in range(10):
        tau = feedforward_pd(rng.normal(size=3), rng.normal(size=3), rng.normal(size=3), GAINS, PLANT,
                             mask=[1, 0, 1])
        assert tau[1] == 0.0


def test_kernel_feedforward_matches(rng):
    for _ in range(10):
        qb, q, qd = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
        ref = feedforward_pd(qb, q, qd, GAINS, PLANT)
        alpha, beta, *_ = GAINS.matrices(3)
        mask = np.ones(3)
        ff = K.feedforward(qb, PLANT.arrays, mask)
        got = K.applied_torque(np.concatenate([q, qd]), qb, ff, alpha, beta, mask, 3)
        assert np.allclose(got, ref, atol=1e-12)


def test_gain_validation():
    with pytest.raises(ValueError):
        GainSet(Q=(1.0, -1.0)).matrices(3)
    with pytest.raises(ValueError):
        GainSet(alpha=(1.0, 0.0, 1.0)).matrices(3)
    with pytest.raises(ValueError):
        MpcSettings(dt=0.0)
    with pytest.raises(ValueError):
        ControlCommand([4.0, 0.0, 0.0])


# ---- kinematic planner -----------------------------------------------------

def test_plan_step_at_target_is_unchanged():
    qb = np.array([0.3, 0.5, -0.4])
    x = tip_position(qb, PLANT.base, PLANT.geom)
    assert np.allclose(kinematic_plan_step(x, qb, GAINS, 0.1, PLANT), qb, atol=1e-15)


def test_plan_step_descends():
    target = tip_position(np.array([0.5, 0.6, 0.4]), PLANT.base, PLANT.geom)
    qb = np.zeros(3)
    errs = []
    for _ in range(60):
        errs.append(np.linalg.norm(target - tip_position(qb, PLANT.base, PLANT.geom)))
        qb = kinematic_plan_step(target, qb, GAINS, 0.1, PLANT)
    assert np.all(np.diff(errs) < 0)
    assert errs[-1] < 1e-3


def test_plan_step_clamps():
    qb = np.array([3.1, 3.1, 3.1])
    out = kinematic_plan_step((-5.0, 0.0), qb, GainSet(K_e=1e4), 1.0, PLANT, q_min=-1.0, q_max=1.0)
    assert np.all(out <= 1.0) and np.all(out >= -1.0)
    assert np.any(np.isclose(np.abs(out), 1.0))


# ---- MPC -------------------------------------------------------------------

def test_stationary_optimum():
    # the arm rests at q = 0 and is asked to stay; nothing to improve
    q = np.zeros(3)
    Kh = SET.horizon_K
    warm = np.tile(q, (Kh, 1))
    fc = np.zeros((Kh + 1, 3))
    res = mpc_solve(_tip_refs(q, Kh), q, np.zeros(3), warm, q, fc, 0.0, SET, GAINS, PLANT)
    # the command that holds q = 0 is the feedforward one, so the tip only moves
    # as far as the dynamics at rest allow
    assert res.cost <= res.warm_cost
    assert res.cost < 1e-6
    assert np.allclose(res.commands, warm, atol=1e-3)


def test_cost_never_above_warm(rng):
    sea = synthesize_jonswap(3.0, 8.0, seed=3)
    Kh = SET.horizon_K
    for _ in range(4):
        q, qd = rng.uniform(-0.8, 0.8, 3), 0.2 * rng.normal(size=3)
        warm = np.tile(q, (Kh, 1)) + 0.1 * rng.normal(size=(Kh, 3))
        fc = disturbance_forecast(sea, warm, 5.0, q, qd, SET, GAINS, PLANT)
        x_ref = np.tile((0.6, -4.2), (Kh, 1))
        res = mpc_solve(x_ref, q, qd, warm, q, fc, 5.0, SET, GAINS, PLANT)
        assert res.cost <= res.warm_cost
        assert np.all(res.commands >= SET.q_min) and np.all(res.commands <= SET.q_max)
        assert res.iterations <= SET.max_iters


def test_bounds_respected():
    st = MpcSettings(q_min=-0.3, q_max=0.3)
    Kh = st.horizon_K
    q = np.zeros(3)
    res = mpc_solve(np.tile((0.2, -4.6), (Kh, 1)), q, q, np.zeros((Kh, 3)), q, np.zeros((Kh + 1, 3)), 0.0,
                    st, GAINS, PLANT)
    assert np.all(np.abs(res.commands) <= 0.3 + 1e-15)
    assert res.cost < res.warm_cost


def test_gradient_matches_finite_differences(rng):
    st = MpcSettings(horizon_K=4, rtol=1e-10, atol=1e-12)
    Kh = st.horizon_K
    q, qd = rng.uniform(-0.5, 0.5, 3), 0.1 * rng.normal(size=3)
    qb = np.tile(q, (Kh, 1)) + 0.2 * rng.normal(size=(Kh, 3))
    fc = 0.05 * rng.normal(size=(Kh + 1, 3))
    x_ref = np.tile((0.6, -3.9), (Kh, 1))
    args = (q, qd)
    _, g = mpc_cost_gradient(x_ref, *args, qb, q, fc, 0.0, st, GAINS, PLANT)
    h = 1e-6
    fd = np.zeros_like(qb)
    for idx in np.ndindex(*qb.shape):
        e = np.zeros_like(qb)
        e[idx] = h
        cp, _ = mpc_cost_gradient(x_ref, *args, qb + e, q, fc, 0.0, st, GAINS, PLANT)
        cm, _ = mpc_cost_gradient(x_ref, *args, qb - e, q, fc, 0.0, st, GAINS, PLANT)
        fd[idx] = (cp - cm) / (2 * h)
    assert np.allclose(g, fd, rtol=1e-4, atol=1e-5 * np.max(np.abs(fd)))


def test_passive_joint_is_fixed_and_irrelevant(rng):
    st = MpcSettings(actuation_mask=(True, False, True))
    Kh = st.horizon_K
    q = np.array([0.2, 0.3, -0.1])
    warm = np.tile(q, (Kh, 1))
    fc = np.zeros((Kh + 1, 3))
    x_ref = np.tile((0.6, -3.9), (Kh, 1))
    res = mpc_solve(x_ref, q, np.zeros(3), warm, q, fc, 0.0, st, GAINS, PLANT)
    assert np.array_equal(res.commands[:, 1], warm[:, 1])
    # the passive command neither changes the prediction nor (through R) the choice
    other = warm.copy()
    other[:, 1] = 1.3
    c1, g1 = mpc_cost_gradient(x_ref, q, np.zeros(3), res.commands, q, fc, 0.0, st, GAINS, PLANT)
    moved = res.commands.copy()
    moved[:, 1] = q[1]
    c2, _ = mpc_cost_gradient(x_ref, q, np.zeros(3), moved, q, fc, 0.0, st, GAINS, PLANT)
    assert c1 == c2
    assert np.all(g1[:, 1] == 0)


def test_grid_oracle_one_segment():
    plant, gains = one_segment()
    st = MpcSettings(horizon_K=2, actuation_mask=(True,))
    q, qd = np.array([0.1]), np.array([0.0])
    x_ref = np.tile(tip_position([0.9], plant.base, plant.geom), (2, 1))
    fc = np.zeros((3, 1))
    t0 = time.perf_counter()
    res = mpc_solve(x_ref, q, qd, np.tile(q, (2, 1)), q, fc, 0.0, st, gains, plant)
    grid = np.linspace(st.q_min, st.q_max, 41)
    best = np.inf
    for a in grid:
        for b in grid:
            c, _ = mpc_cost_gradient(x_ref, q, qd, np.array([[a], [b]]), q, fc, 0.0,
                                     MpcSettings(horizon_K=2, actuation_mask=(True,)), gains, plant)
            best = min(best, c)
    elapsed = time.perf_counter() - t0
    assert res.cost <= 1.01 * best
    assert elapsed < 10.0


# ---- forecast --------------------------------------------------------------

def test_calm_forecast_is_zero():
    Kh = SET.horizon_K
    q = np.array([0.3, 0.2, 0.1])
    fc = disturbance_forecast(calm_sea(), np.tile(q, (Kh, 1)), 0.0, q, 0.1 * np.ones(3), SET, GAINS, PLANT)
    assert fc.shape == (Kh + 1, 3)
    # still water: only the added-mass reaction to the arm's own motion can remain
    pure = disturbance_forecast(calm_sea(), np.tile(q, (Kh, 1)), 0.0, q, np.zeros(3), SET, GAINS, PLANT,
                                np.tile(np.concatenate([q, np.zeros(3)]), (Kh + 1, 1)))
    assert np.all(pure == 0)


def test_forecast_knot_zero_is_true_load(rng):
    sea = synthesize_jonswap(3.0, 8.0, seed=11)
    m = PLANT.arrays
    wf = K.field_for(sea, m)
    for _ in range(5):
        q, qd, t = rng.uniform(-1, 1, 3), 0.3 * rng.normal(size=3), rng.uniform(0, 60)
        Kh = SET.horizon_K
        plan = np.tile(q, (Kh, 1))
        true = K.assemble(q, qd, t, m, wf, True)[4]
        a = disturbance_forecast(sea, plan, t, q, qd, SET, GAINS, PLANT)
        b = disturbance_forecast(sea, plan, t, q, qd, SET, GAINS, PLANT,
                                 np.tile(np.concatenate([q, qd]), (Kh + 1, 1)))
        assert np.allclose(a[0], true, rtol=1e-12, atol=1e-14)
        assert np.allclose(b[0], true, rtol=1e-12, atol=1e-14)


def test_forecast_smooth_in_time():
    sea = synthesize_jonswap(3.0, 8.0, seed=2)
    q = np.array([0.3, 0.2, 0.1])
    Kh = SET.horizon_K
    states = np.tile(np.concatenate([q, np.zeros(3)]), (Kh + 1, 1))
    ts = np.arange(0.0, 20.0, 0.01)
    f0 = np.array([disturbance_forecast(sea, None, t, q, np.zeros(3), SET, GAINS, PLANT, states)[0]
                   for t in ts])
    # the load is a smooth function of time: no jump larger than the scale of
    # its own variation over one step
    jumps = np.max(np.abs(np.diff(f0, axis=0)), axis=0)
    scale = np.max(np.abs(f0), axis=0)
    omega_max = max(c.omega for c in sea.components)
    assert np.all(jumps <= 2 * omega_max * 0.01 * scale + 1e-12)


def test_controller_receding_horizon():
    ctrl = MpcController(PLANT, GAINS, MpcSettings(horizon_K=5))
    q = np.zeros(3)
    ctrl.reset(q)
    x_ref = np.tile((0.7, -3.9), (5, 1))
    cmd, res = ctrl.solve(0.0, q, q, x_ref, np.zeros((6, 3)))
    assert np.array_equal(cmd, res.commands[0])
    assert np.array_equal(ctrl.plan[:-1], res.commands[1:])
    assert np.array_equal(ctrl.plan[-1], res.commands[-1])
    st = ctrl.predicted_states(q, q)
    assert st.shape == (6, 6)
    assert np.array_equal(st[1:-1], res.predicted_states[2:])


def test_carried_maps_reproduce_fresh_jacobian(rng):
    # carrying exactly the maps of this linearization must change nothing
    st = MpcSettings(horizon_K=5)
    Kh = st.horizon_K
    q, qd = rng.uniform(-0.5, 0.5, 3), 0.1 * rng.normal(size=3)
    qb = np.tile(q, (Kh, 1)) + 0.2 * rng.normal(size=(Kh, 3))
    pb = _Problem(np.tile((0.6, -3.9), (Kh, 1)), q, qd, q, 0.05 * rng.normal(size=(Kh + 1, 3)), 0.0,
                  st, GAINS, PLANT)
    _, info = pb.rollout(qb)
    J, maps = pb.jacobian(qb, info)
    Jc, maps_c = pb.jacobian(qb, info, carry=maps)
    assert np.array_equal(J, Jc)
    for a, b in zip(maps, maps_c):
        assert np.array_equal(a, b)


def test_carried_maps_keep_solution_quality():
    sea = synthesize_jonswap(3.0, 8.0, seed=3)
    ctrls = [MpcController(PLANT, GAINS, MpcSettings(reuse_linearization=r)) for r in (True, False)]
    Kh = SET.horizon_K
    q = np.array([-0.27, 1.06, 0.66])
    x_ref = np.tile(tip_position(q, PLANT.base, PLANT.geom), (Kh, 1))
    costs = [[], []]
    for c, out in zip(ctrls, costs):
        c.reset(q)
        for k in range(6):
            t = 0.1 * k
            fc = disturbance_forecast(sea, c.plan, t, q, np.zeros(3), SET, GAINS, PLANT,
                                      c.predicted_states(q, np.zeros(3)))
            _, res = c.solve(t, q, np.zeros(3), x_ref, fc)
            assert res.cost <= res.warm_cost
            out.append(res.cost)
    assert ctrls[0].maps is not None
    assert np.sum(costs[0]) <= 1.05 * np.sum(costs[1])
