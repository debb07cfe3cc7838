"""Episode engine: plant integration, controller ticks, noise, failures, traces."""

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels as K
from .control import GainSet, MpcController, MpcSettings, disturbance_forecast, kinematic_plan_step
from .kinematics import BasePose, inverse_kinematics
from .model import Plant
from .waves import WAVE_CASES, calm_sea, elevation, load_sea, synthesize_jonswap

log = logging.getLogger(__name__)

# end-effector set-points (x, z) in metres
POSES = {
    "P1": (0.3, -3.7),
    "P2": (0.5, -3.7),
    "P3": (0.7, -3.7),
    "P4": (0.3, -4.3),
    "P5": (0.5, -4.3),
    "P6": (0.7, -4.3),
}

STAR_CENTER = (0.45, -4.0)
STAR_RADIUS = 0.25
STAR_INNER_RATIO = 0.382


class EpisodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    """One episode.

    ``wave`` is a case name (W1-W3), a peak period in seconds, or None for
    calm water; ``spectrum_file`` overrides it with an imported spectrum.
    ``task`` is a pose name, ``"star"`` or an explicit (x, z) target.
    ``failure`` is (1-based segment, onset time) or None.
    """

    wave: object = "W1"
    Hs: float = 3.0
    wave_seed: int = 0
    spectrum_file: str = None
    depth: float = 20.0
    n_components: int = 50
    gamma: float = 3.3
    task: object = "P1"
    controller: str = "mpc"
    duration: float = 60.0
    dt: float = 0.1
    failure: tuple = None
    snr_db: float = 20.0
    noise_seed: int = 0
    base_depth: float = 4.0
    q0: tuple = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not np.isfinite(self.snr_db) and self.snr_db != np.inf:
            raise ValueError("snr_db must be finite (or +inf for a perfect estimate)")
        if self.controller not in ("mpc", "baseline"):
            raise ValueError(f"unknown controller {self.controller!r}")

    @property
    def n_ticks(self):
        return int(round(self.duration / self.dt))

    def sea(self):
        if self.spectrum_file:
            return load_sea(self.spectrum_file, d=self.depth, seed=self.wave_seed)
        if self.wave is None or self.Hs == 0:
            return calm_sea(self.depth)
        Tp = WAVE_CASES[self.wave] if isinstance(self.wave, str) else float(self.wave)
        return synthesize_jonswap(self.Hs, Tp, self.gamma, self.n_components, self.depth, self.wave_seed)

    def reference(self):
        """Task-space reference as a function of time."""
        if isinstance(self.task, str) and self.task == "star":
            return lambda t: star_trajectory(t, STAR_CENTER, STAR_RADIUS, self.duration)
        target = np.array(POSES[self.task] if isinstance(self.task, str) else self.task, dtype=float)
        return lambda t: target

    def label(self):
        wave = Path(self.spectrum_file).stem if self.spectrum_file else self.wave
        task = self.task if isinstance(self.task, str) else "x%.3f_z%.3f" % tuple(self.task)
        fail = "" if self.failure is None else f"_fail{self.failure[0]}"
        return f"{wave}_Hs{self.Hs:g}_{task}_{self.controller}{fail}"


@dataclass
class Trace:
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    tips: np.ndarray  # (T, n, 2)
    tau: np.ndarray
    fe: np.ndarray
    fe_forecast: np.ndarray
    zeta: np.ndarray
    reference: np.ndarray
    cost: np.ndarray
    iterations: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.q.shape[1]

    @property
    def tip(self):
        return self.tips[:, -1, :]

    def columns(self):
        n = self.n
        cols = ["t"] + [f"q{i}" for i in range(1, n + 1)] + [f"qd{i}" for i in range(1, n + 1)]
        for i in range(1, n + 1):
            cols += [f"tip{i}x", f"tip{i}z"]
        cols += [f"tau{i}" for i in range(1, n + 1)] + [f"fe{i}" for i in range(1, n + 1)]
        cols += ["zeta"] + [f"fehat{i}" for i in range(1, n + 1)]
        cols += ["xref", "zref", "cost", "iters"]
        return cols

    def table(self):
        T = self.t.size
        return np.column_stack([
            self.t, self.q, self.qd, self.tips.reshape(T, -1), self.tau, self.fe, self.zeta,
            self.fe_forecast, self.reference, self.cost, self.iterations,
        ])

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for row in self.table():
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with path.open() as fh:
            header = next(csv.reader(fh))
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = sum(1 for c in header if c.startswith("tau"))
        col = {c: i for i, c in enumerate(header)}

        def block(prefix, suffixes=None):
            names = [f"{prefix}{i}" for i in range(1, n + 1)]
            return data[:, [col[c] for c in names]]

        tips = np.stack(
            [data[:, [col[f"tip{i}x"], col[f"tip{i}z"]]] for i in range(1, n + 1)], axis=1
        )
        return cls(
            t=data[:, col["t"]], q=block("q"), qd=block("qd"), tips=tips, tau=block("tau"),
            fe=block("fe"), fe_forecast=block("fehat"), zeta=data[:, col["zeta"]],
            reference=data[:, [col["xref"], col["zref"]]], cost=data[:, col["cost"]],
            iterations=data[:, col["iters"]],
        )

    def summary(self):
        out = dict(self.meta)
        out["rmse"] = rmse(self)
        out["max_abs_fe"] = float(np.max(np.abs(self.fe)))
        it = self.iterations[np.isfinite(self.iterations)]
        if it.size:
            out["mean_iterations"] = float(np.mean(it))
            out["max_iterations"] = int(np.max(it))
        return out


def corrupt_estimate(fe_true, snr_db, rng):
    """Add white Gaussian noise at the given SNR (dB) to a disturbance window.

    Signal power is measured per joint channel over the window; a zero
    channel receives no noise. ``rng`` is a seed or a numpy Generator.
    """
    rng = np.random.default_rng(rng)
    fe_true = np.asarray(fe_true, dtype=float)
    noise = rng.standard_normal(fe_true.shape)
    if snr_db == np.inf:
        return fe_true.copy()
    power = np.mean(fe_true**2, axis=0, keepdims=fe_true.ndim > 1)
    sigma = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    return fe_true + sigma * noise


def star_vertices(center=STAR_CENTER, R_outer=STAR_RADIUS, inner_ratio=STAR_INNER_RATIO):
    """The 10 corners of a five-pointed star, starting at the top outer point."""
    ang = np.pi / 2 + np.arange(10) * np.pi / 5
    r = np.where(np.arange(10) % 2 == 0, R_outer, inner_ratio * R_outer)
    return np.column_stack([center[0] + r * np.cos(ang), center[1] + r * np.sin(ang)])


def star_trajectory(t, center=STAR_CENTER, R_outer=STAR_RADIUS, duration=60.0):
    """Point on the closed star polyline, traversed once at constant speed."""
    v = star_vertices(center, R_outer)
    closed = np.vstack([v, v[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    u = (t % duration) / duration * cum[-1]
    i = min(int(np.searchsorted(cum, u, side="right")) - 1, len(seg) - 1)
    a = (u - cum[i]) / seg[i]
    return (1 - a) * closed[i] + a * closed[i + 1]


def rmse(trace, reference=None):
    """Root-mean-square Euclidean end-effector error over the trace grid."""
    tip = trace.tip if isinstance(trace, Trace) else np.asarray(trace, dtype=float)
    ref = trace.reference if reference is None else np.asarray(reference, dtype=float)
    err = tip - ref
    return float(np.sqrt(np.mean(np.sum(err**2, axis=-1))))


def error_ratio(trace_mpc, trace_baseline, reference=None):
    e_pd = rmse(trace_baseline, reference)
    if e_pd == 0:
        raise ZeroDivisionError("baseline RMSE is zero; the ratio is undefined")
    return rmse(trace_mpc, reference) / e_pd


def episode_plant(scenario, plant=None):
    plant = Plant() if plant is None else plant
    base = BasePose((plant.base.position[0], -scenario.base_depth), plant.base.heading)
    return replace(plant, base=base)


def run_episode(scenario, plant=None, gains=None, settings=None, plant_rtol=1e-8, plant_atol=1e-10):
    """Simulate one episode and return its trace.

    The plant is integrated with adaptive Dormand-Prince between control
    ticks; the controller runs once per tick.
    """
    t_start = time.perf_counter()
    plant = episode_plant(scenario, plant)
    gains = GainSet() if gains is None else gains
    settings = MpcSettings(dt=scenario.dt) if settings is None else replace(settings, dt=scenario.dt)
    n = plant.n
    m = plant.arrays
    alpha, beta, _, _, _ = gains.matrices(n)
    sea = scenario.sea()
    w = K.field_for(sea, m)
    ref = scenario.reference()
    rng = np.random.default_rng(scenario.noise_seed)
    N = scenario.n_ticks
    dt = scenario.dt
    full_mask = settings.mask(n)
    fail_mask = full_mask.copy()
    if scenario.failure is not None:
        seg, onset = scenario.failure
        if not 1 <= seg <= n:
            raise ValueError(f"failure segment {seg} out of range 1..{n}")
        fail_mask[seg - 1] = 0.0
    else:
        onset = np.inf

    if scenario.q0 is None:
        # start at rest with the tip on the first reference point
        q = inverse_kinematics(ref(0.0), plant.base, plant.geom, settings.q_min, settings.q_max)
    else:
        q = np.asarray(scenario.q0, dtype=float)
    y = np.concatenate([q, np.zeros(n)])
    q_bar = np.clip(q, settings.q_min, settings.q_max)
    ctrl = MpcController(plant, gains, settings) if scenario.controller == "mpc" else None
    failed = False

    rec = {k: np.full((N, n), np.nan) for k in ("q", "qd", "tau", "fe", "fe_forecast")}
    tips = np.zeros((N, n, 2))
    zeta = np.zeros(N)
    refs = np.zeros((N, 2))
    cost = np.full(N, np.nan)
    iters = np.full(N, np.nan)
    no_fc = K.empty_forecast(n)
    steps_scratch = np.empty(1)
    h = 0.0
    capped = 0

    for k in range(N):
        t = k * dt
        mask = fail_mask if t >= onset else full_mask
        if ctrl is not None and t >= onset and not failed:
            ctrl.settings = replace(settings, actuation_mask=tuple(bool(v) for v in fail_mask))
            ctrl.maps = None
            failed = True
        q, qd = y[:n], y[n:]
        refs[k] = ref(t)
        if ctrl is None:
            q_bar = kinematic_plan_step(refs[k], q_bar, gains, dt, plant, settings.q_min, settings.q_max)
        else:
            if ctrl.plan is None:
                ctrl.reset(q)
            x_ref = np.array([ref(t + (j + 1) * dt) for j in range(settings.horizon_K)])
            fc_true = disturbance_forecast(sea, ctrl.plan, t, q, qd, ctrl.settings, gains, plant,
                                           ctrl.predicted_states(q, qd))
            fc = corrupt_estimate(fc_true, scenario.snr_db, rng)
            q_bar, res = ctrl.solve(t, q, qd, x_ref, fc)
            rec["fe_forecast"][k] = fc[0]
            cost[k] = res.cost
            iters[k] = res.iterations
            capped += res.capped
        ff = K.feedforward(q_bar, m, mask)
        tau = K.applied_torque(y, q_bar, ff, alpha, beta, mask, n)
        _, _, _, _, fe = K.assemble(q, qd, t, m, w, True)
        rec["q"][k], rec["qd"][k], rec["tau"][k], rec["fe"][k] = q, qd, tau, fe
        tips[k] = K.segment_tips(q, m)
        zeta[k] = elevation(sea, plant.base.position[0], t)
        args = (q_bar, ff, alpha, beta, mask, m, w, no_fc, False)
        y, h, _, status = K.integrate(t, t + dt, y, h, plant_rtol, plant_atol, 1e-12, np.inf, 100000, args,
                                      steps_scratch)
        if status != K.OK or not np.all(np.isfinite(y)):
            raise EpisodeError(f"{scenario.label()}: plant integration failed at t={t:.2f} (status {status})")

    meta = {
        "label": scenario.label(),
        "scenario": _jsonable(asdict(scenario)),
        "runtime_s": time.perf_counter() - t_start,
        "capped_solves": int(capped),
        "sea_hs": sea.significant_height,
    }
    return Trace(np.arange(N) * dt, rec["q"], rec["qd"], tips, rec["tau"], rec["fe"],
                 rec["fe_forecast"], zeta, refs, cost, iters, meta)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_summary(path, summary):
    Path(path).write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True))


def read_summary(path):
    return json.loads(Path(path).read_text())
