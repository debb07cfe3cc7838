"""Scenario sweeps, result persistence and plot-data emission, plus the CLI.

A sweep is the cross product of wave cases, significant heights, poses,
failure variants and master seeds. Each cell runs the requested
controllers on the same wave realization and becomes one result row.
"""

import argparse
import ast
import configparser
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .control import GainSet, MpcSettings
from .dynamics import DynamicParams
from .hydro import HydroCoeffs
from .kinematics import BasePose, SegmentGeometry
from .model import Plant
from .simulator import POSES, Scenario, Trace, rmse, run_episode, write_summary
from .waves import G, WAVE_CASES, jonswap_spectrum

log = logging.getLogger(__name__)

PLOT_CLASSES = ("spectra", "episode", "ratio", "failure", "star")

RESULT_FIELDS = [
    "cell", "wave", "Tp", "Hs", "pose", "failure", "seed", "status", "rmse_mpc",
    "rmse_baseline", "ratio", "max_abs_fe", "runtime_s", "error",
]


class UsageError(ValueError):
    """Bad command line, configuration or plot request (exit code 2)."""


def stable_seed(*parts):
    """Seed in [0, 2**32) from a stable hash of ``parts``; never depends on run order."""
    h = hashlib.sha256(repr(tuple(parts)).encode()).digest()
    return int.from_bytes(h[:4], "little")


def _wave_period(wave):
    return WAVE_CASES[wave] if isinstance(wave, str) else float(wave)


@dataclass(frozen=True)
class SweepSpec:
    waves: tuple = ("W1", "W2", "W3")
    hs: tuple = (1.5, 3.0)
    poses: tuple = ("P1", "P3", "P6")
    controllers: tuple = ("mpc", "baseline")
    failures: tuple = (None,)  # entries are None or (segment, onset)
    seeds: tuple = (0,)
    out: str = "results"
    duration: float = 60.0
    snr_db: float = 20.0
    depth: float = 20.0
    spectrum_file: str = None
    write_traces: bool = True

    def __post_init__(self):
        for name in ("waves", "hs", "poses", "controllers", "failures", "seeds"):
            if len(getattr(self, name)) == 0:
                raise UsageError(f"sweep has no {name}")
        for c in self.controllers:
            if c not in ("mpc", "baseline"):
                raise UsageError(f"unknown controller {c!r}")
        for p in self.poses:
            if not (p == "star" or p in POSES):
                raise UsageError(f"unknown pose {p!r}")
        for w in self.waves:
            if isinstance(w, str) and w not in WAVE_CASES:
                raise UsageError(f"unknown wave case {w!r}")

    def cells(self):
        """Cell descriptors in a fixed, documented order."""
        out = []
        for seed in self.seeds:
            for wave in self.waves:
                for hs in self.hs:
                    for pose in self.poses:
                        for fail in self.failures:
                            out.append((wave, float(hs), pose, fail, int(seed)))
        return out

    def scenario(self, cell, controller):
        wave, hs, pose, fail, seed = cell
        return Scenario(
            wave=wave, Hs=hs, task=pose, controller=controller, failure=fail,
            duration=self.duration, snr_db=self.snr_db, depth=self.depth,
            spectrum_file=self.spectrum_file,
            # both controllers of a cell, and every pose, face the same sea
            wave_seed=stable_seed("wave", seed, str(wave), hs),
            noise_seed=stable_seed("noise", seed, str(wave), hs, pose, str(fail)),
        )


def cell_id(cell):
    wave, hs, pose, fail, seed = cell
    f = "full" if fail is None else f"fail{fail[0]}at{fail[1]:g}"
    return f"{wave}_Hs{hs:g}_{pose}_{f}_s{seed}"


@dataclass
class ResultRow:
    cell: str
    wave: str
    Tp: float
    Hs: float
    pose: str
    failure: str
    seed: int
    status: str = "ok"
    rmse_mpc: float = float("nan")
    rmse_baseline: float = float("nan")
    ratio: float = float("nan")
    max_abs_fe: float = float("nan")
    runtime_s: float = 0.0
    error: str = ""

    def __post_init__(self):
        if self.rmse_baseline > 0 and np.isfinite(self.rmse_mpc):
            self.ratio = self.rmse_mpc / self.rmse_baseline


@dataclass(frozen=True)
class _Job:
    scenario: Scenario
    plant: Plant
    gains: GainSet
    settings: MpcSettings
    trace_dir: str = None


def _run_job(job):
    """Run one episode; never raises so a sweep always completes."""
    t0 = time.perf_counter()
    sc = job.scenario
    try:
        tr = run_episode(sc, job.plant, job.gains, job.settings)
    except Exception as exc:  # recorded as a failed row
        log.error("%s failed: %s", sc.label(), exc)
        return {"label": sc.label(), "ok": False, "error": f"{type(exc).__name__}: {exc}",
                "runtime_s": time.perf_counter() - t0}
    summ = tr.summary()
    if job.trace_dir is not None:
        d = Path(job.trace_dir)
        tr.to_csv(d / f"{sc.label()}.csv")
        write_summary(d / f"{sc.label()}.json", summ)
    return {"label": sc.label(), "ok": True, "rmse": summ["rmse"], "max_abs_fe": summ["max_abs_fe"],
            "runtime_s": time.perf_counter() - t0}


def run_sweep(spec, plant=None, gains=None, settings=None, jobs=1):
    """Run every cell of ``spec`` and persist results and traces under ``spec.out``.

    Returns the list of ResultRow in cell order. Row content does not depend
    on ``jobs``: seeds come from stable hashes and rows are collected by cell.
    """
    plant = Plant() if plant is None else plant
    gains = GainSet() if gains is None else gains
    settings = MpcSettings() if settings is None else settings
    out = Path(spec.out)
    try:
        (out / "traces").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from exc
    trace_dir = str(out / "traces") if spec.write_traces else None

    cells = spec.cells()
    job_list = [_Job(spec.scenario(c, ctrl), plant, gains, settings, trace_dir)
                for c in cells for ctrl in spec.controllers]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_job, job_list))
    else:
        results = [_run_job(j) for j in job_list]

    rows = []
    it = iter(results)
    for c in cells:
        wave, hs, pose, fail, seed = c
        row = dict(cell=cell_id(c), wave=str(wave), Tp=_wave_period(wave), Hs=hs, pose=pose,
                   failure="" if fail is None else f"{fail[0]}@{fail[1]:g}", seed=seed)
        errors, runtime, fe = [], 0.0, []
        for ctrl in spec.controllers:
            r = next(it)
            runtime += r["runtime_s"]
            if r["ok"]:
                row[f"rmse_{ctrl}"] = r["rmse"]
                fe.append(r["max_abs_fe"])
            else:
                errors.append(f"{ctrl}: {r['error']}")
        rows.append(ResultRow(**row, status="failed" if errors else "ok",
                              max_abs_fe=max(fe) if fe else float("nan"), runtime_s=runtime,
                              error="; ".join(errors)))
    write_results(out, rows)
    return rows


def write_results(out, rows):
    out = Path(out)
    with (out / "results.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))
    (out / "results.json").write_text(json.dumps([asdict(r) for r in rows], indent=2))


def read_results(path):
    """Rows from a results.csv or results.json written by run_sweep."""
    path = Path(path)
    if path.suffix == ".json":
        raw = json.loads(path.read_text())
    else:
        with path.open() as fh:
            raw = list(csv.DictReader(fh))
    rows = []
    types = {f.name: f.type for f in fields(ResultRow)}
    for d in raw:
        conv = {}
        for k, v in d.items():
            if types[k] in (float, "float"):
                conv[k] = float(v)
            elif types[k] in (int, "int"):
                conv[k] = int(v)
            else:
                conv[k] = "" if v is None else str(v)
        ratio = conv.pop("ratio")
        row = ResultRow(**conv)
        row.ratio = ratio
        rows.append(row)
    return rows


# ---------------------------------------------------------------- plot data

def _write_long(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def emit_plot_data(kind, source, out, hs=3.0):
    """Write tidy long-format CSV for one figure class.

    ``source`` is a list of ResultRow for ``ratio``/``failure``, a Trace for
    ``episode``/``star`` and ignored for ``spectra`` (the three wave cases at
    significant height ``hs``). Returns the written path.
    """
    out = Path(out)
    if kind not in PLOT_CLASSES:
        raise UsageError(f"unknown figure class {kind!r}; choose from {', '.join(PLOT_CLASSES)}")
    if kind == "spectra":
        rows = []
        for name, Tp in WAVE_CASES.items():
            wp = 2 * np.pi / Tp
            omega = np.linspace(0.2 * wp, 4.0 * wp, 400)
            S = jonswap_spectrum(omega, hs, Tp, 3.3, G)
            rows += [(name, Tp, hs, w, s) for w, s in zip(omega, S)]
        return _write_long(out / "spectra.csv", ["wave", "Tp", "Hs", "omega", "S"], rows)
    if kind in ("ratio", "failure"):
        rows = list(source)
        if kind == "ratio":
            data = [(r.pose, r.Hs, r.Tp, r.wave, r.failure, r.ratio) for r in rows]
            return _write_long(out / "ratio.csv", ["pose", "Hs", "Tp", "wave", "failure", "ratio"], data)
        full = {(r.wave, r.Hs, r.pose, r.seed): r for r in rows if not r.failure}
        data = []
        for r in rows:
            if not r.failure:
                continue
            ref = full.get((r.wave, r.Hs, r.pose, r.seed))
            data.append((r.pose, r.Hs, r.Tp, r.wave, r.failure, r.rmse_mpc,
                         ref.rmse_mpc if ref else float("nan"),
                         ref.rmse_baseline if ref else float("nan")))
        return _write_long(out / "failure.csv",
                           ["pose", "Hs", "Tp", "wave", "failure", "rmse_mpc_failed",
                            "rmse_mpc_full", "rmse_baseline_full"], data)
    tr = source
    label = tr.meta.get("label", "episode")
    if kind == "star":
        data = [("reference", t, x, z) for t, (x, z) in zip(tr.t, tr.reference)]
        data += [("actual", t, x, z) for t, (x, z) in zip(tr.t, tr.tip)]
        return _write_long(out / f"star_{label}.csv", ["path", "t", "x", "z"], data)
    data = []
    for k, t in enumerate(tr.t):
        for i in range(tr.n):
            data.append((t, "tip_x", i + 1, tr.tips[k, i, 0]))
            data.append((t, "tip_z", i + 1, tr.tips[k, i, 1]))
            data.append((t, "tau", i + 1, tr.tau[k, i]))
            data.append((t, "fe", i + 1, tr.fe[k, i]))
        data.append((t, "zeta", 0, tr.zeta[k]))
    return _write_long(out / f"episode_{label}.csv", ["t", "variable", "index", "value"], data)


# ------------------------------------------------------------------- config

def _value(text):
    text = text.strip()
    if text.lower() in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _listing(v):
    if v is None:
        return (None,)
    if isinstance(v, (list, tuple)):
        return tuple(v)
    if isinstance(v, str) and "," in v:
        return tuple(_value(x) for x in v.split(","))
    return (v,)


def parse_failure(text):
    """``none``, ``2`` (segment 2 from t = 0) or ``2@15`` (onset at 15 s)."""
    if text is None or str(text).strip().lower() in ("none", "", "full"):
        return None
    seg, _, onset = str(text).partition("@")
    try:
        return (int(seg), float(onset) if onset else 0.0)
    except ValueError as exc:
        raise UsageError(f"bad failure spec {text!r}; expected SEG or SEG@ONSET") from exc


_SECTIONS = {
    "geometry": SegmentGeometry,
    "base": BasePose,
    "dynamics": DynamicParams,
    "hydro": HydroCoeffs,
    "gains": GainSet,
    "mpc": MpcSettings,
}


def load_config(path=None, text=None):
    """Read a sectioned key-value file into {section: {key: value}}."""
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys are dataclass field names, keep their case
    try:
        if path is not None:
            if not Path(path).is_file():
                raise UsageError(f"config file {path} not found")
            cp.read(path)
        if text is not None:
            cp.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config: {exc}") from exc
    known = set(_SECTIONS) | {"sweep"}
    cfg = {}
    for sec in cp.sections():
        if sec not in known:
            raise UsageError(f"unknown config section [{sec}]")
        cfg[sec] = {k: _value(v) for k, v in cp.items(sec)}
    return cfg


def build_objects(cfg):
    """Plant, gains and MPC settings from a config dict; unknown keys are errors."""
    objs = {}
    for sec, cls in _SECTIONS.items():
        kw = dict(cfg.get(sec, {}))
        names = {f.name for f in fields(cls)}
        bad = set(kw) - names
        if bad:
            raise UsageError(f"unknown keys in [{sec}]: {', '.join(sorted(bad))}")
        try:
            objs[sec] = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid [{sec}] settings: {exc}") from exc
    try:
        plant = Plant(objs["geometry"], objs["base"], objs["dynamics"], objs["hydro"])
        n = plant.n
        objs["gains"].matrices(n)
        objs["mpc"].mask(n)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return plant, objs["gains"], objs["mpc"]


def sweep_from_config(cfg, overrides):
    kw = dict(cfg.get("sweep", {}))
    kw.update({k: v for k, v in overrides.items() if v is not None})
    allowed = {f.name for f in fields(SweepSpec)} | {"jobs"}
    bad = set(kw) - allowed
    if bad:
        raise UsageError(f"unknown keys in [sweep]: {', '.join(sorted(bad))}")
    jobs = int(kw.pop("jobs", 1))
    for name in ("waves", "hs", "poses", "controllers", "seeds"):
        if name in kw:
            kw[name] = _listing(kw[name])
    if "failures" in kw:
        kw["failures"] = tuple(f if (f is None or isinstance(f, tuple)) else parse_failure(f)
                               for f in _listing(kw["failures"]))
    try:
        return SweepSpec(**kw), jobs
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------- CLI

def make_parser():
    p = argparse.ArgumentParser(
        prog="softwave",
        description="Run MPC / baseline episodes and sweeps for the underwater soft arm.",
    )
    p.add_argument("--sweep", metavar="FILE", help="sectioned config file ([sweep], [gains], ...)")
    p.add_argument("--wave", help="wave case(s), e.g. W3 or W1,W2 or a peak period in s")
    p.add_argument("--hs", help="significant wave height(s) in m, comma separated")
    p.add_argument("--pose", help="pose(s) P1..P6 or 'star', comma separated")
    p.add_argument("--controller", choices=["mpc", "baseline", "both"], help="controller(s) to run")
    p.add_argument("--failure", help="passive segment, SEG or SEG@ONSET; 'none' for full actuation")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--duration", type=float, help="episode length in s")
    p.add_argument("--spectrum", metavar="FILE", help="imported spectrum (omega,S) replacing --wave")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="episodes run in parallel")
    p.add_argument("--plot", default="", help=f"figure classes to emit: {','.join(PLOT_CLASSES)}")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args):
    o = {}
    if args.wave:
        o["waves"] = tuple(w if w in WAVE_CASES else float(w) for w in args.wave.split(","))
    if args.hs:
        o["hs"] = tuple(float(h) for h in args.hs.split(","))
    if args.pose:
        o["poses"] = tuple(args.pose.split(","))
    if args.controller:
        o["controllers"] = ("mpc", "baseline") if args.controller == "both" else (args.controller,)
    if args.failure:
        o["failures"] = tuple(parse_failure(f) for f in args.failure.split(","))
    if args.seed is not None:
        o["seeds"] = (args.seed,)
    if args.duration is not None:
        o["duration"] = args.duration
    if args.spectrum:
        o["spectrum_file"] = args.spectrum
    if args.out:
        o["out"] = args.out
    if args.jobs is not None:
        o["jobs"] = args.jobs
    return o


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.sweep) if args.sweep else {}
        plant, gains, settings = build_objects(cfg)
        spec, jobs = sweep_from_config(cfg, _overrides(args))
        if jobs < 1:
            raise UsageError("--jobs must be at least 1")
        for f in spec.failures:
            if f is not None and not 1 <= f[0] <= plant.n:
                raise UsageError(f"failure segment {f[0]} out of range 1..{plant.n}")
        plots = [c for c in args.plot.split(",") if c]
        for c in plots:
            if c not in PLOT_CLASSES:
                raise UsageError(f"unknown figure class {c!r}")
    except (UsageError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    rows = run_sweep(spec, plant, gains, settings, jobs)
    out = Path(spec.out)
    for r in rows:
        print(f"{r.cell:32s} {r.status:6s} mpc={r.rmse_mpc:.4f} base={r.rmse_baseline:.4f} "
              f"ratio={r.ratio:.3f} ({r.runtime_s:.1f} s){'  ' + r.error if r.error else ''}")
    plot_dir = out / "plots"
    for c in plots:
        if c == "spectra":
            emit_plot_data(c, None, plot_dir, hs=max(spec.hs))
        elif c in ("ratio", "failure"):
            emit_plot_data(c, rows, plot_dir)
        else:
            for tf in sorted((out / "traces").glob("*.csv")):
                if c == "star" and "_star_" not in tf.name:
                    continue
                tr = Trace.from_csv(tf)
                tr.meta["label"] = tf.stem
                emit_plot_data(c, tr, plot_dir)
    return 1 if any(r.status != "ok" for r in rows) else 0
