import dataclasses
import json

import numpy as np
import pytest

from softwave import harness
from softwave.harness import (
    PLOT_CLASSES,
    ResultRow,
    SweepSpec,
    UsageError,
    build_objects,
    emit_plot_data,
    load_config,
    main,
    parse_failure,
    read_results,
    run_sweep,
    stable_seed,
    sweep_from_config,
)
from softwave.simulator import EpisodeError, Trace
from softwave.waves import read_spectrum, write_spectrum

SHORT = dict(duration=0.5)


def _content(rows):
    return [{k: v for k, v in dataclasses.asdict(r).items() if k != "runtime_s"} for r in rows]


def _same(a, b):
    for x, y in zip(_content(a), _content(b)):
        for k in x:
            if isinstance(x[k], float) and np.isnan(x[k]):
                assert np.isnan(y[k])
            else:
                assert x[k] == y[k], k


def test_single_cell(tmp_path):
    spec = SweepSpec(waves=("W1",), hs=(1.5,), poses=("P3",), out=str(tmp_path), **SHORT)
    rows = run_sweep(spec)
    assert len(rows) == 1 and rows[0].status == "ok"
    assert rows[0].ratio == pytest.approx(rows[0].rmse_mpc / rows[0].rmse_baseline)
    assert len(list((tmp_path / "traces").glob("*.csv"))) == 2
    assert len(list((tmp_path / "traces").glob("*.json"))) == 2
    assert (tmp_path / "results.csv").is_file() and (tmp_path / "results.json").is_file()


def test_repeat_and_jobs_independent(tmp_path):
    kw = dict(waves=("W1", "W3"), hs=(3.0,), poses=("P1",), **SHORT)
    a = run_sweep(SweepSpec(out=str(tmp_path / "a"), **kw))
    b = run_sweep(SweepSpec(out=str(tmp_path / "b"), **kw))
    c = run_sweep(SweepSpec(out=str(tmp_path / "c"), **kw), jobs=2)
    _same(a, b)
    _same(a, c)
    for f in sorted((tmp_path / "a" / "traces").glob("*.csv")):
        assert f.read_bytes() == (tmp_path / "c" / "traces" / f.name).read_bytes()


def test_full_grid_size():
    spec = SweepSpec(hs=(0.5, 1.0, 1.5, 2.0, 2.5, 3.0), poses=("P1", "P2", "P3", "P4", "P5", "P6"))
    assert len(spec.cells()) == 108
    assert len({harness.cell_id(c) for c in spec.cells()}) == 108


def test_seeds_stable_and_shared_across_controllers():
    assert stable_seed("wave", 0, "W1", 1.5) == stable_seed("wave", 0, "W1", 1.5)
    assert stable_seed("wave", 0, "W1", 1.5) != stable_seed("wave", 1, "W1", 1.5)
    spec = SweepSpec()
    cell = spec.cells()[0]
    a, b = spec.scenario(cell, "mpc"), spec.scenario(cell, "baseline")
    assert a.wave_seed == b.wave_seed and a.noise_seed == b.noise_seed


def test_spec_validation():
    with pytest.raises(UsageError):
        SweepSpec(poses=("P9",))
    with pytest.raises(UsageError):
        SweepSpec(waves=("W7",))
    with pytest.raises(UsageError):
        SweepSpec(controllers=("pid",))
    with pytest.raises(UsageError):
        SweepSpec(seeds=())


def test_results_round_trip(tmp_path):
    rows = [ResultRow("c1", "W1", 6.1, 1.5, "P1", "", 0, rmse_mpc=0.1, rmse_baseline=0.2),
            ResultRow("c2", "W2", 8.0, 3.0, "P3", "2@0", 0, status="failed", error="boom")]
    harness.write_results(tmp_path, rows)
    for name in ("results.csv", "results.json"):
        back = read_results(tmp_path / name)
        _same(rows, back)
        assert back[0].ratio == pytest.approx(0.5)


def test_plot_classes(tmp_path):
    rows = [ResultRow("c1", "W1", 6.1, 1.5, "P1", "", 0, rmse_mpc=0.1, rmse_baseline=0.2),
            ResultRow("c2", "W1", 6.1, 1.5, "P1", "2@0", 0, rmse_mpc=0.12, rmse_baseline=0.3)]
    p = emit_plot_data("spectra", None, tmp_path)
    assert p.read_text().splitlines()[0] == "wave,Tp,Hs,omega,S"
    assert emit_plot_data("ratio", rows, tmp_path).read_text().count("\n") == 3
    fail = emit_plot_data("failure", rows, tmp_path).read_text().splitlines()
    assert len(fail) == 2 and fail[1].endswith("0.12,0.1,0.2")
    with pytest.raises(UsageError):
        emit_plot_data("histogram", rows, tmp_path)
    assert set(PLOT_CLASSES) == {"spectra", "episode", "ratio", "failure", "star"}


def test_episode_and_star_plot_data(tmp_path):
    rows = run_sweep(SweepSpec(waves=("W1",), hs=(1.5,), poses=("star",), controllers=("mpc",),
                               out=str(tmp_path), **SHORT))
    assert rows[0].status == "ok" and np.isnan(rows[0].ratio)
    tr = Trace.from_csv(next((tmp_path / "traces").glob("*.csv")))
    tr.meta["label"] = "x"
    star = emit_plot_data("star", tr, tmp_path / "plots").read_text().splitlines()
    assert star[0] == "path,t,x,z" and len(star) == 1 + 2 * tr.t.size
    ep = emit_plot_data("episode", tr, tmp_path / "plots").read_text().splitlines()
    assert ep[0] == "t,variable,index,value"


def test_spectrum_file_round_trip(tmp_path):
    omega = np.linspace(0.3, 3.0, 40)
    S = np.exp(-((omega - 1.0) ** 2))
    write_spectrum(tmp_path / "s.csv", omega, S)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "omega,S"
    w, s = read_spectrum(tmp_path / "s.csv")
    assert np.array_equal(w, omega) and np.array_equal(s, S)


def test_config_and_overrides():
    cfg = load_config(text="""
[sweep]
waves = W1,W2
hs = 1.5
poses = P3
failures = none, 2@10
duration = 5
[gains]
alpha = 12.0
[mpc]
horizon_K = 10
""")
    plant, gains, settings = build_objects(cfg)
    assert gains.alpha == 12.0 and settings.horizon_K == 10 and plant.n == 3
    spec, jobs = sweep_from_config(cfg, {"hs": (3.0,), "jobs": 2})
    assert spec.waves == ("W1", "W2") and spec.hs == (3.0,) and jobs == 2
    assert spec.failures == (None, (2, 10.0))
    assert spec.duration == 5
    with pytest.raises(UsageError):
        load_config(text="[nonsense]\na = 1\n")
    with pytest.raises(UsageError):
        build_objects(load_config(text="[gains]\ngamma = 1\n"))
    with pytest.raises(UsageError):
        build_objects(load_config(text="[mpc]\nhorizon_K = 0\n"))


def test_parse_failure():
    assert parse_failure("none") is None
    assert parse_failure("2") == (2, 0.0)
    assert parse_failure("3@15") == (3, 15.0)
    with pytest.raises(UsageError):
        parse_failure("two")


def test_cli_success(tmp_path, capsys):
    code = main(["--wave", "W2", "--hs", "1.5", "--pose", "P6", "--duration", "0.3", "--seed", "3",
                 "--out", str(tmp_path), "--plot", "ratio,spectra"])
    assert code == 0
    assert (tmp_path / "plots" / "ratio.csv").is_file()
    assert (tmp_path / "plots" / "spectra.csv").is_file()
    rows = json.loads((tmp_path / "results.json").read_text())
    assert rows[0]["seed"] == 3 and rows[0]["status"] == "ok"


@pytest.mark.parametrize("argv", [
    ["--pose", "P9"],
    ["--failure", "5"],
    ["--jobs", "0"],
    ["--plot", "histogram"],
    ["--controller", "pid"],
    ["--sweep", "/nonexistent.ini"],
])
def test_cli_usage_errors(argv, tmp_path):
    with pytest.raises(SystemExit) if argv[0] == "--controller" else _noop():
        code = main(argv + ["--out", str(tmp_path), "--duration", "0.2"])
        assert code == 2


class _noop:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def test_cli_failed_episode(tmp_path, monkeypatch):
    def broken(scenario, *args, **kwargs):
        raise EpisodeError("integration failed")

    monkeypatch.setattr(harness, "run_episode", broken)
    code = main(["--wave", "W1", "--hs", "1.5", "--pose", "P1", "--duration", "0.2", "--out", str(tmp_path)])
    assert code == 1
    row = read_results(tmp_path / "results.csv")[0]
    assert row.status == "failed" and "integration failed" in row.error
