"""Actuation failure: one segment passive, compared with the fully actuated arm.

    python scripts/run_failure.py [--segment 2] [--onset 0] [--jobs N] [--out DIR]
"""

import argparse
import sys

from softwave.harness import SweepSpec, emit_plot_data, run_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--segment", type=int, default=2)
    p.add_argument("--onset", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--out", default="results/failure")
    a = p.parse_args()
    spec = SweepSpec(poses=("P3", "P6"), failures=(None, (a.segment, a.onset)), duration=a.duration,
                     out=a.out)
    rows = run_sweep(spec, jobs=a.jobs)
    emit_plot_data("failure", rows, f"{a.out}/plots")
    full = {(r.wave, r.Hs, r.pose): r for r in rows if not r.failure}
    for r in rows:
        if r.failure:
            ref = full[(r.wave, r.Hs, r.pose)]
            print(f"{r.cell:28s} e_mpc {r.rmse_mpc:.4f} (full {ref.rmse_mpc:.4f}, "
                  f"{r.rmse_mpc / ref.rmse_mpc - 1:+.1%})  ratio vs baseline {r.ratio:.3f}")
    return 1 if any(r.status != "ok" for r in rows) else 0


if __name__ == "__main__":
    sys.exit(main())
