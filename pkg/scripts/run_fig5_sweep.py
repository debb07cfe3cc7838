"""Set-point sweep: MPC vs baseline error ratio per wave case, height and pose.

    python scripts/run_fig5_sweep.py [--full] [--jobs N] [--out DIR]

``--full`` runs every pose P1-P6 at every height 0.5-3 m (108 cells);
the default is the 18-cell desk-scale grid.
"""

import argparse
import sys

import numpy as np

from softwave.harness import SweepSpec, emit_plot_data, run_sweep
from softwave.waves import HS_GRID


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--full", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--out", default="results/fig5")
    a = p.parse_args()
    hs = HS_GRID if a.full else (1.5, 3.0)
    poses = ("P1", "P2", "P3", "P4", "P5", "P6") if a.full else ("P1", "P3", "P6")
    rows = run_sweep(SweepSpec(hs=hs, poses=poses, duration=a.duration, out=a.out), jobs=a.jobs)
    emit_plot_data("ratio", rows, f"{a.out}/plots")
    for r in rows:
        print(f"{r.cell:28s} e_mpc {r.rmse_mpc:.4f}  e_pd {r.rmse_baseline:.4f}  ratio {r.ratio:.3f}")
    for h in hs:
        red = np.mean([1 - r.ratio for r in rows if r.Hs == h])
        print(f"mean reduction at Hs {h:g} m: {red:.1%}")
    return 1 if any(r.status != "ok" for r in rows) else 0


if __name__ == "__main__":
    sys.exit(main())
