"""JONSWAP spectra of the three wave cases, plus an importable spectrum file.

    python scripts/write_spectra.py [--hs 3] [--out DIR]

Writes ``spectra.csv`` (plot data) and ``W<i>_Hs<h>.csv`` files with the
``omega,S`` header accepted by ``softwave --spectrum``.
"""

import argparse
from pathlib import Path

import numpy as np

from softwave.harness import emit_plot_data
from softwave.waves import WAVE_CASES, jonswap_spectrum, write_spectrum


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--hs", type=float, default=3.0)
    p.add_argument("--out", default="results/spectra")
    a = p.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    print(emit_plot_data("spectra", None, out, hs=a.hs))
    for name, Tp in WAVE_CASES.items():
        wp = 2 * np.pi / Tp
        omega = np.linspace(0.5 * wp, 3.0 * wp, 50)
        path = out / f"{name}_Hs{a.hs:g}.csv"
        write_spectrum(path, omega, jonswap_spectrum(omega, a.hs, Tp))
        print(path)


if __name__ == "__main__":
    main()
