"""Irregular sea states from linear wave theory.

A sea state is a finite sum of monochromatic components. The surface
elevation uses ``A/2`` as the cosine amplitude of each component; the
subsurface particle velocities follow the usual cosh/sinh depth profiles.
"""

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels as K

G = 9.81

# peak periods of the three measured spectra (W1, W2, W3)
WAVE_CASES = {"W1": 6.1, "W2": 8.0, "W3": 10.0}
HS_GRID = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


class DispersionError(RuntimeError):
    pass


def dispersion_solve(omega, d, g=G, tol=1e-12, max_iter=100):
    """Wave number k with omega**2 = g k tanh(k d).

    Newton's method from the deep-water guess ``omega**2 / g``, falling back
    to bisection whenever a Newton step leaves the current bracket.
    """
    if not (omega > 0 and d > 0):
        raise ValueError("omega and depth must be positive")
    w2 = omega * omega

    def f(k):
        return g * k * np.tanh(k * d) - w2

    # f is increasing in k; f(w2/g) <= 0 and f at the shallow-water root estimate + deep guess >= 0
    lo = 0.0
    hi = max(w2 / g, omega / np.sqrt(g * d)) * 2.0 + 1e-12
    while f(hi) < 0:
        hi *= 2.0
    k = w2 / g
    scale = max(1.0, w2)
    for _ in range(max_iter):
        fk = f(k)
        if abs(fk) <= tol * scale:
            return k
        if fk < 0:
            lo = max(lo, k)
        else:
            hi = min(hi, k)
        kd = k * d
        dfk = g * np.tanh(kd) + g * kd / np.cosh(kd) ** 2 if kd < 350 else g
        k_new = k - fk / dfk
        if not (lo < k_new < hi):
            k_new = 0.5 * (lo + hi)
        k = k_new
    if abs(f(k)) <= 1e-10:
        return k
    raise DispersionError(f"dispersion solve did not converge for omega={omega}, d={d}")


@dataclass(frozen=True)
class WaveComponent:
    A: float  # height parameter; the elevation amplitude is A / 2
    T: float
    phi: float
    omega: float
    k: float

    @property
    def wavelength(self):
        return 2 * np.pi / self.k

    @property
    def amplitude(self):
        return 0.5 * self.A


@dataclass(frozen=True)
class SeaState:
    components: tuple
    d: float = 20.0
    Hs: float = 0.0
    Tp: float = 0.0
    seed: int = 0
    gamma: float = 3.3
    spectrum: tuple = field(default=(), repr=False, compare=False)  # (omega, S) pairs used for synthesis

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("water depth must be positive")

    @cached_property
    def _arr(self):
        c = self.components
        return {
            "A": np.array([x.A for x in c], dtype=float),
            "T": np.array([x.T for x in c], dtype=float),
            "phi": np.array([x.phi for x in c], dtype=float),
            "omega": np.array([x.omega for x in c], dtype=float),
            "k": np.array([x.k for x in c], dtype=float),
        }

    def arrays(self):
        """Component data in the layout used by the compiled kernels."""
        a = self._arr
        k = a["k"]
        return K.WaveArrays(
            np.ascontiguousarray(0.5 * a["A"]),
            np.ascontiguousarray(a["omega"]),
            np.ascontiguousarray(k),
            np.ascontiguousarray(a["phi"]),
            float(self.d),
            np.ascontiguousarray(1.0 / -np.expm1(-2.0 * k * self.d)),
        )

    @property
    def m0(self):
        """Variance of the elevation, sum of (A/2)^2 / 2."""
        return float(np.sum((0.5 * self._arr["A"]) ** 2) / 2.0)

    @property
    def significant_height(self):
        return 4.0 * np.sqrt(self.m0)

    def dispersion_residuals(self, g=G):
        a = self._arr
        return np.abs(a["omega"] ** 2 - g * a["k"] * np.tanh(a["k"] * self.d))

    def scaled(self, factor):
        comps = tuple(
            WaveComponent(c.A * factor, c.T, c.phi, c.omega, c.k) for c in self.components
        )
        return SeaState(comps, self.d, self.Hs * factor, self.Tp, self.seed, self.gamma, self.spectrum)


def calm_sea(d=20.0):
    return SeaState((), d)


def jonswap_spectrum(omega, Hs, Tp, gamma=3.3, g=G):
    """JONSWAP variance density S(omega) in m^2 s, before any rescaling."""
    omega = np.asarray(omega, dtype=float)
    wp = 2 * np.pi / Tp
    sigma = np.where(omega <= wp, 0.07, 0.09)
    r = np.exp(-((omega - wp) ** 2) / (2 * sigma**2 * wp**2))
    # Pierson-Moskowitz shape written in terms of Hs and Tp
    pm = 5.0 / 16.0 * Hs**2 * wp**4 * omega**-5.0 * np.exp(-1.25 * (wp / omega) ** 4)
    return pm * gamma**r


def _components_from_spectrum(omega, S, d, rng, g=G):
    omega = np.asarray(omega, dtype=float)
    S = np.asarray(S, dtype=float)
    if omega.size == 1:
        dw = np.array([1.0])
    else:
        dw = np.gradient(omega)
    A = 2.0 * np.sqrt(2.0 * S * dw)
    phi = rng.uniform(0.0, 2 * np.pi, omega.size)
    comps = []
    for Ai, wi, ph in zip(A, omega, phi):
        comps.append(WaveComponent(float(Ai), float(2 * np.pi / wi), float(ph), float(wi),
                                   float(dispersion_solve(wi, d, g))))
    return tuple(comps)


def synthesize_jonswap(Hs, Tp, gamma=3.3, N=50, d=20.0, seed=0, band=(0.5, 3.0), g=G):
    """Random-phase sea state on a uniform frequency grid.

    The discrete spectrum is rescaled so that its zeroth moment equals
    (Hs / 4)^2, i.e. the synthesized record has exactly the requested
    significant height.
    """
    if not (Hs > 0 and Tp > 0):
        raise ValueError("Hs and Tp must be positive")
    if N < 8:
        raise ValueError("need at least 8 components")
    wp = 2 * np.pi / Tp
    omega = np.linspace(band[0] * wp, band[1] * wp, N)
    S = jonswap_spectrum(omega, Hs, Tp, gamma, g)
    dw = np.gradient(omega)
    S *= (Hs / 4.0) ** 2 / np.sum(S * dw)
    rng = np.random.default_rng(seed)
    comps = _components_from_spectrum(omega, S, d, rng, g)
    spec = tuple(zip(omega.tolist(), S.tolist()))
    return SeaState(comps, float(d), float(Hs), float(Tp), seed, float(gamma), spec)


def read_spectrum(path):
    """Two-column ``omega,S`` text file; returns (omega, S)."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().replace(" ", "")
        if header != "omega,S":
            raise ValueError(f"{path}: expected header 'omega,S', got {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns")
    return data[:, 0], data[:, 1]


def write_spectrum(path, omega, S):
    data = np.column_stack([omega, S])
    np.savetxt(path, data, delimiter=",", header="omega,S", comments="", fmt="%.17g")


def sea_from_spectrum(omega, S, d=20.0, seed=0, g=G):
    """Sea state replaying an external spectrum with the synthesis amplitude rule."""
    omega = np.asarray(omega, dtype=float)
    S = np.asarray(S, dtype=float)
    if np.any(omega <= 0) or np.any(S < 0) or np.any(np.diff(omega) <= 0):
        raise ValueError("omega must be positive and increasing, S non-negative")
    rng = np.random.default_rng(seed)
    comps = _components_from_spectrum(omega, S, d, rng, g)
    hs = 4.0 * np.sqrt(sum(c.amplitude**2 for c in comps) / 2.0)
    tp = 2 * np.pi / omega[np.argmax(S)]
    return SeaState(comps, float(d), float(hs), float(tp), seed, 0.0,
                    tuple(zip(omega.tolist(), S.tolist())))


def load_sea(path, d=20.0, seed=0):
    return sea_from_spectrum(*read_spectrum(path), d=d, seed=seed)


def _phase(sea, x, t):
    a = sea._arr
    return a["k"] * x - a["omega"] * t + a["phi"]


def elevation(sea, x, t):
    """Free-surface elevation at ``x``; ``t`` may be an array of times."""
    if np.ndim(t) > 0:
        t = np.asarray(t, dtype=float)
        if not sea.components:
            return np.zeros_like(t)
        return np.cos(_phase(sea, x, t[:, None])) @ (0.5 * sea._arr["A"])
    if not sea.components:
        return 0.0
    return float(np.sum(0.5 * sea._arr["A"] * np.cos(_phase(sea, x, t))))


def _depth_profiles(sea, z):
    # cosh(k(z+d))/sinh(kd) and sinh(k(z+d))/sinh(kd), without overflow for large kd
    k = sea._arr["k"]
    d = sea.d
    e1 = np.exp(k * z)
    e2 = np.exp(-k * (z + 2 * d))
    den = -np.expm1(-2 * k * d)
    return (e1 + e2) / den, (e1 - e2) / den


def _check_depth(sea, z):
    if z > 0 or z < -sea.d:
        raise ValueError(f"z={z} outside the water column [-{sea.d}, 0]")


def particle_velocity(sea, x, z, t):
    """Horizontal and vertical particle velocity (u, w) at depth z <= 0."""
    _check_depth(sea, z)
    if not sea.components:
        return 0.0, 0.0
    a = sea._arr
    ch, sh = _depth_profiles(sea, z)
    amp = np.pi * a["A"] / a["T"]
    ph = _phase(sea, x, t)
    u = np.sum(amp * ch * np.cos(ph))
    w = 0.0 if z == -sea.d else np.sum(amp * sh * np.sin(ph))
    return float(u), float(w)


def particle_acceleration(sea, x, z, t):
    """Local time derivative of the particle velocity."""
    _check_depth(sea, z)
    if not sea.components:
        return 0.0, 0.0
    a = sea._arr
    ch, sh = _depth_profiles(sea, z)
    amp = np.pi * a["A"] / a["T"] * a["omega"]
    ph = _phase(sea, x, t)
    du = np.sum(amp * ch * np.sin(ph))
    dw = 0.0 if z == -sea.d else -np.sum(amp * sh * np.cos(ph))
    return float(du), float(dw)
