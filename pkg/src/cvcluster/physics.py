"""Frequency-domain imperfection models.

OPO squeezing spectra, the wave-packet mode function and its spectrum, nullifier
variances under detection loss and long-delay mismatch, and homodyne power
spectra.  Units: hbar = 1 (shot noise 1/2), angular frequencies in rad/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import AboveThreshold, Degenerate, InvalidParameter, NumericalAccuracy

TWO_PI = 2.0 * math.pi
SQRT2 = math.sqrt(2.0)

# reported experimental nullifier levels (dB), used only for the bracketing check
EXPERIMENT_DB = (-4.82, -5.34, -4.81, -4.93)


@dataclass(frozen=True)
class OpoParams:
    T: float = 0.14
    L: float = 0.0025
    xi: float = 0.65
    omega0: float = TWO_PI * 80e6

    def __post_init__(self):
        if not 0.0 < self.T <= 1.0:
            raise InvalidParameter(f"T must lie in (0, 1], got {self.T}")
        if not 0.0 <= self.L < 1.0:
            raise InvalidParameter(f"L must lie in [0, 1), got {self.L}")
        if self.xi >= 1.0:
            raise AboveThreshold(f"pump amplitude xi={self.xi} is at or above threshold")
        if self.xi < 0.0:
            raise InvalidParameter(f"xi must be >= 0, got {self.xi}")
        if not self.omega0 > 0.0:
            raise InvalidParameter("omega0 must be positive")


def squeezing_spectrum(p: OpoParams, omega, branch: int):
    """``S_+`` (``branch=+1``, anti-squeezed) or ``S_-`` (``branch=-1``) at ``omega``."""
    if branch not in (1, -1):
        raise InvalidParameter("branch must be +1 or -1")
    if p.xi >= 1.0:
        raise AboveThreshold(f"pump amplitude xi={p.xi} is at or above threshold")
    w = np.asarray(omega, dtype=float) / p.omega0
    esc = p.T / (p.T + p.L)
    return 0.5 * (1.0 + branch * esc * 4.0 * p.xi / ((1.0 - branch * p.xi) ** 2 + w ** 2))


# -- wave packet ----------------------------------------------------------------------

@dataclass(frozen=True)
class WavePacket:
    """Temporal mode shape.

    ``offset`` is the small time shift inside the polynomial and Gaussian factor
    (half a sample period at 1 GS/s by default).
    """

    dt: float = 40e-9
    gamma: float = TWO_PI * 10.5e6
    tc: float = 0.0
    sample_rate: float = 1e9
    offset: float = 0.5e-9

    def __post_init__(self):
        if not self.dt > 0.0 or not math.isfinite(self.dt):
            raise InvalidParameter(f"wave-packet width must be positive, got {self.dt}")
        if not self.sample_rate > 0.0:
            raise InvalidParameter("sample rate must be positive")

    def t0(self, k: int) -> float:
        return self.dt / 2.0 + k * self.dt

    @property
    def samples_per_mode(self) -> int:
        n = self.dt * self.sample_rate
        if abs(n - round(n)) > 1e-6:
            raise InvalidParameter("wave-packet width is not a whole number of samples")
        return int(round(n))


def _shape(wp: WavePacket, u):
    """Unnormalised profile as a function of ``u = t - t0``."""
    u = np.asarray(u, dtype=float)
    s = u + wp.offset
    val = (s + wp.tc) * np.exp(-(wp.gamma ** 2) * s ** 2)
    return np.where(np.abs(u) <= wp.dt / 2.0, val, 0.0)


@lru_cache(maxsize=32)
def _norm(wp: WavePacket) -> float:
    half = wp.dt / 2.0
    val, _err = integrate.quad(lambda u: float(_shape(wp, u)) ** 2, -half, half,
                               epsabs=0.0, epsrel=1e-13, limit=200)
    if val <= 0.0:
        raise InvalidParameter("mode function vanishes identically")
    return math.sqrt(val)


def mode_function(wp: WavePacket, k: int, t):
    """Normalised mode function of temporal index ``k`` (``k = 0`` starts at t = 0)."""
    return _shape(wp, np.asarray(t, dtype=float) - wp.t0(k)) / _norm(wp)


@dataclass(frozen=True)
class SpectrumGrid:
    """FFT grid for ``|f~(omega)|^2``: ``points`` samples at step ``dt_fraction * dt``."""

    points: int = 2 ** 18
    dt_fraction: float = 1.0 / 4000.0


@dataclass
class ModeSpectrum:
    omega: np.ndarray
    weight: np.ndarray
    domega: float

    @property
    def parseval(self) -> float:
        return float(np.sum(self.weight) * self.domega)

    def integrate(self, values) -> float:
        return float(np.sum(self.weight * values) * self.domega)


def mode_spectrum(wp: WavePacket, grid: SpectrumGrid = SpectrumGrid()) -> ModeSpectrum:
    """``|f~(omega)|^2`` on an FFT grid, normalised so that it integrates to 1 over omega."""
    step = wp.dt * grid.dt_fraction
    n = grid.points
    if n * step < 2 * wp.dt:
        raise InvalidParameter("spectrum grid does not cover the wave-packet support")
    # midpoint samples: the profile jumps at the support edges
    t = (np.arange(n) - n // 2 + 0.5) * step
    f = mode_function(wp, 0, t + wp.t0(0))
    amp = np.fft.fftshift(np.fft.fft(np.fft.ifftshift(f))) * step / math.sqrt(TWO_PI)
    omega = np.fft.fftshift(np.fft.fftfreq(n, d=step)) * TWO_PI
    return ModeSpectrum(omega=omega, weight=np.abs(amp) ** 2, domega=TWO_PI / (n * step))


@lru_cache(maxsize=8)
def _cached_spectrum(wp: WavePacket, grid: SpectrumGrid) -> ModeSpectrum:
    return mode_spectrum(wp, grid)


def _checked_spectrum(wp, grid, tol=1e-4) -> ModeSpectrum:
    spec = _cached_spectrum(wp, grid)
    drift = abs(spec.parseval - 1.0)
    if drift > tol:
        raise NumericalAccuracy(f"Parseval drift {drift:.3g} exceeds {tol:g}; refine the grid")
    # remove the residual discretisation drift so the vacuum term stays exact
    return ModeSpectrum(spec.omega, spec.weight / spec.parseval, spec.domega)


# -- filters and correlation -------------------------------------------------------------

@dataclass(frozen=True)
class FilterChain:
    """Cascaded first-order high-pass and low-pass sections (simplified electronics)."""

    highpass_hz: float | None = 4e6
    highpass_order: int = 5
    lowpass_hz: float | None = 100e6
    lowpass_order: int = 1

    def response(self, omega):
        omega = np.asarray(omega, dtype=float)
        h = np.ones_like(omega, dtype=complex)
        if self.highpass_hz:
            s = 1j * omega / (TWO_PI * self.highpass_hz)
            h = h * (s / (1.0 + s)) ** self.highpass_order
        if self.lowpass_hz:
            s = 1j * omega / (TWO_PI * self.lowpass_hz)
            h = h / (1.0 + s) ** self.lowpass_order
        return h


def correlation_coefficient(samples, m: int) -> float:
    """``C(m)`` from quadrature samples ``samples[frame, k]`` of consecutive windows.

    Averages the lag-``m`` covariance over all window pairs and divides by the
    mean lag-0 variance.
    """
    q = np.asarray(samples, dtype=float)
    if q.ndim != 2 or q.shape[1] < 2:
        raise InvalidParameter("need a (frames, windows) array with at least two windows")
    m = abs(int(m))
    if m >= q.shape[1]:
        raise InvalidParameter(f"lag {m} exceeds the number of windows")
    q = q - q.mean(axis=0)
    denom = float(np.mean(q * q))
    if denom == 0.0:
        raise Degenerate("zero variance in the reference window")
    if m == 0:
        return 1.0
    num = float(np.mean(q[:, :-m] * q[:, m:]))
    return num / denom


def analytic_correlation(wp: WavePacket, m: int, chain: FilterChain | None = None,
                         grid: SpectrumGrid = SpectrumGrid()) -> float:
    """``C(m)`` for white shot noise passed through ``chain`` (``None`` = no filter)."""
    spec = _checked_spectrum(wp, grid)
    gain = np.ones_like(spec.omega) if chain is None else np.abs(chain.response(spec.omega)) ** 2
    denom = spec.integrate(gain)
    if denom == 0.0:
        raise Degenerate("filter removes the whole mode")
    num = spec.integrate(gain * np.cos(spec.omega * m * wp.dt))
    return num / denom


# -- nullifier models --------------------------------------------------------------------

KIND_SOURCES = {
    # kind: (squeezed OPO, partner OPO of the same pair, other pair in (+, -) order)
    ("x", 1): ("B", "A", ("C", "D")),
    ("p", 1): ("A", "B", ("D", "C")),
    ("x", 2): ("D", "C", ("A", "B")),
    ("p", 2): ("C", "D", ("B", "A")),
}


def _opo_map(opos) -> dict:
    if isinstance(opos, OpoParams):
        return {rail: opos for rail in "ABCD"}
    if isinstance(opos, dict):
        return dict(opos)
    opos = list(opos)
    if len(opos) != 4:
        raise InvalidParameter("expected four OPO parameter sets (A, B, C, D)")
    return dict(zip("ABCD", opos))


def nullifier_variance_model(opos, wp: WavePacket, eta: float, dtau2: float, kind,
                             grid: SpectrumGrid = SpectrumGrid()) -> float:
    """Nullifier variance (hbar = 1) with detection efficiency ``eta`` and mismatch ``dtau2``.

    ``opos`` is one OpoParams shared by all sources, or four of them (A-D).
    """
    if not 0.0 <= eta <= 1.0:
        raise InvalidParameter(f"eta must lie in [0, 1], got {eta}")
    kind = tuple(kind)
    if kind not in KIND_SOURCES:
        raise InvalidParameter(f"unknown nullifier kind {kind!r}")
    omap = _opo_map(opos)
    spec = _checked_spectrum(wp, grid)
    w = spec.omega
    phase = np.exp(1j * w * dtau2)
    small = np.abs((1.0 - phase) / 2.0) ** 2
    large = np.abs((3.0 + phase) / 2.0) ** 2
    sq, partner, (o_plus, o_minus) = KIND_SOURCES[kind]
    inner = (small * squeezing_spectrum(omap[partner], w, +1)
             + large * squeezing_spectrum(omap[sq], w, -1)
             + small * (squeezing_spectrum(omap[o_plus], w, +1)
                        + squeezing_spectrum(omap[o_minus], w, -1)))
    return eta * spec.integrate(inner) + 4.0 * (1.0 - eta) * 0.5


def nullifier_variance_simple(opo: OpoParams, wp: WavePacket, eta: float,
                              grid: SpectrumGrid = SpectrumGrid()) -> float:
    """Zero-mismatch form: ``4 * integral |f~|^2 [eta S_- + (1 - eta)/2]``."""
    spec = _checked_spectrum(wp, grid)
    return 4.0 * spec.integrate(eta * squeezing_spectrum(opo, spec.omega, -1) + 0.5 * (1.0 - eta))


def to_db(var: float) -> float:
    return 10.0 * math.log10(var / 2.0)


def effective_squeezing_r(opo: OpoParams, wp: WavePacket, eta: float,
                          grid: SpectrumGrid = SpectrumGrid()) -> float:
    """Single-mode squeezing parameter whose ideal nullifier ``2 exp(-2r)`` matches the model."""
    spec = _checked_spectrum(wp, grid)
    val = spec.integrate(2.0 * eta * squeezing_spectrum(opo, spec.omega, -1) + (1.0 - eta))
    return -0.5 * math.log(val)


def effective_squeezing_db(opo: OpoParams, wp: WavePacket, eta: float,
                           grid: SpectrumGrid = SpectrumGrid()) -> float:
    return 10.0 * math.log10(math.exp(-2.0 * effective_squeezing_r(opo, wp, eta, grid)))


@dataclass
class BracketCheck:
    lower_db: float
    upper_db: float
    tolerance_db: float
    inside: list = field(default_factory=list)
    within_tolerance: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.within_tolerance)


def bracketing_check(measured_db, model_a_db: float, model_b_db: float,
                     tolerance_db: float = 0.2) -> BracketCheck:
    """Do ``measured_db`` values fall between two model predictions (strictly / with tolerance)?"""
    lo, hi = sorted((model_a_db, model_b_db))
    inside = [lo <= v <= hi for v in measured_db]
    loose = [lo - tolerance_db <= v <= hi + tolerance_db for v in measured_db]
    return BracketCheck(lo, hi, tolerance_db, inside, loose)


# -- homodyne power spectra ---------------------------------------------------------------

_DETECTORS = {
    # detector: (own pair, sign of the cosine term on the first source, delay index)
    "A": (("A", "B"), -1.0, 1),
    "B": (("A", "B"), +1.0, 1),
    "C": (("C", "D"), -1.0, 2),
    "D": (("C", "D"), +1.0, 2),
}


def power_spectrum(detector: str, quadrature: str, opos, eta: float, tau1: float,
                   tau2: float, omega):
    """Homodyne noise power at ``omega`` for one detector and quadrature (shot noise 1/2)."""
    if detector not in _DETECTORS:
        raise InvalidParameter(f"unknown detector {detector!r}")
    if quadrature not in ("x", "p"):
        raise InvalidParameter(f"quadrature must be 'x' or 'p', got {quadrature!r}")
    omap = _opo_map(opos)
    (first, second), sign, which = _DETECTORS[detector]
    others = ("C", "D") if first == "A" else ("A", "B")
    tau = tau1 if which == 1 else tau2
    omega = np.asarray(omega, dtype=float)
    s = 1 if quadrature == "x" else -1
    c = np.cos(omega * tau) / (2.0 * SQRT2)
    return (
        (3.0 / 8.0 + sign * c) * eta * squeezing_spectrum(omap[first], omega, s)
        + (3.0 / 8.0 - sign * c) * eta * squeezing_spectrum(omap[second], omega, -s)
        + eta / 8.0 * (squeezing_spectrum(omap[others[0]], omega, s)
                       + squeezing_spectrum(omap[others[1]], omega, -s))
        + 0.5 * (1.0 - eta)
    )


def fringe_period(freq, curve, reference=None) -> float:
    """Period (in units of ``freq``) of the cosine fringes in ``curve``.

    The smooth background is removed by subtracting ``reference`` (e.g. the
    partner detector, whose fringes are in antiphase) or else the mean; the
    period is twice the average spacing of the interpolated zero crossings.
    """
    freq = np.asarray(freq, dtype=float)
    y = np.asarray(curve, dtype=float)
    y = y - (np.asarray(reference, dtype=float) if reference is not None else y.mean())
    sgn = np.signbit(y)
    idx = np.nonzero(sgn[1:] != sgn[:-1])[0]
    if idx.size < 2:
        raise Degenerate("fewer than two zero crossings; widen the frequency span")
    x0, x1 = freq[idx], freq[idx + 1]
    y0, y1 = y[idx], y[idx + 1]
    zeros = x0 - y0 * (x1 - x0) / (y1 - y0)
    return 2.0 * (zeros[-1] - zeros[0]) / (zeros.size - 1)
