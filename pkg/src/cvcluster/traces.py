"""Synthetic homodyne waveforms, their ingestion, and delay-line fitting.

Binary trace layout (little-endian)::

    magic  b"CVTR"
    u32    version (1)
    f64    sample rate [Hz]
    u32    channel count
    u64    frame length [samples]
    u64    frame count
    f64[]  payload, frame by frame, channel-major within a frame
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FitError, FormatError, InvalidParameter
from .physics import FilterChain, WavePacket, mode_function

MAGIC = b"CVTR"
VERSION = 1
_HEADER = struct.Struct("<4sIdIQQ")
SPEED_OF_LIGHT = 299_792_458.0


@dataclass
class TraceFile:
    """``data[frame, channel, sample]`` at ``sample_rate`` Hz."""

    sample_rate: float
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3:
            raise InvalidParameter("trace data must be (frames, channels, samples)")
        if not self.sample_rate > 0:
            raise InvalidParameter("sample rate must be positive")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def frame_length(self) -> int:
        return self.data.shape[2]

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, VERSION, float(self.sample_rate), self.channels,
                            self.frame_length, self.frames)
        return head + self.data.astype("<f8", copy=False).tobytes(order="C")

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TraceFile":
        if len(blob) < _HEADER.size:
            raise FormatError("file shorter than the trace header")
        magic, version, rate, channels, length, frames = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported trace version {version}")
        if not rate > 0 or not math.isfinite(rate):
            raise FormatError(f"invalid sample rate {rate}")
        expected = channels * length * frames * 8
        payload = blob[_HEADER.size:]
        if len(payload) != expected:
            raise FormatError(f"payload has {len(payload)} bytes, header implies {expected}")
        data = np.frombuffer(payload, dtype="<f8").reshape(frames, channels, length)
        return cls(rate, data.astype(float))

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path) -> "TraceFile":
        return cls.from_bytes(Path(path).read_bytes())

    def write_csv(self, path) -> None:
        """CSV mirror: ``time_s, ch0..`` with frames laid end to end."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s"] + [f"ch{c}" for c in range(self.channels)])
            n = 0
            for frame in self.data:
                for s in range(self.frame_length):
                    w.writerow([repr(n / self.sample_rate)] + [repr(float(v)) for v in frame[:, s]])
                    n += 1

    @classmethod
    def read_csv(cls, path, frame_length: int | None = None) -> "TraceFile":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:1] != ["time_s"]:
            raise FormatError("CSV trace must start with a 'time_s' header")
        try:
            table = np.array([[float(v) for v in row] for row in rows[1:]])
        except ValueError as exc:
            raise FormatError(f"non-numeric CSV entry: {exc}") from None
        if table.shape[0] < 2:
            raise FormatError("CSV trace needs at least two samples")
        rate = 1.0 / (table[1, 0] - table[0, 0])
        values = table[:, 1:]
        length = frame_length or values.shape[0]
        if values.shape[0] % length:
            raise FormatError("sample count is not a multiple of the frame length")
        data = values.reshape(-1, length, values.shape[1]).transpose(0, 2, 1)
        return cls(rate, data)


# -- mode-function windows ------------------------------------------------------------

def window_weights(wp: WavePacket) -> np.ndarray:
    """Discrete mode-function weights for one window, unit norm on the sample grid.

    Samples sit at the centres of the sampling intervals so consecutive windows
    are disjoint.
    """
    n = wp.samples_per_mode
    t = (np.arange(n) + 0.5) / wp.sample_rate
    w = mode_function(wp, 0, t)
    norm = np.linalg.norm(w)
    if norm == 0:
        raise InvalidParameter("mode function vanishes on the sample grid")
    return w / norm


def apply_filter(signal, sample_rate: float, chain: FilterChain) -> np.ndarray:
    """Frequency-domain (circular) application of ``chain`` along the last axis."""
    signal = np.asarray(signal, dtype=float)
    n = signal.shape[-1]
    omega = 2 * math.pi * np.fft.rfftfreq(n, d=1.0 / sample_rate)
    spec = np.fft.rfft(signal, axis=-1) * chain.response(omega)
    return np.fft.irfft(spec, n=n, axis=-1)


def synthesize_traces(samples, wp: WavePacket, rng=None, noise_floor: float = 0.0,
                      chain: FilterChain | None = None) -> TraceFile:
    """Waveforms ``sum_k q_k f_k(t)`` from ``samples[frame, channel, k]``.

    ``noise_floor`` adds white noise of that standard deviation per sample.
    """
    q = np.asarray(samples, dtype=float)
    if q.ndim == 2:
        q = q[:, None, :]
    if q.ndim != 3:
        raise InvalidParameter("samples must be (frames, channels, modes)")
    w = window_weights(wp)
    frames, channels, modes = q.shape
    data = (q[..., None] * w).reshape(frames, channels, modes * w.size)
    if noise_floor:
        if rng is None:
            raise InvalidParameter("noise requires an rng")
        data = data + rng.normal(0.0, noise_floor, size=data.shape)
    if chain is not None:
        data = apply_filter(data, wp.sample_rate, chain)
    return TraceFile(wp.sample_rate, data)


def ingest_traces(trace: TraceFile, wp: WavePacket) -> np.ndarray:
    """Quadratures ``q[frame, channel, k]``: inner products with each window."""
    if abs(trace.sample_rate - wp.sample_rate) > 1e-9 * wp.sample_rate:
        raise InvalidParameter("trace sample rate differs from the wave-packet grid")
    w = window_weights(wp)
    if trace.frame_length % w.size:
        raise InvalidParameter(
            f"frame length {trace.frame_length} is not a multiple of {w.size} samples"
        )
    blocks = trace.data.reshape(trace.frames, trace.channels, -1, w.size)
    return blocks @ w


def shot_noise_trace(frames: int, channels: int, modes: int, wp: WavePacket, rng,
                     chain: FilterChain | None = None) -> TraceFile:
    """White vacuum noise whose window quadratures have variance 1/2."""
    n = modes * wp.samples_per_mode
    data = rng.normal(0.0, math.sqrt(0.5), size=(frames, channels, n))
    if chain is not None:
        data = apply_filter(data, wp.sample_rate, chain)
    return TraceFile(wp.sample_rate, data)


# -- delay fitting ----------------------------------------------------------------------

@dataclass
class DelayFit:
    delay_s: float
    stderr_s: float
    intercept_rad: float

    @property
    def length_m(self) -> float:
        return SPEED_OF_LIGHT * self.delay_s


def fit_delay(freq_hz, phase_rad, unwrap: bool = False) -> DelayFit:
    """Delay from the least-squares slope of phase versus frequency (slope / 2 pi)."""
    f = np.asarray(freq_hz, dtype=float)
    ph = np.asarray(phase_rad, dtype=float)
    if f.shape != ph.shape or f.ndim != 1:
        raise InvalidParameter("frequency and phase tables must be 1-D and equally long")
    if f.size < 2:
        raise FitError("need at least two frequency points")
    d = np.diff(f)
    if not (np.all(d > 0) or np.all(d < 0)):
        if np.all(d == 0):
            raise FitError("all frequencies coincide; slope is undetermined")
        raise InvalidParameter("frequencies must be monotone")
    if unwrap:
        ph = np.unwrap(ph)
    design = np.column_stack([f, np.ones_like(f)])
    coef, _res, rank, _sv = np.linalg.lstsq(design, ph, rcond=None)
    if rank < 2:
        raise FitError("rank-deficient phase fit")
    slope, intercept = coef
    dof = f.size - 2
    if dof > 0:
        resid = ph - design @ coef
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(design.T @ design)
        se = math.sqrt(cov[0, 0]) / (2 * math.pi)
    else:
        se = 0.0
    return DelayFit(float(slope) / (2 * math.pi), se, float(intercept))


def synthetic_phase_table(delay_s: float, freq_hz, noise_rad: float = 0.0, rng=None,
                          offset_rad: float = 0.0):
    f = np.asarray(freq_hz, dtype=float)
    phase = 2 * math.pi * f * delay_s + offset_rad
    if noise_rad:
        if rng is None:
            raise InvalidParameter("noise requires an rng")
        phase = phase + rng.normal(0.0, noise_rad, size=f.shape)
    return f, phase


def write_phase_table(path, freq_hz, phase_rad) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", "phase_rad"])
        for f, p in zip(freq_hz, phase_rad):
            w.writerow([repr(float(f)), repr(float(p))])


def read_phase_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["freq_hz", "phase_rad"]:
        raise FormatError("phase table must have header 'freq_hz,phase_rad'")
    try:
        table = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise FormatError(f"non-numeric phase table entry: {exc}") from None
    if table.ndim != 2 or table.shape[1] != 2:
        raise FormatError("phase table must have exactly two columns")
    return table[:, 0], table[:, 1]
