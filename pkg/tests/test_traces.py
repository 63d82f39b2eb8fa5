import math

import numpy as np
import pytest

from cvcluster.errors import FitError, FormatError, InvalidParameter
from cvcluster.physics import FilterChain, WavePacket, correlation_coefficient
from cvcluster.traces import (
    TraceFile, fit_delay, ingest_traces, read_phase_table, shot_noise_trace, synthesize_traces,
    synthetic_phase_table, window_weights, write_phase_table,
)

WP = WavePacket()


def test_window_weights_unit_norm():
    w = window_weights(WP)
    assert w.size == 40
    assert np.linalg.norm(w) == pytest.approx(1.0)


def test_synth_ingest_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    q = rng.normal(size=(7, 4, 12))
    tr = synthesize_traces(q, WP)
    path = tmp_path / "t.cvtr"
    tr.write(path)
    back = ingest_traces(TraceFile.read(path), WP)
    assert np.max(np.abs(back - q)) < 1e-9


def test_csv_mirror(tmp_path):
    rng = np.random.default_rng(4)
    q = rng.normal(size=(2, 3, 5))
    tr = synthesize_traces(q, WP)
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    back = TraceFile.read_csv(path, frame_length=tr.frame_length)
    assert back.data.shape == tr.data.shape
    assert np.array_equal(back.data, tr.data)
    assert np.max(np.abs(ingest_traces(back, WP) - q)) < 1e-9


def test_bad_binary_inputs():
    good = synthesize_traces(np.zeros((1, 1, 2)), WP).to_bytes()
    with pytest.raises(FormatError):
        TraceFile.from_bytes(b"CV")
    with pytest.raises(FormatError):
        TraceFile.from_bytes(b"XXXX" + good[4:])
    with pytest.raises(FormatError):
        TraceFile.from_bytes(good[:-8])
    bad_version = good[:4] + (7).to_bytes(4, "little") + good[8:]
    with pytest.raises(FormatError):
        TraceFile.from_bytes(bad_version)


def test_bad_csv(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,ch0\n0,1\n")
    with pytest.raises(FormatError):
        TraceFile.read_csv(path)
    path.write_text("time_s,ch0\n0,1\n1e-9,oops\n")
    with pytest.raises(FormatError):
        TraceFile.read_csv(path)


def test_ingest_rejects_partial_window():
    tr = TraceFile(1e9, np.zeros((1, 1, 50)))
    with pytest.raises(InvalidParameter):
        ingest_traces(tr, WP)


def test_shot_noise_windows_are_vacuum():
    rng = np.random.default_rng(8)
    q = ingest_traces(shot_noise_trace(4000, 1, 8, WP, rng), WP)[:, 0, :]
    assert np.var(q) == pytest.approx(0.5, rel=0.03)
    assert abs(correlation_coefficient(q, 1)) < 0.02


def test_filtered_noise_correlates_neighbours():
    rng = np.random.default_rng(9)
    q = ingest_traces(shot_noise_trace(3000, 1, 16, WP, rng, chain=FilterChain()), WP)[:, 0, 2:-2]
    c1 = correlation_coefficient(q, 1)
    assert 0.01 < abs(c1) < 0.3


@pytest.mark.parametrize("delay", [39.6e-9, 199.8e-9])
def test_fit_delay_recovers(delay):
    f = np.linspace(1e6, 20e6, 96)
    _, phase = synthetic_phase_table(delay, f, offset_rad=0.4)
    fit = fit_delay(f, np.angle(np.exp(1j * phase)), unwrap=True)
    assert fit.delay_s == pytest.approx(delay, rel=1e-9)


def test_delay_ratio():
    f = np.linspace(1e6, 20e6, 96)
    short = fit_delay(f, synthetic_phase_table(39.6e-9, f)[1]).delay_s
    long = fit_delay(f, synthetic_phase_table(199.8e-9, f)[1]).delay_s
    assert f"{5 * short / long:.4g}" == "0.991"
    assert 5 * short / long == pytest.approx(0.99099, abs=5e-5)


def test_fit_with_noise_reports_stderr():
    rng = np.random.default_rng(1)
    f = np.linspace(1e6, 20e6, 200)
    _, ph = synthetic_phase_table(40e-9, f, noise_rad=0.01, rng=rng)
    fit = fit_delay(f, ph)
    assert 0 < fit.stderr_s < 1e-10
    assert abs(fit.delay_s - 40e-9) < 5 * fit.stderr_s
    assert fit.length_m == pytest.approx(299_792_458.0 * fit.delay_s)


def test_fit_errors():
    with pytest.raises(FitError):
        fit_delay([1e6], [0.0])
    with pytest.raises(FitError):
        fit_delay([1e6, 1e6, 1e6], [0.0, 1.0, 2.0])
    with pytest.raises(InvalidParameter):
        fit_delay([1e6, 3e6, 2e6], [0.0, 1.0, 2.0])


def test_phase_table_io(tmp_path):
    f = np.linspace(1e6, 2e6, 5)
    ph = 2 * math.pi * f * 1e-8
    path = tmp_path / "phase.csv"
    write_phase_table(path, f, ph)
    f2, ph2 = read_phase_table(path)
    assert np.array_equal(f, f2) and np.array_equal(ph, ph2)
    path.write_text("freq,phase\n1,2\n")
    with pytest.raises(FormatError):
        read_phase_table(path)
