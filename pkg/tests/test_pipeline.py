import math

import numpy as np
import pytest

from cvcluster import gaussian as g
from cvcluster.errors import InvalidParameter, ResourceLimit
from cvcluster.pipeline import (
    KINDS, DiscardSink, ModeId, NullifierSink, PipelineConfig, TDMPipeline, emitted_modes,
    nullifier_coeffs, run_batch_oracle, sample_frames, stream_state,
)


def exact_nullifier(state, k, N, kind):
    spec = nullifier_coeffs(k, N, kind)
    return g.quadrature_variance(state, spec.coefficients(state))


def test_mode_order():
    modes = sorted([ModeId("B", 1), ModeId("A", 2), ModeId("D", 1), ModeId("A", 1)])
    assert modes == [ModeId("A", 1), ModeId("B", 1), ModeId("D", 1), ModeId("A", 2)]
    with pytest.raises(InvalidParameter):
        ModeId("E", 0)


def test_config_validation():
    with pytest.raises(InvalidParameter):
        PipelineConfig(N=1)
    with pytest.raises(InvalidParameter):
        PipelineConfig(eta=1.2)
    cfg = PipelineConfig(eta={("A", "delay"): 0.9, "detection": 0.8})
    assert cfg.efficiency("A", "delay") == 0.9
    assert cfg.efficiency("B", "delay") == 1.0
    assert cfg.efficiency("C", "detection") == 0.8


@pytest.mark.parametrize("N", [2, 3, 5])
def test_streaming_matches_batch(N):
    for K in (3, 17, 64):
        cfg = PipelineConfig(N=N, r={"A": 0.6, "B": 0.9, "C": 0.7, "D": 1.1},
                             eta={"source": 0.95, "delay": 0.9, "detection": 0.85})
        stream = stream_state(cfg, K)
        batch = run_batch_oracle(cfg, K).marginal(stream.modes)
        assert np.max(np.abs(stream.cov - batch.cov)) < 1e-9


def test_emitted_modes_complete():
    st = stream_state(PipelineConfig(N=3), 8)
    assert set(st.modes) == set(emitted_modes(8))


@pytest.mark.parametrize("r", [0.3, 1.0])
def test_ideal_nullifier_law(r):
    N, K = 5, 40
    st = stream_state(PipelineConfig(N=N, r=r, eta=1.0), K)
    for k in range(N, K - N):
        for kind in KINDS:
            assert exact_nullifier(st, k, N, kind) == pytest.approx(2 * math.exp(-2 * r), abs=1e-9)


def test_square_stage_nullifier():
    r = 0.8
    st = run_batch_oracle(PipelineConfig(N=3, r=r, eta=1.0), 4, stage="square")
    vec = g.coefficient_vector(st, [(ModeId("A", 1), "p", 1.0), (ModeId("B", 1), "p", 1 / math.sqrt(2)),
                                    (ModeId("C", 1), "p", 1 / math.sqrt(2))])
    assert g.quadrature_variance(st, vec) == pytest.approx(math.exp(-2 * r))


def test_minimal_helix_boundary():
    # K=3, N=2: nullifiers at k=0 touch the vacuum-filled boundary but stay defined
    st = stream_state(PipelineConfig(N=2, r=1.0, eta=1.0), 3)
    for kind in KINDS:
        v = exact_nullifier(st, 0, 2, kind)
        assert 2 * math.exp(-2.0) - 1e-12 <= v < 2.0


def test_loss_model_matches_admixture():
    r, eta = 0.7, 0.75
    st = stream_state(PipelineConfig(N=5, r=r, eta=eta), 30)
    expected = eta * 2 * math.exp(-2 * r) + (1 - eta) * 2
    for kind in KINDS:
        assert exact_nullifier(st, 12, 5, kind) == pytest.approx(expected, rel=1e-12)


def test_nullifier_sink_rows_and_bound():
    cfg = PipelineConfig(N=3, r=0.5, eta=1.0)
    sink = NullifierSink(3)
    pipe = TDMPipeline(cfg, sink).run(30)
    interior = [row for row in sink.rows if not row.boundary]
    assert interior and all(row.variance == pytest.approx(2 * math.exp(-1.0)) for row in interior)
    assert pipe.max_live <= cfg.window_bound


def test_k_max_limit():
    pipe = TDMPipeline(PipelineConfig(K_max=4), DiscardSink())
    with pytest.raises(ResourceLimit):
        pipe.run(5)


def test_batch_limit():
    with pytest.raises(ResourceLimit):
        run_batch_oracle(PipelineConfig(), 200)


def test_sampling_is_seeded():
    cfg = PipelineConfig(N=3, r=0.5, seed=9)
    a = sample_frames(cfg, 10, 50, "x")
    b = sample_frames(cfg, 10, 50, "x")
    assert np.array_equal(a.values, b.values)
    c = sample_frames(cfg, 10, 50, "x", seed=10)
    assert not np.array_equal(a.values, c.values)


def test_sampled_variance_close_to_exact():
    cfg = PipelineConfig(N=3, r=0.5, eta=1.0, seed=1)
    st = stream_state(cfg, 12)
    table = sample_frames(cfg, 12, 20000, "p", state=st)
    spec = nullifier_coeffs(4, 3, ("p", 1))
    var = np.var(table.combine(spec.terms), ddof=1)
    exact = exact_nullifier(st, 4, 3, ("p", 1))
    assert abs(var / exact - 1) < 5 * math.sqrt(2 / 20000)


def helix_edges(state, N, K, tol=1e-9):
    """Interior off-diagonal graph weights grouped by temporal separation."""
    z = g.graph_from_state(state)
    weights = z.U  # this frame carries the edge weights in the imaginary part of Z
    out = {}
    modes = state.modes
    for i, a in enumerate(modes):
        for j in range(i + 1, len(modes)):
            b = modes[j]
            if min(a.temporal, b.temporal) < N or max(a.temporal, b.temporal) >= K - N:
                continue
            if abs(weights[i, j]) > tol:
                out.setdefault(abs(a.temporal - b.temporal), []).append(abs(weights[i, j]))
    return z, out


@pytest.mark.parametrize("N", [3, 5])
def test_helix_graph(N):
    K, r = 6 * N, 0.9
    st = run_batch_oracle(PipelineConfig(N=N, r=r, eta=1.0), K)
    z, edges = helix_edges(st, N, K)
    assert np.max(np.abs(z.V)) < 1e-9
    assert set(edges) == {1, N}
    mags = np.concatenate([np.array(v) for v in edges.values()])
    assert mags.max() / mags.min() == pytest.approx(1.0, abs=1e-6)
    assert mags[0] == pytest.approx(math.sinh(2 * r) / (2 * math.sqrt(2)), rel=1e-9)
