import json
import math

import numpy as np
import pytest

from cvcluster import gaussian as g
from cvcluster.errors import (
    CompileFailure, InvalidParameter, LedgerError, ScheduleError, SingularGate,
)
from cvcluster.mbqc import (
    LN_SQRT2, DisplacementLedger, MacronodeStep, MeasurementSchedule, added_noise, bridge_gadget,
    compile_one_mode, cx_gate, execute_schedule, expand_schedule, expanded_symplectic,
    gadget_gate, local2, one_mode_schedule, one_mode_step, qnd_gain, resolve_feedforward, rot,
    schedule_noise, schedule_symplectic, sq, squeezer_gadget, teleporter_angles,
    teleporter_gadget, teleporter_gate, two_mode_step,
)


def random_target(rng):
    return rot(rng.uniform(0, math.pi)) @ sq(rng.normal(0, 0.8)) @ rot(rng.uniform(0, math.pi))


def qnd_schedule():
    # theta_- = pi/4 on the coupling pair gives gain 1/sqrt2; C/D form an identity teleporter
    step = MacronodeStep(0, 3 * math.pi / 4, math.pi / 4, math.pi / 4, -math.pi / 4, "two_mode", 0)
    return MeasurementSchedule(2, [step])


def test_teleporter_gadget_matches_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(50):
        t1, t2 = rng.uniform(0, math.pi, 2)
        if abs(math.sin(t1 - t2)) < 0.05:
            continue
        gate, gain = gadget_gate(teleporter_gadget(0, t1, t2))
        assert np.allclose(gate, teleporter_gate(t1, t2), atol=1e-10)
        assert g.is_symplectic(gate, 1e-9)
        assert gain.shape == (2, 2)


def test_teleporter_angles_invert():
    rng = np.random.default_rng(1)
    for _ in range(50):
        t1, t2 = rng.uniform(-1.5, 1.5, 2)
        if abs(math.sin(t1 - t2)) < 0.05 or math.tan((t1 - t2) / 2) <= 0:
            continue
        a1, a2 = teleporter_angles(teleporter_gate(t1, t2))
        assert np.allclose(teleporter_gate(a1, a2), teleporter_gate(t1, t2), atol=1e-9)


def test_squeezer_gadgets():
    for branch, sign in (("+", 1), ("-", -1)):
        gate, _ = gadget_gate(squeezer_gadget(0, branch))
        assert np.allclose(gate, sq(sign * LN_SQRT2))


def test_two_mode_expansion_matches_closed_form():
    sched = qnd_schedule()
    assert qnd_gain(3 * math.pi / 4, math.pi / 4) == pytest.approx(1 / math.sqrt(2))
    expected = two_mode_step(3 * math.pi / 4, math.pi / 4) @ local2(np.eye(2), np.eye(2))
    assert np.allclose(expanded_symplectic(sched), expected, atol=1e-12)
    assert np.allclose(schedule_symplectic(sched), expected, atol=1e-12)
    s = sq(-LN_SQRT2)
    assert np.allclose(two_mode_step(0.9, 0.2), local2(s, s) @ cx_gate(qnd_gain(0.9, 0.2)))


@pytest.mark.parametrize("minus", [0.3, 0.5, 1.2, -0.4])
def test_two_mode_expansion_over_gains(minus):
    a, b = math.pi / 2 + minus, math.pi / 2 - minus
    sched = MeasurementSchedule(2, [MacronodeStep(0, a, b, 0.9, 0.1, "two_mode", 0)])
    assert np.allclose(expanded_symplectic(sched), schedule_symplectic(sched), atol=1e-12)


def test_bridge_is_symplectic():
    gate, _ = gadget_gate(bridge_gadget(0, 1, 0.9, 0.2))
    assert g.is_symplectic(gate, 1e-9)


def test_singular_angles():
    with pytest.raises(SingularGate):
        teleporter_gate(0.3, 0.3)
    with pytest.raises(SingularGate):
        teleporter_gate(0.3, 0.3 + math.pi)


def test_compile_random_targets():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        t = random_target(rng)
        prog = compile_one_mode(t)
        worst = max(worst, float(np.max(np.abs(prog.matrix() - t))))
        assert [br for _a, _b, br in prog.steps] == ["+", "-"]
    assert worst <= 1e-9


def test_compile_rejects_non_symplectic():
    with pytest.raises(InvalidParameter):
        compile_one_mode(np.diag([2.0, 2.0]))


def test_compile_failure_reports_residual():
    with pytest.raises(CompileFailure) as info:
        compile_one_mode(sq(0.8) @ rot(1.1), tol=0.0)
    assert info.value.residual is not None


def test_schedule_json_round_trip(tmp_path):
    sched = one_mode_schedule(compile_one_mode(rot(math.pi / 2)))
    path = tmp_path / "s.json"
    sched.write(path)
    back = MeasurementSchedule.read(path)
    assert np.allclose(schedule_symplectic(back), rot(math.pi / 2), atol=1e-9)
    assert np.allclose(expanded_symplectic(back), schedule_symplectic(back), atol=1e-12)


@pytest.mark.parametrize("doc", [
    "not json",
    json.dumps({"steps": 3}),
    json.dumps({"wires": "two", "steps": []}),
    json.dumps([{"k": 0, "A": 0, "B": 0, "C": 0.3}]),
    json.dumps([{"k": 0, "A": 0, "B": 0, "C": 0.3, "D": 0.3}]),
    json.dumps([{"k": 0, "A": 0, "B": 1.0, "C": 0.3, "D": -0.3}]),
    json.dumps([{"k": 0, "A": 0.4, "B": 0.4, "C": 0.3, "D": -0.3}]),
    json.dumps([{"k": 0, "A": 0, "B": 0, "C": 0.3, "D": -0.3, "tag": "teleport"}]),
    json.dumps([{"k": 0, "A": 0, "B": 0, "C": 0.3, "D": -0.3},
                {"k": 0, "A": 0, "B": 0, "C": 0.3, "D": -0.3}]),
    json.dumps({"wires": 2, "steps": [{"k": 0, "A": 1, "B": 1, "C": 0.3, "D": -0.3,
                                       "tag": "two_mode"}]}),
    json.dumps({"wires": 2, "steps": [{"k": 0, "A": 1.0, "B": 0.2, "C": 0.3, "D": -0.3,
                                       "tag": "two_mode"}]}),
])
def test_schedule_validation_errors(doc):
    with pytest.raises(ScheduleError):
        MeasurementSchedule.from_json(doc)


def test_added_noise_per_gadget():
    tele = added_noise(teleporter_gadget(0, 0.7, -0.4))
    assert np.allclose(tele, np.eye(2), atol=1e-12)
    assert np.allclose(added_noise(squeezer_gadget(0, "+")), np.diag([0.25, 0.0]))
    assert np.allclose(added_noise(squeezer_gadget(0, "-")), np.diag([0.0, 0.25]))


@pytest.mark.parametrize("name", ["identity", "qnd"])
def test_simulated_excess_matches_prediction(name):
    sched = qnd_schedule() if name == "qnd" else one_mode_schedule(compile_one_mode(np.eye(2)))
    n = sched.n_wires
    r = 2.0
    res = execute_schedule(sched, r, rng=np.random.default_rng(3))
    cov_in = np.eye(2 * n) / 2
    diff = res.averaged.cov - res.target_covariance(cov_in)
    assert np.allclose(diff, schedule_noise(sched) * math.exp(-2 * r), atol=1e-12)


def test_excess_slope_is_minus_two():
    sched = one_mode_schedule(compile_one_mode(sq(0.8) @ rot(1.1)))
    rs = np.array([1.0, 2.0, 3.0, 4.0])
    ex = [execute_schedule(sched, r, rng=np.random.default_rng(0)).excess(np.eye(2) / 2) for r in rs]
    slope = np.polyfit(rs, np.log(ex), 1)[0]
    assert slope == pytest.approx(-2.0, abs=1e-6)


def test_identity_mean_independent_of_outcomes():
    sched = one_mode_schedule(compile_one_mode(np.eye(2)))
    inp = [g.coherent_state("a", 1.0, -0.5)]
    means = []
    for forced in ([0.0] * 6, [3.0, -2.0, 1.0, 5.0, -4.0, 2.0]):
        res = execute_schedule(sched, 8.0, inputs=inp, forced_outcomes=forced)
        means.append(res.corrected.mean)
    assert np.allclose(means[0], [1.0, -0.5], atol=1e-4)
    assert np.allclose(means[1], [1.0, -0.5], atol=1e-4)
    # the raw conditional mean does depend on the outcomes
    raw = execute_schedule(sched, 8.0, inputs=inp, forced_outcomes=[3.0, -2.0, 1.0, 5.0, -4.0, 2.0])
    assert not np.allclose(raw.state.mean, [1.0, -0.5], atol=1e-2)


def test_ledger_errors():
    led = DisplacementLedger(1)
    led.record(np.eye(2), np.eye(2), ["m0", "m1"], [0.1, None])
    with pytest.raises(LedgerError):
        led.displacement()
    ok = DisplacementLedger(1)
    ok.record(np.eye(2), np.eye(2), ["m0", "m1"], [0.1, 0.2])
    with pytest.raises(LedgerError):
        resolve_feedforward(ok, {3: (0.0, 1.0)})
    out = resolve_feedforward(ok, {0: (math.pi / 2, 1.0)})
    assert out[0] == pytest.approx(0.8)


def test_forced_outcomes_must_cover_schedule():
    sched = one_mode_schedule(compile_one_mode(np.eye(2)))
    with pytest.raises(ScheduleError):
        execute_schedule(sched, 1.0, forced_outcomes=[0.0, 0.0])


def test_property_ledger_outcome_covariance():
    """Spread of corrected means over 10^3 runs equals the averaged minus conditional covariance."""
    rng = np.random.default_rng(7)
    sched = one_mode_schedule(compile_one_mode(random_target(rng)))
    r = 1.0
    means = []
    for _ in range(1000):
        res = execute_schedule(sched, r, rng=rng)
        means.append(res.corrected.mean)
    sample = np.cov(np.array(means).T)
    expected = res.averaged.cov - res.corrected.cov
    scale = np.sqrt((np.outer(np.diag(expected), np.diag(expected)) + expected ** 2) / 1000)
    assert np.all(np.abs(sample - expected) <= 5 * scale)


def test_expansion_gadget_counts():
    sched = qnd_schedule()
    names = [gad.name.split("[")[0] for gad in expand_schedule(sched)]
    assert names == ["teleporter", "squeezer-", "bridge", "squeezer-"]
    assert one_mode_step(0.4, -0.3, "+").shape == (2, 2)


def test_closed_form_special_cases():
    assert np.allclose(teleporter_gate(math.pi / 4, -math.pi / 4), np.eye(2))
    assert np.allclose(teleporter_gate(math.pi / 2, 0.0), rot(math.pi / 2))
    assert np.allclose(one_mode_step(math.pi / 4, -math.pi / 4, "+"), sq(LN_SQRT2))


def test_one_mode_step_on_coherent_input():
    sched = MeasurementSchedule(1, [MacronodeStep(0, math.pi / 2, math.pi / 2, 0.9, 0.1)])
    target = one_mode_step(0.9, 0.1, "+")
    inp = g.coherent_state("a", 0.7, 0.2)
    res = execute_schedule(sched, 3.0, inputs=[inp], rng=np.random.default_rng(4))
    assert np.max(np.abs(res.averaged.cov - target @ inp.cov @ target.T)) < 1e-3


def test_forced_outcomes_leave_covariance_unchanged():
    sched = qnd_schedule()
    n_out = sum(len(gad.measure) for gad in expand_schedule(sched))
    rng = np.random.default_rng(6)
    a = execute_schedule(sched, 1.5, forced_outcomes=np.zeros(n_out))
    b = execute_schedule(sched, 1.5, forced_outcomes=rng.normal(0, 3, n_out))
    assert np.max(np.abs(a.state.cov - b.state.cov)) < 1e-10
    assert not np.allclose(a.state.mean, b.state.mean)
    # zero outcomes need zero correction
    assert np.allclose(a.ledger.displacement(), 0.0)


def test_universality_witness():
    for target in (rot(0.7), sq(0.5)):
        sched = one_mode_schedule(compile_one_mode(target))
        assert np.allclose(expanded_symplectic(sched), target, atol=1e-9)
    # the two-mode step equals local squeezers times a QND coupler with the compiled gain
    s = sq(-LN_SQRT2)
    ideal = local2(s, s) @ cx_gate(1 / math.sqrt(2))
    assert np.allclose(expanded_symplectic(qnd_schedule()), ideal, atol=1e-12)


def test_corrected_output_uncorrelated_with_outcomes():
    """10^5 draws of a teleporter's inputs: corrected outputs versus each raw outcome."""
    from cvcluster.mbqc import _readout, feedforward_map

    gad = teleporter_gadget(0, 0.8, -0.3)
    labels, idx, meas, _outm = _readout(gad)
    n = len(labels)
    r = 8.0  # the residual correlation scales as exp(-r)
    var = np.full(2 * n, 0.5)
    for lab, quad in gad.ancillas:
        i = idx[lab]
        var[i], var[i + n] = (0.5 * math.exp(-2 * r), 0.5 * math.exp(2 * r)) if quad == "x" else (
            0.5 * math.exp(2 * r), 0.5 * math.exp(-2 * r))
    u = np.random.default_rng(8).normal(size=(100_000, 2 * n)) * np.sqrt(var)
    m = u @ meas.T
    out = u @ feedforward_map(gad).T
    limit = 3 / math.sqrt(u.shape[0])
    for i in range(out.shape[1]):
        for j in range(m.shape[1]):
            assert abs(np.corrcoef(out[:, i], m[:, j])[0, 1]) < limit


def test_fourier_replay_at_r3():
    sched = one_mode_schedule(compile_one_mode(rot(math.pi / 2)))
    res = execute_schedule(sched, 3.0, rng=np.random.default_rng(5))
    assert res.excess(np.eye(2) / 2) < 1e-2
