"""Measurement-based Gaussian gates on finite-squeezing resources.

Every gate is a *gadget*: logical wire modes meet squeezed ancillas on 50:50
beam splitters and some ports are measured by homodyne detection.  In the limit
of infinite squeezing a gadget maps the wires by a fixed symplectic ``G`` plus
a displacement linear in the outcomes, ``o = G u + K m``.  ``gadget_gate``
derives ``(G, K)`` from the circuit description, and ``simulate_gadget`` runs
the same circuit on a :class:`GaussianState` at finite ``r``.

Quadrature ordering for multi-wire matrices is ``(x_1..x_n, p_1..p_n)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize

from . import gaussian as g
from .errors import CompileFailure, InvalidParameter, LedgerError, ScheduleError, SingularGate

SQRT2 = math.sqrt(2.0)
LN_SQRT2 = 0.5 * math.log(2.0)
_SING_TOL = 1e-9


def rot(theta: float) -> np.ndarray:
    return g.rotation(theta).matrix


def sq(r: float) -> np.ndarray:
    return g.squeezer(r).matrix


# -- gate algebra --------------------------------------------------------------------

def _angle_split(theta1: float, theta2: float):
    plus = 0.5 * (theta1 + theta2)
    minus = 0.5 * (theta1 - theta2)
    s, c = math.sin(minus), math.cos(minus)
    if abs(s) < _SING_TOL or abs(c) < _SING_TOL:
        raise SingularGate(
            f"angles {theta1:.6g}, {theta2:.6g} coincide modulo pi (infinite squeezing)"
        )
    return plus, s / c


def teleporter_gate(theta1: float, theta2: float) -> np.ndarray:
    """``R(t+) diag(1/t, t) R(t+)`` with ``t = tan t-``.

    For ``t < 0`` this equals ``R(t+) R(pi) S(ln|t|) R(t+)``.
    """
    plus, t = _angle_split(theta1, theta2)
    r = rot(plus)
    return r @ np.diag([1.0 / t, t]) @ r


def branch_sign(branch) -> int:
    if branch in (1, "+", "plus"):
        return 1
    if branch in (-1, "-", "minus"):
        return -1
    raise InvalidParameter(f"branch must be '+' or '-', got {branch!r}")


def one_mode_step(theta_c: float, theta_d: float, branch) -> np.ndarray:
    """Teleporter followed by the fixed universal squeezer ``S(+-ln sqrt2)``."""
    return sq(branch_sign(branch) * LN_SQRT2) @ teleporter_gate(theta_c, theta_d)


def cx_gate(gain: float) -> np.ndarray:
    """QND coupler: ``x1 += gain x2``, ``p2 -= gain p1``."""
    m = np.eye(4)
    m[0, 1] = gain
    m[3, 2] = -gain
    return m


def cz_gate(gain: float) -> np.ndarray:
    """``p1 += gain x2``, ``p2 += gain x1``."""
    m = np.eye(4)
    m[2, 1] = gain
    m[3, 0] = gain
    return m


def local2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct sum of two single-mode symplectics in (x1, x2, p1, p2) order."""
    return g.direct_sum(g.SymplecticOp(a), g.SymplecticOp(b)).matrix


def qnd_gain(theta_a: float, theta_b: float) -> float:
    _plus, t = _angle_split(theta_a, theta_b)
    return 1.0 / (SQRT2 * t)


def two_mode_step(theta_a: float, theta_b: float) -> np.ndarray:
    """Two-wire macronode map: ``x1' = sqrt2 x1 + x2 / tan t-``, ``p1' = p1 / sqrt2``,
    ``x2' = sqrt2 x2``, ``p2' = (p2 - p1 / (sqrt2 tan t-)) / sqrt2``.

    Equal to ``(S(-ln sqrt2) (+) S(-ln sqrt2)) C_x(1 / (sqrt2 tan t-))``.
    """
    gain = qnd_gain(theta_a, theta_b)
    s = sq(-LN_SQRT2)
    return local2(s, s) @ cx_gate(gain)


def is_teleporter_form(m: np.ndarray, tol: float = 1e-10) -> bool:
    """``[[a, b], [-b, d]]`` with unit determinant: the set reachable by one teleporter."""
    return abs(m[1, 0] + m[0, 1]) < tol and abs(np.linalg.det(m) - 1.0) < tol


def teleporter_angles(v: np.ndarray) -> tuple:
    """Invert :func:`teleporter_gate` for a matrix of teleporter form."""
    v = np.asarray(v, dtype=float)
    if not is_teleporter_form(v, 1e-8):
        raise InvalidParameter("matrix is not reachable by a single teleporter")
    a, b, d = v[0, 0], v[0, 1], v[1, 1]
    sigma = math.hypot(a + d, 2.0 * b)
    u = 0.5 * (sigma + a - d)
    t = 0.5 * (sigma - a + d)
    if t <= 0 or u <= 0:
        raise SingularGate("teleporter would need infinite squeezing")
    alpha = 0.5 * math.atan2(2.0 * b / sigma, (a + d) / sigma)
    minus = math.atan(t)
    return alpha + minus, alpha - minus


# -- one-mode compiler ---------------------------------------------------------------

@dataclass
class OneModeProgram:
    """Two one-mode steps ``(theta_C, theta_D, branch)``; the first acts first."""

    steps: list
    residual: float

    def matrix(self) -> np.ndarray:
        out = np.eye(2)
        for tc, td, br in self.steps:
            out = one_mode_step(tc, td, br) @ out
        return out


def _family_basis(m: np.ndarray):
    """Null space of the linear constraint making ``S(-a) W M`` teleporter-form.

    ``W = [[w0, w1], [-w1, w2]]``.
    """
    s_inv = sq(-LN_SQRT2)
    rows = []
    for e in np.eye(3):
        w = np.array([[e[0], e[1]], [-e[1], e[2]]])
        v1 = s_inv @ w @ m
        rows.append(v1[1, 0] + v1[0, 1])
    _u, sv, vt = np.linalg.svd(np.array(rows)[None, :])
    return vt[1:]


def _w_from(vec):
    q = vec[0] * vec[2] + vec[1] ** 2
    if q <= 1e-12:
        return None
    vec = vec / math.sqrt(q)
    return np.array([[vec[0], vec[1]], [-vec[1], vec[2]]])


# added noise of one teleporter and of the two universal squeezers, units of exp(-2r)
_TELE_NOISE = np.eye(2)
_SQ_NOISE = {1: np.diag([0.25, 0.0]), -1: np.diag([0.0, 0.25])}


def _split_cost(w, m):
    """Predicted excess (max entry, units of exp(-2r)) of the split ``V1 = S(-a) W M``, ``V2 = W^-1``."""
    v2 = np.linalg.inv(w)
    v1 = sq(-LN_SQRT2) @ w @ m
    sp, sm = sq(LN_SQRT2), sq(-LN_SQRT2)
    noise = sp @ _TELE_NOISE @ sp.T + _SQ_NOISE[1]
    noise = sm @ (v2 @ noise @ v2.T + _TELE_NOISE) @ sm.T + _SQ_NOISE[-1]
    return float(np.max(np.abs(noise))), v1, v2


def compile_one_mode(target, tol: float = 1e-9) -> OneModeProgram:
    """Angles for ``U2 U1 = target`` with branches ``+`` then ``-``.

    ``U2 U1 = S(-a) V2 S(a) V1``, so ``V2 S(a) V1 = S(a) T``.  Writing
    ``W = V2^-1`` the teleporter-form condition on ``V1 = S(-a) W S(a) T`` is
    linear in ``W``; the resulting one-parameter family is scanned for the
    split with the least predicted finite-squeezing noise and then refined.
    """
    t = np.asarray(target, dtype=float)
    if t.shape != (2, 2) or not g.is_symplectic(t, 1e-10):
        raise InvalidParameter("target must be a 2x2 symplectic matrix")
    m = sq(LN_SQRT2) @ t
    basis = _family_basis(m)

    best = None
    for phi in np.linspace(0.0, math.pi, 721, endpoint=False):
        w = _w_from(math.cos(phi) * basis[0] + math.sin(phi) * basis[1])
        if w is None:
            continue
        cost, v1, v2 = _split_cost(w, m)
        if best is None or cost < best[0]:
            best = (cost, phi)
    if best is None:
        raise CompileFailure("no teleporter split found", residual=math.inf)

    def obj(phi):
        w = _w_from(math.cos(phi) * basis[0] + math.sin(phi) * basis[1])
        return math.inf if w is None else _split_cost(w, m)[0]

    res = optimize.minimize_scalar(obj, bracket=None,
                                   bounds=(best[1] - math.pi / 720, best[1] + math.pi / 720),
                                   method="bounded", options={"xatol": 1e-12})
    phi = res.x if res.fun <= best[0] else best[1]
    w = _w_from(math.cos(phi) * basis[0] + math.sin(phi) * basis[1])
    _cost, v1, v2 = _split_cost(w, m)
    try:
        a1 = teleporter_angles(v1)
        a2 = teleporter_angles(v2)
    except (InvalidParameter, SingularGate) as exc:
        raise CompileFailure(f"split not realisable: {exc}", residual=math.inf) from None
    angles = np.array(a1 + a2)

    def resid(x):
        p = OneModeProgram([(x[0], x[1], "+"), (x[2], x[3], "-")], 0.0)
        return (p.matrix() - t).ravel()

    r0 = float(np.max(np.abs(resid(angles))))
    if r0 > tol * 1e-2:
        sol = optimize.least_squares(resid, angles, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if np.max(np.abs(sol.fun)) < r0:
            angles = sol.x
    prog = OneModeProgram([(angles[0], angles[1], "+"), (angles[2], angles[3], "-")], 0.0)
    prog.residual = float(np.max(np.abs(prog.matrix() - t)))
    if prog.residual > tol:
        raise CompileFailure(f"compiled residual {prog.residual:.3g} exceeds {tol:g}",
                             residual=prog.residual)
    return prog


# -- gadgets ---------------------------------------------------------------------------

@dataclass
class Gadget:
    """A measurement gadget on ``wires``.

    ``ancillas``: ``(label, squeezed quadrature 'x'|'p')``;
    ``ops``: ``(2x2 or 4x4 symplectic, labels)`` applied in order;
    ``measure``: ``(label, theta)``; ``outputs``: label now carrying each wire.
    Wire inputs are labelled ``("in", wire)``.
    """

    name: str
    wires: tuple
    ancillas: list
    ops: list
    measure: list
    outputs: dict

    def input_label(self, wire):
        return ("in", wire)

    def labels(self) -> list:
        return [self.input_label(w) for w in self.wires] + [a for a, _q in self.ancillas]


def _network(gadget: Gadget):
    labels = gadget.labels()
    n = len(labels)
    idx = {lab: i for i, lab in enumerate(labels)}
    total = np.eye(2 * n)
    for mat, targets in gadget.ops:
        full = np.eye(2 * n)
        pos = [idx[t] for t in targets]
        coords = pos + [p + n for p in pos]
        full[np.ix_(coords, coords)] = mat
        total = full @ total
    return labels, idx, total


def _readout(gadget: Gadget):
    """Network matrix restricted to the measured quadratures and to the outputs."""
    labels, idx, total = _network(gadget)
    n = len(labels)
    rows = []
    for lab, theta in gadget.measure:
        i = idx[lab]
        row = np.zeros(2 * n)
        row[i], row[i + n] = math.cos(theta), math.sin(theta)
        rows.append(row)
    out_rows = [idx[gadget.outputs[w]] for w in gadget.wires]
    out_rows = out_rows + [i + n for i in out_rows]
    return labels, idx, np.array(rows) @ total, total[out_rows]


def gadget_gate(gadget: Gadget):
    """Infinite-squeezing map ``o = G u + K m`` of a gadget, returning ``(G, K)``."""
    labels, idx, meas, outm = _readout(gadget)
    n = len(labels)
    nw = len(gadget.wires)
    # coordinates of the input vector: wire x's, wire p's, then the free ancilla quadratures
    embed_u = np.zeros((2 * n, 2 * nw))
    for j, w in enumerate(gadget.wires):
        i = idx[gadget.input_label(w)]
        embed_u[i, j] = 1.0
        embed_u[i + n, j + nw] = 1.0
    embed_f = np.zeros((2 * n, len(gadget.ancillas)))
    for j, (lab, quad) in enumerate(gadget.ancillas):
        i = idx[lab]
        # an x-squeezed ancilla has x = 0 and a free p, and vice versa
        embed_f[i + n if quad == "x" else i, j] = 1.0
    h_u, h_f = meas @ embed_u, meas @ embed_f
    o_u, o_f = outm @ embed_u, outm @ embed_f
    if h_f.shape[0] != h_f.shape[1] or np.linalg.cond(h_f) > 1e12:
        raise SingularGate(f"gadget {gadget.name!r}: outcomes do not determine the ancillas")
    gain = o_f @ np.linalg.inv(h_f)
    gate = o_u - gain @ h_u
    return gate, gain


def feedforward_map(gadget: Gadget) -> np.ndarray:
    """Corrected outputs ``o - K m`` as a linear map of all gadget inputs (``labels()`` order)."""
    _labels, _idx, meas, outm = _readout(gadget)
    _gate, gain = gadget_gate(gadget)
    return outm - gain @ meas


def added_noise(gadget: Gadget) -> np.ndarray:
    """Outcome-averaged added covariance in units of ``exp(-2r)``.

    With ideal feed-forward the anti-squeezed ancilla quadratures cancel exactly;
    only the squeezed ones (variance ``exp(-2r)/2``) reach the outputs.
    """
    labels, idx, _meas, _outm = _readout(gadget)
    n = len(labels)
    lmap = feedforward_map(gadget)
    cols = [idx[lab] if quad == "x" else idx[lab] + n for lab, quad in gadget.ancillas]
    c = lmap[:, cols]
    return 0.5 * c @ c.T


def gadget_sequence_noise(gadgets: Sequence[Gadget], n_wires: int) -> np.ndarray:
    """Added noise of a gadget chain in units of ``exp(-2r)``, propagated to the end."""
    total = np.zeros((2 * n_wires, 2 * n_wires))
    for gad in gadgets:
        gate = embed(gadget_gate(gad)[0], gad.wires, n_wires)
        total = gate @ total @ gate.T
        coords = list(gad.wires) + [w + n_wires for w in gad.wires]
        total[np.ix_(coords, coords)] += added_noise(gad)
    return total


def _resource_rotation(label):
    return (rot(-math.pi / 2), (label,))


def teleporter_gadget(wire, theta1: float, theta2: float, tag: str = "t") -> Gadget:
    """Input meets one half of an EPR pair; both beam-splitter outputs are measured."""
    a, b = (tag, "a"), (tag, "b")
    u = ("in", wire)
    bs = g.beamsplitter_50(0).matrix
    return Gadget(
        name=f"teleporter[{wire}]",
        wires=(wire,),
        ancillas=[(a, "p"), (b, "x")],
        ops=[
            (bs, (a, b)),
            # the EPR half that becomes the output carries a fixed quarter-turn frame
            _resource_rotation(b),
            (bs, (u, a)),
        ],
        measure=[(u, theta1), (a, theta2)],
        outputs={wire: b},
    )


def squeezer_gadget(wire, branch, tag: str = "s") -> Gadget:
    """Universal squeezer ``S(+-ln sqrt2)``: measure p (branch +) or x (branch -) of one port."""
    sign = branch_sign(branch)
    e = (tag, "e")
    u = ("in", wire)
    return Gadget(
        name=f"squeezer{'+' if sign > 0 else '-'}[{wire}]",
        wires=(wire,),
        ancillas=[(e, "x" if sign > 0 else "p")],
        ops=[(g.beamsplitter_50(0).matrix, (u, e))],
        measure=[(u, math.pi / 2 if sign > 0 else 0.0)],
        outputs={wire: e},
    )


def bridge_gadget(w1, w2, theta_a: float, theta_b: float, tag: str = "q") -> Gadget:
    """Two single-ancilla ports whose measured halves meet on a beam splitter.

    Port 1 uses a p-squeezed ancilla; port 2 an x-squeezed one with a
    quarter-turn on its measured half.  Sandwiched between ``S(-ln sqrt2)``
    steps on ``w2`` this realises :func:`two_mode_step`.
    """
    e1, e2 = (tag, "e1"), (tag, "e2")
    u1, u2 = ("in", w1), ("in", w2)
    bs = g.beamsplitter_50(0).matrix
    return Gadget(
        name=f"bridge[{w1},{w2}]",
        wires=(w1, w2),
        ancillas=[(e1, "p"), (e2, "x")],
        ops=[(bs, (u1, e1)), (bs, (u2, e2)), (rot(-math.pi / 2), (u2,)), (bs, (u1, u2))],
        measure=[(u1, theta_a), (u2, theta_b)],
        outputs={w1: e1, w2: e2},
    )


def embed(mat: np.ndarray, wires: Sequence, n_wires: int) -> np.ndarray:
    """Embed a gate on ``wires`` into the ``n_wires`` system (identity elsewhere)."""
    k = len(wires)
    full = np.eye(2 * n_wires)
    coords = list(wires) + [w + n_wires for w in wires]
    full[np.ix_(coords, coords)] = mat[: 2 * k, : 2 * k] if mat.shape[0] == 2 * k else mat
    return full


def embed_gain(gain: np.ndarray, wires: Sequence, n_wires: int) -> np.ndarray:
    coords = list(wires) + [w + n_wires for w in wires]
    full = np.zeros((2 * n_wires, gain.shape[1]))
    full[coords, :] = gain
    return full


# -- schedules -----------------------------------------------------------------------

TAGS = ("one_mode", "two_mode", "wire_off")


@dataclass
class MacronodeStep:
    """Detector angles of one macronode plus its role."""

    k: int
    A: float
    B: float
    C: float
    D: float
    tag: str = "one_mode"
    wire: int | None = None

    def to_dict(self) -> dict:
        d = {"k": self.k, "A": self.A, "B": self.B, "C": self.C, "D": self.D, "tag": self.tag}
        if self.wire is not None:
            d["wire"] = self.wire
        return d


def _mod_pi(theta: float) -> float:
    return math.remainder(theta, math.pi)


def squeezer_branch(theta: float) -> int:
    """Branch of a same-basis A/B pair: p-measurement is ``+``, x-measurement ``-``."""
    r = _mod_pi(theta)
    if abs(abs(r) - math.pi / 2) < 1e-9:
        return 1
    if abs(r) < 1e-9:
        return -1
    raise ScheduleError(f"same-basis A/B angle {theta} must be 0 or pi/2 modulo pi")


@dataclass
class MeasurementSchedule:
    n_wires: int
    steps: list

    def __post_init__(self):
        if int(self.n_wires) != self.n_wires or self.n_wires < 1:
            raise ScheduleError("n_wires must be a positive integer")
        self.steps = [s if isinstance(s, MacronodeStep) else _step_from(s) for s in self.steps]
        self.validate()

    def wire_of(self, step: MacronodeStep) -> int:
        return step.wire if step.wire is not None else step.k % self.n_wires

    def validate(self) -> None:
        seen = set()
        for s in self.steps:
            if s.k in seen:
                raise ScheduleError(f"macronode {s.k} scheduled twice")
            seen.add(s.k)
            if s.tag not in TAGS:
                raise ScheduleError(f"unknown tag {s.tag!r}")
            for v in (s.A, s.B, s.C, s.D):
                if not math.isfinite(v):
                    raise ScheduleError(f"non-finite angle in macronode {s.k}")
            w = self.wire_of(s)
            if not 0 <= w < self.n_wires:
                raise ScheduleError(f"wire {w} out of range")
            same = abs(_mod_pi(s.A - s.B)) < 1e-12
            if s.tag in ("one_mode", "wire_off"):
                if not same:
                    raise ScheduleError(
                        f"macronode {s.k}: A and B differ, so it must be tagged two_mode"
                    )
                squeezer_branch(s.A)
            else:
                if same:
                    raise ScheduleError(
                        f"macronode {s.k}: equal A/B bases switch the coupling off; tag it wire_off"
                    )
                if self.n_wires < 2:
                    raise ScheduleError("two_mode steps need at least two wires")
                # other angle sums add a local shear; rotations belong in one-mode steps
                if abs(_mod_pi(0.5 * (s.A + s.B) - math.pi / 2)) > 1e-9:
                    raise ScheduleError(
                        f"macronode {s.k}: two_mode steps need A + B = pi (mod 2 pi)"
                    )
            try:
                _angle_split(s.C, s.D)
            except SingularGate as exc:
                raise ScheduleError(f"macronode {s.k}: {exc}") from None

    def to_json(self) -> str:
        return json.dumps({"wires": self.n_wires, "steps": [s.to_dict() for s in self.steps]},
                          indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MeasurementSchedule":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScheduleError(f"schedule is not valid JSON: {exc}") from None
        if isinstance(doc, list):
            doc = {"wires": 1, "steps": doc}
        if not isinstance(doc, dict) or not isinstance(doc.get("steps"), list):
            raise ScheduleError("schedule must be a list of steps or an object with a 'steps' list")
        try:
            wires = int(doc.get("wires", 1))
        except (TypeError, ValueError):
            raise ScheduleError(f"bad wire count {doc.get('wires')!r}") from None
        return cls(wires, doc["steps"])

    @classmethod
    def read(cls, path) -> "MeasurementSchedule":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def write(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def _step_from(d) -> MacronodeStep:
    if not isinstance(d, Mapping):
        raise ScheduleError(f"schedule step must be an object, got {type(d).__name__}")
    try:
        return MacronodeStep(
            k=int(d["k"]), A=float(d["A"]), B=float(d["B"]), C=float(d["C"]), D=float(d["D"]),
            tag=str(d.get("tag", "one_mode")),
            wire=None if d.get("wire") is None else int(d["wire"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScheduleError(f"malformed schedule step {d!r}: {exc}") from None


def expand_schedule(schedule: MeasurementSchedule) -> list:
    """Primitive gadgets in execution order."""
    out = []
    for s in sorted(schedule.steps, key=lambda st: st.k):
        w = schedule.wire_of(s)
        tag = f"k{s.k}"
        if s.tag in ("one_mode", "wire_off"):
            out.append(teleporter_gadget(w, s.C, s.D, tag=(tag, "t")))
            out.append(squeezer_gadget(w, squeezer_branch(s.A), tag=(tag, "s")))
        else:
            w2 = (w + 1) % schedule.n_wires
            out.append(teleporter_gadget(w, s.C, s.D, tag=(tag, "t")))
            # partner wire: S(-a), bridge, S(-a)
            out.append(squeezer_gadget(w2, "-", tag=(tag, "ps")))
            out.append(bridge_gadget(w, w2, s.A, s.B, tag=(tag, "q")))
            out.append(squeezer_gadget(w2, "-", tag=(tag, "qs")))
    return out


def step_symplectic(schedule: MeasurementSchedule, step: MacronodeStep) -> np.ndarray:
    """Ideal map of one macronode on the full wire register."""
    n = schedule.n_wires
    w = schedule.wire_of(step)
    if step.tag in ("one_mode", "wire_off"):
        return embed(one_mode_step(step.C, step.D, squeezer_branch(step.A)), (w,), n)
    w2 = (w + 1) % n
    tele = embed(teleporter_gate(step.C, step.D), (w,), n)
    return embed(two_mode_step(step.A, step.B), (w, w2), n) @ tele


def schedule_symplectic(schedule: MeasurementSchedule) -> np.ndarray:
    total = np.eye(2 * schedule.n_wires)
    for s in sorted(schedule.steps, key=lambda st: st.k):
        total = step_symplectic(schedule, s) @ total
    return total


def expanded_symplectic(schedule: MeasurementSchedule) -> np.ndarray:
    """Product of the gadget-derived gates (independent of the closed-form formulas)."""
    n = schedule.n_wires
    total = np.eye(2 * n)
    for gad in expand_schedule(schedule):
        gate, _gain = gadget_gate(gad)
        total = embed(gate, gad.wires, n) @ total
    return total


def schedule_noise(schedule: MeasurementSchedule) -> np.ndarray:
    """Predicted outcome-averaged excess covariance in units of ``exp(-2r)``."""
    return gadget_sequence_noise(expand_schedule(schedule), schedule.n_wires)


def one_mode_schedule(program: OneModeProgram, wire: int = 0, n_wires: int = 1,
                      k0: int = 0) -> MeasurementSchedule:
    steps = []
    for i, (tc, td, br) in enumerate(program.steps):
        ab = math.pi / 2 if branch_sign(br) > 0 else 0.0
        steps.append(MacronodeStep(k0 + i, ab, ab, tc, td, "one_mode", wire))
    return MeasurementSchedule(n_wires, steps)


# -- feed-forward ledger ---------------------------------------------------------------

@dataclass
class DisplacementLedger:
    """Deferred displacement ``d = D m`` on every wire, linear in the outcome log."""

    n_wires: int
    outcomes: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    coeffs: np.ndarray = None
    complete: bool = True

    def __post_init__(self):
        if self.coeffs is None:
            self.coeffs = np.zeros((2 * self.n_wires, 0))

    def record(self, gate_full: np.ndarray, gain_full: np.ndarray, labels, values) -> None:
        """Advance by one gadget: ``d <- G d + K m``."""
        values = [None if v is None else float(v) for v in values]
        self.coeffs = np.hstack([gate_full @ self.coeffs, gain_full])
        self.labels.extend(labels)
        self.outcomes.extend(values)
        if any(v is None for v in values):
            self.complete = False

    def displacement(self) -> np.ndarray:
        if not self.complete or any(v is None for v in self.outcomes):
            raise LedgerError("ledger has unrecorded outcomes")
        if not self.outcomes:
            return np.zeros(2 * self.n_wires)
        return self.coeffs @ np.array(self.outcomes)

    def to_dict(self) -> dict:
        d = self.displacement() if self.complete else None
        return {
            "wires": self.n_wires,
            "outcomes": [{"label": repr(lab), "value": v} for lab, v in zip(self.labels, self.outcomes)],
            "coefficients": self.coeffs.tolist(),
            "displacement": None if d is None else d.tolist(),
        }


def resolve_feedforward(ledger: DisplacementLedger, final: Mapping) -> dict:
    """Subtract the deferred displacement from final homodyne results.

    ``final`` maps wire -> ``(theta, raw outcome)``.
    """
    d = ledger.displacement()
    n = ledger.n_wires
    out = {}
    for wire, (theta, raw) in final.items():
        if not 0 <= wire < n:
            raise LedgerError(f"wire {wire} not tracked by the ledger")
        shift = math.cos(theta) * d[wire] + math.sin(theta) * d[wire + n]
        out[wire] = float(raw) - shift
    return out


# -- finite-squeezing execution -------------------------------------------------------

def _attach_ancillas(state: g.GaussianState, gadget: Gadget, wire_modes: dict, r: float):
    counter = _attach_ancillas.counter = getattr(_attach_ancillas, "counter", 0) + 1
    local = {gadget.input_label(w): wire_modes[w] for w in gadget.wires}
    for lab, quad in gadget.ancillas:
        mode = ("anc", counter, lab)
        local[lab] = mode
        state = g.tensor(state, g.squeezed_vacuum(mode, r if quad == "x" else -r))
    return state, local


def simulate_gadget(state: g.GaussianState, gadget: Gadget, wire_modes: dict, r: float,
                    rng=None, forced=None):
    """Run ``gadget`` on ``state`` and condition on sampled (or ``forced``) outcomes.

    ``wire_modes`` maps wire -> current mode label and is updated.  Returns the
    conditional state and the list of outcomes.
    """
    state, local = _attach_ancillas(state, gadget, wire_modes, r)
    for mat, targets in gadget.ops:
        g._apply_symplectic_inplace(state, mat, [local[t] for t in targets])
    values = []
    for j, (lab, theta) in enumerate(gadget.measure):
        fix = None if forced is None else forced[j]
        values.append(g._measure_inplace(state, local[lab], theta, rng=rng, outcome=fix))
    state = g._drop_inplace(state, [local[lab] for lab, _t in gadget.measure])
    for w in gadget.wires:
        wire_modes[w] = local[gadget.outputs[w]]
    return state, values


def average_gadget(state: g.GaussianState, gadget: Gadget, wire_modes: dict,
                   r: float) -> g.GaussianState:
    """Outcome-averaged channel of ``gadget`` with ideal feed-forward applied.

    The corrected outputs ``o - K m`` are linear in the pre-gadget quadratures,
    so the averaged state follows by one linear map (no sampling).
    """
    state, local = _attach_ancillas(state, gadget, wire_modes, r)
    lmap = feedforward_map(gadget)
    labels = gadget.labels()
    nl = len(labels)
    used = {local[lab] for lab in labels}
    keep = [m for m in state.modes if m not in used]
    outs = [local[gadget.outputs[w]] for w in gadget.wires]
    new_modes = keep + outs
    n_old, n_new = state.num_modes, len(new_modes)
    full = np.zeros((2 * n_new, 2 * n_old))
    for i, m in enumerate(keep):
        j = state.index(m)
        full[i, j] = 1.0
        full[i + n_new, j + n_old] = 1.0
    src = [state.index(local[lab]) for lab in labels]
    src = src + [j + n_old for j in src]
    nw = len(outs)
    for row in range(2 * nw):
        dest = len(keep) + row if row < nw else n_new + len(keep) + row - nw
        full[dest, src] = lmap[row, : 2 * nl]
    for w in gadget.wires:
        wire_modes[w] = local[gadget.outputs[w]]
    return g.GaussianState(new_modes, full @ state.mean, full @ state.cov @ full.T, check=False)


@dataclass
class ExecutionResult:
    state: g.GaussianState          # conditional output of the sampled run (uncorrected)
    corrected: g.GaussianState      # the same run after subtracting the ledger displacement
    averaged: g.GaussianState       # fed-forward output averaged over all outcomes
    ledger: DisplacementLedger
    target: np.ndarray

    def target_covariance(self, cov_in: np.ndarray) -> np.ndarray:
        return self.target @ cov_in @ self.target.T

    def excess(self, cov_in: np.ndarray) -> float:
        """Largest deviation of the outcome-averaged covariance from ``T V T^T``."""
        return float(np.max(np.abs(self.averaged.cov - self.target_covariance(cov_in))))


def _as_input_state(inputs, n_wires: int) -> g.GaussianState:
    if isinstance(inputs, g.GaussianState):
        if len(inputs.modes) != n_wires:
            raise ScheduleError(f"input state has {len(inputs.modes)} modes, schedule {n_wires} wires")
        return g.GaussianState([("wire", w, 0) for w in range(n_wires)], inputs.mean, inputs.cov)
    if inputs is None:
        return g.make_vacuum([("wire", w, 0) for w in range(n_wires)])
    mean = np.zeros(2 * n_wires)
    cov = np.zeros((2 * n_wires, 2 * n_wires))
    inputs = list(inputs)
    if len(inputs) != n_wires:
        raise ScheduleError("one input state per wire is required")
    for w, st in enumerate(inputs):
        mean[[w, w + n_wires]] = st.mean
        cov[np.ix_([w, w + n_wires], [w, w + n_wires])] = st.cov
    return g.GaussianState([("wire", w, 0) for w in range(n_wires)], mean, cov)


def _wire_state(state: g.GaussianState, wire_modes: dict, n: int) -> g.GaussianState:
    out = state.marginal([wire_modes[w] for w in range(n)])
    return g.GaussianState([("wire", w) for w in range(n)], out.mean, out.cov, check=False)


def execute_schedule(schedule: MeasurementSchedule, r: float, inputs=None, rng=None,
                     forced_outcomes: Sequence | None = None) -> ExecutionResult:
    """Run ``schedule`` on finite-squeezing resources with deferred feed-forward.

    ``inputs`` is a GaussianState over the wires (in wire order), a list of one
    single-mode state per wire, or ``None`` for vacuum.  Outcomes are sampled
    with ``rng`` unless ``forced_outcomes`` (a flat list) fixes them.
    """
    if not r > 0:
        raise InvalidParameter("resource squeezing r must be positive")
    n = schedule.n_wires
    state = _as_input_state(inputs, n)
    avg = state.copy()
    wire_modes = {w: ("wire", w, 0) for w in range(n)}
    avg_modes = dict(wire_modes)
    ledger = DisplacementLedger(n)
    if rng is None and forced_outcomes is None:
        rng = np.random.default_rng()
    forced = None if forced_outcomes is None else list(forced_outcomes)
    pos = 0
    for gad in expand_schedule(schedule):
        count = len(gad.measure)
        fix = None
        if forced is not None:
            if pos + count > len(forced):
                raise ScheduleError("not enough forced outcomes for the schedule")
            fix = forced[pos:pos + count]
        pos += count
        state, values = simulate_gadget(state, gad, wire_modes, r, rng=rng, forced=fix)
        avg = average_gadget(avg, gad, avg_modes, r)
        gate, gain = gadget_gate(gad)
        ledger.record(embed(gate, gad.wires, n), embed_gain(gain, gad.wires, n),
                      [(gad.name, lab) for lab, _t in gad.measure], values)
    out = _wire_state(state, wire_modes, n)
    corrected = out.copy()
    corrected.mean = corrected.mean - ledger.displacement()
    return ExecutionResult(out, corrected, _wire_state(avg, avg_modes, n), ledger,
                           expanded_symplectic(schedule))
