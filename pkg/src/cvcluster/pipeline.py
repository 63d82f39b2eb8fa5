"""Streaming construction of the time-multiplexed 2-D cluster state.

Every clock ``k`` four squeezed wave packets enter the network on rails A-D.
BS-1..BS-3 turn them into a square cluster; rail B is delayed by one clock and
rail C by ``N`` clocks before BS-4 (rails A, B) and BS-5 (rails C, D) stitch the
squares into the helix.

Delays are index rewiring: a packet is named by the clock at which it *leaves*
the network, so the rail-B packet of square ``k`` is born as ``ModeId('B', k+1)``
and the rail-C packet as ``ModeId('C', k+N)``.  Packets that have passed their
last beam splitter are handed to a sink and evicted from the live window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import total_ordering
from typing import Iterable, Mapping

import numpy as np

from . import gaussian as g
from .errors import InvalidParameter, ResourceLimit

RAILS = ("A", "B", "C", "D")
SEGMENTS = ("source", "delay", "detection")
KINDS = (("x", 1), ("p", 1), ("x", 2), ("p", 2))
SQRT2 = math.sqrt(2.0)


@total_ordering
@dataclass(frozen=True)
class ModeId:
    """Wave-packet mode at spatial rail ``spatial`` and temporal index ``temporal``."""

    spatial: str
    temporal: int

    def __post_init__(self):
        if self.spatial not in RAILS:
            raise InvalidParameter(f"spatial label must be one of {RAILS}, got {self.spatial!r}")
        if not isinstance(self.temporal, (int, np.integer)) or self.temporal < 0:
            raise InvalidParameter(f"temporal index must be a non-negative int, got {self.temporal!r}")

    def sort_key(self):
        return (self.temporal, RAILS.index(self.spatial))

    def __lt__(self, other):
        if not isinstance(other, ModeId):
            return NotImplemented
        return self.sort_key() < other.sort_key()

    def __repr__(self):
        return f"{self.spatial}{self.temporal}"


@dataclass(frozen=True)
class Wiring:
    """Beam-splitter network layout; the defaults give the standard four-kind nullifiers.

    ``square`` lists BS-1..BS-3 as ``(first_input, second_input, orientation)``.
    """

    square: tuple = (("A", "B", 0), ("C", "D", 0), ("B", "C", 0))
    short_rail: str = "B"
    long_rail: str = "C"
    bs4: tuple = ("A", "B", 0)
    bs5: tuple = ("C", "D", 0)
    squeezed_quadrature: tuple = (("A", "p"), ("B", "x"), ("C", "p"), ("D", "x"))

    def delay(self, rail: str, n: int) -> int:
        if rail == self.short_rail:
            return 1
        if rail == self.long_rail:
            return n
        return 0


@dataclass
class PipelineConfig:
    """Parameters of one streaming run.

    ``r`` is a single squeezing parameter or a mapping rail -> r.  ``eta`` is
    either one global efficiency, applied in the detection segment, or a mapping
    whose keys are ``(rail, segment)`` pairs, bare segments or bare rails
    (bare rails mean the detection segment).
    """

    N: int = 5
    r: float | Mapping[str, float] = 0.5
    eta: float | Mapping = 0.75
    dtau2: float = 0.0
    K_max: int | None = None
    seed: int | None = None
    wiring: Wiring = field(default_factory=Wiring)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise InvalidParameter(f"N must be an integer >= 2, got {self.N}")
        for rail in RAILS:
            for seg in SEGMENTS:
                eta = self.efficiency(rail, seg)
                if not 0.0 <= eta <= 1.0:
                    raise InvalidParameter(f"efficiency for {rail}/{seg} out of [0, 1]: {eta}")

    def squeezing(self, rail: str) -> float:
        if isinstance(self.r, Mapping):
            return float(self.r[rail])
        return float(self.r)

    def efficiency(self, rail: str, segment: str) -> float:
        eta = self.eta
        if not isinstance(eta, Mapping):
            return float(eta) if segment == "detection" else 1.0
        for key in ((rail, segment), f"{rail}:{segment}", segment):
            if key in eta:
                return float(eta[key])
        if segment == "detection" and rail in eta:
            return float(eta[rail])
        return 1.0

    @property
    def window_bound(self) -> int:
        return 4 * (self.N + 2)


# -- nullifiers -----------------------------------------------------------------------

@dataclass(frozen=True)
class NullifierSpec:
    k: int
    kind: tuple
    terms: tuple

    def coefficients(self, state: g.GaussianState) -> np.ndarray:
        return g.coefficient_vector(state, self.terms)

    @property
    def modes(self):
        return tuple(t[0] for t in self.terms)


def nullifier_coeffs(k: int, N: int, kind) -> NullifierSpec:
    """The six-term nullifier of type ``kind`` anchored at temporal index ``k``."""
    if k < 0:
        raise InvalidParameter(f"k must be >= 0, got {k}")
    quad, family = tuple(kind)
    if quad not in ("x", "p") or family not in (1, 2):
        raise InvalidParameter(f"unknown nullifier kind {kind!r}")
    sign = -1.0 if quad == "x" else 1.0
    c = sign / SQRT2
    if family == 1:
        lead = (("A", 1.0), ("B", 1.0))
        far = c
    else:
        lead = (("C", 1.0), ("D", -1.0))
        far = -c
    terms = [(ModeId(rail, k), quad, w) for rail, w in lead]
    terms += [
        (ModeId("A", k + 1), quad, -c),
        (ModeId("B", k + 1), quad, c),
        (ModeId("C", k + N), quad, far),
        (ModeId("D", k + N), quad, far),
    ]
    return NullifierSpec(k=k, kind=(quad, family), terms=tuple(terms))


# -- sinks ----------------------------------------------------------------------------

class Sink:
    """Receives the modes emitted at each clock.

    ``emit`` gets the joint state (live window plus previously retained modes)
    and returns the emitted or retained modes it still needs; everything else
    is evicted by the pipeline.
    """

    def emit(self, k: int, emitted: tuple, retained: frozenset, state: g.GaussianState):
        raise NotImplementedError


class RecordSink(Sink):
    """Accumulate every emitted mode (batch comparison; memory grows with K)."""

    def __init__(self):
        self.modes = []

    def emit(self, k, emitted, retained, state):
        self.modes.extend(emitted)
        return retained | set(emitted)


class DiscardSink(Sink):
    def __init__(self):
        self.count = 0

    def emit(self, k, emitted, retained, state):
        self.count += len(emitted)
        return frozenset()


@dataclass
class ExactNullifierRow:
    k: int
    kind: tuple
    variance: float
    boundary: bool


class NullifierSink(Sink):
    """Exact nullifier variances computed on the fly with bounded retention.

    The nullifier anchored at ``j`` is complete once clock ``j + N`` has been
    emitted; only modes with temporal index above ``k - N`` are kept.
    """

    def __init__(self, N: int, kinds=KINDS):
        self.N = N
        self.kinds = tuple(tuple(k) for k in kinds)
        self.rows: list[ExactNullifierRow] = []
        self.max_retained = 0

    def emit(self, k, emitted, retained, state):
        j = k - self.N
        if j >= 0:
            for kind in self.kinds:
                spec = nullifier_coeffs(j, self.N, kind)
                var = g.quadrature_variance(state, spec.coefficients(state))
                self.rows.append(ExactNullifierRow(j, kind, var, j < self.N))
        keep = frozenset(m for m in retained | set(emitted) if m.temporal > j)
        self.max_retained = max(self.max_retained, len(keep))
        return keep


class MeasureSink(Sink):
    """Homodyne-measure each emitted mode right away and record the outcome."""

    def __init__(self, angles: Mapping[str, float] | float = 0.0, rng=None):
        self.angles = angles
        self.rng = rng if rng is not None else np.random.default_rng()
        self.outcomes: dict = {}

    def angle(self, rail):
        if isinstance(self.angles, Mapping):
            return float(self.angles[rail])
        return float(self.angles)

    def emit(self, k, emitted, retained, state):
        # measurement conditions the joint state, so the pipeline performs it
        return frozenset()


# -- streaming engine ---------------------------------------------------------------

class TDMPipeline:
    """Single-threaded streaming generator; call :meth:`step` once per clock."""

    def __init__(self, config: PipelineConfig, sink: Sink | None = None):
        self.config = config
        self.sink = sink if sink is not None else DiscardSink()
        self.next_k = 0
        self._state = g.empty_state()
        self._live: set = set()
        self._retained: frozenset = frozenset()
        self.max_live = 0
        self.max_tracked = 0

    @property
    def live_modes(self) -> tuple:
        return tuple(sorted(self._live))

    @property
    def window(self) -> g.GaussianState:
        """Marginal state of the in-flight (not yet emitted) modes."""
        return self._state.marginal(self.live_modes)

    @property
    def state(self) -> g.GaussianState:
        """Joint state of live plus sink-retained modes."""
        return self._state

    def retained_state(self) -> g.GaussianState:
        return self._state.marginal(tuple(sorted(self._retained)))

    def _add(self, sub: g.GaussianState):
        self._state = g.tensor(self._state, sub)
        self._live.update(sub.modes)

    def _bs(self, a, b, orientation):
        g._apply_symplectic_inplace(self._state, g.beamsplitter_50(orientation).matrix, (a, b))

    def _loss(self, mode, segment):
        eta = self.config.efficiency(mode.spatial, segment)
        if eta < 1.0:
            g._apply_loss_inplace(self._state, mode, eta)

    def step(self) -> tuple:
        """Advance one clock and return the emitted modes."""
        cfg = self.config
        w = cfg.wiring
        n = cfg.N
        k = self.next_k
        if cfg.K_max is not None and k >= cfg.K_max:
            raise ResourceLimit(f"pipeline limited to K_max={cfg.K_max} clocks")

        # partners that no earlier square supplies are vacuum
        for rail in (w.short_rail, w.long_rail):
            partner = ModeId(rail, k)
            if partner not in self._state:
                self._add(g.make_vacuum([partner]))

        names = {rail: ModeId(rail, k + w.delay(rail, n)) for rail in RAILS}
        sub = None
        for rail, quad in w.squeezed_quadrature:
            r = cfg.squeezing(rail)
            piece = g.squeezed_vacuum(names[rail], r if quad == "x" else -r)
            sub = piece if sub is None else g.tensor(sub, piece)
        self._add(sub)
        for rail in RAILS:
            self._loss(names[rail], "source")
        for a, b, orient in w.square:
            self._bs(names[a], names[b], orient)
        for rail in (w.short_rail, w.long_rail):
            self._loss(names[rail], "delay")

        a, b, o4 = w.bs4
        self._bs(ModeId(a, k), ModeId(b, k), o4)
        c, d, o5 = w.bs5
        self._bs(ModeId(c, k), ModeId(d, k), o5)

        emitted = tuple(ModeId(rail, k) for rail in RAILS)
        for mode in emitted:
            self._loss(mode, "detection")
        self.max_live = max(self.max_live, len(self._live))
        self.max_tracked = max(self.max_tracked, len(self._state.modes))
        self._live.difference_update(emitted)

        keep = frozenset(self.sink.emit(k, emitted, self._retained, self._state))
        if isinstance(self.sink, MeasureSink):
            for mode in emitted:
                value = g._measure_inplace(
                    self._state, mode, self.sink.angle(mode.spatial), rng=self.sink.rng
                )
                self.sink.outcomes[mode] = value
        candidates = self._retained | set(emitted)
        drop = candidates - keep
        if drop:
            self._state = g._drop_inplace(self._state, drop)
        self._retained = frozenset(m for m in candidates if m in keep)
        self.next_k = k + 1
        return emitted

    def run(self, K: int):
        for _ in range(K):
            self.step()
        return self


def stream_state(config: PipelineConfig, K: int) -> g.GaussianState:
    """Exact joint state of all modes emitted in ``K`` clocks (streaming path)."""
    sink = RecordSink()
    pipe = TDMPipeline(config, sink).run(K)
    return pipe.retained_state()


# -- batch oracle ---------------------------------------------------------------------

BATCH_LIMIT = 128


def run_batch_oracle(config: PipelineConfig, K: int, stage: str = "full",
                     limit: int = BATCH_LIMIT) -> g.GaussianState:
    """Build the whole ``4K``-mode state at once, with delays as a static relabelling.

    ``stage='square'`` stops after BS-1..BS-3 and labels each square by its own
    clock (rail packets not yet delayed), which exposes the square-cluster
    nullifiers.  The full state also contains the packets still inside the delay
    lines after clock ``K - 1``.
    """
    if K < 1:
        raise InvalidParameter("K must be >= 1")
    if K > limit:
        raise ResourceLimit(f"batch oracle limited to K <= {limit}, got {K}")
    w = config.wiring
    n = config.N
    shift = (lambda rail: 0) if stage == "square" else (lambda rail: w.delay(rail, n))
    if stage not in ("square", "full"):
        raise InvalidParameter(f"unknown stage {stage!r}")

    modes = []
    variances = []
    for k in range(K):
        for rail, quad in w.squeezed_quadrature:
            r = config.squeezing(rail)
            modes.append(ModeId(rail, k + shift(rail)))
            vx, vp = 0.5 * math.exp(-2 * r), 0.5 * math.exp(2 * r)
            variances.append((vx, vp) if quad == "x" else (vp, vx))
    if stage == "full":
        for rail, count in ((w.short_rail, 1), (w.long_rail, n)):
            for k in range(min(count, K)):
                modes.append(ModeId(rail, k))
                variances.append((0.5, 0.5))
    m = len(modes)
    diag = np.array([v[0] for v in variances] + [v[1] for v in variances])
    state = g.GaussianState(modes, np.zeros(2 * m), np.diag(diag))

    # one dense transfer matrix: losses break the product form, so apply in stages
    def stage_ops(ops):
        nonlocal state
        for op, targets in ops:
            if op == "loss":
                state = g.apply_loss(state, targets[0], targets[1])
            else:
                state = g.apply_symplectic(state, op, targets)

    def loss_ops(mode_list, segment):
        return [("loss", (md, config.efficiency(md.spatial, segment))) for md in mode_list
                if config.efficiency(md.spatial, segment) < 1.0]

    square_names = [{rail: ModeId(rail, k + shift(rail)) for rail in RAILS} for k in range(K)]
    stage_ops(loss_ops([nm[r] for nm in square_names for r in RAILS], "source"))
    ops = []
    for names in square_names:
        for a, b, orient in w.square:
            ops.append((g.beamsplitter_50(orient), (names[a], names[b])))
    stage_ops(ops)
    if stage == "square":
        return state
    stage_ops(loss_ops([nm[r] for nm in square_names for r in (w.short_rail, w.long_rail)], "delay"))
    a, b, o4 = w.bs4
    c, d, o5 = w.bs5
    ops = []
    for k in range(K):
        ops.append((g.beamsplitter_50(o4), (ModeId(a, k), ModeId(b, k))))
        ops.append((g.beamsplitter_50(o5), (ModeId(c, k), ModeId(d, k))))
    stage_ops(ops)
    stage_ops(loss_ops([ModeId(r, k) for k in range(K) for r in RAILS], "detection"))
    return state


def emitted_modes(K: int) -> list:
    return [ModeId(rail, k) for k in range(K) for rail in RAILS]


# -- sampling -------------------------------------------------------------------------

@dataclass
class SampleTable:
    """``values[frame, j]`` is the homodyne outcome of ``modes[j]`` in one frame."""

    modes: tuple
    angles: dict
    values: np.ndarray

    def column(self, mode) -> np.ndarray:
        return self.values[:, self.modes.index(mode)]

    def combine(self, terms: Iterable) -> np.ndarray:
        idx = {m: i for i, m in enumerate(self.modes)}
        out = np.zeros(self.values.shape[0])
        for mode, _quad, weight in terms:
            out += weight * self.values[:, idx[mode]]
        return out


def _angles_for(quadrature) -> dict:
    if isinstance(quadrature, Mapping):
        return {rail: float(quadrature[rail]) for rail in RAILS}
    if quadrature == "x":
        return {rail: 0.0 for rail in RAILS}
    if quadrature == "p":
        return {rail: math.pi / 2 for rail in RAILS}
    return {rail: float(quadrature) for rail in RAILS}


def sample_frames(config: PipelineConfig, K: int, frames: int, quadrature="x",
                  seed: int | None = None, state: g.GaussianState | None = None) -> SampleTable:
    """Draw ``frames`` joint homodyne records of every emitted mode.

    All rails share one detection angle per acquisition (x on all or p on all),
    as in the experiment.  ``state`` may pass a precomputed streaming state.
    """
    if state is None:
        state = stream_state(config, K)
    angles = _angles_for(quadrature)
    modes = tuple(m for m in emitted_modes(K) if m in state)
    nm = len(state.modes)
    rows = np.zeros((len(modes), 2 * nm))
    for j, mode in enumerate(modes):
        i = state.index(mode)
        th = angles[mode.spatial]
        rows[j, i] = math.cos(th)
        rows[j, i + nm] = math.sin(th)
    mean = rows @ state.mean
    cov = rows @ state.cov @ rows.T
    chol = np.linalg.cholesky(0.5 * (cov + cov.T) + 1e-15 * np.eye(len(modes)))
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((frames, len(modes)))
    values = mean + z @ chol.T
    return SampleTable(modes=modes, angles=angles, values=values)
