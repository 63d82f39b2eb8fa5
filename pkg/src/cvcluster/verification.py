"""Nullifier reports and the van Loock-Furusawa inseparability sweep.

For a nullifier pair ``(h, g)`` (an x-type and a p-type combination) and a
bipartition ``(P, Q)`` of the modes, the state is inseparable across ``(P, Q)``
whenever ``Var(h) + Var(g) < |sum_P h_m g_m| + |sum_Q h_m g_m|`` (hbar = 1).
Splitting the sum symmetrically gives one condition per nullifier,
``Var < bound / 2``, i.e. ``10 log10(bound / 4)`` dB below the two-unit
shot-noise reference.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import Incomplete, InvalidParameter, InvalidPartition
from .pipeline import KINDS, ModeId, NullifierSpec, nullifier_coeffs

REFERENCE = 2.0
SUFFICIENT_DB = 10 * math.log10(math.sqrt(2) / 4)


def to_db(var: float) -> float:
    return 10.0 * math.log10(var / REFERENCE)


# -- reports ---------------------------------------------------------------------------

@dataclass
class NullifierReport:
    """Variances of the four nullifiers anchored at ``k``.

    ``stderr_db`` is ``None`` for exact (covariance-derived) reports.
    """

    k: int
    variances: dict
    samples: int | None = None
    stderr_db: dict | None = None
    boundary: bool = False

    def __post_init__(self):
        self.variances = {tuple(kind): float(v) for kind, v in self.variances.items()}
        for kind, v in self.variances.items():
            if not v > 0:
                raise InvalidParameter(f"variance for {kind} must be positive, got {v}")
        if self.stderr_db is not None:
            self.stderr_db = {tuple(kind): float(v) for kind, v in self.stderr_db.items()}

    @property
    def db(self) -> dict:
        return {kind: to_db(v) for kind, v in self.variances.items()}


def dB_stderr(samples: int) -> float:
    """Standard error in dB of a Gaussian sample variance estimated from ``samples`` draws."""
    return 10.0 / math.log(10.0) * math.sqrt(2.0 / (samples - 1))


def reports_from_rows(rows, N: int) -> dict:
    """Group exact per-kind rows (``k``, ``kind``, ``variance``) into reports keyed by k."""
    grouped: dict = {}
    for row in rows:
        grouped.setdefault(row.k, {})[tuple(row.kind)] = row.variance
    return {k: NullifierReport(k, v, boundary=k < N) for k, v in sorted(grouped.items())}


def reports_from_samples(x_table, p_table, N: int, ks: Iterable[int] | None = None) -> dict:
    """Sample-based reports: x-type nullifiers from the x acquisition, p-type from the p one."""
    tables = {"x": x_table, "p": p_table}
    present = set(x_table.modes)
    kmax = max(m.temporal for m in present)
    if ks is None:
        ks = range(0, kmax - N + 1)
    out = {}
    for k in ks:
        variances, errors = {}, {}
        n = None
        for kind in KINDS:
            spec = nullifier_coeffs(k, N, kind)
            values = tables[kind[0]].combine(spec.terms)
            n = values.size
            variances[kind] = float(np.var(values, ddof=1))
            errors[kind] = dB_stderr(n)
        out[k] = NullifierReport(k, variances, samples=n, stderr_db=errors, boundary=k < N)
    return out


# -- bound and thresholds ------------------------------------------------------------

def _as_weights(vec) -> dict:
    if isinstance(vec, NullifierSpec):
        out: dict = {}
        for mode, _quad, w in vec.terms:
            out[mode] = out.get(mode, 0.0) + w
        return out
    if isinstance(vec, Mapping):
        return dict(vec)
    return {i: float(w) for i, w in enumerate(np.asarray(vec, dtype=float))}


def vlf_bound(h, g, partition) -> float:
    """``|sum_P h g| + |sum_Q h g|`` for ``partition = (P, Q)``.

    ``h`` and ``g`` are NullifierSpecs, mode->weight maps or plain vectors over a
    common index set.  Overlap modes missing from both parts are assigned to the
    side that gives the smaller (more conservative) bound.
    """
    part_p, part_q = (set(part) for part in partition)
    if not part_p or not part_q:
        raise InvalidPartition("both parts of a bipartition must be nonempty")
    if part_p & part_q:
        raise InvalidPartition("bipartition parts overlap")
    hw, gw = _as_weights(h), _as_weights(g)
    prod = {m: hw[m] * gw[m] for m in hw.keys() & gw.keys() if hw[m] * gw[m] != 0.0}
    sp = sum(v for m, v in prod.items() if m in part_p)
    sq = sum(v for m, v in prod.items() if m in part_q)
    free = [v for m, v in prod.items() if m not in part_p and m not in part_q]
    best = math.inf
    for sides in itertools.product((0, 1), repeat=len(free)):
        a = sp + sum(v for v, s in zip(free, sides) if s == 0)
        b = sq + sum(v for v, s in zip(free, sides) if s == 1)
        best = min(best, abs(a) + abs(b))
    return best


def threshold_db(bound: float) -> float:
    """Per-nullifier dB level (relative to the 2.0 reference) that certifies a bound."""
    if not bound > 0:
        raise InvalidParameter(f"bound must be positive, got {bound}")
    return 10.0 * math.log10(bound / 4.0)


# -- bipartition sweep ---------------------------------------------------------------

def pair_modes(family: int, k: int, N: int) -> tuple:
    """The six modes shared by the x- and p-type nullifiers of ``family`` at ``k``."""
    lead = ("A", "B") if family == 1 else ("C", "D")
    return (
        ModeId(lead[0], k), ModeId(lead[1], k),
        ModeId("A", k + 1), ModeId("B", k + 1),
        ModeId("C", k + N), ModeId("D", k + N),
    )


def admissible_pairs(family: int, k: int, N: int) -> list:
    """Candidate ``((x-kind, index), (p-kind, index))`` pairs for one six-mode set.

    Besides the same-index pair, each x-nullifier is combined with the p-type
    nullifiers of the neighbouring indices whose lead modes sit in the set.
    """
    x1, p1, x2, p2 = ("x", 1), ("p", 1), ("x", 2), ("p", 2)
    if family == 1:
        pairs = [((x1, k), (p1, k)), ((x1, k), (p1, k + 1)), ((x1, k), (p2, k + N))]
        if k >= 1:
            pairs.append(((x1, k - 1), (p1, k)))
    else:
        pairs = [((x2, k), (p2, k)), ((x2, k), (p2, k + N)), ((x2, k), (p1, k + 1))]
        if k >= N:
            pairs.append(((x2, k - N), (p2, k)))
    return pairs


@dataclass(frozen=True)
class Bipartition:
    modes: tuple
    mask: int

    def __post_init__(self):
        full = (1 << len(self.modes)) - 1
        if not 0 < self.mask < full:
            raise InvalidPartition(f"mask {self.mask} leaves one part empty")

    @property
    def part(self) -> tuple:
        return tuple(m for i, m in enumerate(self.modes) if self.mask >> i & 1)

    @property
    def rest(self) -> tuple:
        return tuple(m for i, m in enumerate(self.modes) if not self.mask >> i & 1)

    @property
    def split(self) -> str:
        a = bin(self.mask).count("1")
        return f"{min(a, 6 - a)}|{max(a, 6 - a)}"

    def canonical(self) -> "Bipartition":
        full = (1 << len(self.modes)) - 1
        top = 1 << (len(self.modes) - 1)
        return self if not self.mask & top else Bipartition(self.modes, full ^ self.mask)


def canonical_bipartitions(modes: Sequence) -> list:
    """All 2^(n-1) - 1 bipartitions, complement-identified (last mode always in ``rest``)."""
    n = len(modes)
    return [Bipartition(tuple(modes), mask) for mask in range(1, 1 << (n - 1))]


@dataclass
class CaseRow:
    family: int
    bipartition: Bipartition
    pair: tuple
    bound: float
    threshold_db: float

    @property
    def bucket(self) -> float:
        """Squeezing magnitude in dB, rounded for grouping."""
        return round(-self.threshold_db, 3)


def best_pair(family: int, bip: Bipartition, k: int, N: int):
    best = None
    for pair in admissible_pairs(family, k, N):
        (hk, hi), (gk, gi) = pair
        bound = vlf_bound(nullifier_coeffs(hi, N, hk), nullifier_coeffs(gi, N, gk),
                          (bip.part, bip.rest))
        if best is None or bound > best[1] + 1e-12:
            best = (pair, bound)
    return best


def enumerate_case_table(family: int, N: int = 5, k: int | None = None) -> list:
    """Loosest admissible threshold for each of the 31 bipartitions of one six-mode set."""
    if family not in (1, 2):
        raise InvalidParameter("family must be 1 or 2")
    if k is None:
        k = N + 1
    rows = []
    for bip in canonical_bipartitions(pair_modes(family, k, N)):
        pair, bound = best_pair(family, bip, k, N)
        rows.append(CaseRow(family, bip, pair, bound, threshold_db(bound)))
    return rows


# -- verdicts --------------------------------------------------------------------------

@dataclass
class Verdict:
    k: int
    verified: bool
    sufficient: bool
    margin_db: float
    binding: CaseRow | None = None
    details: list = field(default_factory=list)


def _db_lookup(reports: Mapping, kind, idx):
    rep = reports.get(idx)
    if rep is None or tuple(kind) not in rep.variances:
        raise Incomplete(f"nullifier {kind} at index {idx} is not available")
    return rep.db[tuple(kind)]


def check_inseparability(reports: Mapping, N: int, k: int, tables=None) -> Verdict:
    """Fine-grained verdict at ``k``: every bipartition of both six-mode sets is witnessed.

    Each bipartition uses its loosest admissible pair, and each nullifier of the
    pair must lie below ``threshold_db(bound)``.  ``sufficient`` reports the
    single-threshold check (all four nullifiers at k below -4.515 dB).
    """
    if tables is None:
        tables = {fam: enumerate_case_table(fam, N, k) for fam in (1, 2)}
    margin = math.inf
    binding = None
    details = []
    for fam in (1, 2):
        for row in tables[fam]:
            worst = -math.inf
            for kind, idx in row.pair:
                worst = max(worst, _db_lookup(reports, kind, idx))
            m = row.threshold_db - worst
            details.append((row, m))
            if m < margin:
                margin, binding = m, row
    dbs = [_db_lookup(reports, kind, k) for kind in KINDS]
    sufficient = all(v < SUFFICIENT_DB for v in dbs)
    return Verdict(k, margin > 0, sufficient, margin, binding, details)


def check_all(reports: Mapping, N: int) -> list:
    """Verdicts for every k whose neighbours are available, skipping boundary indices."""
    verdicts = []
    for k in sorted(reports):
        if k < N:
            continue
        try:
            verdicts.append(check_inseparability(reports, N, k))
        except Incomplete:
            continue
    return verdicts
