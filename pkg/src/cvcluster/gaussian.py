"""Exact finite-dimensional Gaussian-state engine.

Conventions used throughout the package:

* hbar = 1, so the vacuum quadrature variance is 1/2;
* quadratures are ordered ``(x_1, ..., x_M, p_1, ..., p_M)``;
* ``squeezer(r)`` maps ``(x, p) -> (exp(-r) x, exp(r) p)``;
* ``rotation(theta)`` maps ``x -> x cos(theta) + p sin(theta)`` so that a homodyne
  detector at angle ``theta`` reads the x quadrature of the rotated mode.

Modes are labelled by arbitrary hashable objects (the pipeline uses
:class:`cvcluster.pipeline.ModeId`).  Public operations are pure and return new
states; the ``_inplace`` helpers are for the streaming engine, which owns its
state exclusively.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import InvalidModes, InvalidParameter, NotPure

SYMMETRY_TOL = 1e-12
UNCERTAINTY_TOL = 1e-9
SYMPLECTIC_TOL = 1e-10
PURITY_TOL = 1e-6


def omega(m: int) -> np.ndarray:
    """Canonical symplectic form for ``m`` modes in xxpp ordering."""
    eye = np.eye(m)
    zero = np.zeros((m, m))
    return np.block([[zero, eye], [-eye, zero]])


def is_symplectic(matrix: np.ndarray, tol: float = SYMPLECTIC_TOL) -> bool:
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0]
    if matrix.shape != (n, n) or n % 2:
        return False
    om = omega(n // 2)
    return bool(np.max(np.abs(matrix.T @ om @ matrix - om)) < tol)


@dataclass(frozen=True)
class SymplecticOp:
    """A symplectic matrix acting on ``arity`` modes (xxpp ordering of its targets)."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] % 2:
            raise InvalidParameter(f"symplectic matrix must be 2m x 2m, got {mat.shape}")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def arity(self) -> int:
        return self.matrix.shape[0] // 2

    def is_symplectic(self, tol: float = SYMPLECTIC_TOL) -> bool:
        return is_symplectic(self.matrix, tol)

    def __matmul__(self, other: "SymplecticOp") -> "SymplecticOp":
        return SymplecticOp(self.matrix @ other.matrix)

    def inverse(self) -> "SymplecticOp":
        m = self.arity
        om = omega(m)
        return SymplecticOp(-om @ self.matrix.T @ om)


def rotation(theta: float) -> SymplecticOp:
    c, s = np.cos(theta), np.sin(theta)
    return SymplecticOp(np.array([[c, s], [-s, c]]))


def squeezer(r: float) -> SymplecticOp:
    return SymplecticOp(np.diag([np.exp(-r), np.exp(r)]))


def beamsplitter_50(orientation: int = 0) -> SymplecticOp:
    """Balanced beam splitter ``(1/sqrt 2)[[1, -1], [1, 1]]`` on both x and p blocks.

    ``orientation`` picks the input carrying the minus sign: 0 gives outputs
    ``((a - b), (a + b))/sqrt 2``, 1 gives ``((a + b), (b - a))/sqrt 2``.
    """
    if orientation == 0:
        b = np.array([[1.0, -1.0], [1.0, 1.0]]) / np.sqrt(2)
    elif orientation == 1:
        b = np.array([[1.0, 1.0], [-1.0, 1.0]]) / np.sqrt(2)
    else:
        raise InvalidParameter(f"orientation must be 0 or 1, got {orientation!r}")
    z = np.zeros((2, 2))
    return SymplecticOp(np.block([[b, z], [z, b]]))


def direct_sum(*ops: SymplecticOp) -> SymplecticOp:
    """Block-diagonal combination (in xxpp ordering) of ops on disjoint mode lists."""
    n = sum(op.arity for op in ops)
    out = np.zeros((2 * n, 2 * n))
    offset = 0
    for op in ops:
        m = op.arity
        a = op.matrix
        xs = slice(offset, offset + m)
        ps = slice(n + offset, n + offset + m)
        out[xs, xs] = a[:m, :m]
        out[xs, ps] = a[:m, m:]
        out[ps, xs] = a[m:, :m]
        out[ps, ps] = a[m:, m:]
        offset += m
    return SymplecticOp(out)


class GaussianState:
    """Mean vector and covariance matrix over an ordered list of modes."""

    __slots__ = ("modes", "mean", "cov", "_index")

    def __init__(self, modes: Sequence[Hashable], mean, cov, check: bool = True):
        modes = tuple(modes)
        index = {mode: i for i, mode in enumerate(modes)}
        if len(index) != len(modes):
            raise InvalidModes(f"duplicate modes in {modes!r}")
        mean = np.array(mean, dtype=float).reshape(-1)
        cov = np.array(cov, dtype=float)
        dim = 2 * len(modes)
        if mean.shape != (dim,) or cov.shape != (dim, dim):
            raise InvalidParameter(
                f"dimension mismatch: {len(modes)} modes, mean {mean.shape}, cov {cov.shape}"
            )
        if check and dim and np.max(np.abs(cov - cov.T)) > 1e-9 * max(1.0, np.max(np.abs(cov))):
            raise InvalidParameter("covariance matrix is not symmetric")
        self.modes = modes
        self.mean = mean
        self.cov = 0.5 * (cov + cov.T)
        self._index = index

    def __repr__(self):
        return f"GaussianState({len(self.modes)} modes)"

    def __len__(self):
        return len(self.modes)

    def __contains__(self, mode):
        return mode in self._index

    @property
    def num_modes(self) -> int:
        return len(self.modes)

    def copy(self) -> "GaussianState":
        return GaussianState(self.modes, self.mean.copy(), self.cov.copy(), check=False)

    def index(self, mode) -> int:
        try:
            return self._index[mode]
        except KeyError:
            raise InvalidModes(f"unknown mode {mode!r}") from None

    def quad_indices(self, modes: Iterable[Hashable]) -> np.ndarray:
        """Coordinate indices (x block then p block) of ``modes`` in this state."""
        pos = [self.index(m) for m in modes]
        m = len(self.modes)
        return np.array(pos + [p + m for p in pos], dtype=int)

    def marginal(self, modes: Sequence[Hashable]) -> "GaussianState":
        idx = self.quad_indices(modes)
        return GaussianState(modes, self.mean[idx], self.cov[np.ix_(idx, idx)], check=False)

    def uncertainty_min_eigenvalue(self) -> float:
        """Smallest eigenvalue of ``cov + (i/2) Omega`` (>= 0 for physical states)."""
        m = len(self.modes)
        if m == 0:
            return 0.0
        herm = self.cov + 0.5j * omega(m)
        return float(np.linalg.eigvalsh(herm).min())

    def is_physical(self, tol: float = UNCERTAINTY_TOL) -> bool:
        return self.uncertainty_min_eigenvalue() >= -tol

    def purity_det(self) -> float:
        """``det(2 cov)``: 1 for pure states, > 1 for mixed ones."""
        if not self.modes:
            return 1.0
        sign, logdet = np.linalg.slogdet(2.0 * self.cov)
        return float(sign * np.exp(logdet))

    def is_pure(self, tol: float = PURITY_TOL) -> bool:
        return abs(self.purity_det() - 1.0) < tol


# -- construction ----------------------------------------------------------------

def make_vacuum(modes: Sequence[Hashable]) -> GaussianState:
    modes = tuple(modes)
    if not modes:
        raise InvalidModes("at least one mode is required")
    if len(set(modes)) != len(modes):
        raise InvalidModes(f"duplicate modes in {modes!r}")
    dim = 2 * len(modes)
    return GaussianState(modes, np.zeros(dim), 0.5 * np.eye(dim))


def empty_state() -> GaussianState:
    return GaussianState((), np.zeros(0), np.zeros((0, 0)))


def tensor(a: GaussianState, b: GaussianState) -> GaussianState:
    """Product state with the modes of ``a`` followed by those of ``b``."""
    if set(a.modes) & set(b.modes):
        raise InvalidModes("states share modes")
    ma, mb = len(a.modes), len(b.modes)
    n = ma + mb
    mean = np.zeros(2 * n)
    cov = np.zeros((2 * n, 2 * n))
    ia = np.r_[0:ma, n:n + ma]
    ib = np.r_[ma:n, n + ma:2 * n]
    mean[ia] = a.mean
    mean[ib] = b.mean
    cov[np.ix_(ia, ia)] = a.cov
    cov[np.ix_(ib, ib)] = b.cov
    return GaussianState(a.modes + b.modes, mean, cov, check=False)


def squeezed_vacuum(mode, r: float) -> GaussianState:
    """Single mode ``squeezer(r)`` applied to vacuum (x-squeezed for r > 0)."""
    return GaussianState((mode,), np.zeros(2), np.diag([0.5 * np.exp(-2 * r), 0.5 * np.exp(2 * r)]))


def coherent_state(mode, x: float, p: float) -> GaussianState:
    return GaussianState((mode,), np.array([x, p]), 0.5 * np.eye(2))


# -- transformations ---------------------------------------------------------------

def _apply_symplectic_inplace(state: GaussianState, matrix: np.ndarray, targets) -> None:
    targets = tuple(targets)
    idx = state.quad_indices(targets)
    s = np.asarray(matrix, dtype=float)
    if s.shape != (idx.size, idx.size):
        raise InvalidParameter(f"op acts on {s.shape[0] // 2} modes, got {len(targets)} targets")
    cov = state.cov
    cov[idx, :] = s @ cov[idx, :]
    cov[:, idx] = cov[:, idx] @ s.T
    # cheap local symmetrisation: only the touched rows/columns can drift
    block = cov[idx, :]
    sym = 0.5 * (block + cov[:, idx].T)
    cov[idx, :] = sym
    cov[:, idx] = sym.T
    state.mean[idx] = s @ state.mean[idx]


def apply_symplectic(state: GaussianState, op, targets: Sequence[Hashable]) -> GaussianState:
    """Apply ``op`` (a :class:`SymplecticOp` or matrix) to ``targets``."""
    matrix = op.matrix if isinstance(op, SymplecticOp) else np.asarray(op, dtype=float)
    if len(set(targets)) != len(targets):
        raise InvalidModes("targets must be distinct")
    out = state.copy()
    _apply_symplectic_inplace(out, matrix, targets)
    return out


def _apply_loss_inplace(state: GaussianState, mode, eta: float) -> None:
    if not 0.0 <= eta <= 1.0:
        raise InvalidParameter(f"transmission must lie in [0, 1], got {eta}")
    idx = state.quad_indices([mode])
    scale = np.sqrt(eta)
    cov = state.cov
    cov[idx, :] *= scale
    cov[:, idx] *= scale
    cov[np.ix_(idx, idx)] += 0.5 * (1.0 - eta) * np.eye(2)
    state.mean[idx] *= scale


def apply_loss(state: GaussianState, mode, eta: float) -> GaussianState:
    """Pure-loss channel of transmission ``eta`` on one mode."""
    out = state.copy()
    _apply_loss_inplace(out, mode, eta)
    return out


def quadrature_vector(state: GaussianState, mode, theta: float) -> np.ndarray:
    vec = np.zeros(2 * len(state.modes))
    i = state.index(mode)
    vec[i] = np.cos(theta)
    vec[i + len(state.modes)] = np.sin(theta)
    return vec


def _measure_inplace(state: GaussianState, mode, theta: float, rng=None, outcome=None):
    vec = quadrature_vector(state, mode, theta)
    cv = state.cov @ vec
    var = float(vec @ cv)
    mu = float(vec @ state.mean)
    if outcome is None:
        if rng is None:
            raise InvalidParameter("either rng or a fixed outcome is required")
        outcome = rng.normal(mu, np.sqrt(max(var, 0.0)))
    outcome = float(outcome)
    if var <= 0.0:
        raise InvalidParameter("measured quadrature has zero variance")
    state.mean = state.mean + cv * ((outcome - mu) / var)
    state.cov = state.cov - np.outer(cv, cv) / var
    return outcome


def _drop_inplace(state: GaussianState, modes) -> GaussianState:
    drop = set(modes)
    keep = [m for m in state.modes if m not in drop]
    return state.marginal(keep)


def measure_homodyne(state: GaussianState, mode, theta: float, rng=None, outcome=None):
    """Ideal homodyne measurement of ``x cos(theta) + p sin(theta)`` on ``mode``.

    Returns ``(outcome, remaining_state)``.  The outcome is sampled with ``rng``
    (a :class:`numpy.random.Generator`) unless ``outcome`` is supplied.
    """
    out = state.copy()
    value = _measure_inplace(out, mode, theta, rng=rng, outcome=outcome)
    rest = _drop_inplace(out, [mode])
    rest.cov = 0.5 * (rest.cov + rest.cov.T)
    return value, rest


def quadrature_variance(state: GaussianState, coeffs) -> float:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (2 * len(state.modes),):
        raise InvalidParameter(
            f"coefficient vector has length {coeffs.size}, expected {2 * len(state.modes)}"
        )
    return float(coeffs @ state.cov @ coeffs)


def coefficient_vector(state: GaussianState, terms) -> np.ndarray:
    """Build a coefficient vector from ``(mode, 'x'|'p', weight)`` triples."""
    vec = np.zeros(2 * len(state.modes))
    m = len(state.modes)
    for mode, quad, weight in terms:
        i = state.index(mode)
        if quad == "x":
            vec[i] += weight
        elif quad == "p":
            vec[i + m] += weight
        else:
            raise InvalidParameter(f"quadrature must be 'x' or 'p', got {quad!r}")
    return vec


# -- graph representation ------------------------------------------------------------

@dataclass(frozen=True)
class GraphZ:
    """Complex adjacency ``Z = V + iU`` of a pure Gaussian state."""

    V: np.ndarray
    U: np.ndarray

    @property
    def Z(self) -> np.ndarray:
        return self.V + 1j * self.U


def graph_from_state(state: GaussianState) -> GraphZ:
    if not state.is_pure():
        raise NotPure(f"det(2 cov) = {state.purity_det():.9g}, state is not pure")
    m = len(state.modes)
    cxx = state.cov[:m, :m]
    cxp = state.cov[:m, m:]
    u = np.linalg.inv(2.0 * cxx)
    u = 0.5 * (u + u.T)
    v = 2.0 * u @ cxp
    v = 0.5 * (v + v.T)
    return GraphZ(V=v, U=u)


def state_from_graph(graph: GraphZ, modes: Sequence[Hashable] | None = None) -> GaussianState:
    v = np.asarray(graph.V, dtype=float)
    u = np.asarray(graph.U, dtype=float)
    m = u.shape[0]
    if np.any(np.linalg.eigvalsh(0.5 * (u + u.T)) <= 0):
        raise InvalidParameter("U must be positive definite")
    uinv = np.linalg.inv(u)
    cov = 0.5 * np.block([[uinv, uinv @ v], [v @ uinv, u + v @ uinv @ v]])
    if modes is None:
        modes = tuple(range(m))
    return GaussianState(modes, np.zeros(2 * m), cov)
