"""Dense state-vector and density-matrix kernel for tiny registers.

Registers hold at most two qubits plus one 4-level ancilla (16 amplitudes),
so everything is a small dense numpy array. Subsystem 0 is the most
significant index, matching the ``|ab>`` ket convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation

NORM_TOL = 1e-12
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
EIG_FLOOR = -1e-10
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60

_SQRT_HALF = 1.0 / math.sqrt(2.0)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.complex128)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PureState:
    dims: tuple[int, ...]
    amps: np.ndarray

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d not in (2, 4) for d in dims):
            raise ContractViolation(f"subsystem dimensions must be 2 or 4, got {dims}")
        amps = _frozen(np.asarray(self.amps).reshape(-1))
        if amps.size != math.prod(dims):
            raise ContractViolation(f"{amps.size} amplitudes do not fit dims {dims}")
        if not np.all(np.isfinite(amps)):
            raise ContractViolation("non-finite amplitude")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise ContractViolation(f"state norm {norm!r} differs from 1")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "amps", amps)

    @property
    def tensor(self) -> np.ndarray:
        return self.amps.reshape(self.dims)

    def norm(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    def probabilities(self) -> np.ndarray:
        """Born probabilities over the full computational basis, shaped by dims."""
        return (np.abs(self.amps) ** 2).reshape(self.dims)

    def allclose(self, other: "PureState", atol: float = 1e-12) -> bool:
        return self.dims == other.dims and bool(np.allclose(self.amps, other.amps, atol=atol, rtol=0))


@dataclass(frozen=True, eq=False)
class UnitaryGate:
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = _frozen(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ContractViolation("gate must be a square matrix")
        err = np.max(np.abs(m @ m.conj().T - np.eye(m.shape[0])))
        if err > NORM_TOL:
            raise ContractViolation(f"gate is not unitary (max deviation {err:.3g})")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = _frozen(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ContractViolation("density matrix must be square")
        if not np.all(np.isfinite(m)):
            raise ContractViolation("non-finite density matrix entry")
        _check_hermitian(m)
        tr = np.trace(m).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise ContractViolation(f"trace {tr!r} differs from 1")
        # Validation uses LAPACK; entropies use the Jacobi route below.
        lo = float(np.linalg.eigvalsh(m)[0])
        if lo < EIG_FLOOR:
            raise ContractViolation(f"negative eigenvalue {lo:.3g}")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_pure(cls, amps: np.ndarray) -> "DensityMatrix":
        v = np.asarray(amps, dtype=np.complex128).reshape(-1)
        return cls(np.outer(v, v.conj()))


def _check_hermitian(m: np.ndarray) -> None:
    dev = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
    if dev > HERMITIAN_TOL:
        raise ContractViolation(f"matrix is not Hermitian (max deviation {dev:.3g})")


# ---------------------------------------------------------------------------
# States and gates
# ---------------------------------------------------------------------------

def basis_state(dims: Sequence[int], index: int) -> PureState:
    amps = np.zeros(math.prod(dims), dtype=np.complex128)
    amps[index] = 1.0
    return PureState(tuple(dims), amps)


def product_state(*factors: Sequence[complex]) -> PureState:
    """Tensor product of single-subsystem kets, given as amplitude lists."""
    amps = np.ones(1, dtype=np.complex128)
    for f in factors:
        amps = np.kron(amps, np.asarray(f, dtype=np.complex128))
    return PureState(tuple(len(f) for f in factors), amps)


def bell_phi_plus() -> PureState:
    """(|00> + |11>)/sqrt(2) on two qubits."""
    return PureState((2, 2), np.array([_SQRT_HALF, 0, 0, _SQRT_HALF], dtype=np.complex128))


def tensor(a: PureState, b: PureState) -> PureState:
    return PureState(a.dims + b.dims, np.kron(a.amps, b.amps))


def hadamard() -> UnitaryGate:
    return UnitaryGate(np.array([[1, 1], [1, -1]], dtype=np.complex128) * _SQRT_HALF)


def identity(dim: int = 2) -> UnitaryGate:
    return UnitaryGate(np.eye(dim, dtype=np.complex128))


def pauli_x() -> UnitaryGate:
    return UnitaryGate(np.array([[0, 1], [1, 0]], dtype=np.complex128))


def pauli_y() -> UnitaryGate:
    return UnitaryGate(np.array([[0, -1j], [1j, 0]], dtype=np.complex128))


def apply_to_subsystem(state: PureState, gate: UnitaryGate, subsystem_index: int) -> PureState:
    """Apply ``gate`` to one subsystem, i.e. I x ... x U x ... x I."""
    if not 0 <= subsystem_index < len(state.dims):
        raise ContractViolation(f"no subsystem {subsystem_index} in dims {state.dims}")
    if gate.dim != state.dims[subsystem_index]:
        raise ContractViolation(
            f"gate of dim {gate.dim} cannot act on subsystem of dim {state.dims[subsystem_index]}"
        )
    t = np.tensordot(gate.matrix, state.tensor, axes=([1], [subsystem_index]))
    t = np.moveaxis(t, 0, subsystem_index)
    return PureState(state.dims, t)


# ---------------------------------------------------------------------------
# Measurement
# ---------------------------------------------------------------------------

def outcome_probabilities(state: PureState, subsystem_index: int) -> np.ndarray:
    """Marginal Z-basis outcome probabilities for one subsystem."""
    if not 0 <= subsystem_index < len(state.dims):
        raise ContractViolation(f"no subsystem {subsystem_index} in dims {state.dims}")
    probs = state.probabilities()
    other = tuple(i for i in range(len(state.dims)) if i != subsystem_index)
    return probs.sum(axis=other) if other else probs


def collapse(state: PureState, subsystem_index: int, outcome: int) -> PureState:
    """Project one subsystem onto ``|outcome>`` and renormalize."""
    t = np.array(state.tensor)
    mask = np.zeros(state.dims[subsystem_index], dtype=bool)
    mask[outcome] = True
    idx = [slice(None)] * len(state.dims)
    idx[subsystem_index] = ~mask
    t[tuple(idx)] = 0.0
    p = float(np.vdot(t, t).real)
    if p < 1e-12:
        raise ContractViolation(f"outcome {outcome} has probability {p:.3g}; cannot collapse")
    return PureState(state.dims, t / math.sqrt(p))


def sample_index(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from a small probability vector with a uniform ``u``."""
    acc = 0.0
    last = len(probs) - 1
    for k in range(last):
        acc += float(probs[k])
        if u < acc:
            return k
    return last


def measure_z(state: PureState, subsystem_index: int, rng) -> tuple[int, PureState]:
    """Measure one subsystem in the computational basis.

    ``rng`` is anything with a ``random()`` method returning a uniform in
    [0, 1): a numpy Generator or a per-round stream.
    """
    probs = outcome_probabilities(state, subsystem_index)
    total = float(probs.sum())
    if total < 1e-12:
        raise ContractViolation("degenerate state: total probability vanishes")
    k = sample_index(probs / total, rng.random())
    return k, collapse(state, subsystem_index, k)


def reduced_density(state: PureState, keep: Sequence[int]) -> np.ndarray:
    """Partial trace onto the subsystems in ``keep`` (returned unvalidated)."""
    keep = list(keep)
    drop = [i for i in range(len(state.dims)) if i not in keep]
    t = state.tensor.transpose(keep + drop)
    dk = math.prod(state.dims[i] for i in keep)
    m = t.reshape(dk, -1)
    return m @ m.conj().T


# ---------------------------------------------------------------------------
# Eigenvalues and entropies
# ---------------------------------------------------------------------------

def _jacobi_symmetric(a: np.ndarray) -> np.ndarray:
    """Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    scale = max(1.0, float(np.linalg.norm(a)))
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = float(np.linalg.norm(a[offdiag]))
        if off <= JACOBI_TOL * scale:
            return np.diag(a).copy()
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
    raise ArithmeticError("Jacobi iteration did not converge")


def hermitian_eigvals(matrix: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a complex Hermitian matrix.

    The n x n Hermitian ``A + iB`` is embedded as the real symmetric
    ``[[A, -B], [B, A]]``, whose spectrum is that of the original with every
    eigenvalue doubled; pairs are averaged back.
    """
    m = np.asarray(matrix, dtype=np.complex128)
    _check_hermitian(m)
    n = m.shape[0]
    if n == 0:
        return np.empty(0)
    if not np.any(m - np.diag(np.diag(m))):
        return np.sort(np.diag(m).real)
    re, im = m.real, m.imag
    big = np.block([[re, -im], [im, re]])
    big = 0.5 * (big + big.T)
    vals = np.sort(_jacobi_symmetric(big))
    return 0.5 * (vals[0::2] + vals[1::2])


def _as_matrix(rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        return rho.matrix
    m = np.asarray(rho, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractViolation("density matrix must be square")
    return m


def von_neumann_entropy(rho) -> float:
    """S(rho) = -sum l log2 l over the spectrum, in bits."""
    lam = np.clip(hermitian_eigvals(_as_matrix(rho)), 0.0, 1.0)
    lam = lam[lam > 0.0]
    return float(-np.sum(lam * np.log2(lam))) if lam.size else 0.0


def binary_entropy(q: float) -> float:
    if not 0.0 <= q <= 1.0 or math.isnan(q):
        raise ContractViolation(f"probability {q!r} outside [0, 1]")
    if q == 0.0 or q == 1.0:
        return 0.0
    return -q * math.log2(q) - (1.0 - q) * math.log2(1.0 - q)


def shannon_entropy(p: Sequence[float]) -> float:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or np.any(arr < 0.0) or np.any(arr > 1.0) or not np.all(np.isfinite(arr)):
        raise ContractViolation("entries must be probabilities")
    if abs(float(arr.sum()) - 1.0) > 1e-10:
        raise ContractViolation(f"probabilities sum to {arr.sum()!r}, not 1")
    nz = arr[arr > 0.0]
    return float(-np.sum(nz * np.log2(nz)))
