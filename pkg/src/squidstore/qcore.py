"""Dense complex linear algebra on small tensor-product Hilbert spaces.

Conventions used by every module in this package:

* subsystem order is slowest-to-fastest from the left: qubit 1, qubit 2,
  resonator.  ``tensor_product(A, B)`` makes A the slow factor.
* single-qubit basis order is (|0>, |1>), the charge states with zero and
  one excess Cooper pair.  sigma_z = |0><0| - |1><1|, sigma_x is standard,
  and sigma_y = -i(|1><0| - |0><1|) (note the sign relative to the common
  textbook matrix).
* unitaries are built by Hermitian eigendecomposition, never Pade.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import HBAR

HERMITICITY_TOL = 1e-12


class DimensionMismatchError(ValueError):
    pass


class NotHermitianError(ValueError):
    pass


def _as_dims(dims, dim: int) -> tuple[int, ...]:
    dims = (dim,) if dims is None else tuple(int(d) for d in dims)
    if int(np.prod(dims)) != dim:
        raise DimensionMismatchError(f"subsystem dims {dims} do not multiply to {dim}")
    return dims


@dataclass(frozen=True)
class Operator:
    """A dense square operator with its tensor factorization."""

    entries: np.ndarray
    dims: tuple[int, ...] = None

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.entries, dtype=complex))
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatchError(f"operator entries must be square, got {m.shape}")
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "dims", _as_dims(self.dims, m.shape[0]))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def dag(self) -> "Operator":
        return Operator(self.entries.conj().T, self.dims)

    def is_hermitian(self, tol: float = HERMITICITY_TOL) -> bool:
        scale = max(np.abs(self.entries).max(), 1.0)
        return np.abs(self.entries - self.entries.conj().T).max() <= tol * scale

    def __matmul__(self, other: "Operator") -> "Operator":
        if self.dim != other.dim:
            raise DimensionMismatchError("operator dimensions differ")
        return Operator(self.entries @ other.entries, self.dims)

    def __add__(self, other: "Operator") -> "Operator":
        return Operator(self.entries + other.entries, self.dims)

    def __sub__(self, other: "Operator") -> "Operator":
        return Operator(self.entries - other.entries, self.dims)

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.entries * scalar, self.dims)

    __rmul__ = __mul__

    def __neg__(self) -> "Operator":
        return Operator(-self.entries, self.dims)


@dataclass(frozen=True)
class QuantumState:
    """Pure state vector or density matrix on a tensor-product space."""

    kind: str  # "pure" | "mixed"
    data: np.ndarray
    dims: tuple[int, ...] = None

    NORM_TOL = 1e-10

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=complex))
        if self.kind == "pure":
            arr = arr.reshape(-1)
            norm = np.linalg.norm(arr)
            if abs(norm - 1.0) > self.NORM_TOL:
                raise ValueError(f"pure state norm {norm} deviates from 1")
        elif self.kind == "mixed":
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
                raise DimensionMismatchError("density matrix must be square")
            if np.abs(arr - arr.conj().T).max() > 1e-10 * max(np.abs(arr).max(), 1.0):
                raise NotHermitianError("density matrix is not Hermitian")
            tr = np.trace(arr).real
            if abs(tr - 1.0) > self.NORM_TOL:
                raise ValueError(f"density matrix trace {tr} deviates from 1")
            if np.linalg.eigvalsh(arr).min() < -1e-10:
                raise ValueError("density matrix has a negative eigenvalue")
        else:
            raise ValueError(f"unknown state kind {self.kind!r}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "dims", _as_dims(self.dims, arr.shape[0]))

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def density(self) -> np.ndarray:
        """Density-matrix view (pure states promoted, never downcast)."""
        if self.kind == "pure":
            return np.outer(self.data, self.data.conj())
        return self.data

    def as_mixed(self) -> "QuantumState":
        return self if self.kind == "mixed" else QuantumState("mixed", self.density(), self.dims)


def pure_state(amplitudes, dims=None) -> QuantumState:
    v = np.asarray(amplitudes, dtype=complex).reshape(-1)
    return QuantumState("pure", v / np.linalg.norm(v), dims)


def mixed_state(rho, dims=None) -> QuantumState:
    return QuantumState("mixed", rho, dims)


def basis_state(dim: int, index: int, dims=None) -> QuantumState:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return QuantumState("pure", v, dims)


# --- fixed single-qubit operators (charge-basis conventions above) ---------

def identity(dim: int, dims=None) -> Operator:
    return Operator(np.eye(dim, dtype=complex), dims)


def sigma_x() -> Operator:
    return Operator(np.array([[0, 1], [1, 0]], dtype=complex))


def sigma_y() -> Operator:
    # -i(|1><0| - |0><1|): opposite sign to the textbook matrix.
    return Operator(np.array([[0, 1j], [-1j, 0]], dtype=complex))


def sigma_z() -> Operator:
    return Operator(np.array([[1, 0], [0, -1]], dtype=complex))


def sigma_plus() -> Operator:
    """|1><0|, the charge raiser (lowers energy when Omega > 0)."""
    return Operator(np.array([[0, 0], [1, 0]], dtype=complex))


def sigma_minus() -> Operator:
    return Operator(np.array([[0, 1], [0, 0]], dtype=complex))


def destroy(n_max: int) -> Operator:
    """Fock-truncated annihilation operator on n_max+1 levels."""
    n = n_max + 1
    a = np.zeros((n, n), dtype=complex)
    for k in range(1, n):
        a[k - 1, k] = np.sqrt(k)
    return Operator(a)


def number_op(n_max: int) -> Operator:
    return Operator(np.diag(np.arange(n_max + 1)).astype(complex))


# --- operations -------------------------------------------------------------

def tensor_product(a: Operator, b: Operator) -> Operator:
    """Kronecker product; the left factor varies slowest."""
    return Operator(np.kron(a.entries, b.entries), a.dims + b.dims)


def tensor_many(*ops: Operator) -> Operator:
    out = ops[0]
    for op in ops[1:]:
        out = tensor_product(out, op)
    return out


def embed(op: Operator, slot: int, dims) -> Operator:
    """Lift a single-subsystem operator into the full product space."""
    dims = tuple(dims)
    factors = [
        op if i == slot else identity(d)
        for i, d in enumerate(dims)
    ]
    if dims[slot] != op.dim:
        raise DimensionMismatchError(f"slot {slot} has dim {dims[slot]}, operator has {op.dim}")
    return tensor_many(*factors)


def expm_hermitian(h: np.ndarray, scale: complex) -> np.ndarray:
    """exp(scale * H) for Hermitian H via eigendecomposition."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(scale * w)) @ v.conj().T


def evolution_operator(h: Operator, t: float, hbar: float = HBAR) -> Operator:
    """U = exp(-i H t / hbar); rejects non-Hermitian generators."""
    if not np.isfinite(t):
        raise ValueError("time must be finite")
    if not h.is_hermitian():
        raise NotHermitianError("evolution requires a Hermitian generator")
    return Operator(expm_hermitian(h.entries, -1j * t / hbar), h.dims)


def evolve(h: Operator, t: float, state: QuantumState, hbar: float = HBAR) -> QuantumState:
    """Propagate a state by exp(-i H t / hbar) (conjugation for mixed input)."""
    u = evolution_operator(h, t, hbar).entries
    if state.kind == "pure":
        return QuantumState("pure", u @ state.data, state.dims)
    return QuantumState("mixed", u @ state.data @ u.conj().T, state.dims)


def apply_unitary(u: Operator, state: QuantumState) -> QuantumState:
    if state.kind == "pure":
        return QuantumState("pure", u.entries @ state.data, state.dims)
    return QuantumState("mixed", u.entries @ state.data @ u.entries.conj().T, state.dims)


def partial_trace(state: QuantumState, keep) -> QuantumState:
    """Reduce to the subsystems in ``keep`` (indices into state.dims)."""
    keep = sorted(set(int(k) for k in (keep if np.iterable(keep) else [keep])))
    dims = state.dims
    n = len(dims)
    if any(k < 0 or k >= n for k in keep):
        raise IndexError(f"subsystem index out of range for dims {dims}")
    rho = state.density().reshape(dims + dims)
    lhs = list(range(2 * n))
    for i in range(n):
        if i not in keep:
            lhs[n + i] = lhs[i]
    rhs = [lhs[i] for i in keep] + [lhs[n + i] for i in keep]
    reduced = np.einsum(rho, lhs, rhs)
    d = int(np.prod([dims[k] for k in keep]))
    reduced = reduced.reshape(d, d)
    # round-off can push tiny negative eigenvalues; symmetrize only
    reduced = 0.5 * (reduced + reduced.conj().T)
    return QuantumState("mixed", reduced, tuple(dims[k] for k in keep))


def _psd_sqrt(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(rho)
    # sqrt amplifies round-off in near-zero eigenvalues to the 1e-8 scale;
    # discard anything below 1e-12 of the top eigenvalue before the sqrt
    cut = 1e-12 * max(w.max(), 0.0)
    w = np.where(w > cut, w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def state_fidelity(a: QuantumState, b: QuantumState) -> float:
    """Uhlmann fidelity F = (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    if a.dim != b.dim:
        raise DimensionMismatchError("states live on different spaces")
    if a.kind == "pure" and b.kind == "pure":
        return float(abs(np.vdot(a.data, b.data)) ** 2)
    if a.kind == "pure":
        return float(np.real(a.data.conj() @ b.density() @ a.data))
    if b.kind == "pure":
        return float(np.real(b.data.conj() @ a.density() @ b.data))
    s = _psd_sqrt(a.data)
    inner = _psd_sqrt(s @ b.data @ s)
    return float(np.real(np.trace(inner)) ** 2)


def commutator_norm(a: Operator, b: Operator) -> float:
    """Max-entry norm of AB - BA."""
    if a.dim != b.dim:
        raise DimensionMismatchError("operator dimensions differ")
    c = a.entries @ b.entries - b.entries @ a.entries
    return float(np.abs(c).max())
