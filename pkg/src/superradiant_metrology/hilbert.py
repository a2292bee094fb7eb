"""Hilbert spaces and operators for atoms coupled to a single cavity mode.

Basis conventions (all golden values in the test suite depend on them):

* ``DickeSpace``: states ``|J, m>`` ordered by ascending ``m`` (index 0 is
  ``m = -J``, the collective ground state).
* ``FockSpace``: photon numbers ``n = 0 .. n_max`` in ascending order.
* ``FullAtomSpace``: computational basis of ``N`` two-level atoms, atom 0 is
  the least significant bit, ``|g> = 0`` and ``|e> = 1``.
* Composite spaces order their factors as given, atoms before field.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

FULL_ATOM_CAP = 12

TRACE_TOL = 1e-9
HERMITICITY_TOL = 1e-12
POSITIVITY_TOL = 1e-9
DENSE_EIG_MAX_DIM = 200


class SpaceMismatchError(ValueError):
    """Operands live on incompatible Hilbert spaces."""


# --------------------------------------------------------------------------- #
#                                   spaces                                    #
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class DickeSpace:
    """Collective spin ladder of ``n_atoms`` two-level atoms.

    By default the maximal-spin ladder ``J = N/2`` is used.  ``two_j`` selects
    a smaller total spin ``J <= N/2`` (same parity as ``N``), which is how
    states outside the fully symmetric subspace, such as the ``J = 0``
    singlet, are reached.  Spins are stored as twice their value so
    half-integers stay exact.
    """

    n_atoms: int
    two_j: int | None = None
    label: str = "atoms"

    def __post_init__(self):
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise ValueError(f"n_atoms must be a positive integer, got {self.n_atoms}")
        if self.two_j is None:
            object.__setattr__(self, "two_j", int(self.n_atoms))
        tj = self.two_j
        if tj < 0 or tj > self.n_atoms or (self.n_atoms - tj) % 2:
            raise ValueError(
                f"2J={tj} incompatible with N={self.n_atoms}: need 0 <= 2J <= N, same parity"
            )

    @property
    def j(self) -> Fraction:
        return Fraction(self.two_j, 2)

    @property
    def dim(self) -> int:
        return self.two_j + 1

    @property
    def is_maximal(self) -> bool:
        return self.two_j == self.n_atoms

    def two_m_values(self) -> np.ndarray:
        """Twice the ``m`` quantum number of each basis state, ascending."""
        return np.arange(-self.two_j, self.two_j + 1, 2)

    def index(self, two_m: int) -> int:
        if abs(two_m) > self.two_j or (two_m - self.two_j) % 2:
            raise ValueError(f"2m={two_m} not in ladder with 2J={self.two_j}")
        return (two_m + self.two_j) // 2


@dataclass(frozen=True)
class FockSpace:
    n_max: int
    label: str = "field"

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 0:
            raise ValueError(f"n_max must be a non-negative integer, got {self.n_max}")

    @property
    def dim(self) -> int:
        return self.n_max + 1


@dataclass(frozen=True)
class FullAtomSpace:
    """Explicit ``2**N`` product space, kept as a small-N oracle."""

    n_atoms: int
    label: str = "atoms"
    cap: int = FULL_ATOM_CAP

    def __post_init__(self):
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise ValueError(f"n_atoms must be a positive integer, got {self.n_atoms}")
        if self.n_atoms > self.cap:
            raise ValueError(
                f"FullAtomSpace with {self.n_atoms} atoms exceeds the cap of {self.cap}"
            )

    @property
    def dim(self) -> int:
        return 2 ** self.n_atoms


@dataclass(frozen=True)
class CompositeSpace:
    factors: tuple

    def __post_init__(self):
        flat = []
        for f in self.factors:
            flat.extend(f.factors if isinstance(f, CompositeSpace) else (f,))
        labels = [f.label for f in flat]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate subsystem labels in composite: {labels}")
        object.__setattr__(self, "factors", tuple(flat))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.dim for f in self.factors)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(f.label for f in self.factors)

    @property
    def label(self) -> str:
        return "*".join(self.labels)

    def subsystem(self, tag: Union[str, int]) -> int:
        if isinstance(tag, (int, np.integer)):
            if not 0 <= tag < len(self.factors):
                raise KeyError(f"no subsystem with index {tag}")
            return int(tag)
        try:
            return self.labels.index(tag)
        except ValueError:
            raise KeyError(f"unknown subsystem tag {tag!r}; have {self.labels}") from None


Space = Union[DickeSpace, FockSpace, FullAtomSpace, CompositeSpace]


def compose(*spaces: Space) -> CompositeSpace:
    return CompositeSpace(tuple(spaces))


def find_factor(space: Space, kind: type):
    """Return ``(index, factor)`` of the first factor of type ``kind``, else None."""
    factors = space.factors if isinstance(space, CompositeSpace) else (space,)
    for i, f in enumerate(factors):
        if isinstance(f, kind):
            return i, f
    return None


# --------------------------------------------------------------------------- #
#                          operators and states                               #
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Sparse complex matrix tagged with the space it acts on."""

    space: Space
    matrix: sp.csr_matrix = field(repr=False)

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex)
        d = self.space.dim
        if m.shape != (d, d):
            raise SpaceMismatchError(f"matrix shape {m.shape} does not match space dim {d}")
        m.sort_indices()
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self):
        return self.matrix.shape

    def adjoint(self) -> "SparseOperator":
        return SparseOperator(self.space, self.matrix.conj().T.tocsr())

    dag = adjoint

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def _check(self, other: "SparseOperator"):
        if other.space != self.space:
            raise SpaceMismatchError(f"{self.space} vs {other.space}")

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            self._check(other)
            return SparseOperator(self.space, self.matrix @ other.matrix)
        return self.matrix @ other

    def __add__(self, other: "SparseOperator"):
        self._check(other)
        return SparseOperator(self.space, self.matrix + other.matrix)

    def __sub__(self, other: "SparseOperator"):
        self._check(other)
        return SparseOperator(self.space, self.matrix - other.matrix)

    def __mul__(self, scalar):
        return SparseOperator(self.space, self.matrix * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return SparseOperator(self.space, -self.matrix)

    def commutator(self, other: "SparseOperator") -> "SparseOperator":
        return self @ other - other @ self

    def max_abs(self) -> float:
        return float(abs(self.matrix).max()) if self.matrix.nnz else 0.0

    def is_hermitian(self, tol: float = 0.0) -> bool:
        return (self - self.adjoint()).max_abs() <= tol


def identity(space: Space) -> SparseOperator:
    return SparseOperator(space, sp.identity(space.dim, dtype=complex, format="csr"))


def min_eigenvalue(matrix: np.ndarray) -> float:
    """Smallest eigenvalue of a Hermitian matrix.

    Dense solve up to ``DENSE_EIG_MAX_DIM``, Lanczos beyond.
    """
    h = 0.5 * (matrix + matrix.conj().T)
    if h.shape[0] <= DENSE_EIG_MAX_DIM:
        return float(np.linalg.eigvalsh(h)[0])
    return float(spla.eigsh(h, k=1, which="SA", return_eigenvectors=False)[0])


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A validated quantum state: Hermitian, unit trace, positive semidefinite.

    Validation runs at construction unless ``check=False``; evolved states
    bypass it and are monitored through diagnostics instead.
    """

    space: Space
    matrix: np.ndarray = field(repr=False)
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix.toarray() if sp.issparse(self.matrix) else self.matrix,
                       dtype=complex)
        d = self.space.dim
        if m.shape != (d, d):
            raise SpaceMismatchError(f"matrix shape {m.shape} does not match space dim {d}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.check:
            tr = np.trace(m)
            if abs(tr - 1) > TRACE_TOL:
                raise ValueError(f"trace {tr} deviates from 1")
            herm = self.hermiticity_error()
            if herm > HERMITICITY_TOL:
                raise ValueError(f"matrix is not Hermitian (max deviation {herm:.3e})")
            lam = min_eigenvalue(m)
            if lam < -POSITIVITY_TOL:
                raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {lam:.3e})")

    @classmethod
    def from_ket(cls, space: Space, ket) -> "DensityMatrix":
        psi = np.asarray(ket, dtype=complex).ravel()
        psi = psi / np.linalg.norm(psi)
        return cls(space, np.outer(psi, psi.conj()))

    @property
    def dim(self) -> int:
        return self.space.dim

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def min_eigenvalue(self) -> float:
        return min_eigenvalue(self.matrix)

    def purity(self) -> float:
        return float(np.real(np.vdot(self.matrix, self.matrix)))


# --------------------------------------------------------------------------- #
#                               constructors                                  #
# --------------------------------------------------------------------------- #

def dicke_operators(space: DickeSpace) -> dict[str, SparseOperator]:
    """Collective ladder operators on a Dicke ladder.

    ``J_minus |J, m> = sqrt(J(J+1) - m(m-1)) |J, m-1>``, ``J_plus`` is its
    adjoint and ``J_z`` is diagonal with entries ``m``.  Matrix elements are
    computed from twice-valued integers, so ``(J+m)(J-m+1)`` is exact.
    """
    tj = space.two_j
    two_m = space.two_m_values()
    # 4 (J+m)(J-m+1) = (2J+2m)(2J-2m+2) for the transition m -> m-1
    upper = two_m[1:]
    amp = np.sqrt(((tj + upper) * (tj - upper + 2)) // 4)
    jm = sp.diags(amp.astype(complex), offsets=1, shape=(space.dim, space.dim), format="csr")
    J_minus = SparseOperator(space, jm)
    J_plus = J_minus.adjoint()
    J_z = SparseOperator(space, sp.diags(two_m / 2.0, format="csr").astype(complex))
    return {"J_minus": J_minus, "J_plus": J_plus, "J_z": J_z}


def fock_operators(space: FockSpace) -> dict[str, SparseOperator]:
    """Truncated field operators.

    Note that ``[a, a_dagger]`` equals the identity except the last diagonal
    entry, which is ``-n_max``: an artifact of truncation.
    """
    n = np.arange(1, space.dim)
    a = SparseOperator(
        space, sp.diags(np.sqrt(n).astype(complex), offsets=1,
                        shape=(space.dim, space.dim), format="csr")
    )
    a_dag = a.adjoint()
    number = SparseOperator(space, sp.diags(np.arange(space.dim, dtype=float), format="csr"))
    return {"a": a, "a_dagger": a_dag, "number": number}


_SIGMA_MINUS = sp.csr_matrix(np.array([[0, 1], [0, 0]], dtype=complex))


def individual_atom_operators(space: FullAtomSpace, i: int) -> dict[str, SparseOperator]:
    """``sigma^-`` and ``sigma^+`` of atom ``i`` (identity on the others)."""
    if not 0 <= i < space.n_atoms:
        raise IndexError(f"atom index {i} out of range for {space.n_atoms} atoms")
    # atom 0 is the least significant bit, so it is the rightmost Kronecker factor
    left = sp.identity(2 ** (space.n_atoms - 1 - i), dtype=complex, format="csr")
    right = sp.identity(2 ** i, dtype=complex, format="csr")
    sm = sp.kron(sp.kron(left, _SIGMA_MINUS), right, format="csr")
    s_minus = SparseOperator(space, sm)
    return {"sigma_minus": s_minus, "sigma_plus": s_minus.adjoint()}


def collective_full_operators(space: FullAtomSpace) -> dict[str, SparseOperator]:
    """Sums of single-atom operators on the full space (``J^-``, ``J^+``, ``J_z``)."""
    jm = None
    for i in range(space.n_atoms):
        s = individual_atom_operators(space, i)["sigma_minus"]
        jm = s if jm is None else jm + s
    bits = np.array([bin(k).count("1") for k in range(space.dim)])
    jz = SparseOperator(space, sp.diags(bits - space.n_atoms / 2.0, format="csr").astype(complex))
    return {"J_minus": jm, "J_plus": jm.adjoint(), "J_z": jz}


def tensor(a: SparseOperator, b: SparseOperator) -> SparseOperator:
    """Kronecker product ``a (x) b``; the first operand is the leftmost factor."""
    return SparseOperator(compose(a.space, b.space), sp.kron(a.matrix, b.matrix, format="csr"))


def partial_trace(rho: DensityMatrix, keep) -> DensityMatrix:
    """Reduce ``rho`` to the subsystem(s) named by ``keep`` (label, index or list)."""
    space = rho.space
    if not isinstance(space, CompositeSpace):
        raise SpaceMismatchError("partial_trace requires a composite space")
    keep_list = keep if isinstance(keep, (list, tuple)) else [keep]
    idx = sorted({space.subsystem(k) for k in keep_list})
    dims = space.dims
    n = len(dims)
    t = rho.matrix.reshape(dims + dims)
    # einsum letters: row indices a.., column indices shared for traced factors
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n])
    cols = [rows[k] if k not in idx else letters[n + k] for k in range(n)]
    out = "".join(rows[k] for k in idx) + "".join(cols[k] for k in idx)
    red = np.einsum("".join(rows) + "".join(cols) + "->" + out, t)
    kept = [space.factors[k] for k in idx]
    new_space = kept[0] if len(kept) == 1 else CompositeSpace(tuple(kept))
    d = new_space.dim
    return DensityMatrix(new_space, red.reshape(d, d))


def symmetric_isometry(n_atoms: int) -> sp.csr_matrix:
    """Map from the maximal Dicke ladder into the ``2**N`` product space.

    Column ``k`` (``m = k - N/2``) is the normalized uniform superposition
    of all bit strings with ``k`` excited atoms.
    """
    full = FullAtomSpace(n_atoms)
    popcount = np.array([bin(s).count("1") for s in range(full.dim)])
    rows = np.arange(full.dim)
    vals = 1.0 / np.sqrt([comb(n_atoms, int(k)) for k in popcount])
    return sp.csr_matrix((vals.astype(complex), (rows, popcount)), shape=(full.dim, n_atoms + 1))


def symmetric_embed(dicke_state: DensityMatrix, target: FullAtomSpace) -> DensityMatrix:
    space = dicke_state.space
    if not isinstance(space, DickeSpace):
        raise SpaceMismatchError("symmetric_embed expects a state on a DickeSpace")
    if space.n_atoms != target.n_atoms:
        raise SpaceMismatchError(
            f"atom number mismatch: Dicke N={space.n_atoms}, target N={target.n_atoms}"
        )
    if not space.is_maximal:
        raise SpaceMismatchError("only the maximal-J ladder embeds into the symmetric subspace")
    V = symmetric_isometry(target.n_atoms)
    return DensityMatrix(target, V @ dicke_state.matrix @ V.conj().T.toarray())


def dicke_state(space: DickeSpace, two_m: int) -> DensityMatrix:
    """Projector onto ``|J, m>`` with ``m = two_m / 2``."""
    psi = np.zeros(space.dim, dtype=complex)
    psi[space.index(two_m)] = 1.0
    return DensityMatrix.from_ket(space, psi)


def fock_state(space: FockSpace, n: int) -> DensityMatrix:
    if not 0 <= n <= space.n_max:
        raise ValueError(f"photon number {n} outside truncation n_max={space.n_max}")
    psi = np.zeros(space.dim, dtype=complex)
    psi[n] = 1.0
    return DensityMatrix.from_ket(space, psi)


def full_basis_state(space: FullAtomSpace, excited: list[int] | tuple[int, ...]) -> DensityMatrix:
    """Product state with the listed atoms excited, all others in ``|g>``."""
    psi = np.zeros(space.dim, dtype=complex)
    psi[sum(1 << i for i in excited)] = 1.0
    return DensityMatrix.from_ket(space, psi)


def singlet_dark_ket(space: FullAtomSpace) -> np.ndarray:
    """Product of pair singlets ``(|eg> - |ge>)/sqrt(2)`` on atoms (0,1), (2,3), ...

    Requires even ``N``.  The result is annihilated by the collective
    lowering operator, so it does not couple to the cavity mode.
    """
    if space.n_atoms % 2:
        raise ValueError("a pair-singlet dark state needs an even number of atoms")
    singlet = np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2)
    psi = np.ones(1, dtype=complex)
    for _ in range(space.n_atoms // 2):
        psi = np.kron(singlet, psi)
    return psi


def tensor_states(a: DensityMatrix, b: DensityMatrix) -> DensityMatrix:
    return DensityMatrix(compose(a.space, b.space), np.kron(a.matrix, b.matrix))
