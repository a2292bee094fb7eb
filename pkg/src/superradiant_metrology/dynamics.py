"""Dissipative Tavis-Cummings model and Lindblad master-equation evolution.

The master equation is written in standard Lindblad form (hbar = 1)::

    drho/dt = -i[H, rho] + sum_k rate_k (L_k rho L_k^+ - 1/2 {L_k^+ L_k, rho})

Cavity loss enters as the jump ``a`` with rate ``2 kappa`` (photon lifetime
``1/(2 kappa)``), spontaneous emission of atom ``i`` as the jump
``sigma_i^-`` with rate ``Gamma``.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .hilbert import (
    CompositeSpace,
    DensityMatrix,
    DickeSpace,
    FockSpace,
    FullAtomSpace,
    SpaceMismatchError,
    SparseOperator,
    collective_full_operators,
    dicke_operators,
    find_factor,
    fock_operators,
    identity,
    individual_atom_operators,
    min_eigenvalue,
    tensor,
)
from .integrators import IntegratorConfig, integrate

LEAKAGE_THRESHOLD = 1e-6
TRACE_FLAG_THRESHOLD = 1e-9

COLLECTIVE_GAMMA_NOTE = (
    "approximation: individual spontaneous emission replaced by collective "
    "decay Gamma*D[J-] to keep permutation symmetry"
)


class TruncationWarning(UserWarning):
    """Population of the highest retained Fock state exceeded the threshold."""


@dataclass(frozen=True)
class PhysicalParameters:
    """Model parameters in natural units (hbar = 1, rates as angular frequencies)."""

    g: float
    kappa: float
    gamma: float = 0.0
    n_atoms: int = 1

    def __post_init__(self):
        for name in ("g", "kappa", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise ValueError(f"n_atoms must be a positive integer, got {self.n_atoms}")

    def replace(self, **changes) -> "PhysicalParameters":
        d = dict(g=self.g, kappa=self.kappa, gamma=self.gamma, n_atoms=self.n_atoms)
        d.update(changes)
        return PhysicalParameters(**d)


@dataclass(frozen=True, eq=False)
class LindbladModel:
    hamiltonian: SparseOperator
    jumps: tuple = ()
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        space = self.hamiltonian.space
        jumps = tuple((op, float(rate)) for op, rate in self.jumps)
        for op, rate in jumps:
            if op.space != space:
                raise SpaceMismatchError("all model operators must share one space")
            if not rate >= 0:
                raise ValueError(f"jump rates must be >= 0, got {rate}")
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "metadata", dict(self.metadata))
        object.__setattr__(self, "_cache", {})

    @property
    def space(self):
        return self.hamiltonian.space

    @property
    def dim(self) -> int:
        return self.space.dim

    def effective_hamiltonian(self) -> sp.csr_matrix:
        """``H - i/2 sum_k rate_k L_k^+ L_k``."""
        if "heff" not in self._cache:
            heff = self.hamiltonian.matrix.copy()
            for op, rate in self.jumps:
                if rate:
                    heff = heff - 0.5j * rate * (op.matrix.conj().T @ op.matrix)
            self._cache["heff"] = heff.tocsr()
        return self._cache["heff"]

    def jump_superoperator(self, index: int) -> sp.csr_matrix:
        """Superoperator of ``rho -> rate L rho L^+`` for one jump channel.

        Column-stacking convention: ``vec(A X B) = (B^T kron A) vec(X)``.
        """
        key = ("jump", index)
        if key not in self._cache:
            op, rate = self.jumps[index]
            L = op.matrix
            self._cache[key] = (rate * sp.kron(L.conj(), L, format="csr")).tocsr()
        return self._cache[key]

    def liouvillian(self) -> sp.csr_matrix:
        if "liouvillian" not in self._cache:
            d = self.dim
            eye = sp.identity(d, dtype=complex, format="csr")
            heff = self.effective_hamiltonian()
            # -i (Heff rho - rho Heff^+)
            lv = -1j * sp.kron(eye, heff) + 1j * sp.kron(heff.conj(), eye)
            for k, (_, rate) in enumerate(self.jumps):
                if rate:
                    lv = lv + self.jump_superoperator(k)
            self._cache["liouvillian"] = lv.tocsr()
        return self._cache["liouvillian"]


# --------------------------------------------------------------------------- #
#                              model building                                 #
# --------------------------------------------------------------------------- #

def build_tavis_cummings(
    params: PhysicalParameters,
    n_max: int,
    representation: str = "dicke",
    collective_gamma: bool = False,
    two_j: int | None = None,
) -> LindbladModel:
    """Assemble ``H = g (J- a^+ + J+ a)`` with cavity and atomic losses.

    Parameters
    ----------
    params : PhysicalParameters
    n_max : int
        Photon-number truncation (>= 1).
    representation : {"dicke", "full"}
        ``"dicke"`` uses the collective ladder (dimension N+1, or 2J+1 when
        ``two_j`` is given); ``"full"`` the explicit 2**N product space.
    collective_gamma : bool
        Individual decay is not permutation symmetric, so the Dicke
        representation refuses ``gamma > 0`` unless this flag maps it to
        collective decay ``gamma D[J-]``.  The model metadata then carries
        an ``approximation`` entry.
    two_j : int, optional
        Twice the total spin for the Dicke ladder (defaults to N).
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    field_space = FockSpace(n_max)
    f_ops = fock_operators(field_space)
    metadata = {"representation": representation, "n_max": n_max,
                "params": dict(g=params.g, kappa=params.kappa, gamma=params.gamma,
                               n_atoms=params.n_atoms)}
    if representation == "dicke":
        atoms = DickeSpace(params.n_atoms, two_j)
        a_ops = dicke_operators(atoms)
        metadata["two_j"] = atoms.two_j
        if params.gamma > 0 and not collective_gamma:
            raise ValueError(
                "gamma > 0 is not permutation symmetric; use representation='full' "
                "or pass collective_gamma=True to accept collective decay"
            )
    elif representation == "full":
        if two_j is not None:
            raise ValueError("two_j only applies to the dicke representation")
        atoms = FullAtomSpace(params.n_atoms)
        a_ops = collective_full_operators(atoms)
    else:
        raise ValueError(f"unknown representation {representation!r}")

    id_a, id_f = identity(atoms), identity(field_space)
    H = params.g * (tensor(a_ops["J_minus"], f_ops["a_dagger"])
                    + tensor(a_ops["J_plus"], f_ops["a"]))
    jumps = [(tensor(id_a, f_ops["a"]), 2.0 * params.kappa)]
    if params.gamma > 0:
        if representation == "full":
            for i in range(params.n_atoms):
                sm = individual_atom_operators(atoms, i)["sigma_minus"]
                jumps.append((tensor(sm, id_f), params.gamma))
        else:
            jumps.append((tensor(a_ops["J_minus"], id_f), params.gamma))
            metadata["approximation"] = COLLECTIVE_GAMMA_NOTE
    return LindbladModel(H, tuple(jumps), metadata)


def standard_observables(model: LindbladModel) -> dict[str, SparseOperator]:
    """Named observables for a Tavis-Cummings model built by this module.

    ``photon_number`` (a^+ a), ``photon_flux`` (2 kappa a^+ a, the leakage
    rate through the mirror), ``atomic_excitation`` (J_z + N/2) and
    ``excitation_number`` (their sum, conserved without losses).
    """
    space = model.space
    atoms = space.factors[0]
    field_space = space.factors[1]
    f_ops = fock_operators(field_space)
    if isinstance(atoms, DickeSpace):
        a_ops = dicke_operators(atoms)
    else:
        a_ops = collective_full_operators(atoms)
    id_a, id_f = identity(atoms), identity(field_space)
    n_op = tensor(id_a, f_ops["number"])
    exc = tensor(a_ops["J_z"] + identity(atoms) * (atoms.n_atoms / 2.0), id_f)
    kappa = model.metadata.get("params", {}).get("kappa", 0.0)
    return {
        "photon_number": n_op,
        "photon_flux": n_op * (2.0 * kappa),
        "atomic_excitation": exc,
        "excitation_number": exc + n_op,
    }


# --------------------------------------------------------------------------- #
#                                 evolution                                   #
# --------------------------------------------------------------------------- #

def lindblad_rhs(model: LindbladModel, rho) -> np.ndarray:
    """Time derivative of ``rho`` from operator products (no superoperator)."""
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if isinstance(rho, DensityMatrix) and rho.space != model.space:
        raise SpaceMismatchError(f"state on {rho.space}, model on {model.space}")
    if mat.shape != (model.dim, model.dim):
        raise SpaceMismatchError(f"state shape {mat.shape} vs model dim {model.dim}")
    H = model.hamiltonian.matrix
    out = -1j * (H @ mat - (H.T @ mat.T).T)
    for op, rate in model.jumps:
        if not rate:
            continue
        L = op.matrix
        LdL = L.conj().T @ L
        Lrho = L @ mat
        out = out + rate * ((L.conj() @ Lrho.T).T - 0.5 * (LdL @ mat + (LdL.T @ mat.T).T))
    return np.asarray(out)


def expectation(rho, op: SparseOperator, hermitian: bool | None = None):
    """``tr(op rho)``; real for Hermitian operators.

    The imaginary residue of a Hermitian expectation is checked against
    ``1e-10`` (relative to the operator scale).
    """
    mat = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if isinstance(rho, DensityMatrix) and rho.space != op.space:
        raise SpaceMismatchError(f"state on {rho.space}, operator on {op.space}")
    if mat.shape != op.shape:
        raise SpaceMismatchError(f"state shape {mat.shape} vs operator shape {op.shape}")
    val = complex(op.matrix.multiply(mat.T).sum())
    if hermitian is None:
        hermitian = op.is_hermitian(tol=1e-14)
    if hermitian:
        scale = max(1.0, op.max_abs())
        if abs(val.imag) > 1e-10 * scale:
            raise ValueError(f"Hermitian expectation has imaginary residue {val.imag:.3e}")
        return val.real
    return val


def _vec(mat: np.ndarray) -> np.ndarray:
    return np.asarray(mat, dtype=complex).reshape(-1, order="F")


def _unvec(v: np.ndarray, d: int) -> np.ndarray:
    return v.reshape(d, d, order="F")


@dataclass
class TimeSeries:
    """Sampled expectation values plus physicality diagnostics."""

    times: np.ndarray
    expectations: dict
    diagnostics: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        n = len(self.times)
        for group in (self.expectations, self.diagnostics):
            for name, vals in group.items():
                group[name] = np.asarray(vals)
                if len(group[name]) != n:
                    raise ValueError(f"channel {name!r} has {len(vals)} samples, expected {n}")

    def columns(self) -> list[tuple[str, np.ndarray]]:
        cols = [("t", self.times)]
        for group in (self.expectations, self.diagnostics):
            for name, vals in group.items():
                if np.iscomplexobj(vals):
                    cols.append((f"{name}_re", vals.real))
                    cols.append((f"{name}_im", vals.imag))
                else:
                    cols.append((name, vals))
        return cols

    def to_csv(self, path=None) -> str:
        """CSV with ``t``, one column per channel, then diagnostics."""
        cols = self.columns()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([c[0] for c in cols])
        for i in range(len(self.times)):
            w.writerow([_fmt(c[1][i]) for c in cols])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        def enc(vals):
            if np.iscomplexobj(vals):
                return {"re": [_jnum(v) for v in vals.real], "im": [_jnum(v) for v in vals.imag]}
            return [_jnum(v) for v in vals]

        return {
            "times": [_jnum(t) for t in self.times],
            "channels": {k: enc(v) for k, v in self.expectations.items()},
            "diagnostics": {k: enc(v) for k, v in self.diagnostics.items()},
            "flags": list(self.flags),
            "metadata": _jsonable(self.metadata),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "TimeSeries":
        def dec(v):
            if isinstance(v, dict):
                return np.array(_unjnum(v["re"])) + 1j * np.array(_unjnum(v["im"]))
            return np.array(_unjnum(v), dtype=float)

        return cls(
            times=np.array(d["times"], dtype=float),
            expectations={k: dec(v) for k, v in d["channels"].items()},
            diagnostics={k: dec(v) for k, v in d.get("diagnostics", {}).items()},
            flags=list(d.get("flags", [])),
            metadata=dict(d.get("metadata", {})),
        )


def _fmt(x) -> str:
    x = float(x)
    if np.isnan(x):
        return "nan"
    return repr(x)


def _jnum(x):
    x = float(x)
    if np.isnan(x):
        return None
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _unjnum(vals):
    out = []
    for v in vals:
        if v is None:
            out.append(np.nan)
        elif isinstance(v, str):
            out.append(float(v))
        else:
            out.append(v)
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _jnum(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def truncation_leakage(rho: np.ndarray, space) -> float | None:
    """Population of the highest Fock state, or None if there is no field."""
    found = find_factor(space, FockSpace)
    if found is None:
        return None
    idx, fock = found
    factors = space.factors if isinstance(space, CompositeSpace) else (space,)
    dims = tuple(f.dim for f in factors)
    diag = np.real(np.diagonal(rho)).reshape(dims)
    return float(np.take(diag, fock.n_max, axis=idx).sum())


def evolve(
    model: LindbladModel,
    rho0: DensityMatrix,
    config: IntegratorConfig,
    observables: Mapping[str, SparseOperator] | None = None,
    positivity: bool | str = "auto",
    return_states: bool = False,
) -> TimeSeries:
    """Integrate the master equation and sample observables on the record grid.

    Diagnostics recorded at each sample: ``trace_deviation``,
    ``hermiticity`` and, when a field mode is present, ``truncation_leakage``.
    ``min_eigenvalue`` is added when ``positivity`` is True (``"auto"``
    enables it for dimension <= 200).  Threshold breaches are appended to
    ``flags`` rather than aborting; leakage also raises a
    :class:`TruncationWarning`.

    Raises
    ------
    IntegrationError
        On step-size underflow or a non-finite state.
    """
    if rho0.space != model.space:
        raise SpaceMismatchError(f"initial state on {rho0.space}, model on {model.space}")
    observables = dict(observables or {})
    for name, op in observables.items():
        if op.space != model.space:
            raise SpaceMismatchError(f"observable {name!r} lives on a different space")
    d = model.dim
    lv = model.liouvillian()

    def rhs(t, y):
        return lv @ y

    times, states, stats = integrate(rhs, _vec(rho0.matrix), config)
    if positivity == "auto":
        positivity = d <= 200

    channels = {name: [] for name in observables}
    diag = {"trace_deviation": [], "hermiticity": []}
    if positivity:
        diag["min_eigenvalue"] = []
    has_field = find_factor(model.space, FockSpace) is not None
    if has_field:
        diag["truncation_leakage"] = []
    herm = {name: op.is_hermitian(1e-14) for name, op in observables.items()}
    mats = []
    for y in states:
        rho = _unvec(y, d)
        if return_states:
            mats.append(rho.copy())
        for name, op in observables.items():
            val = complex(op.matrix.multiply(rho.T).sum())
            channels[name].append(val.real if herm[name] else val)
        diag["trace_deviation"].append(abs(np.trace(rho) - 1.0))
        diag["hermiticity"].append(float(np.max(np.abs(rho - rho.conj().T))))
        if positivity:
            diag["min_eigenvalue"].append(min_eigenvalue(rho))
        if has_field:
            diag["truncation_leakage"].append(truncation_leakage(rho, model.space))

    flags = []
    if max(diag["trace_deviation"]) > TRACE_FLAG_THRESHOLD:
        flags.append("trace_deviation")
    if has_field:
        leak = max(diag["truncation_leakage"])
        if leak > LEAKAGE_THRESHOLD:
            flags.append("truncation_leakage")
            warnings.warn(
                f"Fock truncation population reached {leak:.2e} (> {LEAKAGE_THRESHOLD:g}); "
                "increase n_max", TruncationWarning, stacklevel=2)
    meta = dict(model.metadata)
    meta["integrator"] = {
        "method": config.method, "abs_tol": config.abs_tol, "rel_tol": config.rel_tol,
        "n_accepted": stats.n_accepted, "n_rejected": stats.n_rejected, "n_rhs": stats.n_rhs,
    }
    ts = TimeSeries(times, {k: np.array(v) for k, v in channels.items()},
                    {k: np.array(v, dtype=float) for k, v in diag.items()}, flags, meta)
    if return_states:
        ts.states = mats
    return ts

