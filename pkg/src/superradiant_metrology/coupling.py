"""Atom-cavity coupling from the cavity geometry, and its length dependence.

For mode ``n_z`` of a cavity of length ``L``::

    k_z = pi n_z / L,   omega = c k_z,   V = A_perp L
    g = sqrt(hbar omega / (eps0 V)) sin(k_z z) (d.e) / hbar      [rad/s]

The square-root prefactor times the dipole projection is an energy; it is
divided by ``hbar`` so that ``g`` is an angular frequency like every other
rate in the package.  Everything here is in SI units and is the only place
SI input enters; :func:`bind_x_to_model` converts to natural units.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

from scipy import constants

from .dynamics import PhysicalParameters


@dataclass(frozen=True)
class CavityGeometry:
    length: float
    atom_position: float
    transverse_area: float
    dipole_projection: float
    mode_index: int = 1
    epsilon0: float = constants.epsilon_0
    hbar: float = constants.hbar
    c: float = constants.c

    def __post_init__(self):
        for name in ("length", "transverse_area", "epsilon0", "hbar", "c"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if not math.isfinite(self.dipole_projection):
            raise ValueError("dipole_projection must be finite")
        if int(self.mode_index) != self.mode_index or self.mode_index < 1:
            raise ValueError(f"mode_index must be a positive integer, got {self.mode_index}")
        if not 0 <= self.atom_position <= self.length:
            raise ValueError(
                f"atom position z={self.atom_position} outside the cavity [0, {self.length}]"
            )

    @property
    def k_z(self) -> float:
        return math.pi * self.mode_index / self.length

    @property
    def omega(self) -> float:
        return self.c * self.k_z

    @property
    def mode_volume(self) -> float:
        return self.transverse_area * self.length


def _sin_pi(q: float) -> float:
    """``sin(pi q)`` with exact zeros at integers and exact +-1 at half-integers."""
    r = math.fmod(q, 2.0)
    if r == round(r):
        return 0.0
    if 2 * r == round(2 * r):
        return 1.0 if r in (0.5, -1.5) else -1.0
    return math.sin(math.pi * r)


def _cos_pi(q: float) -> float:
    return _sin_pi(q + 0.5)


def _mode_phase(geom: CavityGeometry) -> float:
    # k_z z / pi, kept in half-turns so nodes and antinodes come out exact
    return geom.mode_index * geom.atom_position / geom.length


def coupling_strength(geom: CavityGeometry) -> float:
    """Signed coupling ``g`` in rad/s (negative where ``sin(k_z z) < 0``)."""
    amp = math.sqrt(geom.hbar * geom.omega / (geom.epsilon0 * geom.mode_volume))
    return amp * _sin_pi(_mode_phase(geom)) * geom.dipole_projection / geom.hbar


@dataclass(frozen=True)
class LengthPerturbation:
    """Relative length change ``x = dL / L`` of a reference cavity.

    With ``co_moving=False`` (default) the atom stays put in the lab frame
    while the mirror moves; with ``co_moving=True`` it keeps its fractional
    position ``z / L``.
    """

    x: float
    reference: CavityGeometry
    co_moving: bool = False

    def __post_init__(self):
        if not abs(self.x) < 1:
            raise ValueError(f"|x| must be < 1, got {self.x}")

    def perturbed(self) -> CavityGeometry:
        ref = self.reference
        new_len = ref.length * (1.0 + self.x)
        z = ref.atom_position * (1.0 + self.x) if self.co_moving else ref.atom_position
        if not 0 <= z <= new_len:
            raise ValueError(f"atom at z={z} is outside the perturbed cavity of length {new_len}")
        return replace(ref, length=new_len, atom_position=z)


@dataclass(frozen=True)
class CouplingSensitivity:
    g_at_x: float
    dg_dL: float
    dg_dx: float


def coupling_sensitivity(pert: LengthPerturbation) -> CouplingSensitivity:
    """``g`` at the perturbed length and its analytic length derivatives.

    Writing ``g(L) = K sin(pi n z / L) / L`` (``omega / V ~ 1/L**2``), with
    ``z`` fixed::

        dg/dL = -g / L - K pi n z cos(pi n z / L) / L**3

    For a co-moving atom the sine argument is constant and only ``-g/L``
    remains.  ``dg/dx`` is taken with respect to ``x`` at the reference
    length: ``dg/dx = L_ref dg/dL``.
    """
    geom = pert.perturbed()
    L = geom.length
    g = coupling_strength(geom)
    K = math.sqrt(geom.hbar * geom.c * math.pi * geom.mode_index
                  / (geom.epsilon0 * geom.transverse_area)) * geom.dipole_projection / geom.hbar
    dg_dL = -g / L
    if not pert.co_moving:
        cos = _cos_pi(_mode_phase(geom))
        dg_dL -= K * math.pi * geom.mode_index * geom.atom_position * cos / L ** 3
    return CouplingSensitivity(g, dg_dL, pert.reference.length * dg_dL)


@dataclass(frozen=True)
class UnitConversion:
    """Natural units: rates divided by ``frequency_scale`` (rad/s), times multiplied by it."""

    frequency_scale: float

    def __post_init__(self):
        if not (math.isfinite(self.frequency_scale) and self.frequency_scale > 0):
            raise ValueError("frequency_scale must be positive and finite")

    def rate_to_natural(self, rate_si: float) -> float:
        return rate_si / self.frequency_scale

    def rate_to_si(self, rate_nat: float) -> float:
        return rate_nat * self.frequency_scale

    def time_to_natural(self, t_si: float) -> float:
        return t_si * self.frequency_scale

    def time_to_si(self, t_nat: float) -> float:
        return t_nat / self.frequency_scale

    def to_dict(self) -> dict:
        return {"frequency_scale_rad_per_s": self.frequency_scale,
                "rates": "natural = SI / frequency_scale",
                "times": "natural = SI * frequency_scale"}


@dataclass(frozen=True)
class LengthBinding:
    """Callable ``x -> PhysicalParameters`` (natural units) for a length scheme."""

    reference: CavityGeometry
    params_si: PhysicalParameters
    units: UnitConversion
    co_moving: bool = False

    def __call__(self, x: float) -> PhysicalParameters:
        g = abs(coupling_strength(LengthPerturbation(x, self.reference, self.co_moving).perturbed()))
        return PhysicalParameters(
            g=self.units.rate_to_natural(g),
            kappa=self.units.rate_to_natural(self.params_si.kappa),
            gamma=self.units.rate_to_natural(self.params_si.gamma),
            n_atoms=self.params_si.n_atoms,
        )

    def metadata(self) -> dict:
        return {"unit_conversion": self.units.to_dict(),
                "reference_geometry": asdict(self.reference),
                "co_moving": self.co_moving}


def bind_x_to_model(pert: LengthPerturbation, params: PhysicalParameters,
                    frequency_scale: float | None = None) -> LengthBinding:
    """Map ``x = dL/L`` to natural-unit model parameters.

    ``params`` holds ``kappa`` and ``gamma`` in rad/s (its ``g`` is ignored
    and replaced by ``|g(x)|``).  The default frequency scale is ``|g|`` of
    the reference geometry, so ``g = 1`` at ``x = 0``.
    """
    ref = pert.perturbed() if pert.x else pert.reference
    if frequency_scale is None:
        frequency_scale = abs(coupling_strength(ref))
        if frequency_scale == 0:
            raise ValueError("reference coupling vanishes (atom at a node); "
                             "pass an explicit frequency_scale")
    return LengthBinding(ref, params, UnitConversion(frequency_scale), pert.co_moving)
