"""Reduced atomic dynamics after eliminating the cavity, and photon counting.

In the bad-cavity limit the field follows the atoms adiabatically and the
atoms decay collectively::

    drho/dt = Gc (J- rho J+ - 1/2 {J+ J-, rho}),   Gc = 2 g**2 / kappa

Every collective jump puts one photon into the leaky mode, so the
cumulative photon count is the number of ``J-`` jumps.  Its first two
moments come from a generalized master equation hierarchy, see
:func:`counting_statistics`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dynamics import (
    COLLECTIVE_GAMMA_NOTE,
    LindbladModel,
    PhysicalParameters,
    TimeSeries,
    _unvec,
    _vec,
)
from .hilbert import (
    DensityMatrix,
    DickeSpace,
    FullAtomSpace,
    SpaceMismatchError,
    collective_full_operators,
    dicke_operators,
    dicke_state,
)
from .integrators import IntegratorConfig, integrate


@dataclass(frozen=True)
class ReducedModel:
    n_atoms: int
    collective_rate: float
    residual_gamma: float = 0.0
    two_j: int | None = None
    approximate: bool = False

    def __post_init__(self):
        if not self.collective_rate > 0:
            raise ValueError("collective_rate must be positive")
        if self.residual_gamma > 0 and not self.approximate:
            raise ValueError(
                "residual individual decay is not permutation symmetric; "
                "set approximate=True to treat it as collective decay"
            )

    @property
    def space(self) -> DickeSpace:
        return DickeSpace(self.n_atoms, self.two_j)

    def to_lindblad(self) -> LindbladModel:
        """Lindblad model whose jump 0 is the photon-emitting ``J-`` channel."""
        space = self.space
        ops = dicke_operators(space)
        H = ops["J_z"] * 0.0
        jumps = [(ops["J_minus"], self.collective_rate)]
        meta = {"representation": "reduced", "collective_rate": self.collective_rate,
                "n_atoms": self.n_atoms, "two_j": space.two_j}
        if self.residual_gamma > 0:
            jumps.append((ops["J_minus"], self.residual_gamma))
            meta["approximation"] = COLLECTIVE_GAMMA_NOTE
        return LindbladModel(H, tuple(jumps), meta)


def adiabatic_eliminate(params: PhysicalParameters, two_j: int | None = None,
                        approximate: bool = False) -> ReducedModel:
    """Collective-decay model with ``Gc = 2 g**2 / kappa``.

    ``params.gamma`` is carried over as residual decay and requires
    ``approximate=True`` when nonzero.
    """
    if params.kappa <= 0:
        raise ValueError("adiabatic elimination needs kappa > 0")
    if params.g <= 0:
        raise ValueError("adiabatic elimination needs g > 0")
    return ReducedModel(params.n_atoms, 2.0 * params.g ** 2 / params.kappa,
                        params.gamma, two_j, approximate)


@dataclass(frozen=True)
class RegimeReport:
    ratio_low: float
    ratio_high: float
    threshold: float
    passed: bool

    def to_dict(self) -> dict:
        def num(x):
            return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")
        return {"ratio_low": num(self.ratio_low), "ratio_high": num(self.ratio_high),
                "threshold": self.threshold, "pass": self.passed}


def regime_check(params: PhysicalParameters, threshold: float = 0.1) -> RegimeReport:
    """Test ``Gamma << g sqrt(N) << kappa`` as two ratios against ``threshold``.

    ``ratio_low = Gamma / (g sqrt(N))`` and ``ratio_high = g sqrt(N) / kappa``;
    the regime holds when both are ``<= threshold``.  Zero denominators give
    an infinite ratio (or 0 if the numerator is also 0).
    """
    gsn = params.g * math.sqrt(params.n_atoms)

    def ratio(a, b):
        if b > 0:
            return a / b
        return 0.0 if a == 0 else math.inf

    lo, hi = ratio(params.gamma, gsn), ratio(gsn, params.kappa)
    return RegimeReport(lo, hi, threshold, bool(lo <= threshold and hi <= threshold))


def emission_rate(model: ReducedModel, rho: DensityMatrix) -> float:
    """Photon emission rate ``Gc <J+ J->``.

    Accepts a state on the model's Dicke ladder or on the full product space
    of the same atom number (where the collective sums are built explicitly).
    """
    space = rho.space
    if isinstance(space, DickeSpace):
        if space.n_atoms != model.n_atoms or space.two_j != model.space.two_j:
            raise SpaceMismatchError(f"state on {space}, model on {model.space}")
        ops = dicke_operators(space)
    elif isinstance(space, FullAtomSpace):
        if space.n_atoms != model.n_atoms:
            raise SpaceMismatchError(f"state has {space.n_atoms} atoms, model {model.n_atoms}")
        ops = collective_full_operators(space)
    else:
        raise SpaceMismatchError("emission_rate expects an atomic state")
    jpjm = (ops["J_plus"] @ ops["J_minus"]).matrix
    val = complex(jpjm.multiply(rho.matrix.T).sum()).real
    return model.collective_rate * max(val, 0.0)


@dataclass
class CountingStatistics:
    """Moments of the cumulative photon count ``n(t)``."""

    times: np.ndarray
    mean_count: np.ndarray
    var_count: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def mandel_q(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            q = self.var_count / self.mean_count - 1.0
        return np.where(self.mean_count > 0, q, np.nan)

    def to_timeseries(self) -> TimeSeries:
        return TimeSeries(
            self.times,
            {"mean_count": self.mean_count, "var_count": self.var_count,
             "mandel_q": self.mandel_q},
            {}, [], dict(self.metadata),
        )

    def to_csv(self, path=None) -> str:
        return self.to_timeseries().to_csv(path)

    def to_json(self, path=None) -> str:
        return self.to_timeseries().to_json(path)


def _as_lindblad(model) -> LindbladModel:
    return model.to_lindblad() if isinstance(model, ReducedModel) else model


def counting_statistics(model, rho0: DensityMatrix, config: IntegratorConfig,
                        channel: int = 0) -> CountingStatistics:
    """Mean and variance of the photons counted in one jump channel.

    With ``J rho = rate L rho L^+`` the monitored jump superoperator and
    ``Lv`` the full Liouvillian, the hierarchy::

        rho0' = Lv rho0
        rho1' = Lv rho1 + J rho0
        rho2' = Lv rho2 + 2 J rho1

    started from ``(rho0, 0, 0)`` gives ``tr rho1 = <n>`` and
    ``tr rho2 = <n (n - 1)>``, so ``var = <n> + tr rho2 - <n>**2``.

    ``model`` is a :class:`ReducedModel` (channel 0 is the collective
    emission) or any :class:`LindbladModel`, e.g. the full cavity model with
    channel 0 the mirror leakage ``a`` at rate ``2 kappa``.
    """
    lind = _as_lindblad(model)
    if rho0.space != lind.space:
        raise SpaceMismatchError(f"initial state on {rho0.space}, model on {lind.space}")
    d = lind.dim
    lv = lind.liouvillian()
    jm = lind.jump_superoperator(channel)
    gen = sp.bmat([[lv, None, None], [jm, lv, None], [None, 2 * jm, lv]], format="csr")
    y0 = np.concatenate([_vec(rho0.matrix), np.zeros(2 * d * d, dtype=complex)])

    def rhs(t, y):
        return gen @ y

    times, states, _ = integrate(rhs, y0, config)
    dd = d * d
    idx = np.arange(d) * (d + 1)  # diagonal positions in a column-stacked matrix
    mean = np.array([y[dd:2 * dd][idx].sum().real for y in states])
    fact2 = np.array([y[2 * dd:][idx].sum().real for y in states])
    var = mean + fact2 - mean ** 2
    # cancellation leaves round-off of either sign on sub-Poissonian counts
    tiny = np.abs(var) < 1e-9 * np.maximum(1.0, mean ** 2)
    var = np.where(tiny & (var < 0), 0.0, var)
    meta = dict(lind.metadata)
    meta["channel"] = channel
    return CountingStatistics(times, mean, var, meta)


def emission_rate_series(model: ReducedModel, rho0: DensityMatrix,
                         config: IntegratorConfig) -> tuple[np.ndarray, np.ndarray]:
    """``(times, Gc <J+J->(t))`` from plain density-matrix evolution."""
    lind = model.to_lindblad()
    if rho0.space != lind.space:
        raise SpaceMismatchError(f"initial state on {rho0.space}, model on {lind.space}")
    d = lind.dim
    lv = lind.liouvillian()
    ops = dicke_operators(model.space)
    jpjm = (ops["J_plus"] @ ops["J_minus"]).matrix

    def rhs(t, y):
        return lv @ y

    times, states, _ = integrate(rhs, _vec(rho0.matrix), config)
    rates = np.array([complex(jpjm.multiply(_unvec(y, d).T).sum()).real for y in states])
    return times, model.collective_rate * rates


def superradiant_peak_rate(n_atoms: int, collective_rate: float = 1.0,
                           n_points: int = 2001, rel_tol: float = 1e-10) -> tuple[float, float]:
    """Peak emission rate and its time for the fully excited Dicke state.

    The rate is sampled on a uniform grid spanning ``10 / (Gc N)`` and the
    maximum refined by a parabola through the three best samples.
    """
    model = ReducedModel(n_atoms, collective_rate)
    rho0 = dicke_state(model.space, n_atoms)
    t_end = 10.0 / (collective_rate * n_atoms) * max(1.0, math.log(n_atoms))
    cfg = IntegratorConfig.uniform(t_end, n_points, rel_tol=rel_tol, abs_tol=1e-12)
    t, r = emission_rate_series(model, rho0, cfg)
    k = int(np.argmax(r))
    if 0 < k < len(r) - 1:
        y0, y1, y2 = r[k - 1], r[k], r[k + 1]
        denom = y0 - 2 * y1 + y2
        if denom < 0:
            s = 0.5 * (y0 - y2) / denom
            h = t[1] - t[0]
            return float(y1 - 0.25 * (y0 - y2) * s), float(t[k] + s * h)
    return float(r[k]), float(t[k])
