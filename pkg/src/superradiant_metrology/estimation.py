"""Error-propagation parameter estimation and N-scaling of the uncertainty.

The uncertainty of an estimate of ``x`` from ``M`` repeated measurements of
an observable ``A`` is::

    dx = sqrt(<dA^2>_x) / (sqrt(M) |d<A>_x/dx|)

For photon counting from a superradiant ensemble the closed form is
``sqrt(2) / (sqrt(M) g t sqrt(N (N + 2)))``, which looks Heisenberg-like
(``~1/N``).  Inside the superradiant regime the coupling has to satisfy
``g sqrt(N) << kappa``; holding a fixed margin ``g sqrt(N) = kappa / c``
turns the same expression into ``~1/sqrt(N)`` scaling.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import PhysicalParameters
from .hilbert import DickeSpace, dicke_state
from .integrators import IntegratorConfig
from .superradiance import ReducedModel, counting_statistics, regime_check

DERIVATIVE_FLOOR = 1e-12


class InsensitiveObservableError(ValueError):
    """The observable's mean does not respond to ``x`` at the evaluation point."""


@dataclass(frozen=True)
class StatisticsAtX:
    x: float
    mean_A: float
    var_A: float

    def __post_init__(self):
        if self.var_A < 0:
            raise ValueError(f"variance must be >= 0, got {self.var_A}")


@dataclass(frozen=True)
class EstimationResult:
    x0: float
    delta_x: float
    derivative: float
    repetitions: int
    step_used: float
    mean_A: float
    var_A: float

    def to_dict(self) -> dict:
        return asdict(self)


def _as_stats(value, x) -> StatisticsAtX:
    if isinstance(value, StatisticsAtX):
        return value
    mean, var = value
    return StatisticsAtX(x, float(mean), float(var))


def richardson_derivative(f: Callable[[float], float], x0: float, step: float,
                          levels: int = 1) -> float:
    """Central difference at ``x0`` with ``levels`` rounds of Richardson extrapolation.

    Level 0 is the plain ``O(h^2)`` central difference; each extra level
    halves the step and cancels the next even power of ``h``.
    """
    table = []
    for i in range(levels + 1):
        h = step / 2 ** i
        row = [(f(x0 + h) - f(x0 - h)) / (2 * h)]
        for k in range(1, i + 1):
            fac = 4 ** k
            row.append((fac * row[k - 1] - table[i - 1][k - 1]) / (fac - 1))
        table.append(row)
    return table[-1][-1]


def delta_x_from_statistics(
    sampler: Callable[[float], StatisticsAtX],
    x0: float,
    M: int = 1,
    step: float | None = None,
    richardson_levels: int = 1,
) -> EstimationResult:
    """Error-propagation uncertainty of ``x`` at ``x0``.

    ``sampler(x)`` returns a :class:`StatisticsAtX` (or a ``(mean, var)``
    pair).  The default finite-difference step is ``1e-3 * max(|x0|, 1)``.

    Raises
    ------
    InsensitiveObservableError
        If ``|d<A>/dx| < 1e-12``.
    """
    if int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M}")
    if step is None:
        step = 1e-3 * max(abs(x0), 1.0)
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    cache: dict[float, StatisticsAtX] = {}

    def stats(x):
        if x not in cache:
            cache[x] = _as_stats(sampler(x), x)
        return cache[x]

    deriv = richardson_derivative(lambda x: stats(x).mean_A, x0, step, richardson_levels)
    at0 = stats(x0)
    if not abs(deriv) >= DERIVATIVE_FLOOR:
        raise InsensitiveObservableError(
            f"|d<A>/dx| = {abs(deriv):.3e} at x0={x0}: the observable does not resolve x here; "
            "choose another evaluation point, a longer measurement time, or a different observable"
        )
    dx = math.sqrt(at0.var_A) / (math.sqrt(M) * abs(deriv))
    return EstimationResult(float(x0), dx, float(deriv), int(M), float(step),
                            at0.mean_A, at0.var_A)


def _check_positive(**kw):
    for k, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"{k} must be positive, got {v}")


def delta_x_closed_form(n_atoms: float, g: float, t: float, M: float = 1,
                        asymptotic: bool = False) -> float:
    """``sqrt(2) / (sqrt(M) g t sqrt(N (N+2)))``; with ``asymptotic`` the large-N
    form ``sqrt(2) / (sqrt(M) g t N)``."""
    _check_positive(n_atoms=n_atoms, g=g, t=t, M=M)
    root = n_atoms if asymptotic else math.sqrt(n_atoms * (n_atoms + 2))
    return math.sqrt(2) / (math.sqrt(M) * g * t * root)


def sql_bound(n_atoms: float, kappa: float, t: float, M: float = 1) -> float:
    """Standard-quantum-limit comparison value ``sqrt(2) / (sqrt(M) kappa t sqrt(N))``."""
    _check_positive(n_atoms=n_atoms, kappa=kappa, t=t, M=M)
    return math.sqrt(2) / (math.sqrt(M) * kappa * t * math.sqrt(n_atoms))


@dataclass(frozen=True)
class LimitComparison:
    heisenberg: float
    heisenberg_asymptotic: float
    sql: float
    margin: float  # kappa / (g sqrt(N))
    dominant: str
    inequality_holds: bool

    def to_dict(self) -> dict:
        return asdict(self)


def compare_limits(params: PhysicalParameters, t: float, M: float = 1) -> LimitComparison:
    """Compare the collective closed form against the SQL value.

    ``inequality_holds`` means the closed-form uncertainty is the larger of
    the two (the SQL value is the tighter one).  Their ratio is
    ``(kappa / (g sqrt(N))) * sqrt(N / (N + 2))``.  ``dominant`` names the
    larger uncertainty, i.e. the one that limits the achievable precision.
    """
    N = params.n_atoms
    h = delta_x_closed_form(N, params.g, t, M)
    s = sql_bound(N, params.kappa, t, M)
    holds = h > s
    return LimitComparison(
        heisenberg=h,
        heisenberg_asymptotic=delta_x_closed_form(N, params.g, t, M, asymptotic=True),
        sql=s,
        margin=params.kappa / (params.g * math.sqrt(N)),
        dominant="heisenberg" if holds else "sql",
        inequality_holds=bool(holds),
    )


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    r_squared: float

    def to_dict(self) -> dict:
        return asdict(self)


def fit_power_law(points: Sequence[tuple[float, float]]) -> PowerLawFit:
    """Least-squares line through ``(log N, log value)``: ``value ~ prefactor * N**exponent``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two (N, value) points to fit")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("power-law fit needs positive, finite N and values")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if np.ptp(lx) == 0:
        raise ValueError("need at least two distinct N values")
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(float(slope), float(math.exp(intercept)), float(r2))


# --------------------------------------------------------------------------- #
#                       samplers for the counting observable                   #
# --------------------------------------------------------------------------- #

def superradiance_sampler(
    n_atoms: int,
    kappa: float,
    t: float,
    two_m: int | None = None,
    two_j: int | None = None,
    rel_tol: float = 1e-11,
    abs_tol: float = 1e-13,
) -> Callable[[float], StatisticsAtX]:
    """Sampler for ``x = g t``: the observable is the photon count up to ``t``.

    The measurement time ``t`` is fixed and ``x`` sets the coupling
    ``g = x / t``.  Counts follow the reduced collective-decay model with
    ``Gc = 2 g**2 / kappa``.  The initial state is ``|J, m>``
    (default fully excited).
    """
    _check_positive(n_atoms=n_atoms, kappa=kappa, t=t)
    space = DickeSpace(n_atoms, two_j)
    rho0 = dicke_state(space, space.two_j if two_m is None else two_m)
    cfg = IntegratorConfig(t_final=t, record_grid=(t,), rel_tol=rel_tol, abs_tol=abs_tol)

    def sample(x: float) -> StatisticsAtX:
        g = x / t
        model = ReducedModel(n_atoms, 2.0 * g * g / kappa, two_j=space.two_j)
        st = counting_statistics(model, rho0, cfg)
        return StatisticsAtX(x, float(st.mean_count[-1]), max(float(st.var_count[-1]), 0.0))

    return sample


def params_sampler(
    params_at: Callable[[float], PhysicalParameters],
    t: float,
    two_m: int | None = None,
    rel_tol: float = 1e-11,
    abs_tol: float = 1e-13,
) -> Callable[[float], StatisticsAtX]:
    """Photon-count sampler for an arbitrary ``x -> PhysicalParameters`` binding."""
    _check_positive(t=t)
    cfg = IntegratorConfig(t_final=t, record_grid=(t,), rel_tol=rel_tol, abs_tol=abs_tol)

    def sample(x: float) -> StatisticsAtX:
        p = params_at(x)
        model = ReducedModel(p.n_atoms, 2.0 * p.g ** 2 / p.kappa)
        rho0 = dicke_state(model.space, p.n_atoms if two_m is None else two_m)
        st = counting_statistics(model, rho0, cfg)
        return StatisticsAtX(x, float(st.mean_count[-1]), max(float(st.var_count[-1]), 0.0))

    return sample


# --------------------------------------------------------------------------- #
#                                scaling sweeps                               #
# --------------------------------------------------------------------------- #

@dataclass
class ScalingRow:
    n_atoms: int
    g: float
    kappa: float
    t: float
    M: int
    delta_x_heisenberg: float
    delta_x_sql: float
    regime_ratio_high: float
    inequality_holds: bool
    delta_x_numeric: float | None = None
    flags: list = field(default_factory=list)


@dataclass
class SweepResult:
    rows: list
    constraint: dict
    heisenberg_fit: PowerLawFit
    sql_fit: PowerLawFit
    numeric_fit: PowerLawFit | None = None

    CSV_COLUMNS = ("N", "g", "kappa", "t", "M", "delta_x_eq8", "delta_x_sql",
                   "delta_x_numeric", "regime_ratio_high", "flags")

    def csv_rows(self) -> list[list[str]]:
        out = [list(self.CSV_COLUMNS)]
        for r in self.rows:
            out.append([
                str(r.n_atoms), repr(float(r.g)), repr(float(r.kappa)), repr(float(r.t)),
                str(r.M), repr(float(r.delta_x_heisenberg)), repr(float(r.delta_x_sql)),
                "" if r.delta_x_numeric is None else repr(float(r.delta_x_numeric)),
                repr(float(r.regime_ratio_high)), ";".join(r.flags),
            ])
        return out

    def summary(self) -> dict:
        d = {
            "constraint": dict(self.constraint),
            "n_list": [r.n_atoms for r in self.rows],
            "exponents": {
                "delta_x_eq8": self.heisenberg_fit.to_dict(),
                "delta_x_sql": self.sql_fit.to_dict(),
            },
            "flagged_rows": [r.n_atoms for r in self.rows if r.flags],
        }
        if self.numeric_fit is not None:
            d["exponents"]["delta_x_numeric"] = self.numeric_fit.to_dict()
        return d


def scaling_sweep(
    n_list: Sequence[int],
    constraint: str,
    kappa: float,
    t: float,
    M: int = 1,
    g: float | None = None,
    margin: float | None = None,
    simulate: bool = False,
    simulate_max_atoms: int = 16,
    threads: int = 1,
    noise: float = 0.0,
    seed: int | None = None,
) -> SweepResult:
    """Evaluate the closed form and the SQL value over ``n_list``.

    Parameters
    ----------
    constraint : {"fixed_g", "fixed_margin"}
        ``fixed_g`` keeps ``g`` constant; rows with ``g sqrt(N) >= kappa``
        leave the superradiant regime and are flagged (never dropped).
        ``fixed_margin`` sets ``g = kappa / (margin sqrt(N))`` with
        ``margin > 1``.
    simulate : bool
        Add ``delta_x_numeric`` from the photon-counting pipeline
        (``x = g t``) for ``N <= simulate_max_atoms``.
    noise, seed
        Optional multiplicative log-normal noise on the closed-form values,
        only meant for exercising the fitting path with synthetic data.
    """
    ns = [int(n) for n in n_list]
    if len(ns) < 2:
        raise ValueError("n_list needs at least two entries to fit an exponent")
    if any(n < 1 for n in ns):
        raise ValueError("atom numbers must be positive")
    _check_positive(kappa=kappa, t=t, M=M)
    if constraint == "fixed_g":
        if g is None:
            raise ValueError("fixed_g constraint needs g")
        _check_positive(g=g)
        coupling = {n: g for n in ns}
        cdesc = {"kind": "fixed_g", "g": g}
    elif constraint == "fixed_margin":
        if margin is None or not margin > 1:
            raise ValueError("fixed_margin constraint needs margin c > 1")
        coupling = {n: kappa / (margin * math.sqrt(n)) for n in ns}
        cdesc = {"kind": "fixed_margin", "c": margin}
    else:
        raise ValueError(f"unknown constraint {constraint!r}")
    ns = sorted(ns)
    rng = np.random.default_rng(seed)
    noise_factors = np.exp(noise * rng.standard_normal(len(ns))) if noise else np.ones(len(ns))

    def row(i_n):
        i, n = i_n
        gn = coupling[n]
        p = PhysicalParameters(gn, kappa, 0.0, n)
        cmp = compare_limits(p, t, M)
        flags = []
        ratio_high = regime_check(p).ratio_high
        if gn * math.sqrt(n) >= kappa:
            flags.append("outside_superradiant_regime")
        r = ScalingRow(n, gn, kappa, t, int(M), cmp.heisenberg * noise_factors[i], cmp.sql,
                       ratio_high, cmp.inequality_holds, None, flags)
        if simulate and n <= simulate_max_atoms:
            res = delta_x_from_statistics(superradiance_sampler(n, kappa, t), gn * t, M)
            r.delta_x_numeric = res.delta_x
        return r

    items = list(enumerate(ns))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, items))
    else:
        rows = [row(it) for it in items]

    hfit = fit_power_law([(r.n_atoms, r.delta_x_heisenberg) for r in rows])
    sfit = fit_power_law([(r.n_atoms, r.delta_x_sql) for r in rows])
    num = [(r.n_atoms, r.delta_x_numeric) for r in rows if r.delta_x_numeric is not None]
    nfit = fit_power_law(num) if len(num) >= 2 else None
    return SweepResult(rows, cdesc, hfit, sfit, nfit)
