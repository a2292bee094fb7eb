"""Explicit Runge-Kutta integrators for linear and nonlinear complex ODEs.

Two methods are provided:

``rk4``
    Classical fixed-step fourth-order scheme.  Each interval between
    consecutive record times is split into equal substeps no longer than
    ``max_step``, so record times are hit exactly.

``dopri5``
    Dormand-Prince 5(4) embedded pair with a PI step-size controller.  The
    fifth-order solution is propagated.  Values on the record grid are
    obtained by cubic Hermite interpolation between accepted steps, using
    the endpoint values and derivatives (FSAL gives both for free).  The
    interpolant is third order in the step size; for linear trace-preserving
    right-hand sides it preserves the trace exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class IntegrationError(RuntimeError):
    """Numerical integration failed (step-size underflow, non-finite state)."""


METHODS = ("rk4", "dopri5")


@dataclass(frozen=True)
class IntegratorConfig:
    t_final: float
    method: str = "dopri5"
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_step: float = np.inf
    record_grid: tuple = ()
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.t_final >= 0:
            raise ValueError(f"t_final must be >= 0, got {self.t_final}")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.method == "rk4" and not np.isfinite(self.max_step):
            raise ValueError("rk4 needs a finite max_step (it is the fixed step size)")
        grid = tuple(float(t) for t in (self.record_grid or (0.0, self.t_final)))
        if any(b < a for a, b in zip(grid, grid[1:])):
            raise ValueError("record_grid must be sorted")
        if grid[0] < 0 or grid[-1] > self.t_final * (1 + 1e-14):
            raise ValueError("record_grid must lie within [0, t_final]")
        object.__setattr__(self, "record_grid", grid)

    @classmethod
    def uniform(cls, t_final: float, n_points: int = 101, **kwargs) -> "IntegratorConfig":
        grid = tuple(np.linspace(0.0, t_final, n_points)) if t_final > 0 else (0.0,)
        return cls(t_final=t_final, record_grid=grid, **kwargs)


@dataclass
class IntegrationStats:
    n_accepted: int = 0
    n_rejected: int = 0
    n_rhs: int = 0


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4
_A_ROWS = [np.array(r) for r in _A]

# PI controller exponents for a 5(4) pair
_ALPHA = 0.7 / 5
_BETA = 0.4 / 5
_SAFETY = 0.9
_FAC_MIN, _FAC_MAX = 0.2, 5.0


def _error_norm(err, y0, y1, atol, rtol):
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    r = np.abs(err) / scale
    return float(np.sqrt(np.dot(r, r) / r.size))


def _hermite(t0, t1, y0, y1, f0, f1, t):
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate_rk4(f, y0, grid, config, stats):
    out = [y0.copy()]
    y, t = y0.copy(), grid[0]
    for t_next in grid[1:]:
        span = t_next - t
        if span > 0:
            n = max(1, int(np.ceil(span / config.max_step - 1e-12)))
            h = span / n
            for _ in range(n):
                y = rk4_step(f, t, y, h)
                t += h
                stats.n_accepted += 1
                stats.n_rhs += 4
            if not np.all(np.isfinite(y)):
                raise IntegrationError(f"non-finite state at t={t}")
        t = t_next
        out.append(y.copy())
    return out


def _initial_step(f, t0, y0, f0, atol, rtol, span):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean(np.abs(y0 / scale) ** 2))
    d1 = np.sqrt(np.mean(np.abs(f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = np.sqrt(np.mean(np.abs((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def _integrate_dopri5(f, y0, grid, config, stats):
    atol, rtol = config.abs_tol, config.rel_tol
    t_end = grid[-1]
    t = grid[0]
    y = y0.copy()
    out = [y0.copy()]
    gi = 1
    while gi < len(grid) and grid[gi] <= t:
        out.append(y0.copy())
        gi += 1
    if gi == len(grid):
        return out

    fy = f(t, y)
    stats.n_rhs += 1
    h = min(_initial_step(f, t, y, fy, atol, rtol, t_end - t), config.max_step)
    stats.n_rhs += 1
    err_prev = 1.0
    K = np.empty((7,) + y.shape, dtype=complex)
    while t < t_end:
        if stats.n_accepted + stats.n_rejected >= config.max_steps:
            raise IntegrationError(f"exceeded max_steps={config.max_steps} at t={t}")
        h = min(h, t_end - t, config.max_step)
        if h <= 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise IntegrationError(f"step size underflow at t={t} (h={h:.3e})")
        K[0] = fy
        for s in range(1, 7):
            ys = y + h * (_A_ROWS[s] @ K[:s])
            K[s] = f(t + _C[s] * h, ys)
        stats.n_rhs += 6
        y_new = ys  # row 6 of A equals the fifth-order weights (FSAL)
        err = _error_norm(h * (_E @ K), y, y_new, atol, rtol)
        if not np.isfinite(err):
            stats.n_rejected += 1
            h *= _FAC_MIN
            continue
        if err <= 1.0:
            t_new = t + h if t + h < t_end else t_end
            f_new = K[6].copy()
            while gi < len(grid) and grid[gi] <= t_new:
                tg = grid[gi]
                if tg == t_new:
                    out.append(y_new.copy())
                else:
                    out.append(_hermite(t, t_new, y, y_new, fy, f_new, tg))
                gi += 1
            stats.n_accepted += 1
            fac = _SAFETY * max(err, 1e-10) ** (-_ALPHA) * err_prev ** _BETA
            h *= min(_FAC_MAX, max(_FAC_MIN, fac))
            err_prev = max(err, 1e-4)
            t, y, fy = t_new, y_new, f_new
        else:
            stats.n_rejected += 1
            h *= max(_FAC_MIN, _SAFETY * err ** (-1 / 5))
    while gi < len(grid):
        out.append(y.copy())
        gi += 1
    return out


def integrate(
    f: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    config: IntegratorConfig,
    grid: Sequence[float] | None = None,
) -> tuple[np.ndarray, list[np.ndarray], IntegrationStats]:
    """Integrate ``dy/dt = f(t, y)`` from ``t = 0`` and sample on the record grid.

    Returns ``(times, states, stats)``; ``states[i]`` is ``y(times[i])``.
    Integration always starts at ``t = 0``, even if the grid does not.
    """
    times = np.asarray(grid if grid is not None else config.record_grid, dtype=float)
    y0 = np.asarray(y0, dtype=complex)
    stats = IntegrationStats()
    full = times if times.size and times[0] == 0.0 else np.concatenate([[0.0], times])
    if config.method == "rk4":
        states = _integrate_rk4(f, y0, full, config, stats)
    else:
        states = _integrate_dopri5(f, y0, full, config, stats)
    if full is not times:
        states = states[1:]
    return times, states, stats
