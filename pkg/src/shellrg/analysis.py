"""Fits and diagnostics: geometric and double-exponential fits, blowup times,
and the closed-form stationary solutions of the dyadic (N, 1) model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Auxiliary, CanonicalCutoff, ContractViolation, Viscous

RHO_DYADIC = -0.5
LOG2 = math.log(2.0)


class FitError(ValueError):
    """Not enough usable data for a fit."""


class NoBlowupDetected(ValueError):
    """The activity threshold was never crossed within the horizon."""


@dataclass(frozen=True)
class FitResult:
    """Outcome of a one-dimensional least-squares fit.

    ``params`` holds the named fitted quantities (``ratio``/``prefactor`` or
    ``slope``/``intercept``). ``flags`` lists soft warnings such as
    ``"low-confidence"``; ``discarded`` lists the abscissae left out.
    """

    params: dict
    residual: float
    r2: float
    n: int
    flags: tuple[str, ...] = ()
    discarded: tuple = ()

    def __getitem__(self, key):
        return self.params[key]

    @property
    def confident(self) -> bool:
        return "low-confidence" not in self.flags


def _linear_fit(x: np.ndarray, y: np.ndarray):
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - (slope * x + intercept)
    ss_res = float(res @ res)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-28 else 0.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return float(slope), float(intercept), math.sqrt(ss_res), r2


def _keyed(values, index=None):
    if isinstance(values, Mapping):
        keys = sorted(values)
        return np.asarray(keys, float), np.asarray([values[k] for k in keys])
    v = np.asarray(values)
    x = np.arange(v.size, dtype=float) if index is None else np.asarray(index, float)
    if x.shape != v.shape:
        raise ContractViolation("index and values must have matching lengths")
    return x, v


# --------------------------------------------------------------------------- #
# Stationary dyadic solutions (b0 = 1, J = 1)
# --------------------------------------------------------------------------- #

def stationary_limit(n) -> np.ndarray:
    """Stationary ideal solution ``2**(-n/3)``."""
    return 2.0 ** (-np.asarray(n, float) / 3.0)


def stationary_dyadic_exact(N: int, n) -> np.ndarray | float:
    """Stationary state of the dyadic ``(N, 1)`` model with ``b0 = 1``.

    ``u_n = 2**(-n/3 - rho**N ((-1)**n 2**n - 1) / 9)`` with ``rho = -1/2`` for
    ``n <= N + 1`` and zero for deeper shells.  Vectorized over ``n``.
    """
    n_arr = np.asarray(n, dtype=float)
    sign = np.where(np.mod(n_arr, 2) == 0, 1.0, -1.0)
    expo = -n_arr / 3.0 - RHO_DYADIC ** N * (sign * 2.0 ** n_arr - 1.0) / 9.0
    with np.errstate(over="ignore", under="ignore"):
        out = np.where(n_arr <= N + 1, 2.0 ** np.minimum(expo, 1e3), 0.0)
    return float(out) if np.ndim(n) == 0 else out


def stationary_eigvec(N: int, n) -> np.ndarray | float:
    """First-order coefficient ``v_n`` of ``u^(N) ~ u^inf + rho**N v``."""
    n_arr = np.asarray(n, dtype=float)
    sign = np.where(np.mod(n_arr, 2) == 0, 1.0, -1.0)
    v = -(sign * 2.0 ** n_arr - 1.0) * 2.0 ** (-n_arr / 3.0) * LOG2 / 9.0
    out = np.where(n_arr <= N + 1, v, 0.0)
    return float(out) if np.ndim(n) == 0 else out


# --------------------------------------------------------------------------- #
# Blowup detection
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class BlowupEstimate:
    t_b: float
    bracket: tuple[float, float]
    n_star: int
    theta: float
    reference: str
    t_peak_rate: float

    def __float__(self):
        return self.t_b


def _deepest_ideal_shell(reg) -> int:
    if isinstance(reg, (CanonicalCutoff, Auxiliary)):
        return reg.N
    if isinstance(reg, Viscous):
        return reg.effective_level
    raise ContractViolation("n_star must be given for trajectories without a regularization")


def _activity(traj, times, n_star, reference, horizon_max=None):
    U = np.abs(traj.sample(times))
    if U.ndim == 1:
        U = U[None, :]
    if reference == "shells":
        k13 = 2.0 ** (np.arange(1, n_star + 1) / 3.0)
        comp = U[:, :n_star] * k13
        top = comp.max(axis=1)
        return np.divide(comp[:, -1], top, out=np.zeros_like(top), where=top > 0)
    return U[:, n_star - 1] / horizon_max


def detect_blowup(traj, *, n_star: int | None = None, theta: float = 0.5,
                  reference: str = "shells", horizon: float | None = None,
                  subdivisions: int = 8, xtol: float = 1e-10) -> BlowupEstimate:
    """Estimate the blowup time from the onset of activity at shell ``n_star``.

    The activity ``r(t)`` is compared against the threshold ``theta``; ``t_b``
    is the first upward crossing, located by bisection on the dense output.

    ``reference="shells"`` (default) uses ``r = |u_n*| k_n*^(1/3)`` divided by
    ``max_{n<=n*} |u_n| k_n^(1/3)`` at the same instant: a scale-invariant
    measure of how far the cascade has reached, in ``[0, 1]``.  Because it is
    local in time, extending the horizon never moves an earlier detection.

    ``reference="horizon"`` uses ``|u_n*(t)|`` divided by its maximum over the
    analysed horizon.

    ``n_star`` defaults to the deepest ideal shell of the trajectory's
    regularization.  ``horizon`` truncates the analysed window to
    ``[t0, horizon]``.
    """
    if not 0 < theta < 1:
        raise ContractViolation("theta must lie in (0, 1)")
    if reference not in ("shells", "horizon"):
        raise ContractViolation("reference must be 'shells' or 'horizon'")
    n_star = _deepest_ideal_shell(traj.reg) if n_star is None else int(n_star)
    if not 1 <= n_star <= traj.M:
        raise ContractViolation(f"n_star={n_star} outside 1..{traj.M}")
    t_hi = traj.t_end if horizon is None else min(float(horizon), traj.t_end)
    nodes = traj.t[traj.t <= t_hi]
    if nodes[-1] < t_hi:
        nodes = np.append(nodes, t_hi)
    if nodes.size < 2:
        raise NoBlowupDetected("no blowup detected in horizon")
    frac = np.arange(subdivisions) / subdivisions
    grid = np.concatenate([(nodes[:-1, None] + np.diff(nodes)[:, None] * frac).ravel(), nodes[-1:]])

    hmax = None
    if reference == "horizon":
        hmax = float(np.abs(traj.sample(grid)[:, n_star - 1]).max())
        if hmax == 0.0:
            raise NoBlowupDetected("no blowup detected in horizon")
    r = _activity(traj, grid, n_star, reference, hmax)
    above = r >= theta
    up = np.nonzero(above[1:] & ~above[:-1])[0]
    if up.size == 0:
        raise NoBlowupDetected("no blowup detected in horizon")
    lo, hi = float(grid[up[0]]), float(grid[up[0] + 1])
    bracket = (lo, hi)
    while hi - lo > xtol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if _activity(traj, np.array([mid]), n_star, reference, hmax)[0] >= theta:
            hi = mid
        else:
            lo = mid
    # cross-check: time of steepest growth of |u_n*| over the analysed window
    rate = np.gradient(np.abs(traj.sample(grid)[:, n_star - 1]), grid)
    return BlowupEstimate(t_b=hi, bracket=bracket, n_star=n_star, theta=theta,
                          reference=reference, t_peak_rate=float(grid[int(np.argmax(rate))]))


# --------------------------------------------------------------------------- #
# Fits
# --------------------------------------------------------------------------- #

def fit_geometric(values, index=None) -> FitResult:
    """Fit ``value_N ~ prefactor * ratio**N``.

    ``values`` is a mapping ``N -> value`` or a sequence (with optional
    ``index``).  ``|ratio|`` comes from least squares on ``log|value|``; the
    sign from consecutive products.  Inputs that neither keep one sign nor
    strictly alternate are flagged ``low-confidence``.
    """
    x, v = _keyed(values, index)
    v = np.asarray(v, float)
    if v.size < 3:
        raise FitError("fit_geometric needs at least 3 points")
    if np.any(v == 0) or not np.all(np.isfinite(v)):
        raise FitError("fit_geometric needs finite, nonzero values")
    slope, intercept, resid, r2 = _linear_fit(x, np.log(np.abs(v)))
    prods = np.sign(v[1:] * v[:-1]) * np.sign(np.diff(x)) ** 0
    flags = ()
    if np.all(prods > 0):
        sign = 1.0
    elif np.all(prods < 0) and np.all(np.diff(x) == 1):
        sign = -1.0
    else:
        sign = -1.0 if np.sum(prods < 0) > np.sum(prods > 0) else 1.0
        flags = ("low-confidence",)
    ratio = sign * math.exp(slope)
    # prefactor sign: match the first point, value_0 = p * ratio**x_0
    base = ratio ** x[0]
    pref = math.exp(intercept) * math.copysign(1.0, v[0]) * math.copysign(1.0, base)
    return FitResult({"ratio": ratio, "prefactor": pref}, resid, r2, int(v.size), flags)


def fit_double_exponential(norms, eps: float, index=None) -> FitResult:
    """Linear fit of ``log(log(norm / 3 eps))`` against ``N``.

    Points with ``norm <= 3 eps`` cannot enter the double logarithm and are
    reported in ``discarded``.
    """
    if not eps > 0:
        raise ContractViolation("eps must be positive")
    x, v = _keyed(norms, index)
    v = np.asarray(v, float)
    ok = np.isfinite(v) & (v > 3.0 * eps)
    discarded = tuple(float(xi) for xi in x[~ok])
    if ok.sum() < 3:
        raise FitError(f"only {int(ok.sum())} usable points above 3*eps")
    y = np.log(np.log(v[ok] / (3.0 * eps)))
    slope, intercept, resid, r2 = _linear_fit(x[ok], y)
    return FitResult({"slope": slope, "intercept": intercept}, resid, r2, int(ok.sum()),
                     discarded=discarded)


def shape_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Sup distance between max-normalized shapes, minimized over a sign flip."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    na, nb = np.abs(a).max(), np.abs(b).max()
    if na == 0 or nb == 0:
        raise FitError("shape distance of an identically zero series")
    a, b = a / na, b / nb
    return float(min(np.abs(a - b).max(), np.abs(a + b).max()))
