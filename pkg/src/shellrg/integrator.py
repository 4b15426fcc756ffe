"""Adaptive time integration with dense output.

Two methods are available:

``explicit-adaptive``
    Dormand-Prince 5(4) pair with a proportional-integral step controller and
    the 4th-order continuous extension.  Works directly on complex states.

``stiff-adaptive``
    Radau IIA (implicit, order 5, adaptive step) driven one step at a time
    with the analytic Jacobian, passed in sparse form when the coupling is
    banded.  Being fifth order from the first step, its nodes stay consistent
    with the ODE at the derivative level.  Dense output is the quintic Hermite
    interpolant built from ``u, u', u''`` at accepted steps, C^2 across steps.

Both store the solution as per-step polynomials in the local variable
``theta = (t - t_k)/h_k`` so that symmetry transforms act on stored
coefficients exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import Radau

from .core import ContractViolation, ShellSystem, ShellState, as_model, resolve_ic

log = logging.getLogger(__name__)

METHODS = ("explicit-adaptive", "stiff-adaptive")
COMPLETED = "completed"
ABORTED_NONFINITE = "aborted-nonfinite"
ABORTED_BUDGET = "aborted-budget"


class TrajectoryRangeError(ValueError):
    """Dense output requested outside the integrated time range."""


@dataclass(frozen=True)
class SolverConfig:
    method: str = "stiff-adaptive"
    rtol: float = 1e-10
    atol: float = 1e-12
    max_step: float | None = None
    initial_step: float | None = None
    max_steps: int = 2_000_000
    blowup_guard: float = 1e12

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractViolation(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ContractViolation("rtol and atol must be positive")
        if self.max_step is not None and not self.max_step > 0:
            raise ContractViolation("max_step must be positive")
        if self.initial_step is not None and not self.initial_step > 0:
            raise ContractViolation("initial_step must be positive")
        if self.max_steps < 1:
            raise ContractViolation("max_steps must be >= 1")
        if not self.blowup_guard > 0:
            raise ContractViolation("blowup_guard must be positive")

    def tightened(self, factor: float) -> "SolverConfig":
        return replace(self, rtol=self.rtol / factor, atol=self.atol / factor)


class Trajectory:
    """Dense solution of one IBVP run.

    Attributes
    ----------
    t : (K+1,) accepted step times
    y : (K+1, M) stored states at those times
    coeffs : (K, p+1, M) per-step polynomial coefficients in ``theta``
    status : ``completed``, ``aborted-nonfinite`` or ``aborted-budget``
    """

    def __init__(self, t, y, coeffs, *, model=None, reg=None, bc=None, cfg=None,
                 status=COMPLETED, message="", nfev=0, t_final=None):
        self.t = np.asarray(t, dtype=float)
        self.y = np.asarray(y)
        self.coeffs = np.asarray(coeffs)
        for arr in (self.t, self.y, self.coeffs):
            arr.setflags(write=False)
        self.model = as_model(model) if model is not None else None
        self.reg = reg
        self.bc = bc
        self.cfg = cfg
        self.status = status
        self.message = message
        self.nfev = nfev
        self.t_final = self.t[-1] if t_final is None else t_final

    @property
    def M(self) -> int:
        return self.y.shape[1]

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def ok(self) -> bool:
        return self.status == COMPLETED

    @property
    def final(self) -> np.ndarray:
        return self.y[-1]

    def __repr__(self):
        return (f"Trajectory(M={self.M}, steps={self.n_steps}, t=[{self.t0:g}, {self.t_end:g}], "
                f"status={self.status!r})")

    def _locate(self, times: np.ndarray):
        lo, hi = self.t[0], self.t[-1]
        slack = 1e-13 * max(1.0, abs(lo), abs(hi))
        if np.any(times < lo - slack) or np.any(times > hi + slack):
            raise TrajectoryRangeError(
                f"requested times outside trajectory range [{lo}, {hi}]")
        if self.n_steps == 0:
            return np.zeros(times.shape, int), np.zeros(times.shape), np.ones(times.shape)
        idx = np.searchsorted(self.t, times, side="right") - 1
        idx = np.clip(idx, 0, self.n_steps - 1)
        h = self.t[idx + 1] - self.t[idx]
        theta = (times - self.t[idx]) / h
        return idx, theta, h

    def sample(self, times) -> np.ndarray:
        """State(s) at ``times`` (scalar -> (M,), array -> (len, M))."""
        scalar = np.ndim(times) == 0
        ts = np.atleast_1d(np.asarray(times, dtype=float))
        if self.n_steps == 0:
            self._locate(ts)
            out = np.repeat(self.y[:1], ts.size, axis=0)
            return out[0] if scalar else out
        idx, theta, _ = self._locate(ts)
        C = self.coeffs[idx]
        out = C[:, -1, :].copy()
        for j in range(C.shape[1] - 2, -1, -1):
            out = out * theta[:, None] + C[:, j, :]
        # stored states are returned exactly at node times
        node = np.searchsorted(self.t, ts)
        node = np.clip(node, 0, self.t.size - 1)
        hit = self.t[node] == ts
        if hit.any():
            out[hit] = self.y[node[hit]]
        return out[0] if scalar else out

    def sample_derivative(self, times) -> np.ndarray:
        scalar = np.ndim(times) == 0
        ts = np.atleast_1d(np.asarray(times, dtype=float))
        if self.n_steps == 0:
            raise TrajectoryRangeError("trajectory has no steps")
        idx, theta, h = self._locate(ts)
        C = self.coeffs[idx]
        p = C.shape[1] - 1
        out = p * C[:, p, :]
        for j in range(p - 1, 0, -1):
            out = out * theta[:, None] + j * C[:, j, :]
        out = out / h[:, None]
        return out[0] if scalar else out

    def shell(self, n: int, times) -> np.ndarray:
        """Samples of shell ``n`` (1-based)."""
        if not 1 <= n <= self.M:
            raise ContractViolation(f"shell {n} outside 1..{self.M}")
        return self.sample(times)[..., n - 1]

    def transformed(self, *, shell_factor=1.0, time_factor: float = 1.0, drop_first: bool = False,
                    bc=None, reg=None) -> "Trajectory":
        """New trajectory ``u'_n(t) = shell_factor_n * u_n(t / time_factor)``.

        ``time_factor`` rescales node times; ``drop_first`` removes shell 1
        (space shift).
        """
        y, C = self.y, self.coeffs
        if drop_first:
            y, C = y[:, 1:], C[:, :, 1:]
        f = np.asarray(shell_factor)
        if drop_first and f.ndim:
            f = f[1:]
        return Trajectory(self.t * time_factor, y * f, C * f, model=self.model,
                          reg=reg if reg is not None else self.reg,
                          bc=bc if bc is not None else self.bc, cfg=self.cfg, status=self.status,
                          message=self.message, nfev=self.nfev,
                          t_final=self.t_final * time_factor)


def sample(traj: Trajectory, t) -> ShellState | np.ndarray:
    out = traj.sample(t)
    return ShellState(out) if np.ndim(t) == 0 else out


def sample_derivative(traj: Trajectory, t) -> np.ndarray:
    return traj.sample_derivative(t)


# --------------------------------------------------------------------------- #
# Dormand-Prince 5(4)
# --------------------------------------------------------------------------- #

_DP_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_DP_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_DP_E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# Shampine's continuous extension, theta^1..theta^4 columns
_DP_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_SPARSE_MIN = 48
_PI_ALPHA = 0.7 / 5
_PI_BETA = 0.4 / 5
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


def _err_norm(x):
    return math.sqrt(float(np.mean(np.abs(x) ** 2)))


def _initial_step(f, t0, y0, f0, rtol, atol, order=5):
    scale = atol + rtol * np.abs(y0)
    d0, d1 = _err_norm(y0 / scale), _err_norm(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    d2 = _err_norm((f(t0 + h0, y1) - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / (order + 1))
    return min(100 * h0, h1)


def _guard_ok(y, guard):
    return bool(np.all(np.isfinite(y))) and float(np.max(np.abs(y))) <= guard


def _run_dp5(f, y0, t0, t1, cfg: SolverConfig):
    y = np.array(y0)
    t = t0
    fy = f(t, y)
    nfev = 1
    max_step = cfg.max_step or np.inf
    h = cfg.initial_step or _initial_step(f, t, y, fy, cfg.rtol, cfg.atol)
    h = min(h, max_step, t1 - t0)
    ts, ys, Cs = [t], [y.copy()], []
    K = np.empty((7,) + y.shape, dtype=y.dtype)
    err_prev = 1e-4
    status, message = COMPLETED, ""
    steps = 0
    while t < t1:
        if steps >= cfg.max_steps:
            status, message = ABORTED_BUDGET, f"step budget {cfg.max_steps} exhausted at t={t}"
            break
        h = min(h, t1 - t)
        if t + h >= t1 - 1e-14 * max(1.0, abs(t1)):
            h = t1 - t
        K[0] = fy
        for s in range(1, 6):
            dy = np.tensordot(_DP_A[s], K[:s], axes=1)
            K[s] = f(t + _DP_C[s] * h, y + h * dy)
        y_new = y + h * np.tensordot(_DP_B[:6], K[:6], axes=1)
        t_new = t + h if t + h < t1 else t1
        K[6] = f(t_new, y_new)
        nfev += 6
        if not np.all(np.isfinite(y_new)) or not np.all(np.isfinite(K[6])):
            h *= 0.25
            if h < 1e-14 * max(1.0, abs(t)):
                status, message = ABORTED_NONFINITE, f"non-finite state at t={t}"
                break
            continue
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _err_norm(h * np.tensordot(_DP_E, K, axes=1) / scale)
        if err <= 1.0:
            err = max(err, 1e-10)
            factor = _SAFETY * err ** (-_PI_ALPHA) * err_prev ** _PI_BETA
            factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            err_prev = err
            Q = np.tensordot(_DP_P.T, K, axes=1)  # (4, M)
            C = np.empty((5,) + y.shape, dtype=y.dtype)
            C[0] = y
            C[1:] = h * Q
            Cs.append(C)
            t, y, fy = t_new, y_new, K[6].copy()
            ts.append(t)
            ys.append(y.copy())
            steps += 1
            if not _guard_ok(y, cfg.blowup_guard):
                status, message = ABORTED_NONFINITE, f"blowup guard exceeded at t={t}"
                break
            h = min(h * factor, max_step)
        else:
            factor = max(_MIN_FACTOR, _SAFETY * err ** (-1 / 5))
            h *= factor
            if h < 1e-14 * max(1.0, abs(t)):
                status, message = ABORTED_BUDGET, f"step size underflow at t={t}"
                break
    coeffs = np.array(Cs) if Cs else np.empty((0, 5) + y.shape, dtype=y.dtype)
    return np.array(ts), np.array(ys), coeffs, status, message, nfev


# --------------------------------------------------------------------------- #
# Stiff path
# --------------------------------------------------------------------------- #

def quintic_hermite_coeffs(t, y, yp, ypp) -> np.ndarray:
    """Per-step coefficients of the quintic matching value, slope, curvature at both ends."""
    h = np.diff(t)[:, None]
    y0, y1 = y[:-1], y[1:]
    d0, d1 = h * yp[:-1], h * yp[1:]
    s0, s1 = h * h * ypp[:-1], h * h * ypp[1:]
    delta = y1 - y0 - d0 - 0.5 * s0
    e = d1 - d0 - s0
    g = s1 - s0
    C = np.empty((y0.shape[0], 6, y0.shape[1]), dtype=y.dtype)
    C[:, 0] = y0
    C[:, 1] = d0
    C[:, 2] = 0.5 * s0
    C[:, 3] = 10 * delta - 4 * e + 0.5 * g
    C[:, 4] = -15 * delta + 7 * e - g
    C[:, 5] = 6 * delta - 3 * e + 0.5 * g
    return C


def _run_radau(system, y0_real, t0, t1, cfg: SolverConfig):
    """Advance with Radau IIA (order 5), one accepted step at a time."""
    kwargs = dict(rtol=cfg.rtol, atol=cfg.atol, first_step=cfg.initial_step,
                  max_step=cfg.max_step or np.inf)
    if system.bandwidth is not None and system.n_real > _SPARSE_MIN:
        # banded Jacobian: sparse LU keeps the Newton solves linear in M
        def jac(t, y, _f=system.jac_real):
            return sp.csc_matrix(_f(t, y))
        kwargs["jac"] = jac
    else:
        kwargs["jac"] = system.jac_real
    solver = Radau(system.rhs_real, t0, np.array(y0_real, float), t1, **kwargs)
    ts, ys = [t0], [np.array(y0_real, float)]
    status, message = COMPLETED, ""
    steps = 0
    while solver.status == "running":
        if steps >= cfg.max_steps:
            status, message = ABORTED_BUDGET, f"step budget {cfg.max_steps} exhausted at t={solver.t}"
            break
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                msg = solver.step()
        except (ValueError, np.linalg.LinAlgError) as exc:
            # non-finite Jacobian or singular Newton matrix
            status, message = ABORTED_NONFINITE, f"stiff solver failed at t={solver.t}: {exc}"
            break
        if solver.status == "failed":
            status = ABORTED_NONFINITE if not _guard_ok(solver.y, cfg.blowup_guard) else ABORTED_BUDGET
            message = f"stiff solver failed at t={solver.t}: {msg}"
            break
        y = np.array(solver.y)
        if not _guard_ok(y, cfg.blowup_guard):
            status, message = ABORTED_NONFINITE, f"blowup guard exceeded at t={solver.t}"
            break
        ts.append(solver.t)
        ys.append(y)
        steps += 1
    return np.array(ts), np.array(ys), status, message, solver.nfev


# --------------------------------------------------------------------------- #
# Public entry points
# --------------------------------------------------------------------------- #

class StackedSystem:
    """Several independent shell systems advanced with one shared step sequence.

    Sharing steps makes the discretization error of nearby runs correlated,
    so differences between them are resolved far below the solver tolerance.
    """

    def __init__(self, systems: Sequence[ShellSystem]):
        self.systems = list(systems)
        self.sizes = [s.n_real for s in self.systems]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.n_real = int(self.offsets[-1])
        bws = [s.bandwidth for s in self.systems]
        self.bandwidth = None if any(b is None for b in bws) else max(bws)

    def _parts(self, y):
        return [y[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def rhs_real(self, t, y):
        return np.concatenate([s.rhs_real(t, p) for s, p in zip(self.systems, self._parts(y))])

    def jac_real(self, t, y):
        J = np.zeros((self.n_real, self.n_real))
        for s, p, a, b in zip(self.systems, self._parts(y), self.offsets[:-1], self.offsets[1:]):
            J[a:b, a:b] = s.jac_real(t, p)
        return J

    def jac_banded(self, t, y):
        bw = self.bandwidth
        out = np.zeros((2 * bw + 1, self.n_real))
        for s, p, a, b in zip(self.systems, self._parts(y), self.offsets[:-1], self.offsets[1:]):
            sb = s.jac_banded(t, p)
            pad = bw - s.bandwidth
            out[pad:pad + sb.shape[0], a:b] = sb
        return out


def _validate_span(t_span):
    t0, t1 = (0.0, float(t_span)) if np.ndim(t_span) == 0 else (float(t_span[0]), float(t_span[1]))
    if not t1 > t0:
        raise ContractViolation("t_span must satisfy T > t0")
    return t0, t1


def _second_derivatives(system: ShellSystem, t, u, up):
    return np.array([system.tangent(tk, uk, fk) + system.time_partial(tk, uk)
                     for tk, uk, fk in zip(t, u, up)])


def _finish_stiff(system, t, Y):
    U = np.array([system.unpack(yk) for yk in Y])
    UP = np.array([system(tk, uk) for tk, uk in zip(t, U)])
    UPP = _second_derivatives(system, t, U, UP)
    return U, quintic_hermite_coeffs(t, U, UP, UPP) if t.size > 1 else np.empty((0, 6, U.shape[1]), U.dtype)


def integrate(model, reg, bc, ic, t_span, cfg: SolverConfig | None = None) -> Trajectory:
    """Integrate one regularized IBVP from ``ic`` over ``t_span``.

    Parameters
    ----------
    model : str or ModelSpec
    reg : CanonicalCutoff, Auxiliary or Viscous
    bc : BoundarySpec or builtin name (None for the model default)
    ic : builtin name, ShellState, or literal sequence of amplitudes
    t_span : ``T`` or ``(t0, T)``
    """
    cfg = cfg or SolverConfig()
    model = as_model(model)
    system = ShellSystem(model, reg, bc)
    a = resolve_ic(ic, model, system.M).values.astype(system.dtype)
    t0, t1 = _validate_span(t_span)
    if cfg.method == "explicit-adaptive":
        t, y, C, status, message, nfev = _run_dp5(system, a, t0, t1, cfg)
    else:
        t, Y, status, message, nfev = _run_radau(system, system.pack(a), t0, t1, cfg)
        y, C = _finish_stiff(system, t, Y)
    if status != COMPLETED:
        log.warning("integration %s: %s", status, message)
    return Trajectory(t, y, C, model=model, reg=reg, bc=system.bc, cfg=cfg,
                      status=status, message=message, nfev=nfev)


def integrate_coupled(model, regs: Sequence, bc, ic, t_span,
                      cfg: SolverConfig | None = None) -> list[Trajectory]:
    """Integrate several regularizations of the same IBVP on one shared step grid."""
    cfg = cfg or SolverConfig()
    model = as_model(model)
    systems = [ShellSystem(model, r, bc) for r in regs]
    if len({s.M for s in systems}) != 1:
        raise ContractViolation("coupled runs must share the shell count")
    a = resolve_ic(ic, model, systems[0].M).values.astype(systems[0].dtype)
    t0, t1 = _validate_span(t_span)
    stacked = StackedSystem(systems)
    if cfg.method == "explicit-adaptive":
        def f(t, y):
            return stacked.rhs_real(t, y)
        y0 = np.concatenate([s.pack(a) for s in systems])
        t, Y, CY, status, message, nfev = _run_dp5(f, y0, t0, t1, cfg)
        parts = []
        for s, lo, hi in zip(systems, stacked.offsets[:-1], stacked.offsets[1:]):
            U = np.array([s.unpack(yk) for yk in Y[:, lo:hi]])
            C = np.ascontiguousarray(CY[:, :, lo:hi])
            parts.append((U, C.view(complex) if s.is_complex else C))
    else:
        t, Y, status, message, nfev = _run_radau(stacked, np.concatenate([s.pack(a) for s in systems]),
                                                 t0, t1, cfg)
        parts = [_finish_stiff(s, t, Y[:, lo:hi])
                 for s, lo, hi in zip(systems, stacked.offsets[:-1], stacked.offsets[1:])]
    return [Trajectory(t, U, C, model=model, reg=r, bc=s.bc, cfg=cfg, status=status,
                       message=message, nfev=nfev)
            for (U, C), r, s in zip(parts, regs, systems)]
