"""Shell states, ideal couplings, regularized right-hand sides and symmetries.

Three ideal models share the form ``du_n/dt = k_n f_n`` with ``k_n = 2**n``:

* dyadic  (real):    f_n = u_{n-1}^2 - 2 u_n u_{n+1}
* gledzer (real):    f_n = 9/40 u_{n-1}u_{n-2} + 11/20 u_{n+1}u_{n-1}
                           - 2 u_{n+2}u_{n+1} + 2 u_{n+1}^2 - u_n u_{n-1}
* sabra   (complex): f_n = i(u_{n-1}u_{n-2}/4 - u_{n+1}u*_{n-1}/2 + 2 u_{n+2}u*_{n+1})

Shells n <= 0 are boundary shells supplied by a :class:`BoundarySpec`; shells
beyond the truncation ``M`` are read as zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .boundary import BoundarySpec, Scaled, TimeScaled, builtin_bc

LAMBDA = 2.0
# moduli below this are treated as zero when forming phases (avoids subnormal overflow)
_TINY = np.finfo(float).tiny
COUPLINGS = ("dyadic", "gledzer", "sabra")

# Gledzer-combination weights
_GA = 9.0 / 40.0
_GB = 11.0 / 20.0


class ContractViolation(ValueError):
    """Raised when an operation is called outside its preconditions."""


class ConfigurationError(ValueError):
    """Raised for unknown builtin names or malformed configuration values."""


# --------------------------------------------------------------------------- #
# Domain types
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ModelSpec:
    coupling: str
    lam: float = LAMBDA

    def __post_init__(self):
        if self.coupling not in COUPLINGS:
            raise ConfigurationError(f"unknown coupling {self.coupling!r}; expected one of {COUPLINGS}")
        if self.lam != LAMBDA:
            raise ContractViolation("inter-shell ratio is fixed to 2")

    @property
    def boundary_arity(self) -> int:
        return 1 if self.coupling == "dyadic" else 2

    @property
    def stencil_width(self) -> int:
        return 3 if self.coupling == "dyadic" else 5

    @property
    def half_width(self) -> int:
        return 1 if self.coupling == "dyadic" else 2

    @property
    def is_complex(self) -> bool:
        return self.coupling == "sabra"

    def k(self, n) -> np.ndarray:
        """Wavenumbers ``k_n = lam**n`` (vectorized over ``n``)."""
        return self.lam ** np.asarray(n, dtype=float)

    @property
    def default_bc(self) -> str:
        return f"{self.coupling}-default"


DYADIC = ModelSpec("dyadic")
GLEDZER = ModelSpec("gledzer")
SABRA = ModelSpec("sabra")


def as_model(model: Union[str, ModelSpec]) -> ModelSpec:
    return model if isinstance(model, ModelSpec) else ModelSpec(str(model))


@dataclass(frozen=True)
class ShellState:
    """Immutable vector of shell amplitudes ``u_1 .. u_M``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values)
        if v.ndim != 1 or v.size < 1:
            raise ContractViolation("a shell state needs at least one shell")
        if not np.all(np.isfinite(v)):
            raise ContractViolation("shell state has non-finite entries")
        if not np.iscomplexobj(v):
            v = v.astype(float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def kind(self) -> str:
        return "complex" if np.iscomplexobj(self.values) else "real"

    @property
    def M(self) -> int:
        return self.values.size

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __eq__(self, other):
        return isinstance(other, ShellState) and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class CanonicalCutoff:
    """Ideal shells ``1..N`` plus ``J`` dissipative shells with ``(1+eps) c_n |u_n| u_n``."""

    N: int
    J: int = 1
    coeffs: tuple[float, ...] | None = None
    eps: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 0:
            raise ContractViolation("N must be a non-negative integer")
        if int(self.J) != self.J or self.J < 1:
            raise ContractViolation("J must be a positive integer")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "J", int(self.J))
        if self.coeffs is not None:
            c = tuple(float(x) for x in self.coeffs)
            if len(c) != self.J:
                raise ContractViolation(f"expected {self.J} dissipative coefficients, got {len(c)}")
            if not all(x > 0 and math.isfinite(x) for x in c):
                raise ContractViolation("dissipative coefficients must be positive")
            object.__setattr__(self, "coeffs", c)
        if not (self.eps >= 0 and math.isfinite(self.eps)):
            raise ContractViolation("eps must be finite and >= 0")

    def n_shells(self) -> int:
        return self.N + self.J

    @property
    def c(self) -> np.ndarray:
        return np.ones(self.J) if self.coeffs is None else np.array(self.coeffs)

    @property
    def label(self) -> str:
        return f"N={self.N},J={self.J}" + (f",eps={self.eps:g}" if self.eps else "")


def default_truncation(N: int) -> int:
    """Shell count used for the untruncated variants: ``N + ceil(10 + N/3)``."""
    return N + int(math.ceil(10 + N / 3))


@dataclass(frozen=True)
class Auxiliary:
    """Eddy-viscosity term ``-beta (|u_N|/k_N) k_n^2 u_n`` on every shell."""

    N: int
    beta: float = 1.0
    M: int | None = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 0:
            raise ContractViolation("N must be a non-negative integer")
        object.__setattr__(self, "N", int(self.N))
        if not self.beta > 0:
            raise ContractViolation("beta must be positive")
        if self.M is not None and self.M < max(self.N, 1):
            raise ContractViolation("truncation M must cover shell N")

    def n_shells(self) -> int:
        return self.M if self.M is not None else default_truncation(self.N)

    @property
    def label(self) -> str:
        return f"N={self.N},beta={self.beta:g}"


@dataclass(frozen=True)
class Viscous:
    """Linear viscosity ``-nu k_n^2 u_n``."""

    nu: float
    M: int | None = None

    def __post_init__(self):
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise ContractViolation("nu must be positive")
        if self.M is not None and self.M < 1:
            raise ContractViolation("truncation M must be >= 1")

    @property
    def effective_level(self) -> int:
        """Level ``N`` with ``nu = k_N^(-4/3)``, rounded up."""
        return max(0, int(math.ceil(-0.75 * math.log2(self.nu) - 1e-9)))

    def n_shells(self) -> int:
        return self.M if self.M is not None else default_truncation(self.effective_level)

    @property
    def label(self) -> str:
        return f"nu={self.nu:.6g}"


Regularization = Union[CanonicalCutoff, Auxiliary, Viscous]


# --------------------------------------------------------------------------- #
# Couplings
# --------------------------------------------------------------------------- #

def coupling(model: Union[str, ModelSpec], window: Sequence) -> complex | float:
    """Ideal coupling ``f_n`` from the stencil ``(u_{n-h}, ..., u_{n+h})``."""
    model = as_model(model)
    w = list(window)
    if len(w) != model.stencil_width:
        raise ContractViolation(
            f"{model.coupling} coupling needs a window of {model.stencil_width}, got {len(w)}")
    if not model.is_complex and any(isinstance(x, complex) or np.iscomplexobj(x) for x in w):
        raise ContractViolation(f"complex amplitudes passed to the real {model.coupling} model")
    if model.coupling == "dyadic":
        um, u, up = w
        return um * um - LAMBDA * u * up
    um2, um, u, up, up2 = w
    if model.coupling == "gledzer":
        return _GA * um * um2 + _GB * up * um - 2.0 * up2 * up + 2.0 * up * up - u * um
    c = np.conj
    return 1j * (um * um2 / 4.0 - up * c(um) / 2.0 + 2.0 * up2 * c(up))


def _coupling_ext(kind: str, ue: np.ndarray, M: int) -> np.ndarray:
    """Vectorized couplings for shells 1..M from ``ue = [u_-1, u_0, u_1..u_M, 0, 0]``."""
    um2 = ue[0:M]
    um = ue[1:M + 1]
    u = ue[2:M + 2]
    up = ue[3:M + 3]
    up2 = ue[4:M + 4]
    if kind == "dyadic":
        return um * um - 2.0 * u * up
    if kind == "gledzer":
        return _GA * um * um2 + _GB * up * um - 2.0 * up2 * up + 2.0 * up * up - u * um
    return 1j * (0.25 * um * um2 - 0.5 * up * um.conj() + 2.0 * up2 * up.conj())


def _coupling_tangent_ext(kind: str, ue: np.ndarray, ve: np.ndarray, M: int) -> np.ndarray:
    """Directional derivative of the couplings at ``ue`` along ``ve``."""
    a = [ue[j:M + j] for j in range(5)]
    b = [ve[j:M + j] for j in range(5)]
    if kind == "dyadic":
        return 2.0 * a[1] * b[1] - 2.0 * (a[2] * b[3] + b[2] * a[3])
    if kind == "gledzer":
        return (_GA * (a[1] * b[0] + b[1] * a[0]) + _GB * (a[3] * b[1] + b[3] * a[1])
                - 2.0 * (a[4] * b[3] + b[4] * a[3]) + 4.0 * a[3] * b[3]
                - (a[2] * b[1] + b[2] * a[1]))
    return 1j * (0.25 * (a[1] * b[0] + b[1] * a[0])
                 - 0.5 * (a[3] * b[1].conj() + b[3] * a[1].conj())
                 + 2.0 * (a[4] * b[3].conj() + b[4] * a[3].conj()))


def _coupling_partials(kind: str, ue: np.ndarray, M: int):
    """Partials of f_n w.r.t. ``u_{n+j}`` (and conjugates) for ``j = -2..2``.

    Returns ``(d, dbar)``: dicts offset -> array of length M.
    """
    a = [ue[j:M + j] for j in range(5)]
    z = np.zeros(M, dtype=ue.dtype)
    if kind == "dyadic":
        return {-1: 2.0 * a[1], 0: -2.0 * a[3], 1: -2.0 * a[2]}, {}
    if kind == "gledzer":
        return {
            -2: _GA * a[1],
            -1: _GA * a[0] + _GB * a[3] - a[2],
            0: -a[1],
            1: _GB * a[1] - 2.0 * a[4] + 4.0 * a[3],
            2: -2.0 * a[3],
        }, {}
    d = {-2: 0.25j * a[1], -1: 0.25j * a[0], 0: z, 1: -0.5j * a[1].conj(), 2: 2j * a[3].conj()}
    dbar = {-1: -0.5j * a[3], 1: 2j * a[4]}
    return d, dbar


# --------------------------------------------------------------------------- #
# Regularized right-hand side
# --------------------------------------------------------------------------- #

class ShellSystem:
    """Right-hand side, Jacobian and tangent of one regularized IBVP.

    The system works on complex arrays for sabra and real arrays otherwise;
    ``pack``/``unpack`` convert to the interleaved real layout used by real-valued
    solvers.  Instances are cheap to build and hold no mutable state.
    """

    def __init__(self, model, reg: Regularization, bc: BoundarySpec | str | None = None,
                 n_shells: int | None = None):
        self.model = as_model(model)
        self.reg = reg
        if bc is None:
            bc = self.model.default_bc
        self.bc = builtin_bc(bc, self.model.boundary_arity)
        if self.bc.arity != self.model.boundary_arity:
            raise ContractViolation(
                f"{self.model.coupling} needs {self.model.boundary_arity} boundary function(s), "
                f"got {self.bc.arity}")
        if self.bc.is_complex and not self.model.is_complex:
            raise ContractViolation("complex boundary for a real model")
        M = reg.n_shells()
        if n_shells is not None and n_shells != M:
            raise ContractViolation(f"state has {n_shells} shells but regularization implies {M}")
        self.M = M
        self.kind = self.model.coupling
        self.is_complex = self.model.is_complex
        self.dtype = complex if self.is_complex else float
        self.k = self.model.k(np.arange(1, M + 1))

        self.quad_diss = np.zeros(M)
        self.lin_diss = np.zeros(M)
        self.aux = None
        if isinstance(reg, CanonicalCutoff):
            self.quad_diss[reg.N:] = self.k[reg.N:] * reg.c * (1.0 + reg.eps)
        elif isinstance(reg, Viscous):
            self.lin_diss[:] = reg.nu * self.k ** 2
        elif isinstance(reg, Auxiliary):
            if reg.N < 1:
                raise ContractViolation("the auxiliary model needs N >= 1")
            kN = self.model.k(reg.N)
            self.aux = (reg.N - 1, reg.beta * self.k ** 2 / kN)
        else:
            raise ContractViolation(f"unknown regularization {reg!r}")
        self.quad_mask = self.quad_diss != 0

    # -- layout helpers -------------------------------------------------------
    @property
    def n_real(self) -> int:
        return 2 * self.M if self.is_complex else self.M

    def pack(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=self.dtype)
        return u.view(float).copy() if self.is_complex else u.astype(float, copy=True)

    def unpack(self, y: np.ndarray) -> np.ndarray:
        y = np.ascontiguousarray(y, dtype=float)
        return y.view(complex) if self.is_complex else y

    @property
    def bandwidth(self) -> int | None:
        """Half-bandwidth of the real-layout Jacobian; None when dense."""
        if self.aux is not None:
            return None
        h = self.model.half_width
        return 2 * h + 1 if self.is_complex else h

    def _extend(self, t: float, u: np.ndarray) -> np.ndarray:
        ue = np.zeros(self.M + 4, dtype=self.dtype)
        b = self.bc.values(t)
        if len(b) == 1:
            ue[1] = b[0]
        else:
            ue[0], ue[1] = b
        ue[2:self.M + 2] = u
        return ue

    # -- evaluation -----------------------------------------------------------
    def coupling_terms(self, t: float, u: np.ndarray) -> np.ndarray:
        return _coupling_ext(self.kind, self._extend(t, u), self.M)

    def dissipation(self, u: np.ndarray) -> np.ndarray:
        """Regularization contribution to du/dt (non-positive energy input)."""
        out = -self.lin_diss * u
        if self.quad_mask.any():
            out = out - self.quad_diss * np.abs(u) * u
        if self.aux is not None:
            iN, w = self.aux
            out = out - w * abs(u[iN]) * u
        return out

    def __call__(self, t: float, u: np.ndarray) -> np.ndarray:
        return self.k * _coupling_ext(self.kind, self._extend(t, u), self.M) + self.dissipation(u)

    def dissipation_tangent(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = -self.lin_diss * v
        if self.quad_mask.any():
            au = np.abs(u)
            if self.is_complex:
                phase = np.divide(u, au, out=np.zeros_like(u), where=au > _TINY)
                cross = 0.5 * phase * u * v.conj()
                out = out - self.quad_diss * (1.5 * au * v + cross)
            else:
                out = out - self.quad_diss * 2.0 * au * v
        if self.aux is not None:
            iN, w = self.aux
            uN = u[iN]
            auN = abs(uN)
            d_abs = (uN.conjugate() * v[iN]).real / auN if auN > 0 else 0.0
            out = out - w * (auN * v + d_abs * u)
        return out

    def tangent(self, t: float, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jacobian-vector product ``J(u) v`` (boundary held fixed)."""
        ue = self._extend(t, u)
        ve = np.zeros_like(ue)
        ve[2:self.M + 2] = v
        return self.k * _coupling_tangent_ext(self.kind, ue, ve, self.M) + self.dissipation_tangent(u, v)

    def time_partial(self, t: float, u: np.ndarray) -> np.ndarray:
        """Explicit time derivative of the RHS, entering through the boundary."""
        ue = self._extend(t, u)
        ve = np.zeros_like(ue)
        db = self.bc.derivs(t)
        if len(db) == 1:
            ve[1] = db[0]
        else:
            ve[0], ve[1] = db
        return self.k * _coupling_tangent_ext(self.kind, ue, ve, self.M)

    def jacobian(self, t: float, u: np.ndarray) -> np.ndarray:
        """Dense Jacobian in the real layout (``2M x 2M`` interleaved for sabra)."""
        M = self.M
        ue = self._extend(t, u)
        d, dbar = _coupling_partials(self.kind, ue, M)
        A = np.zeros((M, M), dtype=self.dtype)
        B = np.zeros((M, M), dtype=self.dtype)
        rows = np.arange(M)
        for j, vals in d.items():
            cols = rows + j
            ok = (cols >= 0) & (cols < M)
            A[rows[ok], cols[ok]] += self.k[ok] * vals[ok]
        for j, vals in dbar.items():
            cols = rows + j
            ok = (cols >= 0) & (cols < M)
            B[rows[ok], cols[ok]] += self.k[ok] * vals[ok]
        au = np.abs(u)
        A[rows, rows] -= self.lin_diss
        if self.is_complex:
            A[rows, rows] -= self.quad_diss * 1.5 * au
            phase = np.divide(u, au, out=np.zeros_like(u), where=au > _TINY)
            B[rows, rows] -= 0.5 * self.quad_diss * phase * u
        else:
            A[rows, rows] -= self.quad_diss * 2.0 * au
        if self.aux is not None:
            iN, w = self.aux
            uN = u[iN]
            auN = abs(uN)
            A[rows, rows] -= w * auN
            if auN > 0:
                if self.is_complex:
                    # d|u_N| = (conj(u_N) du_N + u_N dconj(u_N)) / (2|u_N|)
                    A[:, iN] -= w * u * uN.conjugate() / (2 * auN)
                    B[:, iN] -= w * u * uN / (2 * auN)
                else:
                    A[:, iN] -= w * u * np.sign(uN)
        if not self.is_complex:
            return A.real
        S, D = A + B, 1j * (A - B)
        Jr = np.empty((2 * M, 2 * M))
        Jr[0::2, 0::2] = S.real
        Jr[0::2, 1::2] = D.real
        Jr[1::2, 0::2] = S.imag
        Jr[1::2, 1::2] = D.imag
        return Jr

    # -- real-layout wrappers used by the solvers -------------------------------
    def rhs_real(self, t: float, y: np.ndarray) -> np.ndarray:
        du = self(t, self.unpack(y))
        return du.view(float) if self.is_complex else du

    def jac_real(self, t: float, y: np.ndarray) -> np.ndarray:
        return self.jacobian(t, self.unpack(y))

    def jac_banded(self, t: float, y: np.ndarray) -> np.ndarray:
        """Jacobian packed as ``out[bw + i - j, j] = J[i, j]`` (LAPACK band layout)."""
        J = self.jac_real(t, y)
        bw = self.bandwidth
        n = J.shape[0]
        out = np.zeros((2 * bw + 1, n))
        for off in range(-bw, bw + 1):
            diag = np.diagonal(J, offset=off)
            if off >= 0:
                out[bw - off, off:] = diag
            else:
                out[bw - off, :n + off] = diag
        return out


def rhs(model, reg: Regularization, bc, t: float, state) -> np.ndarray:
    """du/dt of the regularized IBVP at time ``t``."""
    u = np.asarray(state.values if isinstance(state, ShellState) else state)
    model = as_model(model)
    if not model.is_complex and np.iscomplexobj(u):
        raise ContractViolation("complex state for a real model")
    if not np.all(np.isfinite(u)):
        raise FloatingPointError("non-finite state")
    system = ShellSystem(model, reg, bc, n_shells=u.size)
    return system(t, u.astype(system.dtype))


# --------------------------------------------------------------------------- #
# Initial conditions
# --------------------------------------------------------------------------- #

def builtin_ic(name: str, model, M: int) -> ShellState:
    """Regular (``IC1``) or rough (``IC2``) initial data on ``M`` shells."""
    model = as_model(model)
    if M < 1:
        raise ContractViolation("M must be >= 1")
    n = np.arange(1, M + 1, dtype=float)
    key = name.strip().upper()
    if key == "IC1":
        with np.errstate(under="ignore"):
            modulus = np.exp2(-np.exp2(n))
    elif key == "IC2":
        modulus = np.exp2(-n / 4.0)
    else:
        raise ConfigurationError(f"unknown initial condition {name!r}; expected IC1 or IC2")
    if model.is_complex:
        return ShellState(modulus * np.exp(1j * np.sqrt(n)))
    if key == "IC2":
        modulus = modulus * (2.0 - np.sin(n))
    return ShellState(modulus)


def resolve_ic(ic, model, M: int) -> ShellState:
    """Accept a builtin name, a ShellState or a literal sequence."""
    model = as_model(model)
    if isinstance(ic, ShellState):
        state = ic
    elif isinstance(ic, str):
        state = builtin_ic(ic, model, M)
    else:
        vals = [complex(v[0], v[1]) if isinstance(v, (list, tuple)) else v for v in ic]
        state = ShellState(np.asarray(vals))
    if state.M != M:
        raise ContractViolation(f"initial condition has {state.M} shells, regularization needs {M}")
    if state.kind == "complex" and not model.is_complex:
        if np.any(state.values.imag != 0):
            raise ContractViolation("complex initial data for a real model")
        state = ShellState(state.values.real)
    return state


# --------------------------------------------------------------------------- #
# Symmetries
# --------------------------------------------------------------------------- #

def fibonacci_phases(seeds: tuple[float, float], M: int) -> np.ndarray:
    """``F_{-1}, F_0, F_1, ..., F_M`` with ``F_n = F_{n-1} + F_{n-2}``."""
    F = np.empty(M + 2)
    F[0], F[1] = seeds
    for i in range(2, M + 2):
        F[i] = F[i - 1] + F[i - 2]
    return F


def time_scale_ic(ic, alpha: float) -> ShellState:
    if not alpha > 0:
        raise ContractViolation("alpha must be positive")
    return ShellState(alpha * np.asarray(ic))


def time_scale_bc(bc: BoundarySpec, alpha: float) -> BoundarySpec:
    if not alpha > 0:
        raise ContractViolation("alpha must be positive")
    if alpha == 1:
        return bc
    return bc.map(lambda i, f: Scaled(TimeScaled(f, alpha), alpha), f"{bc.name}|time-scale({alpha:g})")


def phase_ic(ic, seeds) -> ShellState:
    a = np.asarray(ic)
    F = fibonacci_phases(seeds, a.size)
    return ShellState(np.exp(1j * F[2:]) * a)


def phase_bc(bc: BoundarySpec, seeds) -> BoundarySpec:
    if bc.arity != 2:
        raise ContractViolation("phase symmetry needs two boundary functions")
    F = fibonacci_phases(seeds, 0)
    return bc.map(lambda i, f: Scaled(f, complex(np.exp(1j * F[i]))), f"{bc.name}|phase")


def space_shift_ic(ic) -> ShellState:
    a = np.asarray(ic)
    if a.size < 2:
        raise ContractViolation("space shift needs at least two shells")
    return ShellState(LAMBDA * a[1:])


def apply_symmetry(kind: str, obj, *, model=None, alpha: float = 1.0,
                   seeds: tuple[float, float] = (0.0, 0.0)):
    """Transform an initial condition, boundary function, or trajectory.

    ``kind`` is ``"time-scale"`` (``u -> alpha u(alpha t)``), ``"space-shift"``
    (``u_n -> lam u_{n+1}``; initial data and trajectories only, since the
    shifted boundary needs ``u_1(t)``) or ``"phase"`` (sabra only,
    ``u_n -> exp(i F_n) u_n`` with Fibonacci ``F`` seeded by ``(F_-1, F_0)``).
    """
    from .integrator import Trajectory

    if model is not None:
        model = as_model(model)
    elif isinstance(obj, Trajectory):
        model = obj.model
    if kind == "phase":
        if model is None or not model.is_complex:
            raise ContractViolation("phase symmetry is defined for the sabra model only")
        if isinstance(obj, BoundarySpec):
            return phase_bc(obj, seeds)
        if isinstance(obj, Trajectory):
            F = fibonacci_phases(seeds, obj.M)
            bc = phase_bc(obj.bc, seeds) if obj.bc is not None else None
            return obj.transformed(shell_factor=np.exp(1j * F[2:]), bc=bc)
        return phase_ic(obj, seeds)
    if kind == "time-scale":
        if isinstance(obj, BoundarySpec):
            return time_scale_bc(obj, alpha)
        if isinstance(obj, Trajectory):
            if not alpha > 0:
                raise ContractViolation("alpha must be positive")
            bc = time_scale_bc(obj.bc, alpha) if obj.bc is not None else None
            return obj.transformed(shell_factor=alpha, time_factor=1.0 / alpha, bc=bc)
        return time_scale_ic(obj, alpha)
    if kind == "space-shift":
        if isinstance(obj, BoundarySpec):
            raise ContractViolation("space shift of a boundary needs u_1(t); use rglab.shifted_boundary")
        if isinstance(obj, Trajectory):
            return obj.transformed(shell_factor=LAMBDA, drop_first=True)
        return space_shift_ic(obj)
    raise ConfigurationError(f"unknown symmetry {kind!r}")


# --------------------------------------------------------------------------- #
# Energy
# --------------------------------------------------------------------------- #

def energy(state) -> float:
    u = np.asarray(state)
    return float(np.sum(np.abs(u) ** 2, axis=-1)) if u.ndim == 1 else np.sum(np.abs(u) ** 2, axis=-1)


def boundary_flux(model, u: np.ndarray, b: Sequence) -> float:
    """Closed form of ``sum_n k_n Re(conj(u_n) f_n)`` for a truncated state.

    The ideal nonlinear transfer telescopes, leaving only terms that touch the
    boundary shells.  Works on a single state (1-d) or a stack of states (2-d).
    """
    model = as_model(model)
    u = np.asarray(u)
    u1 = u[..., 0]
    u2 = u[..., 1] if u.shape[-1] > 1 else np.zeros_like(u1)
    if model.coupling == "dyadic":
        b0 = np.asarray(b[-1])
        return 2.0 * u1 * b0 * b0
    bm, b0 = np.asarray(b[0]), np.asarray(b[1])
    if model.coupling == "gledzer":
        return 2.0 * _GA * bm * b0 * u1 + 2.0 * b0 * u1 * u2 - 2.0 * b0 * u1 * u1
    return (0.5j * u1.conj() * b0 * bm - 2j * u2 * u1.conj() * b0.conj()).real


@dataclass(frozen=True)
class EnergyResidual:
    times: np.ndarray
    residual: np.ndarray
    energy: np.ndarray
    identity: str = "exact-telescoping"

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0


def dissipation_power(system: ShellSystem, u: np.ndarray) -> np.ndarray:
    """``-sum Re(conj(u_n) D_n(u))`` for the regularization terms ``D`` (>= 0)."""
    u = np.atleast_2d(u)
    out = system.lin_diss * np.abs(u) ** 2 + system.quad_diss * np.abs(u) ** 3
    total = out.sum(axis=-1)
    if system.aux is not None:
        iN, w = system.aux
        total = total + np.abs(u[:, iN]) * (w * np.abs(u) ** 2).sum(axis=-1)
    return total


def energy_balance_residual(traj, times=None) -> EnergyResidual:
    """Residual ``dE/dt - 2 flux_bc + 2 dissipation`` along a trajectory.

    ``dE/dt`` comes from the dense-output derivative.  The boundary flux uses
    the exact telescoped transfer for each model, so the residual vanishes up to
    interpolation and rounding error for all three couplings.
    """
    system = ShellSystem(traj.model, traj.reg, traj.bc)
    if times is None:
        mids = 0.5 * (traj.t[:-1] + traj.t[1:])
        times = np.sort(np.concatenate([traj.t, mids]))
    times = np.asarray(times, dtype=float)
    u = traj.sample(times)
    du = traj.sample_derivative(times)
    dE = 2.0 * np.sum((u.conj() * du).real, axis=-1)
    bvals = np.array([system.bc.values(t) for t in times]).T
    flux = boundary_flux(system.model, u, list(bvals))
    r = dE - 2.0 * flux + 2.0 * dissipation_power(system, u)
    return EnergyResidual(times, r, np.sum(np.abs(u) ** 2, axis=-1))


def energy_bound(traj, times=None) -> tuple[np.ndarray, np.ndarray]:
    """Norm ``||u(t)||`` and the a-priori dyadic bound ``||u(0)|| + k_1 int_0^t b_0^2``.

    Returns ``(norm, bound)`` sampled at ``times`` (default: the step nodes).
    """
    from scipy.integrate import quad

    model = traj.model
    if model.coupling != "dyadic":
        raise ContractViolation("the energy bound is stated for the dyadic model")
    times = traj.t if times is None else np.sort(np.asarray(times, dtype=float))
    b0 = traj.bc.functions[-1]
    edges = np.concatenate([[traj.t0], times])
    pieces = [quad(lambda s: abs(b0(s)) ** 2, a, b, epsabs=1e-14, epsrel=1e-12)[0] if b > a else 0.0
              for a, b in zip(edges[:-1], edges[1:])]
    norm = np.linalg.norm(traj.sample(times), axis=-1)
    bound = np.linalg.norm(traj.y[0]) + LAMBDA * np.cumsum(pieces)
    return norm, bound
