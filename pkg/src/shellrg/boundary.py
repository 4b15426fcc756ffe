"""Boundary functions feeding the shells n <= 0.

Each boundary component is a small immutable callable ``b(t)`` that also knows
its time derivative.  Components compose (scaling, time rescaling, phase
factors) so that symmetry transforms of a boundary stay closed-form, and a
tabulated component covers the case where a computed shell history is fed back
as a boundary.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class BoundaryRangeError(ValueError):
    """A tabulated boundary was evaluated outside its recorded time range."""


class BoundaryFunction:
    """Base class; subclasses implement ``__call__`` and ``deriv``."""

    def __call__(self, t: float) -> complex | float:
        raise NotImplementedError

    def deriv(self, t: float) -> complex | float:
        raise NotImplementedError

    @property
    def is_complex(self) -> bool:
        return False


@dataclass(frozen=True)
class Const(BoundaryFunction):
    value: complex | float

    def __call__(self, t):
        return self.value

    def deriv(self, t):
        return 0.0 * self.value

    @property
    def is_complex(self):
        return isinstance(self.value, complex)


@dataclass(frozen=True)
class Harmonic(BoundaryFunction):
    """``offset + cos_amp*cos(freq*t) + sin_amp*sin(freq*t)``."""

    offset: float
    cos_amp: float = 0.0
    sin_amp: float = 0.0
    freq: float = 1.0

    def __call__(self, t):
        w = self.freq * t
        return self.offset + self.cos_amp * math.cos(w) + self.sin_amp * math.sin(w)

    def deriv(self, t):
        w = self.freq * t
        return self.freq * (self.sin_amp * math.cos(w) - self.cos_amp * math.sin(w))


@dataclass(frozen=True)
class Rotation(BoundaryFunction):
    """``amp * exp(-i*freq*t)``."""

    amp: complex = 1.0
    freq: float = 1.0

    def __call__(self, t):
        return self.amp * complex(math.cos(self.freq * t), -math.sin(self.freq * t))

    def deriv(self, t):
        return -1j * self.freq * self(t)

    @property
    def is_complex(self):
        return True


@dataclass(frozen=True)
class Scaled(BoundaryFunction):
    """``factor * inner(t)``; factor may be complex (phase rotations)."""

    inner: BoundaryFunction
    factor: complex | float

    def __call__(self, t):
        return self.factor * self.inner(t)

    def deriv(self, t):
        return self.factor * self.inner.deriv(t)

    @property
    def is_complex(self):
        return isinstance(self.factor, complex) or self.inner.is_complex


@dataclass(frozen=True)
class TimeScaled(BoundaryFunction):
    """``inner(alpha * t)``."""

    inner: BoundaryFunction
    alpha: float

    def __call__(self, t):
        return self.inner(self.alpha * t)

    def deriv(self, t):
        return self.alpha * self.inner.deriv(self.alpha * t)

    @property
    def is_complex(self):
        return self.inner.is_complex


@dataclass(frozen=True, eq=False)
class Tabulated(BoundaryFunction):
    """Piecewise cubic Hermite interpolant of samples ``(t_i, y_i, y'_i)``.

    The interpolant is C^1 across sample points.  Evaluation outside
    ``[t[0], t[-1]]`` (beyond a relative slack of 1e-12) raises
    :class:`BoundaryRangeError`.
    """

    t: np.ndarray
    y: np.ndarray
    yp: np.ndarray
    _complex: bool = field(default=False, repr=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        y = np.asarray(self.y)
        yp = np.asarray(self.yp)
        if t.ndim != 1 or t.size < 2 or y.shape != t.shape or yp.shape != t.shape:
            raise ValueError("tabulated boundary needs matching 1-d arrays of length >= 2")
        if np.any(np.diff(t) <= 0):
            raise ValueError("tabulated boundary times must be strictly increasing")
        cplx = np.iscomplexobj(y) or np.iscomplexobj(yp)
        dtype = complex if cplx else float
        for name, arr in (("t", t), ("y", y.astype(dtype)), ("yp", yp.astype(dtype))):
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_complex", cplx)

    @property
    def is_complex(self):
        return self._complex

    def _locate(self, t):
        t0, t1 = self.t[0], self.t[-1]
        slack = 1e-12 * max(1.0, abs(t0), abs(t1))
        if t < t0 - slack or t > t1 + slack:
            raise BoundaryRangeError(
                f"tabulated boundary covers [{t0}, {t1}], requested t={t}")
        i = int(np.searchsorted(self.t, t, side="right")) - 1
        i = min(max(i, 0), self.t.size - 2)
        h = self.t[i + 1] - self.t[i]
        return i, h, (t - self.t[i]) / h

    def __call__(self, t):
        i, h, s = self._locate(t)
        y0, y1 = self.y[i], self.y[i + 1]
        d0, d1 = h * self.yp[i], h * self.yp[i + 1]
        s2, s3 = s * s, s * s * s
        return ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * d0
                + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * d1)

    def deriv(self, t):
        i, h, s = self._locate(t)
        y0, y1 = self.y[i], self.y[i + 1]
        d0, d1 = h * self.yp[i], h * self.yp[i + 1]
        s2 = s * s
        return ((6 * s2 - 6 * s) * (y0 - y1) + (3 * s2 - 4 * s + 1) * d0
                + (3 * s2 - 2 * s) * d1) / h

    def __eq__(self, other):
        return (isinstance(other, Tabulated) and np.array_equal(self.t, other.t)
                and np.array_equal(self.y, other.y) and np.array_equal(self.yp, other.yp))

    __hash__ = None


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary functions for shells ``1 - arity .. 0``, ordered ``(b_{-1}, b_0)``.

    Single-boundary (dyadic) specs hold one component, ``b_0``.
    """

    functions: tuple[BoundaryFunction, ...]
    name: str = "custom"

    def __post_init__(self):
        if len(self.functions) not in (1, 2):
            raise ValueError("boundary arity must be 1 or 2")

    @property
    def arity(self) -> int:
        return len(self.functions)

    @property
    def is_complex(self) -> bool:
        return any(f.is_complex for f in self.functions)

    def values(self, t: float) -> list:
        return [f(t) for f in self.functions]

    def derivs(self, t: float) -> list:
        return [f.deriv(t) for f in self.functions]

    def map(self, fn, name: str | None = None) -> "BoundarySpec":
        return BoundarySpec(tuple(fn(i, f) for i, f in enumerate(self.functions)),
                            name or self.name)


_CONST_RE = re.compile(r"^const\((.*)\)$")


def _parse_number(text: str) -> complex | float:
    text = text.strip().replace(" ", "")
    try:
        return float(text)
    except ValueError:
        return complex(text.replace("i", "j"))


def builtin_bc(name: str | dict, arity: int | None = None) -> BoundarySpec:
    """Build one of the named boundary conditions.

    ``"dyadic-default"`` is ``b(t) = 2 - cos t``; ``"gledzer-default"`` is
    ``(1, 2 + sin t)``; ``"sabra-default"`` is ``(1/2, exp(-i t))``.
    ``"const(v...)"`` (or ``{"const": [...]}``) gives constant components and
    ``"zero"`` gives zero boundaries of the requested arity.
    A record ``{"tabulated": [{"t": [...], "y": [...], "yp": [...]}, ...]}``
    builds tabulated components.
    """
    if isinstance(name, BoundarySpec):
        return name
    if isinstance(name, dict):
        if set(name) == {"const"}:
            vals = name["const"]
            vals = vals if isinstance(vals, (list, tuple)) else [vals]
            return BoundarySpec(tuple(Const(_literal(v)) for v in vals),
                                "const(" + ",".join(str(v) for v in vals) + ")")
        if set(name) == {"tabulated"}:
            comps = []
            for rec in name["tabulated"]:
                comps.append(Tabulated(np.asarray(rec["t"], float), _literal_array(rec["y"]),
                                       _literal_array(rec["yp"])))
            return BoundarySpec(tuple(comps), "tabulated")
        raise ValueError(f"unknown boundary record keys {sorted(name)}")
    key = name.strip().lower()
    if key == "dyadic-default":
        return BoundarySpec((Harmonic(2.0, cos_amp=-1.0),), key)
    if key == "gledzer-default":
        return BoundarySpec((Const(1.0), Harmonic(2.0, sin_amp=1.0)), key)
    if key == "sabra-default":
        return BoundarySpec((Const(0.5), Rotation(1.0, 1.0)), key)
    if key == "zero":
        return BoundarySpec(tuple(Const(0.0) for _ in range(arity or 1)), key)
    m = _CONST_RE.match(key)
    if m:
        vals = [_parse_number(v) for v in m.group(1).split(",") if v.strip()]
        if not vals:
            raise ValueError(f"empty constant boundary {name!r}")
        return BoundarySpec(tuple(Const(v) for v in vals), key)
    raise ValueError(f"unknown boundary condition {name!r}")


def _literal(v):
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, str):
        return _parse_number(v)
    return float(v)


def _literal_array(vals: Sequence) -> np.ndarray:
    out = [_literal(v) for v in vals]
    return np.asarray(out, dtype=complex if any(isinstance(v, complex) for v in out) else float)

