"""Declarative experiment configuration (JSON) and the figure presets."""
from __future__ import annotations

import copy
import json
from typing import Annotated, Literal, Optional, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)

from .boundary import builtin_bc
from .core import ConfigurationError
from .integrator import SolverConfig

KINDS = ("single-run", "rg-convergence", "eigenmode", "rg-verify", "viscous-bridge",
         "viscous-rescaled", "attractor-probe", "chaos-growth", "stationary-check")

Kind = Literal["single-run", "rg-convergence", "eigenmode", "rg-verify", "viscous-bridge",
               "viscous-rescaled", "attractor-probe", "chaos-growth", "stationary-check"]
Family = Literal["canonical", "auxiliary", "viscous"]
U64 = Annotated[int, Field(ge=0, lt=2 ** 64)]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SolverSettings(_Strict):
    method: Literal["explicit-adaptive", "stiff-adaptive"] = "stiff-adaptive"
    rtol: PositiveFloat = 1e-10
    atol: PositiveFloat = 1e-12
    max_step: Optional[PositiveFloat] = None
    initial_step: Optional[PositiveFloat] = None
    max_steps: PositiveInt = 2_000_000
    blowup_guard: PositiveFloat = 1e12

    def build(self) -> SolverConfig:
        return SolverConfig(**self.model_dump())


class Grid(_Strict):
    """Regularization grid; every family listed is expanded over its parameters."""

    families: tuple[Family, ...] = ("canonical",)
    N: tuple[NonNegativeInt, ...] = (10,)
    J: tuple[PositiveInt, ...] = (1,)
    beta: tuple[PositiveFloat, ...] = (1.0,)
    nu: tuple[PositiveFloat, ...] = ()
    eps: NonNegativeFloat = 0.0
    coeffs: Optional[tuple[PositiveFloat, ...]] = None
    M: Optional[PositiveInt] = None

    @field_validator("families")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("at least one family is required")
        return v


class Analysis(_Strict):
    ref_level: Optional[NonNegativeInt] = None
    rho: float = -0.5
    probe_window: Optional[tuple[float, float]] = None
    samples: PositiveInt = 20
    coeff_range: tuple[NonNegativeFloat, PositiveFloat] = (0.0, 3.0)
    t_star: Optional[PositiveFloat] = None
    theta: float = Field(0.5, gt=0.0, lt=1.0)
    n_star: Optional[PositiveInt] = None


class ICLiteral(_Strict):
    values: tuple[Union[float, tuple[float, float]], ...]


ICEntry = Union[Literal["IC1", "IC2"], ICLiteral]


class ExperimentConfig(_Strict):
    kind: Kind
    model: Literal["dyadic", "gledzer", "sabra"] = "dyadic"
    name: Optional[str] = None
    grid: Grid = Grid()
    ic: tuple[ICEntry, ...] = ("IC1",)
    bc: Union[str, dict, None] = None
    t_span: Union[PositiveFloat, tuple[float, float]] = 1.0
    sample_times: Optional[tuple[float, ...]] = None
    dt: Optional[PositiveFloat] = None
    shells: tuple[PositiveInt, ...] = (1, 2, 3, 4)
    solver: SolverSettings = SolverSettings()
    seed: U64 = 0
    out: Optional[str] = None
    workers: Optional[PositiveInt] = None
    analysis: Analysis = Analysis()

    @field_validator("ic", mode="before")
    @classmethod
    def _wrap_ic(cls, v):
        if isinstance(v, (str, dict)):
            return [v]
        return v

    @field_validator("bc")
    @classmethod
    def _check_bc(cls, v):
        if v is not None:
            try:
                builtin_bc(v)
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"invalid boundary condition: {exc}") from None
        return v

    @model_validator(mode="after")
    def _check_kind(self):
        k, m = self.kind, self.model
        need = {"chaos-growth": "sabra", "attractor-probe": "gledzer", "stationary-check": "dyadic"}
        if k in need and m != need[k]:
            raise ValueError(f"kind {k!r} requires model {need[k]!r}, got {m!r}")
        if k == "viscous-bridge" and not self.grid.nu:
            raise ValueError("kind 'viscous-bridge' requires a non-empty grid.nu")
        if k == "eigenmode":
            levels = sorted(set(self.grid.N))
            if not any(n + 1 in levels and n + 2 in levels for n in levels):
                raise ValueError("kind 'eigenmode' needs at least 3 consecutive levels in grid.N")
        if isinstance(self.t_span, tuple) and not self.t_span[1] > self.t_span[0]:
            raise ValueError("t_span must satisfy T > t0")
        return self

    @property
    def t0(self) -> float:
        return 0.0 if not isinstance(self.t_span, tuple) else float(self.t_span[0])

    @property
    def T(self) -> float:
        return float(self.t_span) if not isinstance(self.t_span, tuple) else float(self.t_span[1])


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a JSON object")
    if "preset" in data:
        name = data["preset"]
        if name not in PRESETS:
            raise ConfigurationError(f"preset: unknown preset {name!r}; known: {sorted(PRESETS)}")
        data = _deep_merge(PRESETS[name], {k: v for k, v in data.items() if k != "preset"})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_format_errors(exc)) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse JSON config text (or a bare preset name) into a validated config.

    A ``"preset"`` key expands a named preset; remaining keys override it.
    """
    stripped = text.strip()
    if stripped in PRESETS:
        return config_from_dict({"preset": stripped})
    try:
        data = json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"<root>: malformed JSON ({exc.msg} at line {exc.lineno})") from None
    return config_from_dict(data)


def serialize(cfg: ExperimentConfig) -> str:
    """Canonical JSON text with every field present."""
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def preset(name: str) -> ExperimentConfig:
    return config_from_dict({"preset": name})


_FIG1 = {
    "name": "fig1-dyadic-convergence",
    "kind": "eigenmode", "model": "dyadic",
    "grid": {"families": ["canonical"], "J": [1, 2, 3], "N": list(range(10, 21))},
    "ic": ["IC1", "IC2"], "bc": "dyadic-default", "t_span": 3.0, "dt": 0.01,
    "shells": [1, 2, 3, 4],
    "analysis": {"ref_level": 40, "probe_window": [1.0, 3.0]},
}

# desk-scale reductions are noted per preset
PRESETS: dict[str, dict] = {
    "fig1-dyadic-convergence": _FIG1,
    # auxiliary beta = 1 against the J = 1 cutoff family; reference N = 40
    "fig2ab-auxiliary": {
        "name": "fig2ab-auxiliary",
        "kind": "eigenmode", "model": "dyadic",
        "grid": {"families": ["canonical", "auxiliary"], "J": [1], "beta": [1.0],
                 "N": list(range(15, 27))},
        "ic": ["IC2"], "bc": "dyadic-default", "t_span": 3.0, "dt": 0.01,
        "shells": [1, 2, 3, 4],
        "analysis": {"ref_level": 40, "probe_window": [1.0, 3.0]},
    },
    "fig2cd-viscous-bridge": {
        "name": "fig2cd-viscous-bridge",
        "kind": "viscous-bridge", "model": "dyadic",
        "grid": {"families": ["viscous"], "nu": [1e-6, 1e-7, 1e-8, 1e-9]},
        "ic": ["IC2"], "bc": "dyadic-default", "t_span": 3.0, "dt": 0.01,
    },
    # reference nu_N with N = 50; tolerances tightened because v = delta / rho^N
    "fig3-viscous-rescaled": {
        "name": "fig3-viscous-rescaled",
        "kind": "viscous-rescaled", "model": "dyadic",
        "grid": {"families": ["viscous"], "N": list(range(16, 27))},
        "ic": ["IC1", "IC2"], "bc": "dyadic-default", "t_span": 3.0, "dt": 0.01,
        "shells": [1],
        "solver": {"rtol": 1e-12, "atol": 1e-14},
        "analysis": {"ref_level": 50},
    },
    # desk scale: N = 20..40 and 20 draws per level instead of N = 40..80 and 100
    "fig45-gledzer-attractor": {
        "name": "fig45-gledzer-attractor",
        "kind": "attractor-probe", "model": "gledzer",
        "grid": {"families": ["canonical"], "J": [3], "N": list(range(20, 41))},
        "ic": ["IC2"], "bc": "gledzer-default", "t_span": 0.5, "seed": 2024,
        "analysis": {"samples": 20, "coeff_range": [0.0, 3.0], "t_star": 0.5},
    },
    # desk scale: N = 1..13 instead of 1..15
    "fig6-sabra-chaos": {
        "name": "fig6-sabra-chaos",
        "kind": "chaos-growth", "model": "sabra",
        "grid": {"families": ["canonical"], "J": [2], "N": list(range(1, 14)), "eps": 1e-13},
        "ic": ["IC2"], "bc": "sabra-default", "t_span": 1.0,
        "solver": {"method": "explicit-adaptive", "rtol": 1e-12, "atol": 1e-14},
        "analysis": {"t_star": 1.0},
    },
    "fig6-sabra-chaos-desk": {
        "name": "fig6-sabra-chaos-desk",
        "kind": "chaos-growth", "model": "sabra",
        "grid": {"families": ["canonical"], "J": [2], "N": list(range(6, 14)), "eps": 1e-9},
        "ic": ["IC2"], "bc": "sabra-default", "t_span": 1.0,
        "solver": {"method": "explicit-adaptive", "rtol": 1e-12, "atol": 1e-14},
        "analysis": {"t_star": 1.0},
    },
    "stationary-check": {
        "name": "stationary-check",
        "kind": "stationary-check", "model": "dyadic",
        "grid": {"families": ["canonical"], "J": [1], "N": list(range(0, 9))},
        "bc": "const(1)", "t_span": 60.0,
    },
}
