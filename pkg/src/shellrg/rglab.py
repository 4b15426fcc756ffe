"""RG-dynamics experiments built on the integrator.

Each driver integrates a family of regularized IBVPs and reduces them to the
quantities the RG picture predicts: deviations from a high-level reference,
the eigenvalue and prefactors of the leading eigenmode, the RG relation
between consecutive levels, the viscous bridge, the random-regularization
attractor probe and perturbation growth.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from .analysis import FitError
from .boundary import BoundarySpec, Scaled, Tabulated
from .core import (
    LAMBDA,
    CanonicalCutoff,
    ContractViolation,
    Viscous,
    as_model,
)
from .integrator import SolverConfig, Trajectory, integrate, integrate_coupled
from .parallel import JobFailure, run_jobs

log = logging.getLogger(__name__)

# the cutoff sabra runs are non-stiff up to the desk levels; DP5 is several times faster
CHAOS_CONFIG = SolverConfig(method="explicit-adaptive", rtol=1e-12, atol=1e-14)
RESCALED_CONFIG = SolverConfig(rtol=1e-12, atol=1e-14)


class ExperimentError(RuntimeError):
    """A run an experiment depends on did not complete."""


def nu_level(N: float) -> float:
    """Viscosity ``k_N^(-4/3) = 2^(-4N/3)`` associated with level ``N``."""
    return 2.0 ** (-4.0 * N / 3.0)


def default_ref_level(levels: Sequence[int]) -> int:
    return 2 * max(levels) + 10


def _require_ok(traj: Trajectory, what: str) -> Trajectory:
    if not traj.ok:
        raise ExperimentError(f"{what} {traj.status}: {traj.message}")
    return traj


# --------------------------------------------------------------------------- #
# Parallel integration
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class RunJob:
    model: str
    reg: object
    bc: object
    ic: object
    t_span: object
    cfg: SolverConfig


def _run_job(job: RunJob) -> Trajectory:
    return integrate(job.model, job.reg, job.bc, job.ic, job.t_span, job.cfg)


def integrate_many(jobs: Mapping[Hashable, RunJob], workers: int | None = 1) -> dict:
    """Integrate independent jobs, possibly in parallel; failures map to :class:`JobFailure`."""
    keys = list(jobs)
    results = run_jobs(_run_job, [jobs[k] for k in keys], workers)
    return dict(zip(keys, results))


# --------------------------------------------------------------------------- #
# Deviations from a reference
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class DeviationSeries:
    """``values[i, j] = u_{shells[j]}(times[i]) - u_ref(...)`` for one run."""

    level: Hashable
    shells: tuple[int, ...]
    times: np.ndarray
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("times", "values"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.values.shape != (self.times.size, len(self.shells)):
            raise ContractViolation("deviation values must be (len(times), len(shells))")

    def shell(self, n: int) -> np.ndarray:
        return self.values[:, self.shells.index(n)]

    def rescaled(self, factor: float) -> "DeviationSeries":
        prov = dict(self.provenance, rescale=factor)
        return DeviationSeries(self.level, self.shells, self.times, self.values / factor, prov)


def limit_reference(model, family: str, ref_level: int, ic, bc, t_span,
                    cfg: SolverConfig | None = None, *, J: int = 1,
                    consumer_levels: Sequence[int] = ()) -> Trajectory:
    """High-level run standing in for the vanishing-regularization limit.

    ``family`` is ``"canonical"`` (cutoff ``(ref_level, J)``) or ``"viscous"``
    (``nu = 2^(-4 ref_level / 3)``).  ``ref_level`` must exceed every level in
    ``consumer_levels``.
    """
    if consumer_levels and ref_level <= max(consumer_levels):
        raise ContractViolation(
            f"reference level {ref_level} must exceed the consumer levels (max {max(consumer_levels)})")
    if family == "canonical":
        reg = CanonicalCutoff(ref_level, J)
    elif family == "viscous":
        reg = Viscous(nu_level(ref_level))
    else:
        raise ContractViolation(f"unknown reference family {family!r}")
    return _require_ok(integrate(model, reg, bc, ic, t_span, cfg), "reference run")


def _check_same_problem(traj: Trajectory, ref: Trajectory, key):
    if traj.model != ref.model:
        raise ContractViolation(f"run {key!r} uses model {traj.model}, reference uses {ref.model}")
    if traj.bc != ref.bc:
        raise ContractViolation(f"run {key!r} has a different boundary condition from the reference")
    m = min(traj.M, ref.M)
    if not np.array_equal(traj.y[0][:m], ref.y[0][:m]):
        raise ContractViolation(f"run {key!r} starts from different initial data than the reference")


def deviations(runs: Mapping[Hashable, Trajectory], ref: Trajectory, shells: Sequence[int],
               times) -> dict:
    """Deviation series ``u^(run) - u^(ref)`` on common shells and times."""
    shells = tuple(int(n) for n in shells)
    times = np.asarray(times, dtype=float)
    if any(n < 1 for n in shells):
        raise ContractViolation("shells are numbered from 1")
    _require_ok(ref, "reference run")
    u_ref = ref.sample(times)[:, [n - 1 for n in shells]]
    out = {}
    for key, traj in runs.items():
        _check_same_problem(traj, ref, key)
        _require_ok(traj, f"run {key!r}")
        if max(shells) > traj.M:
            raise ContractViolation(f"run {key!r} has only {traj.M} shells")
        vals = traj.sample(times)[:, [n - 1 for n in shells]] - u_ref
        prov = {"model": traj.model.coupling, "reg": getattr(traj.reg, "label", str(traj.reg)),
                "ref": getattr(ref.reg, "label", str(ref.reg)),
                "atol": traj.cfg.atol if traj.cfg else None}
        out[key] = DeviationSeries(key, shells, times, vals, prov)
    return out


def _as_array(s) -> np.ndarray:
    return np.asarray(s.values if isinstance(s, DeviationSeries) else s)


@dataclass(frozen=True)
class EigenvalueEstimate:
    rho: float | complex
    dispersion: float
    ratios: dict
    n_probes: int
    n_discarded: int


def estimate_eigenvalue(series: Mapping[int, object], *, atol: float | None = None,
                        floor_factor: float = 100.0) -> EigenvalueEstimate:
    """Median of the probe-wise ratios ``delta^(N+1) / delta^(N)``.

    ``series`` maps levels ``N`` to :class:`DeviationSeries` (or arrays of
    matching shape).  Probes where either deviation is below
    ``floor_factor * atol`` are discarded.  ``dispersion`` is the median
    absolute deviation of the retained ratios; ``ratios`` holds the per-level
    medians.
    """
    levels = sorted(series)
    pairs = [N for N in levels if N + 1 in series]
    if len(pairs) < 2:
        raise ContractViolation("need at least 3 consecutive levels")
    if atol is None:
        atol = next((s.provenance.get("atol") for s in series.values()
                     if isinstance(s, DeviationSeries) and s.provenance.get("atol")), 1e-12)
    floor = floor_factor * atol
    all_r, per_level, discarded = [], {}, 0
    for N in pairs:
        a, b = _as_array(series[N]).ravel(), _as_array(series[N + 1]).ravel()
        if a.shape != b.shape:
            raise ContractViolation("deviation series of different shapes")
        keep = (np.abs(a) >= floor) & (np.abs(b) >= floor)
        discarded += int((~keep).sum())
        if keep.any():
            r = b[keep] / a[keep]
            per_level[N] = _median(r)
            all_r.append(r)
    if not all_r:
        raise FitError("all probes fell below the tolerance floor")
    r = np.concatenate(all_r)
    rho = _median(r)
    return EigenvalueEstimate(rho, float(np.median(np.abs(r - rho))), per_level, int(r.size), discarded)


def _median(r: np.ndarray):
    if np.iscomplexobj(r):
        return complex(np.median(r.real), np.median(r.imag))
    return float(np.median(r))


@dataclass(frozen=True)
class PrefactorFit:
    c: dict
    per_level: dict
    reference: Hashable


def fit_prefactors(series_by_label: Mapping[Hashable, Mapping[int, object]], rho: float,
                   reference: Hashable | None = None) -> PrefactorFit:
    """Prefactors ``c_label`` of the eigenmode relative to a reference label.

    For each label the rescaled deviations ``delta^(N,label)/rho^N`` are fitted,
    pooled over the levels shared with the reference, against the reference
    shape ``delta^(N,ref)/rho^N`` by scalar least squares. The reference gets
    ``c = 1``.
    """
    labels = list(series_by_label)
    if not labels:
        raise ContractViolation("no series to fit")
    reference = labels[0] if reference is None else reference
    ref = series_by_label[reference]
    c, per_level = {}, {}
    for label in labels:
        if label == reference:
            c[label] = 1.0
            per_level[label] = {N: 1.0 for N in ref}
            continue
        run = series_by_label[label]
        common = sorted(set(run) & set(ref))
        if not common:
            raise ContractViolation(f"label {label!r} shares no levels with the reference")
        num = den = 0.0
        levels = {}
        for N in common:
            s = _as_array(ref[N]).ravel() / rho ** N
            d = _as_array(run[N]).ravel() / rho ** N
            ss = float(np.vdot(s, s).real)
            sd = float(np.vdot(s, d).real)
            num += sd
            den += ss
            levels[N] = sd / ss if ss > 0 else float("nan")
        scale = max(float(np.max(np.abs(_as_array(run[N]) / rho ** N))) for N in common)
        if den <= (1e-12 * max(scale, 1e-300)) ** 2 * len(common):
            raise FitError("reference eigenmode shape is numerically zero")
        c[label] = num / den
        per_level[label] = levels
    return PrefactorFit(c, per_level, reference)


# --------------------------------------------------------------------------- #
# RG relation between levels N and N + 1
# --------------------------------------------------------------------------- #

def _boundary_table(traj: Trajectory, shell: int, factor: float, refine: int) -> Tabulated:
    t = traj.t
    if refine > 0 and t.size > 1:
        frac = np.arange(refine + 1) / (refine + 1)
        t = np.concatenate([(t[:-1, None] + np.diff(t)[:, None] * frac).ravel(), t[-1:]])
    y = factor * traj.sample(t)[:, shell - 1]
    yp = factor * traj.sample_derivative(t)[:, shell - 1]
    return Tabulated(t, y, yp)


def verify_rg_relation(model, J: int, N: int, ic, bc, t_span, cfg: SolverConfig | None = None,
                       *, refine: int = 3) -> float:
    """Check ``Phi^(N+1,J) = R[Phi^(N,J)]`` on one initial/boundary pair.

    Integrates the ``(N+1, J)`` model, feeds ``lambda u_1(t)`` back as the
    innermost boundary of the ``(N, J)`` model with shifted initial data
    ``lambda a_{n+1}``, and returns ``max |u_{n+1}(t) - u~_n(t)/lambda|`` over
    shells and the union of both step grids.  ``refine`` extra dense-output
    samples per step feed the tabulated boundary.
    """
    model = as_model(model)
    if N < 0:
        raise ContractViolation("N must be >= 0")
    big = _require_ok(integrate(model, CanonicalCutoff(N + 1, J), bc, ic, t_span, cfg), "(N+1, J) run")
    a_shift = LAMBDA * big.y[0][1:]
    inner = _boundary_table(big, 1, LAMBDA, refine)
    if model.boundary_arity == 1:
        bc_shift = BoundarySpec((inner,), "rg-shift")
    else:
        bc_shift = BoundarySpec((Scaled(big.bc.functions[-1], LAMBDA), inner), "rg-shift")
    small = _require_ok(integrate(model, CanonicalCutoff(N, J), bc_shift, a_shift, t_span, cfg),
                        "(N, J) run")
    times = np.union1d(big.t, small.t)
    diff = big.sample(times)[:, 1:] - small.sample(times) / LAMBDA
    return float(np.max(np.abs(diff)))


# --------------------------------------------------------------------------- #
# Viscous bridge and rescaled viscous deviations
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class BridgeSeries:
    """Per sample time: level ``N_t``, ``beta_t <= 1`` and ``beta`` one level deeper."""

    times: np.ndarray
    N: np.ndarray
    beta: np.ndarray
    beta_next: np.ndarray
    flagged: np.ndarray
    nu: float


def viscous_bridge(traj: Trajectory, times, nu: float | None = None) -> BridgeSeries:
    """Largest level ``N`` with ``nu k_N / |u_N(t)| <= 1`` at each sample time.

    Shells with ``u_N = 0`` count as failing the bound.  Times where no level
    qualifies get ``N_t = 0`` and are flagged.  The maximal level must be
    interior to the truncation.
    """
    if nu is None:
        if not isinstance(traj.reg, Viscous):
            raise ContractViolation("nu is required for non-viscous trajectories")
        nu = traj.reg.nu
    times = np.atleast_1d(np.asarray(times, dtype=float))
    U = np.abs(traj.sample(times))
    k = 2.0 ** np.arange(1, traj.M + 1)
    with np.errstate(over="ignore"):
        ratio = np.divide(nu * k, U, out=np.full(U.shape, np.inf), where=U > 0)
    ok = ratio <= 1.0
    any_ok = ok.any(axis=1)
    N = np.where(any_ok, traj.M - np.argmax(ok[:, ::-1], axis=1), 0)
    if np.any(N >= traj.M):
        raise ContractViolation("bridge level reaches the truncation; increase the shell count")
    rows = np.arange(times.size)
    beta = np.where(any_ok, ratio[rows, np.maximum(N - 1, 0)], np.nan)
    beta_next = ratio[rows, N]
    return BridgeSeries(times, N.astype(int), beta, beta_next, ~any_ok, float(nu))


def rescale_deviations(series: Mapping[int, DeviationSeries], rho: float) -> dict:
    """``v^(N) = delta^(N) / rho^N`` for every level."""
    return {N: s.rescaled(rho ** N) for N, s in series.items()}


def cauchy_distances(series: Mapping[int, DeviationSeries], shell: int = 1) -> dict:
    """Sup-in-time distance between consecutive levels, keyed by the upper level."""
    levels = sorted(series)
    return {b: float(np.max(np.abs(series[b].shell(shell) - series[a].shell(shell))))
            for a, b in zip(levels[:-1], levels[1:]) if b == a + 1}


def viscous_rescaled_deviation(model, levels: Sequence[int], ic, bc, shells: Sequence[int],
                               times, t_span, cfg: SolverConfig | None = None, *,
                               rho: float = -0.5, ref_level: int | None = None,
                               workers: int | None = 1) -> dict:
    """Rescaled deviations ``(u^(nu_N) - u^(nu_ref)) / rho^N`` with ``nu_N = 2^(-4N/3)``.

    The rescaling multiplies integration error by ``|rho|^-N``; the default
    solver settings are therefore tighter than the library default.
    """
    cfg = cfg or RESCALED_CONFIG
    levels = sorted(int(N) for N in levels)
    ref_level = default_ref_level(levels) if ref_level is None else ref_level
    ref = limit_reference(model, "viscous", ref_level, ic, bc, t_span, cfg, consumer_levels=levels)
    jobs = {N: RunJob(as_model(model).coupling, Viscous(nu_level(N)), bc, ic, t_span, cfg) for N in levels}
    runs = _unwrap(integrate_many(jobs, workers))
    return rescale_deviations(deviations(runs, ref, shells, times), rho)


def _unwrap(results: Mapping) -> dict:
    for key, r in results.items():
        if isinstance(r, JobFailure):
            raise ExperimentError(f"run {key!r} failed: {r.error}")
    return dict(results)


# --------------------------------------------------------------------------- #
# Random-regularization attractor probe
# --------------------------------------------------------------------------- #

def draw_coefficients(seed: int, N: int, sample: int, J: int, lo: float, hi: float) -> tuple:
    """Dissipative coefficients uniform on ``(lo, hi]`` from a Philox stream keyed by ``(N, sample)``."""
    if not (0 <= lo <= hi and hi > 0):
        raise ContractViolation("coefficient range must satisfy 0 <= lo <= hi, hi > 0")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(N, sample))))
    x = rng.random(J)
    return tuple(float(v) for v in hi - (hi - lo) * x)


@dataclass(frozen=True, eq=False)
class ProbeRecord:
    seed: int
    N: int
    sample: int
    coeffs: tuple
    observables: tuple | None
    endpoint: np.ndarray | None
    status: str
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "completed"


@dataclass(frozen=True, eq=False)
class AttractorCloud:
    records: tuple
    t_star: float
    seed: int
    coeff_range: tuple
    J: int

    @property
    def points(self) -> np.ndarray:
        pts = [r.observables for r in self.records if r.ok]
        return np.asarray(pts, dtype=float).reshape(-1, 2)

    def group(self, N: int) -> np.ndarray:
        pts = [r.observables for r in self.records if r.ok and r.N == N]
        return np.asarray(pts, dtype=float).reshape(-1, 2)

    @property
    def failures(self) -> list:
        return [r for r in self.records if not r.ok]


@dataclass(frozen=True)
class _ProbeJob:
    model: str
    N: int
    sample: int
    seed: int
    J: int
    coeff_range: tuple
    ic: object
    bc: object
    t_star: float
    cfg: SolverConfig


def _probe(job: _ProbeJob) -> ProbeRecord:
    c = draw_coefficients(job.seed, job.N, job.sample, job.J, *job.coeff_range)
    try:
        tr = integrate(job.model, CanonicalCutoff(job.N, job.J, coeffs=c), job.bc, job.ic,
                       job.t_star, job.cfg)
    except (ValueError, FloatingPointError) as exc:
        return ProbeRecord(job.seed, job.N, job.sample, c, None, None, "error", str(exc))
    if not tr.ok:
        return ProbeRecord(job.seed, job.N, job.sample, c, None, None, tr.status, tr.message)
    end = tr.final.copy()
    end.setflags(write=False)
    obs = tuple(float(v) for v in end[:2].real)
    return ProbeRecord(job.seed, job.N, job.sample, c, obs, end, tr.status)


def attractor_probe(model="gledzer", levels: Sequence[int] = (20, 30), samples: int = 20,
                    coeff_range: tuple = (0.0, 3.0), J: int = 3, ic="IC2", bc=None,
                    t_star: float = 0.5, seed: int = 0, cfg: SolverConfig | None = None,
                    workers: int | None = 1) -> AttractorCloud:
    """Endpoints ``(u_1, u_2)(t_star)`` of randomly regularized runs.

    For each level ``N`` and sample index, the ``J`` dissipative coefficients
    are drawn from a stream determined by ``(seed, N, sample)`` alone, so the
    cloud does not depend on scheduling.  Failed runs stay in ``records`` with
    their status and are excluded from ``points``.
    """
    model = as_model(model)
    if t_star <= 0:
        raise ContractViolation("t_star must be positive")
    cfg = cfg or SolverConfig()
    jobs = [_ProbeJob(model.coupling, int(N), s, int(seed), J, tuple(map(float, coeff_range)),
                      ic, bc, float(t_star), cfg)
            for N in levels for s in range(samples)]
    results = run_jobs(_probe, jobs, workers)
    records = []
    for job, r in zip(jobs, results):
        if isinstance(r, JobFailure):
            c = draw_coefficients(job.seed, job.N, job.sample, job.J, *job.coeff_range)
            r = ProbeRecord(job.seed, job.N, job.sample, c, None, None, "error", r.error)
        records.append(r)
    records.sort(key=lambda r: (r.N, r.sample))
    return AttractorCloud(tuple(records), float(t_star), int(seed), tuple(coeff_range), J)


# --------------------------------------------------------------------------- #
# Perturbation growth
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ChaosPoint:
    N: int
    norm: float
    tolerance_limited: bool
    status: str = "completed"


@dataclass(frozen=True)
class _ChaosJob:
    model: str
    N: int
    J: int
    eps: float
    ic: object
    bc: object
    t_star: float
    cfg: SolverConfig


def _chaos(job: _ChaosJob) -> ChaosPoint:
    base, pert = integrate_coupled(job.model, [CanonicalCutoff(job.N, job.J),
                                               CanonicalCutoff(job.N, job.J, eps=job.eps)],
                                   job.bc, job.ic, job.t_star, job.cfg)
    if not base.ok:
        return ChaosPoint(job.N, float("nan"), False, base.status)
    norm = float(np.linalg.norm(pert.final - base.final))
    return ChaosPoint(job.N, norm, norm < 10 * job.cfg.atol)


def chaos_growth(model="sabra", J: int = 2, eps: float = 1e-13, levels: Sequence[int] = range(6, 14),
                 ic="IC2", bc=None, t_star: float = 1.0, cfg: SolverConfig | None = None,
                 workers: int | None = 1) -> list:
    """Energy-norm separation of the ``eps``-perturbed and unperturbed ``(N, J)`` runs at ``t_star``.

    Both members of each pair are integrated as one stacked system, so they
    share every step and the separation is not polluted by independent
    step-size choices.  Separations under ``10 atol`` are flagged.
    """
    if eps < 0:
        raise ContractViolation("eps must be >= 0")
    cfg = cfg or CHAOS_CONFIG
    jobs = [_ChaosJob(as_model(model).coupling, int(N), J, float(eps), ic, bc, float(t_star), cfg)
            for N in levels]
    out = []
    for job, r in zip(jobs, run_jobs(_chaos, jobs, workers)):
        if isinstance(r, JobFailure):
            r = ChaosPoint(job.N, float("nan"), False, "error")
        out.append(r)
    return out
