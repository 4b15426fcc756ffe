"""Experiment execution: grid expansion, parallel sweeps and on-disk artifacts.

Every experiment writes into its output directory:

* ``config.json``   the config text (verbatim when parsed from text)
* ``manifest.json`` config echo, seed, library version, wall time, per-run status
* ``results.json``  analysis records
* CSV files         sampled trajectories / deviations / clouds, columns ``t,n,re,im``
"""
from __future__ import annotations

import csv
import json
import logging
import math
import platform
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from ._version import __version__
from .analysis import FitError, fit_double_exponential, fit_geometric, stationary_dyadic_exact
from .config import ExperimentConfig, ICLiteral, serialize
from .core import Auxiliary, CanonicalCutoff, Viscous, rhs
from .integrator import Trajectory
from .parallel import JobFailure, default_workers
from .rglab import (
    ExperimentError,
    RunJob,
    attractor_probe,
    cauchy_distances,
    chaos_growth,
    default_ref_level,
    deviations,
    estimate_eigenvalue,
    fit_prefactors,
    integrate_many,
    limit_reference,
    nu_level,
    rescale_deviations,
    verify_rg_relation,
    viscous_bridge,
)

log = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"


@dataclass
class ExperimentResult:
    out_dir: Path | None
    results: dict
    runs: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    files: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures


# --------------------------------------------------------------------------- #
# Grid helpers
# --------------------------------------------------------------------------- #

def _ic_value(entry):
    if isinstance(entry, ICLiteral):
        return [list(v) if isinstance(v, tuple) else v for v in entry.values]
    return entry


def _ic_label(entry, i: int) -> str:
    return entry if isinstance(entry, str) else f"literal{i}"


def expand_grid(cfg: ExperimentConfig) -> dict:
    """``label -> RunJob`` for every (ic, regularization) grid point."""
    g = cfg.grid
    regs = []
    for fam in g.families:
        if fam == "canonical":
            for J in g.J:
                coeffs = g.coeffs if g.coeffs is not None and len(g.coeffs) == J else None
                regs += [(f"J={J},N={N}", CanonicalCutoff(N, J, coeffs=coeffs, eps=g.eps)) for N in g.N]
        elif fam == "auxiliary":
            for b in g.beta:
                regs += [(f"beta={b:g},N={N}", Auxiliary(N, b, M=g.M)) for N in g.N]
        else:
            if g.nu:
                regs += [(f"nu={nu:.6g}", Viscous(nu, M=g.M)) for nu in g.nu]
            else:
                regs += [(f"nuN={N}", Viscous(nu_level(N), M=g.M)) for N in g.N]
    cfg_solver = cfg.solver.build()
    jobs = {}
    for i, ic in enumerate(cfg.ic):
        for label, reg in regs:
            jobs[f"{_ic_label(ic, i)}/{label}"] = RunJob(cfg.model, reg, cfg.bc, _ic_value(ic),
                                                         _t_span(cfg), cfg_solver)
    return jobs


def _t_span(cfg: ExperimentConfig):
    return (cfg.t0, cfg.T)


def sample_times(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.sample_times is not None:
        return np.asarray(cfg.sample_times, dtype=float)
    if cfg.dt is not None:
        n = int(math.floor((cfg.T - cfg.t0) / cfg.dt + 1e-9))
        return cfg.t0 + cfg.dt * np.arange(n + 1)
    return np.linspace(cfg.t0, cfg.T, 101)


def sweep(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    """Integrate every grid point; results keyed by label in grid order.

    Failing points yield :class:`JobFailure` (or a non-completed
    :class:`Trajectory`) in their slot without affecting the others.
    """
    jobs = expand_grid(cfg)
    if not jobs:
        raise ExperimentError("empty grid")
    return integrate_many(jobs, _workers(cfg, workers))


def _workers(cfg, workers):
    if workers is not None:
        return workers
    return cfg.workers if cfg.workers is not None else default_workers()


# --------------------------------------------------------------------------- #
# Writers
# --------------------------------------------------------------------------- #

def _safe(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.=_-]+", "_", label)


def _fmt(x: float) -> str:
    return FLOAT_FMT % x


def write_state_csv(path: Path, times: np.ndarray, states: np.ndarray, shells=None) -> None:
    """Rows ``t, n, re, im`` for every time and shell."""
    states = np.asarray(states)
    shells = list(range(1, states.shape[1] + 1)) if shells is None else list(shells)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "n", "re", "im"])
        for t, row in zip(times, states):
            for n, v in zip(shells, row):
                w.writerow([_fmt(t), n, _fmt(float(np.real(v))), _fmt(float(np.imag(v)))])


def read_state_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_state_csv`: ``(times, states)`` (complex states)."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    times = np.unique(data["t"])
    n = np.unique(data["n"]).astype(int)
    vals = (data["re"] + 1j * data["im"]).reshape(times.size, n.size)
    return times, vals


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _num(x):
    if isinstance(x, complex):
        return [x.real, x.imag]
    x = float(x)
    return x if math.isfinite(x) else None


# --------------------------------------------------------------------------- #
# Experiments
# --------------------------------------------------------------------------- #

class _Ctx:
    def __init__(self, cfg: ExperimentConfig, out: Path | None, workers: int):
        self.cfg = cfg
        self.out = out
        self.workers = workers
        self.runs: list = []
        self.failures: list = []
        self.files: list = []

    def path(self, *parts) -> Path | None:
        if self.out is None:
            return None
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(str(p.relative_to(self.out)))
        return p

    def record(self, label: str, res, required: bool = True) -> Trajectory | None:
        if isinstance(res, JobFailure):
            entry = {"label": label, "status": "error", "message": res.error}
        else:
            entry = {"label": label, "status": res.status, "message": res.message, "steps": res.n_steps}
        self.runs.append(entry)
        if entry["status"] != "completed":
            if required:
                self.failures.append(entry)
            return None
        return res

    def fail(self, label: str, message: str):
        entry = {"label": label, "status": "error", "message": message}
        self.runs.append(entry)
        self.failures.append(entry)


def _group_by_ic(cfg, results: dict) -> dict:
    groups: dict = {}
    for key, traj in results.items():
        ic, label = key.split("/", 1)
        groups.setdefault(ic, {})[label] = traj
    return groups


def _write_trajectories(ctx: _Ctx, trajs: dict, times):
    for key, traj in trajs.items():
        if traj is None:
            continue
        ts = times[(times >= traj.t0) & (times <= traj.t_end)]
        path = ctx.path("trajectories", _safe(key) + ".csv")
        if path is not None:
            write_state_csv(path, ts, traj.sample(ts))


def _run_grid(ctx: _Ctx) -> dict:
    res = sweep(ctx.cfg, ctx.workers)
    return {k: ctx.record(k, v) for k, v in res.items()}


def _single_run(ctx: _Ctx) -> dict:
    trajs = _run_grid(ctx)
    _write_trajectories(ctx, trajs, sample_times(ctx.cfg))
    out = {}
    for key, tr in trajs.items():
        if tr is not None:
            out[key] = {"steps": tr.n_steps, "energy_final": float(np.sum(np.abs(tr.final) ** 2)),
                        "t_end": tr.t_end}
    return {"runs": out}


def _level_of(label: str) -> tuple[str, int] | None:
    if label.startswith("nuN="):
        return "nuN", int(label[4:])
    if ",N=" in label:
        fam, n = label.rsplit(",N=", 1)
        return fam, int(n)
    return None


def _deviation_analysis(ctx: _Ctx, eigen: bool) -> dict:
    cfg = ctx.cfg
    trajs = _run_grid(ctx)
    times = sample_times(cfg)
    _write_trajectories(ctx, trajs, times)
    levels = sorted(set(cfg.grid.N))
    ref_level = cfg.analysis.ref_level if cfg.analysis.ref_level is not None else default_ref_level(levels)
    J_ref = cfg.grid.J[0]
    out = {"ref_level": ref_level}
    for i, ic in enumerate(cfg.ic):
        icl = _ic_label(ic, i)
        runs = {lab: tr for lab, tr in _group_by_ic(cfg, trajs).get(icl, {}).items() if tr is not None}
        try:
            ref = limit_reference(cfg.model, "canonical", ref_level, _ic_value(ic), cfg.bc, _t_span(cfg),
                                  cfg.solver.build(), J=J_ref, consumer_levels=levels)
        except ExperimentError as exc:
            ctx.fail(f"{icl}/reference", str(exc))
            continue
        ctx.runs.append({"label": f"{icl}/reference N={ref_level},J={J_ref}", "status": ref.status,
                         "message": ref.message, "steps": ref.n_steps})
        devs = deviations(runs, ref, cfg.shells, times)
        for lab, d in devs.items():
            path = ctx.path("deviations", _safe(f"{icl}/{lab}") + ".csv")
            if path is not None:
                write_state_csv(path, d.times, d.values, d.shells)
        fams: dict = {}
        for lab, d in devs.items():
            lev = _level_of(lab)
            if lev is not None:
                fams.setdefault(lev[0], {})[lev[1]] = d
        rec: dict = {"families": {}}
        for fam, series in fams.items():
            sup = {N: float(np.max(np.abs(s.values))) for N, s in sorted(series.items())}
            entry = {"sup_deviation": {str(N): v for N, v in sup.items()}}
            try:
                fit = fit_geometric(sup)
                entry["geometric_fit"] = {"ratio": fit["ratio"], "prefactor": fit["prefactor"],
                                          "r2": fit.r2, "flags": list(fit.flags)}
            except FitError as exc:
                entry["geometric_fit"] = {"error": str(exc)}
            rec["families"][fam] = entry
        if eigen and fams:
            window = cfg.analysis.probe_window or (cfg.t0, cfg.T)
            mask = (times >= window[0]) & (times <= window[1])
            probes = {}
            for fam, series in fams.items():
                probes[fam] = {N: s.values[mask] for N, s in series.items()}
            first = next(iter(fams))
            try:
                est = estimate_eigenvalue(probes[first], atol=cfg.solver.atol)
                rec["eigenvalue"] = {"family": first, "rho": _num(est.rho), "dispersion": est.dispersion,
                                     "n_probes": est.n_probes, "n_discarded": est.n_discarded,
                                     "per_level": {str(k): _num(v) for k, v in est.ratios.items()}}
            except (FitError, ValueError) as exc:
                rec["eigenvalue"] = {"error": str(exc)}
            try:
                pf = fit_prefactors(probes, cfg.analysis.rho, reference=first)
                rec["prefactors"] = {"rho": cfg.analysis.rho, "reference": first,
                                     "c": {k: _num(v) for k, v in pf.c.items()}}
            except (FitError, ValueError) as exc:
                rec["prefactors"] = {"error": str(exc)}
        out[icl] = rec
    return out


def _rg_verify(ctx: _Ctx) -> dict:
    cfg = ctx.cfg
    out = {}
    for i, ic in enumerate(cfg.ic):
        icl = _ic_label(ic, i)
        for J in cfg.grid.J:
            for N in cfg.grid.N:
                label = f"{icl}/J={J},N={N}"
                try:
                    d = verify_rg_relation(cfg.model, J, N, _ic_value(ic), cfg.bc, _t_span(cfg),
                                           cfg.solver.build())
                except (ExperimentError, ValueError) as exc:
                    ctx.fail(label, str(exc))
                    continue
                ctx.runs.append({"label": label, "status": "completed", "message": ""})
                out[label] = {"discrepancy": d}
    return {"rg_relation": out}


def _viscous_bridge(ctx: _Ctx) -> dict:
    cfg = ctx.cfg
    trajs = _run_grid(ctx)
    times = sample_times(cfg)
    _write_trajectories(ctx, trajs, times)
    out = {}
    for icl, runs in _group_by_ic(cfg, trajs).items():
        levels = {}
        path = ctx.path("bridge", _safe(icl) + ".csv")
        rows = []
        for lab, tr in sorted(runs.items(), key=lambda kv: -kv[1].reg.nu if kv[1] is not None else 0):
            if tr is None:
                continue
            try:
                br = viscous_bridge(tr, times[(times >= tr.t0) & (times <= tr.t_end)])
            except ValueError as exc:
                ctx.fail(f"{icl}/{lab}/bridge", str(exc))
                continue
            levels[br.nu] = br
            for t, N, b, f in zip(br.times, br.N, br.beta, br.flagged):
                rows.append([_fmt(t), _fmt(br.nu), int(N), _fmt(b), int(f)])
        if path is not None:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t", "nu", "N_t", "beta_t", "flagged"])
                w.writerows(rows)
        nus = sorted(levels, reverse=True)
        mono = all(np.all(levels[b].N >= levels[a].N) for a, b in zip(nus[:-1], nus[1:])
                   if levels[a].times.shape == levels[b].times.shape)
        out[icl] = {"nondecreasing_in_1/nu": bool(mono),
                    "per_nu": {f"{nu:.6g}": {"N_min": int(levels[nu].N.min()), "N_max": int(levels[nu].N.max()),
                                             "beta_max": _num(np.nanmax(levels[nu].beta)),
                                             "flagged": int(levels[nu].flagged.sum())} for nu in nus}}
    return out


def _viscous_rescaled(ctx: _Ctx) -> dict:
    cfg = ctx.cfg
    times = sample_times(cfg)
    levels = sorted(set(cfg.grid.N))
    ref_level = cfg.analysis.ref_level if cfg.analysis.ref_level is not None else default_ref_level(levels)
    out = {"ref_level": ref_level}
    for i, ic in enumerate(cfg.ic):
        icl = _ic_label(ic, i)
        try:
            ref = limit_reference(cfg.model, "viscous", ref_level, _ic_value(ic), cfg.bc, _t_span(cfg),
                                  cfg.solver.build(), consumer_levels=levels)
        except ExperimentError as exc:
            ctx.fail(f"{icl}/reference", str(exc))
            continue
        sub = cfg.model_copy(update={"ic": (ic,), "grid": cfg.grid.model_copy(
            update={"families": ("viscous",), "nu": ()})})
        res = sweep(sub, ctx.workers)
        runs = {}
        for key, tr in res.items():
            tr = ctx.record(key, tr)
            if tr is not None:
                runs[int(key.rsplit("nuN=", 1)[1])] = tr
        v = rescale_deviations(deviations(runs, ref, cfg.shells, times), cfg.analysis.rho)
        for N, s in v.items():
            path = ctx.path("rescaled", _safe(f"{icl}/nuN={N}") + ".csv")
            if path is not None:
                write_state_csv(path, s.times, s.values, s.shells)
        out[icl] = {"cauchy_sup_distance": {str(k): d for k, d in
                                            cauchy_distances(v, cfg.shells[0]).items()}}
    return out


def _attractor(ctx: _Ctx) -> dict:
    cfg = ctx.cfg
    a = cfg.analysis
    t_star = a.t_star if a.t_star is not None else cfg.T
    out = {}
    for i, ic in enumerate(cfg.ic):
        icl = _ic_label(ic, i)
        cloud = attractor_probe(cfg.model, cfg.grid.N, a.samples, a.coeff_range, cfg.grid.J[0],
                                _ic_value(ic), cfg.bc, t_star, cfg.seed, cfg.solver.build(), ctx.workers)
        path = ctx.path("cloud", _safe(icl) + ".csv")
        epath = ctx.path("cloud", _safe(icl) + "-endpoints.csv")
        J = cfg.grid.J[0]
        if path is not None:
            with open(path, "w", newline="") as fh, open(epath, "w", newline="") as eh:
                w = csv.writer(fh, lineterminator="\n")
                e = csv.writer(eh, lineterminator="\n")
                w.writerow(["N", "sample", *[f"c{j + 1}" for j in range(J)], "u1", "u2", "status"])
                e.writerow(["N", "sample", "n", "re", "im"])
                for r in cloud.records:
                    obs = [_fmt(v) for v in r.observables] if r.observables else ["nan", "nan"]
                    w.writerow([r.N, r.sample, *[_fmt(c) for c in r.coeffs], *obs, r.status])
                    if r.endpoint is not None:
                        for n, v in enumerate(r.endpoint, start=1):
                            e.writerow([r.N, r.sample, n, _fmt(float(np.real(v))), _fmt(float(np.imag(v)))])
        for r in cloud.records:
            entry = {"label": f"{icl}/N={r.N},sample={r.sample}", "status": r.status, "message": r.message}
            ctx.runs.append(entry)
        # failed probes are reported but do not fail the experiment
        pts = cloud.points
        diam = float(np.max(np.linalg.norm(pts[:, None] - pts[None], axis=-1))) if len(pts) > 1 else 0.0
        out[icl] = {"points": int(len(pts)), "failed": len(cloud.failures), "diameter": diam,
                    "t_star": t_star, "seed": cfg.seed}
    return out


def _chaos(ctx: _Ctx) -> dict:
    cfg = ctx.cfg
    t_star = cfg.analysis.t_star if cfg.analysis.t_star is not None else cfg.T
    out = {}
    for i, ic in enumerate(cfg.ic):
        icl = _ic_label(ic, i)
        pts = chaos_growth(cfg.model, cfg.grid.J[0], cfg.grid.eps, cfg.grid.N, _ic_value(ic), cfg.bc,
                           t_star, cfg.solver.build(), ctx.workers)
        path = ctx.path("chaos", _safe(icl) + ".csv")
        if path is not None:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["N", "norm", "tolerance_limited", "status"])
                for p in pts:
                    w.writerow([p.N, _fmt(p.norm), int(p.tolerance_limited), p.status])
        for p in pts:
            entry = {"label": f"{icl}/N={p.N}", "status": p.status, "message": ""}
            ctx.runs.append(entry)
            if p.status != "completed":
                ctx.failures.append(entry)
        rec = {"norms": {str(p.N): _num(p.norm) for p in pts}, "eps": cfg.grid.eps}
        good = {p.N: p.norm for p in pts if p.status == "completed"}
        try:
            fit = fit_double_exponential(good, cfg.grid.eps)
            rec["double_exponential"] = {"slope": fit["slope"], "intercept": fit["intercept"],
                                         "r2": fit.r2, "discarded": list(fit.discarded)}
        except (FitError, ValueError) as exc:
            rec["double_exponential"] = {"error": str(exc)}
        out[icl] = rec
    return out


def _stationary(ctx: _Ctx) -> dict:
    """Integrate the dyadic ``(N, 1)`` model with ``b0 = 1`` from ``a_n = 1/2``."""
    cfg = ctx.cfg
    jobs = {f"N={N}": RunJob("dyadic", CanonicalCutoff(N, 1), cfg.bc or "const(1)", [0.5] * (N + 1),
                             _t_span(cfg), cfg.solver.build()) for N in cfg.grid.N}
    res = integrate_many(jobs, ctx.workers)
    trajs = {k: ctx.record(k, v) for k, v in res.items()}
    _write_trajectories(ctx, trajs, sample_times(cfg))
    out = {}
    for key, tr in trajs.items():
        if tr is None:
            continue
        N = int(key[2:])
        exact = stationary_dyadic_exact(N, np.arange(1, N + 2))
        resid = rhs("dyadic", CanonicalCutoff(N, 1), cfg.bc or "const(1)", cfg.T, exact)
        out[key] = {"max_endpoint_error": float(np.max(np.abs(tr.final - exact))),
                    "max_rhs_at_exact": float(np.max(np.abs(resid)))}
    return {"stationary": out}


_DISPATCH = {
    "single-run": _single_run,
    "rg-convergence": lambda ctx: _deviation_analysis(ctx, eigen=False),
    "eigenmode": lambda ctx: _deviation_analysis(ctx, eigen=True),
    "rg-verify": _rg_verify,
    "viscous-bridge": _viscous_bridge,
    "viscous-rescaled": _viscous_rescaled,
    "attractor-probe": _attractor,
    "chaos-growth": _chaos,
    "stationary-check": _stationary,
}


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None, *, workers: int | None = None,
                   config_text: str | None = None) -> ExperimentResult:
    """Run one experiment and (when ``out`` is given) write its artifacts.

    Numerical outputs depend only on ``cfg``; the worker count changes
    scheduling, not results.
    """
    out_dir = Path(out) if out is not None else (Path(cfg.out) if cfg.out else None)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    ctx = _Ctx(cfg, out_dir, _workers(cfg, workers))
    start = time.perf_counter()
    results = _DISPATCH[cfg.kind](ctx)
    wall = time.perf_counter() - start
    if out_dir is not None:
        (out_dir / "config.json").write_text(config_text if config_text is not None else serialize(cfg))
        _write_json(out_dir / "results.json", results)
        manifest = {
            "library": "shellrg",
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "config": cfg.model_dump(mode="json"),
            "seed": cfg.seed,
            "kind": cfg.kind,
            "wall_time_s": wall,
            "workers": ctx.workers,
            "runs": ctx.runs,
            "failures": ctx.failures,
            "status": "ok" if not ctx.failures else "failed",
            "outputs": sorted(set(ctx.files) | {"config.json", "results.json"}),
        }
        _write_json(out_dir / "manifest.json", manifest)
    return ExperimentResult(out_dir, results, ctx.runs, ctx.failures, sorted(set(ctx.files)), wall)
