"""End-to-end acceptance checks, one test (or a few) per criterion.

Each check records its outcome through the ``record`` fixture; a summary
with one PASS/FAIL line per criterion is printed at the end of the session.
Parts that cannot be met are marked ``xfail(strict=True)``: they still run,
still print FAIL, and would turn the suite red if they started passing.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import cdist, directed_hausdorff

from shellrg.analysis import (
    detect_blowup,
    fit_double_exponential,
    shape_distance,
    stationary_dyadic_exact,
)
from shellrg.boundary import builtin_bc
from shellrg.core import (
    Auxiliary,
    CanonicalCutoff,
    Viscous,
    apply_symmetry,
    builtin_ic,
    coupling,
    energy_balance_residual,
    energy_bound,
)
from shellrg.integrator import SolverConfig, integrate
from shellrg.rglab import (
    attractor_probe,
    cauchy_distances,
    chaos_growth,
    default_ref_level,
    deviations,
    estimate_eigenvalue,
    fit_prefactors,
    limit_reference,
    verify_rg_relation,
    viscous_bridge,
    viscous_rescaled_deviation,
)

pytestmark = pytest.mark.slow

DYADIC_BC = "dyadic-default"
PROBE_TIMES = np.linspace(1.0, 3.0, 201)
SHELLS = [1, 2, 3, 4]


def _family(J, levels, ref, T=3.0, ic="IC2"):
    runs = {N: integrate("dyadic", CanonicalCutoff(N, J), DYADIC_BC, ic, T) for N in levels}
    return runs, deviations(runs, ref, SHELLS, PROBE_TIMES)


@pytest.fixture(scope="module")
def dyadic_ic2():
    ref = limit_reference("dyadic", "canonical", 34, "IC2", DYADIC_BC, 3.0, consumer_levels=range(8, 17))
    runs, devs = {}, {}
    for J in (1, 2, 3):
        runs[J], devs[J] = _family(J, range(8, 17), ref)
    return ref, runs, devs


# --------------------------------------------------------------------------- #
# 1. Stationary oracle
# --------------------------------------------------------------------------- #

def test_c01_stationary_oracle(record):
    worst = 0.0
    for N in range(0, 11):
        tr = integrate("dyadic", CanonicalCutoff(N, 1), "const(1)", [0.5] * (N + 1), 60.0)
        assert tr.ok
        worst = max(worst, float(np.max(np.abs(tr.final - stationary_dyadic_exact(N, np.arange(1, N + 2))))))
    assert record(1, "endpoint vs closed form, N=0..10", worst < 1e-8, f"max abs error {worst:.2e} (< 1e-8)")


# --------------------------------------------------------------------------- #
# 2-4. Eigenvalue and prefactors
# --------------------------------------------------------------------------- #

def test_c02_eigenvalue(record, dyadic_ic2):
    est = estimate_eigenvalue(dyadic_ic2[2][1])
    ok = abs(est.rho + 0.5) <= 0.05
    assert record(2, "rho, J=1, N=8..16, ref N=34", ok,
                  f"rho = {est.rho:.5f} (dispersion {est.dispersion:.1e}, {est.n_probes} probes)")


def test_c02_reference_doubling(record, dyadic_ic2):
    ref, runs, devs = dyadic_ic2
    ref68 = limit_reference("dyadic", "canonical", 68, "IC2", DYADIC_BC, 3.0, consumer_levels=[34])
    d68 = deviations({16: runs[1][16]}, ref68, [1], PROBE_TIMES)[16].shell(1)
    change = float(np.max(np.abs(devs[1][16].shell(1) - d68)) / np.max(np.abs(d68)))
    assert record(2, "doubling the reference level (34 -> 68)", change < 0.01,
                  f"relative change of delta u1 at N=16: {change:.1e} (< 1%)")


def _prefactors(dyadic_ic2):
    devs = dyadic_ic2[2]
    return fit_prefactors({J: {N: devs[J][N] for N in range(12, 17)} for J in (1, 2, 3)}, -0.5, reference=1).c


def test_c03_prefactor_c2(record, dyadic_ic2):
    c2 = _prefactors(dyadic_ic2)[2]
    ok = -1.38 * 1.15 <= c2 <= -1.38 * 0.85
    assert record(3, "c2 within 15% of -1.38", ok, f"c2 = {c2:.4f}")


@pytest.mark.xfail(strict=True, reason="fitted c3 has the opposite sign (-0.661); see the decisions ledger")
def test_c03_prefactor_c3(record, dyadic_ic2):
    c3 = _prefactors(dyadic_ic2)[3]
    ok = 0.66 * 0.85 <= c3 <= 0.66 * 1.15
    assert record(3, "c3 within 15% of +0.66", ok, f"c3 = {c3:.4f} (|c3| matches, sign opposite)")


def test_c04_auxiliary_prefactor(record):
    levels = range(15, 23)
    ref = limit_reference("dyadic", "canonical", default_ref_level(levels), "IC2", DYADIC_BC, 3.0,
                          consumer_levels=levels)
    _, canon = _family(1, levels, ref)
    aux_runs = {N: integrate("dyadic", Auxiliary(N, 1.0), DYADIC_BC, "IC2", 3.0) for N in levels}
    aux = deviations(aux_runs, ref, SHELLS, PROBE_TIMES)
    c = fit_prefactors({"J=1": canon, "beta=1": aux}, -0.5, reference="J=1").c["beta=1"]
    ok = abs(c - (-0.196)) <= 0.2 * 0.196
    record(4, "c_beta=1 within 20% of -0.196, N=15..22", ok, f"c = {c:.4f}")
    # truncation check: doubling M must not move the deviation measurably
    reg = Auxiliary(22, 1.0)
    wide = integrate("dyadic", Auxiliary(22, 1.0, M=2 * reg.n_shells()), DYADIC_BC, "IC2", 3.0)
    shift = float(np.max(np.abs(wide.sample(PROBE_TIMES)[:, 0] - aux_runs[22].sample(PROBE_TIMES)[:, 0])))
    rel = shift / float(np.max(np.abs(aux[22].shell(1))))
    record(4, "doubling the auxiliary truncation M at N=22", rel < 0.01,
           f"change of u1 relative to delta u1: {rel:.1e} (< 1%)")
    assert ok and rel < 0.01


# --------------------------------------------------------------------------- #
# 5. Blowup times
# --------------------------------------------------------------------------- #

def test_c05_blowup_dyadic(record):
    tr = integrate("dyadic", CanonicalCutoff(25, 1), DYADIC_BC, "IC1", 1.0)
    t_b = detect_blowup(tr).t_b
    assert record(5, "dyadic IC1 N=25, 0.61 +- 0.02", abs(t_b - 0.61) <= 0.02, f"t_b = {t_b:.4f}")


def test_c05_blowup_sabra(record):
    tr = integrate("sabra", CanonicalCutoff(17, 2), "sabra-default", "IC1", 2.0)
    t_b = detect_blowup(tr).t_b
    assert record(5, "sabra IC1 N=17, 1.36 +- 0.05", abs(t_b - 1.36) <= 0.05, f"t_b = {t_b:.4f}")


@pytest.mark.xfail(strict=True, reason="cascade onset is near t = 2.8-3.1, not 3.63; see the decisions ledger")
def test_c05_blowup_gledzer(record):
    tr = integrate("gledzer", CanonicalCutoff(30, 3), "gledzer-default", "IC1", 5.0)
    try:
        t_b, note = detect_blowup(tr).t_b, ""
    except ValueError as exc:
        t_b, note = float("nan"), f"{exc}; "
    low = detect_blowup(tr, theta=0.1).t_b
    ok = abs(t_b - 3.63) <= 0.1
    assert record(5, "gledzer IC1 N=30, 3.63 +- 0.1", ok,
                  f"t_b = {t_b:.4f} ({note}theta=0.1 gives {low:.3f})")


# --------------------------------------------------------------------------- #
# 6. RG relation
# --------------------------------------------------------------------------- #

@pytest.mark.parametrize("model,N,J,ic", [("dyadic", 2, 1, "IC1"), ("dyadic", 5, 2, "IC1"), ("gledzer", 3, 3, "IC2")])
def test_c06_rg_relation(record, model, N, J, ic):
    d = verify_rg_relation(model, J, N, ic, f"{model}-default", 0.5, SolverConfig(rtol=1e-10))
    assert record(6, f"{model} (N,J)=({N},{J})", d < 1e-6, f"discrepancy {d:.2e} (< 1e-6)")


# --------------------------------------------------------------------------- #
# 7. Energy identities
# --------------------------------------------------------------------------- #

def test_c07_energy_identities(record, dyadic_ic2):
    ref, runs, _ = dyadic_ic2
    worst_res = worst_bound = 0.0
    for tr in runs[1].values():
        res = energy_balance_residual(tr)
        worst_res = max(worst_res, res.max_abs / max(1.0, float(res.energy.max())))
        norm, bound = energy_bound(tr)
        worst_bound = max(worst_bound, float(np.max((norm - bound) / bound)))
    ref_res = energy_balance_residual(ref)
    ref_rel = ref_res.max_abs / max(1.0, float(ref_res.energy.max()))
    record(7, "flux identity on the J=1, N=8..16 runs", worst_res < 1e-6,
           f"max residual / max energy {worst_res:.2e} (reference N=34 run, diagnostic only: {ref_rel:.1e})")
    record(7, "energy bound", worst_bound <= 1e-6, f"max relative excess {worst_bound:.1e}")
    assert worst_res < 1e-6 and worst_bound <= 1e-6


# --------------------------------------------------------------------------- #
# 8. Symmetries
# --------------------------------------------------------------------------- #

SYM_CASES = [("dyadic", CanonicalCutoff(8, 1)), ("gledzer", CanonicalCutoff(6, 3)), ("sabra", CanonicalCutoff(6, 2))]


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def test_c08_time_scale_equivariance(record):
    alpha, T, ts = 2.0, 1.0, np.linspace(0.0, 1.0, 41)
    worst = 0.0
    for model, reg in SYM_CASES:
        bc = builtin_bc(f"{model}-default")
        a = builtin_ic("IC2", model, reg.n_shells())
        base = integrate(model, reg, bc, a, alpha * T)
        scaled = integrate(model, reg, apply_symmetry("time-scale", bc, alpha=alpha),
                           apply_symmetry("time-scale", a, alpha=alpha), T)
        worst = max(worst, _rel(scaled.sample(ts), apply_symmetry("time-scale", base, alpha=alpha).sample(ts)))
    assert record(8, "time-scale alpha=2, three models", worst < 1e-7, f"max relative deviation {worst:.1e}")


def test_c08_phase_equivariance(record):
    reg, bc = CanonicalCutoff(6, 2), builtin_bc("sabra-default")
    a = builtin_ic("IC2", "sabra", reg.n_shells())
    base = integrate("sabra", reg, bc, a, 1.0)
    ts = np.linspace(0.0, 1.0, 41)
    worst = [0.0]

    @settings(max_examples=10)
    @given(st.tuples(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi)))
    def check(seeds):
        rot = integrate("sabra", reg, apply_symmetry("phase", bc, model="sabra", seeds=seeds),
                        apply_symmetry("phase", a, model="sabra", seeds=seeds), 1.0)
        err = _rel(rot.sample(ts), apply_symmetry("phase", base, seeds=seeds).sample(ts))
        worst[0] = max(worst[0], err)
        assert err < 1e-7

    try:
        check()
    finally:
        record(8, "sabra phase, random Fibonacci seeds", worst[0] < 1e-7, f"max relative deviation {worst[0]:.1e}")


def test_c08_homogeneity(record):
    worst = [0.0]
    values = st.floats(-1e3, 1e3, allow_nan=False)

    @settings(max_examples=200)
    @given(st.floats(-1e3, 1e3), st.lists(values, min_size=5, max_size=5), st.lists(values, min_size=5, max_size=5))
    def check(c, re, im):
        for model, width, w in (("dyadic", 3, np.array(re[:3])), ("gledzer", 5, np.array(re)),
                                ("sabra", 5, np.array(re) + 1j * np.array(im))):
            base = coupling(model, w)
            err = abs(coupling(model, c * w) - c * c * base)
            scale = c * c * float(np.sum(np.abs(w)) ** 2) + np.finfo(float).tiny
            worst[0] = max(worst[0], err / scale)
            assert err <= 8 * np.finfo(float).eps * scale

    try:
        check()
    finally:
        record(8, "coupling homogeneity (property-based)", worst[0] <= 8 * np.finfo(float).eps,
               f"max error / scale {worst[0]:.1e}")


# --------------------------------------------------------------------------- #
# 9. Viscous bridge
# --------------------------------------------------------------------------- #

def test_c09_viscous_bridge(record):
    ts = np.linspace(0.0, 3.0, 301)
    bridges = [viscous_bridge(integrate("dyadic", Viscous(nu), DYADIC_BC, "IC2", 3.0), ts) for nu in (1e-6, 1e-7, 1e-8)]
    monotone = all(np.all(a.N <= b.N) for a, b in zip(bridges[:-1], bridges[1:]))
    maximal = all(np.all(b.beta[~b.flagged] <= 1.0) and np.all(b.beta_next > 1.0) for b in bridges)
    flagged = sum(int(b.flagged.sum()) for b in bridges)
    ok = monotone and maximal
    record(9, "N_t monotone in nu; beta_t <= 1 and maximal", ok,
           f"monotone={monotone}, maximal={maximal}, flagged records={flagged}")
    reg = Viscous(1e-8)
    wide = viscous_bridge(integrate("dyadic", Viscous(1e-8, M=2 * reg.n_shells()), DYADIC_BC, "IC2", 3.0), ts)
    same = bool(np.array_equal(wide.N, bridges[-1].N))
    record(9, "doubling the viscous truncation M (nu=1e-8)", same,
           f"identical N_t: {same}, max beta change {np.nanmax(np.abs(wide.beta - bridges[-1].beta)):.1e}")
    assert ok and same


# --------------------------------------------------------------------------- #
# 10. Rescaled viscous deviations
# --------------------------------------------------------------------------- #

def test_c10_viscous_rescaled(record):
    ts = np.linspace(0.0, 3.0, 301)
    v = viscous_rescaled_deviation("dyadic", range(16, 27), "IC1", DYADIC_BC, [1], ts, 3.0)
    dist = cauchy_distances(v)
    last = [dist[N] for N in range(23, 27)]
    decreasing = all(b < a for a, b in zip(last[:-1], last[1:]))
    ref = limit_reference("dyadic", "canonical", 40, "IC1", DYADIC_BC, 3.0)
    canon = deviations({20: integrate("dyadic", CanonicalCutoff(20, 1), DYADIC_BC, "IC1", 3.0)}, ref, [1], ts)[20]
    sd = shape_distance(v[26].shell(1), canon.shell(1))
    record(10, "Cauchy distances decreasing for the last four N", decreasing,
           ", ".join(f"{d:.2e}" for d in last))
    record(10, "limit shape differs from canonical eigenmode", sd > 0.1, f"shape distance {sd:.3f} (> 0.1)")
    assert decreasing and sd > 0.1


# --------------------------------------------------------------------------- #
# 11. Gledzer non-convergence and random-regularization clouds
# --------------------------------------------------------------------------- #

def test_c11_gledzer_nonconvergence(record):
    pts = np.array([integrate("gledzer", CanonicalCutoff(N, 3), "gledzer-default", "IC2", 0.5).final[:2]
                    for N in range(20, 35)])
    scale = float(cdist(pts, pts).max())
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1) / scale
    ok = steps[-4:].min() >= 1e-2
    assert record(11, "endpoints over N=20..34 do not converge", ok,
                  f"consecutive distances / orbit scale in [{steps.min():.3f}, {steps.max():.3f}]")


@pytest.mark.xfail(strict=True, reason="fixed-N clouds are short arcs at N-dependent phases; see the decisions ledger")
def test_c11_gledzer_clouds(record):
    cloud = attractor_probe(levels=(24, 30), samples=60, bc="gledzer-default", seed=2024)
    a, b = cloud.group(24), cloud.group(30)
    h = max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])
    both = np.vstack([a, b])
    ratio = h / float(cdist(both, both).max())
    assert record(11, "Hausdorff(N=24, N=30) < 15% of cloud diameter", ratio < 0.15,
                  f"ratio {ratio:.3f}; {len(cloud.failures)} failed probes")


# --------------------------------------------------------------------------- #
# 12. Sabra perturbation growth
# --------------------------------------------------------------------------- #

@pytest.fixture(scope="module")
def chaos_desk():
    return chaos_growth(eps=1e-9, J=2, levels=range(6, 14), ic="IC2", bc="sabra-default", t_star=1.0)


@pytest.mark.xfail(strict=True, reason="separation saturates at O(1) by N = 12; see the decisions ledger")
def test_c12_chaos_desk_monotone(record, chaos_desk):
    norms = [p.norm for p in chaos_desk]
    ok = all(b > a for a, b in zip(norms[:-1], norms[1:]))
    assert record(12, "eps=1e-9 separations strictly increasing, N=6..13", ok,
                  ", ".join(f"{p.N}:{p.norm:.2g}" for p in chaos_desk))


def test_c12_chaos_desk_fit(record, chaos_desk):
    fit = fit_double_exponential({p.N: p.norm for p in chaos_desk}, 1e-9)
    ok = fit.r2 > 0.95 and fit["slope"] > 0
    assert record(12, "eps=1e-9 double-exponential fit", ok,
                  f"slope {fit['slope']:.3f}, R2 {fit.r2:.4f}, discarded N={list(fit.discarded)}")


def test_c12_chaos_small_eps(record):
    pts = chaos_growth(eps=1e-13, J=2, levels=range(6, 14), ic="IC2", bc="sabra-default", t_star=1.0)
    norms = [p.norm for p in pts]
    monotone = all(b > a for a, b in zip(norms[:-1], norms[1:]))
    fit = fit_double_exponential({p.N: p.norm for p in pts}, 1e-13)
    ok = monotone and fit["slope"] > 0
    assert record(12, "eps=1e-13 monotone super-exponential growth", ok,
                  f"N=13 separation {norms[-1]:.2g}, slope {fit['slope']:.3f}, R2 {fit.r2:.4f}")


# --------------------------------------------------------------------------- #
# 13. Integrator self-consistency
# --------------------------------------------------------------------------- #

RANDOM_CASE = st.tuples(st.sampled_from(["dyadic", "gledzer", "sabra"]), st.integers(1, 6), st.integers(1, 3),
                        st.sampled_from(["IC1", "IC2"]), st.sampled_from(["explicit-adaptive", "stiff-adaptive"]))


def test_c13_semigroup_and_tightening(record):
    worst = {"semigroup": 0.0, "tightening": 0.0}

    @settings(max_examples=15)
    @given(RANDOM_CASE, st.floats(0.1, 0.9))
    def check(case, split):
        model, N, J, ic, method = case
        reg, bc = CanonicalCutoff(N, J), f"{model}-default"
        cfg = SolverConfig(method=method, rtol=1e-8, atol=1e-10)
        one = integrate(model, reg, bc, ic, 1.0, cfg)
        first = integrate(model, reg, bc, ic, (0.0, split), cfg)
        second = integrate(model, reg, bc, first.final, (split, 1.0), cfg)
        tight = integrate(model, reg, bc, ic, 1.0, cfg.tightened(2))
        tol = cfg.atol + cfg.rtol * float(np.max(np.abs(one.y)))
        s = float(np.max(np.abs(second.final - one.final))) / tol
        t = float(np.max(np.abs(tight.final - one.final))) / tol
        worst["semigroup"] = max(worst["semigroup"], s)
        worst["tightening"] = max(worst["tightening"], t)
        assert s <= 50 and t <= 10

    try:
        check()
    finally:
        record(13, "semigroup (randomized)", worst["semigroup"] <= 50,
               f"max endpoint gap {worst['semigroup']:.2g} x tol (<= 50)")
        record(13, "tolerance tightening (randomized)", worst["tightening"] <= 10,
               f"max endpoint change {worst['tightening']:.2g} x tol (<= 10)")


def test_c13_stiff_vs_explicit(record):
    worst = 0.0
    ts = np.linspace(0.0, 0.5, 26)
    for model, reg in SYM_CASES:
        runs = [integrate(model, reg, f"{model}-default", "IC2", 0.5, SolverConfig(method=m))
                for m in ("explicit-adaptive", "stiff-adaptive")]
        cfg = runs[0].cfg
        tol = 2 * (cfg.atol + cfg.rtol * float(np.max(np.abs(runs[0].y))))
        worst = max(worst, float(np.max(np.abs(runs[0].sample(ts) - runs[1].sample(ts)))) / tol)
    assert record(13, "stiff vs explicit on non-stiff runs", worst <= 100,
                  f"max gap {worst:.2g} x combined tolerance (<= 100)")
