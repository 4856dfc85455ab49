"""Acceptance criteria, each at its stated tolerance.

Every test records one ``PASS``/``FAIL`` line (printed in the terminal
summary) before asserting.  Criteria 6 and 7 share one multi-radius study
and take tens of minutes; they carry the ``slow`` marker.
"""
import numpy as np
import pytest
import scipy.linalg as la

from crackbif.analysis import convergence_study, decay_profile, fit_power
from crackbif.continuation import (
    ContinuationConfig,
    equilibrate,
    refine_all,
    refine_fold,
    run_path,
)
from crackbif.errors import CrackBifError
from crackbif.lattice import build_domain
from crackbif.model import Model, mirror
from crackbif.solvers import newton, smallest_eigenpair

from conftest import ACCEPTANCE_LINES
from oracles import dense_gram, dense_hessian, energy_bruteforce

PAPER_LIMITS = {"lower": 0.45903, "upper": 0.46234}


def record(n, title, passed, detail):
    line = f"criterion {n} [{title}]: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


# -- 1 -----------------------------------------------------------------------------


def test_criterion_1_calculus_consistency():
    m = Model(build_domain(8))
    n = m.domain.n_sites
    worst = {"grad": 0.0, "hess": 0.0, "mixed": 0.0, "third": 0.0}
    for seed in range(10):
        rng = np.random.default_rng(seed)
        u = 0.1 * rng.standard_normal(n)
        k = rng.uniform(0.1, 0.5)
        v = rng.standard_normal(n)
        g = m.gradient(u, k)

        h = 1e-5
        fd = (m.energy(u + h * v, k) - m.energy(u - h * v, k)) / (2 * h)
        worst["grad"] = max(worst["grad"], abs(g @ v - fd) / abs(g @ v))

        Hv = m.hessian(u, k) @ v
        fd = (m.gradient(u + h * v, k) - m.gradient(u - h * v, k)) / (2 * h)
        worst["hess"] = max(worst["hess"], rel_err(Hv, fd))

        b = m.mixed_uk(u, k)
        fd = (m.gradient(u, k + h) - m.gradient(u, k - h)) / (2 * h)
        worst["mixed"] = max(worst["mixed"], rel_err(b, fd))

        h3 = 1e-4
        gam = v / np.linalg.norm(v)
        t = m.third_contract(u, k, gam)
        fd = ((m.gradient(u + h3 * gam, k) - 2 * g + m.gradient(u - h3 * gam, k)) @ gam) / h3 ** 2
        worst["third"] = max(worst["third"], abs(t - fd) / abs(t))
    ok = worst["grad"] <= 1e-6 and worst["hess"] <= 1e-6 and worst["mixed"] <= 1e-6 \
        and worst["third"] <= 1e-4
    record(1, "calculus consistency", ok,
           "worst rel. errors " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))
    assert ok


# -- 2 -----------------------------------------------------------------------------


def test_criterion_2_oracle_equivalence():
    errs = {"energy": 0.0, "hessian": 0.0, "gram": 0.0, "mu": 0.0, "gamma": 0.0}
    for R, seed in ((4, 0), (5, 1), (6, 2)):
        d = build_domain(R)
        m = Model(d)
        rng = np.random.default_rng(seed)
        u, k = 0.2 * rng.standard_normal(d.n_sites), 0.35
        errs["energy"] = max(errs["energy"],
                             abs(m.energy(u, k) - energy_bruteforce(m, u, k)))
        Hd = dense_hessian(m, u, k)
        Gd = dense_gram(d)
        errs["hessian"] = max(errs["hessian"], float(np.abs(m.hessian(u, k).toarray() - Hd).max()))
        errs["gram"] = max(errs["gram"], float(np.abs(d.gram.toarray() - Gd).max()))
        ev, vec = la.eigh(Hd, Gd)
        pair = smallest_eigenpair(m.hessian(u, k), d.gram)
        errs["mu"] = max(errs["mu"], abs(pair.mu - ev[0]))
        ref = vec[:, 0] / np.sqrt(vec[:, 0] @ Gd @ vec[:, 0])
        ref *= np.sign(ref @ Gd @ pair.gamma)
        errs["gamma"] = max(errs["gamma"], float(np.abs(pair.gamma - ref).max()))
    ok = all(v <= 1e-8 for v in errs.values())
    record(2, "oracle equivalence", ok,
           "max abs errors " + ", ".join(f"{k}={v:.1e}" for k, v in errs.items()))
    assert ok


# -- 3 -----------------------------------------------------------------------------


def test_criterion_3_newton_contract():
    m = Model(build_domain(32))
    try:
        rep = newton(m, 0.2, np.zeros(m.domain.n_sites))
        h = rep.residual_history
        quad = len(h) >= 3 and all(h[i + 1] <= 10 * h[i] ** 2 for i in range(len(h) - 3, len(h) - 1))
        ok = rep.converged and rep.iterations <= 10 and rep.residual <= 1e-8 and quad
        detail = f"{rep.iterations} iterations, residual {rep.residual:.1e}, quadratic tail {quad}"
    except CrackBifError as exc:
        hist = exc.report.residual_history if exc.report is not None else []
        ok = False
        detail = (f"{type(exc).__name__}: {exc}; residuals "
                  + ", ".join(f"{r:.2e}" for r in hist))
    record(3, "Newton contract R=32 k=0.2 u0=0", ok, detail)
    assert ok


# -- 4 -----------------------------------------------------------------------------


def test_criterion_4_decay_rates():
    d = build_domain(64)
    m = Model(d)
    k = 0.455
    u = equilibrate(m, k, np.zeros(d.n_sites)).final_field
    pu = decay_profile(d, u, fit_range=(4, 32))
    cfg = ContinuationConfig(R=64, k_start=k, k_window=(0.40, 0.50), max_folds=1)
    res = run_path(m, cfg, u_start=u)
    i, j = res.brackets[0]
    fold = refine_fold(m, res.points[i], res.points[j])
    pg = decay_profile(d, fold.gamma, fit_range=(4, 32))
    ok = -1.75 <= pu.fitted_slope <= -1.25 and -1.75 <= pg.fitted_slope <= -1.25
    record(4, "decay rates R=64 bins [4,32]", ok,
           f"slope |Du| = {pu.fitted_slope:.3f} (stable equilibrium, k={k}), "
           f"slope |D gamma| = {pg.fitted_slope:.3f} (fold at k={fold.k_fold:.5f})")
    assert ok


# -- 5 -----------------------------------------------------------------------------


def test_criterion_5_snaking_diagram():
    m = Model(build_domain(32))
    cfg = ContinuationConfig(R=32, k_start=0.2, k_window=(0.15, 0.55))
    res = run_path(m, cfg)
    folds = refine_all(m, res, certify=False)
    n_cert = sum(f.certified for f in folds)
    alternating = all(np.sign(f.mu_left) != np.sign(f.mu_right) for f in folds) and all(
        np.sign(a.mu_right) == np.sign(b.mu_left) for a, b in zip(folds, folds[1:]))
    certs = all(abs(f.b_dot_gamma) > 1e-6 and abs(f.third) > 1e-6 for f in folds)
    even = len(folds) % 2 == 0
    ok = n_cert >= 4 and n_cert == len(folds) and alternating and even and certs
    record(5, "snaking diagram R=32 window [0.15,0.55]", ok,
           f"{len(folds)} folds, {n_cert} certified, alternating={alternating}, even={even}, "
           f"min |b.gamma|={min(abs(f.b_dot_gamma) for f in folds):.2e}, "
           f"min |third|={min(abs(f.third) for f in folds):.2e}, stop={res.stop_reason}")
    assert ok


# -- 6 and 7: shared multi-radius study ------------------------------------------------

FOLD_RADII = [2.0 ** (n / 4) for n in range(16, 25)]
PATH_RADII = [2.0 ** (n / 4) for n in range(20, 27)]
REFERENCE = 2.0 ** (30 / 4)


@pytest.fixture(scope="module")
def study():
    cfg = ContinuationConfig(k_start=0.455, k_window=(0.40, 0.49), max_steps=3000)
    return convergence_study(sorted(set(FOLD_RADII) | set(PATH_RADII)), cfg,
                             reference_radius=REFERENCE, tips=(-1, 0, 1), keep_paths=False)


@pytest.mark.slow
def test_criterion_6_superconvergence(study):
    orders, limits, spreads = {}, {}, {}
    for family in ("upper", "lower"):
        by_tip = study.richardson_limits[family]
        limits[family] = study.family_limits[family]
        spreads[family] = study.family_spread[family]
        chain_orders = []
        for tip, k_inf in by_tip.items():
            chain = study.fold_chain(tip, family, FOLD_RADII)
            if len(chain) >= 3:
                chain_orders.append(fit_power([R for R, _ in chain],
                                              [abs(k - k_inf) for _, k in chain])[0])
        orders[family] = float(np.median(chain_orders))
    survivors = [R for R in FOLD_RADII if study.runs[R]["folds"]]
    ok = all(-1.3 <= o <= -0.7 for o in orders.values()) and all(
        s <= 2e-3 for s in spreads.values())
    soft = {f: abs(limits[f] - PAPER_LIMITS[f]) for f in limits}
    record(6, "fold-SIF superconvergence", ok,
           "orders " + ", ".join(f"{f}={o:.3f}" for f, o in orders.items())
           + "; Richardson limits " + ", ".join(f"{f}={v:.5f}" for f, v in limits.items())
           + "; internal spread " + ", ".join(f"{f}={v:.1e}" for f, v in spreads.items())
           + f"; radii with folds {len(survivors)}/{len(FOLD_RADII)}"
           + "; soft target |limit - paper| " + ", ".join(
               f"{f}={v:.1e} ({'within' if v <= 5e-3 else 'outside'} 5e-3)"
               for f, v in soft.items()))
    assert ok


@pytest.mark.slow
def test_criterion_7_path_convergence(study):
    dist = dict(study.hausdorff_to_reference)
    pts = [(R, dist[R]) for R in PATH_RADII if dist.get(R)]
    order = fit_power(*zip(*pts))[0] if len(pts) >= 3 else float("nan")
    ok = len(pts) == len(PATH_RADII) and -0.8 <= order <= -0.3
    record(7, "path convergence vs R*=181", ok,
           f"Hausdorff order {order:.3f} over {len(pts)} radii; distances "
           + ", ".join(f"R={R:.1f}:{d:.3e}" for R, d in pts))
    assert ok


# -- 8 -----------------------------------------------------------------------------


def test_criterion_8_periodicity():
    vals = []
    for R in (16, 32, 64):
        d = build_domain(R)
        m = Model(d)
        k = 0.455
        u = equilibrate(m, k, np.zeros(d.n_sites)).final_field
        w = m.recenter_correction(u, k, 1)
        vals.append((R, float(np.abs(m.recentered(1).gradient(w, k)).max())))
    order = fit_power(*zip(*vals))[0]
    decreasing = vals[0][1] > vals[1][1] > vals[2][1]
    ok = decreasing and order <= -0.3
    record(8, "periodicity of recentred residual", ok,
           f"order {order:.3f}; residuals " + ", ".join(f"R={R}:{g:.3e}" for R, g in vals))
    assert ok


# -- 9 -----------------------------------------------------------------------------


def test_criterion_9_mirror_equivariance():
    m = Model(build_domain(8))
    d = m.domain
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        u = 0.3 * rng.standard_normal(d.n_sites)
        k = rng.uniform(0.0, 0.6)
        lhs = m.gradient(mirror(d, u), k)
        rhs = mirror(d, m.gradient(u, k))
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    ok = worst <= 1e-12
    record(9, "mirror equivariance R=8", ok, f"max |g(Mu) - Mg(u)| = {worst:.1e}")
    assert ok
