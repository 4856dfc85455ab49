"""Pseudo-arclength continuation of equilibria in the stress intensity factor.

A path point is an equilibrium ``(u, k)`` together with the unit tangent
``(tau_u, tau_k)`` of the solution curve, normalized in the product inner
product ``(u, v)_H1 + k k'``.  Fold points are the zeros of ``tau_k``; they
are bracketed during tracing and then located by a bracketing root search
along the arclength of the step that straddles them.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize

from .errors import (
    CrackBifError,
    InitialSolveFailed,
    NoConvergence,
    NondegeneracyFailed,
    SingularBorderedSystem,
    SingularHessian,
    StepFailed,
)
from .lattice import h1_norm
from .solvers import (
    MU_TOL,
    NEWTON_TOL,
    bordered_solve,
    classify,
    factorize,
    newton,
    smallest_eigenpair,
)

log = logging.getLogger(__name__)

__all__ = [
    "PathPoint",
    "FoldRecord",
    "ContinuationConfig",
    "PathResult",
    "equilibrate",
    "initial_point",
    "tangent",
    "arclength_step",
    "run_path",
    "refine_fold",
    "refine_all",
    "product_distance",
]


@dataclass
class PathPoint:
    s: float
    k: float
    u: np.ndarray = field(repr=False)
    tau_u: np.ndarray = field(repr=False)
    tau_k: float
    mu: float = math.nan
    cls: str = "unknown"
    gamma: np.ndarray | None = field(default=None, repr=False)
    iterations: int = 0


@dataclass
class FoldRecord:
    s_fold: float
    k_fold: float
    u_fold: np.ndarray = field(repr=False)
    gamma: np.ndarray = field(repr=False)
    tau_k: float
    b_dot_gamma: float
    third: float
    mu_fold: float
    mu_left: float
    mu_right: float
    certified: bool = True
    family: str = ""
    tip: int = 0

    def to_dict(self) -> dict:
        return {
            "s": self.s_fold,
            "k": self.k_fold,
            "tau_k": self.tau_k,
            "mu": self.mu_fold,
            "mu_left": self.mu_left,
            "mu_right": self.mu_right,
            "b_dot_gamma": self.b_dot_gamma,
            "third": self.third,
            "certified": self.certified,
            "family": self.family,
            "tip": self.tip,
        }


@dataclass
class ContinuationConfig:
    """Tracing parameters.  ``direction`` is the initial sign of ``dk/ds``."""

    R: float = 32.0
    k_start: float = 0.2
    u_start: str = "zero"
    ds_init: float = 0.05
    ds_min: float = 1e-6
    ds_max: float = 0.25
    max_steps: int = 2000
    max_folds: int | None = None
    k_window: tuple[float, float] = (0.15, 0.55)
    target_iterations: int = 3
    eigen_every: int = 5
    direction: int = 1
    newton_tol: float = NEWTON_TOL
    max_corrector: int = 8
    min_cos_turn: float = 0.95
    potential: tuple[float, float] = (1.0 / 6.0, 3.0)

    def __post_init__(self):
        self.k_window = tuple(float(v) for v in self.k_window)
        self.potential = tuple(float(v) for v in self.potential)
        if not 0 < self.ds_min <= self.ds_init <= self.ds_max:
            raise ValueError("need 0 < ds_min <= ds_init <= ds_max")
        if self.k_window[0] >= self.k_window[1]:
            raise ValueError("k_window must be increasing")
        if self.u_start != "zero" and not str(self.u_start).startswith("file:"):
            raise ValueError("u_start must be 'zero' or 'file:<path>'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_window"] = list(self.k_window)
        d["potential"] = list(self.potential)
        return d


@dataclass
class PathResult:
    points: list[PathPoint]
    brackets: list[tuple[int, int]]
    stop_reason: str = ""

    def bracket_tips(self, domain) -> list[int]:
        """Breaking-bond label of each bracket, from the eigenvector at its right end."""
        return [breaking_bond(domain, self.points[j].gamma) for _, j in self.brackets]


def product_distance(domain, a: PathPoint, b: PathPoint) -> float:
    return h1_norm(domain, a.u - b.u) + abs(a.k - b.k)


# -- equilibria and tangents ------------------------------------------------


def equilibrate(model, k: float, u0, tol: float = NEWTON_TOL):
    """Locally stable equilibrium near ``u0``: energy descent, then Newton.

    Plain Newton from a far-off guess is attracted to saddles (the Hessian
    is indefinite near the tip), so the start is first relaxed by L-BFGS.
    """
    u0 = np.asarray(u0, dtype=float)
    try:
        return newton(model, k, u0, tol=tol, max_iter=6)
    except CrackBifError:
        pass
    res = minimize(
        lambda v: model.energy(v, k),
        u0,
        jac=lambda v: model.gradient(v, k),
        method="L-BFGS-B",
        options={"maxiter": 50000, "maxcor": 30, "gtol": 1e-7, "ftol": 1e-16},
    )
    try:
        return newton(model, k, res.x, tol=tol)
    except CrackBifError as exc:
        raise InitialSolveFailed(f"no equilibrium found at k={k}: {exc}") from exc


def _normalize(domain, tau_u, tau_k):
    n = math.sqrt(float(tau_u @ (domain.gram @ tau_u)) + tau_k * tau_k)
    return tau_u / n, tau_k / n


def tangent(model, u, k: float, prev: tuple | None = None):
    """Unit tangent of the solution curve through the equilibrium ``(u, k)``.

    Solves ``[H b; <G tau_prev_u, .> tau_prev_k] (tau_u, tau_k) = (0, 1)``
    and orients the result along ``prev``.  Without ``prev`` the tangent
    with ``tau_k > 0`` is returned (needs a nonsingular Hessian).
    """
    d = model.domain
    H = model.hessian(u, k)
    b = model.mixed_uk(u, k)
    if prev is None:
        x = factorize(H).solve(b)
        tau_u, tau_k = _normalize(d, -x, 1.0)
        return tau_u, tau_k
    pu, pk = prev
    tau_u, tau_k = bordered_solve(H, b, pu, pk, (np.zeros(d.n_sites), 1.0), G=d.gram)
    tau_u, tau_k = _normalize(d, tau_u, tau_k)
    if float(tau_u @ (d.gram @ pu)) + tau_k * pk < 0:
        tau_u, tau_k = -tau_u, -tau_k
    return tau_u, tau_k


def _refresh_eigen(model, point: PathPoint, prev: PathPoint | None = None):
    mu_guess = 0.0 if prev is None or not np.isfinite(prev.mu) else prev.mu
    v0 = None if prev is None else prev.gamma
    if v0 is None:
        v0 = _tip_indicator(model.domain)
    pair = smallest_eigenpair(model.hessian(point.u, point.k), model.domain.gram,
                              mu_guess=mu_guess, v0=v0)
    point.mu = pair.mu
    point.gamma = pair.gamma
    point.cls = classify(pair.mu)
    return point


def _tip_indicator(domain):
    v = np.zeros(domain.n_sites)
    v[int(np.argmin(domain.radii))] = 1.0
    return v / math.sqrt(float(v @ (domain.gram @ v)))


def initial_point(model, config: ContinuationConfig, u_start=None) -> PathPoint:
    u0 = np.zeros(model.domain.n_sites) if u_start is None else np.asarray(u_start, float)
    rep = equilibrate(model, config.k_start, u0, tol=config.newton_tol)
    tau_u, tau_k = tangent(model, rep.final_field, config.k_start)
    if config.direction < 0:
        tau_u, tau_k = -tau_u, -tau_k
    pt = PathPoint(0.0, config.k_start, rep.final_field, tau_u, tau_k,
                   iterations=rep.iterations)
    return _refresh_eigen(model, pt)


def arclength_step(model, point: PathPoint, ds: float, tol: float = NEWTON_TOL,
                   max_iter: int = 8) -> PathPoint:
    """One predictor-corrector step of pseudo-arclength ``ds`` from ``point``.

    The corrector is Newton's method on the gradient augmented by the
    arclength constraint ``(tau_u, u - u0)_H1 + tau_k (k - k0) = ds``.
    Raises ``StepFailed`` when the corrector diverges.  The returned point
    carries a fresh tangent but no eigenvalue.
    """
    d = model.domain
    G = d.gram
    Gt = G @ point.tau_u
    u = point.u + ds * point.tau_u
    k = point.k + ds * point.tau_k
    hist = []
    for it in range(max_iter + 1):
        g = model.gradient(u, k)
        c = float(Gt @ (u - point.u)) + point.tau_k * (k - point.k) - ds
        res = float(np.max(np.abs(g)))
        hist.append(res)
        if not np.isfinite(res):
            raise StepFailed("non-finite residual in corrector")
        if res <= tol and abs(c) <= 1e-10 * max(1.0, abs(ds)):
            break
        if it == max_iter or (it >= 2 and res > hist[-2] and res > hist[-3]):
            raise StepFailed(f"corrector residual {res:.3e} after {it} iterations")
        try:
            du, dk = bordered_solve(model.hessian(u, k), model.mixed_uk(u, k),
                                    point.tau_u, point.tau_k, (-g, -c), G=G)
        except SingularBorderedSystem as exc:
            raise StepFailed(str(exc)) from exc
        u = u + du
        k = k + dk
    try:
        tau_u, tau_k = tangent(model, u, k, prev=(point.tau_u, point.tau_k))
    except SingularBorderedSystem as exc:
        raise StepFailed(str(exc)) from exc
    return PathPoint(point.s + ds, k, u, tau_u, tau_k, iterations=it)


def _turn(domain, a: PathPoint, b: PathPoint) -> float:
    return float(a.tau_u @ (domain.gram @ b.tau_u)) + a.tau_k * b.tau_k


def run_path(model, config: ContinuationConfig, u_start=None,
             start: PathPoint | None = None, stop_when=None) -> PathResult:
    """Trace the solution curve until ``max_steps`` or ``k`` leaves the window.

    Fold brackets are index pairs ``(i, i + 1)`` of consecutive points whose
    ``tau_k`` differ in sign.  ``stop_when(points, brackets)`` may end the
    trace early by returning True.
    """
    d = model.domain
    point = start if start is not None else initial_point(model, config, u_start)
    points = [point]
    brackets: list[tuple[int, int]] = []
    ds = config.ds_init
    since_eigen = 0
    flips = 0
    last_cls = point.cls
    stop = "max_steps"
    lo, hi = config.k_window
    for _ in range(config.max_steps):
        try:
            new = arclength_step(model, point, ds, config.newton_tol, config.max_corrector)
            if _turn(d, point, new) < config.min_cos_turn:
                raise StepFailed("tangent turned too far in one step")
        except StepFailed as exc:
            ds *= 0.5
            log.debug("step failed (%s); ds -> %.3e", exc, ds)
            if ds < config.ds_min:
                stop = "ds_min"
                break
            continue

        if np.sign(new.tau_k) != np.sign(point.tau_k):
            brackets.append((len(points) - 1, len(points)))
            flips += 1
        since_eigen += 1
        if since_eigen >= config.eigen_every or abs(new.tau_k) < 0.1 or flips:
            _refresh_eigen(model, new, point if point.gamma is not None else None)
            since_eigen = 0
            flips = 0
            last_cls = new.cls
        else:
            new.gamma = point.gamma
            new.cls = last_cls
        points.append(new)
        point = new
        log.info("step %d s=%.4f k=%.6f tau_k=%+.3e ds=%.3e it=%d %s",
                 len(points) - 1, new.s, new.k, new.tau_k, ds, new.iterations, new.cls)

        if new.iterations <= config.target_iterations:
            ds = min(ds * 1.3, config.ds_max)
        if not lo <= new.k <= hi:
            stop = "k_window"
            break
        if config.max_folds is not None and len(brackets) >= config.max_folds:
            stop = "max_folds"
            break
        if stop_when is not None and stop_when(points, brackets):
            stop = "callback"
            break
    # the class of un-refreshed points is the last refreshed class, adjusted at folds
    _fill_classes(points, brackets)
    return PathResult(points, brackets, stop)


def _fill_classes(points, brackets):
    fold_after = {i for i, _ in brackets}
    cls = None
    for i, p in enumerate(points):
        if np.isfinite(p.mu):
            cls = p.cls
        elif cls is not None:
            p.cls = cls
        if i in fold_after and cls is not None and not np.isfinite(points[i + 1].mu):
            cls = {"stable": "unstable", "unstable": "stable"}.get(cls, cls)


def refine_fold(model, left: PathPoint, right: PathPoint, tau_tol: float = 1e-8,
                certify: bool = True) -> FoldRecord:
    """Locate the zero of ``tau_k`` between two path points and certify it.

    ``right`` must be the point obtained by stepping from ``left``.  The
    fold is found by a bracketing (Brent) search over the step length from
    ``left``, re-running the corrector at each trial length.
    """
    if np.sign(left.tau_k) == np.sign(right.tau_k):
        raise ValueError("tau_k does not change sign across the bracket")
    ds_total = right.s - left.s
    cache: dict[float, PathPoint] = {}

    def probe(ds):
        if ds == 0.0:
            return left
        if ds not in cache:
            cache[ds] = arclength_step(model, left, ds, tol=1e-11, max_iter=12)
        return cache[ds]

    def f(ds):
        return probe(ds).tau_k

    ds_star = brentq(f, 0.0, ds_total, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    fold = probe(ds_star)
    # Brent's answer may sit on either side; take the closer evaluated point
    best = min(cache.values(), key=lambda p: abs(p.tau_k))
    if abs(best.tau_k) < abs(fold.tau_k):
        fold = best

    d = model.domain
    H = model.hessian(fold.u, fold.k)
    pair = smallest_eigenpair(H, d.gram, mu_guess=0.0,
                              v0=fold.tau_u if fold.tau_u is not None else None)
    gamma = pair.gamma
    # orient gamma with the tangent for reproducible signs
    if float(gamma @ (d.gram @ fold.tau_u)) < 0:
        gamma = -gamma
    b_dot_gamma = float(model.mixed_uk(fold.u, fold.k) @ gamma)
    third = model.third_contract(fold.u, fold.k, gamma)

    mus = []
    for p in (left, right):
        if not np.isfinite(p.mu):
            _refresh_eigen(model, p)
        mus.append(p.mu)
    certified = (
        abs(fold.tau_k) <= tau_tol
        and np.sign(mus[0]) != np.sign(mus[1])
        and abs(b_dot_gamma) > 1e-6
        and abs(third) > 1e-6
    )
    rec = FoldRecord(
        s_fold=fold.s,
        k_fold=fold.k,
        u_fold=fold.u,
        gamma=gamma,
        tau_k=fold.tau_k,
        b_dot_gamma=b_dot_gamma,
        third=third,
        mu_fold=pair.mu,
        mu_left=mus[0],
        mu_right=mus[1],
        certified=bool(certified),
        family="upper" if left.tau_k > 0 else "lower",
        tip=breaking_bond(d, gamma),
    )
    if certify and not certified:
        raise NondegeneracyFailed(
            f"fold at k={fold.k:.8f} failed certification: tau_k={fold.tau_k:.2e}, "
            f"mu=({mus[0]:.2e}, {mus[1]:.2e}), b.gamma={b_dot_gamma:.2e}, third={third:.2e}",
            report=rec,
        )
    return rec


def breaking_bond(domain, gamma) -> int:
    """``l1`` of the bond between rows ``l2 = 0`` and ``l2 = 1`` where ``gamma`` strains most.

    At a fold the kernel vector localizes on the bond that is breaking,
    which identifies the crack-tip position of the event.
    """
    la, lb = domain.edge_la, domain.edge_lb
    row = (la[:, 0] == lb[:, 0]) & (la[:, 1] == 0) & (lb[:, 1] == 1)
    dg = np.abs(domain.incidence @ np.asarray(gamma, dtype=float))[row]
    return int(la[row][np.argmax(dg), 0])


def refine_all(model, result: PathResult, certify: bool = True,
               tips=None) -> list[FoldRecord]:
    """Refine every bracket, or only those whose breaking bond is in ``tips``."""
    folds = []
    labels = result.bracket_tips(model.domain) if tips is not None else None
    for n, (i, j) in enumerate(result.brackets):
        if tips is not None and labels[n] not in tips:
            continue
        folds.append(refine_fold(model, result.points[i], result.points[j], certify=certify))
    return folds
