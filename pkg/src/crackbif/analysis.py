"""Decay envelopes, path distances, order fits and Richardson extrapolation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .errors import DegenerateFit, EmptyBin, InconsistentOrder

log = logging.getLogger(__name__)

__all__ = [
    "DecayProfile",
    "site_gradient_norms",
    "decay_profile",
    "fit_power",
    "hausdorff",
    "richardson",
    "estimate_order",
    "consecutive_order",
    "with_k_metric",
    "ConvergenceReport",
    "convergence_study",
]


@dataclass
class DecayProfile:
    bins: list[tuple[float, float]]
    fitted_slope: float
    prefactor: float
    fit_range: tuple[float, float]
    r2: float = math.nan
    points: np.ndarray | None = field(default=None, repr=False)

    def rows(self):
        lo, hi = self.fit_range
        return [
            {"r_mid": r, "envelope": e, "in_fit": lo <= r <= hi}
            for r, e in self.bins
        ]


def site_gradient_norms(domain, u, crack_aware: bool = True) -> np.ndarray:
    """``|D~u(m)|`` (Euclidean norm over the four bonds) at every free site."""
    du = domain.incidence @ np.asarray(u, dtype=float)
    if crack_aware:
        du = np.where(domain.edge_crack, 0.0, du)
    sq = du * du
    n = domain.n_sites
    acc = np.zeros(n)
    for idx in (domain.edge_a, domain.edge_b):
        keep = idx >= 0
        acc += np.bincount(idx[keep], weights=sq[keep], minlength=n)
    return np.sqrt(acc)


def decay_profile(domain, u, fit_range=None, bins_per_octave: int = 4) -> DecayProfile:
    """Envelope of ``|D~u(l)|`` over log-spaced radial bins and its log-log slope.

    Bins have edges ``2^(j / bins_per_octave)``; the envelope of a bin is
    the maximum over its sites and ``r_mid`` its geometric centre.  Only bins
    whose centre lies in ``fit_range`` (default ``[4, R/2]``) enter the fit.
    """
    if fit_range is None:
        fit_range = (4.0, domain.R / 2)
    lo, hi = map(float, fit_range)
    g = site_gradient_norms(domain, u)
    r = domain.radii
    j = np.floor(np.log2(np.maximum(r, 1e-12)) * bins_per_octave).astype(int)
    j_max = int(math.floor(math.log2(domain.R) * bins_per_octave))
    bins = []
    fit_x, fit_y = [], []
    for jj in range(int(j.min()), j_max + 1):
        r_mid = 2.0 ** ((jj + 0.5) / bins_per_octave)
        sel = j == jj
        in_fit = lo <= r_mid <= hi
        if not np.any(sel):
            if in_fit:
                raise EmptyBin(f"no sites in bin around r={r_mid:.3g}")
            continue
        env = float(g[sel].max())
        bins.append((r_mid, env))
        if in_fit:
            fit_x.append(r_mid)
            fit_y.append(env)
    if len(fit_x) < 3:
        raise EmptyBin(f"fit range [{lo}, {hi}] holds fewer than 3 bins")
    slope, pref, r2 = fit_power(fit_x, fit_y)
    return DecayProfile(bins, slope, pref, (lo, hi), r2, np.column_stack([r, g]))


def fit_power(x, y):
    """Least-squares fit of ``y = prefactor * x**exponent`` in log-log space.

    Returns ``(exponent, prefactor, r2)``.  Needs at least 3 positive points.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise ValueError("fit_power needs at least 3 (x, y) pairs")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("fit_power needs positive data")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise DegenerateFit("all abscissae coincide")
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ np.array([slope, icpt])
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(math.exp(icpt)), r2


# -- Hausdorff distance between discretized paths ------------------------------


def _as_polylines(path):
    if isinstance(path, np.ndarray) and path.ndim == 2:
        return [path]
    out = []
    for seg in path:
        seg = np.atleast_2d(np.asarray(seg, dtype=float))
        if seg.size:
            out.append(seg)
    return out


def _directed(A_lines, B_lines, G, polyline: bool) -> float:
    A = np.vstack(A_lines)
    nA = np.einsum("ij,ij->i", A @ G, A) if G is not None else np.einsum("ij,ij->i", A, A)
    best = np.full(len(A), np.inf)
    for B in B_lines:
        GB = (G @ B.T).T if G is not None else B
        cross = A @ GB.T                          # <a, b_j>
        nB = np.einsum("ij,ij->i", GB, B)         # <b_j, b_j>
        d2 = nA[:, None] + nB[None, :] - 2.0 * cross
        best = np.minimum(best, d2.min(axis=1))
        if polyline and len(B) > 1:
            bb = np.einsum("ij,ij->i", GB[:-1], B[1:])    # <b_j, b_{j+1}>
            seg2 = nB[:-1] + nB[1:] - 2.0 * bb            # |b_{j+1} - b_j|^2
            proj = (cross[:, 1:] - cross[:, :-1]) - (bb - nB[:-1])[None, :]
            with np.errstate(invalid="ignore", divide="ignore"):
                t = np.clip(np.where(seg2 > 0, proj / seg2, 0.0), 0.0, 1.0)
            d2seg = d2[:, :-1] - 2.0 * t * proj + t * t * seg2
            best = np.minimum(best, d2seg.min(axis=1))
    return float(math.sqrt(max(best.max(), 0.0)))


def hausdorff(path_a, path_b, reference_domain=None, gram=None,
              polyline: bool = False) -> float:
    """Symmetric Hausdorff distance between two discretized paths.

    Each path is an ``(n, N)`` array of fields already zero-extended onto
    ``reference_domain``, or a list of such arrays (disjoint polylines).
    Distances use the crack-aware inner product of ``reference_domain``;
    an explicit ``gram`` overrides it and with neither the metric is
    Euclidean.  With ``polyline=False`` the paths are finite point sets;
    with ``polyline=True`` each point is compared with the piecewise-linear
    curves of the other path, which removes the sampling error of coarse
    steps.
    """
    if gram is None and reference_domain is not None:
        gram = reference_domain.gram
    A = _as_polylines(path_a)
    B = _as_polylines(path_b)
    if not A or not B:
        raise ValueError("hausdorff needs non-empty paths")
    return max(_directed(A, B, gram, polyline), _directed(B, A, gram, polyline))


def with_k_metric(gram):
    """Gram matrix for points ``(u, k)``: the field metric plus ``|dk|^2``."""
    return sp.block_diag([sp.csc_matrix(gram), sp.csc_matrix([[1.0]])], format="csc")


# -- extrapolation and convergence orders -------------------------------------


def _order_from_triple(r, k):
    (r1, r2, r3), (k1, k2, k3) = r, k
    q = (k1 - k2) / (k2 - k3)
    if q <= 0:
        raise InconsistentOrder("non-monotone triple; order undefined")

    def f(p):
        return (r1 ** -p - r2 ** -p) / (r2 ** -p - r3 ** -p) - q

    lo, hi = 1e-3, 20.0
    if f(lo) * f(hi) > 0:
        raise InconsistentOrder(f"no order in [{lo}, {hi}] fits ratio {q:.4g}")
    return brentq(f, lo, hi, xtol=1e-12)


def estimate_order(values) -> list[float]:
    """Orders ``p`` fitted to consecutive triples of ``(R, k)`` (sorted by ``R``)."""
    vals = sorted((float(r), float(k)) for r, k in values)
    if len(vals) < 3:
        raise ValueError("need at least 3 entries to estimate the order")
    return [
        _order_from_triple([v[0] for v in vals[i:i + 3]], [v[1] for v in vals[i:i + 3]])
        for i in range(len(vals) - 2)
    ]


def richardson(values, p: float | str = 1.0, max_spread: float = 0.5) -> float:
    """Extrapolated limit of ``k(R) = k_inf + c R^-p``.

    With two entries the model is interpolated exactly; with more it is
    fitted by least squares.  ``p="auto"`` estimates the order from
    consecutive triples and raises ``InconsistentOrder`` when the estimates
    differ by more than ``max_spread`` relative to their mean.
    """
    vals = sorted((float(r), float(k)) for r, k in values)
    if p == "auto":
        orders = estimate_order(vals)
        mean = float(np.mean(orders))
        if (max(orders) - min(orders)) > max_spread * abs(mean):
            raise InconsistentOrder(f"order estimates {orders} disagree")
        p = mean
    if len(vals) < 2:
        raise ValueError("richardson needs at least 2 entries")
    R = np.array([v[0] for v in vals])
    k = np.array([v[1] for v in vals])
    A = np.column_stack([np.ones_like(R), R ** (-float(p))])
    (k_inf, _), *_ = np.linalg.lstsq(A, k, rcond=None)
    return float(k_inf)


def consecutive_order(values):
    """Order fitted to successive differences ``|k(R_{i+1}) - k(R_i)|``.

    For ``k(R) = k_inf + c R^-p`` on a geometric sequence of radii the
    differences decay like ``R^-p`` too, so this estimates ``-p`` without
    knowing the limit.  Returns ``(exponent, prefactor, r2)``.
    """
    vals = sorted((float(r), float(k)) for r, k in values)
    x = [math.sqrt(a[0] * b[0]) for a, b in zip(vals, vals[1:])]
    y = [abs(b[1] - a[1]) for a, b in zip(vals, vals[1:])]
    return fit_power(x, y)


# -- convergence study ----------------------------------------------------------


@dataclass
class ConvergenceReport:
    """Outcome of a multi-radius study.

    Folds are matched across radii by ``(tip, family)``: the breaking bond
    of the kernel vector and whether ``k`` has a local maximum (``upper``)
    or minimum (``lower``) there.  Stable segments are keyed by the tip of
    the lower fold that opens them.
    """

    radii: list[float]
    reference_radius: float | None
    runs: dict = field(default_factory=dict)
    hausdorff_to_reference: list = field(default_factory=list)
    path_order: dict | None = None
    fold_orders: dict = field(default_factory=dict)
    richardson_limits: dict = field(default_factory=dict)
    family_limits: dict = field(default_factory=dict)
    family_spread: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict, repr=False)

    def fold_value(self, R, tip, family):
        for f in self.runs.get(R, {}).get("folds", []):
            if f["tip"] == tip and f["family"] == family and f["certified"]:
                return f["k"]
        return None

    def fold_chain(self, tip, family, radii=None):
        radii = self.radii if radii is None else radii
        out = []
        for R in radii:
            k = self.fold_value(R, tip, family)
            if k is not None:
                out.append((R, k))
        return out

    def fold_table_rows(self):
        rows = []
        for R in self.all_radii:
            for f in self.runs.get(R, {}).get("folds", []):
                rows.append((R, f["tip"], f["family"], f["k"], f["certified"]))
        return rows

    @property
    def all_radii(self):
        extra = [] if self.reference_radius is None else [self.reference_radius]
        return sorted(set(self.radii) | set(extra))

    def to_dict(self) -> dict:
        return {
            "radii": self.radii,
            "reference_radius": self.reference_radius,
            "runs": {f"{R:.6g}": self.runs[R] for R in self.all_radii if R in self.runs},
            "hausdorff_to_reference": self.hausdorff_to_reference,
            "path_order": self.path_order,
            "fold_orders": self.fold_orders,
            "richardson_limits": self.richardson_limits,
            "family_limits": self.family_limits,
            "family_spread": self.family_spread,
            "settings": self.settings,
        }

    def write(self, out_dir):
        """Write ``report.json``, per-radius path/fold files and the summary CSVs."""
        from pathlib import Path

        from .io import radius_dirname, write_csv, write_folds_json, write_json, PATH_COLUMNS

        out = Path(out_dir)
        for R in self.all_radii:
            sub = out / radius_dirname(R)
            if R in self.paths:
                write_csv(sub / "path.csv", PATH_COLUMNS, self.paths[R])
            write_folds_json(sub / "folds.json", self.runs.get(R, {}).get("folds", []))
        write_csv(out / "hausdorff_vs_R.csv", ("R", "hausdorff"),
                  [(R, math.nan if d is None else d) for R, d in self.hausdorff_to_reference])
        write_csv(out / "foldk_vs_R.csv", ("R", "tip", "family", "k", "certified"),
                  self.fold_table_rows())
        write_csv(out / "richardson.csv", ("family", "tip", "limit"),
                  [(fam, tip, lim) for fam, by_tip in sorted(self.richardson_limits.items())
                   for tip, lim in sorted(by_tip.items())])
        write_json(out / "report.json", self.to_dict())
        return out


def _study_run(R: float, cfg_dict: dict, tips: tuple, want_paths: bool = True) -> dict:
    """Trace and refine one radius; runs in a worker process."""
    import time

    from .continuation import ContinuationConfig, breaking_bond, refine_fold, run_path
    from .errors import CrackBifError
    from .io import initial_field, path_rows
    from .lattice import build_domain
    from .model import Model, PairPotential

    t0 = time.perf_counter()
    cfg = ContinuationConfig(**{**cfg_dict, "R": R})
    d = build_domain(R)
    m = Model(d, PairPotential(*cfg.potential))
    out = {"R": R, "error": None, "message": "", "folds": [], "segments": {},
           "rows": [], "labels": [], "stop_reason": "", "n_points": 0}
    stop_tip = max(tips) + 1

    def stop(points, brackets):
        return bool(brackets) and breaking_bond(d, points[brackets[-1][1]].gamma) >= stop_tip

    try:
        res = run_path(m, cfg, u_start=initial_field(cfg, d), stop_when=stop)
        labels = res.bracket_tips(d)
        refined = {}
        for n, (i, j) in enumerate(res.brackets):
            if labels[n] in tips:
                refined[n] = refine_fold(m, res.points[i], res.points[j], certify=False)
    except CrackBifError as exc:
        out["error"] = type(exc).__name__
        out["message"] = str(exc)
        out["seconds"] = time.perf_counter() - t0
        return out

    for n in sorted(refined):
        nxt = refined.get(n + 1)
        f = refined[n]
        if nxt is None or f.family != "lower" or nxt.family != "upper":
            continue
        if not (f.certified and nxt.certified):
            continue
        i0, i1 = res.brackets[n][1], res.brackets[n + 1][0]
        U = [f.u_fold] + [res.points[q].u for q in range(i0, i1 + 1)] + [nxt.u_fold]
        K = [f.k_fold] + [res.points[q].k for q in range(i0, i1 + 1)] + [nxt.k_fold]
        out["segments"][f.tip] = (np.array(U), np.array(K))

    out.update(
        folds=[refined[n].to_dict() for n in sorted(refined)],
        labels=labels,
        stop_reason=res.stop_reason,
        n_points=len(res.points),
        rows=path_rows(d, res.points) if want_paths else [],
        seconds=time.perf_counter() - t0,
    )
    return out


def _segments_on(reference, ref_labels_index, R, segments, keys, include_k):
    """Zero-extend the stable segments of radius ``R`` onto the reference domain."""
    from .lattice import build_domain

    src = build_domain(R)
    idx = np.array([ref_labels_index.get((int(a), int(b)), -1) for a, b in src.labels])
    keep = idx >= 0
    lines = []
    for key in keys:
        U, K = segments[key]
        ext = np.zeros((U.shape[0], reference.n_sites + (1 if include_k else 0)))
        ext[:, idx[keep]] = U[:, keep]
        if include_k:
            ext[:, -1] = K
        lines.append(ext)
    return lines


def convergence_study(radii, config, reference_radius: float | None = None,
                      tips=(-1, 0, 1), jobs: int = 1, include_k: bool = False,
                      polyline: bool = True, richardson_points: int = 2,
                      keep_paths: bool = True) -> ConvergenceReport:
    """Trace every radius, match folds, and measure convergence towards the limit.

    Parameters
    ----------
    radii : list of float
        Study radii (sorted, strictly increasing after de-duplication).
    config : ContinuationConfig
        Template; ``R`` is replaced per radius.  The trace of each radius
        stops once a fold beyond ``max(tips)`` is bracketed.
    reference_radius : float, optional
        Radius of the reference path for the Hausdorff study; defaults to
        the largest study radius.
    tips : sequence of int
        Breaking bonds whose folds are refined and compared.
    jobs : int
        Worker processes for the per-radius runs.
    include_k : bool
        Add ``|dk|`` (in quadrature) to the Hausdorff metric.
    richardson_points : int
        Number of largest radii (reference included) used to extrapolate
        each fold chain with ``p = 1``.

    Notes
    -----
    Failed radii are recorded with their error name and skipped.  The
    fold-SIF order of a chain is fitted to ``|k_R - k_inf|`` over the study
    radii, with ``k_inf`` its Richardson limit; a family's order is the
    median over tips.  Radii whose stable segments do not cover those of
    the reference are left out of the Hausdorff fit.
    """
    from dataclasses import asdict

    from .lattice import build_domain

    radii = sorted(set(float(r) for r in radii))
    if not radii:
        raise ValueError("convergence_study needs at least one radius")
    ref_R = float(reference_radius) if reference_radius is not None else radii[-1]
    tips = tuple(sorted(int(t) for t in tips))
    cfg_dict = asdict(config)
    cfg_dict.pop("R")
    todo = sorted(set(radii) | {ref_R})

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {R: pool.submit(_study_run, R, cfg_dict, tips, keep_paths) for R in todo}
            raw = {R: fut.result() for R, fut in futures.items()}
    else:
        raw = {R: _study_run(R, cfg_dict, tips, keep_paths) for R in todo}

    report = ConvergenceReport(radii=radii, reference_radius=ref_R)
    report.settings = {
        "config": config.to_dict(), "tips": list(tips), "include_k": include_k,
        "polyline": polyline, "richardson_points": richardson_points, "jobs": jobs,
    }
    for R, r in raw.items():
        report.runs[R] = {
            "error": r["error"], "message": r["message"], "folds": r["folds"],
            "bracket_tips": r["labels"], "stop_reason": r["stop_reason"],
            "n_points": r["n_points"], "seconds": r.get("seconds", math.nan),
            "stable_segments": sorted(r["segments"]),
        }
        if r["rows"]:
            report.paths[R] = r["rows"]
        if r["error"]:
            log.warning("radius %.4g failed: %s %s", R, r["error"], r["message"])

    # fold chains, limits and orders
    for family in ("upper", "lower"):
        limits, orders = {}, {}
        for tip in tips:
            chain_all = report.fold_chain(tip, family, report.all_radii)
            if len(chain_all) < 2:
                continue
            k_inf = richardson(chain_all[-richardson_points:], p=1.0)
            limits[tip] = k_inf
            chain = report.fold_chain(tip, family)
            errs = [(R, abs(k - k_inf)) for R, k in chain if abs(k - k_inf) > 0]
            try:
                orders[tip] = fit_power(*zip(*errs))[0]
            except (ValueError, DegenerateFit):
                pass
        report.richardson_limits[family] = limits
        if limits:
            vals = list(limits.values())
            report.family_limits[family] = float(np.mean(vals))
            report.family_spread[family] = float(max(vals) - min(vals))
        report.fold_orders[family] = {
            "order": float(np.median(list(orders.values()))) if orders else None,
            "by_tip": orders,
        }

    # Hausdorff distance of stable segments to the reference
    ref_run = raw[ref_R]
    keys = sorted(ref_run["segments"])
    if keys:
        reference = build_domain(ref_R)
        ref_index = {(int(a), int(b)): i for i, (a, b) in enumerate(reference.labels)}
        gram = with_k_metric(reference.gram) if include_k else reference.gram
        ref_lines = _segments_on(reference, ref_index, ref_R, ref_run["segments"], keys, include_k)
        for R in radii:
            if R == ref_R:
                continue
            segs = raw[R]["segments"]
            if raw[R]["error"] or not set(keys) <= set(segs):
                report.hausdorff_to_reference.append((R, None))
                continue
            lines = _segments_on(reference, ref_index, R, segs, keys, include_k)
            report.hausdorff_to_reference.append(
                (R, hausdorff(lines, ref_lines, gram=gram, polyline=polyline)))
        pts = [(R, dist) for R, dist in report.hausdorff_to_reference if dist]
        if len(pts) >= 3:
            e, c, r2 = fit_power(*zip(*pts))
            report.path_order = {"order": e, "prefactor": c, "r2": r2}
    return report
