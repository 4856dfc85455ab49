"""Newton equilibration, bordered solves and the smallest generalized eigenpair."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .errors import (
    NoConvergence,
    NoEigenConvergence,
    SingularBorderedSystem,
    SingularHessian,
)

log = logging.getLogger(__name__)

__all__ = [
    "NewtonReport",
    "EigenPair",
    "newton",
    "bordered_matrix",
    "bordered_solve",
    "factorize",
    "inertia",
    "smallest_eigenpair",
    "classify",
    "MU_TOL",
]

NEWTON_TOL = 1e-8
MU_TOL = 1e-6
# pivots this small relative to the largest count as breakdown
PIVOT_RTOL = 1e-14


@dataclass
class NewtonReport:
    converged: bool
    iterations: int
    residual_history: list[float]
    final_field: np.ndarray = field(repr=False)

    @property
    def residual(self) -> float:
        return self.residual_history[-1]


@dataclass
class EigenPair:
    mu: float
    gamma: np.ndarray = field(repr=False)
    residual: float = 0.0


def factorize(A, error=SingularHessian):
    """Sparse LU of ``A``; breakdown or a non-finite factor raises ``error``."""
    try:
        lu = sla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise error(str(exc)) from exc
    d = np.abs(lu.U.diagonal())
    if not np.all(np.isfinite(d)) or np.min(d) <= PIVOT_RTOL * np.max(d):
        raise error("factorization produced a zero or non-finite pivot")
    return lu


def newton(model, k: float, u0, tol: float = NEWTON_TOL, max_iter: int = 25) -> NewtonReport:
    """Undamped Newton iteration for ``gradient(u, k) = 0`` at fixed ``k``.

    Stops when the l-infinity residual is at most ``tol``.  Raises
    ``SingularHessian`` when the Hessian cannot be factorized and
    ``NoConvergence`` (carrying the partial report) after ``max_iter`` steps.
    """
    u = np.array(u0, dtype=float, copy=True)
    g = model.gradient(u, k)
    history = [float(np.max(np.abs(g)))]
    it = 0
    while history[-1] > tol:
        if it == max_iter or not np.isfinite(history[-1]):
            report = NewtonReport(False, it, history, u)
            raise NoConvergence(
                f"Newton stalled at residual {history[-1]:.3e} after {it} iterations",
                report=report,
            )
        try:
            lu = factorize(model.hessian(u, k))
        except SingularHessian as exc:
            raise SingularHessian(f"{exc} at Newton iteration {it}",
                                  report=NewtonReport(False, it, history, u)) from exc
        u -= lu.solve(g)
        g = model.gradient(u, k)
        history.append(float(np.max(np.abs(g))))
        it += 1
        log.debug("newton k=%.6f it=%d res=%.3e", k, it, history[-1])
    return NewtonReport(True, it, history, u)


def bordered_matrix(H, b, c, d: float, G=None) -> sp.csc_matrix:
    """``[[H, b], [(G c)^T, d]]``; with ``G=None`` the last row is ``c^T``."""
    b = np.asarray(b, dtype=float)
    row = np.asarray(c, dtype=float) if G is None else G @ np.asarray(c, dtype=float)
    return sp.bmat(
        [[sp.csc_matrix(H), sp.csc_matrix(b[:, None])],
         [sp.csr_matrix(row[None, :]), sp.csr_matrix([[float(d)]])]],
        format="csc",
    )


def bordered_solve(H, b, c, d: float, rhs, G=None):
    """Solve ``[[H, b], [<G c, .>, d]] (x, t) = rhs`` with one sparse factorization.

    ``rhs`` is a pair ``(f, g)`` of an N-vector and a scalar.  Returns ``(x, t)``.
    """
    f, g = rhs
    lu = factorize(bordered_matrix(H, b, c, d, G), error=SingularBorderedSystem)
    sol = lu.solve(np.append(np.asarray(f, dtype=float), float(g)))
    return sol[:-1], float(sol[-1])


def inertia(A) -> tuple[int, object]:
    """Number of negative eigenvalues of the symmetric matrix ``A``.

    Uses an unpivoted symmetric-mode LU, so ``U``'s diagonal is the ``D``
    of an ``LDL^T`` factorization and Sylvester's law applies.  Returns the
    factorization too, for reuse as a shift-invert operator.
    """
    lu = sla.splu(
        sp.csc_matrix(A),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise RuntimeError("symmetric LU pivoted off the diagonal; inertia unavailable")
    return int(np.sum(lu.U.diagonal() < 0)), lu


def smallest_eigenpair(H, G, mu_guess: float = 0.0, v0=None, tol: float = 1e-12,
                       max_iter: int = 200) -> EigenPair:
    """Algebraically smallest eigenpair of ``H gamma = mu G gamma``.

    Shift-invert about ``sigma = mu_guess - 0.1``.  The shift is first
    pushed below the whole spectrum (checked by inertia) so that the
    eigenvalue nearest the shift is the smallest one.  ``gamma`` is
    normalized to ``gamma @ G @ gamma == 1``.
    """
    H = sp.csc_matrix(H)
    G = sp.csc_matrix(G)
    n = H.shape[0]
    sigma = mu_guess - 0.1
    step = 0.1
    for _ in range(60):
        try:
            nneg, lu = inertia(H - sigma * G)
        except RuntimeError:
            nneg, lu = 1, None
        if nneg == 0:
            break
        step *= 2.0
        sigma -= step
    else:
        raise NoEigenConvergence("could not place the shift below the spectrum")

    if v0 is None:
        v0 = np.zeros(n)
        v0[0] = 1.0
    v0 = np.asarray(v0, dtype=float)

    def attempt(sigma, lu):
        op = sla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
        vals, vecs = sla.eigsh(H, k=1, M=G, sigma=sigma, which="LM", OPinv=op,
                               v0=v0, tol=tol, maxiter=max_iter)
        return float(vals[0]), vecs[:, 0]

    try:
        mu, gamma = attempt(sigma, lu)
    except sla.ArpackNoConvergence:
        # one retry with the shift moved further below the spectrum
        sigma -= step
        nneg, lu = inertia(H - sigma * G)
        try:
            mu, gamma = attempt(sigma, lu)
        except sla.ArpackNoConvergence as exc:
            raise NoEigenConvergence(str(exc)) from exc

    # a few inverse-iteration sweeps tighten the residual
    for _ in range(3):
        gamma = gamma / np.sqrt(gamma @ (G @ gamma))
        Hg = H @ gamma
        mu = float(gamma @ Hg)
        res = float(np.linalg.norm(Hg - mu * (G @ gamma)))
        if res <= 1e-10 * max(1.0, np.linalg.norm(Hg)):
            break
        gamma = lu.solve(G @ gamma)
    gamma = gamma / np.sqrt(gamma @ (G @ gamma))
    Hg = H @ gamma
    mu = float(gamma @ Hg)
    res = float(np.linalg.norm(Hg - mu * (G @ gamma)))
    # deterministic sign: largest-magnitude entry positive
    if gamma[np.argmax(np.abs(gamma))] < 0:
        gamma = -gamma
    return EigenPair(mu, gamma, res)


def classify(mu: float, mu_tol: float = MU_TOL) -> str:
    if not np.isfinite(mu):
        return "unknown"
    if mu > mu_tol:
        return "stable"
    if mu < -mu_tol:
        return "unstable"
    return "near-fold"
