"""Pair potential, CLE crack predictor and the energy-difference functional.

The energy of a correction ``u`` at stress intensity factor ``k`` is

    E(u, k) = sum_m sum_rho phi(D_rho u_hat_k(m) + D_rho u(m)) - phi(D_rho u_hat_k(m))

with homogeneous finite differences ``D`` (bonds across the crack included).
Every unordered edge appears twice in the directed sum and ``phi`` is even,
so all assembly below is edge-wise with a factor 2.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .lattice import DIRECTIONS, Domain, SiteIndex, _as_site

__all__ = [
    "PairPotential",
    "phi",
    "Predictor",
    "predictor_eval",
    "predictor_dgrad",
    "predictor_values",
    "Model",
    "mirror",
]


@dataclass(frozen=True)
class PairPotential:
    """``phi(r) = A (1 - exp(-a r^2))``; the defaults give ``phi''(0) = 1``."""

    A: float = 1.0 / 6.0
    a: float = 3.0

    def __call__(self, r, order: int = 0):
        r = np.asarray(r, dtype=float)
        A, a = self.A, self.a
        e = np.exp(-a * r * r)
        if order == 0:
            out = A * (1.0 - e)
        elif order == 1:
            out = 2.0 * A * a * r * e
        elif order == 2:
            out = 2.0 * A * a * (1.0 - 2.0 * a * r * r) * e
        elif order == 3:
            out = 4.0 * A * a * a * r * (2.0 * a * r * r - 3.0) * e
        else:
            raise ValueError(f"derivative order must be 0..3, got {order}")
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return {"A": self.A, "a": self.a}


DEFAULT_POTENTIAL = PairPotential()


def phi(r, order: int = 0, potential: PairPotential = DEFAULT_POTENTIAL):
    return potential(r, order)


@dataclass(frozen=True)
class Predictor:
    """Mode III crack field ``k sqrt(r) sin(theta/2)`` centred at ``(lam, 0)``."""

    k: float
    lam: int = 0

    def __call__(self, x):
        return self.k * predictor_values(np.asarray(x, dtype=float), self.lam)


def predictor_values(x: np.ndarray, lam: float = 0.0) -> np.ndarray:
    """Unit-SIF predictor at physical positions ``x`` (shape (..., 2)).

    ``theta`` lies in (-pi, pi) with the branch cut along ``x1 <= lam``;
    lattice sites never sit on the cut.
    """
    x = np.asarray(x, dtype=float)
    y1 = x[..., 0] - lam
    y2 = x[..., 1]
    r = np.hypot(y1, y2)
    theta = np.arctan2(y2, y1)
    return np.sqrt(r) * np.sin(0.5 * theta)


def predictor_eval(pred: Predictor, site) -> float:
    site = _as_site(site)
    return float(pred.k * predictor_values(np.array(site.x), pred.lam))


def predictor_dgrad(pred: Predictor, site) -> np.ndarray:
    """Homogeneous differences of the predictor, crack bonds included."""
    site = _as_site(site)
    here = predictor_eval(pred, site)
    return np.array([predictor_eval(pred, site.shift(rho)) - here for rho in DIRECTIONS])


def mirror(domain: Domain, u) -> np.ndarray:
    """``(Mu)(x1, x2) = -u(x1, -x2)``, i.e. label ``(l1, l2) -> (l1, 1 - l2)``."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    for i, (a, b) in enumerate(domain.labels):
        out[domain.index_of[SiteIndex(int(a), 1 - int(b))]] = -u[i]
    return out


class Model:
    """Energy functional on a finite domain for a fixed potential and tip offset.

    Methods take the correction ``u`` (array over free sites) and the SIF
    ``k``.  Instances are immutable in practice and cheap to share.
    """

    def __init__(self, domain: Domain, potential: PairPotential = DEFAULT_POTENTIAL,
                 lam: int = 0):
        self.domain = domain
        self.potential = potential
        self.lam = int(lam)

    def __repr__(self):
        return f"Model(R={self.domain.R}, potential={self.potential}, lam={self.lam})"

    @cached_property
    def edge_predictor(self) -> np.ndarray:
        """Unit-SIF predictor difference ``u_hat_1(b) - u_hat_1(a)`` on each edge."""
        d = self.domain
        return (predictor_values(d.edge_lb - 0.5, self.lam)
                - predictor_values(d.edge_la - 0.5, self.lam))

    @cached_property
    def site_predictor(self) -> np.ndarray:
        return predictor_values(self.domain.positions, self.lam)

    def recentered(self, lam: int) -> "Model":
        return Model(self.domain, self.potential, lam)

    def strains(self, u, k: float) -> np.ndarray:
        return k * self.edge_predictor + self.domain.incidence @ np.asarray(u, dtype=float)

    # -- energy and its variations ---------------------------------------

    def energy(self, u, k: float) -> float:
        u = np.asarray(u, dtype=float)
        du = self.domain.incidence @ u
        active = du != 0.0
        base = k * self.edge_predictor[active]
        phi = self.potential
        return 2.0 * float(np.sum(phi(base + du[active]) - phi(base)))

    def gradient(self, u, k: float) -> np.ndarray:
        t = self.strains(u, k)
        return 2.0 * (self.domain.incidence.T @ self.potential(t, 1))

    def hessian(self, u, k: float) -> sp.csc_matrix:
        return self.domain.weighted_laplacian(self.potential(self.strains(u, k), 2))

    def mixed_uk(self, u, k: float) -> np.ndarray:
        """Derivative of the gradient with respect to ``k``."""
        t = self.strains(u, k)
        return 2.0 * (self.domain.incidence.T @ (self.potential(t, 2) * self.edge_predictor))

    def third_contract(self, u, k: float, gamma) -> float:
        """``d^3E/du^3 [gamma, gamma, gamma]``."""
        t = self.strains(u, k)
        dg = self.domain.incidence @ np.asarray(gamma, dtype=float)
        return 2.0 * float(np.sum(self.potential(t, 3) * dg ** 3))

    # -- periodicity -------------------------------------------------------

    def recenter_correction(self, u, k: float, lam_new: int) -> np.ndarray:
        """Correction ``w`` with ``u_hat_k(. - x_new) + w == u_hat_k(. - x_lam) + u`` on the domain."""
        u = np.asarray(u, dtype=float)
        if int(lam_new) == self.lam:
            return u.copy()
        shifted = predictor_values(self.domain.positions, lam_new)
        return k * (self.site_predictor - shifted) + u

