"""Cracked square-lattice geometry.

Sites are labelled by integer pairs ``l = (l1, l2)`` and sit at the physical
position ``x = (l1 - 1/2, l2 - 1/2)``, so no site ever lies on the crack line
``x2 = 0``.  The crack cut runs along the negative ``x1`` axis; the rows of
sites directly above and below it are ``Gamma_plus`` (``l1 <= 0, l2 == 1``)
and ``Gamma_minus`` (``l1 <= 0, l2 == 0``).

All numerics work on *edges*: unordered nearest-neighbour pairs with at
least one endpoint inside the computational domain.  Each edge is stored
once, oriented along ``+e1`` or ``+e2``.  Sums over directed bonds
``(m, rho)`` count every edge twice, which is where the factor 2 in the
Gram, energy and Hessian assembly comes from.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DIRECTIONS",
    "SiteIndex",
    "Domain",
    "Field",
    "build_domain",
    "is_crack_bond",
    "discrete_gradient",
    "h1_inner",
    "h1_norm",
    "gram_matrix",
    "gram_apply",
]

#: Nearest-neighbour directions, in the order used for 4-vectors.
DIRECTIONS: tuple[tuple[int, int], ...] = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True, order=True)
class SiteIndex:
    """Integer label of a lattice site."""

    l1: int
    l2: int

    @property
    def x(self) -> tuple[float, float]:
        return (self.l1 - 0.5, self.l2 - 0.5)

    @property
    def in_gamma_plus(self) -> bool:
        return self.l1 <= 0 and self.l2 == 1

    @property
    def in_gamma_minus(self) -> bool:
        return self.l1 <= 0 and self.l2 == 0

    def shift(self, rho: tuple[int, int]) -> "SiteIndex":
        return SiteIndex(self.l1 + rho[0], self.l2 + rho[1])


def _as_site(site) -> SiteIndex:
    if isinstance(site, SiteIndex):
        return site
    l1, l2 = site
    return SiteIndex(int(l1), int(l2))


def is_crack_bond(site, rho) -> bool:
    """Return True when the bond ``(site, site + rho)`` crosses the crack cut."""
    site = _as_site(site)
    rho = tuple(rho)
    if rho not in DIRECTIONS:
        raise ValueError(f"rho must be one of {DIRECTIONS}, got {rho}")
    if site.in_gamma_plus:
        return rho == (0, -1)
    if site.in_gamma_minus:
        return rho == (0, 1)
    return False


def _crack_edge_mask(a_labels: np.ndarray, b_labels: np.ndarray) -> np.ndarray:
    # an edge crosses the cut iff it is vertical, joins rows l2=0 and l2=1, and l1 <= 0
    vertical = a_labels[:, 0] == b_labels[:, 0]
    lo = np.minimum(a_labels[:, 1], b_labels[:, 1])
    return vertical & (lo == 0) & (a_labels[:, 0] <= 0)


@dataclass(frozen=True, eq=False)
class Domain:
    """Finite computational domain ``B_R`` intersected with the lattice.

    Sites outside the domain are clamped (the correction field vanishes
    there).  ``labels`` is sorted lexicographically on ``(l1, l2)``.

    Edge arrays
    -----------
    edge_a, edge_b : int arrays
        Free-site index of each endpoint, or ``-1`` for a clamped site.
        The edge points from ``a`` to ``b`` along ``+e1`` or ``+e2``.
    edge_la, edge_lb : (M, 2) int arrays
        Integer labels of the endpoints.
    edge_crack : bool array
        Edges crossing the crack cut (absent from the crack-aware graph).
    """

    R: float
    labels: np.ndarray
    edge_a: np.ndarray = field(repr=False)
    edge_b: np.ndarray = field(repr=False)
    edge_la: np.ndarray = field(repr=False)
    edge_lb: np.ndarray = field(repr=False)
    edge_crack: np.ndarray = field(repr=False)

    @property
    def n_sites(self) -> int:
        return len(self.labels)

    @property
    def n_edges(self) -> int:
        return len(self.edge_a)

    @cached_property
    def index_of(self) -> dict[SiteIndex, int]:
        return {SiteIndex(int(a), int(b)): i for i, (a, b) in enumerate(self.labels)}

    @property
    def free_sites(self) -> list[SiteIndex]:
        return [SiteIndex(int(a), int(b)) for a, b in self.labels]

    @cached_property
    def positions(self) -> np.ndarray:
        return self.labels - 0.5

    @cached_property
    def radii(self) -> np.ndarray:
        """Distance of each free site from the origin."""
        return np.hypot(self.positions[:, 0], self.positions[:, 1])

    def contains(self, site) -> bool:
        return _as_site(site) in self.index_of

    def index(self, site) -> int:
        """Free-site index of ``site``, or -1 when it is clamped."""
        return self.index_of.get(_as_site(site), -1)

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Edge-by-site difference operator: ``(incidence @ u)[e] = u(b) - u(a)``."""
        rows, cols, vals = [], [], []
        e = np.arange(self.n_edges)
        for idx, sign in ((self.edge_b, 1.0), (self.edge_a, -1.0)):
            keep = idx >= 0
            rows.append(e[keep])
            cols.append(idx[keep])
            vals.append(np.full(keep.sum(), sign))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_edges, self.n_sites),
        )

    def weighted_laplacian(self, weights: np.ndarray) -> sp.csc_matrix:
        """``2 D^T diag(weights) D`` -- the directed-bond sum of ``w * Dv * Dw``."""
        D = self.incidence
        return (2.0 * (D.T @ sp.diags(weights) @ D)).tocsc()

    @cached_property
    def gram(self) -> sp.csc_matrix:
        return self.weighted_laplacian((~self.edge_crack).astype(float))

    # directed-bond views, mostly for inspection and the JSON summary
    @property
    def bonds_full(self) -> list[tuple[SiteIndex, tuple[int, int]]]:
        return [(s, rho) for s in self.free_sites for rho in DIRECTIONS]

    @property
    def bonds_tilde(self) -> list[tuple[SiteIndex, tuple[int, int]]]:
        return [(s, rho) for s, rho in self.bonds_full if not is_crack_bond(s, rho)]

    def summary(self) -> dict:
        n_full = 4 * self.n_sites
        n_cut = int(np.sum(
            ((self.labels[:, 0] <= 0) & ((self.labels[:, 1] == 0) | (self.labels[:, 1] == 1)))
        ))
        return {
            "R": float(self.R),
            "n_sites": int(self.n_sites),
            "n_bonds_full": n_full,
            "n_bonds_tilde": n_full - n_cut,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def build_domain(R: float) -> Domain:
    """All sites with ``|x| < R`` plus the edges touching them."""
    if not R >= 2:
        raise ValueError(f"domain radius must be >= 2, got {R}")
    n = int(math.ceil(R)) + 1
    l1, l2 = np.meshgrid(np.arange(-n + 1, n + 1), np.arange(-n + 1, n + 1), indexing="ij")
    labels = np.column_stack([l1.ravel(), l2.ravel()])
    x = labels - 0.5
    labels = labels[np.hypot(x[:, 0], x[:, 1]) < R]
    labels = labels[np.lexsort((labels[:, 1], labels[:, 0]))]
    lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(labels)}

    edges = set()
    for a, b in labels:
        a, b = int(a), int(b)
        for d1, d2 in DIRECTIONS:
            other = (a + d1, b + d2)
            edges.add(((a, b), other) if d1 + d2 > 0 else (other, (a, b)))
    edges = sorted(edges)
    la = np.array([e[0] for e in edges], dtype=int)
    lb = np.array([e[1] for e in edges], dtype=int)
    ia = np.array([lookup.get((int(p), int(q)), -1) for p, q in la])
    ib = np.array([lookup.get((int(p), int(q)), -1) for p, q in lb])
    return Domain(
        R=float(R),
        labels=labels,
        edge_a=ia,
        edge_b=ib,
        edge_la=la,
        edge_lb=lb,
        edge_crack=_crack_edge_mask(la, lb),
    )


@dataclass(frozen=True, eq=False)
class Field:
    """Values on the free sites of a domain, zero everywhere else."""

    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.domain.n_sites,):
            raise ValueError(
                f"field has shape {values.shape}, domain has {self.domain.n_sites} sites"
            )
        object.__setattr__(self, "values", values)

    def __call__(self, site) -> float:
        i = self.domain.index(site)
        return float(self.values[i]) if i >= 0 else 0.0

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def extend_to(self, other: Domain) -> "Field":
        """Zero-extend (or truncate) onto another domain."""
        return Field(other, transfer(self.domain, self.values, other))


def transfer(src: Domain, values: np.ndarray, dst: Domain) -> np.ndarray:
    """Copy site values from ``src`` to ``dst``; sites missing from ``src`` get 0."""
    out = np.zeros(dst.n_sites)
    for i, (a, b) in enumerate(src.labels):
        j = dst.index_of.get(SiteIndex(int(a), int(b)), -1)
        if j >= 0:
            out[j] = values[i]
    return out


def discrete_gradient(domain: Domain, u, site, crack_aware: bool = True) -> np.ndarray:
    """Finite differences ``u(site + rho) - u(site)`` for rho in ``DIRECTIONS``.

    With ``crack_aware`` the components along bonds crossing the cut are 0.
    """
    u = np.asarray(u, dtype=float)
    site = _as_site(site)

    def value(s):
        i = domain.index(s)
        return u[i] if i >= 0 else 0.0

    here = value(site)
    out = np.empty(4)
    for r, rho in enumerate(DIRECTIONS):
        if crack_aware and is_crack_bond(site, rho):
            out[r] = 0.0
        else:
            out[r] = value(site.shift(rho)) - here
    return out


def gram_matrix(domain: Domain) -> sp.csc_matrix:
    """Sparse SPD matrix ``G`` with ``v @ G @ u == h1_inner(u, v)``."""
    return domain.gram


def gram_apply(domain: Domain, u) -> np.ndarray:
    return domain.gram @ np.asarray(u, dtype=float)


def h1_inner(domain: Domain, u, v) -> float:
    """Crack-aware energy inner product ``sum_m D~u(m) . D~v(m)``."""
    D = domain.incidence
    du = D @ np.asarray(u, dtype=float)
    dv = D @ np.asarray(v, dtype=float)
    keep = ~domain.edge_crack
    return 2.0 * float(np.dot(du[keep], dv[keep]))


def h1_norm(domain: Domain, u) -> float:
    return math.sqrt(max(h1_inner(domain, u, u), 0.0))
