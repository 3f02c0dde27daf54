"""Nonlocal gauge potentials, the gauged nonlinearity, energy, virial weights.

Under the Coulomb gauge and m-equivariance the connection reduces to

    A_r = 0,
    A_theta[u](r) = -1/2 int_0^r |u|^2 r' dr',
    A_0[u](r)     = -int_r^infty (m + A_theta[u]) |u|^2 dr'/r',

and the equation's nonlinearity is

    N(u) = -|u|^2 u + (2m/r^2) A_theta u + (A_theta^2/r^2) u + A_0 u.

N splits into three trilinear and two quintilinear pieces whose pairings
with a fourth (sixth) field are the quartic/sextic forms below; those
duality relations are what the tests drive with random field tuples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DiscretizationFault, TailDivergenceError
from .grid import RadialField, RadialGrid, _check_same_grid, integrate

__all__ = [
    "GaugeData", "a_theta", "a_zero", "gauge_data", "nonlinearity",
    "nonlinearity_parts", "n3_0", "n3_1", "n3_2", "n5_1", "n5_2",
    "VirialWeight", "virial_weight", "m4_0", "m4_1", "m6",
    "energy", "energy_forms",
]


def a_theta(u: RadialField) -> np.ndarray:
    """Angular connection A_theta[u] sampled on the grid (zero at r -> 0)."""
    return -0.5 * u.grid.cum0(np.abs(u.values) ** 2, "rad")


def a_zero(u: RadialField, atheta: Optional[np.ndarray] = None) -> np.ndarray:
    """Temporal connection A_0[u]; vanishes at r_max by construction.

    The tail beyond r_max is closed with 0; for profile-dominated data the
    neglected piece is O(r_max^(-2m-2)).
    """
    g = u.grid
    sq = np.abs(u.values) ** 2
    if sq[-1] * g.r_max**2 > 1e-3 * max(np.max(sq * g.nodes**2), 1e-300):
        raise TailDivergenceError("|u|^2 does not decay at r_max; A_0 tail diverges")
    if atheta is None:
        atheta = a_theta(u)
    p = u.index
    return -g.cum_inf((p + atheta) * sq / g.nodes, "plain")


@dataclass(eq=False)
class GaugeData:
    """Connection samples tied to the source field by checksum."""

    grid: RadialGrid
    atheta: np.ndarray
    azero: np.ndarray
    source_checksum: str


def gauge_data(u: RadialField) -> GaugeData:
    at = a_theta(u)
    return GaugeData(u.grid, at, a_zero(u, at), u.checksum())


# -- multilinear pieces of the nonlinearity ---------------------------------

def _re(a: RadialField, b: RadialField) -> np.ndarray:
    _check_same_grid(a, b)
    return np.real(a.values * np.conj(b.values))


def n3_0(p1: RadialField, p2: RadialField, p3: RadialField) -> RadialField:
    return p3.like(-(p1.values * np.conj(p2.values) * p3.values))


def n3_1(p1: RadialField, p2: RadialField, p3: RadialField) -> RadialField:
    g = p1.grid
    m = p3.index
    cum = g.cum0(_re(p1, p2), "rad")
    return p3.like(-(m / g.nodes**2) * cum * p3.values)


def n3_2(p1: RadialField, p2: RadialField, p3: RadialField) -> RadialField:
    g = p1.grid
    m = p3.index
    tail = g.cum_inf(m * _re(p1, p2) / g.nodes, "plain")
    return p3.like(-tail * p3.values)


def n5_1(p1, p2, p3, p4, p5) -> RadialField:
    g = p1.grid
    c12 = g.cum0(_re(p1, p2), "rad")
    c34 = g.cum0(_re(p3, p4), "rad")
    return p5.like(c12 * c34 / (4 * g.nodes**2) * p5.values)


def n5_2(p1, p2, p3, p4, p5) -> RadialField:
    g = p1.grid
    c12 = g.cum0(_re(p1, p2), "rad")
    tail = g.cum_inf(c12 * _re(p3, p4) / g.nodes, "plain")
    return p5.like(0.5 * tail * p5.values)


def nonlinearity_parts(u: RadialField) -> dict[str, RadialField]:
    """The five multilinear pieces evaluated on the diagonal."""
    return {
        "n3_0": n3_0(u, u, u),
        "n3_1": n3_1(u, u, u),
        "n3_2": n3_2(u, u, u),
        "n5_1": n5_1(u, u, u, u, u),
        "n5_2": n5_2(u, u, u, u, u),
    }


def nonlinearity(u: RadialField, check: bool = False, tol: float = 1e-10) -> RadialField:
    """Full gauged nonlinearity N(u), assembled from the potentials.

    With check=True the multilinear decomposition is evaluated too and the
    two assemblies must agree to quadrature tolerance.
    """
    g = u.grid
    p = u.index
    at = a_theta(u)
    a0 = a_zero(u, at)
    vals = (-np.abs(u.values) ** 2 + (2 * p * at + at**2) / g.nodes**2 + a0) * u.values
    out = u.like(vals)
    if check:
        parts = nonlinearity_parts(u)
        total = sum(f.values for f in parts.values())
        scale = max(float(np.max(np.abs(vals))), 1e-300)
        if np.max(np.abs(total - vals)) > tol * scale:
            raise DiscretizationFault("nonlinearity decomposition mismatch")
    return out


# -- virial weights ----------------------------------------------------------

# quintic Hermite bridge for phi' on (1, 2): endpoint values/derivatives of
# r (left) and 3 - e^{-r} (right)
_E2 = np.exp(-2.0)
_BRIDGE = None


def _bridge_coeffs() -> np.ndarray:
    global _BRIDGE
    if _BRIDGE is None:
        # q(s) = sum c_k s^k on [1,2]; match value, d1, d2 at both ends
        lhs = []
        rhs = []
        for s, vals in ((1.0, (1.0, 1.0, 0.0)), (2.0, (3.0 - _E2, _E2, -_E2))):
            for der, v in enumerate(vals):
                row = [
                    (np.prod(np.arange(k, k - der, -1)) * s ** (k - der)) if k >= der else 0.0
                    for k in range(6)
                ]
                lhs.append(row)
                rhs.append(v)
        _BRIDGE = np.linalg.solve(np.array(lhs), np.array(rhs))
    return _BRIDGE


def _poly_derivs(c: np.ndarray, s: np.ndarray, order: int) -> list[np.ndarray]:
    out = []
    k = np.arange(c.size)
    cur = c.copy()
    for _ in range(order + 1):
        out.append(np.polynomial.polynomial.polyval(s, cur))
        cur = cur[1:] * np.arange(1, cur.size)
    return out


def _phi_profile(s: np.ndarray) -> tuple[np.ndarray, ...]:
    """(phi, phi', phi'', phi''', phi'''') of the unscaled weight profile."""
    s = np.asarray(s, dtype=float)
    phi = np.empty_like(s)
    d1 = np.empty_like(s)
    d2 = np.empty_like(s)
    d3 = np.empty_like(s)
    d4 = np.empty_like(s)

    c = _bridge_coeffs()
    # phi on [1,2] needs the bridge antiderivative; phi(1) = 1/2
    cint = np.concatenate(([0.0], c / np.arange(1, 7)))
    phi_b = lambda x: np.polynomial.polynomial.polyval(x, cint)
    phi1 = 0.5
    phi2 = phi1 + phi_b(2.0) - phi_b(1.0)

    lo = s <= 1.0
    md = (s > 1.0) & (s < 2.0)
    hi = s >= 2.0

    phi[lo] = 0.5 * s[lo] ** 2
    d1[lo] = s[lo]
    d2[lo] = 1.0
    d3[lo] = 0.0
    d4[lo] = 0.0

    if np.any(md):
        v = _poly_derivs(c, s[md], 3)
        phi[md] = phi1 + phi_b(s[md]) - phi_b(1.0)
        d1[md], d2[md], d3[md] = v[0], v[1], v[2]
        d4[md] = v[3]

    e = np.exp(-s[hi])
    phi[hi] = phi2 + 3.0 * (s[hi] - 2.0) + e - _E2
    d1[hi] = 3.0 - e
    d2[hi] = e
    d3[hi] = -e
    d4[hi] = e

    return phi, d1, d2, d3, d4


@dataclass(eq=False)
class VirialWeight:
    """Truncated virial weight phi_A and its radial Laplacians on a grid.

    A = inf reproduces the untruncated weight r^2/2 exactly; for finite A
    the weight is r^2/2 on r <= A and its slope saturates beyond.
    """

    grid: RadialGrid
    A: float
    phi: np.ndarray
    dphi: np.ndarray
    lap_phi: np.ndarray
    bilap_phi: np.ndarray
    bridge: str = "quintic-hermite(1,2)"


def virial_weight(grid: RadialGrid, A: float) -> VirialWeight:
    r = grid.nodes
    if np.isinf(A):
        return VirialWeight(grid, A, 0.5 * r**2, r.copy(),
                            np.full_like(r, 2.0), np.zeros_like(r))
    if A < 1:
        raise ValueError("cutoff scale A must be >= 1")
    s = r / A
    phi, d1, d2, d3, d4 = _phi_profile(s)
    lap = d2 + d1 / s
    bilap = d4 + 2 * d3 / s - d2 / s**2 + d1 / s**3
    return VirialWeight(grid, A, A**2 * phi, A * d1, lap, bilap / A**2)


# -- quartic and sextic forms -------------------------------------------------

def _weight_arrays(w: VirialWeight) -> tuple[np.ndarray, np.ndarray]:
    r = w.grid.nodes
    return w.lap_phi, w.dphi / r


def m4_0(w: VirialWeight, p1, p2, p3, p4) -> float:
    lap, _ = _weight_arrays(w)
    vals = 0.5 * lap * np.real(p1.values * np.conj(p2.values) * p3.values * np.conj(p4.values))
    return float(np.dot(w.grid.weights, vals))


def m4_1(w: VirialWeight, p1, p2, p3, p4) -> float:
    g = w.grid
    _, slope = _weight_arrays(w)
    cum = g.cum0(_re(p1, p2), "rad")
    vals = slope / g.nodes**2 * cum * _re(p3, p4)
    return float(np.dot(g.weights, vals))


def m6(w: VirialWeight, p1, p2, p3, p4, p5, p6) -> float:
    g = w.grid
    _, slope = _weight_arrays(w)
    c12 = g.cum0(_re(p1, p2), "rad")
    c34 = g.cum0(_re(p3, p4), "rad")
    vals = slope / g.nodes**2 * c12 * c34 * _re(p5, p6)
    return float(np.dot(g.weights, vals))


# -- energy -------------------------------------------------------------------

def energy_forms(u: RadialField) -> tuple[float, float]:
    """Energy in first-order (covariant) and kinetic-potential form.

    The first-order form (1/2) int |d_r u - ((m+A_theta)/r) u|^2 is
    manifestly nonnegative at the critical coupling; the second form is
    (1/2)|d_r u|^2 + (1/2)((m+A_theta)/r)^2 |u|^2 - (1/4)|u|^4.
    """
    g = u.grid
    p = u.index
    at = a_theta(u)
    du = g.deriv_values(u.values)
    cov = du - (p + at) / g.nodes * u.values
    e_first = 0.5 * float(np.dot(g.weights, np.abs(cov) ** 2))
    e_kin = float(np.dot(
        g.weights,
        0.5 * np.abs(du) ** 2
        + 0.5 * ((p + at) / g.nodes) ** 2 * np.abs(u.values) ** 2
        - 0.25 * np.abs(u.values) ** 4,
    ))
    return e_first, e_kin


def energy(u: RadialField, check: bool = True, tol: float = 1e-6) -> float:
    """Conserved energy (first-order form, guaranteed >= 0).

    With check=True the two analytic forms must agree to quadrature
    tolerance relative to the kinetic scale, else a DiscretizationFault is
    raised.  The kinetic-potential form cancels O(scale) terms, so its
    truncation error is set by the grid, not by |E|.
    """
    e_first, e_kin = energy_forms(u)
    if check:
        g = u.grid
        du = g.deriv_values(u.values)
        scale = max(float(np.dot(g.weights, np.abs(du) ** 2)), 1e-300)
        if abs(e_first - e_kin) > tol * scale:
            raise DiscretizationFault(
                f"energy forms disagree: {e_first} vs {e_kin} (scale {scale})"
            )
    return e_first


def mass(u: RadialField) -> float:
    return float(np.real(integrate(u.like(np.abs(u.values) ** 2))))
