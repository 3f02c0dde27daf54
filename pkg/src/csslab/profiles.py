"""Static and modified soliton profiles.

Closed forms implemented here (m >= 1 throughout):

    Q(r)      = sqrt(8)(m+1) r^m / (1 + r^(2m+2))        static soliton
    Lambda Q  = (m+1) Q (1 - r^(2m+2)) / (1 + r^(2m+2))  scaling mode
    psi(r)    = r Q / (2(m+1))                           first inversion step
    S(t,r)    = Q(r/|t|) e^{-i r^2/(4|t|)} / |t|         explicit blow-up

The generalized mode rho solves (conjugated to rho = Q*rhot) the Volterra
equation

    rhot(r) + int_0^r (int_0^r' Q^2 rhot r'' dr'') dr'/r' = r^2/(4(m+1)),

marched from the origin.  The eta-deformed profile solves the modified
first-order (Bogomolnyi-type) system

    d_r P = ((m + a)/r) P,   d_r a = -(r/2) e^{-eta r^2/2} P^2,
    Q_eta = e^{-eta r^2/4} P,

with the same leading origin coefficient as Q; its mass defect
theta_eta = (1/4pi) int |Q_eta|^2 - (m+1) drives the phase rotation rate
of the exact modulated solution

    lambda(t) = sqrt(t^2 + eta^2),  b(t) = -t,
    gamma(t) = theta_eta * arctan(t/eta).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConvergenceError, PreconditionError
from .grid import RadialField, RadialGrid

__all__ = [
    "q_profile", "q_closed_form", "lambda_q_profile", "psi_profile",
    "pseudoconformal_phase", "s_explicit", "rho_solve",
    "QEtaSolution", "q_eta_solve", "ProfileBundle", "build_bundle",
    "exact_modulation_params", "modulated_exact_field",
]

ETA_MAX_DEFAULT = 0.05


def q_closed_form(r: np.ndarray, m: int) -> np.ndarray:
    return np.sqrt(8.0) * (m + 1) * r**m / (1.0 + r ** (2 * m + 2))


def q_profile(grid: RadialGrid) -> RadialField:
    """Static soliton profile on the grid (closed form, real-valued)."""
    return RadialField(grid, q_closed_form(grid.nodes, grid.m) + 0j)


def lambda_q_profile(grid: RadialGrid) -> RadialField:
    """Closed form of (1 + r d_r)Q; node sits at r = 1 for every m."""
    m = grid.m
    r = grid.nodes
    x = r ** (2 * m + 2)
    vals = (m + 1) * q_closed_form(r, m) * (1.0 - x) / (1.0 + x)
    return RadialField(grid, vals + 0j)


def psi_profile(grid: RadialGrid) -> RadialField:
    """psi = r Q / (2(m+1)) = sqrt(2) r^(m+1)/(1+r^(2m+2))."""
    m = grid.m
    r = grid.nodes
    vals = np.sqrt(2.0) * r ** (m + 1) / (1.0 + r ** (2 * m + 2))
    return RadialField(grid, vals + 0j)


def psi_norm_sq(m: int) -> float:
    """||psi||^2 in closed (Beta-function) form."""
    return 2 * np.pi**2 / ((m + 1) ** 2 * np.sin(np.pi / (m + 1)))


def rq_norm_sq(m: int) -> float:
    """||r Q||^2 in closed form; equals 4(m+1)^2 ||psi||^2."""
    return 8 * np.pi**2 / np.sin(np.pi / (m + 1))


def pseudoconformal_phase(f: RadialField, b: float) -> RadialField:
    """Multiply by the pseudoconformal phase e^{-i b r^2/4} (isometric)."""
    return f.like(f.values * np.exp(-0.25j * b * f.r**2))


def s_explicit(t: float, grid: RadialGrid) -> RadialField:
    """The explicit blow-up solution S(t) for t < 0."""
    if t >= 0:
        raise PreconditionError("the explicit blow-up solution needs t < 0")
    at = abs(t)
    r = grid.nodes
    vals = q_closed_form(r / at, grid.m) / at * np.exp(-0.25j * r**2 / at)
    return RadialField(grid, vals)


# -- generalized mode rho -----------------------------------------------------

def rho_solve(grid: RadialGrid, tol: float = 1e-12, max_sweeps: int = 8) -> RadialField:
    """Solve the conjugated Volterra equation for rho = Q * rhot.

    One forward-substitution pass on the trapezoid-discretized equation
    (the kernel is lower-triangular), then defect-correction sweeps against
    the grid's 4th-order cumulative quadrature until the equation residual
    is below tol.  Unconditional: no fixed-point iteration on the original
    kernel.
    """
    m = grid.m
    r = grid.nodes
    q = q_closed_form(r, m)
    q2r = q * q * r
    rhs = r**2 / (4.0 * (m + 1))
    dr = np.diff(np.concatenate(([0.0], r)))

    def forward_pass(target: np.ndarray) -> np.ndarray:
        rhot = np.empty_like(target)
        inner_prev = 0.0       # int_0^{r_(i-1)} Q^2 rhot r dr
        outer_prev = 0.0       # int_0^{r_(i-1)} inner/r dr
        g_prev = 0.0           # integrand inner/r at previous node (0 at origin)
        q2r_prev = 0.0
        for i in range(r.size):
            h = dr[i]
            # inner_i = inner_prev + h/2 (q2r_(i-1) rhot_(i-1) + q2r_i rhot_i)
            known_inner = inner_prev + 0.5 * h * q2r_prev * (rhot[i - 1] if i else 0.0)
            coeff = 0.25 * h * h * q[i] ** 2     # from rhot_i through inner to outer
            known_outer = outer_prev + 0.5 * h * (g_prev + known_inner / r[i])
            rhot[i] = (target[i] - known_outer) / (1.0 + coeff)
            inner_i = known_inner + 0.5 * h * q2r[i] * rhot[i]
            outer_prev = known_outer + 0.25 * h * h * q[i] ** 2 * rhot[i]
            g_prev = inner_i / r[i]
            inner_prev = inner_i
            q2r_prev = q2r[i]
        return rhot

    def volterra_residual(rhot: np.ndarray) -> np.ndarray:
        inner = grid.cum0(q * q * rhot, "rad")
        outer = grid.cum0(inner / r, "plain")
        return rhs - rhot - outer

    rhot = forward_pass(rhs)
    scale = max(np.max(np.abs(rhs)), 1.0)
    for _ in range(max_sweeps):
        res = volterra_residual(rhot)
        if np.max(np.abs(res)) <= tol * scale:
            break
        rhot = rhot + forward_pass(res)
    else:
        raise ConvergenceError("rho defect correction did not reach tolerance")
    return RadialField(grid, q * rhot + 0j)


# -- eta-deformed profile -----------------------------------------------------

@dataclass(eq=False)
class QEtaSolution:
    """Modified profile family member for one (m, eta)."""

    grid: RadialGrid
    eta: float
    B: float
    q_eta: RadialField
    p_eta: RadialField
    theta_eta: float
    a_inf: float                      # angular connection value at r_max
    r_trust: float                    # (B*eta)^(-1/2), inf when eta = 0
    interpolant: Optional[Callable] = None

    def q_eta_at(self, y: np.ndarray) -> np.ndarray:
        """Evaluate Q_eta at arbitrary radii (0 beyond the solved range)."""
        y = np.asarray(y, dtype=float)
        m = self.grid.m
        if self.interpolant is None:      # eta = 0: closed form everywhere
            return q_closed_form(y, m)
        out = np.zeros_like(y)
        ok = (y > 0) & (y <= self.grid.r_max)
        h = self.interpolant(y[ok])[0]
        out[ok] = np.exp(-0.25 * self.eta * y[ok] ** 2) * h * y[ok] ** m
        return out


def q_eta_solve(
    grid: RadialGrid,
    eta: float,
    B: float = 10.0,
    tol: float = 1e-11,
    eta_max: float = ETA_MAX_DEFAULT,
) -> QEtaSolution:
    """Integrate the modified first-order system for (P_eta, A_theta).

    The branch is fixed by matching Q's leading origin coefficient
    sqrt(8)(m+1); the solver marches h = P/r^m (removable singularity) with
    an adaptive embedded Runge-Kutta pair at relative tolerance tol/10.
    """
    if eta < 0:
        raise PreconditionError("eta must be >= 0 (one-sided deformation)")
    if eta > eta_max:
        raise PreconditionError(f"eta={eta} beyond the trusted range {eta_max}")
    m = grid.m
    r = grid.nodes
    if eta == 0.0:
        q = q_profile(grid)
        return QEtaSolution(grid, 0.0, B, q, q.copy(), float(m + 1),
                            -2.0 * (m + 1), np.inf, None)

    h0 = np.sqrt(8.0) * (m + 1)
    r0 = min(1e-4, 0.5 * r[0])

    def rhs(rr, y):
        h, a = y
        return [a / rr * h, -0.5 * rr ** (2 * m + 1) * np.exp(-0.5 * eta * rr**2) * h * h]

    def blow_up(rr, y):
        return abs(y[0]) - 10.0 * h0
    blow_up.terminal = True

    a_init = -h0**2 * r0 ** (2 * m + 4) / (4 * m + 8)
    sol = solve_ivp(rhs, (r0, grid.r_max), [h0, a_init], method="DOP853",
                    rtol=tol / 10, atol=[1e-290, 1e-16], dense_output=True,
                    events=blow_up)
    if not sol.success or sol.status == 1:
        raise ConvergenceError(f"profile integration failed for eta={eta}: {sol.message}")

    hy, ay = sol.sol(r)
    small = r < r0
    hy[small], ay[small] = h0, a_init * (r[small] / r0) ** (2 * m + 4)
    p_vals = hy * r**m
    gauss = np.exp(-0.25 * eta * r**2)
    q_vals = gauss * p_vals

    q_eta = RadialField(grid, q_vals + 0j)
    a_inf = float(ay[-1])
    theta_eta = -a_inf - (m + 1)
    return QEtaSolution(grid, eta, B, q_eta, RadialField(grid, p_vals + 0j),
                        theta_eta, a_inf, (B * eta) ** -0.5, sol.sol)


# -- exact modulated family ----------------------------------------------------

def exact_modulation_params(t: float, eta: float, theta_eta: float) -> tuple[float, float, float]:
    """(b, lambda, gamma) of the exact modulated solution at time t."""
    lam = np.hypot(t, eta)
    return -t, float(lam), float(theta_eta * np.arctan2(t, eta))


def modulated_exact_field(sol: QEtaSolution, t: float, grid: RadialGrid) -> RadialField:
    """u(t) = e^{i gamma}/lambda * [Q_eta e^{-i b y^2/4}](r/lambda) on grid."""
    b, lam, gamma = exact_modulation_params(t, sol.eta, sol.theta_eta)
    y = grid.nodes / lam
    vals = sol.q_eta_at(y) / lam * np.exp(1j * (gamma - 0.25 * b * y**2))
    return RadialField(grid, vals)


# -- bundle ---------------------------------------------------------------------

@dataclass(eq=False)
class ProfileBundle:
    """All special profiles for one (m, eta) on a shared grid."""

    grid: RadialGrid
    m: int
    eta: float
    B: float
    Q: RadialField
    LambdaQ: RadialField
    psi: RadialField
    rho: RadialField
    q_eta: QEtaSolution

    @property
    def theta_eta(self) -> float:
        return self.q_eta.theta_eta

    @property
    def r_trust(self) -> float:
        return self.q_eta.r_trust


def build_bundle(grid: RadialGrid, eta: float = 0.0, B: float = 10.0,
                 tol: float = 1e-11) -> ProfileBundle:
    return ProfileBundle(
        grid=grid, m=grid.m, eta=eta, B=B,
        Q=q_profile(grid),
        LambdaQ=lambda_q_profile(grid),
        psi=psi_profile(grid),
        rho=rho_solve(grid),
        q_eta=q_eta_solve(grid, eta, B=B, tol=tol),
    )
