"""First-order covariant operators, their linearization, and coercivity.

Around a background w the first-order (Bogomolnyi-type) operator and its
linearization are

    Dp^(w) f  = d_r f - ((m + A_theta[w])/r) f,
    Dp^(w)* f = -d_r f - ((1 + m + A_theta[w])/r) f,
    B_w g     = (1/r) int_0^r Re(wbar g) r' dr',
    B_w* h    = w int_r^infty Re(h) dr',
    L_w       = Dp^(w) + w B_w,
    L_w* f    = Dp^(w)* f + B_w*(wbar f),

all R-linear (not C-linear).  The full linearized operator is

    Lcal_w e = L_w* L_w e + [(B_w e) + B_w*[ebar .] + B_e*[wbar .]] Dp^(w) w,

and at the static profile the correction dies (Dp^(Q) Q = 0), leaving the
self-dual factorization Lcal_Q = L_Q* L_Q.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg as sla

from .errors import PreconditionError
from .gauge import a_theta
from .grid import RadialField, RadialGrid, inner_r, norm_l2
from .profiles import lambda_q_profile, q_closed_form, q_profile

__all__ = [
    "d_plus", "d_plus_star", "b_apply", "b_star_apply", "l_w", "l_w_star",
    "LinearizedContext", "lcal_apply", "conjugation_check",
    "default_z_pair", "coercivity_estimate", "CoercivityReport",
]


def _atheta_of(w: RadialField, cached: Optional[np.ndarray]) -> np.ndarray:
    return a_theta(w) if cached is None else cached


def d_plus(w: RadialField, f: RadialField, atheta: Optional[np.ndarray] = None) -> RadialField:
    g = f.grid
    at = _atheta_of(w, atheta)
    return f.like(g.deriv_values(f.values) - (f.index + at) / g.nodes * f.values)


def d_plus_star(w: RadialField, f: RadialField, atheta: Optional[np.ndarray] = None) -> RadialField:
    g = f.grid
    at = _atheta_of(w, atheta)
    return f.like(-g.deriv_values(f.values) - (1 + f.index + at) / g.nodes * f.values)


def b_apply(w: RadialField, f: RadialField) -> np.ndarray:
    """B_w f = (1/r) int_0^r Re(wbar f) r' dr' (a real multiplier)."""
    g = w.grid
    return g.cum0(np.real(np.conj(w.values) * f.values), "rad") / g.nodes


def b_star_apply(w: RadialField, h: np.ndarray) -> np.ndarray:
    """B_w* h = w(r) int_r^infty Re(h) dr'."""
    g = w.grid
    return w.values * g.cum_inf(np.real(h), "plain")


def l_w(w: RadialField, f: RadialField, atheta: Optional[np.ndarray] = None) -> RadialField:
    df = d_plus(w, f, atheta)
    return f.like(df.values + w.values * b_apply(w, f))


def l_w_star(w: RadialField, f: RadialField, atheta: Optional[np.ndarray] = None) -> RadialField:
    df = d_plus_star(w, f, atheta)
    return f.like(df.values + b_star_apply(w, np.conj(w.values) * f.values))


@dataclass(eq=False)
class LinearizedContext:
    """Background caches for applying the linearized operator.

    self_dual is True when the background is the static profile (then the
    Dp^(w)w correction term vanishes identically and the factorized form is
    used).
    """

    w: RadialField
    atheta: np.ndarray
    dpw_w: RadialField
    self_dual: bool
    checksum: str


def make_context(w: RadialField, self_dual: Optional[bool] = None) -> LinearizedContext:
    at = a_theta(w)
    dpw = d_plus(w, w, at)
    if self_dual is None:
        q = q_closed_form(w.grid.nodes, w.grid.m)
        dq = norm_l2(w.like(w.values - q))
        self_dual = dq <= 1e-8 * norm_l2(w.like(q + 0j))
    return LinearizedContext(w, at, dpw, bool(self_dual), w.checksum())


def lcal_apply(ctx: LinearizedContext, eps: RadialField,
               include_correction: Optional[bool] = None) -> RadialField:
    """Apply the linearized flow operator around ctx.w to eps."""
    w, at = ctx.w, ctx.atheta
    out = l_w_star(w, l_w(w, eps, at), at)
    use_corr = (not ctx.self_dual) if include_correction is None else include_correction
    if use_corr:
        dpw = ctx.dpw_w.values
        corr = (
            b_apply(w, eps) * dpw
            + b_star_apply(w, np.conj(eps.values) * dpw)
            + eps.values * w.grid.cum_inf(np.real(np.conj(w.values) * dpw), "plain")
        )
        out = out.like(out.values + corr)
    return out


def lcal_q(grid: RadialGrid, eps: RadialField) -> RadialField:
    """Convenience: the self-dual factorized operator at the static profile."""
    return lcal_apply(make_context(q_profile(grid), self_dual=True), eps)


# -- conjugation by the pseudoconformal phase ---------------------------------

def _phase(field: RadialField, b: float) -> RadialField:
    return field.like(field.values * np.exp(-0.25j * b * field.r**2))


def _db(field_b: RadialField) -> RadialField:
    """Analytic d/db of f_b: always -i r^2/4 f_b, never a finite difference."""
    return field_b.like(-0.25j * field_b.r**2 * field_b.values)


def conjugation_check(b: float, f: RadialField, w: Optional[RadialField] = None,
                      eps: Optional[RadialField] = None) -> dict[str, float]:
    """L^2 residuals of the pseudoconformal conjugation identities.

    Checks, for given f (and optionally a background w with test field eps):
      flow_conj:   L_{f_b}* Dp^{(f_b)} f_b = [L_f* Dp^{(f)} f]_b + i b Lam f_b - i b^2 d_b f_b
      lin_conj:    Lcal_{w_b} e_b = [Lcal_w e]_b + i b Lam e_b - i b^2 d_b e_b
      static_alg:  -L_{Q_b}* Dp^{(Q_b)} Q_b + i b Lam Q_b = (b^2/4) r^2 Q_b
      ladder:      Lcal_{Q_b} iQ_b + b Lam Q_b = b^2 d_b Q_b
    """
    from .grid import lambda_op

    g = f.grid
    res: dict[str, float] = {}

    fb = _phase(f, b)
    lhs = l_w_star(fb, d_plus(fb, fb))
    rhs = _phase(l_w_star(f, d_plus(f, f)), b) \
        + (1j * b) * lambda_op(fb) - (1j * b * b) * _db(fb)
    res["flow_conj"] = norm_l2(lhs - rhs)

    if w is not None and eps is not None:
        wb, eb = _phase(w, b), _phase(eps, b)
        lhs = lcal_apply(make_context(wb, self_dual=False), eb, include_correction=True)
        rhs = _phase(lcal_apply(make_context(w, self_dual=False), eps,
                                include_correction=True), b) \
            + (1j * b) * lambda_op(eb) - (1j * b * b) * _db(eb)
        res["lin_conj"] = norm_l2(lhs - rhs)

    q = q_profile(g)
    qb = _phase(q, b)
    lhs = (-1.0) * l_w_star(qb, d_plus(qb, qb)) + (1j * b) * lambda_op(qb)
    rhs = qb.like(0.25 * b * b * qb.r**2 * qb.values)
    res["static_alg"] = norm_l2(lhs - rhs)

    iqb = qb.like(1j * qb.values)
    lhs = lcal_apply(make_context(qb, self_dual=(b == 0.0)), iqb) \
        + b * lambda_op(qb)
    rhs = (b * b) * _db(qb)
    res["ladder"] = norm_l2(lhs - rhs)
    return res


# -- coercivity ----------------------------------------------------------------

def default_z_pair(grid: RadialGrid) -> tuple[RadialField, RadialField]:
    """Bump-based orthogonality pair with (Z_re, Lam Q)_r = (Z_im, Q)_r = 1."""
    r = grid.nodes
    x = (r - 1.25) / 0.75
    chi = np.where(np.abs(x) < 1, np.exp(1.0 - 1.0 / np.maximum(1 - x**2, 1e-300)), 0.0)
    chi_f = RadialField(grid, chi + 0j)
    c_lam = inner_r(chi_f, lambda_q_profile(grid))
    c_q = inner_r(chi_f, q_profile(grid))
    if abs(c_lam) < 1e-8 or abs(c_q) < 1e-8:
        raise PreconditionError("default bump degenerate against the kernel pair")
    return chi_f * (1.0 / c_lam), chi_f * (1.0 / c_q)


@dataclass(eq=False)
class CoercivityReport:
    near_kernel_dim: int
    unconstrained_head: np.ndarray      # smallest Rayleigh quotients, both blocks
    c_est: float                        # constrained minimum
    bound_c: float                      # empirical upper Rayleigh bound


def _cum_matrix(grid: RadialGrid, kernel: np.ndarray) -> np.ndarray:
    """Dense matrix of a -> (1/r) int_0^r kernel * a r' dr' (real block)."""
    n = grid.n
    mat = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        mat[:, j] = grid.cum0(kernel * e, "rad")
    return mat / grid.nodes[:, None]


def coercivity_estimate(
    grid: RadialGrid,
    z_re: Optional[RadialField] = None,
    z_im: Optional[RadialField] = None,
    n_modes: int = 6,
    kernel_tol: float = 1e-6,
) -> CoercivityReport:
    """Rayleigh-quotient analysis of f -> ||L_Q f||^2 / ||f||_H1m^2.

    The real-linear operator block-diagonalizes over (Re f, Im f): the
    nonlocal term only sees the real part.  The unconstrained form must
    show exactly a 2-dimensional near-kernel (the scaling and phase modes);
    constrained to the complement of span{z_re, i z_im} the minimum is the
    returned coercivity constant.  Meant for moderate grid sizes (dense
    eigensolves).
    """
    if z_re is None or z_im is None:
        z_re, z_im = default_z_pair(grid)
    # nondegeneracy matrix of the pair against the kernel
    q = q_profile(grid)
    lam_q = lambda_q_profile(grid)
    iq = q.like(1j * q.values)
    iz_im = z_im.like(1j * z_im.values)
    mat = np.array([
        [inner_r(iq, z_re), inner_r(lam_q, z_re)],
        [inner_r(iq, iz_im), inner_r(lam_q, iz_im)],
    ])
    if abs(np.linalg.det(mat)) < 1e-10:
        raise PreconditionError("orthogonality pair is degenerate for coercivity")

    n = grid.n
    r = grid.nodes
    w = grid.weights
    m = grid.m
    qv = q_closed_form(r, m)
    at = a_theta(q)
    d = grid.deriv_matrix().toarray()
    base = d - np.diag((m + at) / r)
    l_re = base + qv[:, None] * _cum_matrix(grid, qv)      # L_Q on real parts
    l_im = base                                            # L_Q on i * (imag parts)

    metric = grid.stiffness(m).toarray()

    def rayleigh_block(lmat: np.ndarray, constraint: Optional[np.ndarray]):
        a = lmat.T @ (w[:, None] * lmat)
        bmat = metric
        if constraint is not None:
            basis = sla.null_space(constraint[None, :])
            a = basis.T @ a @ basis
            bmat = basis.T @ bmat @ basis
        vals = sla.eigh(a, bmat, eigvals_only=True,
                        subset_by_index=[0, min(n_modes, a.shape[0]) - 1])
        top = sla.eigh(a, bmat, eigvals_only=True,
                       subset_by_index=[a.shape[0] - 1, a.shape[0] - 1])
        return vals, float(top[0])

    vals_re, top_re = rayleigh_block(l_re, None)
    vals_im, top_im = rayleigh_block(l_im, None)
    head = np.sort(np.concatenate([vals_re, vals_im]))[:n_modes]
    near_kernel = int(np.sum(head < kernel_tol))

    # constraints: (f, z_re)_r pins Re f, (f, i z_im)_r pins Im f
    c_re = w * np.real(z_re.values)
    c_im = w * np.real(z_im.values)
    cvals_re, _ = rayleigh_block(l_re, c_re)
    cvals_im, _ = rayleigh_block(l_im, c_im)
    c_est = float(min(cvals_re[0], cvals_im[0]))
    return CoercivityReport(near_kernel, head, c_est, max(top_re, top_im))
