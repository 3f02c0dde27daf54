"""csslab: numerical laboratory for the m-equivariant self-dual
Chern-Simons-Schrodinger flow.

Subpackages by role:

    grid        radial meshes, quadrature, derivatives, equivariant norms
    gauge       nonlocal connection components, nonlinearity, energy, virial weights
    profiles    static/deformed solitons, explicit blow-up, generalized modes
    linops      first-order covariant operators, linearization, coercivity
    evolve      norm-conserving implicit-midpoint time integration
    modulation  scale/phase decomposition and the rotational instability run
    envelopes   dyadic time maximal functions over sampled series
    cli         batch front-end (profiles, verify, evolve, instability, envcheck, report)
"""

__version__ = "0.1.0"

from .grid import (RadialField, RadialGrid, deriv_r, inner_r, integrate,
                   lambda_op, make_grid, norm_h1m, norm_l2)
from .profiles import (ProfileBundle, build_bundle, psi_profile, q_profile,
                       rho_solve, s_explicit)

__all__ = [
    "__version__", "RadialField", "RadialGrid", "make_grid", "integrate",
    "inner_r", "deriv_r", "lambda_op", "norm_h1m", "norm_l2",
    "ProfileBundle", "build_bundle", "q_profile", "psi_profile", "rho_solve",
    "s_explicit",
]
