import numpy as np
import pytest

from conftest import bump_field, random_bump
from csslab import gauge
from csslab.errors import TailDivergenceError
from csslab.grid import RadialField, inner_r, integrate, make_grid, norm_l2
from csslab.profiles import q_closed_form, q_profile, rq_norm_sq, s_explicit


def test_a_theta_closed_form(grid_m1, bundle_m1):
    # A_theta[Q] = -2(m+1) r^(2m+2) / (1 + r^(2m+2))
    g = grid_m1
    at = gauge.a_theta(bundle_m1.Q)
    exact = -2 * (g.m + 1) * g.nodes**4 / (1 + g.nodes**4)
    i = int(np.argmin(np.abs(g.nodes - 1.0)))
    assert at[i] == pytest.approx(exact[i], abs=2e-9)
    assert np.max(np.abs(at - exact)) <= 2e-9


def test_a_theta_monotone_and_tail(grid_m1, bundle_m1):
    at = gauge.a_theta(bundle_m1.Q)
    # origin limit: |A_theta(r_1)| = (1/4) Q'(0+)... ~ 8 r_1^4 for m=1
    assert abs(at[0]) <= 10 * grid_m1.nodes[0] ** 4
    assert np.all(np.diff(at) <= 1e-15)
    m = grid_m1.m
    tail_bound = 3 * (m + 1) * grid_m1.r_max ** (-2 * m - 2)
    assert abs(at[-1] + 2 * (m + 1)) <= tail_bound + 1e-10
    # lower bound by the total charge
    mass = gauge.mass(bundle_m1.Q)
    assert at[-1] >= -mass / (4 * np.pi) - 1e-10


def test_a_theta_zero_field(grid_m1):
    z = RadialField(grid_m1, np.zeros(grid_m1.n))
    assert np.all(gauge.a_theta(z) == 0)
    assert np.all(gauge.a_zero(z) == 0)


def test_a_zero_is_half_q_squared(grid_m1, bundle_m1):
    # static self-duality: A_0[Q] = Q^2/2; sup error relative to the peak
    a0 = gauge.a_zero(bundle_m1.Q)
    exact = 0.5 * np.abs(bundle_m1.Q.values) ** 2
    assert np.max(np.abs(a0 - exact)) / np.max(exact) <= 1e-6
    i = int(np.argmin(np.abs(grid_m1.nodes - 1.0)))
    assert a0[i] == pytest.approx(exact[i], rel=1e-8)
    # and Q(1)^2/2 = 4 for m=1
    assert 0.5 * q_closed_form(1.0, 1) ** 2 == pytest.approx(4.0, abs=1e-14)


def test_a_zero_divergent_tail_flagged(grid_small):
    bad = RadialField(grid_small, np.ones(grid_small.n) + 0j)
    with pytest.raises(TailDivergenceError):
        gauge.a_zero(bad)


def test_nonlinearity_zero(grid_m1):
    z = RadialField(grid_m1, np.zeros(grid_m1.n))
    assert norm_l2(gauge.nonlinearity(z)) == 0.0


def test_nonlinearity_decomposition_agrees(grid_m1, bundle_m1):
    gauge.nonlinearity(bundle_m1.Q, check=True, tol=1e-10)


def test_nonlinearity_q_is_laplacian(grid_m1, bundle_m1):
    # static state: N(Q) = Lap_m Q; compare against stencil second derivative
    g = grid_m1
    q = bundle_m1.Q
    n_of_q = gauge.nonlinearity(q)
    dq = g.deriv_values(q.values)
    ddq = g.deriv_values(dq)
    lap = ddq + dq / g.nodes - g.m**2 / g.nodes**2 * q.values
    # compare on the bulk; the one-sided stencil rows at the ends are noisier
    sl = slice(4, -4)
    num = np.sqrt(np.dot(g.weights[sl], np.abs(n_of_q.values - lap)[sl] ** 2))
    assert num <= 1e-5 * norm_l2(q)


def test_energy_q_zero(bundle_m1, grid_m1):
    e = gauge.energy(bundle_m1.Q)
    dq = grid_m1.deriv_values(bundle_m1.Q.values)
    scale = float(np.dot(grid_m1.weights, np.abs(dq) ** 2))
    assert abs(e) <= 1e-8 * scale


def test_energy_zero_field(grid_m1):
    assert gauge.energy(RadialField(grid_m1, np.zeros(grid_m1.n))) == 0.0


def test_energy_s_at_minus_one(grid_m1):
    # E[S(-1)] = ||rQ||^2 / 8 = pi^2 for m=1 (virial identity applied to
    # the explicit family; oracle = quadrature of the first-order form).
    # The quadratic phase is unresolved by the stencil in the far field,
    # which caps the accuracy of the derivative-based integrand there.
    s = s_explicit(-1.0, grid_m1)
    e = gauge.energy(s, check=True, tol=1e-2)
    assert e == pytest.approx(rq_norm_sq(1) / 8, rel=2e-3)
    assert e == pytest.approx(np.pi**2, rel=2e-3)


def test_energy_forms_agree_on_random(grid_m1):
    rng = np.random.default_rng(21)
    for _ in range(5):
        f = random_bump(grid_m1, rng)
        e1, e2 = gauge.energy_forms(f)
        assert e1 >= 0
        assert abs(e1 - e2) <= 1e-7 * (1 + abs(e1))


def test_s_weighted_mass(grid_m1):
    # int |x|^2 |S(t)|^2 = t^2 ||rQ||^2 = 8 pi^2 t^2 for m=1
    g = grid_m1
    for t in (-1.0, -0.5):
        s = s_explicit(t, g)
        wm = float(np.dot(g.weights, g.nodes**2 * np.abs(s.values) ** 2))
        target = t * t * rq_norm_sq(1)
        tail = 2 * np.pi * 32.0 * t**4 / (2 * g.r_max**2)
        assert abs(wm - target) <= tail + 1e-8 * target


def _duality_scales(g, ps):
    rr = lambda f: np.sqrt(np.dot(g.weights, np.abs(f.values / g.nodes) ** 2))
    return rr, norm_l2


def test_duality_relations_random_tuples(grid_m1):
    # the five pairings between nonlinearity pieces and the quartic/sextic
    # forms, normalized by the natural operator-size of each form
    g = grid_m1
    rng = np.random.default_rng(42)
    winf = gauge.virial_weight(g, np.inf)
    worst = 0.0
    for _ in range(100):
        ps = [random_bump(g, rng) for _ in range(6)]
        rr = lambda f: np.sqrt(np.dot(g.weights, np.abs(f.values / g.nodes) ** 2))
        n4 = rr(ps[0]) * rr(ps[1]) * norm_l2(ps[2]) * norm_l2(ps[3]) + 1e-30
        n6 = rr(ps[0]) * rr(ps[1]) * np.prod([norm_l2(p) for p in ps[2:]]) + 1e-30

        e = abs(inner_r(gauge.n3_0(*ps[:3]), ps[3]) + gauge.m4_0(winf, *ps[:4]))
        worst = max(worst, e / (np.prod([norm_l2(p) for p in ps[:4]]) + 1e-30))
        e = abs(inner_r(gauge.n3_1(*ps[:3]), ps[3]) + g.m * gauge.m4_1(winf, *ps[:4]))
        worst = max(worst, e / n4)
        e = abs(inner_r(gauge.n3_2(*ps[:3]), ps[3])
                + g.m * gauge.m4_1(winf, ps[2], ps[3], ps[0], ps[1]))
        worst = max(worst, e / n4)
        e = abs(inner_r(gauge.n5_1(*ps[:5]), ps[5]) - 0.25 * gauge.m6(winf, *ps))
        worst = max(worst, e / n6)
        e = abs(inner_r(gauge.n5_2(*ps[:5]), ps[5])
                - 0.5 * gauge.m6(winf, ps[0], ps[1], ps[4], ps[5], ps[2], ps[3]))
        worst = max(worst, e / n6)
    assert worst <= 1e-8


def test_m41_duality_estimate(grid_m1):
    # |M_41| <= ||psi1/r|| ||psi2/r|| ||psi3|| ||psi4||
    g = grid_m1
    rng = np.random.default_rng(77)
    winf = gauge.virial_weight(g, np.inf)
    for _ in range(20):
        ps = [random_bump(g, rng) for _ in range(4)]
        rr = lambda f: np.sqrt(np.dot(g.weights, np.abs(f.values / g.nodes) ** 2))
        bound = rr(ps[0]) * rr(ps[1]) * norm_l2(ps[2]) * norm_l2(ps[3])
        assert abs(gauge.m4_1(winf, *ps)) <= (1 + 1e-10) * bound + 1e-14


def test_forms_multilinear_zero_slot(grid_m1):
    g = grid_m1
    rng = np.random.default_rng(13)
    winf = gauge.virial_weight(g, np.inf)
    zero = RadialField(g, np.zeros(g.n))
    ps = [random_bump(g, rng) for _ in range(5)]
    assert gauge.m4_0(winf, zero, *ps[:3]) == 0.0
    assert gauge.m4_1(winf, ps[0], zero, ps[1], ps[2]) == 0.0
    assert gauge.m6(winf, zero, *ps) == 0.0


def test_energy_reconstruction_via_forms(grid_m1, bundle_m1):
    # E[u] = (1/2)(||d_r u||^2 + m^2 ||u/r||^2) - (1/4) M40 - (m/2) M41 + (1/8) M6
    g = grid_m1
    q = bundle_m1.Q
    winf = gauge.virial_weight(g, np.inf)
    du = g.deriv_values(q.values)
    kin = 0.5 * float(np.dot(g.weights, np.abs(du) ** 2
                             + g.m**2 / g.nodes**2 * np.abs(q.values) ** 2))
    e = kin - 0.25 * gauge.m4_0(winf, q, q, q, q) \
        - 0.5 * g.m * gauge.m4_1(winf, q, q, q, q) \
        + 0.125 * gauge.m6(winf, q, q, q, q, q, q)
    assert abs(e) <= 1e-7 * kin


def test_virial_weight_profile(grid_small):
    g = grid_small
    w = gauge.virial_weight(g, 10.0)
    r = g.nodes
    inside = r <= 10.0
    assert np.allclose(w.phi[inside], 0.5 * r[inside] ** 2, rtol=1e-12)
    assert np.all(np.diff(w.dphi) >= -1e-12)        # phi' increasing
    winf = gauge.virial_weight(g, np.inf)
    assert np.allclose(winf.phi, 0.5 * r**2)
    assert np.allclose(winf.lap_phi, 2.0)
    assert np.allclose(winf.bilap_phi, 0.0)


def test_virial_weight_consistency_on_compact_fields(grid_m1):
    # forms with A = 1e3 match A = inf for fields supported in r <= 1e2
    g = grid_m1
    rng = np.random.default_rng(31)
    wa = gauge.virial_weight(g, 1e3)
    winf = gauge.virial_weight(g, np.inf)
    for _ in range(5):
        ps = [random_bump(g, rng, lo=1.0, hi=50.0) for _ in range(6)]
        assert abs(gauge.m4_0(wa, *ps[:4]) - gauge.m4_0(winf, *ps[:4])) <= 1e-10
        assert abs(gauge.m4_1(wa, *ps[:4]) - gauge.m4_1(winf, *ps[:4])) <= 1e-10
        assert abs(gauge.m6(wa, *ps) - gauge.m6(winf, *ps)) <= 1e-10
