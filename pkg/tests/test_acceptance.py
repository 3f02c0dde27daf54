"""Acceptance suite: every exit criterion at its stated tolerance.

Reference resolution: N = 4096 graded grids, r_max = 1e3 for profile work
and 1e2 for evolution, dt = 1e-4.  Each criterion prints one PASS line as
it completes (run with -s to watch).  Grading of the radial mesh and the
time-step schedule inside the |t| ~ eta neck are per-run choices of the
evolution module; dt-halving Richardson checks run at coarser dt so the
O(dt^2) term dominates the fixed spatial floor, and the S(t) Richardson
uses the bulk-region norm (the truncated far tail's quadratic phase
decoheres at a genuine 2/3-order rate that is a truncation artifact, not
time-integration error).
"""

import numpy as np
import pytest

from conftest import random_bump
from csslab import gauge
from csslab.envelopes import TimeSeries, env_properties_check, t_maximal
from csslab.evolve import evolve_css, evolve_modulated_exact, evolve_zcss
from csslab.grid import RadialField, inner_r, make_grid, norm_l2
from csslab.linops import (coercivity_estimate, d_plus, l_w, l_w_star,
                           lcal_apply, make_context)
from csslab.modulation import (hypothesis_H_check, instability_experiment,
                               track_from_samples)
from csslab.profiles import (build_bundle, modulated_exact_field, psi_norm_sq,
                             q_eta_solve, q_profile, rho_solve, rq_norm_sq,
                             s_explicit)

REPORT = []


def record(name, value, bound, passed=None):
    ok = bool(value <= bound) if passed is None else bool(passed)
    REPORT.append((name, value, bound, ok))
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {value:.3e} (bound {bound:.3e})")
    assert ok, f"{name}: {value} exceeds {bound}"


@pytest.fixture(scope="module")
def profile_grids():
    return {m: make_grid(m=m, n=4096, r_max=1e3) for m in (1, 2, 3)}


@pytest.fixture(scope="module")
def bundle1(profile_grids):
    return build_bundle(profile_grids[1], eta=0.0)


# -- criterion 1: closed-form constants, m in {1, 2, 3} ------------------------

def test_criterion_1_closed_form_constants(profile_grids):
    for m, g in profile_grids.items():
        q = q_profile(g)
        mass_target = 8 * np.pi * (m + 1)
        record(f"c1.mass[m={m}]", abs(gauge.mass(q) - mass_target) / mass_target, 1e-8)

        dq = g.deriv_values(q.values)
        kin = float(np.dot(g.weights, np.abs(dq) ** 2))
        record(f"c1.energy[m={m}]", abs(gauge.energy(q)), 1e-8 * kin)

        at = gauge.a_theta(q)
        tail = max(4 * (m + 1) * g.r_max ** (-2 * m - 2), 5e-10)
        record(f"c1.atheta_tail[m={m}]", abs(at[-1] + 2 * (m + 1)), tail)

        a0 = gauge.a_zero(q, at)
        half_q2 = 0.5 * np.abs(q.values) ** 2
        record(f"c1.azero[m={m}]",
               float(np.max(np.abs(a0 - half_q2)) / np.max(half_q2)), 1e-6)


# -- criterion 2: self-dual linear algebra --------------------------------------

def test_criterion_2_selfdual_algebra(bundle1, profile_grids):
    g = profile_grids[1]
    q, lam_q, psi, rho = bundle1.Q, bundle1.LambdaQ, bundle1.psi, bundle1.rho
    iq = q.like(1j * q.values)
    ctx = make_context(q, self_dual=True)
    ir2q = q.like(1j * g.nodes**2 * q.values)

    record("c2.d_plus_q", norm_l2(d_plus(q, q)) / norm_l2(q), 1e-6)
    record("c2.l_lambda_q", norm_l2(l_w(q, lam_q)) / norm_l2(lam_q), 1e-6)
    record("c2.l_iq", norm_l2(l_w(q, iq)) / norm_l2(q), 1e-6)
    record("c2.lstar_psi", norm_l2(l_w_star(q, psi) - q) / norm_l2(psi), 1e-6)
    record("c2.l_rho", norm_l2(l_w(q, rho) - psi) / norm_l2(rho), 1e-6)
    record("c2.lcal_ir2q",
           norm_l2(lcal_apply(ctx, ir2q) + lam_q.like(4j * lam_q.values))
           / norm_l2(ir2q), 1e-6)
    record("c2.lcal_rho", norm_l2(lcal_apply(ctx, rho) - q) / norm_l2(rho), 1e-6)


# -- criterion 3: rho nondegeneracy ---------------------------------------------

def test_criterion_3_rho_nondegeneracy(bundle1):
    target = psi_norm_sq(1)
    assert abs(target - np.pi**2 / 2) < 1e-12
    record("c3.rho_q_inner",
           abs(inner_r(bundle1.rho, bundle1.Q) - target) / target, 1e-5)


# -- criterion 4: rho asymptotics ------------------------------------------------

def test_criterion_4_rho_asymptotics(bundle1, profile_grids):
    g = profile_grids[1]
    from csslab.profiles import q_closed_form
    rhot = bundle1.rho.values.real / q_closed_form(g.nodes, 1)
    mask = (g.nodes >= 10) & (g.nodes <= 100)
    a = np.vstack([g.nodes[mask] ** 2, np.log(g.nodes[mask]),
                   np.ones(mask.sum())]).T
    c2, clog, _ = np.linalg.lstsq(a, rhot[mask], rcond=None)[0]
    record("c4.lead_coeff", abs(c2 - 0.125) / 0.125, 0.01)
    target_log = -psi_norm_sq(1) / (2 * np.pi)
    record("c4.log_coeff", abs(clog - target_log) / abs(target_log), 0.05)


# -- criterion 5: the deformed profile family ------------------------------------

def test_criterion_5_deformed_profile(profile_grids, bundle1):
    g = profile_grids[1]
    sol = q_eta_solve(g, 0.01)
    qe = sol.q_eta
    res = l_w_star(qe, d_plus(qe, qe)) + qe.like(
        (sol.eta * sol.theta_eta + sol.eta**2 * g.nodes**2 / 4) * qe.values)
    record("c5.second_order_residual", norm_l2(res) / norm_l2(qe), 1e-6)

    th = {e: q_eta_solve(g, e).theta_eta for e in (1e-3, 2e-3, 4e-3)}
    d1 = (th[2e-3] - th[1e-3]) / 1e-3
    d2 = (th[4e-3] - th[2e-3]) / 2e-3
    slope = 2 * d1 - d2
    record("c5.theta_slope", abs(slope + np.pi / 2) / (np.pi / 2), 0.02)

    eta0 = 0.02
    sols = {e: q_eta_solve(g, e) for e in (eta0, eta0 / 2)}
    dom = g.nodes <= (10.0 * eta0) ** -0.5
    w = g.weights[dom]

    def pert(e):
        diff = sols[e].q_eta.values.real - bundle1.Q.values.real \
            + e * 2 * bundle1.rho.values.real
        return np.sqrt(np.dot(w, diff[dom] ** 2))

    ratio = pert(eta0) / pert(eta0 / 2)
    record("c5.perturbation_halving", abs(ratio - 4.0), 0.8)


# -- criterion 6: coercivity ------------------------------------------------------

def test_criterion_6_coercivity():
    g = make_grid(m=1, n=768, r_max=200.0)
    rep = coercivity_estimate(g)
    record("c6.near_kernel_dim", float(abs(rep.near_kernel_dim - 2)), 0.5,
           passed=(rep.near_kernel_dim == 2))
    head = np.sort(rep.unconstrained_head)
    record("c6.kernel_quotients", float(head[1]), 1e-6)
    record("c6.constrained_min", 1e-3 / rep.c_est, 1.0,
           passed=(rep.c_est >= 1e-3))


# -- criterion 7: evolution fidelity ----------------------------------------------

@pytest.mark.slow
def test_criterion_7_static_drift():
    g = make_grid(m=1, n=4096, r_max=100.0)
    q = q_profile(g)
    out = evolve_css(q, 0.0, 1.0, 1e-4, monitor_every=500)
    record("c7.static_drift", norm_l2(out.final.u - q), 1e-6)


@pytest.mark.slow
def test_criterion_7_s_tracking():
    g = make_grid(m=1, n=4096, r_max=100.0, r_uniform=8.0)

    def s_run(dt):
        out = evolve_css(s_explicit(-1.0, g), -1.0, -0.5, dt,
                         monitor_every=10**9)
        ref = s_explicit(-0.5, g).values
        d = out.final.u.values - ref
        mask = g.nodes <= 10.0
        glob = np.sqrt(np.dot(g.weights, np.abs(d) ** 2)) \
            / np.sqrt(np.dot(g.weights, np.abs(ref) ** 2))
        loc = np.sqrt(np.dot(g.weights[mask], np.abs(d[mask]) ** 2)) \
            / np.sqrt(np.dot(g.weights[mask], np.abs(ref[mask]) ** 2))
        return glob, loc

    glob_ref, _ = s_run(1e-4)
    record("c7.s_tracking", glob_ref, 1e-3)
    # Richardson on the bulk norm at coarser dt (see module docstring)
    _, e8 = s_run(8e-4)
    _, e4 = s_run(4e-4)
    record("c7.s_dt_halving", abs(e8 / e4 - 4.0), 1.2)

    mass = evolve_css(s_explicit(-1.0, g), -1.0, -0.9, 1e-3,
                      monitor_every=10).monitor_rows["mass"]
    record("c7.mass_conservation_s", float(np.max(np.abs(mass - mass[0])) / mass[0]),
           1e-10)


@pytest.mark.slow
def test_criterion_7_modulated_tracking():
    pg = make_grid(m=1, n=4096, r_max=1e3)
    sol = q_eta_solve(pg, 0.1, eta_max=0.15)
    g = make_grid(m=1, n=4096, r_max=100.0, r_uniform=0.5)
    rep = evolve_modulated_exact(sol, -0.3, 0.3, g, 1e-4, n_checks=5,
                                 monitor_every=2000)
    record("c7.modulated_tracking", rep.max_rel_error, 1e-3)


# -- criterion 8: conservation and virial identities --------------------------------

@pytest.mark.slow
def test_criterion_8_conservation_virial():
    g = make_grid(m=1, n=4096, r_max=100.0)
    r = g.nodes
    z0 = RadialField(g, 0.5 * r * np.exp(-((r - 2.0) ** 2)) + 0j)

    out = evolve_css(z0, 0.0, 0.2, 1e-3, monitor_every=5)
    mass = out.monitor_rows["mass"]
    record("c8.mass_exact", float(np.max(np.abs(mass - mass[0])) / mass[0]), 1e-10)
    record("c8.energy_positivity", -float(np.min(out.monitor_rows["energy"])), 1e-10)

    def virial_residuals(dt):
        o = evolve_css(z0, 0.0, 0.2, dt, monitor_every=1)
        t = o.times
        wm = o.monitor_rows["weighted_mass"]
        ph = o.monitor_rows["phi"]
        e = o.monitor_rows["energy"]
        dwm = (wm[2:] - wm[:-2]) / (t[2:] - t[:-2])
        dph = (ph[2:] - ph[:-2]) / (t[2:] - t[:-2])
        return (np.max(np.abs(dwm - 8 * ph[1:-1])),
                np.max(np.abs(dph - 2 * e[1:-1])))

    a1, a2 = virial_residuals(4e-3)
    b1, b2 = virial_residuals(2e-3)
    record("c8.virial_wmass_ratio", abs(a1 / b1 - 4.0), 1.2)
    record("c8.virial_phi_ratio", abs(a2 / b2 - 4.0), 1.2)


# -- criterion 9: modified-evolution equivalence --------------------------------------

@pytest.mark.slow
def test_criterion_9_zcss_equivalence():
    g = make_grid(m=1, n=4096, r_max=100.0)
    r = g.nodes
    z0 = RadialField(g, 0.01 * r**3 * np.exp(-((r - 1.5) ** 2)) + 0j)
    ra = evolve_zcss(z0, 0.0, 1.0, 1e-4, mode="tilde", monitor_every=1000)
    rb = evolve_zcss(z0, 0.0, 1.0, 1e-4, mode="potential", monitor_every=1000)
    diff = np.sqrt(np.dot(g.weights,
                          np.abs(ra.final.u.values - rb.final.u.values) ** 2))
    record("c9.zcss_cross_mode", diff / norm_l2(rb.final.u), 1e-6)


# -- criterion 10: rotational instability ----------------------------------------------

def test_criterion_10_closed_form_path():
    # z* = 0: the decomposition pipeline on the exact family must match
    # 2 theta_eta arctan(tau/eta) at arithmetic accuracy
    pg = make_grid(m=1, n=4096, r_max=1e3)
    eta = 0.04
    sol = q_eta_solve(pg, eta)
    g = make_grid(m=1, n=4096, r_max=100.0, r_uniform=0.3)
    xi = np.linspace(0, np.arcsinh(0.2 / eta), 17)
    ts = eta * np.sinh(xi[1:])
    trp = track_from_samples(
        [(t, modulated_exact_field(sol, t, g), None) for t in ts],
        eta, sol, (0.0, eta, 0.0))
    trm = track_from_samples(
        [(-t, modulated_exact_field(sol, -t, g), None) for t in ts],
        eta, sol, (0.0, eta, 0.0))
    dg = trp.gamma[-1] - trm.gamma[-1]
    closed = 2 * sol.theta_eta * np.arctan(0.2 / eta)
    record("c10.closed_form_delta_gamma", abs(dg - closed), 1e-6)


@pytest.mark.slow
def test_criterion_10_pde_trend():
    m = 1
    pg = make_grid(m=m, n=4096, r_max=1e3)
    g = make_grid(m=m, n=4096, r_max=100.0, r_uniform=0.1)
    raw = RadialField(g, g.nodes ** (m + 2) * np.exp(-g.nodes**2 / 2) + 0j)
    nrm = hypothesis_H_check(raw, alpha_star=np.inf)["surrogate_norm"]
    z_star = raw * (1e-2 / nrm)
    rep = instability_experiment(g, [0.04, 0.02, 0.01], z_star, 0.2, 1e-4,
                                 profile_grid=pg, n_samples=17)
    dg = rep.delta_gamma
    target = 2 * np.pi
    print("    delta_gamma:", [f"{x:.4f}" for x in dg],
          "closed:", [f"{x:.4f}" for x in rep.delta_gamma_closed])
    record("c10.monotone_trend", float(dg[0]), float(dg[1]),
           passed=(dg[0] < dg[1] < dg[2] <= target * 1.05))
    record("c10.eta001_within_10pct", abs(dg[2] - target) / target, 0.10)


# -- criterion 11: duality relations ------------------------------------------------

def test_criterion_11_duality_relations(profile_grids):
    g = profile_grids[1]
    rng = np.random.default_rng(42)
    winf = gauge.virial_weight(g, np.inf)
    worst = 0.0
    rr = lambda f: np.sqrt(np.dot(g.weights, np.abs(f.values / g.nodes) ** 2))
    for _ in range(100):
        ps = [random_bump(g, rng) for _ in range(6)]
        n4 = rr(ps[0]) * rr(ps[1]) * norm_l2(ps[2]) * norm_l2(ps[3]) + 1e-30
        n40 = np.prod([norm_l2(p) for p in ps[:4]]) + 1e-30
        n6 = rr(ps[0]) * rr(ps[1]) * np.prod([norm_l2(p) for p in ps[2:]]) + 1e-30
        worst = max(worst, abs(
            inner_r(gauge.n3_0(*ps[:3]), ps[3]) + gauge.m4_0(winf, *ps[:4])) / n40)
        worst = max(worst, abs(
            inner_r(gauge.n3_1(*ps[:3]), ps[3]) + g.m * gauge.m4_1(winf, *ps[:4])) / n4)
        worst = max(worst, abs(
            inner_r(gauge.n3_2(*ps[:3]), ps[3])
            + g.m * gauge.m4_1(winf, ps[2], ps[3], ps[0], ps[1])) / n4)
        worst = max(worst, abs(
            inner_r(gauge.n5_1(*ps[:5]), ps[5]) - 0.25 * gauge.m6(winf, *ps)) / n6)
        worst = max(worst, abs(
            inner_r(gauge.n5_2(*ps[:5]), ps[5])
            - 0.5 * gauge.m6(winf, ps[0], ps[1], ps[4], ps[5], ps[2], ps[3])) / n6)
    record("c11.duality_worst_of_500", worst, 1e-8)


# -- criterion 12: time maximal function suite ----------------------------------------

def test_criterion_12_envelope_suite():
    def series(per_block=6, decades=25, q=1.25):
        j = np.arange(decades * per_block + 1)
        t = np.sort(-(2.0 ** (-j / per_block)))
        return TimeSeries(t, np.abs(t) ** q)

    ser = series()
    res = t_maximal(ser, float(ser.times[0]), 0.0, 1.25)
    idx = int(np.argmin(np.abs(ser.times - ser.times[0])))
    record("c12.domination", float(ser.values[idx] - res.value), 1e-12)

    consts = {}
    for eta in (0.0, 0.01, 0.1):
        rep = env_properties_check(ser, eta=eta, s=1.25, p=1.0, q=-1.0)
        assert rep["domination_ok"]
        consts[eta] = (rep["idempotence_high"], rep["integral_constant"])
        record(f"c12.idempotence[eta={eta}]", rep["idempotence_high"], 10.0)
        record(f"c12.integral_bound[eta={eta}]", rep["integral_constant"], 10.0)
    spread = max(v[0] for v in consts.values()) / min(v[0] for v in consts.values())
    record("c12.eta_uniformity", spread, 3.0)


def test_zzz_print_summary():
    print("\n==== acceptance summary ====")
    for name, value, bound, ok in REPORT:
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}: {value:.3e} <= {bound:.3e}")
    n_pass = sum(1 for r in REPORT if r[3])
    print(f"  {n_pass}/{len(REPORT)} criteria checks passed")
    assert all(r[3] for r in REPORT)
