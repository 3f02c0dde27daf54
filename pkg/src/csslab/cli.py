"""Batch front-end: subcommands, JSON configs, deterministic manifests.

Exit codes: 0 pass, 1 validation error, 2 numerical failure (a residual
exceeded its tolerance), 3 runtime fault.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .envelopes import TimeSeries, env_properties_check, t_maximal
from .errors import CsslabError
from .evolve import evolve_css, evolve_modulated_exact, evolve_zcss, monitors
from .gauge import a_theta, a_zero, energy, mass, virial_weight
from .grid import (RadialField, inner_r, lambda_op, load_field_csv, make_grid,
                   norm_l2, save_field_csv, save_grid_json)
from .linops import (coercivity_estimate, conjugation_check, d_plus, l_w,
                     l_w_star, lcal_apply, make_context)
from .modulation import instability_experiment
from .profiles import (build_bundle, psi_norm_sq, q_eta_solve, q_profile,
                       s_explicit)

_F = lambda x: format(float(x), ".17g")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n")


def _manifest(outdir: Path, config: dict, t_start: float, outputs: list[str]) -> None:
    digest = hashlib.sha256(
        json.dumps(config, sort_keys=True, default=float).encode()).hexdigest()[:16]
    _write_json(outdir / "manifest.json", {
        "config": config,
        "config_digest": digest,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python": platform.python_version(),
        "wall_time_s": time.time() - t_start,
        "outputs": sorted(outputs),
    })


def _grid_from(cfg: dict):
    return make_grid(m=cfg["m"], n=cfg["grid_n"], r_max=cfg["r_max"],
                     r_uniform=cfg.get("r_uniform", 2.0))


def _save_profile_csvs(outdir: Path, bundle, outputs: list[str]) -> None:
    fields = {
        "q.csv": bundle.Q, "lambda_q.csv": bundle.LambdaQ,
        "psi.csv": bundle.psi, "rho.csv": bundle.rho,
        "q_eta.csv": bundle.q_eta.q_eta, "p_eta.csv": bundle.q_eta.p_eta,
    }
    for name, f in fields.items():
        save_field_csv(f, str(outdir / name))
        outputs.append(name)
    save_grid_json(bundle.grid, str(outdir / "grid.json"))
    outputs.append("grid.json")


def cmd_profiles(cfg: dict, outdir: Path) -> int:
    grid = _grid_from(cfg)
    bundle = build_bundle(grid, eta=cfg["eta"], B=cfg.get("B", 10.0))
    outputs: list[str] = []
    _save_profile_csvs(outdir, bundle, outputs)

    ctx = make_context(bundle.Q, self_dual=True)
    res_rho = norm_l2(l_w(bundle.Q, bundle.rho) - bundle.psi) / norm_l2(bundle.rho)
    res_psi = norm_l2(l_w_star(bundle.Q, bundle.psi) - bundle.Q) / norm_l2(bundle.psi)
    summary = {
        "m": grid.m,
        "eta": cfg["eta"],
        "mass_q": mass(bundle.Q),
        "mass_q_expected": 8 * np.pi * (grid.m + 1),
        "mass_q_eta": mass(bundle.q_eta.q_eta),
        "theta_eta": bundle.theta_eta,
        "rho_q_inner": inner_r(bundle.rho, bundle.Q),
        "rho_q_inner_expected": psi_norm_sq(grid.m),
        "residual_l_rho_minus_psi": res_rho,
        "residual_lstar_psi_minus_q": res_psi,
        "energy_q": energy(bundle.Q),
    }
    _write_json(outdir / "summary.json", summary)
    outputs.append("summary.json")
    _manifest(outdir, cfg, cfg["_t0"], outputs)
    tol = cfg.get("tol", 1e-6)
    return 0 if max(res_rho, res_psi) <= tol else 2


def cmd_verify(cfg: dict, outdir: Path) -> int:
    grid = _grid_from(cfg)
    bundle = build_bundle(grid, eta=0.0)
    q, lam_q, psi, rho = bundle.Q, bundle.LambdaQ, bundle.psi, bundle.rho
    iq = q.like(1j * q.values)
    ctx = make_context(q, self_dual=True)
    nq = norm_l2(q)
    m = grid.m

    ir2q = q.like(1j * grid.nodes**2 * q.values)
    entries = {
        "d_plus_q": norm_l2(d_plus(q, q)) / nq,
        "l_q_lambda_q": norm_l2(l_w(q, lam_q)) / norm_l2(lam_q),
        "l_q_iq": norm_l2(l_w(q, iq)) / nq,
        "lstar_psi_minus_q": norm_l2(l_w_star(q, psi) - q) / norm_l2(psi),
        "l_rho_minus_psi": norm_l2(l_w(q, rho) - psi) / norm_l2(rho),
        "lcal_ir2q_plus_4i_lam_q":
            norm_l2(lcal_apply(ctx, ir2q) + lam_q.like(4j * lam_q.values))
            / norm_l2(ir2q),
        "lcal_rho_minus_q": norm_l2(lcal_apply(ctx, rho) - q) / norm_l2(rho),
        "mass_q_rel": abs(mass(q) - 8 * np.pi * (m + 1)) / (8 * np.pi * (m + 1)),
        "energy_q": abs(energy(q)),
        "a0_q_minus_half_q2":
            float(np.max(np.abs(a_zero(q) - 0.5 * np.abs(q.values) ** 2))
                  / np.max(0.5 * np.abs(q.values) ** 2)),
    }
    # conjugation identities need the b-phase resolved out to the edge:
    # run them on a truncated companion grid, normalized by the profile norm
    cgrid = make_grid(m=m, n=cfg["grid_n"], r_max=min(cfg["r_max"], 40.0))
    cq = q_profile(cgrid)
    entries.update({f"conj_{k}": v / norm_l2(cq) for k, v in
                    conjugation_check(cfg.get("b", 0.1), cq).items()})

    tol = cfg.get("tol", 1e-6)
    ledger = {k: {"residual": v, "tolerance": tol, "pass": bool(v <= tol)}
              for k, v in entries.items()}
    ok = all(e["pass"] for e in ledger.values())
    _write_json(outdir / "summary.json", {"identities": ledger, "all_pass": ok})
    _manifest(outdir, cfg, cfg["_t0"], ["summary.json"])
    return 0 if ok else 2


def _initial_data(cfg: dict, grid):
    kind = cfg["data"]
    if kind == "q":
        return q_profile(grid), grid.m
    if kind == "s":
        return s_explicit(cfg["t0"], grid), grid.m
    if kind == "qeta":
        from .profiles import modulated_exact_field
        sol = q_eta_solve(make_grid(grid.m, cfg.get("profile_n", 4096),
                                    cfg.get("profile_rmax", 1e3)), cfg["eta"])
        return modulated_exact_field(sol, cfg["t0"], grid), grid.m
    if kind == "zbump":
        r = grid.nodes
        amp = cfg.get("zstar_amp", 1e-2)
        vals = amp * r ** (grid.m + 2) * np.exp(-(r**2) / 2.0)
        return RadialField(grid, vals + 0j), grid.m
    if kind == "file":
        return load_field_csv(cfg["data_file"], grid=grid), grid.m
    raise CsslabError(f"unknown data kind {kind!r}")


def cmd_evolve(cfg: dict, outdir: Path) -> int:
    grid = _grid_from(cfg)
    u0, index = _initial_data(cfg, grid)
    snap = tuple(cfg.get("snapshot_times", ()))
    res = evolve_css(u0, cfg["t0"], cfg["t1"], cfg["dt"],
                     snapshot_times=snap, picard_tol=cfg.get("picard_tol", 1e-12))

    outputs = []
    csv = outdir / "monitors.csv"
    keys = ["mass", "energy", "phi", "weighted_mass", "flux_rmax"]
    with open(csv, "w") as fh:
        fh.write("t," + ",".join(keys) + "\n")
        for i, t in enumerate(res.times):
            fh.write(_F(t) + "," + ",".join(_F(res.monitor_rows[k][i]) for k in keys) + "\n")
    outputs.append("monitors.csv")
    for ts, fld in res.snapshots.items():
        name = f"snapshot_{ts:+.6f}.csv".replace("+", "p").replace("-", "m")
        save_field_csv(fld, str(outdir / name))
        outputs.append(name)
    save_field_csv(res.final.u, str(outdir / "final.csv"))
    outputs.append("final.csv")

    m0 = res.monitor_rows["mass"][0]
    mass_drift = float(np.max(np.abs(res.monitor_rows["mass"] - m0)) / m0)
    _write_json(outdir / "summary.json", {
        "mass_rel_drift": mass_drift,
        "energy_initial": res.monitor_rows["energy"][0],
        "energy_final": res.monitor_rows["energy"][-1],
        "flux_warned": res.flux_warned,
    })
    outputs.append("summary.json")
    _manifest(outdir, cfg, cfg["_t0"], outputs)
    return 0 if mass_drift <= cfg.get("mass_tol", 1e-10) else 2


def cmd_instability(cfg: dict, outdir: Path) -> int:
    grid = _grid_from(cfg)
    zspec = cfg.get("zstar", "none")
    if zspec == "none":
        z_star = None
    elif zspec.startswith("bump:"):
        amp = float(zspec.split(":", 1)[1])
        r = grid.nodes
        z_star = RadialField(grid, amp * r ** (grid.m + 2) * np.exp(-(r**2) / 2.0) + 0j)
    else:
        z_star = load_field_csv(zspec, grid=grid)

    pgrid = make_grid(grid.m, cfg.get("profile_n", 4096), cfg.get("profile_rmax", 1e3))
    rep = instability_experiment(
        grid, cfg["eta_list"], z_star, cfg["t_span"], cfg["dt"],
        profile_grid=pgrid, n_samples=cfg.get("n_samples", 17))

    outputs = []
    for eta, halves in rep.tracks.items():
        for sgn, tag in ((1.0, "fwd"), (-1.0, "bwd")):
            arr = halves[sgn].arrays()
            name = f"track_eta{eta:g}_{tag}.csv"
            with open(outdir / name, "w") as fh:
                cols = list(arr)
                fh.write(",".join(cols) + "\n")
                for i in range(arr["t"].size):
                    fh.write(",".join(_F(arr[c][i]) for c in cols) + "\n")
            outputs.append(name)

    deltas = dict(zip(map(str, rep.etas), rep.delta_gamma))
    summary = {
        "m": rep.m,
        "tau": rep.tau,
        "target": rep.target,
        "delta_gamma": deltas,
        "delta_gamma_closed": dict(zip(map(str, rep.etas), rep.delta_gamma_closed)),
        "lambda_dev": dict(zip(map(str, rep.etas), rep.lambda_dev)),
        "b_dev": dict(zip(map(str, rep.etas), rep.b_dev)),
        "extrapolated_limit": rep.delta_gamma[-1] if rep.delta_gamma else None,
    }
    _write_json(outdir / "summary.json", summary)
    outputs.append("summary.json")
    _manifest(outdir, cfg, cfg["_t0"], outputs)
    return 0


def cmd_envcheck(cfg: dict, outdir: Path) -> int:
    data = np.genfromtxt(cfg["series_csv"], delimiter=",", skip_header=1)
    series = TimeSeries(data[:, 0], data[:, 1])
    eta, s = cfg.get("eta", 0.0), cfg.get("s", 0.0)
    tm = t_maximal(series, float(series.times[0]), eta, s)
    rep = env_properties_check(series, eta, s, p=cfg.get("p", 1.0),
                               q=cfg.get("q", 0.0))
    payload = {"t_maximal_at_t0": tm.value, "n_blocks": tm.n_blocks,
               "truncated": tm.truncated, "properties": rep}
    _write_json(outdir / "summary.json", payload)
    _manifest(outdir, cfg, cfg["_t0"], ["summary.json"])
    return 0 if rep["domination_ok"] else 2


def cmd_report(cfg: dict, outdir: Path) -> int:
    """Aggregate a run directory: track CSVs -> law residuals and envelopes."""
    src = Path(cfg["run_dir"])
    tracks = sorted(src.glob("track_*.csv"))
    if not tracks:
        raise CsslabError(f"no track CSVs under {src}")
    report = {}
    for tr in tracks:
        data = np.genfromtxt(tr, delimiter=",", names=True)
        t, b, lam, gam = data["t"], data["b"], data["lam"], data["gamma"]
        entry = {
            "n_samples": int(t.size),
            "gamma_last": float(gam[-1]),
            "lambda_dev_max": float(np.max(np.abs(lam / np.hypot(t, cfg.get("eta", 0.0)) - 1.0))),
        }
        eps = data["eps_h1"]
        neg = t < 0
        if np.count_nonzero(neg) >= 4:
            order = np.argsort(t[neg])
            series = TimeSeries(t[neg][order], eps[neg][order])
            entry["eps_h1_envelope_at_t0"] = t_maximal(
                series, float(series.times[0]), cfg.get("eta", 0.0), 0.0).value
        report[tr.name] = entry
    _write_json(outdir / "summary.json", report)
    _manifest(outdir, cfg, cfg["_t0"], ["summary.json"])
    return 0


_HANDLERS = {
    "profiles": cmd_profiles,
    "verify": cmd_verify,
    "evolve": cmd_evolve,
    "instability": cmd_instability,
    "envcheck": cmd_envcheck,
    "report": cmd_report,
}

_DEFAULTS = {
    "m": 1, "grid_n": 4096, "r_max": 1e3, "r_uniform": 2.0, "eta": 0.0,
    "B": 10.0, "tol": 1e-6, "seed": 0, "dt": 1e-4,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="csslab",
        description="numerical laboratory for the equivariant self-dual "
                    "gauged Schrodinger flow")
    sub = ap.add_subparsers(dest="command")
    specs = {
        "profiles": ["--m", "--eta", "--grid-n", "--rmax", "--B"],
        "verify": ["--m", "--grid-n", "--rmax", "--tol", "--b"],
        "evolve": ["--m", "--grid-n", "--rmax", "--data", "--eta",
                   "--t0", "--t1", "--dt", "--data-file"],
        "instability": ["--m", "--grid-n", "--rmax", "--eta-list",
                        "--zstar", "--tspan", "--dt"],
        "envcheck": ["--series-csv", "--eta", "--s", "--p", "--q"],
        "report": ["--run-dir", "--eta"],
    }
    for name, flags in specs.items():
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="JSON config; flags override its entries")
        p.add_argument("--out", type=str, required=True)
        for fl in flags:
            p.add_argument(fl, type=str, default=None)
    return ap


_KEYMAP = {"grid_n": "grid_n", "rmax": "r_max", "eta_list": "eta_list",
           "tspan": "t_span", "series_csv": "series_csv", "run_dir": "run_dir",
           "data_file": "data_file"}
_FLOAT_KEYS = {"eta", "tol", "b", "t0", "t1", "dt", "r_max", "B", "s", "p",
               "q", "t_span", "r_uniform"}
_INT_KEYS = {"m", "grid_n", "seed", "n_samples"}


def _coerce(key: str, val: str):
    if key in _INT_KEYS:
        return int(val)
    if key in _FLOAT_KEYS:
        return float(val)
    if key == "eta_list":
        return [float(x) for x in val.split(",")]
    return val


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    if ns.command is None:
        ap.print_usage(sys.stderr)
        return 1
    cfg = dict(_DEFAULTS)
    try:
        if ns.config:
            cfg.update(json.loads(Path(ns.config).read_text()))
        for key, val in vars(ns).items():
            if key in ("command", "config", "out") or val is None:
                continue
            k = _KEYMAP.get(key, key)
            cfg[k] = _coerce(k, val)
        if cfg.get("m", 1) < 1:
            raise CsslabError("m must be >= 1")
        for tkey in ("tol", "dt"):
            if tkey in cfg and float(cfg[tkey]) <= 0:
                raise CsslabError(f"{tkey} must be positive")
        if float(cfg.get("eta", 0.0)) < 0:
            raise CsslabError("eta must be >= 0")
        outdir = Path(ns.out)
        outdir.mkdir(parents=True, exist_ok=True)
        cfg["_t0"] = time.time()
        cfg["subcommand"] = ns.command
        code = _HANDLERS[ns.command]({k: v for k, v in cfg.items()}, outdir)
        return code
    except (CsslabError, KeyError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"csslab: validation error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime fault boundary
        print(f"csslab: runtime fault: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
