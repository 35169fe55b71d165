"""Experiment runners shared by the command line and the acceptance suite.

Each runner takes a validated configuration dictionary and returns an
:class:`ExperimentResult` holding CSV tables, plot series, a JSON summary and
named pass/fail checks.
"""

import json
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import sphere_s2 as s2
from .fields import (
    SpectralField,
    cosine_mode,
    dealias_kmax,
    flat_index,
    half_lattice,
    lattice_box,
    sine_mode,
    sobolev_norm,
    sobolev_weights,
    white_noise_coeffs,
)
from .flow_oracle import flow_cloud, uniform_cloud, uniformity_test, weak_pairing
from .noise import NoiseSpec, cutoff_family, diagonal_covariance, mollified_family, mollified_tail_fraction
from .rng import derive_seed, stream
from .solver import (
    SolverConfig,
    deterministic_error_w,
    heat_multiplier,
    heat_semigroup_apply,
    run_she_ensemble,
    run_transport_ensemble,
    simulate_transport,
    transport_stream_seed,
)
from .stats import (
    chaos_pairing,
    increment_moment_curve,
    mean_and_stderr,
    rate_fit,
    replica_seeds,
    self_comparison_band,
    she_law_compare,
    weak_bound_check,
)

KINDS = ("simulate", "sweep-rate", "she-compare", "flow-check", "chaos-pair", "sphere-check", "leray-diagonal")


@dataclass
class ExperimentResult:
    kind: str
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # file stem -> (header, rows)
    plots: dict = field(default_factory=dict)  # name -> chart description
    checks: dict = field(default_factory=dict)  # name -> {"passed", "detail"}
    trajectories: list = field(default_factory=list)  # (name, Trajectory, NoiseSpec)

    def check(self, name, passed, detail):
        self.checks[name] = {"passed": bool(passed), "detail": str(detail)}

    @property
    def passed(self):
        return all(c["passed"] for c in self.checks.values())


def _series(label, x, y, yerr=None):
    return (label, [float(v) for v in x], [float(v) for v in y], None if yerr is None else [float(v) for v in yerr])


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def make_noise(family, dim, M):
    name = family["name"]
    if name == "cutoff":
        return cutoff_family(dim, int(family["N_cut"]), M, bool(family.get("normalize", True)))
    if name == "mollified":
        return mollified_family(dim, float(family["h"]), M)
    if name == "none":
        return NoiseSpec(dim, M, np.zeros((0, dim), dtype=np.int64), np.zeros(0), 0.0, "none")
    raise ValueError(f"unknown noise family {name!r}")


def make_initial(initial, dim, M, rng=None):
    """Deterministic trigonometric polynomial or truncated white noise."""
    if initial["type"] == "white_noise":
        return SpectralField(white_noise_coeffs(dim, M, rng))
    total = np.zeros((M,) * dim, dtype=np.complex128)
    for term in initial["terms"]:
        make = cosine_mode if term.get("kind", "cos") == "cos" else sine_mode
        total = total + make(dim, M, tuple(term["k"]), float(term.get("amplitude", 1.0))).coeffs
    return SpectralField(total)


def _steps(T, dt):
    n = max(1, int(np.ceil(T / dt - 1e-9)))
    return T / n, n


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def run_simulate(cfg, threads=1):
    geo, sol = cfg["geometry"], cfg["solver"]
    d, M = int(geo["d"]), int(geo["M"])
    spec = make_noise(cfg["family"], d, M)
    R = int(cfg.get("replicas", 1))
    T = float(sol["T"])
    dt, n = _steps(T, float(sol["dt"]))
    n_snap = int(sol.get("snapshots", 10))
    snap_steps = sorted({int(round(i * n / n_snap)) for i in range(n_snap + 1)})
    times = tuple(s * dt for s in snap_steps)
    bg = sol.get("background_diffusivity")
    config = SolverConfig(dt, T, sol.get("scheme", "frozen_flow"), M, int(cfg["seed"]), times,
                          None if bg is None else tuple(map(tuple, bg)))
    white = cfg["initial"]["type"] == "white_noise"
    seeds = [transport_stream_seed(cfg["seed"], r) for r in range(R)]
    if white:
        init = np.stack([white_noise_coeffs(d, M, stream(derive_seed(cfg["seed"], "initial", r))) for r in range(R)])
        u0 = SpectralField(init[0])
    else:
        u0 = make_initial(cfg["initial"], d, M)
        init = u0
    low = half_lattice(d, 4)
    low = low[(low**2).sum(axis=1) <= 16]
    low_idx = flat_index(low, M)

    def probe(c):
        l2 = np.sqrt(np.sum(np.abs(c) ** 2, axis=tuple(range(1, d + 1))))
        mean = c[(slice(None),) + (0,) * d].real
        modes = c[(slice(None),) + low_idx]
        return np.concatenate([l2[:, None], mean[:, None], modes], axis=1)

    t0 = time.perf_counter()
    out = run_transport_ensemble(init, spec, config, seeds, probe=probe, threads=threads)
    wall = time.perf_counter() - t0
    vals = out.values  # (R, S, 2 + n_low)
    l2 = vals[:, :, 0].real
    mean = vals[:, :, 1].real
    res = ExperimentResult("simulate")
    rows = [(r, float(t), float(l2[r, i]), float(mean[r, i])) for r in range(R) for i, t in enumerate(times)]
    res.tables["timeseries"] = (["replica", "time", "l2_norm", "mean"], rows)
    drift = np.abs(l2[:, -1] - l2[:, 0]) / l2[:, 0]
    res.summary.update({"replicas": R, "dt": dt, "steps": n, "wall_time": wall, "spec": spec.to_json(),
                        "l2_relative_drift": drift.tolist()})
    res.check("mean_conserved", np.max(np.abs(mean - mean[:, :1])) <= 1e-12 * max(1.0, np.abs(mean).max()),
              f"max mean change {np.max(np.abs(mean - mean[:, :1])):.2e}")
    A_noise = diagonal_covariance(spec).A if spec.n_modes or spec.include_harmonic else np.zeros((d, d))
    if spec.n_modes == 0 and not spec.include_harmonic:
        A_bg = np.zeros((d, d)) if bg is None else np.asarray(bg, dtype=np.float64)
        exact = [heat_multiplier(d, M, A_bg, t) * u0.coeffs for t in times]
        low_exact = np.array([e[low_idx] for e in exact])
        err = float(np.max(np.abs(vals[0, :, 2:] - low_exact)))
        heat_rows = [(float(t), " ".join(map(str, low[j])), float(vals[0, i, 2 + j].real),
                      float(low_exact[i, j].real)) for i, t in enumerate(times) for j in range(len(low))
                     if abs(low_exact[0, j]) > 0]
        res.tables["heat"] = (["time", "mode", "computed_re", "closed_form_re"], heat_rows)
        res.check("heat_closed_form", err <= 1e-10, f"max coefficient error {err:.2e}")
    elif white:
        z = vals[:, -1, 2:]
        var, se = mean_and_stderr(np.abs(z) ** 2)
        ok = np.abs(var - 1.0) <= 3.0 * se
        res.tables["stationary_variance"] = (
            ["k", "variance", "stderr", "within_3se"],
            [(" ".join(map(str, k)), float(v), float(s), bool(o)) for k, v, s, o in zip(low, var, se, ok)])
        res.plots["stationary_variance"] = {
            "title": "mode variance at final time", "xlabel": "|k|^2", "ylabel": "E|u_k|^2",
            "series": [_series("transport", (low**2).sum(axis=1), var, se)]}
        res.summary["stationary_modes_passing"] = int(ok.sum())
        res.check("white_noise_stationary", np.all(ok),
                  f"{int(ok.sum())}/{len(ok)} modes within 3 stderr of 1 at T={T}")
    else:
        tol = float(cfg.get("tolerances", {}).get("l2_drift", 0.05))
        res.check("l2_conservation", np.max(drift) <= tol, f"max relative L2 drift {np.max(drift):.3e} (tol {tol})")
    res.plots["l2_norm"] = {"title": "L2 norm", "xlabel": "t", "ylabel": "||u||",
                            "series": [_series(f"replica {r}", times, l2[r]) for r in range(min(R, 5))]}
    if cfg.get("store_trajectory", True):
        cfg0 = SolverConfig(dt, T, config.scheme, M, int(cfg["seed"]), times, config.background_diffusivity)
        if not white:
            res.trajectories.append(("trajectory", simulate_transport(u0, spec, cfg0), spec))
    res.summary["A"] = A_noise.tolist()
    return res


# ---------------------------------------------------------------------------
# sweep-rate
# ---------------------------------------------------------------------------


def _slope_check(res, name, fit, lo=None, hi=None):
    ok = (lo is None or fit.slope >= lo) and (hi is None or fit.slope <= hi)
    rng_txt = f"[{'-inf' if lo is None else f'{lo:.3f}'}, {'inf' if hi is None else f'{hi:.3f}'}]"
    res.check(name, ok, f"slope {fit.slope:.4f} (95% CI {fit.ci_low:.3f}..{fit.ci_high:.3f}) target {rng_txt}")


def _noise_diagnostics(cfg, p):
    d, M = int(cfg["geometry"]["d"]), int(cfg["geometry"]["M"])
    res = ExperimentResult("sweep-rate")
    tol = p.get("tolerances", {})
    rows, ops, hss, dists = [], [], [], []
    grid = [float(h) for h in p["h_grid"]]
    for h in grid:
        diag = diagonal_covariance(mollified_family(d, h, M))
        bound = (4 * np.pi) ** (d / 2) * d / (d - 1) * h**d
        rows.append((h, diag.op_norm, diag.hs_norm, diag.trace_Q, diag.distance_to_identity(), bound))
        ops.append(diag.op_norm)
        hss.append(diag.hs_norm)
        dists.append(diag.distance_to_identity())
        chain = diag.op_norm <= diag.hs_norm * (1 + 1e-12) and diag.hs_norm <= np.sqrt(diag.op_norm * diag.trace_Q) * (1 + 1e-12)
        if not chain:
            res.check(f"norm_chain_h{h}", False, "op <= hs <= sqrt(op trace) violated")
    res.tables["diagnostics"] = (["h", "op_norm", "hs_norm", "trace_Q", "A_minus_I", "op_bound"], rows)
    fits = {name: rate_fit([(h, v, 0.0) for h, v in zip(grid, vals)])
            for name, vals in (("op_norm", ops), ("hs_norm", hss), ("A_minus_I", dists))}
    res.summary["fits"] = {k: v.to_json() for k, v in fits.items()}
    st = float(tol.get("slope", 0.05))
    _slope_check(res, "op_norm_slope", fits["op_norm"], d - st, d + st)
    _slope_check(res, "hs_norm_slope", fits["hs_norm"], d / 2 - st, d / 2 + st)
    _slope_check(res, "A_minus_I_slope", fits["A_minus_I"], 2.0 - float(tol.get("A_slope", 0.3)))
    res.check("op_norm_bound", all(r[1] <= r[5] * (1 + 1e-12) for r in rows), "op_norm <= (4 pi)^{d/2} d/(d-1) h^d on the grid")
    order = np.argsort(grid)
    mono = np.all(np.diff(np.asarray(dists)[order]) >= 0) and np.all(np.diff(np.asarray(hss)[order]) >= 0)
    res.check("proper_scaling_monotone", mono, "||A-I|| and hs_norm decrease as h decreases")
    asym = p.get("asymptotic")
    if asym:
        ag = [float(h) for h in asym["h_grid"]]
        hs_a = [diagonal_covariance(mollified_family(d, h, int(asym["M"]))).hs_norm for h in ag]
        fa = rate_fit([(h, v, 0.0) for h, v in zip(ag, hs_a)])
        res.summary["asymptotic_hs_fit"] = {"h_grid": ag, "M": int(asym["M"]), **fa.to_json()}
        res.tables["diagnostics_asymptotic"] = (["h", "hs_norm"], list(zip(ag, hs_a)))
    res.plots["diagnostics"] = {"title": "noise diagnostics", "xlabel": "h", "ylabel": "value",
                                "log_x": True, "log_y": True,
                                "series": [_series("op_norm", grid, ops), _series("hs_norm", grid, hss),
                                           _series("||A-I||", grid, dists)]}
    return res


def _l2_rate(cfg, p, threads):
    d, M = int(cfg["geometry"]["d"]), int(cfg["geometry"]["M"])
    res = ExperimentResult("sweep-rate")
    u0 = make_initial(cfg["initial"], d, M)
    kappa = float(p.get("kappa", 0.5))
    s = -d / 2 - kappa
    T = float(p["T"])
    R = int(cfg["replicas"])
    weights = np.sqrt(sobolev_weights(d, M, s))
    seeds = replica_seeds(cfg["seed"], "l2-rate", R)
    rows, points = [], []
    for h in [float(h) for h in p["h_grid"]]:
        spec = mollified_family(d, h, M)
        A = diagonal_covariance(spec).A
        dt, n = _steps(T, float(p.get("dt_factor", 1e-3)) * min(1.0, h))
        mean_T = heat_semigroup_apply(u0, A, T).coeffs

        def probe(c, mean_T=mean_T):
            v = (c - mean_T) * weights
            return np.sqrt(np.sum(np.abs(v) ** 2, axis=tuple(range(1, d + 1))))

        config = SolverConfig(dt, T, resolution=M, snapshot_times=(T,))
        out = run_transport_ensemble(u0, spec, config, seeds, probe=probe, threads=threads)
        m, se = mean_and_stderr(out.values[:, -1])
        w = deterministic_error_w(u0, A, T, d / 2 + kappa)
        rows.append((h, float(m), float(se), dt, n, float(w), float(np.abs(A - np.eye(d)).max())))
        points.append((h, float(m), float(se)))
    res.tables["l2_rate"] = (["h", "E_norm_v", "stderr", "dt", "steps", "w_norm", "A_minus_I_max"], rows)
    fit = rate_fit(points)
    res.summary["fit"] = fit.to_json()
    res.summary["norm"] = f"H^{s}"
    tol = float(p.get("tolerances", {}).get("slope", 0.3))
    _slope_check(res, "v_rate_slope", fit, d / 2 - tol)
    res.plots["l2_rate"] = {"title": "E||v_T|| vs h", "xlabel": "h", "ylabel": "E||v_T||", "log_x": True,
                            "log_y": True, "series": [_series("transport", *zip(*points))]}
    return res


def _weak_bound(cfg, p, threads):
    d, M = int(cfg["geometry"]["d"]), int(cfg["geometry"]["M"])
    res = ExperimentResult("sweep-rate")
    u0 = make_initial(p["u0"], d, M)
    phi = make_initial(p["phi"], d, M)
    t = float(p["t"])
    R = int(cfg["replicas"])
    rows, moll = [], []
    for fam in p["specs"]:
        spec = make_noise(fam, d, M)
        h = fam.get("h")
        dt, _ = _steps(t, float(p.get("dt_factor", 1e-3)) * (min(1.0, float(h)) if h else 1.0))
        wb = weak_bound_check(u0, phi, spec, t, R, dt=dt, master_seed=cfg["seed"], threads=threads)
        label = fam["name"] + (f" h={h}" if h else f" N={fam.get('N_cut')}")
        rows.append((label, wb.lhs, wb.lhs_stderr, wb.bound, wb.margin, wb.passed))
        res.check(f"weak_bound[{label}]", wb.passed, f"E[(v,phi)^2]={wb.lhs:.4e}+-{wb.lhs_stderr:.1e} <= {wb.bound:.4e}")
        if h:
            moll.append((float(h), wb.lhs, wb.lhs_stderr))
    res.tables["weak_bound"] = (["spec", "lhs", "lhs_stderr", "bound", "margin", "passed"], rows)
    if len(moll) >= 4:
        fit = rate_fit(moll)
        res.summary["lhs_fit"] = fit.to_json()
        tol = p.get("tolerances", {}).get("lhs_slope")
        if tol is not None:
            _slope_check(res, "lhs_slope", fit, d - float(tol))
        res.plots["weak_bound"] = {"title": "E[(v_t,phi)^2] vs h", "xlabel": "h", "ylabel": "second moment",
                                   "log_x": True, "log_y": True, "series": [_series("lhs", *zip(*moll))]}
    return res


def _time_regularity(cfg, p, threads):
    d, M = int(cfg["geometry"]["d"]), int(cfg["geometry"]["M"])
    res = ExperimentResult("sweep-rate")
    spec = make_noise(cfg["family"], d, M)
    kappa = float(p.get("kappa", 0.5))
    s = -d / 2 - kappa
    lags = [float(2.0 ** -e) for e in p["lag_exponents"]]
    base = min(lags)
    dt = float(p["dt"])
    per = int(round(base / dt))
    if abs(per * dt - base) > 1e-12 or per < 1:
        raise ValueError("the smallest lag must be a multiple of dt")
    T = float(p.get("T", 2 * max(lags)))
    n_snap = int(round(T / base))
    times = tuple(i * base for i in range(n_snap + 1))
    R = int(cfg["replicas"])
    seeds = [transport_stream_seed(cfg["seed"], r) for r in range(R)]
    init = np.stack([white_noise_coeffs(d, M, stream(derive_seed(cfg["seed"], "initial", r))) for r in range(R)])
    band = lattice_box(d, dealias_kmax(M))
    idx = flat_index(band, M)
    w = np.sqrt(sobolev_weights(d, M, s)[idx])

    def probe(c):
        return c[(slice(None),) + idx] * w

    config = SolverConfig(dt, n_snap * base, resolution=M, snapshot_times=times)
    out = run_transport_ensemble(init, spec, config, seeds, probe=probe, threads=threads)
    steps = [int(round(l / base)) for l in lags]
    mean, se = increment_moment_curve(out.values, steps)
    k2 = (band**2).sum(axis=1)
    exact = [float(np.sum(w**2 * 2 * (1 - np.exp(-2 * np.pi**2 * k2 * l)))) for l in lags]
    res.tables["increments"] = (["lag", "E_sq_increment", "stderr", "heat_formula"],
                                [(l, float(m), float(e), x) for l, m, e, x in zip(lags, mean, se, exact)])
    fit = rate_fit(list(zip(lags, mean, se)))
    fit_exact = rate_fit([(l, x, 0.0) for l, x in zip(lags, exact)])
    res.summary.update({"fit": fit.to_json(), "formula_fit": fit_exact.to_json(), "norm": f"H^{s}", "kappa": kappa})
    tol = float(p.get("tolerances", {}).get("slope", 0.2))
    _slope_check(res, "time_regularity_slope", fit, kappa - tol, kappa + tol)
    res.plots["increments"] = {"title": "E||u_t-u_s||^2 vs |t-s|", "xlabel": "lag", "ylabel": "moment",
                               "log_x": True, "log_y": True,
                               "series": [_series("transport", lags, mean, se), _series("heat formula", lags, exact)]}
    return res


def run_sweep_rate(cfg, threads=1):
    p = cfg["params"]
    q = p["quantity"]
    if q == "noise-diagnostics":
        return _noise_diagnostics(cfg, p)
    if q == "l2-rate":
        return _l2_rate(cfg, p, threads)
    if q == "weak-bound":
        return _weak_bound(cfg, p, threads)
    if q == "time-regularity":
        return _time_regularity(cfg, p, threads)
    raise ValueError(f"unknown sweep quantity {q!r}")


# ---------------------------------------------------------------------------
# she-compare
# ---------------------------------------------------------------------------


def run_she_compare(cfg, threads=1):
    p = cfg["params"]
    d = int(cfg["geometry"]["d"])
    R = int(cfg["replicas"])
    mode = tuple(int(v) for v in p.get("mode", [1, 0]))
    T, snap = float(p["T"]), float(p["snapshot_dt"])
    n_snap = int(round(T / snap))
    times = tuple(i * snap for i in range(n_snap + 1))
    lag_steps = [int(v) for v in p["lag_steps"]]
    res = ExperimentResult("she-compare")
    rows, levels = [], []
    for lev in p["levels"]:
        N, M = int(lev["N_cut"]), int(lev["M"])
        dt = float(lev["dt"])
        spec = cutoff_family(d, N, M, True)
        tag = f"N{N}"
        init = np.stack([white_noise_coeffs(d, M, stream(derive_seed(cfg["seed"], f"initial/{tag}", r)))
                         for r in range(R)])
        idx = flat_index(np.array([mode]), M)

        def probe(c, idx=idx):
            return c[(slice(None),) + idx][:, 0]

        config = SolverConfig(dt, times[-1], resolution=M, snapshot_times=times)
        seeds = [derive_seed(cfg["seed"], f"transport/{tag}", r) for r in range(R)]
        tr = run_transport_ensemble(init, spec, config, seeds, probe=probe, threads=threads).values
        she_cfg = SolverConfig(snap, times[-1], resolution=M, snapshot_times=times)
        sa = run_she_ensemble(init, she_cfg, d, [derive_seed(cfg["seed"], f"she-a/{tag}", r) for r in range(R)],
                              probe=probe).values
        init_b = np.stack([white_noise_coeffs(d, M, stream(derive_seed(cfg["seed"], f"initial-b/{tag}", r)))
                           for r in range(R)])
        sb = run_she_ensemble(init_b, she_cfg, d, [derive_seed(cfg["seed"], f"she-b/{tag}", r) for r in range(R)],
                              probe=probe).values
        cmp_ = she_law_compare(tr, sa, np.array(times), mode, lag_steps)
        band = self_comparison_band(sa, sb, lag_steps)
        se = float(np.max(cmp_.acf_stderr))
        levels.append({"N_cut": N, "M": M, "dt": dt, "discrepancy": cmp_.discrepancy,
                       "stderr": se, "band": band, "she_discrepancy": cmp_.reference_discrepancy,
                       "variance": cmp_.variance, "variance_stderr": cmp_.variance_stderr,
                       "comparison": cmp_.to_json()})
        for tau, e, a, ae, b, be in zip(cmp_.lags, cmp_.exact, cmp_.acf, cmp_.acf_stderr,
                                        cmp_.reference_acf, cmp_.reference_stderr):
            rows.append((N, float(tau), float(e), float(a), float(ae), float(b), float(be)))
    res.tables["autocovariance"] = (["N_cut", "lag", "exact", "transport", "transport_stderr", "she", "she_stderr"],
                                    rows)
    res.tables["levels"] = (["N_cut", "M", "dt", "discrepancy", "stderr", "she_band", "variance", "variance_stderr"],
                            [(l["N_cut"], l["M"], l["dt"], l["discrepancy"], l["stderr"], l["band"],
                              l["variance"], l["variance_stderr"]) for l in levels])
    res.summary["levels"] = levels
    D = [l["discrepancy"] for l in levels]
    ses = [l["stderr"] for l in levels]
    tols = [3.0 * np.hypot(a, b) for a, b in zip(ses, ses[1:])]
    mono = all(D[i + 1] <= D[i] + tols[i] for i in range(len(D) - 1))
    res.check("discrepancy_non_increasing", mono,
              "discrepancies " + ", ".join(f"{v:.4f}" for v in D) + " (tolerance 3 x combined stderr)")
    final = levels[-1]
    res.check("final_within_band", final["discrepancy"] <= 3.0 * final["band"],
              f"final discrepancy {final['discrepancy']:.4f} <= 3 x SHE self-comparison band {final['band']:.4f}")
    res.plots["autocovariance"] = {
        "title": f"mode {mode} autocovariance", "xlabel": "lag", "ylabel": "E[u(t+lag) conj u(t)]",
        "series": [_series("exp(-lam lag/2)", levels[0]["comparison"]["lags"], levels[0]["comparison"]["exact"])]
        + [_series(f"N={l['N_cut']}", l["comparison"]["lags"], l["comparison"]["acf"], l["comparison"]["acf_stderr"])
           for l in levels]}
    return res


# ---------------------------------------------------------------------------
# flow-check
# ---------------------------------------------------------------------------


def run_flow_check(cfg, threads=1):
    p = cfg["params"]
    d, M = int(cfg["geometry"]["d"]), int(cfg["geometry"]["M"])
    spec = make_noise(cfg["family"], d, M)
    u0 = make_initial(p["u0"], d, M)
    phi = make_initial(p["phi"], d, M)
    T = float(p["T"])
    dt, n = _steps(T, float(p["dt"]))
    P = int(p["particles"])
    tol = float(p.get("tolerances", {}).get("relative", 0.03))
    scale = sobolev_norm(u0, 0) * sobolev_norm(phi, 0)
    config = SolverConfig(dt, T, resolution=M, snapshot_times=(0.0, T))
    res = ExperimentResult("flow-check")
    rows, unif = [], []
    for i in range(int(p["seeds"])):
        seed = derive_seed(cfg["seed"], "flow-check", i)
        probe_phi = phi.coeffs.conj()
        out = run_transport_ensemble(u0, spec, config, [seed],
                                     probe=lambda c, w=probe_phi: (c * w).reshape(len(c), -1).sum(axis=1).real)
        solver_pair = float(out.values[0, -1])
        cloud = uniform_cloud(P, d, stream(derive_seed(cfg["seed"], "cloud", i)))
        cloud = flow_cloud(cloud, spec, dt, n, stream(seed))
        particle_pair = weak_pairing(u0, phi, cloud)
        rel = abs(solver_pair - particle_pair) / scale
        rep = uniformity_test(cloud)
        unif.append(rep.pass_fraction)
        rows.append((i, seed, solver_pair, particle_pair, rel, rep.pass_fraction, float(np.min(rep.ks_pvalue))))
    res.tables["pairings"] = (["seed_index", "seed", "solver", "particles", "relative_gap",
                               "uniform_mode_pass_fraction", "min_ks_pvalue"], rows)
    worst = max(r[4] for r in rows)
    res.summary.update({"dt": dt, "steps": n, "particles": P, "worst_relative_gap": worst,
                        "uniformity_pass_fraction": float(np.mean(unif))})
    res.check("cross_oracle_pairing", worst <= tol, f"worst relative gap {worst:.4f} (tol {tol}) over {len(rows)} seeds")
    res.check("measure_preserved", float(np.mean(unif)) >= 0.95,
              f"{100 * np.mean(unif):.1f}% of Fourier-mode uniformity tests pass after the flow")
    res.plots["pairings"] = {"title": "weak pairings", "xlabel": "seed index", "ylabel": "(u_T, phi)",
                             "series": [_series("solver", [r[0] for r in rows], [r[2] for r in rows]),
                                        _series("particles", [r[0] for r in rows], [r[3] for r in rows])]}
    return res


# ---------------------------------------------------------------------------
# chaos-pair
# ---------------------------------------------------------------------------


def run_chaos_pair(cfg, threads=1):
    p = cfg["params"]
    d, M = int(cfg["geometry"]["d"]), int(cfg["geometry"]["M"])
    phi = make_initial(p["phi"], d, M)
    S = int(p["samples"])
    res = ExperimentResult("chaos-pair")
    rows, var_pts = [], []
    for i, h in enumerate(float(h) for h in p["h_grid"]):
        spec = mollified_family(d, h, M)
        r = chaos_pairing(spec, phi, S, stream(derive_seed(cfg["seed"], "chaos", i)))
        rows.append((h, r.estimate, r.stderr, r.target, r.variance, r.variance_stderr, r.hs_bound))
        res.check(f"mean[h={h}]", r.mean_ok(), f"{r.estimate:.5g}+-{r.stderr:.2g} vs target {r.target:.5g}")
        res.check(f"variance[h={h}]", r.variance_ok(),
                  f"variance {r.variance:.5g}+-{r.variance_stderr:.2g} vs 1.2 x 2||K||_HS^2 = {1.2 * r.hs_bound:.5g}")
        var_pts.append((h, r.variance, r.variance_stderr))
    res.tables["chaos"] = (["h", "mean", "stderr", "target", "variance", "variance_stderr", "two_hs_sq"], rows)
    fit = rate_fit(var_pts)
    exact_fit = rate_fit([(r[0], r[6], 0.0) for r in rows])
    res.summary.update({"variance_fit": fit.to_json(), "hs_bound_fit": exact_fit.to_json()})
    tol = float(p.get("tolerances", {}).get("slope", 0.3))
    _slope_check(res, "variance_slope", fit, d - tol, d + tol)
    res.plots["chaos_variance"] = {"title": "second-chaos variance", "xlabel": "h", "ylabel": "variance",
                                   "log_x": True, "log_y": True,
                                   "series": [_series("empirical", *zip(*var_pts)),
                                              _series("2||K||^2", [r[0] for r in rows], [r[6] for r in rows])]}
    return res


# ---------------------------------------------------------------------------
# sphere-check
# ---------------------------------------------------------------------------


def run_sphere_check(cfg, threads=1):
    p = cfg["params"]
    fam = cfg["family"]
    spec = s2.sphere_band_family(int(fam["l_min"]), int(fam["l_max"]), bool(fam.get("normalize", True)))
    res = ExperimentResult("sphere-check")
    total = spec.trace_sum()
    res.check("normalization", abs(total - s2.FULL_TRACE) <= 1e-12 * s2.FULL_TRACE,
              f"sum theta_l^2 (2l+1) = {total!r}, 8 pi = {s2.FULL_TRACE!r}")
    c = s2.sphere_diagonal_covariance(spec)
    rng = stream(derive_seed(cfg["seed"], "sphere-points", 0))
    points = np.vstack([[0.0, 0.0, 1.0], s2.uniform_sphere_points(int(p.get("n_points", 3)) - 1, rng)])
    cov_rows = []
    for i, x in enumerate(points):
        chk = s2.empirical_sphere_covariance(spec, x, int(p["samples"]), stream(derive_seed(cfg["seed"], "sphere-cov", i)))
        cov_rows.append((i, *map(float, x), *map(float, chk.empirical.ravel()), float(chk.stderr.max()), chk.within()))
        res.check(f"A_at_point_{i}", chk.within(),
                  f"empirical A {np.round(chk.empirical, 4).tolist()} vs c={c:.4f} (stderr {chk.stderr.max():.1e})")
    res.tables["covariance"] = (["point", "x", "y", "z", "a11", "a12", "a21", "a22", "max_stderr", "within_3se"],
                                cov_rows)
    kern_rows, worst = [], 0.0
    for ang in p.get("kernel_angles", [0.3, 1.0, 2.5]):
        x = np.array([0.0, 0.0, 1.0])
        y = np.array([np.sin(ang), 0.0, np.cos(ang)])
        a = s2.sphere_covariance_kernel(spec, x, y, "sum")
        b = s2.sphere_covariance_kernel(spec, x, y, "legendre")
        worst = max(worst, float(np.abs(a - b).max()))
        kern_rows.append((float(ang), float(np.linalg.norm(a)), float(np.abs(a - b).max())))
    res.tables["kernel"] = (["angle", "kernel_norm", "route_gap"], kern_rows)
    res.check("kernel_two_routes", worst <= 1e-10, f"direct sum vs Legendre closed form max gap {worst:.1e}")
    dt, n = _steps(float(p["T"]), float(p["dt"]))
    cloud0 = s2.uniform_sphere_points(int(p["particles"]), stream(derive_seed(cfg["seed"], "sphere-cloud", 0)))
    cloud = s2.sphere_flow(cloud0, spec, dt, n, stream(derive_seed(cfg["seed"], "sphere-flow", 0)))
    rep = s2.sphere_uniformity_test(cloud, int(p.get("uniformity_lmax", 3)))
    res.tables["uniformity"] = (["l", "m", "moment", "threshold", "passed"],
                                [(int(l), int(m), float(v), rep.threshold, bool(ok))
                                 for l, m, v, ok in zip(rep.degrees, rep.orders, rep.moments, rep.mode_pass)])
    res.check("uniformity_after_flow", rep.passed,
              f"{int(rep.mode_pass.sum())}/{len(rep.mode_pass)} harmonic moments within 3/sqrt(4 pi P) at T={p['T']}")
    unit = float(np.abs(np.linalg.norm(cloud, axis=1) - 1).max())
    res.check("unit_norm", unit <= 1e-12, f"max | |x| - 1 | = {unit:.1e}")
    diff = s2.sphere_diffusivity(spec, dt, int(p.get("diffusivity_steps", 20)), int(p.get("diffusivity_replicas", 4000)),
                                 stream(derive_seed(cfg["seed"], "sphere-diffusivity", 0)))
    res.summary.update({"c": c, "diffusivity": diff.__dict__, "uniformity": rep.to_json()})
    scal = []
    for lo, hi in p.get("scaling_bands", [[1, 4], [2, 8], [4, 16], [8, 24]]):
        sp = s2.sphere_band_family(int(lo), int(hi))
        scal.append((int(lo), int(hi), sp.op_norm(), s2.pair_correlation_at_angle(sp, 0.5)))
    res.tables["scaling"] = (["l_min", "l_max", "op_norm", "kernel_norm_at_0.5rad"], scal)
    mono = all(b[2] <= a[2] and b[3] <= a[3] for a, b in zip(scal, scal[1:]))
    res.check("proper_scaling_monotone", mono, "op norm and correlation at fixed angle decrease along the bands")
    return res


# ---------------------------------------------------------------------------
# leray-diagonal
# ---------------------------------------------------------------------------


def leray_diagonal_sum(dim, h, M):
    """``sum_{k != 0} exp(-4 pi^2 |k|^2 h^2) P_k + I`` over the dealiased band."""
    kmax = dealias_kmax(M)
    frac = mollified_tail_fraction(dim, h, kmax)
    if frac > 1e-10:
        from .noise import TailTooLargeError

        raise TailTooLargeError(f"h={h} needs a larger M than {M} (tail fraction {frac:.1e})")
    k = lattice_box(dim, kmax)
    k = k[np.any(k != 0, axis=1)].astype(np.float64)
    k2 = (k**2).sum(axis=1)
    w = np.exp(-4.0 * np.pi**2 * h * h * k2)
    a = np.eye(dim) * w.sum() - np.einsum("k,ki,kj->ij", w / k2, k, k)
    return a + np.eye(dim)


def run_leray_diagonal(cfg, threads=1):
    p = cfg["params"]
    res = ExperimentResult("leray-diagonal")
    rows = []
    tol = float(p.get("tolerances", {}).get("slope", 0.2))
    for d in [int(v) for v in p["dims"]]:
        M = int(p["M"][str(d)] if isinstance(p["M"], dict) else p["M"])
        grid = [float(h) for h in p["h_grid"]]
        errs = []
        for h in grid + [float(h) for h in p.get("degenerate_h", [])]:
            a = leray_diagonal_sum(d, h, M)
            lead = (4 * np.pi * h * h) ** (-d / 2) * (d - 1) / d
            err = float(np.linalg.norm(a - lead * np.eye(d), 2))
            rows.append((d, h, lead, err, err / (h ** (2 - d) + 1), float(np.abs(a - lead * np.eye(d)).max() / lead)))
            if h in grid:
                errs.append(err)
        fit = rate_fit([(h, e, 0.0) for h, e in zip(grid, errs)])
        C = max(r[4] for r in rows if r[0] == d)
        res.summary[f"d{d}"] = {"fit": fit.to_json(), "C": C}
        _slope_check(res, f"error_slope_d{d}", fit, -d + 2 - tol)
        res.check(f"bound_constant_d{d}", np.isfinite(C), f"max err/(h^(2-d)+1) = {C:.4f}")
        ratio = dict(((r[1], r[3]) for r in rows if r[0] == d))
        if 0.5 in ratio and 0.25 in ratio:
            res.summary[f"d{d}"]["ratio_h0.5_over_h0.25"] = ratio[0.5] / ratio[0.25]
    res.tables["leray"] = (["d", "h", "leading", "error", "error_over_bound_shape", "relative_error"], rows)
    res.plots["leray"] = {"title": "diagonal Leray heat kernel error", "xlabel": "h", "ylabel": "error",
                          "log_x": True, "log_y": True,
                          "series": [_series(f"d={d}", [r[1] for r in rows if r[0] == d], [r[3] for r in rows if r[0] == d])
                                     for d in [int(v) for v in p["dims"]]]}
    return res


RUNNERS = {
    "simulate": run_simulate,
    "sweep-rate": run_sweep_rate,
    "she-compare": run_she_compare,
    "flow-check": run_flow_check,
    "chaos-pair": run_chaos_pair,
    "sphere-check": run_sphere_check,
    "leray-diagonal": run_leray_diagonal,
}


def run_experiment(cfg, threads=1):
    return RUNNERS[cfg["kind"]](cfg, threads)


ACCEPTANCE_FILES = {
    1: "ac01_noise_diagnostics.json",
    2: "ac02_leray_diagonal.json",
    3: "ac03_l2_conservation.json",
    4: "ac04_white_noise_stationarity.json",
    5: "ac05_l2_rate.json",
    6: "ac06_weak_bound.json",
    7: "ac07_chaos_pairing.json",
    8: "ac08_she_law.json",
    9: "ac09_cross_oracle.json",
    10: "ac10_sphere.json",
    11: "ac11_time_regularity.json",
}


def acceptance_config(number):
    """Bundled configuration for acceptance criterion ``number``."""
    text = resources.files("stochtrans").joinpath("configs", ACCEPTANCE_FILES[number]).read_text()
    return json.loads(text)
