"""Command-line laboratory: seeded pipelines over the slowed automorphism.

Each run loads one configuration, builds the map, executes a single
pipeline, and leaves four kinds of artifact in the output directory: a
manifest (manifest.json with the resolved config, library versions, and
every derived constant, plus a reloadable config.echo), the pipeline's CSV
tables, and a summary.json recording the pipeline's invariant suite as
pass/fail entries.  The process exits 0 when every invariant holds, 1 when
one fails, 2 on usage or configuration errors, and 3 when an integrator or
fit gives out.

Determinism is the load-bearing invariant: with the seed fixed, every
artifact is byte-identical across runs regardless of worker count.  The
orchestrator owns the worker pool; pipelines fan out through parallel_map,
which hands items to threads in fixed chunks and reduces strictly in index
order, and every work item derives its own generator from (seed, index),
never from shared state.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import decomposition as dc
from . import engine as eng
from . import gibbs_ldp as gl
from . import pressure as pr
from . import spectrum as sp
from . import tangent as tg
from .config import COMMANDS, ConfigError, RunConfig, load_config, write_manifest
from .decomposition import OrbitSegment
from .geometry import wrap01, wrap_half
from .katok_map import KatokMap

_USAGE_ERROR, _NUMERICAL_ERROR = 2, 3


# ------------------------------------------------------------ concurrency


def parallel_map(fn, items, workers: int):
    """Map fn over items preserving order; results never depend on workers.

    Threads suit the workload: the kernels release little GIL but the items
    are coarse, and processes would force everything through pickle.  The
    chunk handed to each thread is always 1, so the schedule (which worker
    computes what) is the only thing that varies, and every fn must be a
    pure function of its item.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def resolve_workers(cfg: RunConfig) -> int:
    """Explicit count, else the KATOKLAB_WORKERS environment, else 1."""
    if cfg.workers > 0:
        return cfg.workers
    env = os.environ.get("KATOKLAB_WORKERS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(
                f"KATOKLAB_WORKERS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"KATOKLAB_WORKERS must be positive, got {n}")
        return n
    return 1


# -------------------------------------------------------------- artifacts


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    """CSV with a header row, '.' decimals, repr floats, LF endings."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_json(path, payload) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n")


def _json_safe(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_json_safe(x) for x in v]
    return v


def _inv(name, passed, detail):
    return {"name": name, "passed": bool(passed), "detail": detail}


# ------------------------------------------------------- shared utilities


def _holder_potential(pts):
    d = wrap_half(np.atleast_2d(pts))
    return np.hypot(d[:, 0], d[:, 1]) ** 0.5


def _t_grid(lo, hi, step):
    if step <= 0.0:
        raise ConfigError(f"t_step must be positive, got {step}")
    k = int(round((hi - lo) / step))
    if k < 1 or lo >= hi:
        raise ConfigError(f"empty t grid: [{lo}, {hi}] at step {step}")
    return lo + step * np.arange(k + 1)


def _curve(kmap, cfg):
    ts = _t_grid(cfg.option("t_min"), cfg.option("t_max"), cfg.option("t_step"))
    pool = pr.grid_pool(cfg.option("resolution"))
    n_range = cfg.option("curve_n") or None
    return pr.pressure_curve(kmap, ts, pool, cfg.option("delta"), n_range)


def _write_curve_csv(outdir, curve):
    rows = [(t, P, d["raw"], d["stderr"], d["r2"])
            for t, P, d in zip(curve.t_grid, curve.P, curve.diagnostics)]
    write_csv(outdir / "curve.csv", ("t", "P", "raw", "stderr", "r2"), rows)


def _near(grid, value, tol=1e-9):
    grid = np.asarray(grid, dtype=np.float64)
    hits = np.nonzero(np.abs(grid - value) <= tol)[0]
    return int(hits[0]) if len(hits) else None


# --------------------------------------------------------------- pipelines


def _pipeline_orbit(kmap, cfg, outdir, workers):
    ctx = eng.get_ctx(kmap)
    x0_text = cfg.option("x0")
    if x0_text:
        parts = [float(p) for p in x0_text.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"x0 expects two coordinates, got {x0_text!r}")
        x0 = np.array(parts, dtype=np.float64)
    else:
        x0 = np.random.default_rng([cfg.seed, 101]).random(2)
    n = cfg.option("length")
    T = eng.orbit_table(ctx, x0[None, :], n, dtype=np.float64)[0]
    write_csv(outdir / "orbit.csv", ("step", "x", "y"),
              [(i, T[i, 0], T[i, 1]) for i in range(n)])

    in_square = bool((T >= 0.0).all() and (T < 1.0).all())
    T2 = eng.orbit_table(ctx, x0[None, :], n, dtype=np.float64)[0]
    reproducible = bool(np.array_equal(T, T2))
    invariants = [
        _inv("orbit_in_unit_square", in_square,
             f"all {n} iterates inside [0, 1)^2"),
        _inv("orbit_reproducible", reproducible,
             "recomputation is bitwise identical"),
    ]
    extra = {"x0": [float(x0[0]), float(x0[1])], "length": n}
    return extra, invariants


def _pipeline_lyapunov(kmap, cfg, outdir, workers):
    hist = sp.lyapunov_histogram(
        kmap, cfg.option("lyap_n"), cfg.option("lyap_samples"),
        sampler=cfg.option("sampler"), seed=cfg.seed, bins=cfg.option("bins"))
    write_csv(outdir / "lyapunov.csv", ("bin_center", "count"),
              list(zip(hist.bin_centers, hist.counts)))

    vals = np.asarray(hist.exponents)
    log_lam = kmap.params.log_lam
    invariants = [_inv("exponents_finite", bool(np.isfinite(vals).all()),
                       f"{vals.size} finite window exponents")]
    if hist.sampler == "lebesgue":
        rel = abs(float(vals.mean()) - log_lam) / log_lam
        invariants.append(_inv(
            "mean_matches_positive_exponent", rel < 0.05,
            f"sample mean {vals.mean():.6f} vs log lambda {log_lam:.6f} "
            f"(rel {rel:.2e})"))
    else:
        invariants.append(_inv(
            "biased_tail_reaches_low_exponents", float(vals.min()) < log_lam / 2,
            f"min exponent {vals.min():.4f} vs log lambda / 2 "
            f"= {log_lam / 2:.4f}"))
    extra = {"n": hist.n, "sampler": hist.sampler,
             "mean": float(vals.mean()), "std": float(vals.std()),
             "min": float(vals.min()), "max": float(vals.max())}
    return extra, invariants


def _curve_invariants(curve):
    P = np.asarray(curve.P)
    ts = np.asarray(curve.t_grid)
    invariants = []
    i1 = _near(ts, 1.0)
    if i1 is None:
        invariants.append(_inv("P_at_one_small", True, "t = 1 not sampled"))
    else:
        invariants.append(_inv(
            "P_at_one_small", abs(P[i1]) <= 0.05,
            f"P(1) = {P[i1]:.6f}, band [-0.05, 0.05]"))
    diffs = np.diff(P)
    invariants.append(_inv(
        "P_nonincreasing", bool((diffs <= 1e-9).all()),
        f"max forward difference {diffs.max():.2e}" if len(diffs) else "flat"))
    steps = np.diff(ts)
    if len(P) >= 3 and np.allclose(steps, steps[0]):
        d2 = np.diff(P, 2)
        invariants.append(_inv(
            "P_convex", bool((d2 >= -1e-3).all()),
            f"min second difference {d2.min():.2e}, floor -1e-03"))
    return invariants


def _pipeline_pressure_curve(kmap, cfg, outdir, workers):
    curve = _curve(kmap, cfg)
    _write_curve_csv(outdir, curve)
    invariants = _curve_invariants(curve)
    i0 = _near(curve.t_grid, 0.0)
    extra = {"entropy_estimate": (None if i0 is None else curve.P[i0]),
             "t_points": len(curve.t_grid)}
    return extra, invariants


def _pipeline_spectrum(kmap, cfg, outdir, workers):
    curve = _curve(kmap, cfg)
    _write_curve_csv(outdir, curve)
    a1, a2 = sp.alpha_bounds(curve)
    grid = np.linspace(a1 + 0.01, 0.0, cfg.option("alpha_points"))
    table = sp.dimension_bound(sp.entropy_spectrum(curve, grid))
    plateau = sp.plateau_fit(table)
    write_csv(outdir / "spectrum.csv", ("alpha", "E", "dim_lb"),
              list(zip(table.alpha_grid, table.E, table.dim_lb)))

    E = np.asarray(table.E)
    dims = np.asarray(table.dim_lb)
    finite = dims[np.isfinite(dims)]
    d2 = np.diff(E, 2)
    invariants = [
        _inv("E_concave", bool((d2 <= 1e-9).all()),
             f"max second difference {d2.max():.2e}"),
        _inv("dimension_bound_in_range",
             bool((finite >= 0.0).all() and (finite <= 2.0).all()),
             f"dim range [{finite.min():.4f}, {finite.max():.4f}]"),
        _inv("plateau_flat", plateau["max_abs_dev"] <= 0.02,
             f"max |E + alpha| = {plateau['max_abs_dev']:.4f} over "
             f"{plateau['points']} points"),
        _inv("alpha2_strictly_negative", a2 < -0.01,
             f"alpha2 = {a2:.4f}"),
    ]
    extra = {"alpha1_hat": a1, "alpha2_hat": a2,
             "plateau": _json_safe(plateau)}
    return extra, invariants


def _pipeline_gibbs(kmap, cfg, outdir, workers):
    mu = gl.orbit_proxy(kmap, cfg.option("proxy_length"), seed=cfg.seed)
    scale = cfg.option("gibbs_scale") or 6.0 * kmap.params.epsilon
    ns = cfg.option("gibbs_ns")
    backend = cfg.option("gibbs_backend")
    mc = cfg.option("gibbs_mc")
    P_hat = kmap.params.log_lam              # MME: zero potential, P = h_top
    samples = cfg.option("gibbs_samples")
    xs = np.random.default_rng([cfg.seed, 17]).random((samples, 2))

    def one(x):
        return [gl.gibbs_ratio_detail(kmap, mu, OrbitSegment(x, int(n)), None,
                                      P_hat, scale, backend, mc, cfg.seed)
                for n in ns]

    eng.get_ctx(kmap)                        # build kernels before fanning out
    per_x = parallel_map(one, list(xs), workers)
    rows, censored = [], 0
    for j, n in enumerate(ns):
        vals = np.array([per_x[i][j][0] for i in range(samples)])
        cens = sum(per_x[i][j][1] for i in range(samples))
        censored += cens
        rows.append({"n": int(n), "rho_max": float(np.abs(vals).max()),
                     "rho_mean": float(vals.mean()), "censored": int(cens)})
    write_csv(outdir / "gibbs.csv", ("n", "rho_max", "rho_mean"),
              [(r["n"], r["rho_max"], r["rho_mean"]) for r in rows])

    ratios = [r["rho_max"] / r["n"] for r in rows]
    invariants = [
        _inv("rho_max_sublinear",
             all(a > b for a, b in zip(ratios, ratios[1:])),
             "max |rho| / n strictly decreasing: "
             + ", ".join(f"{v:.4f}" for v in ratios)),
        _inv("uncensored", censored == 0,
             f"{censored} censored Bowen-ball masses"),
    ]
    extra = {"rows": _json_safe(rows), "scale": scale, "backend": backend,
             "censored": censored}
    return extra, invariants


def _pipeline_ldp(kmap, cfg, outdir, workers):
    deltas = tuple(sorted(cfg.option("ldp_deltas")))
    if not deltas:
        raise ConfigError("ldp_deltas must contain at least one value")
    ts = _t_grid(cfg.option("ldp_t_min"), cfg.option("ldp_t_max"),
                 cfg.option("ldp_t_step"))
    rf = gl.rate_function(kmap, "geo", ts, deltas,
                          pool=pr.grid_pool(cfg.option("resolution")))
    mu = gl.orbit_proxy(kmap, cfg.option("proxy_length"), seed=cfg.seed)
    decays = gl.deviation_decay_table(kmap, "geo", mu, cfg.option("ldp_n"),
                                      rf.delta_grid)
    write_csv(outdir / "ldp.csv", ("delta", "q", "measured_exponent"),
              [(d, q, dec.exponent)
               for d, q, dec in zip(rf.delta_grid, rf.q, decays)])

    q = np.asarray(rf.q)
    invariants = []
    i0 = _near(rf.delta_grid, 0.0)
    if i0 is not None:
        invariants.append(_inv("q_zero_at_origin", q[i0] == 0.0,
                               f"q(0) = {float(q[i0])!r}"))
    dq = np.diff(q)
    invariants.append(_inv(
        "q_nondecreasing", bool((dq >= 0.0).all()),
        f"min forward difference {dq.min():.2e}" if len(dq) else "single point"))
    extra = {
        "mean": rf.mean,
        "censored": {repr(float(d)): dec.censored
                     for d, dec in zip(rf.delta_grid, decays)},
        "rows": _json_safe([dec.rows for dec in decays]),
    }
    return extra, invariants


def _pipeline_decomp(kmap, cfg, outdir, workers):
    n = cfg.option("decomp_n")
    r = cfg.option("decomp_r")
    samples = cfg.option("decomp_samples")
    eng.get_ctx(kmap)

    def one(i):
        x = np.random.default_rng([cfg.seed, i]).random(2)
        t = dc.classify(kmap, OrbitSegment(x, n), r)
        return t.p, t.g, t.s

    triples = parallel_map(one, range(samples), workers)
    write_csv(outdir / "decomp.csv", ("i", "p", "g", "s"),
              [(i, p, g, s) for i, (p, g, s) in enumerate(triples)])

    sums_ok = all(p + g + s == n for p, g, s in triples)
    arr = np.asarray(triples, dtype=np.float64)
    invariants = [_inv(
        "decomposition_sums_to_n", sums_ok,
        f"p + g + s = {n} on all {samples} segments")]
    extra = {"n": n, "r": r, "samples": samples,
             "mean_fractions": {"p": float(arr[:, 0].mean()) / n,
                                "g": float(arr[:, 1].mean()) / n,
                                "s": float(arr[:, 2].mean()) / n}}
    return extra, invariants


def _probe_conservation(kmap, cfg):
    p = kmap.params
    rng = np.random.default_rng([cfg.seed, 11])
    m = cfg.option("probe_samples")
    theta = 2.0 * np.pi * rng.random(m)
    rad = 1e-6 + (0.999 * p.r1 - 1e-6) * np.sqrt(rng.random(m))
    s = np.column_stack([rad * np.cos(theta), rad * np.sin(theta)])
    q0 = s[:, 0] * s[:, 1]
    s1 = kmap.flow_time_one(s)
    drift = float(np.max(np.abs(s1[:, 0] * s1[:, 1] - q0)))
    return ("conservation", "max_drift_per_unit_time", drift, 1e-8,
            drift < 1e-8)


def _probe_cone(kmap, cfg):
    rep = tg.cone_check(kmap, cfg.option("cone_samples"), seed=cfg.seed)
    return ("cone", "violations", float(rep.violations), 0.0,
            rep.violations == 0)


def _probe_derivative(kmap, cfg):
    m = cfg.option("probe_samples")
    rng = np.random.default_rng([cfg.seed, 5])
    xs = rng.random((4 * m, 2))
    d = wrap_half(xs)
    xs = xs[np.hypot(d[:, 0], d[:, 1]) >= 1e-3][:m]
    J = kmap.jac(xs)
    h = 1e-6
    fd = np.empty_like(J)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fp = kmap.apply(wrap01(xs + e))
        fm = kmap.apply(wrap01(xs - e))
        fd[:, :, k] = wrap_half(fp - fm) / (2.0 * h)
    scale = np.abs(J).max(axis=(1, 2))
    rel = float((np.abs(fd - J).max(axis=(1, 2)) / scale).max())
    return ("derivative_vs_fd", "max_rel_error", rel, 1e-5, rel < 1e-5)


def _probe_contraction(kmap, cfg):
    r = cfg.option("probe_r")
    if kmap.params.chi_radius >= math.sqrt(2.0) / 2.0:
        raise RuntimeError(
            f"chi radius {kmap.params.chi_radius:.3f} covers the torus; "
            "no segment is good at these parameters")
    rng = np.random.default_rng([cfg.seed, 7])
    want, found, violations, tries = 20, 0, 0, 0
    max_tries = 400 * want
    while found < want and tries < max_tries:
        tries += 1
        x = rng.random(2)
        n = int(rng.integers(50, 150))
        d = wrap_half(x)
        if np.hypot(d[0], d[1]) < 1.5 * kmap.params.r1:
            continue
        seg = OrbitSegment(x, n)
        if not dc.is_good(kmap, seg, r):
            continue
        arc = 10.0 ** rng.uniform(-5, -3)
        leaf = tg.trace_leaf(kmap, x, "stable", arc)
        rep = dc.contraction_probe(kmap, seg, leaf[-1], r)
        found += 1
        violations += rep.violations
    if found == 0:
        raise RuntimeError(
            f"no good segments found at r = {r} in {max_tries} draws; "
            "the chi disc covers the torus at these parameters")
    return ("contraction", f"violations_over_{found}_segments",
            float(violations), 0.0, violations == 0)


def _probe_bowen(kmap, cfg):
    rep = dc.bowen_property_probe(
        kmap, _holder_potential, r=cfg.option("probe_r"),
        scale=cfg.option("probe_scale"), trials=cfg.option("probe_trials"),
        n_max=cfg.option("probe_nmax"), seed=cfg.seed)
    slope_ok = abs(rep.slope) < 1e-4
    return ("bowen_spread", "fit_slope", rep.slope, 1e-4, slope_ok)


def _probe_zeta(kmap, cfg):
    trials = max(1, cfg.option("probe_trials") // 10)
    scale = cfg.option("probe_scale")
    ratios = [pr.zeta_estimate(kmap, _holder_potential, n, scale, trials,
                               seed=cfg.seed) / n for n in (8, 16, 32, 64)]
    ok = all(a > b for a, b in zip(ratios, ratios[1:]))
    return ("zeta_ratio", "final_zeta_over_n", ratios[-1],
            ratios[0], ok)


def _probe_linger(kmap, cfg):
    r1 = kmap.params.r1
    worst = 0.0
    for k in (8, 20, 60, 200, 1000):
        res = kmap.linger_time(r1 ** 2 / k)
        if not res.exited:
            raise RuntimeError(f"linger probe at rho = r1^2/{k} never exited")
        worst = max(worst, res.measured / res.bound)
    return ("linger", "max_measured_over_bound", worst, 2.0, worst <= 2.0)


def _pipeline_probes(kmap, cfg, outdir, workers):
    eng.get_ctx(kmap)
    probes = (_probe_conservation, _probe_cone, _probe_derivative,
              _probe_contraction, _probe_bowen, _probe_zeta, _probe_linger)
    rows = parallel_map(lambda p: p(kmap, cfg), probes, workers)
    write_csv(outdir / "probes.csv",
              ("probe", "metric", "value", "threshold", "passed"), rows)
    invariants = [
        _inv(f"probe_{name}", ok, f"{metric} = {value:.3e} vs {threshold:.3e}")
        for name, metric, value, threshold, ok in rows]
    extra = {"probes": [r[0] for r in rows]}
    return extra, invariants


_PIPELINES = {
    "orbit": _pipeline_orbit,
    "lyapunov": _pipeline_lyapunov,
    "pressure-curve": _pipeline_pressure_curve,
    "spectrum": _pipeline_spectrum,
    "gibbs-check": _pipeline_gibbs,
    "ldp": _pipeline_ldp,
    "decomp-stats": _pipeline_decomp,
    "probes": _pipeline_probes,
}


# ------------------------------------------------------------------ runner


def run(cfg: RunConfig) -> int:
    """Execute one pipeline and write its artifacts; returns the exit code."""
    workers = resolve_workers(cfg)
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    kmap = KatokMap(cfg.params)
    write_manifest(cfg, kmap, outdir)
    try:
        extra, invariants = _PIPELINES[cfg.command](kmap, cfg, outdir, workers)
    except (RuntimeError, FloatingPointError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        print(f"numerical failure in {cfg.command}: {exc}", file=sys.stderr)
        return _NUMERICAL_ERROR

    passed = all(inv["passed"] for inv in invariants)
    summary = {"command": cfg.command, "seed": cfg.seed,
               "invariants": invariants, "passed": passed}
    summary.update({k: _json_safe(v) for k, v in extra.items()})
    write_json(outdir / "summary.json", summary)
    for inv in invariants:
        tag = "PASS" if inv["passed"] else "FAIL"
        print(f"[{tag}] {inv['name']}: {inv['detail']}")
    if not passed:
        first = next(inv for inv in invariants if not inv["passed"])
        print(f"invariant failed: {first['name']} ({first['detail']})",
              file=sys.stderr)
        return 1
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="katoklab",
        description="Numerical laboratory for a slowed toral automorphism.")
    parser.add_argument("command", metavar="command",
                        help="one of: " + ", ".join(COMMANDS))
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="key=value configuration file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", metavar="DIR", default=None,
                        help="override the output directory")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker threads (or KATOKLAB_WORKERS)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, command=args.command, seed=args.seed,
                          out=args.out, workers=args.workers)
        return run(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return _USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return _USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
