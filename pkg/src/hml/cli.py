"""``hml`` command line: generate | betas | harmonic | analyze | report.

Every stage reads one JSON config, writes into ``--out`` and stamps each file
with the config digest. Downstream stages refuse inputs whose digest does not
match the current config.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, beta, harmonic, lattice
from .errors import ConfigError, DigestMismatch, HmlError, MissingInput, StatisticalPreconditionFailed
from .fractal import ahlfors_audit, build_ifs

DEFAULTS = {
    "experiment": "fractal",
    "seed": 0,
    "model": {"family": "corner_cantor_2d", "lambda": 0.25},
    "lattice": {"max_depth": 6},
    "betas": {"depth_range": [0, 5], "angles": 720, "hole_depth_max": 1, "hole_angles": 180,
              "line_step": 1.0 / 64, "beta_sum_max": 4},
    "walk": {"n_walkers": 100_000},
    "analysis": {"m0": 2, "k_max": 3, "t_prime": None, "factor": 16.0, "tau": 0.5,
                 "stopping_generations": [0, 1, 2], "m0_max": 6, "stopping_direction": "both", "quantile": 0.5, "n_boot": 200},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def canonical(doc):
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def load_config(path, seed=None):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise MissingInput(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    check_config(cfg)
    return cfg


def check_config(cfg):
    if cfg["experiment"] not in ("fractal", "disk_sanity"):
        raise ConfigError(f"unknown experiment {cfg['experiment']!r}")
    if cfg["experiment"] == "disk_sanity":
        return
    D = cfg["lattice"]["max_depth"]
    lo, hi = cfg["betas"]["depth_range"]
    a = cfg["analysis"]
    if not 0 <= lo <= hi <= D:
        raise ConfigError("betas.depth_range must lie inside the lattice depth")
    if a["k_max"] * a["m0"] > D:
        raise ConfigError("analysis depth k_max*m0 exceeds lattice max_depth")
    if a["stopping_direction"] not in ("up", "down", "both"):
        raise ConfigError(f"unknown stopping_direction {a['stopping_direction']!r}")
    if cfg["betas"]["beta_sum_max"] > D - 2:
        raise ConfigError("beta_sum_max must be <= max_depth - 2")


def digest(cfg):
    """Hash of the canonical config; worker count is excluded since results do not depend on it."""
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()[:16]


# --- digest plumbing ------------------------------------------------------

def _csv_digest(path):
    if not path.exists():
        raise MissingInput(f"missing input {path.name}; run the upstream stage first")
    with open(path) as fh:
        first = fh.readline().strip()
    if not first.startswith("# config_digest:"):
        raise DigestMismatch(f"{path.name} carries no config digest")
    return first.split(":", 1)[1].strip()


def _json_digest(path):
    if not path.exists():
        raise MissingInput(f"missing input {path.name}; run the upstream stage first")
    with open(path) as fh:
        return json.load(fh).get("config_digest")


def require(path, dg):
    path = Path(path)
    found = _csv_digest(path) if path.suffix == ".csv" else _json_digest(path)
    if found != dg:
        raise DigestMismatch(f"{path.name} was produced by config {found}, current is {dg}")


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=analysis._json_default)
        fh.write("\n")


def _model(cfg):
    m = cfg["model"]
    fam = m.get("family", "custom")
    if fam == "custom":
        return build_ifs("custom", custom_maps=m["maps"], sep_min=m.get("sep_min", 0.05))
    return build_ifs(fam, m.get("lambda"), sep_min=m.get("sep_min", 0.05))


def _walk_config(cfg, workers):
    w = dict(cfg["walk"])
    w["seed"] = cfg["seed"]
    w["n_workers"] = workers
    w.pop("n_arcs", None)
    if w.get("pole") is not None:
        w["pole"] = tuple(w["pole"])
    try:
        return harmonic.WalkConfig(**w).validate()
    except TypeError as exc:
        raise ConfigError(f"bad walk config: {exc}") from exc


# --- stages ---------------------------------------------------------------

def cmd_generate(cfg, out, workers=1):
    dg = digest(cfg)
    out.mkdir(parents=True, exist_ok=True)
    if cfg["experiment"] == "disk_sanity":
        _write_json(out / "model.json", {"config_digest": dg, "family": "unit_circle",
                                         "ambient_dim": 2, "arcs": cfg["walk"].get("n_arcs", 16)})
        return
    model = _model(cfg)
    lat = lattice.build_lattice(model, cfg["lattice"]["max_depth"])
    aud = ahlfors_audit(model, min(6, lat.max_depth), seed=cfg["seed"])
    doc = {"config_digest": dg, **model.to_json(), "diam": model.diam, "gap": model.gap,
           "N": model.N, "ahlfors_audit": {"C0_measured": aud.C0_measured, "depth": aud.depth},
           "c_inner": lat.c_inner}
    if lat.max_depth >= 3:
        tb = lattice.audit_thin_boundary(lat, (1, 0), [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 4.0])
        doc["thin_boundary"] = {"cube": lat.label(tb.cube), "eta_hat": tb.eta_hat,
                                "C1_hat": tb.C1_hat, "rows": tb.rows()}
    _write_json(out / "model.json", doc)
    lattice.write_cubes_csv(lat, out / "cubes.csv", dg)


def cmd_betas(cfg, out, workers=1):
    dg = digest(cfg)
    require(out / "model.json", dg)
    if cfg["experiment"] == "disk_sanity":
        return
    model = _model(cfg)
    lat = lattice.build_lattice(model, cfg["lattice"]["max_depth"])
    b = cfg["betas"]
    lo, hi = b["depth_range"]
    sampler = beta.BallSampler(model)
    _, _, recs = beta.scan_nonflatness(lat, "beta2", (lo, hi), b["angles"], sampler=sampler)
    hole_hi = min(hi, b["hole_depth_max"])
    if model.ambient_dim == 2 and hole_hi >= lo:
        _, _, full = beta.scan_nonflatness(lat, "all", (lo, hole_hi), b["hole_angles"],
                                           b["line_step"], sampler=sampler)
        by_id = {r.target: r for r in full}
        recs = [by_id.get(r.target, r) for r in recs]
    beta.write_betas_csv(lat, recs, out / "betas.csv", dg)
    with open(out / "beta_sums.csv", "w") as fh:
        fh.write(f"# config_digest: {dg}\nN,lhs,rhs_beta_term,rhs_scale_term,ratio\n")
        if model.ambient_dim == 2:
            for N in range(1, b["beta_sum_max"] + 1):
                r = beta.beta_sum_check(lat, (0, 0), N, b["angles"])
                fh.write(f"{N},{r.lhs!r},{r.rhs_beta_term!r},{r.rhs_scale_term!r},{r.ratio!r}\n")


def cmd_harmonic(cfg, out, workers=1):
    dg = digest(cfg)
    require(out / "model.json", dg)
    wc = _walk_config(cfg, workers)
    t0 = time.perf_counter()
    if cfg["experiment"] == "disk_sanity":
        res = harmonic.run_disk(wc.n_walkers, wc.eps if wc.eps is not None else 1e-3, wc.seed,
                                cfg["walk"].get("n_arcs", 16), wc.shrink, workers)
        with open(out / "omega.csv", "w") as fh:
            fh.write(f"# config_digest: {dg}\narc,hits,total\n")
            for i, c in enumerate(res.counts):
                fh.write(f"{i},{int(c)},{res.absorbed}\n")
        _write_json(out / "run_meta.json", {
            "config_digest": dg, "walk_config": wc.to_json(), "chi2": res.chi2,
            "chi2_crit_999": res.chi2_crit, "max_sigma": res.max_sigma, "upper_half": res.upper_half,
            "upper_half_sigma": res.upper_sigma, "passed": res.passed, "summary": res.line()})
    else:
        model = _model(cfg)
        lat = lattice.build_lattice(model, cfg["lattice"]["max_depth"])
        est = harmonic.run_walkers(model, lat, wc)
        harmonic.write_omega_csv(lat, est, out / "omega.csv", dg)
        harmonic.write_run_meta(out / "run_meta.json", wc, est, dg)
    _write_json(out / "timing.json", {"config_digest": dg, "stage": "harmonic",
                                      "wall_seconds": time.perf_counter() - t0, "workers": workers})


def cmd_analyze(cfg, out, workers=1):
    dg = digest(cfg)
    require(out / "omega.csv", dg)
    require(out / "run_meta.json", dg)
    if cfg["experiment"] == "disk_sanity":
        with open(out / "run_meta.json") as fh:
            meta = json.load(fh)
        doc = {"config_digest": dg, "experiment": "disk_sanity",
               **{k: meta[k] for k in ("chi2", "chi2_crit_999", "max_sigma", "passed", "summary")}}
        analysis.write_report_json(out / "report.json", doc)
        return
    model = _model(cfg)
    lat = lattice.build_lattice(model, cfg["lattice"]["max_depth"])
    est = harmonic.read_omega_csv(out / "omega.csv", lat)
    a = cfg["analysis"]
    root = (0, 0)
    dec = analysis.decay_series(lat, est, root, a["m0"], a["k_max"])
    analysis.write_decay_csv(dec, out / "decay.csv", dg)
    reps = analysis.stopping_scan(lat, est, a["stopping_generations"], a["m0_max"], a["factor"],
                                  a["stopping_direction"])
    analysis.write_stopping_csv(lat, reps, out / "stopping.csv", dg)
    t_min = analysis.admissible_t_prime(model.s, dec.gamma_ci[1], a["m0"], model.lam)
    t_prime = a["t_prime"] if a["t_prime"] is not None else t_min
    bounds, cond = [], None
    if t_prime < model.s:
        for k in range(1, a["k_max"] + 1):
            bounds.append(analysis.dimension_bound(lat, est, root, a["m0"], dec.gamma_ci[1], k, t_prime))
    else:
        cond = "gamma CI reaches 1; no admissible t' < s"
    last = bounds[-1] if bounds else None
    ld = analysis.local_dimension(est, lat, a["quantile"], a["n_boot"], cfg["seed"])
    with open(out / "local_slopes.csv", "w") as fh:
        fh.write(f"# config_digest: {dg}\nslope,weight\n")
        for s_, w_ in zip(ld.slopes, ld.weights):
            fh.write(f"{float(s_)!r},{float(w_)!r}\n")
    doc = {
        "config_digest": dg,
        "gamma_hat": dec.gamma_hat, "gamma_ci": list(dec.gamma_ci),
        "gamma_adverse": dec.gamma_adverse, "gamma_significant": dec.significant,
        "t_prime": t_prime if last else None, "t_prime_admissible_min": t_min,
        "t_bound": last.t if last else None,
        "content_bound": last.content_bound if last else None,
        "omega_excess": last.omega_excess if last else None,
        "certified": bool(last and last.certifies(a["tau"])), "tau": a["tau"],
        "dimension_bounds": [vars(b) for b in bounds], "condition": cond,
        "dim_hat": ld.dim_hat, "dim_ci": list(ld.ci), "s": model.s,
        "stopping_found": sum(r.found for r in reps),
        "stopping_significant": sum(r.significant for r in reps),
        "stopping_total": len(reps),
        "diagnostics": est.diagnostics(),
    }
    analysis.write_report_json(out / "report.json", doc)


def _read_csv(path):
    rows = []
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    head = lines[0].split(",")
    for ln in lines[1:]:
        rows.append(dict(zip(head, ln.split(","))))
    return rows


PLOT_STUB = '''"""Draw the figures from plotdata/*.csv (requires matplotlib)."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(sys.argv[1] if len(sys.argv) > 1 else ".")


def load(name):
    with open(here / name) as fh:
        return list(csv.DictReader(row for row in fh if not row.startswith("#")))


fig, ax = plt.subplots(1, 3, figsize=(12, 3.5))
d = load("decay_curve.csv")
ax[0].errorbar([int(r["k"]) for r in d], [float(r["S_k"]) for r in d],
               yerr=[float(r["S_k_ci_high"]) - float(r["S_k"]) for r in d], marker="o")
ax[0].set_yscale("log"); ax[0].set_xlabel("k"); ax[0].set_ylabel("S_k")
b = load("beta_histogram.csv")
ax[1].bar([float(r["bin_low"]) for r in b], [int(r["count"]) for r in b],
          width=[float(r["bin_high"]) - float(r["bin_low"]) for r in b], align="edge")
ax[1].set_xlabel("beta2")
s = load("dimension_slopes.csv")
ax[2].hist([float(r["slope"]) for r in s], weights=[float(r["weight"]) for r in s], bins=40)
ax[2].set_xlabel("local slope")
fig.tight_layout()
fig.savefig(here / "figures.png", dpi=120)
'''


def cmd_report(cfg, out, workers=1):
    dg = digest(cfg)
    require(out / "report.json", dg)
    with open(out / "report.json") as fh:
        rep = json.load(fh)
    pd = out / "plotdata"
    pd.mkdir(exist_ok=True)
    lines = [f"# Harmonic measure run `{dg}`", ""]
    if cfg["experiment"] == "disk_sanity":
        lines += ["## Disk oracle", "", rep["summary"], ""]
        (out / "report.md").write_text("\n".join(lines))
        return
    for name in ("betas.csv", "decay.csv", "stopping.csv", "local_slopes.csv"):
        require(out / name, dg)
    betas = _read_csv(out / "betas.csv")
    b2 = np.array([float(r["beta2"]) for r in betas])
    gens = [len(r["cube_id"]) - 1 for r in betas]
    per_gen = {}
    for g, v in zip(gens, b2):
        per_gen[g] = min(per_gen.get(g, math.inf), v)
    hole = [(r["cube_id"], float(r["beta_inf"]) + float(r["beta_hole"])) for r in betas
            if r["beta_hole"] != "nan"]
    decay = _read_csv(out / "decay.csv")
    stop = _read_csv(out / "stopping.csv")
    bsum = _read_csv(out / "beta_sums.csv") if (out / "beta_sums.csv").exists() else []

    lines += ["## Non-flatness", "",
              f"- delta0_hat (beta2, min over {len(b2)} cubes): {b2.min():.6f}",
              "- per-generation minima: " + ", ".join(f"g{g}={v:.6f}" for g, v in sorted(per_gen.items()))]
    if hole:
        lines.append(f"- min beta_inf + beta_hole over {len(hole)} cubes: {min(v for _, v in hole):.6f}")
    if bsum:
        rat = [float(r["ratio"]) for r in bsum]
        lines.append(f"- beta_inf vs beta_1 sums, ratio for N=1..{len(rat)}: "
                     + ", ".join(f"{v:.4f}" for v in rat) + f" (max/min {max(rat) / min(rat):.3f})")
    lines += ["", "## Decay of sum sqrt(omega mu)", "", "| k | S_k | CI low | CI high |", "|---|---|---|---|"]
    for r in decay:
        lines.append(f"| {r['k']} | {float(r['S_k']):.6f} | {float(r['S_k_ci_low']):.6f} | "
                     f"{float(r['S_k_ci_high']):.6f} |")
    g = rep["gamma_hat"]
    lo, hi = rep["gamma_ci"]
    lines += ["", f"- gamma_hat = {g:.5f}, 95% CI [{lo:.5f}, {hi:.5f}], adverse {rep['gamma_adverse']:.5f}"
              f" -> {'decay significant' if rep['gamma_significant'] else 'no significant decay'}", ""]
    lines += ["## Stopping cubes", "",
              f"- found: {rep['stopping_found']} / {rep['stopping_total']}, significant: "
              f"{rep['stopping_significant']}", ""]
    lines += ["## Dimension bound", ""]
    if rep["t_bound"] is not None:
        lines += [f"- t' = {rep['t_prime']:.5f} (admissible from {rep['t_prime_admissible_min']:.5f}),"
                  f" t = {rep['t_bound']:.5f} < s = {rep['s']:.5f}",
                  f"- content bound {rep['content_bound']:.4f}, omega excess {rep['omega_excess']:.4f},"
                  f" certified at tau={rep['tau']}: {rep['certified']}"]
    else:
        lines.append(f"- not available: {rep['condition']}")
    lines += [f"- local dimension (omega-weighted median slope): {rep['dim_hat']:.5f} "
              f"[{rep['dim_ci'][0]:.5f}, {rep['dim_ci'][1]:.5f}] vs s = {rep['s']:.5f}", ""]
    lines += ["Expected qualitatively: delta0_hat > 0, gamma below 1, some significant stopping "
              "cubes and a local dimension below s.", ""]
    (out / "report.md").write_text("\n".join(lines))

    with open(pd / "decay_curve.csv", "w") as fh:
        fh.write(f"# config_digest: {dg}\nk,S_k,S_k_ci_low,S_k_ci_high\n")
        for r in decay:
            fh.write(f"{r['k']},{r['S_k']},{r['S_k_ci_low']},{r['S_k_ci_high']}\n")
    counts, edges = np.histogram(b2, bins=20)
    with open(pd / "beta_histogram.csv", "w") as fh:
        fh.write(f"# config_digest: {dg}\nbin_low,bin_high,count\n")
        for c, a_, b_ in zip(counts, edges[:-1], edges[1:]):
            fh.write(f"{a_!r},{b_!r},{int(c)}\n")
    with open(pd / "dimension_slopes.csv", "w") as fh, open(out / "local_slopes.csv") as src:
        fh.write(f"# config_digest: {dg}\n")
        fh.writelines(ln for ln in src if not ln.startswith("#"))
    (pd / "plot_figures.py").write_text(PLOT_STUB)


COMMANDS = {"generate": cmd_generate, "betas": cmd_betas, "harmonic": cmd_harmonic,
            "analyze": cmd_analyze, "report": cmd_report}


def build_parser():
    p = argparse.ArgumentParser(prog="hml", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=list(COMMANDS) + ["all"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    workers = args.workers or int(os.environ.get("HML_WORKERS", "1"))
    try:
        cfg = load_config(args.config, args.seed)
        out = Path(args.out)
        stages = list(COMMANDS) if args.command == "all" else [args.command]
        for st in stages:
            COMMANDS[st](cfg, out, workers)
    except HmlError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
