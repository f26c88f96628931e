"""Walk-on-spheres estimates of harmonic measure on lattice cubes.

Each walker starts at the pole (or uniformly on a far sphere, which is the
pole at infinity), jumps to a uniform point on the sphere of radius
``shrink * dist(x, E)``, and is absorbed once ``dist(x, E) <= eps``. The
absorbed walker is credited to the deepest lattice cube owning its nearest
point of E. Outside the sphere of radius ``r_escape * diam`` the walker is
moved straight to its exact hitting point on that sphere.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .errors import ConfigError, NoAbsorption

Z95 = float(stats.norm.ppf(0.975))
CHUNK = 1 << 16


@dataclass
class WalkConfig:
    """Walker parameters. ``eps`` is in units of diam(E); None means lam^(max_depth+2)."""

    n_walkers: int = 100_000
    seed: int = 0
    n_workers: int = 1
    eps: float | None = None
    shrink: float = 0.95
    pole_mode: str = "far_sphere"
    pole: tuple | None = None
    radius_factor: float = 10.0
    r_escape: float = 5.0
    step_cap: float = 8.0
    max_steps: int = 100_000
    rtol: float = 0.05

    def validate(self):
        if self.n_walkers <= 0:
            raise ConfigError("n_walkers must be positive")
        if not 0.9 <= self.shrink < 1.0:
            raise ConfigError(f"shrink={self.shrink} outside [0.9, 1)")
        if self.r_escape <= 4:
            raise ConfigError(f"r_escape={self.r_escape} must exceed 4")
        if self.eps is not None and self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.pole_mode not in ("far_sphere", "finite_pole"):
            raise ConfigError(f"unknown pole_mode {self.pole_mode!r}")
        if self.pole_mode == "finite_pole" and self.pole is None:
            raise ConfigError("finite_pole needs a pole")
        if self.pole_mode == "far_sphere" and self.radius_factor < 1:
            raise ConfigError("radius_factor must be >= 1")
        if not 0 <= self.rtol < 0.5:
            raise ConfigError("rtol must lie in [0, 0.5)")
        if self.max_steps <= 0 or self.step_cap <= 0:
            raise ConfigError("max_steps and step_cap must be positive")
        return self

    def resolved_eps(self, model, max_depth):
        eps = self.eps if self.eps is not None else model.lam ** (max_depth + 2)
        return eps * model.diam

    def to_json(self):
        d = asdict(self)
        d["pole"] = None if self.pole is None else [float(v) for v in self.pole]
        return d


def wilson(hits, total, z=Z95):
    """Wilson score interval for a binomial proportion (vectorised)."""
    hits = np.asarray(hits, float)
    total = np.asarray(total, float)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = hits / total
        den = 1 + z * z / total
        mid = (p + z * z / (2 * total)) / den
        half = z * np.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / den
    lo = np.clip(mid - half, 0.0, 1.0)
    hi = np.clip(mid + half, 0.0, 1.0)
    # guard the point estimate against rounding at the ends
    return np.minimum(lo, p), np.maximum(hi, p)


@dataclass
class OmegaEstimate:
    """Per-generation hit counts aggregated up from the deepest cubes.

    For synthetic measures ``masses`` holds exact per-generation omega and
    ``total`` is None; intervals then collapse to the point.
    """

    depth: int
    N: int
    hits: list
    total: int | None
    escaped: int = 0
    truncated: int = 0
    mean_steps: float = 0.0
    masses: list | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_leaf_hits(cls, leaf_hits, N, depth, **diag):
        leaf = np.asarray(leaf_hits, np.int64)
        if leaf.size != N ** depth:
            raise ValueError("leaf hit vector has the wrong length")
        hits = [leaf]
        for _ in range(depth):
            hits.append(hits[-1].reshape(-1, N).sum(axis=1))
        hits.reverse()
        return cls(depth, N, hits, int(leaf.sum()), **diag)

    @classmethod
    def from_leaf_masses(cls, leaf_masses, N, depth):
        leaf = np.asarray(leaf_masses, float)
        leaf = leaf / leaf.sum()
        masses = [leaf]
        for _ in range(depth):
            masses.append(masses[-1].reshape(-1, N).sum(axis=1))
        masses.reverse()
        return cls(depth, N, None, None, masses=masses)

    @property
    def synthetic(self):
        return self.masses is not None

    def omega_gen(self, g):
        if self.synthetic:
            return self.masses[g]
        return self.hits[g] / self.total

    def ci_gen(self, g):
        if self.synthetic:
            return self.masses[g], self.masses[g]
        return wilson(self.hits[g], self.total)

    def hits_gen(self, g):
        if self.synthetic:
            return np.where(self.masses[g] > 0, 1, 0)
        return self.hits[g]

    def omega(self, cid):
        return float(self.omega_gen(cid[0])[cid[1]])

    def ci(self, cid):
        lo, hi = self.ci_gen(cid[0])
        return float(lo[cid[1]]), float(hi[cid[1]])

    def n_hits(self, cid):
        return int(self.hits_gen(cid[0])[cid[1]])

    def diagnostics(self):
        return {"total_absorbed": self.total, "escaped_count": self.escaped,
                "truncated_count": self.truncated, "mean_steps": self.mean_steps}


def _walk_arrays(model, lattice_depth, cfg):
    eps = cfg.resolved_eps(model, lattice_depth)
    diam = model.diam
    center = model.center
    if cfg.pole_mode == "finite_pole":
        mode = kernels.START_POLE
        pole = np.asarray(cfg.pole, float)
        if pole.size != model.ambient_dim:
            raise ConfigError("pole dimension does not match the model")
    else:
        mode = kernels.START_SPHERE
        pole = np.zeros(model.ambient_dim)
    return dict(mode=mode, pole=pole, center=center, far=cfg.radius_factor * diam,
                R_out=cfg.r_escape * diam, eps=eps, step_cap=cfg.step_cap * diam)


def run_walkers(model, lattice, cfg, backend=None, progress=None):
    """Estimate omega on every cube of ``lattice``."""
    cfg.validate()
    depth = lattice.max_depth
    a = _walk_arrays(model, depth, cfg)
    kargs = model.kernel_args(depth)
    kernels.set_threads(cfg.n_workers)
    cells = np.empty(cfg.n_walkers, np.int64)
    steps = np.empty(cfg.n_walkers, np.int64)
    escapes = np.empty(cfg.n_walkers, np.int64)
    for s in range(0, cfg.n_walkers, CHUNK):
        n = min(CHUNK, cfg.n_walkers - s)
        c, st, es = kernels.walk(kernels.KIND_IFS, n, s, np.uint64(cfg.seed), a["mode"], a["pole"],
                                 a["center"], a["far"], a["R_out"], a["eps"], cfg.shrink,
                                 a["step_cap"], cfg.max_steps, cfg.rtol, *kargs, 0,
                                 backend=backend)
        cells[s:s + n], steps[s:s + n], escapes[s:s + n] = c, st, es
        if progress:
            progress(s + n, cfg.n_walkers)
    truncated = int((cells < 0).sum())
    if truncated > cfg.n_walkers // 2:
        raise NoAbsorption(f"{truncated} of {cfg.n_walkers} walkers hit max_steps={cfg.max_steps}")
    leaf = np.bincount(cells[cells >= 0], minlength=model.N ** depth)
    est = OmegaEstimate.from_leaf_hits(leaf, model.N, depth, escaped=int(escapes.sum()),
                                       truncated=truncated, mean_steps=float(steps.mean()))
    est.meta = {"eps_abs": a["eps"], "R_out": a["R_out"], "far_radius": a["far"]}
    return est


@dataclass(frozen=True)
class DiskResult:
    counts: np.ndarray
    n_walkers: int
    absorbed: int
    chi2: float
    chi2_crit: float
    max_sigma: float
    upper_half: float
    upper_sigma: float
    seconds: float

    @property
    def passed(self):
        return self.chi2 < self.chi2_crit and self.max_sigma <= 4.0

    def line(self):
        return (f"disk oracle: {len(self.counts)} arcs, chi2={self.chi2:.2f} "
                f"(99.9% crit {self.chi2_crit:.2f}), max |z|={self.max_sigma:.2f} -> "
                f"{'PASS' if self.passed else 'FAIL'}")


def run_disk(n_walkers=100_000, eps=1e-3, seed=0, n_arcs=16, shrink=0.95, n_workers=1,
             backend=None):
    """Unit-circle oracle: pole at the centre, so every arc has harmonic measure 1/n_arcs."""
    kernels.set_threads(n_workers)
    d2 = np.zeros(2)
    dummy = (d2, 1.0, np.ones(2), np.zeros((2, 2)), d2, np.ones(1, np.int64), 0)
    t0 = time.perf_counter()
    cells, _, _ = kernels.walk(kernels.KIND_CIRCLE, n_walkers, 0, np.uint64(seed),
                               kernels.START_POLE, d2, d2, 10.0, 5.0, eps, shrink, 8.0,
                               100_000, 0.0, *dummy, n_arcs, backend=backend)
    secs = time.perf_counter() - t0
    ok = cells >= 0
    counts = np.bincount(cells[ok], minlength=n_arcs)
    n = int(ok.sum())
    p = 1.0 / n_arcs
    expect = n * p
    chi2 = float(((counts - expect) ** 2 / expect).sum())
    crit = float(stats.chi2.ppf(0.999, n_arcs - 1))
    sig = math.sqrt(n * p * (1 - p))
    zmax = float(np.max(np.abs(counts - expect)) / sig)
    up = float(counts[: n_arcs // 2].sum()) / n
    up_sig = abs(up - 0.5) / math.sqrt(0.25 / n)
    return DiskResult(counts, n_walkers, n, chi2, crit, zmax, up, up_sig, secs)


@dataclass(frozen=True)
class PoleConsistency:
    generation: int
    poles: list
    omegas: np.ndarray
    max_log_ratio: float
    chi2: float
    p_value: float

    @property
    def agree(self):
        # joint 95% test of equal cube distributions
        return self.p_value >= 0.05


def pole_consistency(model, lattice, cfg, poles, generation=2, backend=None):
    """Run one walk per pole and compare generation-``generation`` omega vectors.

    A pole given as the string ``"infinity"`` uses far-sphere launching.
    Agreement is a chi-square homogeneity test on the hit counts.
    """
    if generation > lattice.max_depth:
        raise ConfigError("generation beyond lattice depth")
    runs = []
    for p in poles:
        if isinstance(p, str):
            c = WalkConfig(**{**asdict(cfg), "pole_mode": "far_sphere", "pole": None})
        else:
            from .fractal import distance_to_E

            if distance_to_E(model, np.asarray(p, float)) < model.diam:
                raise ConfigError(f"pole {list(p)} closer than diam(E) to E")
            c = WalkConfig(**{**asdict(cfg), "pole_mode": "finite_pole", "pole": tuple(p)})
        runs.append(run_walkers(model, lattice, c, backend=backend))
    H = np.array([r.hits[generation] for r in runs], dtype=float)
    om = H / H.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        lr = np.abs(np.log(om[:, None, :]) - np.log(om[None, :, :]))
    keep = H.sum(axis=0) > 0
    chi2, pval, _, _ = stats.chi2_contingency(H[:, keep])
    return PoleConsistency(generation, [p if isinstance(p, str) else list(map(float, p)) for p in poles],
                           om, float(lr.max()), float(chi2), float(pval))


def write_omega_csv(lattice, est, path, digest=None):
    with open(path, "w", newline="") as fh:
        if digest:
            fh.write(f"# config_digest: {digest}\n")
        fh.write("cube_id,generation,hits,total,omega_hat,ci_low,ci_high\n")
        for g in range(est.depth + 1):
            om = est.omega_gen(g)
            lo, hi = est.ci_gen(g)
            h = est.hits_gen(g)
            for i in range(len(om)):
                fh.write(f"{lattice.label((g, i))},{g},{int(h[i])},{est.total},"
                         f"{float(om[i])!r},{float(lo[i])!r},{float(hi[i])!r}\n")


def read_omega_csv(path, lattice):
    """Inverse of ``write_omega_csv``; returns an OmegaEstimate from the leaf counts."""
    leaf = np.zeros(lattice.N ** lattice.max_depth, np.int64)
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("cube_id"):
                continue
            cid, g, hits = line.split(",")[:3]
            if int(g) == lattice.max_depth:
                leaf[lattice.parse_label(cid)[1]] = int(hits)
    return OmegaEstimate.from_leaf_hits(leaf, lattice.N, lattice.max_depth)


def write_run_meta(path, cfg, est, digest=None, extra=None):
    doc = {"config_digest": digest, "walk_config": cfg.to_json(), "diagnostics": est.diagnostics(),
           **est.meta, **(extra or {})}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
