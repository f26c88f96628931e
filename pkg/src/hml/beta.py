"""Multiscale flatness coefficients on balls and cubes.

beta2 is solved exactly by weighted PCA. beta_inf, beta_hole and beta1 use
an angle grid with the exact optimal offset per angle (Chebyshev midpoint,
line sampling, weighted median), and each reports a discretisation bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DepthExceeded, EmptyBall
from .fractal import IfsModel, MuSample, cylinder_points

DEFAULT_ANGLES = 720
DEFAULT_LINE_STEP = 1.0 / 256
HOLE_OFFSET_FRACTION = 0.5
BALL_SAMPLE_FACTOR = 32


@dataclass(frozen=True)
class LineParam:
    """Affine line (2D) or plane (3D). For planes ``direction`` holds the unit normal."""

    direction: np.ndarray
    anchor: np.ndarray
    is_plane: bool = False

    def distance(self, Y):
        rel = np.atleast_2d(Y) - self.anchor
        if self.is_plane:
            return np.abs(rel @ self.direction)
        proj = rel @ self.direction
        return np.linalg.norm(rel - proj[:, None] * self.direction, axis=1)

    def angle(self):
        if self.is_plane:
            return math.nan
        return math.atan2(self.direction[1], self.direction[0]) % math.pi

    def offset_from(self, x):
        """Signed distance of the line from ``x`` along the left normal of ``direction``."""
        if self.is_plane:
            return float((self.anchor - x) @ self.direction)
        nrm = np.array([-self.direction[1], self.direction[0]])
        return float((self.anchor - x) @ nrm)


def _line(angle, offset, x):
    u = np.array([math.cos(angle), math.sin(angle)])
    nrm = np.array([-u[1], u[0]])
    return LineParam(u, np.asarray(x, float) + offset * nrm)


@dataclass
class BetaRecord:
    target: object
    r: float
    beta2: float = math.nan
    beta_inf: float = math.nan
    beta_hole: float = math.nan
    beta1: float = math.nan
    lines: dict = field(default_factory=dict)
    grid_angles: int = 0
    err_bound: float = 0.0


def _as_weighted(sample):
    if isinstance(sample, MuSample):
        return sample.points, sample.weights
    if isinstance(sample, tuple):
        pts, w = sample
        return np.asarray(pts, float), np.asarray(w, float)
    pts = np.atleast_2d(np.asarray(sample, float))
    return pts, np.full(len(pts), 1.0 / max(len(pts), 1))


def _in_ball(pts, x, r):
    return np.linalg.norm(pts - np.asarray(x, float), axis=1) <= r * (1 + 1e-9)


def angle_grid(n):
    return np.arange(n) * (math.pi / n)


# --- beta_2 ---------------------------------------------------------------

def beta2_points(Y, w, r):
    """Exact L2 beta of weighted points ``Y`` at scale ``r``, with its best line/plane."""
    W = w.sum()
    c = (w @ Y) / W
    D = Y - c
    cov = (D * w[:, None]).T @ D / W
    vals, vecs = np.linalg.eigh(cov)
    # smallest eigenvalue = mean squared distance to the best hyperplane-through-centroid
    # in 2D that hyperplane is the line along the top eigenvector
    if Y.shape[1] == 2:
        line = LineParam(vecs[:, -1], c)
    else:
        line = LineParam(vecs[:, 0], c, is_plane=True)
    # residuals directly rather than sqrt(eigenvalue): avoids sqrt-of-roundoff near zero
    lam_min = float(w @ line.distance(Y) ** 2) / W
    return math.sqrt(lam_min) / r, line


def beta2_ball(sample, x, r):
    pts, w = _as_weighted(sample)
    inside = _in_ball(pts, x, r)
    if not inside.any() or w[inside].sum() <= 0:
        raise EmptyBall(f"no sample mass in B({np.asarray(x).tolist()}, {r})")
    return beta2_points(pts[inside], w[inside], r)


# --- beta_inf -------------------------------------------------------------

def beta_inf_points(Y, r, n_angles=DEFAULT_ANGLES, x=None):
    if Y.shape[1] != 2:
        raise ValueError("beta_inf is planar only")
    x = Y.mean(axis=0) if x is None else np.asarray(x, float)
    th = angle_grid(n_angles)
    nrm = np.stack([-np.sin(th), np.cos(th)], axis=1)
    P = (Y - x) @ nrm.T
    lo, hi = P.min(axis=0), P.max(axis=0)
    half = 0.5 * (hi - lo)
    k = int(np.argmin(half))
    ext = float(np.max(np.linalg.norm(Y - x, axis=1)))
    err = (math.pi / (2 * n_angles)) * ext / r
    return float(half[k]) / r, _line(th[k], 0.5 * (lo[k] + hi[k]), x), err


def beta_inf_ball(E_sample, x, r, angle_grid=DEFAULT_ANGLES):
    pts, _ = _as_weighted(E_sample)
    inside = _in_ball(pts, x, r)
    if not inside.any():
        raise EmptyBall(f"no sample points in B({np.asarray(x).tolist()}, {r})")
    val, line, _ = beta_inf_points(pts[inside], r, angle_grid, x)
    return val, line


# --- beta_hole ------------------------------------------------------------

def _hole_grid(r, angle_grid, line_step, offset_step):
    angles = np.arange(angle_grid) * (math.pi / angle_grid)
    n_off = int(math.ceil(2 * HOLE_OFFSET_FRACTION / offset_step)) + 1
    offsets = np.linspace(-HOLE_OFFSET_FRACTION * r, HOLE_OFFSET_FRACTION * r, n_off)
    n_samp = int(math.ceil(2.0 / line_step)) + 1
    return angles, offsets, n_samp


def hole_error_bound(angle_grid, line_step, offset_step=None):
    # sampling along the chord, offset spacing and angle spacing each move the sup
    return line_step / 2 + (offset_step or line_step) / 2 + math.pi / (2 * angle_grid)


def beta_hole_ball(E_sample, x, r, oracle=None, angle_grid=DEFAULT_ANGLES,
                   line_step=DEFAULT_LINE_STEP, offset_step=None):
    """Grid approximation of inf_L sup_{z in L cap B} dist(z, E) / r.

    Lines range over ``|offset| <= r/2`` so every chord has length at least
    ``sqrt(3) r``. ``oracle`` may be an ``IfsModel`` (exact distance to the
    attractor) or None, in which case distances go to the point sample.
    """
    x = np.asarray(x, float)
    if x.size != 2:
        raise ValueError("beta_hole is planar only")
    angles, offsets, n_samp = _hole_grid(r, angle_grid, line_step, offset_step or line_step)
    if isinstance(oracle, IfsModel):
        c0, R0, scales, offs, e, npow, _ = oracle.kernel_args(0)
        atol = 1e-6 * r
        val, a, o = kernels.hole_lines(x, float(r), angles, offsets, n_samp, c0, R0, scales,
                                       offs, e, npow, 0.0, atol)
        return float(val), _line(a, o, x)
    from scipy.spatial import cKDTree

    pts, _ = _as_weighted(E_sample)
    tree = cKDTree(pts)
    t = np.linspace(-1.0, 1.0, n_samp)
    half = np.sqrt(np.maximum(0.0, r * r - offsets ** 2))
    best, best_a, best_o = math.inf, 0.0, 0.0
    for a in angles:
        u = np.array([math.cos(a), math.sin(a)])
        nrm = np.array([-u[1], u[0]])
        Z = (x + offsets[:, None, None] * nrm + (half[:, None] * t)[:, :, None] * u).reshape(-1, 2)
        d, _ = tree.query(Z)
        worst = d.reshape(len(offsets), -1).max(axis=1) / r
        k = int(np.argmin(worst))
        if worst[k] < best:
            best, best_a, best_o = float(worst[k]), float(a), float(offsets[k])
    return best, _line(best_a, best_o, x)


# --- beta_1 ---------------------------------------------------------------

def _weighted_median_rows(P, w):
    """Weighted median of each row of ``P`` (shared weights ``w``)."""
    order = np.argsort(P, axis=1, kind="stable")
    Ps = np.take_along_axis(P, order, axis=1)
    cw = np.cumsum(w[order], axis=1)
    k = (cw < 0.5 * cw[:, -1:]).sum(axis=1)
    return Ps[np.arange(P.shape[0]), k]


def beta1_points(Y, w, ell, mass_norm, n_angles=DEFAULT_ANGLES, x=None, chunk=64):
    """(1 / mass_norm) * sum w |dist(y, L)| / ell, minimised over an angle grid."""
    x = Y.mean(axis=0) if x is None else np.asarray(x, float)
    th = angle_grid(n_angles)
    best, best_k, best_m = math.inf, 0, 0.0
    for s in range(0, n_angles, chunk):
        tt = th[s:s + chunk]
        nrm = np.stack([-np.sin(tt), np.cos(tt)], axis=1)
        P = nrm @ (Y - x).T
        m = _weighted_median_rows(P, w)
        vals = np.abs(P - m[:, None]) @ w
        k = int(np.argmin(vals))
        if vals[k] < best:
            best, best_k, best_m = float(vals[k]), s + k, float(m[k])
    ext = float(np.max(np.linalg.norm(Y - x, axis=1)))
    err = (math.pi / (2 * n_angles)) * ext * w.sum() / (mass_norm * ell)
    return best / (mass_norm * ell), _line(th[best_k], best_m, x), err


def normalized_length(lattice, cid):
    """(l(Q) / diam E)^s: the Hausdorff-content scale with mu(E) normalised to 1."""
    return (lattice.side(cid) / lattice.model.diam) ** lattice.model.s


def _cube_sample(lattice, cid, depth):
    pts = lattice.centers[depth] if depth <= lattice.max_depth else None
    if pts is None:
        pts = cylinder_points(lattice.model, depth).points
    lo, hi = lattice.index_range(cid, depth)
    w = np.full(hi - lo, float(lattice.N) ** -depth)
    return pts[lo:hi], w


def beta1_cube(lattice, sample, Q, angle_grid=DEFAULT_ANGLES):
    """beta_1 of cube ``Q`` from a cylinder sample of depth >= generation(Q) + 2."""
    lattice.check(Q)
    depth = sample.source_depth
    if depth < Q[0] + 2:
        raise DepthExceeded(f"sample depth {depth} < generation {Q[0]} + 2")
    lo, hi = lattice.index_range(Q, depth)
    Y, w = sample.points[lo:hi], sample.weights[lo:hi]
    val, line, _ = beta1_points(Y, w, lattice.side(Q), normalized_length(lattice, Q),
                                angle_grid, lattice.center(Q))
    return val, line


def beta_inf_cube(lattice, sample, Q, angle_grid=DEFAULT_ANGLES):
    """sup over the cube's own points, normalised by l(Q)."""
    lattice.check(Q)
    lo, hi = lattice.index_range(Q, sample.source_depth)
    val, line, _ = beta_inf_points(sample.points[lo:hi], lattice.side(Q), angle_grid,
                                   lattice.center(Q))
    return val, line


# --- scans ----------------------------------------------------------------

def ball_sample_depth(model, r, factor=BALL_SAMPLE_FACTOR):
    """Smallest depth D with lam^D diam <= r / factor."""
    D = math.ceil(math.log(factor * model.diam / r) / math.log(1 / model.lam) - 1e-12)
    return max(0, D)


class BallSampler:
    """Points of cylinder samples inside balls centred near E, cached per depth."""

    def __init__(self, model, cap=1 << 22):
        self.model = model
        self.cap = cap
        self._cache = {}

    def sample(self, depth):
        if depth not in self._cache:
            self._cache[depth] = cylinder_points(self.model, depth, self.cap)
        return self._cache[depth]

    def ball(self, x, r, depth=None):
        model = self.model
        depth = ball_sample_depth(model, r) if depth is None else depth
        S = self.sample(depth)
        # coarse generation whose cylinders are about the ball's size
        g = min(depth, max(0, int(math.floor(math.log(model.diam / r) / math.log(1 / model.lam)))))
        C = self.sample(g).points
        scale = model.lam ** g
        bc = C + scale * (model.center - model.base_point)
        cand = np.nonzero(np.linalg.norm(bc - x, axis=1) <= r + scale * model.radius)[0]
        per = model.N ** (depth - g)
        idx = (cand[:, None] * per + np.arange(per)[None, :]).ravel()
        P = S.points[idx]
        keep = _in_ball(P, x, r)
        return P[keep], S.weights[idx][keep], depth


def _ball_record(sampler, x, r, target, which, angle_grid, line_step, model):
    Y, w, _ = sampler.ball(x, r)
    if len(Y) == 0:
        raise EmptyBall(f"no sample mass near {target}")
    rec = BetaRecord(target, r, grid_angles=angle_grid)
    rec.beta2, rec.lines["beta2"] = beta2_points(Y, w, r)
    if which in ("beta_inf_plus_hole", "all") and model.ambient_dim == 2:
        rec.beta_inf, rec.lines["beta_inf"], err = beta_inf_points(Y, r, angle_grid, x)
        rec.beta_hole, rec.lines["beta_hole"] = beta_hole_ball(
            None, x, r, oracle=model, angle_grid=angle_grid, line_step=line_step)
        rec.err_bound = err + hole_error_bound(angle_grid, line_step)
    if which == "all" and model.ambient_dim == 2:
        rec.beta1, rec.lines["beta1"], _ = beta1_points(Y, w, r, (r / model.diam) ** model.s,
                                                        angle_grid, x)
    return rec


def scan_nonflatness(lattice, which="beta2", depth_range=None, angle_grid=DEFAULT_ANGLES,
                     line_step=DEFAULT_LINE_STEP, sampler=None):
    """Evaluate the chosen coefficient on B(z_Q, l(Q)) for every cube in range.

    Returns ``(delta0_hat, argmin_cube, records)`` with records sorted by cube id.
    """
    if which not in ("beta2", "beta_inf_plus_hole", "all"):
        raise ValueError(f"unknown coefficient {which!r}")
    lo, hi = (0, lattice.max_depth) if depth_range is None else depth_range
    if lo < 0 or hi > lattice.max_depth:
        raise DepthExceeded(f"depth range {lo}..{hi} outside lattice")
    model = lattice.model
    sampler = sampler or BallSampler(model)
    records = []
    for cid in lattice.all_ids(lo, hi):
        rec = _ball_record(sampler, lattice.center(cid), lattice.side(cid), cid, which,
                           angle_grid, line_step, model)
        records.append(rec)
    key = (lambda r: r.beta2) if which == "beta2" else (lambda r: r.beta_inf + r.beta_hole)
    vals = np.array([key(r) for r in records])
    k = int(np.argmin(vals))
    return float(vals[k]), records[k].target, records


def generation_minima(lattice, records, which="beta2"):
    key = (lambda r: r.beta2) if which == "beta2" else (lambda r: r.beta_inf + r.beta_hole)
    out = {}
    for rec in records:
        g = rec.target[0]
        out[g] = min(out.get(g, math.inf), key(rec))
    return out


def cube_betas(lattice, sample, Q, angle_grid=DEFAULT_ANGLES):
    """beta_inf and beta_1 of a cube from its own sample points."""
    bi, li = beta_inf_cube(lattice, sample, Q, angle_grid)
    b1, l1 = beta1_cube(lattice, sample, Q, angle_grid)
    return bi, b1, li, l1


@dataclass(frozen=True)
class BetaSumResult:
    N: int
    lhs: float
    rhs_beta_term: float
    rhs_scale_term: float

    @property
    def ratio(self):
        return self.lhs / (self.rhs_beta_term + self.rhs_scale_term)


def beta_sum_check(lattice, R, N, angle_grid=DEFAULT_ANGLES, sample_offset=4):
    """sum beta_inf(Q)^2 l(Q)^s against sum beta_1(Q)^2 l(Q)^s + l(R)^s over D_{0,N}(R).

    Lengths enter as (l/diam)^s so the scale term is mu-normalised; beta
    values are computed from each cube's own cylinder sample,
    ``sample_offset`` generations below it (capped at ``max_depth``).
    """
    lattice.check(R)
    if R[0] + N > lattice.max_depth - 2:
        raise DepthExceeded(f"generation {R[0]} + {N} exceeds max_depth - 2 = {lattice.max_depth - 2}")
    model = lattice.model
    samples = {}
    lhs = rb = 0.0
    for m in range(N + 1):
        g = R[0] + m
        depth = min(lattice.max_depth, g + sample_offset)
        if depth not in samples:
            samples[depth] = cylinder_points(model, depth)
        S = samples[depth]
        lo, hi = lattice.index_range(R, g)
        for i in range(lo, hi):
            Q = (g, i)
            bi, b1, _, _ = cube_betas(lattice, S, Q, angle_grid)
            ls = normalized_length(lattice, Q)
            lhs += bi * bi * ls
            rb += b1 * b1 * ls
    return BetaSumResult(N, lhs, rb, normalized_length(lattice, R))


def write_betas_csv(lattice, records, path, digest=None):
    with open(path, "w", newline="") as fh:
        if digest:
            fh.write(f"# config_digest: {digest}\n")
        fh.write("cube_id,r,beta2,beta_inf,beta_hole,beta1,line_angle,line_offset,grid_angles,err_bound\n")
        for rec in records:
            line = rec.lines.get("beta2")
            ang = line.angle() if line is not None else math.nan
            off = line.offset_from(lattice.center(rec.target)) if line is not None else math.nan
            vals = [rec.r, rec.beta2, rec.beta_inf, rec.beta_hole, rec.beta1, ang, off]
            fh.write(",".join([lattice.label(rec.target), *[repr(float(v)) for v in vals],
                               str(rec.grid_angles), repr(float(rec.err_bound))]) + "\n")
