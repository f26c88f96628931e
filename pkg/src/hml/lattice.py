"""Dyadic cube hierarchy on the attractor.

For a strongly separated IFS the cylinder tree already has every property
asked of a David-Mattila lattice: generation-k cubes are the depth-k
cylinders, ``l(Q) = lam**k * diam(E)`` and ``mu(Q) = N**-k``. A cube is
addressed by ``(generation, index)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import kernels
from .errors import BadRatio, CapExceeded, DepthExceeded, InsufficientDepth
from .fractal import DEFAULT_CAP, cylinder_points

LATTICE_MAX_RATIO = 1.0 / 3.0


@dataclass(frozen=True)
class DyadicCube:
    id: tuple
    word: tuple
    generation: int
    center: np.ndarray
    side: float
    mu_mass: Fraction
    parent_id: tuple | None
    child_ids: tuple


class CubeLattice:
    def __init__(self, model, max_depth, centers):
        self.model = model
        self.max_depth = max_depth
        self.centers = centers
        self.ell0 = model.lam
        self.sides = model.diam * model.lam ** np.arange(max_depth + 1, dtype=float)
        # E \ Q lies at least lam**(k-1) * gap from a generation-k cube Q
        self.c_inner = min(1.0, model.gap / (model.lam * model.diam))

    @property
    def N(self):
        return self.model.N

    def n_cubes(self, generation):
        return self.N ** generation

    def ids(self, generation):
        return [(generation, i) for i in range(self.n_cubes(generation))]

    def all_ids(self, gmin=0, gmax=None):
        gmax = self.max_depth if gmax is None else gmax
        return [cid for g in range(gmin, gmax + 1) for cid in self.ids(g)]

    def side(self, cid):
        return float(self.sides[cid[0]])

    def center(self, cid):
        return self.centers[cid[0]][cid[1]]

    def mass(self, cid):
        return Fraction(1, self.N ** cid[0])

    def mass_float(self, generation):
        return float(self.N) ** -generation

    def check(self, cid):
        g, i = cid
        if not 0 <= g <= self.max_depth or not 0 <= i < self.n_cubes(g):
            raise DepthExceeded(f"cube {cid} not in lattice of depth {self.max_depth}")

    def word(self, cid):
        g, i = cid
        digits = []
        for _ in range(g):
            i, r = divmod(i, self.N)
            digits.append(r)
        return tuple(reversed(digits))

    def label(self, cid):
        w = self.word(cid)
        if self.N <= 10:
            return "R" + "".join(str(d) for d in w)
        return "R" + ".".join(str(d) for d in w)

    def parse_label(self, label):
        body = label[1:]
        if not body:
            return (0, 0)
        digits = [int(c) for c in body] if self.N <= 10 else [int(c) for c in body.split(".")]
        idx = 0
        for dgt in digits:
            idx = idx * self.N + dgt
        return (len(digits), idx)

    def parent(self, cid):
        g, i = cid
        return None if g == 0 else (g - 1, i // self.N)

    def children(self, cid):
        g, i = cid
        if g >= self.max_depth:
            return ()
        return tuple((g + 1, i * self.N + j) for j in range(self.N))

    def ancestor(self, cid, generation):
        g, i = cid
        if generation > g:
            raise ValueError("ancestor generation below cube")
        return (generation, i // self.N ** (g - generation))

    def contains(self, outer, inner):
        return inner[0] >= outer[0] and self.ancestor(inner, outer[0]) == outer

    def cube(self, cid):
        self.check(cid)
        return DyadicCube(cid, self.word(cid), cid[0], self.center(cid), self.side(cid),
                          self.mass(cid), self.parent(cid), self.children(cid))

    def index_range(self, cid, generation):
        g, i = cid
        m = generation - g
        return i * self.N ** m, (i + 1) * self.N ** m

    def points_in(self, cid, sample):
        """Rows of a cylinder sample (in index order) lying in cube ``cid``."""
        lo, hi = self.index_range(cid, sample.source_depth)
        return sample.points[lo:hi], sample.weights[lo:hi]

    def cylinder_inverse(self, cid, X):
        """Map points through the inverse of the similarity onto cube ``cid``."""
        g = cid[0]
        scale = self.model.lam ** g
        shift = self.center(cid) - scale * self.model.base_point
        return (np.asarray(X, dtype=float) - shift) / scale

    def distance_to_cube(self, cid, X, tol=None):
        """dist(x, Q) using self-similarity: lam^k dist(f_Q^{-1}(x), E)."""
        g = cid[0]
        scale = self.model.lam ** g
        tol = 1e-9 * self.model.diam if tol is None else tol
        Y = np.ascontiguousarray(np.atleast_2d(self.cylinder_inverse(cid, X)))
        up, _, _, _ = kernels.distance_batch(Y, *self.model.kernel_args(0), 0.0, tol / scale)
        return scale * up


def build_lattice(model, max_depth, cap=DEFAULT_CAP):
    if model.lam >= LATTICE_MAX_RATIO:
        raise BadRatio(f"lattice mode needs lambda < 1/3, got {model.lam}")
    if max_depth < 0:
        raise ValueError("max_depth must be non-negative")
    if model.N ** max_depth > cap:
        raise CapExceeded(f"N^max_depth = {model.N ** max_depth} exceeds cap {cap}")
    centers = [cylinder_points(model, k, cap).points for k in range(max_depth + 1)]
    return CubeLattice(model, max_depth, centers)


def descendants(lattice, cid, j, k):
    """The family D_{j,k}(Q): descendants between j and k generations below Q."""
    if not 0 <= j <= k:
        raise ValueError("need 0 <= j <= k")
    lattice.check(cid)
    if cid[0] + k > lattice.max_depth:
        raise DepthExceeded(f"generation {cid[0] + k} beyond lattice depth {lattice.max_depth}")
    out = []
    for m in range(j, k + 1):
        lo, hi = lattice.index_range(cid, cid[0] + m)
        out.extend((cid[0] + m, i) for i in range(lo, hi))
    return out


def dilate(lattice, cid, factor):
    """Same-generation cubes P with dist(z_Q, P) <= factor * l(Q)."""
    if factor < 1:
        raise ValueError("dilation factor must be >= 1")
    lattice.check(cid)
    g = cid[0]
    z = lattice.center(cid)
    reach = factor * lattice.side(cid)
    C = lattice.centers[g]
    model = lattice.model
    # cylinder bounding balls: centre lam^g c0 + t_P, radius lam^g R0
    scale = model.lam ** g
    ball_c = C + scale * (model.center - model.base_point)
    ball_r = scale * model.radius
    cand = np.nonzero(np.linalg.norm(ball_c - z, axis=1) - ball_r <= reach * (1 + 1e-12))[0]
    out = []
    for i in cand:
        if i == cid[1]:
            out.append((g, int(i)))
            continue
        dist = lattice.distance_to_cube((g, int(i)), z[None, :])[0]
        if dist <= reach * (1 + 1e-12):
            out.append((g, int(i)))
    return sorted(out)


@dataclass(frozen=True)
class ThinBoundaryAudit:
    cube: tuple
    t: np.ndarray
    inner_mass: np.ndarray
    outer_mass: np.ndarray
    ball_mass: float
    eta_hat: float
    C1_hat: float

    @property
    def ratio(self):
        return self.inner_mass / self.ball_mass

    def rows(self):
        return list(zip(self.t.tolist(), (self.inner_mass / self.ball_mass).tolist(),
                        (self.outer_mass / self.ball_mass).tolist()))


def audit_thin_boundary(lattice, cid, t_grid, sample_depth=None, dilation=2.0):
    """Mass of the t-collars of Q against mu(C B_Q), with a fitted power law.

    The collar is {x in Q : dist(x, E minus Q) <= t l(Q)}; the fit uses its
    mass over mu(dilation * B_Q). The outer collar {x in E minus Q :
    dist(x, Q) <= t l(Q)} is reported alongside as a diagnostic.
    """
    lattice.check(cid)
    g = cid[0]
    if g + 2 > lattice.max_depth:
        raise InsufficientDepth(f"cube at generation {g} needs two generations below it")
    depth = lattice.max_depth if sample_depth is None else sample_depth
    if depth < g + 2:
        raise InsufficientDepth("sample depth must reach two generations below the cube")
    t = np.asarray(sorted(t_grid), dtype=float)
    ell = lattice.side(cid)
    model = lattice.model
    sample = cylinder_points(model, depth)
    lo, hi = lattice.index_range(cid, depth)
    inside = np.zeros(len(sample), bool)
    inside[lo:hi] = True
    X_in = sample.points[inside]
    X_out = sample.points[~inside]
    w = sample.weights[0]
    reach = t.max() * ell

    scale = model.lam ** g
    ball_c = lattice.centers[g] + scale * (model.center - model.base_point)
    ball_r = scale * model.radius
    z = lattice.center(cid)
    others = [i for i in range(lattice.n_cubes(g)) if i != cid[1]
              and np.linalg.norm(ball_c[i] - ball_c[cid[1]]) - 2 * ball_r <= reach]

    d_in = np.full(len(X_in), math.inf)
    for i in others:
        d_in = np.minimum(d_in, lattice.distance_to_cube((g, i), X_in))
    near = np.linalg.norm(X_out - ball_c[cid[1]], axis=1) - ball_r <= reach
    d_out = np.full(len(X_out), math.inf)
    if near.any():
        d_out[near] = lattice.distance_to_cube(cid, X_out[near])

    inner = np.array([(d_in <= tt * ell).sum() * w for tt in t])
    outer = np.array([(d_out <= tt * ell).sum() * w for tt in t])
    ball = float((np.linalg.norm(sample.points - z, axis=1) <= dilation * ell).sum() * w)

    ratio = inner / ball
    pos = ratio > 0
    if pos.sum() >= 2 and np.ptp(np.log(t[pos])) > 0:
        eta = float(np.polyfit(np.log(t[pos]), np.log(ratio[pos]), 1)[0])
        C1 = float(np.max(ratio[pos] / t[pos] ** eta))
    elif pos.sum() <= 1:
        # empty collars at all but at most one t: every exponent fits
        eta = math.inf
        C1 = float(ratio[pos].max()) if pos.any() else 0.0
    else:
        eta, C1 = math.nan, math.nan
    return ThinBoundaryAudit(cid, t, inner, outer, ball, eta, C1)


def write_cubes_csv(lattice, path, digest=None):
    """cubes.csv in breadth-first, branch-index order."""
    d = lattice.model.ambient_dim
    axes = "xyz"[:d]
    with open(path, "w", newline="") as fh:
        if digest:
            fh.write(f"# config_digest: {digest}\n")
        fh.write(",".join(["id", "parent_id", "generation", *[f"center_{a}" for a in axes],
                           "side", "mu_mass"]) + "\n")
        for g in range(lattice.max_depth + 1):
            side = repr(float(lattice.sides[g]))
            mass = repr(lattice.mass_float(g))
            for i in range(lattice.n_cubes(g)):
                cid = (g, i)
                par = lattice.parent(cid)
                row = [lattice.label(cid), "" if par is None else lattice.label(par), str(g),
                       *[repr(float(v)) for v in lattice.centers[g][i]], side, mass]
                fh.write(",".join(row) + "\n")
