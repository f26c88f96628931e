"""Self-similar Ahlfors-regular sets generated by equicontractive IFS.

A model is a list of maps ``x -> lam * x + b_i`` sharing one ratio. Its
attractor E carries the natural measure giving mass ``N**-k`` to every
depth-k cylinder. Cylinder words are ordered with the first letter most
significant, so the depth-k cylinder ``w`` has integer index
``sum(w_j * N**(k-1-j))``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BadRatio, CapExceeded, SeparationViolation

FAMILIES = ("corner_cantor_2d", "corner_cantor_3d", "custom")
DEFAULT_SEP_MIN = 0.05
DEFAULT_CAP = 1 << 22


@dataclass(frozen=True)
class SimilarityMap:
    ratio: float
    offset: np.ndarray

    def __call__(self, x):
        return self.ratio * np.asarray(x, dtype=float) + self.offset

    @property
    def fixed_point(self):
        return self.offset / (1.0 - self.ratio)


@dataclass(frozen=True)
class MuSample:
    points: np.ndarray
    weights: np.ndarray
    source_depth: int

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True, eq=False)
class IfsModel:
    family: str
    ambient_dim: int
    maps: tuple
    lam: float
    s: float
    C0: float
    bbox: np.ndarray
    diam: float
    gap: float
    _offsets: np.ndarray = field(repr=False)

    @property
    def N(self):
        return len(self.maps)

    @property
    def offsets(self):
        return self._offsets

    @property
    def base_point(self):
        """Fixed point of the first map; every cylinder representative is its image."""
        return self.maps[0].fixed_point

    @property
    def center(self):
        return 0.5 * (self.bbox[0] + self.bbox[1])

    @property
    def radius(self):
        return 0.5 * float(np.linalg.norm(self.bbox[1] - self.bbox[0]))

    def kernel_args(self, assign_depth=0):
        c0 = self.center
        scales = self.lam ** np.arange(kernels.STACK_LEVELS + 2, dtype=float)
        offs = (self.lam * c0 + self._offsets) - c0
        e = self.base_point - c0
        npow = np.array([self.N ** k for k in range(assign_depth + 1)], dtype=np.int64)
        return (c0, self.radius, scales, offs, e, npow, int(assign_depth))

    def to_json(self):
        return {
            "family": self.family,
            "ambient_dim": self.ambient_dim,
            "lambda": self.lam,
            "maps": [{"ratio": m.ratio, "offset": [float(v) for v in m.offset]} for m in self.maps],
            "s": self.s,
            "C0": self.C0,
            "bbox": [[float(v) for v in row] for row in self.bbox],
        }


def _corner_offsets(dim, lam):
    # branch index i = b_0 + 2 b_1 + 4 b_2 with b_j in {0, 1}
    rows = []
    for i in range(2 ** dim):
        rows.append([(1.0 - lam) * ((i >> j) & 1) for j in range(dim)])
    return np.array(rows, dtype=float)


def _box_gap(lo_a, hi_a, lo_b, hi_b):
    sep = np.maximum(0.0, np.maximum(lo_a - hi_b, lo_b - hi_a))
    return float(np.linalg.norm(sep))


def _overlap(lo_a, hi_a, lo_b, hi_b):
    return bool(np.all(np.minimum(hi_a, hi_b) - np.maximum(lo_a, lo_b) > 0))


def build_ifs(family, lam=None, custom_maps=None, sep_min=DEFAULT_SEP_MIN):
    """Construct and certify an IFS model.

    ``custom_maps`` is a list of ``(ratio, offset)`` pairs or ``SimilarityMap``
    objects; all ratios must agree.
    """
    if family not in FAMILIES:
        raise BadRatio(f"unknown family {family!r}")
    if family == "custom":
        if not custom_maps:
            raise BadRatio("custom family needs maps")
        maps = []
        for m in custom_maps:
            if isinstance(m, SimilarityMap):
                maps.append(SimilarityMap(float(m.ratio), np.asarray(m.offset, dtype=float)))
            elif isinstance(m, dict):
                maps.append(SimilarityMap(float(m["ratio"]), np.asarray(m["offset"], dtype=float)))
            else:
                ratio, offset = m
                maps.append(SimilarityMap(float(ratio), np.asarray(offset, dtype=float)))
        ratios = {m.ratio for m in maps}
        if len(ratios) != 1:
            raise BadRatio("maps must share one contraction ratio")
        lam = maps[0].ratio
        if not 0.0 < lam < 1.0:
            raise BadRatio(f"ratio {lam} outside (0, 1)")
        dim = maps[0].offset.size
        if dim not in (2, 3) or any(m.offset.size != dim for m in maps):
            raise BadRatio("offsets must all live in R^2 or R^3")
        if len(maps) < 2:
            raise BadRatio("need at least two maps")
    else:
        if lam is None or not 0.0 < float(lam) < 0.5:
            raise BadRatio(f"lambda={lam} outside (0, 1/2) for {family}")
        lam = float(lam)
        dim = 2 if family == "corner_cantor_2d" else 3
        maps = [SimilarityMap(lam, b) for b in _corner_offsets(dim, lam)]

    offsets = np.array([m.offset for m in maps])
    N = len(maps)
    fixed = offsets / (1.0 - lam)
    bbox = np.array([fixed.min(axis=0), fixed.max(axis=0)])
    diag = float(np.linalg.norm(bbox[1] - bbox[0]))
    if diag <= 0:
        raise SeparationViolation("degenerate attractor (all maps share a fixed point)")

    # images of the attractor's box: overlap or a thin gap breaks the open set condition
    los = lam * bbox[0] + offsets
    his = lam * bbox[1] + offsets
    gap = math.inf
    for a, b in itertools.combinations(range(N), 2):
        if _overlap(los[a], his[a], los[b], his[b]):
            raise SeparationViolation(f"images of maps {a} and {b} overlap")
        gap = min(gap, _box_gap(los[a], his[a], los[b], his[b]))

    if family == "custom":
        k = max(1, int(math.floor(math.log(4096) / math.log(N))))
        pts = _cylinder_array(offsets, lam, fixed[0], k)
        far = max(float(np.max(np.linalg.norm(pts - p, axis=1))) for p in pts[:: max(1, len(pts) // 256)])
        diam = min(diag, far + 2 * lam ** k * diag)
    else:
        diam = diag

    if gap < sep_min * diam:
        raise SeparationViolation(
            f"first-generation separation {gap:.4g} below {sep_min} * diam = {sep_min * diam:.4g}")

    s = math.log(N) / math.log(1.0 / lam)
    C0 = max(float(N), (diam / gap) ** s)
    return IfsModel(family, dim, tuple(maps), lam, s, C0, bbox, diam, gap, offsets)


def model_from_json(doc):
    family = doc.get("family", "custom")
    if family in ("corner_cantor_2d", "corner_cantor_3d"):
        return build_ifs(family, doc.get("lambda"))
    return build_ifs("custom", custom_maps=doc["maps"])


def _cylinder_array(offsets, lam, base, depth):
    pts = np.asarray(base, dtype=float)[None, :]
    for _ in range(depth):
        pts = (lam * pts[None, :, :] + offsets[:, None, :]).reshape(-1, offsets.shape[1])
    return pts


def cylinder_points(model, depth, cap=DEFAULT_CAP):
    """One representative per depth-``depth`` cylinder, in index order."""
    if depth < 0:
        raise ValueError("depth must be non-negative")
    if model.N ** depth > cap:
        raise CapExceeded(f"N^depth = {model.N ** depth} exceeds cap {cap}")
    pts = _cylinder_array(model.offsets, model.lam, model.base_point, depth)
    w = np.full(len(pts), float(model.N) ** -depth)
    return MuSample(pts, w, depth)


def distance_to_E(model, x, tol=None):
    """dist(x, E) to absolute accuracy ``tol`` (default ``1e-9 * diam``)."""
    x = np.asarray(x, dtype=float)
    d = distances_to_E(model, np.atleast_2d(x), tol)
    return float(d[0]) if x.ndim == 1 else d


def distances_to_E(model, X, tol=None):
    tol = 1e-9 * model.diam if tol is None else float(tol)
    if tol <= 0:
        raise ValueError("tol must be positive")
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    upper, _, _, _ = kernels.distance_batch(X, *model.kernel_args(0), 0.0, tol)
    return upper


def nearest_cylinder(model, X, depth, tol=None):
    """Upper distance and depth-``depth`` cylinder index of a nearest point of E."""
    tol = 1e-9 * model.diam if tol is None else float(tol)
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    upper, _, index, _ = kernels.distance_batch(X, *model.kernel_args(depth), 0.0, tol)
    return upper, index


@dataclass(frozen=True)
class AhlforsAudit:
    C0_measured: float
    min_ratio: float
    max_ratio: float
    depth: int


def ahlfors_audit(model, depth, n_pairs=100, seed=0):
    """Measure the Ahlfors constant of the sampled measure on random (x, r) pairs."""
    sample = cylinder_points(model, depth + 2)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(sample), size=n_pairs)
    lo, hi = model.lam ** depth * model.diam, model.diam
    radii = np.exp(rng.uniform(math.log(lo), math.log(hi), size=n_pairs))
    from scipy.spatial import cKDTree

    tree = cKDTree(sample.points)
    ratios = np.empty(n_pairs)
    for j, (i, r) in enumerate(zip(idx, radii)):
        mass = len(tree.query_ball_point(sample.points[i], r)) * sample.weights[0]
        ratios[j] = mass / (r / model.diam) ** model.s
    return AhlforsAudit(float(max(ratios.max(), 1.0 / ratios.min())), float(ratios.min()),
                        float(ratios.max()), depth)
