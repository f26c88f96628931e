import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from hml.errors import BadRatio, CapExceeded, DepthExceeded, InsufficientDepth
from hml.fractal import build_ifs, cylinder_points
from hml.lattice import audit_thin_boundary, build_lattice, descendants, dilate, write_cubes_csv


def test_small_lattice(quarter):
    L = build_lattice(quarter, 1)
    assert L.n_cubes(0) == 1 and L.n_cubes(1) == 4
    assert L.mass((1, 2)) == Fraction(1, 4)
    assert L.side((0, 0)) == pytest.approx(quarter.diam)


def test_mass_and_scaling_exact(lat6):
    assert sum(lat6.mass(c) for c in lat6.ids(6)) == 1
    for c in lat6.all_ids(0, 5):
        assert lat6.mass(c) == sum(lat6.mass(ch) for ch in lat6.children(c))
        for ch in lat6.children(c):
            assert lat6.side(ch) == pytest.approx(0.25 * lat6.side(c), rel=1e-15)


def test_lattice_ratio_limit():
    with pytest.raises(BadRatio):
        build_lattice(build_ifs("corner_cantor_2d", 0.4), 2)
    with pytest.raises(CapExceeded):
        build_lattice(build_ifs("corner_cantor_2d", 0.25), 14, cap=1 << 20)


def test_tree_and_labels(lat6):
    for c in [(3, 17), (6, 4095), (2, 0)]:
        assert lat6.parse_label(lat6.label(c)) == c
        assert lat6.ancestor(c, 0) == (0, 0)
        p = lat6.parent(c)
        assert c in lat6.children(p)
    assert lat6.label((0, 0)) == "R"
    assert lat6.label((2, 7)) == "R13"


def test_containment_and_inner_ball(lat6):
    S = cylinder_points(lat6.model, 8)
    for g in range(7):
        for i in range(0, lat6.n_cubes(g), max(1, lat6.n_cubes(g) // 16)):
            cid = (g, i)
            lo, hi = lat6.index_range(cid, 8)
            z = lat6.center(cid)
            d_in = np.linalg.norm(S.points[lo:hi] - z, axis=1)
            assert d_in.max() <= lat6.side(cid) * (1 + 1e-12)
            d_all = np.linalg.norm(S.points - z, axis=1)
            near = np.nonzero(d_all <= lat6.c_inner * lat6.side(cid))[0]
            assert np.all((near >= lo) & (near < hi))


def test_completeness(lat6):
    # every depth-6 point has exactly one generation-k cube at each k
    for g in range(7):
        covered = np.zeros(4 ** 6, int)
        for i in range(lat6.n_cubes(g)):
            lo, hi = lat6.index_range((g, i), 6)
            covered[lo:hi] += 1
        assert np.all(covered == 1)


def test_descendants(lat6):
    q = (2, 5)
    assert descendants(lat6, q, 0, 0) == [q]
    assert len(descendants(lat6, q, 3, 3)) == 4 ** 3
    assert len(descendants(lat6, q, 1, 2)) == 4 + 16
    with pytest.raises(DepthExceeded):
        descendants(lat6, q, 0, 5)
    with pytest.raises(ValueError):
        descendants(lat6, q, 2, 1)


def test_dilate(lat6):
    assert dilate(lat6, (0, 0), 3.0) == [(0, 0)]
    assert dilate(lat6, (3, 9), 1.0) == [(3, 9)]
    assert len(dilate(lat6, (2, 3), 100.0)) == 16
    # brute force on the distance predicate with depth-8 samples
    S = cylinder_points(lat6.model, 8)
    q = (2, 6)
    z = lat6.center(q)
    for f in (1.5, 2.5, 4.0):
        got = set(dilate(lat6, q, f))
        want = set()
        for i in range(16):
            lo, hi = lat6.index_range((2, i), 8)
            d = np.linalg.norm(S.points[lo:hi] - z, axis=1).min()
            if d <= f * lat6.side(q) - 0.25 ** 8 * lat6.model.diam:
                want.add((2, i))
        assert want <= got
        # inclusion: every sample point in f*B_Q lies in some cube of the dilation
        inside = np.nonzero(np.linalg.norm(S.points - z, axis=1) <= f * lat6.side(q))[0]
        owners = {(2, int(j) // 4 ** 6) for j in inside}
        assert owners <= got


def test_thin_boundary_empty_collars(lat6):
    gap = lat6.model.gap
    for q in [(1, 0), (2, 9), (3, 40)]:
        ell = lat6.side(q)
        # siblings sit at least lam^(k-1) * gap away
        t_max = 0.25 ** (q[0] - 1) * gap / ell
        ts = [0.05, 0.1, 0.5 * t_max, 0.99 * t_max]
        a = audit_thin_boundary(lat6, q, ts)
        assert np.all(a.inner_mass == 0)
        assert a.eta_hat > 0


def test_thin_boundary_vs_brute_force(lat6):
    q = (1, 0)
    ts = [0.5, 1.2, 1.6, 2.5, 4.0, 8.0]
    a = audit_thin_boundary(lat6, q, ts, sample_depth=6)
    S = cylinder_points(lat6.model, 6)
    lo, hi = lat6.index_range(q, 6)
    X_in = S.points[lo:hi]
    rest = np.concatenate([S.points[:lo], S.points[hi:]])
    # brute force against a depth-9 sample of E minus Q; the error is below lam^9 diam
    deep = cylinder_points(lat6.model, 9)
    dlo, dhi = lat6.index_range(q, 9)
    comp = np.concatenate([deep.points[:dlo], deep.points[dhi:]])
    d = cdist(X_in, comp).min(axis=1)
    slack = 0.25 ** 9 * lat6.model.diam
    ell = lat6.side(q)
    for t, m in zip(a.t, a.inner_mass):
        lo_c = (d <= t * ell - slack).sum() / 4 ** 6
        hi_c = (d <= t * ell + slack).sum() / 4 ** 6
        assert lo_c <= m <= hi_c
    assert np.all(a.ratio <= 1 + 1e-12)
    assert a.eta_hat > 0


def test_thin_boundary_root_is_empty(lat6):
    a = audit_thin_boundary(lat6, (0, 0), [0.1, 1.0])
    assert np.all(a.inner_mass == 0)


def test_thin_boundary_depth_error(lat6):
    with pytest.raises(InsufficientDepth):
        audit_thin_boundary(lat6, (5, 0), [0.1])


def test_cubes_csv(tmp_path, quarter):
    L = build_lattice(quarter, 2)
    p = tmp_path / "cubes.csv"
    write_cubes_csv(L, p, "abc")
    lines = p.read_text().splitlines()
    assert lines[0] == "# config_digest: abc"
    assert lines[1] == "id,parent_id,generation,center_x,center_y,side,mu_mass"
    assert len(lines) == 2 + 1 + 4 + 16
    assert lines[2].startswith("R,,0,")
    assert lines[3].startswith("R0,R,1,")
