import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hml import beta as B
from hml.errors import DepthExceeded, EmptyBall
from hml.fractal import MuSample, build_ifs, cylinder_points
from hml.lattice import build_lattice


def grid_beta2(Y, w, r, n_ang=2000, n_off=2001, x=None):
    """Brute-force L2 beta over a line grid through B(x, r)."""
    x = np.zeros(2) if x is None else x
    th = np.arange(n_ang) * math.pi / n_ang
    nrm = np.stack([-np.sin(th), np.cos(th)], axis=1)
    P = (Y - x) @ nrm.T
    offs = np.linspace(-r, r, n_off)
    W = w.sum()
    best = math.inf
    for j in range(n_ang):
        v = ((P[:, j][:, None] - offs[None, :]) ** 2 * w[:, None]).sum(axis=0) / W
        best = min(best, v.min())
    return math.sqrt(best) / r


def test_beta2_collinear():
    t = np.linspace(-0.8, 0.8, 17)
    Y = np.stack([t, 0.3 * t + 0.1], axis=1)
    val, line = B.beta2_ball((Y, np.ones(17)), np.zeros(2), 1.0)
    assert val <= 1e-12
    assert abs(np.linalg.norm(line.direction) - 1) < 1e-12


def test_beta2_two_points_on_vertical_line():
    d = 0.4
    Y = np.array([[0.0, d], [0.0, -d]])
    val, line = B.beta2_ball((Y, np.ones(2)), np.zeros(2), 1.0)
    assert val <= 1e-12
    assert grid_beta2(Y, np.ones(2), 1.0) <= 1e-12
    # the horizontal axis is a worse line with beta2 = d
    assert np.mean(B._line(0.0, 0.0, np.zeros(2)).distance(Y) ** 2) ** 0.5 == pytest.approx(d)


def test_beta2_random_vs_grid():
    rng = np.random.default_rng(5)
    for _ in range(5):
        ang = rng.uniform(0, 2 * math.pi, 20)
        rad = np.sqrt(rng.uniform(0, 1, 20))
        Y = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        w = rng.uniform(0.1, 1, 20)
        val, _ = B.beta2_ball((Y, w), np.zeros(2), 1.0)
        g = grid_beta2(Y, w, 1.0, 720, 801)
        assert val <= g + 1e-9
        assert g - val < 0.01


def test_beta2_empty_ball():
    with pytest.raises(EmptyBall):
        B.beta2_ball(np.array([[5.0, 5.0]]), np.zeros(2), 1.0)


def test_beta2_plane_3d():
    rng = np.random.default_rng(2)
    Y = np.column_stack([rng.uniform(-0.5, 0.5, (30, 2)), np.zeros(30)])
    val, plane = B.beta2_ball((Y, np.ones(30)), np.zeros(3), 1.0)
    assert val <= 1e-12 and plane.is_plane
    assert abs(abs(plane.direction[2]) - 1) < 1e-9
    m3 = build_ifs("corner_cantor_3d", 0.25)
    v3, _ = B.beta2_ball(cylinder_points(m3, 3), m3.base_point, m3.diam)
    # isotropic covariance 0.15 (1 - lam^6) per axis at depth 3
    assert v3 == pytest.approx(math.sqrt(0.15 * (1 - 0.25 ** 6)) / m3.diam, rel=1e-12)


def test_beta2_root_closed_form(quarter):
    # each coordinate of the depth-D sample has variance (9/64) sum_{k<D} lam^(2k)
    S = cylinder_points(quarter, 3)
    val, _ = B.beta2_ball(S, quarter.base_point, quarter.diam)
    assert val == pytest.approx(math.sqrt(0.15 * (1 - 0.25 ** 6)) / math.sqrt(2), rel=1e-12)


def test_beta_inf_square_corners():
    h = 0.3
    Y = np.array([[h, h], [-h, h], [h, -h], [-h, -h]])
    val, line = B.beta_inf_ball(Y, np.zeros(2), 1.0, 720)
    # independent scan over 1e5 angles: width/2 of projections onto the normal
    th = np.arange(100_000) * math.pi / 100_000
    proj = Y @ np.stack([-np.sin(th), np.cos(th)])
    brute = (0.5 * (proj.max(axis=0) - proj.min(axis=0))).min()
    assert brute == pytest.approx(h, rel=1e-12)
    assert val == pytest.approx(brute, abs=1e-12)
    assert np.max(line.distance(Y)) == pytest.approx(h)


def test_beta_inf_trivial():
    assert B.beta_inf_ball(np.array([[0.2, 0.1]]), np.zeros(2), 1.0)[0] == 0.0
    t = np.linspace(-0.5, 0.5, 9)
    Y = np.stack([t, t * math.tan(0.3)], axis=1)
    assert B.beta_inf_ball(Y, np.zeros(2), 1.0, 720)[0] <= math.pi / 720


def test_beta_inf_ball_growth(quarter):
    # B(x, r) and B(x, 2r) hold the same points of E here
    S = cylinder_points(quarter, 6)
    x = quarter.base_point
    r = 0.36
    Y1 = S.points[np.linalg.norm(S.points - x, axis=1) <= r]
    Y2 = S.points[np.linalg.norm(S.points - x, axis=1) <= 2 * r]
    assert len(Y1) == len(Y2)
    b1 = B.beta_inf_ball(S, x, r)[0]
    b2 = B.beta_inf_ball(S, x, 2 * r)[0]
    assert b1 <= 2 * b2 + math.pi / 720


def test_beta_hole_segment():
    t = np.linspace(-2, 2, 4001)
    E = np.stack([t, np.zeros_like(t)], axis=1)
    step = 1 / 64
    val, line = B.beta_hole_ball(E, np.array([0.1, 0.0]), 1.0, angle_grid=90, line_step=step)
    assert val <= step / 2 + 1e-3


def test_beta_hole_two_points():
    # every chord with |offset| <= r/2 crosses the y-axis at distance >= 1 from (+-1, 0);
    # the x-axis attains 1 at the origin
    E = np.array([[1.0, 0.0], [-1.0, 0.0]])
    step = 1 / 64
    val, line = B.beta_hole_ball(E, np.zeros(2), 1.0, angle_grid=180, line_step=step)
    assert 1 - step / 2 - math.pi / 360 <= val <= 1 + 1e-12


def test_beta_hole_far_from_E(quarter):
    x = quarter.center + np.array([5.0, 0.0])
    val, _ = B.beta_hole_ball(None, x, 0.5, oracle=quarter, angle_grid=18, line_step=1 / 16)
    assert val >= 1


def test_beta_hole_oracle_matches_point_sample(quarter):
    x, r = quarter.base_point, quarter.diam * 0.25
    kw = dict(angle_grid=36, line_step=1 / 32)
    v_or, _ = B.beta_hole_ball(None, x, r, oracle=quarter, **kw)
    v_pts, _ = B.beta_hole_ball(cylinder_points(quarter, 8).points, x, r, **kw)
    assert abs(v_or - v_pts) <= 0.25 ** 8 * quarter.diam / r + 1e-6


def test_beta1_root_vs_grid(lat6):
    S = cylinder_points(lat6.model, 2)
    val, line = B.beta1_cube(lat6, S, (0, 0), 360)
    assert val >= 0
    Y, w = S.points, S.weights
    x = lat6.center((0, 0))
    ell = lat6.side((0, 0))
    th = np.arange(720) * math.pi / 720
    offs = np.linspace(-ell, ell, 4001)
    best = math.inf
    for a in th:
        p = (Y - x) @ np.array([-math.sin(a), math.cos(a)])
        best = min(best, (np.abs(p[:, None] - offs[None, :]) * w[:, None]).sum(axis=0).min())
    brute = best / ell
    grid_err = math.pi / 720 * np.linalg.norm(Y - x, axis=1).max() / ell
    assert val <= brute + (offs[1] - offs[0]) / ell + 1e-12
    assert val >= brute - grid_err - 1e-12


def test_beta1_collinear_and_depth():
    m = build_ifs("custom", custom_maps=[(0.25, [0, 0]), (0.25, [0.75, 0])])
    L = build_lattice(m, 4)
    S = cylinder_points(m, 4)
    assert B.beta1_cube(L, S, (1, 1), 180)[0] <= 1e-12
    with pytest.raises(DepthExceeded):
        B.beta1_cube(L, cylinder_points(m, 2), (1, 0))


def test_scan_line_sample():
    m = build_ifs("custom", custom_maps=[(0.25, [0, 0]), (0.25, [0.75, 0])])
    L = build_lattice(m, 4)
    d0, _, recs = B.scan_nonflatness(L, "beta2", (0, 3))
    assert d0 <= 1e-12
    assert len(recs) == 1 + 2 + 4 + 8


def test_scan_generations_self_similar(lat6):
    d0, arg, recs = B.scan_nonflatness(lat6, "beta2", (0, 5))
    mins = B.generation_minima(lat6, recs)
    assert d0 > 0
    vals = np.array(list(mins.values()))
    assert vals.max() / vals.min() < 1.05


def test_scan_refined_grid_not_larger(quarter):
    L = build_lattice(quarter, 2)
    _, _, coarse = B.scan_nonflatness(L, "all", (0, 1), angle_grid=30, line_step=1 / 16)
    _, _, fine = B.scan_nonflatness(L, "all", (0, 1), angle_grid=120, line_step=1 / 16)
    for c, f in zip(coarse, fine):
        assert f.beta_inf <= c.beta_inf + 1e-15


def test_beta_sum_base_cases(lat6):
    r0 = B.beta_sum_check(lat6, (0, 0), 0, 180)
    assert r0.rhs_scale_term == pytest.approx(1.0)
    assert r0.ratio <= 1
    m = build_ifs("custom", custom_maps=[(0.25, [0, 0]), (0.25, [0.75, 0])])
    L = build_lattice(m, 5)
    r = B.beta_sum_check(L, (0, 0), 2, 180)
    assert r.lhs <= 1e-20 and r.ratio <= 1e-20
    with pytest.raises(DepthExceeded):
        B.beta_sum_check(lat6, (0, 0), 5)


def test_betas_csv(tmp_path, quarter):
    L = build_lattice(quarter, 2)
    _, _, recs = B.scan_nonflatness(L, "beta2", (0, 1))
    p = tmp_path / "betas.csv"
    B.write_betas_csv(L, recs, p, "d")
    lines = p.read_text().splitlines()
    assert lines[1] == "cube_id,r,beta2,beta_inf,beta_hole,beta1,line_angle,line_offset,grid_angles,err_bound"
    assert len(lines) == 2 + 5


pts_strategy = st.lists(st.tuples(st.floats(-0.7, 0.7), st.floats(-0.7, 0.7), st.floats(0.05, 1.0)),
                        min_size=3, max_size=12)


@settings(max_examples=40, deadline=None)
@given(pts_strategy)
def test_beta2_never_beaten_by_grid(pts):
    arr = np.array(pts)
    Y, w = arr[:, :2], arr[:, 2]
    val, line = B.beta2_points(Y, w, 1.0)
    g = grid_beta2(Y, w, 1.0, 180, 201)
    assert val <= g + 1e-9
    # the returned line realises the value
    assert math.sqrt((w * line.distance(Y) ** 2).sum() / w.sum()) == pytest.approx(val, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(pts_strategy, st.floats(0.1, 10.0), st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 2 * math.pi))
def test_scale_covariance(pts, rho, tx, ty, rot):
    arr = np.array(pts)
    Y, w = arr[:, :2], arr[:, 2]
    R = np.array([[math.cos(rot), -math.sin(rot)], [math.sin(rot), math.cos(rot)]])
    shift = np.array([tx, ty])
    Ys = rho * Y @ R.T + shift
    assert B.beta2_points(Ys, w, rho)[0] == pytest.approx(B.beta2_points(Y, w, 1.0)[0], abs=1e-10)
    # grid coefficients: dilation and translation keep the grid aligned
    Yd = rho * Y + shift
    b = B.beta_inf_points(Y, 1.0, 180, np.zeros(2))[0]
    bd = B.beta_inf_points(Yd, rho, 180, shift)[0]
    assert bd == pytest.approx(b, abs=1e-10)
    b1 = B.beta1_points(Y, w, 1.0, 1.0, 90, np.zeros(2))[0]
    b1d = B.beta1_points(Yd, w, rho, 1.0, 90, shift)[0]
    assert b1d == pytest.approx(b1, abs=1e-10)
