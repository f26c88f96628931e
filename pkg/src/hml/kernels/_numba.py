"""Compiled kernels: cylinder-tree distance queries and walk-on-spheres.

Every function here has a vectorised twin in ``_numpy`` with the same
signature and the same meaning of its outputs.
"""

import math

import numpy as np
from numba import njit, prange

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
SH30 = np.uint64(30)
SH27 = np.uint64(27)
SH31 = np.uint64(31)
SH11 = np.uint64(11)
INV53 = 1.0 / 9007199254740992.0

KIND_IFS = 0
KIND_CIRCLE = 1

START_POLE = 0
START_SPHERE = 1

STACK_LEVELS = 96


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> SH30)) * MIX1
    z = (z ^ (z >> SH27)) * MIX2
    return z ^ (z >> SH31)


@njit(cache=True, inline="always")
def walker_key(seed, walker):
    return mix64(np.uint64(seed) ^ mix64(np.uint64(walker) * GOLDEN + GOLDEN))


@njit(cache=True, inline="always")
def uniform(key, counter):
    z = mix64(np.uint64(key) + np.uint64(counter + 1) * GOLDEN)
    return (float(z >> SH11) + 0.5) * INV53


@njit(cache=True)
def query_ifs(x, c0, R0, scales, offs, e, npow, A, rtol, atol, U0, z0, idx0,
              stack_c, stack_lvl, stack_idx, out_z):
    """Branch-and-bound search through the cylinder tree.

    Returns ``(upper, lower, index)``: ``upper`` is the distance to the best
    point of E found (written to ``out_z``), ``lower`` a certified lower bound
    for dist(x, E), and ``index`` the depth-``A`` cylinder holding that point.
    """
    d = x.shape[0]
    N = offs.shape[0]
    U = U0
    best = idx0
    for j in range(d):
        out_z[j] = z0[j]
    leaf_lo = np.inf

    sp = 0
    for j in range(d):
        stack_c[0, j] = c0[j]
    stack_lvl[0] = 0
    stack_idx[0] = 0
    sp = 1
    child_lb = np.empty(N)
    order = np.empty(N, np.int64)
    px = np.empty(d)
    while sp > 0:
        sp -= 1
        lvl = stack_lvl[sp]
        idx = stack_idx[sp]
        scale = scales[lvl]
        r = R0 * scale
        dc = 0.0
        for j in range(d):
            t = x[j] - stack_c[sp, j]
            dc += t * t
        dc = math.sqrt(dc)
        lb = dc - r
        if lb > (1.0 - rtol) * U - atol:
            continue
        du = 0.0
        for j in range(d):
            t = x[j] - (stack_c[sp, j] + scale * e[j])
            du += t * t
        du = math.sqrt(du)
        if du < U:
            U = du
            for j in range(d):
                out_z[j] = stack_c[sp, j] + scale * e[j]
            if lvl < A:
                best = idx * npow[A - lvl]
            else:
                best = idx
        if 2.0 * r <= rtol * max(lb, 0.0) + atol or lvl + 1 >= STACK_LEVELS:
            if lb < leaf_lo:
                leaf_lo = lb
            continue
        # push children farthest-first so the nearest is popped next
        cscale = scale
        base = sp
        for i in range(N):
            s2 = 0.0
            for j in range(d):
                t = x[j] - (stack_c[base, j] + cscale * offs[i, j])
                s2 += t * t
            child_lb[i] = math.sqrt(s2) - R0 * scales[lvl + 1]
            order[i] = i
        for i in range(1, N):
            k = order[i]
            m = i - 1
            while m >= 0 and child_lb[order[m]] < child_lb[k]:
                order[m + 1] = order[m]
                m -= 1
            order[m + 1] = k
        for j in range(d):
            px[j] = stack_c[base, j]
        for ii in range(N):
            i = order[ii]
            if child_lb[i] > (1.0 - rtol) * U - atol:
                continue
            for j in range(d):
                stack_c[sp, j] = px[j] + cscale * offs[i, j]
            stack_lvl[sp] = lvl + 1
            if lvl < A:
                stack_idx[sp] = idx * N + i
            else:
                stack_idx[sp] = idx
            sp += 1
    lo = (1.0 - rtol) * U - atol
    if leaf_lo < lo:
        lo = leaf_lo
    if lo < 0.0:
        lo = 0.0
    return U, lo, best


@njit(cache=True)
def distance_batch(X, c0, R0, scales, offs, e, npow, A, rtol, atol):
    """Distances from each row of ``X`` to E, warm-started from the previous row."""
    m, d = X.shape
    N = offs.shape[0]
    upper = np.empty(m)
    lower = np.empty(m)
    index = np.empty(m, np.int64)
    Z = np.empty((m, d))
    stack_c = np.empty((STACK_LEVELS * N + 1, d))
    stack_lvl = np.empty(STACK_LEVELS * N + 1, np.int64)
    stack_idx = np.empty(STACK_LEVELS * N + 1, np.int64)
    z = np.empty(d)
    zprev = c0.copy()
    U0 = np.inf
    idx0 = -1
    for p in range(m):
        if idx0 >= 0:
            s2 = 0.0
            for j in range(d):
                t = X[p, j] - zprev[j]
                s2 += t * t
            U0 = math.sqrt(s2)
        U, lo, best = query_ifs(X[p], c0, R0, scales, offs, e, npow, A, rtol, atol,
                                U0, zprev, idx0, stack_c, stack_lvl, stack_idx, z)
        upper[p] = U
        lower[p] = lo
        index[p] = best
        for j in range(d):
            Z[p, j] = z[j]
            zprev[j] = z[j]
        idx0 = best
    return upper, lower, index, Z


@njit(cache=True, inline="always")
def _circle_query(x, n_arcs, out_z):
    rho = math.sqrt(x[0] * x[0] + x[1] * x[1])
    dist = abs(1.0 - rho)
    if rho > 0.0:
        out_z[0] = x[0] / rho
        out_z[1] = x[1] / rho
    else:
        out_z[0] = 1.0
        out_z[1] = 0.0
    ang = math.atan2(out_z[1], out_z[0])
    if ang < 0.0:
        ang += 2.0 * math.pi
    k = int(ang / (2.0 * math.pi / n_arcs))
    if k >= n_arcs:
        k = n_arcs - 1
    return dist, dist, k


@njit(cache=True, inline="always")
def _direction(key, ctr, d, out):
    if d == 2:
        a = 2.0 * math.pi * uniform(key, ctr)
        out[0] = math.cos(a)
        out[1] = math.sin(a)
        return ctr + 1
    u = 2.0 * uniform(key, ctr) - 1.0
    a = 2.0 * math.pi * uniform(key, ctr + 1)
    w = math.sqrt(max(0.0, 1.0 - u * u))
    out[0] = w * math.cos(a)
    out[1] = w * math.sin(a)
    out[2] = u
    return ctr + 2


@njit(cache=True)
def _start(mode, pole, center, far_radius, key, ctr, x, tmp):
    d = x.shape[0]
    if mode == START_POLE:
        for j in range(d):
            x[j] = pole[j]
        return ctr
    ctr = _direction(key, ctr, d, tmp)
    for j in range(d):
        x[j] = center[j] + far_radius * tmp[j]
    return ctr


@njit(cache=True)
def _reenter(x, center, R, key, ctr, tmp, basis):
    """Move a walker outside the sphere ``|x - center| = R`` back onto it.

    Returns ``(ctr, hit)``; ``hit`` is False when a three-dimensional walker
    escapes to infinity instead.
    """
    d = x.shape[0]
    rho = 0.0
    for j in range(d):
        tmp[j] = x[j] - center[j]
        rho += tmp[j] * tmp[j]
    rho = math.sqrt(rho)
    q = R / rho
    if d == 2:
        phi = math.atan2(tmp[1], tmp[0])
        u = uniform(key, ctr)
        th = phi + 2.0 * math.atan((1.0 - q) / (1.0 + q) * math.tan(math.pi * (u - 0.5)))
        x[0] = center[0] + R * math.cos(th)
        x[1] = center[1] + R * math.sin(th)
        return ctr + 1, True
    if uniform(key, ctr) >= q:
        return ctr + 1, False
    # conditioned exterior Poisson kernel = interior kernel at the Kelvin image
    a = R * q
    v = uniform(key, ctr + 1)
    w = 1.0 / (R + a) + v * (2.0 * a / (R * R - a * a))
    cu = (R * R + a * a - 1.0 / (w * w)) / (2.0 * a * R)
    cu = min(1.0, max(-1.0, cu))
    az = 2.0 * math.pi * uniform(key, ctr + 2)
    for j in range(3):
        basis[0, j] = tmp[j] / rho
    # any unit vector orthogonal to the axis
    if abs(basis[0, 0]) < 0.9:
        h0, h1, h2 = 1.0, 0.0, 0.0
    else:
        h0, h1, h2 = 0.0, 1.0, 0.0
    b0 = basis[0, 1] * h2 - basis[0, 2] * h1
    b1 = basis[0, 2] * h0 - basis[0, 0] * h2
    b2 = basis[0, 0] * h1 - basis[0, 1] * h0
    nb = math.sqrt(b0 * b0 + b1 * b1 + b2 * b2)
    basis[1, 0] = b0 / nb
    basis[1, 1] = b1 / nb
    basis[1, 2] = b2 / nb
    basis[2, 0] = basis[0, 1] * basis[1, 2] - basis[0, 2] * basis[1, 1]
    basis[2, 1] = basis[0, 2] * basis[1, 0] - basis[0, 0] * basis[1, 2]
    basis[2, 2] = basis[0, 0] * basis[1, 1] - basis[0, 1] * basis[1, 0]
    su = math.sqrt(max(0.0, 1.0 - cu * cu))
    ca = math.cos(az)
    sa = math.sin(az)
    for j in range(3):
        x[j] = center[j] + R * (cu * basis[0, j] + su * (ca * basis[1, j] + sa * basis[2, j]))
    return ctr + 3, True


@njit(cache=True, parallel=True)
def walk(kind, n_walkers, first_walker, seed, start_mode, pole, center, far_radius,
         R_out, eps, shrink, step_cap, max_steps, rtol,
         c0, R0, scales, offs, e, npow, A, n_arcs):
    """Run ``n_walkers`` walk-on-spheres paths until absorption.

    Walker ``w`` draws from its own counter-based stream keyed by
    ``(seed, first_walker + w)``, so results do not depend on thread count.
    """
    d = center.shape[0]
    N = offs.shape[0]
    cell = np.full(n_walkers, -1, np.int64)
    steps = np.zeros(n_walkers, np.int64)
    escapes = np.zeros(n_walkers, np.int64)
    for w in prange(n_walkers):
        key = walker_key(seed, first_walker + w)
        ctr = 0
        x = np.empty(d)
        tmp = np.empty(d)
        basis = np.empty((3, 3))
        z = np.empty(d)
        zprev = c0.copy()
        stack_c = np.empty((STACK_LEVELS * N + 1, d))
        stack_lvl = np.empty(STACK_LEVELS * N + 1, np.int64)
        stack_idx = np.empty(STACK_LEVELS * N + 1, np.int64)
        idx0 = -1
        ctr = _start(start_mode, pole, center, far_radius, key, ctr, x, tmp)
        n = 0
        esc = 0
        while n < max_steps:
            n += 1
            rho = 0.0
            for j in range(d):
                t = x[j] - center[j]
                rho += t * t
            # re-entered points sit on the sphere; the slack stops roundoff loops
            if rho > R_out * R_out * (1.0 + 1e-9):
                ctr, hit = _reenter(x, center, R_out, key, ctr, tmp, basis)
                if not hit:
                    esc += 1
                    ctr = _start(start_mode, pole, center, far_radius, key, ctr, x, tmp)
                continue
            if kind == KIND_CIRCLE:
                U, lo, best = _circle_query(x, n_arcs, z)
            else:
                U0 = np.inf
                if idx0 >= 0:
                    s2 = 0.0
                    for j in range(d):
                        t = x[j] - zprev[j]
                        s2 += t * t
                    U0 = math.sqrt(s2)
                U, lo, best = query_ifs(x, c0, R0, scales, offs, e, npow, A, rtol,
                                        0.25 * eps, U0, zprev, idx0,
                                        stack_c, stack_lvl, stack_idx, z)
                for j in range(d):
                    zprev[j] = z[j]
                idx0 = best
            if lo <= eps:
                cell[w] = best
                break
            r = min(shrink * lo, step_cap)
            ctr = _direction(key, ctr, d, tmp)
            for j in range(d):
                x[j] += r * tmp[j]
        steps[w] = n
        escapes[w] = esc
    return cell, steps, escapes


@njit(cache=True)
def hole_lines(x, r, angles, offsets, n_samp, c0, R0, scales, offs, e, npow, rtol, atol):
    """Minimise, over the given lines, the largest sampled dist(z, E) / r on L within B(x, r).

    Lines are scanned with early exit once a line cannot beat the incumbent.
    Returns ``(value, angle, offset)``.
    """
    d = 2
    N = offs.shape[0]
    best = np.inf
    best_a = 0.0
    best_o = 0.0
    stack_c = np.empty((STACK_LEVELS * N + 1, d))
    stack_lvl = np.empty(STACK_LEVELS * N + 1, np.int64)
    stack_idx = np.empty(STACK_LEVELS * N + 1, np.int64)
    z = np.empty(d)
    q = np.empty(d)
    zprev = c0.copy()
    for ia in range(angles.shape[0]):
        ca = math.cos(angles[ia])
        sa = math.sin(angles[ia])
        for io in range(offsets.shape[0]):
            o = offsets[io]
            half = math.sqrt(max(0.0, r * r - o * o))
            worst = 0.0
            idx0 = -1
            for k in range(n_samp):
                t = -half + 2.0 * half * k / (n_samp - 1) if n_samp > 1 else 0.0
                q[0] = x[0] + t * ca - o * sa
                q[1] = x[1] + t * sa + o * ca
                U0 = np.inf
                if idx0 >= 0:
                    U0 = math.sqrt((q[0] - zprev[0]) ** 2 + (q[1] - zprev[1]) ** 2)
                U, lo, bi = query_ifs(q, c0, R0, scales, offs, e, npow, 0, rtol, atol,
                                      U0, zprev, idx0, stack_c, stack_lvl, stack_idx, z)
                zprev[0] = z[0]
                zprev[1] = z[1]
                idx0 = 0
                v = U / r
                if v > worst:
                    worst = v
                    if worst >= best:
                        break
            if worst < best:
                best = worst
                best_a = angles[ia]
                best_o = o
    return best, best_a, best_o
