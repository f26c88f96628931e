"""Vectorised numpy versions of the compiled kernels.

Walkers and queries advance in lockstep: the distance search expands the
cylinder tree breadth-first for all query points at once, and the walk loop
moves every live walker by one step per iteration.
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
INV53 = 1.0 / 9007199254740992.0

KIND_IFS = 0
KIND_CIRCLE = 1
START_POLE = 0
START_SPHERE = 1
STACK_LEVELS = 96


def mix64(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * MIX1
        z = (z ^ (z >> np.uint64(27))) * MIX2
        return z ^ (z >> np.uint64(31))


def walker_key(seed, walkers):
    walkers = np.asarray(walkers, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(np.uint64(seed) ^ mix64(walkers * GOLDEN + GOLDEN))


def uniform(keys, counters):
    keys = np.asarray(keys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = mix64(keys + (np.asarray(counters).astype(np.uint64) + np.uint64(1)) * GOLDEN)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * INV53


def query_batch(X, c0, R0, scales, offs, e, npow, A, rtol, atol, U0, Z0, idx0):
    """Breadth-first cylinder search for many points; returns ``(upper, lower, index, Z)``."""
    m, d = X.shape
    N = offs.shape[0]
    U = np.array(U0, dtype=float, copy=True)
    Z = np.array(Z0, dtype=float, copy=True)
    best = np.array(idx0, dtype=np.int64, copy=True)
    leaf_lo = np.full(m, np.inf)

    owner = np.arange(m)
    C = np.broadcast_to(c0, (m, d)).copy()
    I = np.zeros(m, np.int64)
    lvl = 0
    while owner.size:
        scale = scales[lvl]
        r = R0 * scale
        lb = np.linalg.norm(X[owner] - C, axis=1) - r
        keep = lb <= (1.0 - rtol) * U[owner] - atol
        owner, C, I, lb = owner[keep], C[keep], I[keep], lb[keep]
        if not owner.size:
            break
        reps = C + scale * e
        u = np.linalg.norm(X[owner] - reps, axis=1)
        order = np.lexsort((u, owner))
        first = np.ones(order.size, bool)
        first[1:] = owner[order[1:]] != owner[order[:-1]]
        cand = order[first]
        o = owner[cand]
        better = u[cand] < U[o]
        o, cand = o[better], cand[better]
        U[o] = u[cand]
        Z[o] = reps[cand]
        best[o] = I[cand] * npow[A - lvl] if lvl < A else I[cand]

        leaf = (2.0 * r <= rtol * np.maximum(lb, 0.0) + atol) | (lvl + 1 >= STACK_LEVELS)
        if leaf.any():
            np.minimum.at(leaf_lo, owner[leaf], lb[leaf])
        grow = ~leaf
        owner, C, I = owner[grow], C[grow], I[grow]
        owner = np.repeat(owner, N)
        C = (C[:, None, :] + scale * offs[None, :, :]).reshape(-1, d)
        I = (I[:, None] * N + np.arange(N)[None, :]).reshape(-1) if lvl < A else np.repeat(I, N)
        lvl += 1
    lo = np.minimum(leaf_lo, (1.0 - rtol) * U - atol)
    return U, np.maximum(lo, 0.0), best, Z


def distance_batch(X, c0, R0, scales, offs, e, npow, A, rtol, atol):
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    return query_batch(X, c0, R0, scales, offs, e, npow, A, rtol, atol,
                       np.full(m, np.inf), np.zeros_like(X), np.full(m, -1, np.int64))


def _circle_query(X, n_arcs):
    rho = np.linalg.norm(X, axis=1)
    dist = np.abs(1.0 - rho)
    safe = np.where(rho > 0, rho, 1.0)
    Z = np.where((rho > 0)[:, None], X / safe[:, None], np.array([1.0, 0.0]))
    ang = np.mod(np.arctan2(Z[:, 1], Z[:, 0]), 2 * np.pi)
    k = np.minimum((ang / (2 * np.pi / n_arcs)).astype(np.int64), n_arcs - 1)
    return dist, dist, k, Z


def _direction(keys, ctr, d):
    if d == 2:
        a = 2 * np.pi * uniform(keys, ctr)
        return np.stack([np.cos(a), np.sin(a)], axis=1), ctr + 1
    u = 2 * uniform(keys, ctr) - 1
    a = 2 * np.pi * uniform(keys, ctr + 1)
    w = np.sqrt(np.maximum(0.0, 1 - u * u))
    return np.stack([w * np.cos(a), w * np.sin(a), u], axis=1), ctr + 2


def _start(mode, pole, center, far_radius, keys, ctr):
    if mode == START_POLE:
        return np.broadcast_to(pole, (keys.size, pole.size)).copy(), ctr
    v, ctr = _direction(keys, ctr, center.size)
    return center + far_radius * v, ctr


def _reenter(X, center, R, keys, ctr):
    """Vectorised sphere re-entry; returns ``(X, ctr, hit)``."""
    d = X.shape[1]
    rel = X - center
    rho = np.linalg.norm(rel, axis=1)
    q = R / rho
    if d == 2:
        phi = np.arctan2(rel[:, 1], rel[:, 0])
        u = uniform(keys, ctr)
        th = phi + 2 * np.arctan((1 - q) / (1 + q) * np.tan(np.pi * (u - 0.5)))
        out = center + R * np.stack([np.cos(th), np.sin(th)], axis=1)
        return out, ctr + 1, np.ones(X.shape[0], bool)
    hit = uniform(keys, ctr) < q
    a = R * q
    v = uniform(keys, ctr + 1)
    w = 1 / (R + a) + v * (2 * a / (R * R - a * a))
    cu = np.clip((R * R + a * a - 1 / (w * w)) / (2 * a * R), -1, 1)
    az = 2 * np.pi * uniform(keys, ctr + 2)
    ax = rel / rho[:, None]
    h = np.where((np.abs(ax[:, 0]) < 0.9)[:, None], np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
    b1 = np.cross(ax, h)
    b1 /= np.linalg.norm(b1, axis=1)[:, None]
    b2 = np.cross(ax, b1)
    su = np.sqrt(np.maximum(0.0, 1 - cu * cu))
    dirn = cu[:, None] * ax + su[:, None] * (np.cos(az)[:, None] * b1 + np.sin(az)[:, None] * b2)
    out = np.where(hit[:, None], center + R * dirn, X)
    return out, np.where(hit, ctr + 3, ctr + 1), hit


def walk(kind, n_walkers, first_walker, seed, start_mode, pole, center, far_radius,
         R_out, eps, shrink, step_cap, max_steps, rtol,
         c0, R0, scales, offs, e, npow, A, n_arcs):
    d = center.shape[0]
    keys = walker_key(seed, np.arange(first_walker, first_walker + n_walkers))
    ctr = np.zeros(n_walkers, np.int64)
    X, ctr = _start(start_mode, pole, center, far_radius, keys, ctr)
    cell = np.full(n_walkers, -1, np.int64)
    steps = np.zeros(n_walkers, np.int64)
    escapes = np.zeros(n_walkers, np.int64)
    Zp = np.zeros((n_walkers, d))
    idxp = np.full(n_walkers, -1, np.int64)
    live = np.arange(n_walkers)
    while live.size:
        steps[live] += 1
        rel = X[live] - center
        out = np.einsum("ij,ij->i", rel, rel) > R_out * R_out * (1.0 + 1e-9)
        if out.any():
            w = live[out]
            Xn, cn, hit = _reenter(X[w], center, R_out, keys[w], ctr[w])
            X[w], ctr[w] = Xn, cn
            lost = w[~hit]
            if lost.size:
                escapes[lost] += 1
                X[lost], ctr[lost] = _start(start_mode, pole, center, far_radius,
                                            keys[lost], ctr[lost])
        w = live[~out]
        if w.size:
            if kind == KIND_CIRCLE:
                U, lo, best, Z = _circle_query(X[w], n_arcs)
            else:
                U0 = np.where(idxp[w] >= 0, np.linalg.norm(X[w] - Zp[w], axis=1), np.inf)
                U, lo, best, Z = query_batch(X[w], c0, R0, scales, offs, e, npow, A, rtol,
                                             0.25 * eps, U0, Zp[w], idxp[w])
                Zp[w] = Z
                idxp[w] = best
            done = lo <= eps
            cell[w[done]] = best[done]
            mv = ~done
            wm = w[mv]
            r = np.minimum(shrink * lo[mv], step_cap)
            v, ctr[wm] = _direction(keys[wm], ctr[wm], d)
            X[wm] += r[:, None] * v
            finished = w[done]
        else:
            finished = np.empty(0, np.int64)
        keep = np.ones(live.size, bool)
        keep[np.isin(live, finished)] = False
        keep &= steps[live] < max_steps
        live = live[keep]
    return cell, steps, escapes


def hole_lines(x, r, angles, offsets, n_samp, c0, R0, scales, offs, e, npow, rtol, atol):
    t = np.linspace(-1.0, 1.0, n_samp) if n_samp > 1 else np.zeros(1)
    best, best_a, best_o = np.inf, 0.0, 0.0
    half = np.sqrt(np.maximum(0.0, r * r - offsets ** 2))
    for a in angles:
        u = np.array([np.cos(a), np.sin(a)])
        nrm = np.array([-np.sin(a), np.cos(a)])
        P = (x + offsets[:, None, None] * nrm
             + (half[:, None] * t[None, :])[:, :, None] * u).reshape(-1, 2)
        U = distance_batch(P, c0, R0, scales, offs, e, npow, 0, rtol, atol)[0]
        worst = U.reshape(offsets.size, -1).max(axis=1) / r
        k = int(np.argmin(worst))
        if worst[k] < best:
            best, best_a, best_o = float(worst[k]), float(a), float(offsets[k])
    return best, best_a, best_o
