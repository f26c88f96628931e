"""Comparisons of omega against mu: density jumps, decay of sum sqrt(omega mu),
and the Hausdorff-content dimension bound built from them."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from decimal import Decimal, localcontext
from fractions import Fraction

import numpy as np

from .errors import ConditionFailed, DepthExceeded, InsufficientData, ZeroMass
from .harmonic import Z95

DEFAULT_FACTOR = 16.0


@dataclass(frozen=True)
class DensityRecord:
    cube_id: tuple
    hits: int
    omega_hat: float
    mu_mass: float
    ratio: float
    ratio_ci: tuple
    theta_s: float


def density_table(lattice, omega, generations=None):
    """One record per cube with hits > 0, plus the list of zero-hit cubes."""
    gens = range(omega.depth + 1) if generations is None else generations
    recs, zero = [], []
    for g in gens:
        om = omega.omega_gen(g)
        lo, hi = omega.ci_gen(g)
        h = omega.hits_gen(g)
        mu = lattice.mass_float(g)
        ls = (lattice.sides[g] / lattice.model.diam) ** lattice.model.s
        for i in range(len(om)):
            if h[i] <= 0:
                zero.append((g, i))
                continue
            recs.append(DensityRecord((g, i), int(h[i]), float(om[i]), mu, float(om[i]) / mu,
                                      (float(lo[i]) / mu, float(hi[i]) / mu), float(om[i]) / ls))
    return recs, zero


@dataclass(frozen=True)
class StoppingReport:
    Q: tuple
    found: bool
    P: tuple | None
    direction: str | None
    jump: float
    m_used: int | None
    significant: bool


def find_stopping_cube(lattice, omega, Q, m0, factor=DEFAULT_FACTOR, direction="both"):
    """Shallowest P in D_{0,m0}(Q) whose density ratio jumps by ``factor``.

    ``direction`` is "up", "down" or "both". Ties at one generation go to the
    smallest cube index (lexicographic word order), with an up-jump preferred
    at the same cube. A zero-hit cube has ratio 0. ``significant`` repeats
    the test with the adverse Wilson endpoints of P and Q.
    """
    if direction not in ("up", "down", "both"):
        raise ValueError(f"unknown direction {direction!r}")
    g0 = Q[0]
    if g0 + m0 > omega.depth:
        raise DepthExceeded(f"generation {g0} + m0={m0} beyond omega depth {omega.depth}")
    lattice.check(Q)
    rQ = omega.omega(Q) / lattice.mass_float(g0)
    qlo, qhi = omega.ci(Q)
    qlo /= lattice.mass_float(g0)
    qhi /= lattice.mass_float(g0)
    if rQ <= 0:
        return StoppingReport(Q, False, None, None, math.nan, None, False)
    for m in range(m0 + 1):
        g = g0 + m
        mu = lattice.mass_float(g)
        lo_i, hi_i = lattice.index_range(Q, g)
        r = omega.omega_gen(g)[lo_i:hi_i] / mu
        up = r >= factor * rQ if direction != "down" else np.zeros(r.shape, bool)
        down = r <= rQ / factor if direction != "up" else np.zeros(r.shape, bool)
        hit = np.nonzero(up | down)[0]
        if hit.size:
            j = int(hit[0])
            P = (g, lo_i + j)
            plo, phi = omega.ci(P)
            if up[j]:
                sig = plo / mu >= factor * qhi
                direction = "up"
            else:
                sig = phi / mu <= qlo / factor
                direction = "down"
            return StoppingReport(Q, True, P, direction, float(r[j] / rQ), m, bool(sig))
    return StoppingReport(Q, False, None, None, math.nan, None, False)


def stopping_scan(lattice, omega, generations=(0, 1, 2), m0_max=6, factor=DEFAULT_FACTOR,
                  direction="both"):
    reps = []
    for g in generations:
        m0 = min(m0_max, omega.depth - g)
        for cid in lattice.ids(g):
            reps.append(find_stopping_cube(lattice, omega, cid, m0, factor, direction))
    return reps


# --- decay ----------------------------------------------------------------

@dataclass(frozen=True)
class DecayReport:
    R0: tuple
    m0: int
    series: list
    se: list
    gamma_hat: float
    gamma_ci: tuple
    gamma_adverse: float
    significant: bool

    def ci(self, k):
        s, e = self.series[k][1], self.se[k]
        return max(0.0, s - Z95 * e), s + Z95 * e


def _sqrt_sum(omega_vals, mu):
    return float(np.sqrt(np.asarray(omega_vals, float) * mu).sum())


def decay_series(lattice, omega, R0, m0, k_max):
    """S_k = sum over D_{k m0}(R0) of sqrt(omega mu) and a fitted decay factor.

    The delta-method variance of S_k under multinomial sampling is exactly
    (mu(R0) - S_k^2) / (4 n); log(S_k / S_0) = k log(gamma) is fitted by
    least squares through the origin. The CI half-width uses the larger of a
    correlation-free bound on the fitted slope and the residual scatter.
    """
    g0 = R0[0]
    if g0 + k_max * m0 > omega.depth:
        raise DepthExceeded(f"generation {g0 + k_max * m0} beyond omega depth {omega.depth}")
    series, se = [], []
    adverse = []
    for k in range(k_max + 1):
        g = g0 + k * m0
        lo, hi = lattice.index_range(R0, g)
        mu = lattice.mass_float(g)
        om = omega.omega_gen(g)[lo:hi]
        S = _sqrt_sum(om, mu)
        if S <= 0:
            raise ZeroMass(f"S_{k} = 0 below {lattice.label(R0)}")
        if omega.synthetic:
            var = 0.0
        else:
            var = max(0.0, (mu * (hi - lo) - S * S) / (4 * omega.total))
        series.append((k, S))
        se.append(math.sqrt(var))
        adverse.append(S + Z95 * math.sqrt(var) if k else max(S - Z95 * math.sqrt(var), 1e-300))
    S0 = series[0][1]
    ks = np.array([k for k, _ in series[1:]], float)
    if ks.size == 0:
        return DecayReport(R0, m0, series, se, 1.0, (1.0, 1.0), 1.0, False)
    y = np.log([s for _, s in series[1:]]) - math.log(S0)
    c = ks / (ks * ks).sum()
    b = float(c @ y)
    if omega.synthetic:
        sb = 0.0
    else:
        sy = np.array([math.hypot(e / s, se[0] / S0) for (_, s), e in zip(series[1:], se[1:])])
        # the S_k share walkers, so bound sd(c.y) by sum |c_k| sd(y_k) whatever the correlation
        sb_stat = float(np.abs(c) @ sy)
        resid = y - b * ks
        sb_fit = math.sqrt((resid ** 2).sum() / (ks.size - 1) / (ks * ks).sum()) if ks.size > 1 else 0.0
        sb = max(sb_stat, sb_fit)
    gamma = math.exp(b)
    ci = (math.exp(b - Z95 * sb), math.exp(b + Z95 * sb))
    ya = np.log(adverse[1:]) - math.log(adverse[0])
    ga = math.exp(float(c @ ya))
    return DecayReport(R0, m0, series, se, gamma, ci, ga, bool(ci[1] < 1 and ga < 1))


def admissible_t_prime(s, gamma, m0, lam):
    """Smallest t' meeting delta_k^{(t'-s)/2} gamma^k <= gamma^{k/2} for every k."""
    if gamma >= 1:
        return s
    return s - math.log(1 / gamma) / (m0 * math.log(1 / lam))


@dataclass(frozen=True)
class DimensionBound:
    t: float
    t_prime: float
    content_bound: float
    omega_excess: float
    n_s1: int
    n_s2: int
    k: int
    admissible: tuple

    def certifies(self, tau):
        return self.content_bound <= tau and self.omega_excess <= tau


def dimension_bound(lattice, omega, R0, m0, gamma_hat, k, t_prime, check=True):
    """Split D_{k m0}(R0) by omega(Q) >= delta_k^{t'} omega(R0) and bound both parts.

    content_bound is sum over the heavy family S1 of (l(Q)/l(R0))^{t'} (at most
    1 by construction); omega_excess is the omega share of the light family
    S2, with zero-hit cubes entered at their upper Wilson endpoint.
    """
    model = lattice.model
    s = model.s
    if not 0 < t_prime < s:
        raise ConditionFailed(f"t'={t_prime} outside (0, s={s})", admissible=(0.0, s))
    t_min = admissible_t_prime(s, gamma_hat, m0, model.lam)
    if check and t_prime < t_min - 1e-12:
        raise ConditionFailed(f"t'={t_prime} fails the smallness condition; need t' >= {t_min:.6g}",
                              admissible=(max(t_min, 0.0), s))
    g = R0[0] + k * m0
    if g > omega.depth:
        raise DepthExceeded(f"generation {g} beyond omega depth {omega.depth}")
    delta = model.lam ** (k * m0)
    lo, hi = lattice.index_range(R0, g)
    om = omega.omega_gen(g)[lo:hi]
    h = omega.hits_gen(g)[lo:hi]
    _, up = omega.ci_gen(g)
    wR = omega.omega(R0)
    heavy = om >= delta ** t_prime * wR
    n1 = int(heavy.sum())
    content = n1 * delta ** t_prime
    light = ~heavy
    zero = light & (h <= 0)
    excess = (float(om[light & ~zero].sum()) + float(up[lo:hi][zero].sum())) / wR
    return DimensionBound((t_prime + s) / 2, t_prime, content, excess, n1, int(light.sum()), k,
                          (max(t_min, 0.0), s))


# --- local dimension ------------------------------------------------------

@dataclass(frozen=True)
class LocalDimension:
    slopes: np.ndarray
    weights: np.ndarray
    dim_hat: float
    ci: tuple
    quantile: float


def _weighted_quantile(x, w, q):
    o = np.argsort(x, kind="stable")
    cw = np.cumsum(w[o])
    k = int(np.searchsorted(cw, q * cw[-1]))
    return float(x[o][min(k, len(x) - 1)])


def _leaf_slopes(lattice, leaf, depth, gmin):
    """OLS slope of log omega(ancestor) on log l(ancestor) for each leaf with mass."""
    N = lattice.N
    gens = np.arange(gmin, depth + 1)
    x = np.log(lattice.sides[gens])
    c = (x - x.mean()) / ((x - x.mean()) ** 2).sum()
    n_leaf = leaf.size
    lev = [leaf]
    for _ in range(depth - gmin):
        lev.append(lev[-1].reshape(-1, N).sum(axis=1))
    lev.reverse()
    idx = np.arange(n_leaf)
    slope = np.zeros(n_leaf)
    # leaves with a zero-mass ancestor get -inf or nan and are dropped by the caller
    with np.errstate(divide="ignore", invalid="ignore"):
        for j, g in enumerate(gens):
            anc = idx // N ** (depth - g)
            slope += c[j] * np.log(lev[j][anc])
    return slope


def local_dimension(omega, lattice, quantile=0.5, n_boot=200, seed=0, gmin=0):
    depth = omega.depth
    if depth - gmin < 2:
        raise InsufficientData("need at least three generations of omega")
    if omega.synthetic:
        leaf = omega.masses[depth]
    else:
        leaf = omega.hits[depth].astype(float)
    keep = leaf > 0
    slopes = _leaf_slopes(lattice, leaf, depth, gmin)
    w = leaf / leaf.sum()
    dim = _weighted_quantile(slopes[keep], w[keep], quantile)
    if omega.synthetic or n_boot <= 0:
        return LocalDimension(slopes[keep], w[keep], dim, (dim, dim), quantile)
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        lb = rng.multinomial(omega.total, w).astype(float)
        kb = lb > 0
        sb = _leaf_slopes(lattice, lb, depth, gmin)
        boots[b] = _weighted_quantile(sb[kb], lb[kb], quantile)
    ci = (float(np.quantile(boots, 0.025)), float(np.quantile(boots, 0.975)))
    return LocalDimension(slopes[keep], w[keep], dim, ci, quantile)


# --- exact algebra for synthetic pairs -------------------------------------

def _dsqrt(q, prec):
    with localcontext() as ctx:
        ctx.prec = prec
        return (Decimal(q.numerator) / Decimal(q.denominator)).sqrt()


def sqrt_sum(omega, mu, prec=80):
    """sum sqrt(omega_i mu_i) for Fractions, to ``prec`` significant digits."""
    with localcontext() as ctx:
        ctx.prec = prec
        return sum((_dsqrt(Fraction(o) * Fraction(m), prec) for o, m in zip(omega, mu)), Decimal(0))


def sqrt_le(x, y, z):
    """Exact test of sqrt(x) + sqrt(y) <= sqrt(z) for nonnegative rationals."""
    x, y, z = Fraction(x), Fraction(y), Fraction(z)
    d = z - x - y
    return d >= 0 and 4 * x * y <= d * d


@dataclass(frozen=True)
class PlantedJumpCheck:
    gamma: Fraction
    split_bound_holds: bool
    direct_sum: Decimal
    bound: Decimal

    @property
    def holds(self):
        return self.split_bound_holds and self.direct_sum <= self.bound


def planted_jump_check(omega_children, mu_children, p0, factor=16):
    """Decay bound sum sqrt(omega mu) <= (1 - mu(P0)/(4 mu(Q))) sqrt(omega(Q) mu(Q)).

    The children partition Q; P0 must carry a factor-``factor`` down-jump.
    Cauchy-Schwarz over the other children reduces the left side to
    sqrt(w0 m0) + sqrt((W - w0)(M - m0)), which is compared exactly.
    """
    om = [Fraction(o) for o in omega_children]
    mu = [Fraction(m) for m in mu_children]
    W, M = sum(om), sum(mu)
    w0, m0 = om[p0], mu[p0]
    if w0 * M * factor > W * m0:
        raise ValueError("P0 does not carry the planted down-jump")
    gamma = 1 - m0 / (4 * M)
    rhs = gamma * gamma * W * M
    split = sqrt_le(w0 * m0, (W - w0) * (M - m0), rhs)
    direct = sqrt_sum(om, mu)
    bound = _dsqrt(rhs, 80)
    return PlantedJumpCheck(gamma, split, direct, bound)


# --- writers --------------------------------------------------------------

def write_decay_csv(report, path, digest=None):
    with open(path, "w", newline="") as fh:
        if digest:
            fh.write(f"# config_digest: {digest}\n")
        fh.write("k,S_k,S_k_ci_low,S_k_ci_high\n")
        for k, S in report.series:
            lo, hi = report.ci(k)
            fh.write(f"{k},{S!r},{lo!r},{hi!r}\n")


def write_stopping_csv(lattice, reports, path, digest=None):
    with open(path, "w", newline="") as fh:
        if digest:
            fh.write(f"# config_digest: {digest}\n")
        fh.write("Q_id,found,P_id,direction,jump,m_used,significant\n")
        for r in reports:
            P = lattice.label(r.P) if r.P is not None else ""
            m = "" if r.m_used is None else str(r.m_used)
            fh.write(f"{lattice.label(r.Q)},{str(r.found).lower()},{P},{r.direction or ''},"
                     f"{r.jump!r},{m},{str(r.significant).lower()}\n")


def write_report_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (Fraction, Decimal)):
        return str(o)
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"not serialisable: {type(o)}")
