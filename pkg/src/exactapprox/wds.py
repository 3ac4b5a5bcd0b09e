"""Well-separated, well-distributed point systems on the circle.

Two concrete systems:

* rationals -- reduced fractions p/q with radius function R(p/q) = q**-2;
               separation follows from |p/q - p'/q'| >= 1/(q q').
* dyadics   -- odd-numerator dyadics p/2**j with R = 2**-j.

Band queries enumerate every system point whose radius lies in the window
[1/(C k), C/k]; both systems admit exact, exhaustive enumeration inside any
arc.  For the rationals this uses the Stern-Brocot bracket plus the
Farey-sequence successor recurrence, which streams the fractions of F_Q
inside an arc in O(output + log Q) exact integer steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional

import gmpy2

from .errors import DegenerateRegion, NotInSystem, ResourceLimit
from .psi import ApproxFunction
from .space import (
    Arc,
    Ball,
    Annulus,
    MetricMeasureSpace,
    arcs_contained,
    arcs_measure,
    normalize_arcs,
    circle_mod,
)

ZERO = Fraction(0)
ONE = Fraction(1)

DEFAULT_MAX_CANDIDATES = 2_000_000


@dataclass(frozen=True)
class WdsPoint:
    point: Fraction
    radius: Fraction

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class WdsSystem:
    """A countable point system with radius function on an ambient space."""

    kind: str
    space: MetricMeasureSpace
    C: Fraction

    def __post_init__(self) -> None:
        if self.kind not in ("rationals", "dyadics"):
            raise ValueError(f"unknown system kind {self.kind!r}")
        if self.C < 1:
            raise ValueError("the working constant C must be >= 1")

    def radius_of(self, p: Fraction) -> Fraction:
        """R(p) for a system point; raises NotInSystem otherwise."""
        if self.kind == "rationals":
            # every Fraction is reduced, so membership is automatic
            return Fraction(1, p.denominator * p.denominator)
        den = p.denominator
        if den & (den - 1) != 0:
            raise NotInSystem(f"{p} has a non-dyadic denominator")
        return Fraction(1, den)

    def radius_window(self, k: int) -> tuple[Fraction, Fraction]:
        """The inclusive radius band [1/(C k), C/k]."""
        if k < 1:
            raise ValueError("band index k must be >= 1")
        return Fraction(1, 1) / (self.C * k), self.C / k


# ---------------------------------------------------------------------------
# Stern-Brocot / Farey machinery (exact integer arithmetic throughout)


def farey_bracket(x: Fraction, Q: int) -> tuple[int, int, int, int]:
    """Consecutive Farey-F_Q fractions a/b <= x < c/d (x any rational).

    Accelerated Stern-Brocot descent: repeated mediant steps toward x are
    taken in blocks, so the walk costs O(len(continued fraction of x))
    integer operations.
    """
    n = x.numerator // x.denominator
    a, b, c, d = n, 1, n + 1, 1
    while b + d <= Q:
        if x < Fraction(a + c, b + d):
            # left half: advance the right endpoint toward x
            num = c - x * d
            den = x * b - a
            if den == 0:
                k = (Q - d) // b
            else:
                q_, r_ = divmod(num.numerator * den.denominator, num.denominator * den.numerator)
                k = q_ if r_ else q_ - 1  # strict: largest k with x < new right
                k = min(max(k, 1), (Q - d) // b)
            c, d = a * k + c, b * k + d
        else:
            # right half: advance the left endpoint toward x
            num = x * b - a
            den = c - x * d
            if den == 0:
                k = (Q - b) // d
            else:
                k = (num.numerator * den.denominator) // (num.denominator * den.numerator)
                k = min(max(k, 1), (Q - b) // d)
            a, b = a + k * c, b + k * d
    return a, b, c, d


def _farey_predecessor(p: int, q: int, Q: int) -> tuple[int, int]:
    """The Farey-F_Q fraction immediately left of the reduced p/q (q <= Q)."""
    if q == 1:
        return p * Q - 1, Q
    v0 = pow(p, -1, q)  # p*v ≡ 1 (mod q) makes (p v - 1)/q integral
    v = v0 + ((Q - v0) // q) * q
    return (p * v - 1) // q, v


def farey_in_arc(lo: Fraction, hi: Fraction, Q: int) -> Iterator[tuple[int, int]]:
    """All reduced p/q with q <= Q and lo <= p/q <= hi, ascending.

    p may lie outside [0, q); callers on the circle reduce mod 1.
    Cost is O(output + log Q) via the Farey successor recurrence.
    """
    if Q < 1 or lo > hi:
        return
    a, b, c, d = farey_bracket(lo, Q)
    if Fraction(a, b) == lo:
        prev, cur = _farey_predecessor(a, b, Q), (a, b)
    else:
        prev, cur = (a, b), (c, d)
    while Fraction(cur[0], cur[1]) <= hi:
        yield cur
        t = (Q + prev[1]) // cur[1]
        prev, cur = cur, (t * cur[0] - prev[0], t * cur[1] - prev[1])


def _isqrt_at_least(x: Fraction) -> int:
    """Least nonnegative integer n with n*n >= x."""
    if x <= 0:
        return 0
    n = int(gmpy2.isqrt(x.numerator // x.denominator))
    while Fraction(n * n) < x:
        n += 1
    while n > 0 and Fraction((n - 1) * (n - 1)) >= x:
        n -= 1
    return n


def _isqrt_at_most(x: Fraction) -> int:
    """Greatest nonnegative integer n with n*n <= x (0 if none)."""
    if x < 1:
        return 0
    n = int(gmpy2.isqrt(x.numerator // x.denominator))
    while Fraction((n + 1) * (n + 1)) <= x:
        n += 1
    while n > 0 and Fraction(n * n) > x:
        n -= 1
    return n


def denominator_window(system: WdsSystem, k: int) -> tuple[int, int]:
    """Integer index window realizing the radius band.

    rationals: q with k/C <= q**2 <= C*k; dyadics: j with k/C <= 2**j <= C*k
    (returned as the pair of j bounds).
    """
    r_lo, r_hi = system.radius_window(k)
    if system.kind == "rationals":
        qmin = _isqrt_at_least(1 / r_hi)
        qmax = _isqrt_at_most(1 / r_lo)
        return qmin, qmax
    jmin = 0
    while Fraction(1, 1 << jmin) > r_hi:
        jmin += 1
    jmax = jmin
    while Fraction(1, 1 << (jmax + 1)) >= r_lo:
        jmax += 1
    if Fraction(1, 1 << jmax) < r_lo:
        jmax -= 1
    return jmin, jmax


def band_points_in_arcs(
    system: WdsSystem,
    arcs: list[Arc],
    k: int,
    require_ball_inside: bool = True,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
) -> list[WdsPoint]:
    """Every band-k system point xi with B(xi, R(xi)) inside the arc union.

    Exhaustive by construction; raises ResourceLimit when the stream grows
    past max_candidates.  On the circle, the full circle and a union that
    wraps through 0 are handled so containment across the joint is honored.
    """
    full_circle = (
        system.space.kind == "circle" and arcs == [(ZERO, ONE)]
    )
    work: list[Arc] = list(arcs)
    if (
        system.space.kind == "circle"
        and not full_circle
        and len(arcs) >= 2
        and arcs[0][0] == ZERO
        and arcs[-1][1] == ONE
    ):
        # rejoin the two pieces that meet at the wrap point into one arc in
        # unwrapped coordinates so containment across 0 is checked correctly
        work = list(arcs[1:-1])
        work.append((arcs[-1][0] - 1, arcs[0][1]))
    out: list[WdsPoint] = []
    seen = 0
    if system.kind == "rationals":
        lo2, hi2 = denominator_window(system, k)
        if lo2 > hi2:
            return []
        for arc_lo, arc_hi in work:
            for p, q in farey_in_arc(arc_lo, arc_hi, hi2):
                seen += 1
                if seen > max_candidates:
                    raise ResourceLimit(
                        f"band k={k} stream exceeded {max_candidates} candidates"
                    )
                if q < lo2:
                    continue
                x = Fraction(p, q)
                r = Fraction(1, q * q)
                if (
                    require_ball_inside
                    and not full_circle
                    and not (arc_lo <= x - r and x + r <= arc_hi)
                ):
                    continue
                out.append(WdsPoint(circle_mod(x) if system.space.kind == "circle" else x, r))
    else:
        jmin, jmax = denominator_window(system, k)
        for j in range(jmin, jmax + 1):
            r = Fraction(1, 1 << j)
            for arc_lo, arc_hi in work:
                shrink = r if (require_ball_inside and not full_circle) else ZERO
                lo_eff = arc_lo + shrink
                hi_eff = arc_hi - shrink
                if lo_eff > hi_eff:
                    continue
                pmin = math.ceil(lo_eff * (1 << j))
                pmax = math.floor(hi_eff * (1 << j))
                for p in range(pmin, pmax + 1):
                    if p % 2 == 1 or j == 0:
                        seen += 1
                        if seen > max_candidates:
                            raise ResourceLimit(
                                f"band k={k} stream exceeded {max_candidates} candidates"
                            )
                        x = Fraction(p, 1 << j)
                        out.append(
                            WdsPoint(
                                circle_mod(x) if system.space.kind == "circle" else x, r
                            )
                        )
    out.sort(key=lambda w: w.point)
    dedup: list[WdsPoint] = []
    for w in out:
        if not dedup or dedup[-1].point != w.point:
            dedup.append(w)
    return dedup


def enumerate_band(
    system: WdsSystem,
    region: Ball,
    k: int,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
) -> list[WdsPoint]:
    """All xi in the radius band of k with B(xi, R(xi)) contained in region."""
    arcs = system.space.ball_arcs(region)
    return band_points_in_arcs(system, arcs, k, max_candidates=max_candidates)


def enumerate_near(
    system: WdsSystem,
    x: Fraction,
    radius_lo: Fraction,
    radius_hi: Fraction,
    dist_bound: Fraction,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
) -> list[WdsPoint]:
    """All xi with R(xi) in [radius_lo, radius_hi] and d(x, xi) <= dist_bound.

    Exhaustive.  For the rationals a direct denominator sweep is used while
    the candidate budget allows; past that every remaining candidate must
    satisfy |x - p/q| <= dist_bound < 1/(2 q**2), hence be a continued-
    fraction convergent of x, and the scan switches to the convergent list.
    """
    if not 0 < radius_lo <= radius_hi:
        raise ValueError("need 0 < radius_lo <= radius_hi")
    space = system.space
    out: list[WdsPoint] = []
    if system.kind == "dyadics":
        jmin = 0
        while Fraction(1, 1 << jmin) > radius_hi:
            jmin += 1
        j = jmin
        while Fraction(1, 1 << j) >= radius_lo:
            den = 1 << j
            base = math.floor(x * den)
            span = math.ceil(dist_bound * den) + 1
            for p in range(base - span, base + span + 2):
                if j == 0 or p % 2 == 1:
                    pt = Fraction(p, den)
                    if space.distance(x, pt) <= dist_bound:
                        out.append(
                            WdsPoint(
                                circle_mod(pt) if space.kind == "circle" else pt,
                                Fraction(1, den),
                            )
                        )
            j += 1
        out.sort(key=lambda w: (w.point, w.radius))
        return _dedup_points(out)

    qmin = _isqrt_at_least(1 / radius_hi)
    qmax = _isqrt_at_most(1 / radius_lo)
    if qmin > qmax:
        return []
    # direct sweep budget: sum over q of (2 q dist_bound + 2) candidates
    q_direct = qmax
    est = dist_bound * (qmax * qmax) + 2 * (qmax - qmin + 1)
    if est > max_candidates:
        # find the largest prefix we can sweep directly
        q_direct = qmin
        budget = 0
        while q_direct < qmax:
            budget += 2 * dist_bound * q_direct + 2
            if budget > max_candidates:
                break
            q_direct += 1
    for q in range(qmin, min(q_direct, qmax) + 1):
        lo_p = math.ceil((x - dist_bound) * q)
        hi_p = math.floor((x + dist_bound) * q)
        for p in range(lo_p, hi_p + 1):
            if math.gcd(p, q) == 1:
                pt = Fraction(p, q)
                if space.distance(x, pt) <= dist_bound:
                    out.append(
                        WdsPoint(
                            circle_mod(pt) if space.kind == "circle" else pt,
                            Fraction(1, q * q),
                        )
                    )
    if q_direct < qmax:
        # all remaining candidates must be convergents of x
        threshold_q = q_direct + 1
        if dist_bound >= Fraction(1, 2 * threshold_q * threshold_q):
            raise ResourceLimit(
                f"near query needs {est} direct candidates and the distance "
                f"bound {dist_bound} is too large for the convergent shortcut "
                f"at q > {q_direct}"
            )
        for p, q in convergent_stream(x):
            if q < threshold_q or q < qmin:
                continue
            if q > qmax:
                break
            pt = Fraction(p, q)
            if space.distance(x, pt) <= dist_bound:
                out.append(WdsPoint(circle_mod(pt) if space.kind == "circle" else pt, Fraction(1, q * q)))
    out.sort(key=lambda w: (w.point, w.radius))
    return _dedup_points(out)


def _dedup_points(pts: list[WdsPoint]) -> list[WdsPoint]:
    dedup: list[WdsPoint] = []
    for w in pts:
        if not dedup or dedup[-1] != w:
            dedup.append(w)
    return dedup


def convergent_stream(x: Fraction) -> Iterator[tuple[int, int]]:
    """Continued-fraction convergents of x, ascending denominator.

    Internal to the band machinery (the verification oracle keeps its own
    independent implementation).
    """
    n, d = x.numerator, x.denominator
    p_prev, q_prev = 1, 0
    p_cur, q_cur = n // d, 1
    yield p_cur, q_cur
    n, d = d, n - (n // d) * d
    while d:
        a = n // d
        n, d = d, n - a * d
        p_prev, q_prev, p_cur, q_cur = p_cur, q_cur, a * p_cur + p_prev, a * q_cur + q_prev
        yield p_cur, q_cur


# ---------------------------------------------------------------------------
# offset band queries around a center (the child search used by the engine)


def offset_band_count(
    center: Fraction,
    offset_lo: Fraction,
    offset_hi: Fraction,
    qmin: int,
    qmax: int,
    shrink_by_radius: bool = True,
) -> int:
    """Exact count of reduced p'/q', qmin <= q' <= qmax, whose distance from
    the reduced rational center lies in [offset_lo, offset_hi] (both sides),
    optionally requiring [p'/q' - R, p'/q' + R] inside the offset band.

    Works by the offset identity p'q - pq' = n: for each n the admissible q'
    form one residue class mod q intersected with an interval, so the count
    is a sum of O(n_max * divisors) closed-form progression counts.  No
    enumeration: exact at astronomically large qmin/qmax.
    """
    p, q = center.numerator, center.denominator
    if offset_lo <= 0 or offset_lo > offset_hi or qmin > qmax:
        return 0
    shrink = Fraction(1, qmin * qmin) if shrink_by_radius else ZERO
    lo_eff, hi_eff = offset_lo + shrink, offset_hi - shrink
    if lo_eff > hi_eff:
        return 0
    n_max = math.floor(hi_eff * q * qmax)
    total = 0
    for n in range(1, n_max + 1):
        total += _reduced_offset_count(p, q, n, lo_eff, hi_eff, qmin, qmax)
    return total


def _raw_offset_count(
    p: int, q: int, n: int, lo: Fraction, hi: Fraction, qmin: int, qmax: int
) -> int:
    """Solutions (p', q') of |p'q - pq'| = n with offset n/(q q') in [lo, hi],
    q' in [qmin, qmax], not requiring gcd(p', q') = 1."""
    # n/(q q') in [lo, hi]  =>  q' in [n/(q hi), n/(q lo)]
    a = _ceil_div_frac(Fraction(n), q * hi)
    b = _floor_div_frac(Fraction(n), q * lo)
    a, b = max(a, qmin), min(b, qmax)
    if a > b:
        return 0
    if q == 1:
        return 2 * (b - a + 1)
    total = 0
    pinv = pow(p, -1, q)
    for sign in (1, -1):
        r = (-sign * n * pinv) % q
        first = a + ((r - a) % q)
        if first <= b:
            total += (b - first) // q + 1
    return total


def _reduced_offset_count(
    p: int, q: int, n: int, lo: Fraction, hi: Fraction, qmin: int, qmax: int
) -> int:
    """Like _raw_offset_count but restricted to gcd(p', q') = 1, by Mobius
    inversion over the divisors of n (any common factor of p', q' divides n).
    """
    total = 0
    for d in _divisors(n):
        mu = _mobius(d)
        if mu == 0:
            continue
        total += mu * _raw_offset_count(
            p, q, n // d, lo / d, hi / d, _ceil_div_int(qmin, d), qmax // d
        )
    return total


def offset_band_candidates(
    center: Fraction,
    offset_lo: Fraction,
    offset_hi: Fraction,
    qmin: int,
    qmax: int,
    limit: int,
) -> Iterator[WdsPoint]:
    """Reduced fractions at offset n/(q q') in [offset_lo, offset_hi] from the
    center, streamed in (n, q') order up to `limit` yields.

    Deterministic selection order for the construction's child search; the
    full set can be astronomically large, so exhaustive listing is not
    offered here (counts come from offset_band_count).
    """
    p, q = center.numerator, center.denominator
    if offset_lo <= 0 or offset_lo > offset_hi or qmin > qmax:
        return
    n_max = math.floor(offset_hi * q * qmax)
    yielded = 0
    for n in range(1, n_max + 1):
        a = _ceil_div_frac(Fraction(n), q * offset_hi)
        b = _floor_div_frac(Fraction(n), q * offset_lo)
        a, b = max(a, qmin), min(b, qmax)
        if a > b:
            continue
        for sign in (1, -1):
            if q == 1:
                start = a
                step = 1
            else:
                pinv = pow(p, -1, q)
                r = (-sign * n * pinv) % q
                start = a + ((r - a) % q)
                step = q
            q2 = start
            while q2 <= b:
                p2 = (sign * n + p * q2) // q
                if math.gcd(p2, q2) == 1:
                    yield WdsPoint(Fraction(p2, q2), Fraction(1, q2 * q2))
                    yielded += 1
                    if yielded >= limit:
                        return
                q2 += step


def _ceil_div_frac(num: Fraction, den: Fraction) -> int:
    v = num / den
    return -((-v.numerator) // v.denominator)


def _floor_div_frac(num: Fraction, den: Fraction) -> int:
    v = num / den
    return v.numerator // v.denominator


def _ceil_div_int(a: int, b: int) -> int:
    return -((-a) // b)


def _divisors(n: int) -> list[int]:
    out = []
    i = 1
    while i * i <= n:
        if n % i == 0:
            out.append(i)
            if i != n // i:
                out.append(n // i)
        i += 1
    return sorted(out)


def _mobius(n: int) -> int:
    if n == 1:
        return 1
    result = 1
    m = n
    p = 2
    while p * p <= m:
        if m % p == 0:
            m //= p
            if m % p == 0:
                return 0
            result = -result
        p += 1
    if m > 1:
        result = -result
    return result


# ---------------------------------------------------------------------------
# audits


@dataclass(frozen=True)
class WdsAudit:
    min_separation_ratio: Optional[Fraction]
    separation_pairs_checked: int
    distribution_pass: bool
    estimated_kB: Optional[int]
    counts_table: list[tuple[int, int, int, Fraction]] = field(default_factory=list)
    # rows: (k, ball_index, observed_count, required_count)

    def to_dict(self) -> dict:
        return {
            "min_separation_ratio": None
            if self.min_separation_ratio is None
            else str(self.min_separation_ratio),
            "separation_pairs_checked": self.separation_pairs_checked,
            "distribution_pass": self.distribution_pass,
            "estimated_kB": self.estimated_kB,
            "counts_table": [
                {
                    "k": k,
                    "ball": i,
                    "observed": obs,
                    "required": str(req),
                    "pass": obs >= req,
                }
                for (k, i, obs, req) in self.counts_table
            ],
        }


RATIO_SCAN_CAP = Fraction(2)


def separation_scan(
    system: WdsSystem, points: list[WdsPoint]
) -> tuple[Optional[Fraction], int]:
    """Minimum of d(xi, zeta)/min(R(xi), R(zeta)) over all pairs.

    Exhaustive below RATIO_SCAN_CAP: any pair with ratio <= cap satisfies
    d <= cap * min(R) <= cap * R(left endpoint), so scanning each point's
    rightward neighbors within the window cap * R(point) (wrapping once on
    the circle) visits every such pair.  Pairs beyond the cap cannot be the
    minimum whenever anything inside the cap was seen.
    """
    pts = sorted(points, key=lambda w: w.point)
    n = len(pts)
    if n < 2:
        return None, 0
    wrap = system.space.kind == "circle"
    ext = pts + ([WdsPoint(w.point + 1, w.radius) for w in pts] if wrap else [])
    best: Optional[Fraction] = None
    checked = 0
    for i in range(n):
        wi = pts[i]
        window = RATIO_SCAN_CAP * wi.radius
        for j in range(i + 1, len(ext)):
            wj = ext[j]
            gap = wj.point - wi.point
            if gap > window:
                break
            if j - i >= n:
                break  # wrapped all the way around to itself
            d = min(gap, 1 - gap) if wrap else gap
            if d == 0:
                continue
            ratio = d / min(wi.radius, wj.radius)
            checked += 1
            best = ratio if best is None else min(best, ratio)
    return best, checked


def all_points_up_to(system: WdsSystem, index_max: int) -> list[WdsPoint]:
    """rationals: all reduced p/q with q <= index_max; dyadics: levels j <= index_max."""
    out: list[WdsPoint] = []
    if system.kind == "rationals":
        for q in range(1, index_max + 1):
            r = Fraction(1, q * q)
            for p in range(q):
                if math.gcd(p, q) == 1:
                    out.append(WdsPoint(Fraction(p, q), r))
    else:
        for j in range(index_max + 1):
            r = Fraction(1, 1 << j)
            for p in range(1 << j):
                if j == 0 or p % 2 == 1:
                    out.append(WdsPoint(Fraction(p, 1 << j), r))
    return out


def audit_wds(
    system: WdsSystem,
    k_range: list[int],
    trial_balls: list[Ball],
    separation_index_max: int = 200,
) -> WdsAudit:
    """Exhaustive separation scan plus distribution counts per ball and band.

    Separation covers every pair of system points with index up to
    separation_index_max (denominator for rationals, level for dyadics),
    including cross-band pairs.  Distribution compares the exhaustive band
    count against (1/C) k^alpha mu(B); per ball, estimated_kB is the least
    tested k from which every larger tested k passes.
    """
    if not k_range:
        raise ValueError("k_range must be nonempty")
    pts = all_points_up_to(system, separation_index_max)
    min_ratio, checked = separation_scan(system, pts)
    alpha = system.space.alpha
    if alpha is None:
        raise ValueError("distribution audit needs a rational Ahlfors exponent")
    table: list[tuple[int, int, int, Fraction]] = []
    per_ball_kb: list[Optional[int]] = []
    for i, ball in enumerate(trial_balls):
        mu = system.space.ball_measure(ball)
        passes: list[bool] = []
        for k in sorted(k_range):
            required = Fraction(k) ** alpha * mu / system.C
            observed = len(enumerate_band(system, ball, k))
            table.append((k, i, observed, required))
            passes.append(Fraction(observed) >= required)
        kb: Optional[int] = None
        for idx in range(len(passes)):
            if all(passes[idx:]):
                kb = sorted(k_range)[idx]
                break
        per_ball_kb.append(kb)
    dist_pass = all(kb is not None for kb in per_ball_kb)
    est_kb = max((kb for kb in per_ball_kb if kb is not None), default=None)
    if not dist_pass:
        est_kb = None
    return WdsAudit(min_ratio, checked, dist_pass, est_kb, table)


# ---------------------------------------------------------------------------
# open-set covering (balls whose 5x dilations cover the eps-interior)


def cover_open_set(
    space: MetricMeasureSpace,
    annulus: Annulus,
    epsilon_fraction: Fraction = Fraction(1, 2),
) -> list[Ball]:
    """Disjoint balls centered in the eps-interior of the annulus whose 5x
    dilations cover that interior and stay inside the annulus.

    eps is chosen as a dyadic value retaining at least epsilon_fraction of
    the measure: mu(U_eps) >= epsilon_fraction * mu(U).  Greedy packing along
    each arc at spacing 4r with r = eps/5 keeps the balls disjoint (spacing
    > 2r) while the 5r dilations overlap consecutively (spacing < 10r).
    """
    if not 0 < epsilon_fraction < 1:
        raise ValueError("epsilon_fraction must be in (0, 1)")
    arcs = space.annulus_arcs(annulus)
    total = arcs_measure(arcs)
    if total == 0:
        raise DegenerateRegion("annulus has zero measure")
    if space.kind == "cantor3":
        raise DegenerateRegion("covering is defined on the circle and interval")
    # mu(U_eps) = sum of max(0, len - 2 eps); pick the largest dyadic eps
    # with that sum >= epsilon_fraction * total
    target = epsilon_fraction * total
    bound = min(hi - lo for lo, hi in arcs) / 2
    k = 1
    while Fraction(1, 1 << k) > bound:
        k += 1
    eps = Fraction(1, 1 << k)
    while eps > 0:
        retained = sum(max(ZERO, (hi - lo) - 2 * eps) for lo, hi in arcs)
        if retained >= target:
            break
        eps /= 2
        if eps < Fraction(1, 1 << 512):
            raise DegenerateRegion("no positive interior margin exists")
    r = eps / 5
    balls: list[Ball] = []
    for lo, hi in arcs:
        ilo, ihi = lo + eps, hi - eps
        if ilo > ihi:
            continue
        # centers at ilo, ilo + 4r, ...: spacing 4r keeps the balls disjoint
        # and below the 10r limit for consecutive 5r dilations to overlap;
        # stop once the current dilation reaches the right endpoint
        c = ilo
        while True:
            balls.append(Ball(c, r))
            if c + 5 * r >= ihi:
                break
            c = c + 4 * r
    return balls
