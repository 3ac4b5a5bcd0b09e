"""Nested-annulus construction engine.

Builds a nested family of levels K_1 ⊇ K_2 ⊇ ... where each level is a
finite disjoint union of closed annuli A(xi, c_l*psi(R(xi)), psi(R(xi)))
centered at system points whose radii lie in a band [1/(C N_l), C/N_l],
with c_l = 1 - 2**-l.  Children of an annulus are system points of the next
band whose radius-ball sits inside the parent annulus and which stay
psi-clear of every strictly finer system point (the exclusion filter that
forces the limit points to be approximable at order psi but no better).

Desk-scale realities, both recorded in verification reports:

* Stored annulus radii are rounded strictly inward (stored annulus is a
  strict subset of the true one), so disjointness, containment, and hit
  verdicts derived from stored data are sound, and counts can only err low.
* The set of admissible children at a level is astronomically large for the
  rationals (the band resolution must exceed roughly the fourth power of
  the previous one before offset arithmetic admits any children at all), so
  levels store a deterministic capped selection; the band-count floors are
  still verified against the exact offset-progression count with early
  exit, which never needs enumeration.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional

from .errors import (
    ConfigError,
    CountFailure,
    DistributionFailure,
    HypothesisViolated,
    InternalInvariant,
    ResourceLimit,
)
from .psi import ApproxFunction, CertifiedValue, pow_enclosure, tail_sum_bound, least_n_for_tail, threshold_for_ratio
from .space import Arc, Ball, MetricMeasureSpace, make_space, normalize_arcs, arcs_contained, circle_mod
from .wds import (
    WdsSystem,
    WdsPoint,
    band_points_in_arcs,
    denominator_window,
    enumerate_band,
    _isqrt_at_least,
    _isqrt_at_most,
)

ZERO = Fraction(0)
ONE = Fraction(1)

TRACE_FORMAT = "trace-v1"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class BuildConfig:
    system_kind: str = "rationals"
    psi: ApproxFunction = None  # type: ignore[assignment]
    C: Fraction = Fraction(5, 2)
    ball_center: Fraction = None  # type: ignore[assignment]
    ball_radius: Fraction = Fraction(1, 1 << 66)
    mode: str = "practical"
    levels: int = 4
    seed: int = 1
    min_children: int = 3
    max_children: int = 6
    child_scan_cap: int = 64
    interior_samples: int = 1
    max_band_candidates: int = 2_000_000
    tail_floor: str = "enforce"  # or "report"
    dimension_slack: Fraction = Fraction(1, 2)
    n1_override: Optional[int] = None

    def __post_init__(self) -> None:
        if self.psi is None:
            object.__setattr__(self, "psi", ApproxFunction(Fraction(1), Fraction(5, 2)))
        if self.ball_center is None:
            object.__setattr__(self, "ball_center", golden_dyadic(70))
        if self.mode not in ("strict", "practical"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.tail_floor not in ("enforce", "report"):
            raise ConfigError(f"tail_floor must be enforce or report")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.psi.exponent <= 2:
            raise HypothesisViolated(
                f"construction requires tau > 2 (got {self.psi.exponent}): "
                "the band tail sum diverges otherwise"
            )
        if not 0 < self.dimension_slack < 1:
            raise ConfigError("dimension_slack must be in (0, 1)")
        if self.min_children < 2:
            raise ConfigError("min_children must be >= 2")
        if self.max_children < self.min_children:
            raise ConfigError("max_children must be >= min_children")

    def make_system(self) -> WdsSystem:
        return WdsSystem(self.system_kind, make_space("circle"), self.C)

    def to_dict(self) -> dict:
        return {
            "space": "circle",
            "system": self.system_kind,
            "psi": self.psi.spec_string(),
            "alpha": "1",
            "beta": "1",
            "C": _fmt(self.C),
            "ball_center": _fmt(self.ball_center),
            "ball_radius": _fmt(self.ball_radius),
            "mode": self.mode,
            "levels": self.levels,
            "seed": self.seed,
            "min_children": self.min_children,
            "max_children": self.max_children,
            "child_scan_cap": self.child_scan_cap,
            "interior_samples": self.interior_samples,
            "max_band_candidates": self.max_band_candidates,
            "tail_floor": self.tail_floor,
            "dimension_slack": _fmt(self.dimension_slack),
            "n1_override": self.n1_override,
        }


def golden_dyadic(depth: int) -> Fraction:
    """A dyadic of the given depth close to the golden mean fractional part.

    Worst-approximable by rationals among all positions, so a short ball
    around it dodges the empty zones that surround every low-denominator
    fraction.
    """
    root5 = math.isqrt(5 << (2 * depth))
    return Fraction((root5 - (1 << depth)) // 2, 1 << depth)


def _fmt(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _parse_frac(s: str) -> Fraction:
    return Fraction(s)


# ---------------------------------------------------------------------------
# trace data model


@dataclass(frozen=True)
class AnnulusRecord:
    center: Fraction
    center_radius: Fraction
    inner: Fraction
    outer: Fraction
    parent: int

    def arcs(self) -> list[Arc]:
        c, i, o = self.center, self.inner, self.outer
        pieces = [(c - o, c - i), (c + i, c + o)]
        out: list[Arc] = []
        for lo, hi in pieces:
            lo_m = circle_mod(lo)
            span = hi - lo
            if lo_m + span > 1:
                out.append((lo_m, ONE))
                out.append((ZERO, lo_m + span - 1))
            else:
                out.append((lo_m, lo_m + span))
        return normalize_arcs(out)


@dataclass
class LevelParams:
    level: int
    band_n: int
    eps_used: Fraction
    inner_fraction: Fraction  # c_l = 1 - 2**-level
    n_coeff: Fraction  # n_l = (1/(2 C^2)) c_{l-1}^{a-b}(1-c_{l-1})^b  (l >= 2)
    m_required_hi: Fraction  # conservative (hi) value of the count floor
    floor_components: dict = field(default_factory=dict)
    rate_floor: Optional[int] = None
    rate_floor_satisfied: Optional[bool] = None


@dataclass
class LevelSet:
    params: LevelParams
    annuli: list[AnnulusRecord]
    delta: Optional[Fraction] = None
    m_observed: Optional[int] = None  # min stored children per annulus, set later
    band_count_min: Optional[int] = None  # min exact available count per parent
    j_rejections: int = 0

    @property
    def t(self) -> int:
        return len(self.annuli)


@dataclass
class ConstructionTrace:
    config: BuildConfig
    levels: list[LevelSet] = field(default_factory=list)
    verification: list[dict] = field(default_factory=list)
    tail_certificates: list[dict] = field(default_factory=list)

    @property
    def system(self) -> WdsSystem:
        return self.config.make_system()

    @property
    def space(self) -> MetricMeasureSpace:
        return self.system.space

    def root_ball(self) -> Ball:
        return Ball(self.config.ball_center, self.config.ball_radius)


# ---------------------------------------------------------------------------
# shared helpers


def inner_fraction(level: int) -> Fraction:
    """c_l = 1 - 2**-l."""
    return 1 - Fraction(1, 1 << level)


def _stored_radii(
    psi: ApproxFunction, radius: Fraction, c_l: Fraction
) -> tuple[Fraction, Fraction]:
    """Strictly inward-rounded (inner, outer) for the annulus at a point of
    the given band radius: stored annulus is a strict subset of the true
    A(xi, c_l psi(R), psi(R))."""
    enc = psi.eval(radius)
    margin = enc.lo / (1 << (psi.precision_bits // 2))
    outer = enc.lo - margin
    inner = c_l * enc.hi + margin
    if not 0 < inner < outer:
        raise InternalInvariant(
            f"inward rounding collapsed the annulus at radius {radius}"
        )
    return inner, outer


def tail_rhs(C: Fraction, level: int, alpha: Fraction = ONE, beta: Fraction = ONE) -> Fraction:
    """(1-c_l)^beta / ((8 C^3)^(2 alpha + 3) c_l^(beta-alpha)) with the
    exponents rational; for alpha = beta this is (1-c_l) / (8C^3)^5."""
    c_l = inner_fraction(level)
    if alpha != beta:
        raise ConfigError("engine supports alpha == beta ambient spaces")
    base = (8 * C**3) ** 5
    return (1 - c_l) / base


def _psi_small_check(psi: ApproxFunction, r_hi: Fraction, C: Fraction) -> bool:
    """Certify psi(r) <= r/(4 C^3) at the band's largest radius (monotone)."""
    return psi.hi(r_hi) * 4 * C**3 < r_hi


# ---------------------------------------------------------------------------
# offset child search (integer arithmetic; exhaustive counting with early exit)


def _offset_ap_count(a: int, b: int, r: int, q: int) -> int:
    """#{x in [a, b] : x ≡ r (mod q)}."""
    if a > b:
        return 0
    first = a + ((r - a) % q)
    if first > b:
        return 0
    return (b - first) // q + 1


def _raw_count(p: int, q: int, n: int, lo: Fraction, hi: Fraction, qmin: int, qmax: int) -> int:
    """Solutions of |p'q - pq'| = n with n/(qq') in [lo, hi], q' in [qmin, qmax]."""
    a = -((-n * hi.denominator) // (q * hi.numerator))  # ceil(n/(q*hi))
    b = (n * lo.denominator) // (q * lo.numerator)  # floor(n/(q*lo))
    a, b = max(a, qmin), min(b, qmax)
    if a > b:
        return 0
    if q == 1:
        return 2 * (b - a + 1)
    pinv = pow(p, -1, q)
    total = 0
    for sign in (1, -1):
        total += _offset_ap_count(a, b, (-sign * n * pinv) % q, q)
    return total


def _divisors(n: int) -> list[int]:
    out = []
    i = 1
    while i * i <= n:
        if n % i == 0:
            out.append(i)
            if i != n // i:
                out.append(n // i)
        i += 1
    return out


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


def annulus_band_count(
    center_p: int,
    center_q: int,
    offset_lo: Fraction,
    offset_hi: Fraction,
    qmin: int,
    qmax: int,
    stop_at: int,
) -> int:
    """Exact count (capped at stop_at) of reduced p'/q' with q' in
    [qmin, qmax] whose distance from center lies in [offset_lo, offset_hi],
    shrunk so the radius-ball [x - 1/q'^2, x + 1/q'^2] also fits.

    Counting is by the offset identity p'q - pq' = ±n: in-band denominators
    form residue classes intersected with intervals, so each n costs O(1)
    progression counts (with Mobius correction over divisors of n for
    reducedness).  Early exit keeps the n-sweep short whenever the floor
    being verified is far below the full count.
    """
    if qmin > qmax or offset_lo <= 0 or offset_lo > offset_hi:
        return 0
    shrink = Fraction(1, qmin * qmin)
    lo_eff, hi_eff = offset_lo + shrink, offset_hi - shrink
    if lo_eff > hi_eff:
        return 0
    n_max = (hi_eff.numerator * center_q * qmax) // hi_eff.denominator
    total = 0
    for n in range(1, n_max + 1):
        sub = 0
        for d in _divisors(n):
            mu = _mobius(d)
            if mu:
                sub += mu * _raw_count(
                    center_p,
                    center_q,
                    n // d,
                    lo_eff / d,
                    hi_eff / d,
                    -((-qmin) // d),
                    qmax // d,
                )
        total += sub
        if total >= stop_at:
            return stop_at
    return total


def annulus_band_candidates(
    center_p: int,
    center_q: int,
    offset_lo: Fraction,
    offset_hi: Fraction,
    qmin: int,
    qmax: int,
    limit: int,
) -> Iterator[WdsPoint]:
    """Candidate children in deterministic (n, side, denominator) order.

    Yields reduced fractions whose radius-ball fits in the offset band on
    either side of the center; at most `limit` candidates are produced
    (the full candidate set is astronomically large at deep levels).
    """
    if qmin > qmax or offset_lo <= 0 or offset_lo > offset_hi:
        return
    shrink = Fraction(1, qmin * qmin)
    lo_eff, hi_eff = offset_lo + shrink, offset_hi - shrink
    if lo_eff > hi_eff:
        return
    n_max = (hi_eff.numerator * center_q * qmax) // hi_eff.denominator
    pinv = pow(center_p, -1, center_q) if center_q > 1 else 0
    yielded = 0
    for n in range(1, n_max + 1):
        a = -((-n * hi_eff.denominator) // (center_q * hi_eff.numerator))
        b = (n * lo_eff.denominator) // (center_q * lo_eff.numerator)
        a, b = max(a, qmin), min(b, qmax)
        if a > b:
            continue
        streams = []
        for sign in (1, -1):
            if center_q == 1:
                start, step = a, 1
            else:
                r = (-sign * n * pinv) % center_q
                start, step = a + ((r - a) % center_q), center_q
            streams.append((sign, start, step))
        positions = {sign: start for sign, start, _ in streams}
        steps = {sign: step for sign, _, step in streams}
        exhausted = {sign: positions[sign] > b for sign, _, _ in streams}
        while not all(exhausted.values()):
            for sign in (1, -1):
                if exhausted[sign]:
                    continue
                q2 = positions[sign]
                if q2 > b:
                    exhausted[sign] = True
                    continue
                p2 = (sign * n + center_p * q2) // center_q
                if math.gcd(p2, q2) == 1:
                    yield WdsPoint(Fraction(p2, q2), Fraction(1, q2 * q2))
                    yielded += 1
                    if yielded >= limit:
                        return
                positions[sign] = q2 + steps[sign]
    return


def dyadic_band_candidates(
    offset_lo: Fraction,
    offset_hi: Fraction,
    jmin: int,
    jmax: int,
    limit: int,
) -> "Iterator[tuple[int, WdsPoint]]":
    """Offsets n/2**j in [offset_lo, offset_hi] for the dyadic system.

    Yields (n, point-offset) pairs without the center added; the caller
    applies the center and sign.  Deterministic in (j, n) order.
    """
    yielded = 0
    for j in range(jmin, jmax + 1):
        den = 1 << j
        shrink = Fraction(1, 1 << jmin)  # largest radius in the window
        lo_eff, hi_eff = offset_lo + shrink, offset_hi - shrink
        if lo_eff > hi_eff:
            continue
        n_lo = math.ceil(lo_eff * den)
        n_hi = math.floor(hi_eff * den)
        for n in range(n_lo, n_hi + 1):
            if n % 2 == 1:
                yield n, WdsPoint(Fraction(n, den), Fraction(1, den))
                yielded += 1
                if yielded >= limit:
                    return


# ---------------------------------------------------------------------------
# exclusion filter (the mechanism behind the no-better-approximation property)


def clears_finer_points(
    system: WdsSystem,
    psi: ApproxFunction,
    candidate: WdsPoint,
    level_band_n: int,
) -> bool:
    """True iff the candidate keeps distance >= psi(R(eta)) from every
    strictly finer system point eta with R(eta) < 1/(C * level_band_n).

    Points eta with R(eta) < R(candidate) can never come closer than
    psi(R(eta)): separation gives d >= R(eta)/C while psi(R(eta)) is
    certified below R(eta)/(4 C^3); so only R(eta) in
    [R(candidate), 1/(C N_l)) needs checking.  For the rationals every
    violator at those radii satisfies |x - p/q| < 1/(2 q^2) and is therefore
    a continued-fraction convergent of the candidate; for the dyadics the
    nearest lattice point per level is checked directly.
    """
    C = system.C
    x = candidate.point
    cutoff = ONE / (C * level_band_n)  # R(eta) must be strictly below this
    if candidate.radius >= cutoff:
        return True
    if system.kind == "rationals":
        q_min = _isqrt_at_most(C * level_band_n) + 1  # q^2 > C N_l
        q_cand = x.denominator
        n, d = x.numerator, x.denominator
        p_prev, q_prev = 1, 0
        p_cur, q_cur = n // d, 1
        n, d = d, n - (n // d) * d
        while True:
            if q_min <= q_cur <= q_cand and q_cur >= 2:
                if (p_cur, q_cur) != (x.numerator, x.denominator):
                    eta = Fraction(p_cur, q_cur)
                    dist = system.space.distance(x, eta)
                    r_eta = Fraction(1, q_cur * q_cur)
                    if dist < psi.hi(r_eta):
                        return False
            if d == 0 or q_cur > q_cand:
                break
            a = n // d
            n, d = d, n - a * d
            p_prev, q_prev, p_cur, q_cur = (
                p_cur,
                q_cur,
                a * p_cur + p_prev,
                a * q_cur + q_prev,
            )
        return True
    # dyadics: R(eta) in [R(candidate), cutoff) means levels j from the first
    # with 2^-j < cutoff down to the candidate's own level; only the two
    # nearest lattice points per level can lie within psi(R(eta)) since the
    # threshold is certified far below the lattice spacing
    j_cand = candidate.radius.denominator.bit_length() - 1
    j = 1
    while Fraction(1, 1 << j) >= cutoff:
        j += 1
    while j <= j_cand:
        den = 1 << j
        threshold = psi.hi(Fraction(1, den))
        base = math.floor(x * den)
        for p in (base, base + 1):
            if p % 2 == 1:
                eta = Fraction(p, den)
                if eta != x and system.space.distance(x, eta) < threshold:
                    return False
        j += 1
    return True


# ---------------------------------------------------------------------------
# band-resolution selection


def estimate_ball_k(
    system: WdsSystem, ball: Ball, start: int = 1, doublings: int = 80
) -> int:
    """Empirical stand-in for the distribution threshold of a ball: the least
    tested resolution k (on a doubling grid) from which the exhaustive band
    count meets (1/C) k * mu(B) at k, 2k, and 4k."""
    mu = system.space.ball_measure(ball)
    if mu == 0:
        raise DistributionFailure("root ball has zero measure")
    k = max(start, 1)
    for _ in range(doublings):
        ok = True
        for factor in (1, 2, 4):
            kk = k * factor
            required = Fraction(kk) * mu / system.C
            if len(enumerate_band(system, ball, kk)) < required:
                ok = False
                break
        if ok:
            return k
        k *= 2
    raise DistributionFailure(
        f"no distribution threshold found for ball {ball} within {doublings} doublings"
    )


def _first_level_params(config: BuildConfig, system: WdsSystem) -> tuple[LevelParams, dict]:
    psi, C = config.psi, config.C
    eps0 = threshold_for_ratio(psi, 1 / (4 * C**3))
    floors: dict = {"eps0": _fmt(eps0), "C_over_eps0": str(math.ceil(C / eps0))}
    n_floor = math.ceil(C / eps0)
    ball = Ball(config.ball_center, config.ball_radius)
    k_b = estimate_ball_k(system, ball, start=n_floor)
    floors["k_ball"] = str(k_b)
    n1 = max(n_floor, k_b)
    if config.tail_floor == "enforce":
        tail_n = least_n_for_tail(system, psi, ONE, C, tail_rhs(C, 1))
        floors["tail_floor"] = str(tail_n)
        n1 = max(n1, tail_n)
    if config.n1_override is not None:
        if config.n1_override < n1 and config.tail_floor == "enforce":
            raise ConfigError(
                f"n1_override {config.n1_override} is below the floor {n1}"
            )
        n1 = max(n1, config.n1_override) if config.tail_floor == "enforce" else config.n1_override
    params = LevelParams(
        level=1,
        band_n=n1,
        eps_used=eps0,
        inner_fraction=inner_fraction(1),
        n_coeff=ZERO,
        m_required_hi=Fraction(n1) * system.space.ball_measure(ball) / C,
        floor_components=floors,
    )
    return params, floors


def build_first_level(config: BuildConfig) -> ConstructionTrace:
    """Select the first band resolution, enumerate the band inside the root
    ball, and store the level-1 annuli (all of them; no cap at this level)."""
    system = config.make_system()
    psi, C = config.psi, config.C
    params, _ = _first_level_params(config, system)
    ball = Ball(config.ball_center, config.ball_radius)
    if ball.radius < Fraction(1, params.band_n):
        raise DistributionFailure(
            f"root ball radius {ball.radius} cannot contain band-{params.band_n} "
            "radius balls"
        )
    points = enumerate_band(
        system, ball, params.band_n, max_candidates=config.max_band_candidates
    )
    if Fraction(len(points)) < params.m_required_hi:
        raise DistributionFailure(
            f"level 1 produced {len(points)} points; floor is "
            f"{float(params.m_required_hi):.1f}"
        )
    r_hi_band = C / params.band_n
    if not _psi_small_check(psi, r_hi_band, C):
        raise InternalInvariant(
            "psi(r) <= r/(4C^3) failed at the band's largest radius"
        )
    c1 = params.inner_fraction
    annuli = []
    for w in points:
        inner, outer = _stored_radii(psi, w.radius, c1)
        annuli.append(AnnulusRecord(w.point, w.radius, inner, outer, 0))
    level = LevelSet(params=params, annuli=annuli)
    level.delta = _level_delta(system, psi, annuli)
    trace = ConstructionTrace(config=config)
    trace.levels.append(level)
    _append_tail_certificate(trace, 1)
    return trace


def _append_tail_certificate(trace: ConstructionTrace, level: int) -> None:
    config = trace.config
    n_l = trace.levels[level - 1].params.band_n
    cert = tail_sum_bound(trace.system, config.psi, ONE, config.C / n_l)
    rhs = tail_rhs(config.C, level)
    trace.tail_certificates.append(
        {
            "level": level,
            "band_n": str(n_l),
            "cert_lo": _fmt(cert.lo),
            "cert_hi": _fmt(cert.hi),
            "rhs": _fmt(rhs),
            "passed": bool(cert.hi <= rhs),
        }
    )


def _level_delta(
    system: WdsSystem, psi: ApproxFunction, annuli: list[AnnulusRecord]
) -> Optional[Fraction]:
    """delta_l = (1/3) min over pairs of (d(xi_i, xi_j) - psi_i - psi_j),
    computed with hi-rounded psi so the stored value is a certified lower
    bound on the true separation of the annuli.

    Adjacent pairs in circular order realize the minimum: any farther pair
    adds a full gap while the subtracted terms change by at most one
    max-psi, and the pair distances dominate 4 max-psi.
    """
    if len(annuli) < 2:
        return None
    pts = sorted((a.center, a.center_radius) for a in annuli)
    psis = {r: psi.hi(r) for r in {r for _, r in pts}}
    best: Optional[Fraction] = None
    n = len(pts)
    for i in range(n):
        x1, r1 = pts[i]
        x2, r2 = pts[(i + 1) % n]
        gap = x2 - x1 if i + 1 < n else (x2 + 1 - x1)
        d = min(gap, 1 - gap)
        val = d - psis[r1] - psis[r2]
        best = val if best is None else min(best, val)
    return best / 3 if best is not None else None


def select_next_params(trace: ConstructionTrace, target_children: Optional[int] = None) -> LevelParams:
    """Choose the next band resolution: the least doubling above all floors
    (growth, threshold, tail; plus the dimension-rate floor in strict mode)
    at which every current annulus certifiably contains enough band points.
    """
    config = trace.config
    system, psi, C = trace.system, config.psi, config.C
    level = trace.levels[-1]
    l = level.params.level
    c_next = inner_fraction(l + 1)
    eps_l = threshold_for_ratio(psi, (1 - level.params.inner_fraction) / C**3)
    floors: dict = {
        "eps": _fmt(eps_l),
        "C_over_eps": str(math.ceil(C / eps_l)),
        "growth": str(math.ceil(C * C * level.params.band_n)),
    }
    base = max(math.ceil(C / eps_l), math.ceil(C * C * level.params.band_n))
    if config.tail_floor == "enforce":
        tail_n = least_n_for_tail(system, psi, ONE, C, tail_rhs(C, l + 1))
        floors["tail_floor"] = str(tail_n)
        base = max(base, tail_n)
    rate_floor: Optional[int] = None
    if config.mode == "strict" or True:  # always computed; enforced in strict
        rate_floor = _rate_floor(config, level)
        floors["rate_floor"] = str(rate_floor)
    if config.mode == "strict" and rate_floor is not None:
        base = max(base, rate_floor)

    tgt = target_children if target_children is not None else config.min_children
    n_next = base
    n_coeff = (1 - level.params.inner_fraction) / (2 * C * C)
    for _ in range(4096):
        m_floor_hi = n_coeff * n_next * psi.hi(ONE / (C * level.params.band_n))
        need = max(Fraction(tgt), m_floor_hi)
        if _all_annuli_have_counts(system, level, n_next, need, C):
            params = LevelParams(
                level=l + 1,
                band_n=n_next,
                eps_used=eps_l,
                inner_fraction=c_next,
                n_coeff=n_coeff,
                m_required_hi=m_floor_hi,
                floor_components=floors,
                rate_floor=rate_floor,
                rate_floor_satisfied=(rate_floor is None or n_next >= rate_floor),
            )
            return params
        n_next *= 2
    raise CountFailure("no band resolution found with enough children per annulus")


def _rate_floor(config: BuildConfig, level: LevelSet) -> int:
    """Certified integer floor from the dimension-rate inequality: the next
    resolution must exceed both
      (C n^{-1} psi(1/(C N_l))^{-1})^(2/eps)   and
      ((6 C^2) / n')^{2(1-eps)/eps}
    where n, n' are the branching coefficients at this and the following
    level and eps is the configured slack."""
    C, psi, eps = config.C, config.psi, config.dimension_slack
    l = level.params.level
    n_this = (1 - inner_fraction(l)) / (2 * C * C)
    n_next = (1 - inner_fraction(l + 1)) / (2 * C * C)
    psi_enc = psi.eval(ONE / (C * level.params.band_n))
    term1 = pow_enclosure(C / (n_this * psi_enc.lo), 2 / eps, 64).hi
    term2 = pow_enclosure(6 * C * C / n_next, 2 * (1 - eps) / eps, 64).hi
    return max(math.ceil(term1), math.ceil(term2))


def _all_annuli_have_counts(
    system: WdsSystem,
    level: LevelSet,
    n_next: int,
    need: Fraction,
    C: Fraction,
) -> bool:
    stop = math.ceil(need) + 1
    for rec in level.annuli:
        if _band_count_for(system, rec, n_next, stop) < need:
            return False
    return True


def _band_count_for(
    system: WdsSystem, rec: AnnulusRecord, n_next: int, stop: int
) -> int:
    if system.kind == "rationals":
        qmin = _isqrt_at_least(Fraction(n_next) / system.C)
        qmax = _isqrt_at_most(Fraction(n_next) * system.C)
        if qmin > qmax:
            return 0
        return annulus_band_count(
            rec.center.numerator % rec.center.denominator
            if rec.center.denominator > 1
            else rec.center.numerator,
            rec.center.denominator,
            rec.inner,
            rec.outer,
            qmin,
            qmax,
            stop,
        )
    jmin, jmax = denominator_window(system, n_next)
    if jmin > jmax:
        return 0
    count = 0
    shrink = Fraction(1, 1 << jmin)  # largest radius in the window
    lo_eff, hi_eff = rec.inner + shrink, rec.outer - shrink
    if lo_eff > hi_eff:
        return 0
    for j in range(jmin, jmax + 1):
        den = 1 << j
        n_lo, n_hi = math.ceil(lo_eff * den), math.floor(hi_eff * den)
        if n_hi >= n_lo:
            odd = (n_hi + 1) // 2 - n_lo // 2
            count += 2 * odd  # both sides of the center
        if count >= stop:
            return stop
    return count


def refine_level(trace: ConstructionTrace, params: LevelParams) -> LevelSet:
    """Build the next level: for each annulus, stream candidate children in
    deterministic offset order, keep those whose radius-ball fits inside the
    stored parent annulus and which clear all strictly finer points, cap the
    stored selection, and verify the count floors exactly."""
    config = trace.config
    system, psi, C = trace.system, config.psi, config.C
    parent_level = trace.levels[-1]
    l_next = params.level
    c_next = params.inner_fraction
    if system.kind == "rationals":
        qmin = _isqrt_at_least(Fraction(params.band_n) / C)
        qmax = _isqrt_at_most(Fraction(params.band_n) * C)
    else:
        qmin, qmax = denominator_window(system, params.band_n)
    annuli: list[AnnulusRecord] = []
    children_per_parent: list[int] = []
    band_count_min: Optional[int] = None
    j_rejections = 0
    floor_need = max(Fraction(2), params.m_required_hi)
    for parent_idx, rec in enumerate(parent_level.annuli):
        stop = math.ceil(floor_need) + 1
        avail = _band_count_for(system, rec, params.band_n, stop)
        if Fraction(avail) < floor_need:
            raise CountFailure(
                f"annulus {parent_idx} at level {l_next - 1} holds {avail} band "
                f"points; the floor is {float(floor_need):.3f}"
            )
        band_count_min = avail if band_count_min is None else min(band_count_min, avail)
        kids: list[WdsPoint] = []
        scanned = 0
        if system.kind == "rationals":
            # the offset identity yields absolute fractions p'/q' directly
            cands = annulus_band_candidates(
                rec.center.numerator, rec.center.denominator,
                rec.inner, rec.outer, qmin, qmax, config.child_scan_cap,
            )
        else:
            base_stream = dyadic_band_candidates(
                rec.inner, rec.outer, qmin, qmax, config.child_scan_cap // 2
            )
            def dyadic_points():
                for n, w in base_stream:
                    for sign in (1, -1):
                        yield WdsPoint(circle_mod(rec.center + sign * w.point), w.radius)
            cands = dyadic_points()
        for cand in cands:
            scanned += 1
            pt = WdsPoint(circle_mod(cand.point), cand.radius)
            if not _ball_in_stored_annulus(system, rec, pt):
                continue
            if not clears_finer_points(system, psi, pt, parent_level.params.band_n):
                j_rejections += 1
                continue
            kids.append(pt)
            if len(kids) >= config.max_children:
                break
        if len(kids) < 2:
            raise CountFailure(
                f"annulus {parent_idx} at level {l_next - 1} yielded "
                f"{len(kids)} children after the exclusion filter "
                f"(scanned {scanned})"
            )
        if len(kids) < config.min_children and config.mode == "strict":
            raise CountFailure(
                f"annulus {parent_idx}: {len(kids)} children below the "
                f"strict-mode target {config.min_children}"
            )
        kids.sort(key=lambda w: w.point)
        children_per_parent.append(len(kids))
        for w in kids:
            inner, outer = _stored_radii(psi, w.radius, c_next)
            annuli.append(AnnulusRecord(w.point, w.radius, inner, outer, parent_idx))
    parent_level.m_observed = min(children_per_parent)
    parent_level.band_count_min = band_count_min
    level = LevelSet(params=params, annuli=annuli, j_rejections=j_rejections)
    level.delta = _level_delta(system, psi, annuli)
    trace.levels.append(level)
    _append_tail_certificate(trace, l_next)
    return level


def _ball_in_stored_annulus(
    system: WdsSystem, rec: AnnulusRecord, w: WdsPoint
) -> bool:
    """[w - R(w), w + R(w)] inside one side of the stored annulus (exact)."""
    d = system.space.distance(rec.center, w.point)
    return d - w.radius >= rec.inner and d + w.radius <= rec.outer
