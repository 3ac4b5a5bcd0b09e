"""Independent classical verifier: continued fractions and approximation
classification.

This module deliberately re-implements its own scanning machinery (Euclidean
continued fractions, convergent ladders, per-denominator sweeps) rather than
calling the band-enumeration used by the construction engine, so that the
engine's claimed hit counts and exclusion properties are checked by a second
code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Optional

from .errors import ResourceLimit
from .psi import ApproxFunction, CertifiedValue, MAX_BITS

if TYPE_CHECKING:  # pragma: no cover
    from .wds import WdsSystem

ZERO = Fraction(0)
ONE = Fraction(1)


@dataclass(frozen=True)
class ContinuedFraction:
    """Canonical finite expansion [a0; a1, a2, ...] with last partial >= 2
    (single-term expansions excepted)."""

    a0: int
    partials: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(a < 1 for a in self.partials):
            raise ValueError("partial quotients must be positive")
        if self.partials and self.partials[-1] < 2:
            raise ValueError("canonical expansions end with a partial >= 2")

    def terms(self) -> list[int]:
        return [self.a0, *self.partials]


def continued_fraction(x: Fraction) -> ContinuedFraction:
    """Canonical expansion of x by the Euclidean algorithm."""
    a0 = x.numerator // x.denominator
    terms: list[int] = []
    n, d = x.numerator - a0 * x.denominator, x.denominator
    # now 0 <= n/d < 1; expand 1/(n/d) repeatedly
    while n:
        a, rem = divmod(d, n)
        terms.append(a)
        d, n = n, rem
    if terms and terms[-1] == 1 and len(terms) > 1:
        terms.pop()
        terms[-1] += 1
    if terms == [1]:
        a0 += 1
        terms = []
    return ContinuedFraction(a0, tuple(terms))


def reconstruct(cf: ContinuedFraction) -> Fraction:
    """Fold the expansion back to the exact value."""
    value = Fraction(0)
    for a in reversed(cf.partials):
        value = 1 / (a + value)
    return cf.a0 + value


def convergents(cf: ContinuedFraction) -> list[Fraction]:
    """The ladder p_k/q_k in lowest terms via the standard recurrence."""
    out: list[Fraction] = []
    p_prev, q_prev = 1, 0
    p_cur, q_cur = cf.a0, 1
    out.append(Fraction(p_cur, q_cur))
    for a in cf.partials:
        p_prev, q_prev, p_cur, q_cur = p_cur, q_cur, a * p_cur + p_prev, a * q_cur + q_prev
        out.append(Fraction(p_cur, q_cur))
    return out


@dataclass(frozen=True)
class Candidate:
    point: Fraction
    radius: Fraction
    distance: Fraction


@dataclass(frozen=True)
class ExactnessVerdict:
    """Band-limited classification of how well x is approximated.

    hits: certified d(x, xi) < psi(R(xi)) even after inflating by the error
    radius.  near_violations: certified d(x, xi) < c * psi(R(xi)).
    boundary: exact coincidences d(x, xi) = psi(R(xi)), reported separately
    since the well-approximable definition is strict.  inconclusive: the
    error radius straddles the threshold.
    """

    hits: list[Candidate]
    near_violations: list[Candidate]
    inconclusive: list[Candidate]
    boundary: list[Candidate]
    bands_checked: tuple[Fraction, Fraction]
    c_tested: Fraction
    error_radius: Fraction

    def to_dict(self) -> dict:
        def enc(lst: list[Candidate]) -> list[dict]:
            return [
                {
                    "point": _fmt(c.point),
                    "radius": _fmt(c.radius),
                    "distance": _fmt(c.distance),
                }
                for c in lst
            ]

        return {
            "hits": enc(self.hits),
            "near_violations": enc(self.near_violations),
            "inconclusive": enc(self.inconclusive),
            "boundary": enc(self.boundary),
            "bands_checked": [_fmt(self.bands_checked[0]), _fmt(self.bands_checked[1])],
            "c_tested": _fmt(self.c_tested),
            "error_radius": _fmt(self.error_radius),
        }


def _fmt(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _circle_distance(a: Fraction, b: Fraction) -> Fraction:
    d = abs(a - b)
    d -= d.numerator // d.denominator  # mod 1
    return min(d, 1 - d)


def _own_convergent_pairs(x: Fraction) -> list[tuple[int, int]]:
    """(p, q) convergent pairs of x, independent of the wds module."""
    pairs: list[tuple[int, int]] = []
    n, d = x.numerator, x.denominator
    a = n // d
    p_prev, q_prev = 1, 0
    p_cur, q_cur = a, 1
    pairs.append((p_cur, q_cur))
    n, d = d, n - a * d
    while d:
        a, rem = divmod(n, d)
        n, d = d, rem
        p_prev, q_prev, p_cur, q_cur = p_cur, q_cur, a * p_cur + p_prev, a * q_cur + q_prev
        pairs.append((p_cur, q_cur))
    return pairs


def classify_exactness(
    x: Fraction,
    error_radius: Fraction,
    system: "WdsSystem",
    psi: ApproxFunction,
    c: Fraction,
    band: tuple[Fraction, Fraction],
    max_candidates: int = 500_000,
) -> ExactnessVerdict:
    """Classify every system point xi with R(xi) in the band against the
    strict inequality d(x, xi) < psi(R(xi)) and the c-scaled version.

    x is only known to error_radius, so classifications are certified
    against the worst case: a hit requires d + err < psi, a violation
    requires d + err < c*psi, and candidates whose status depends on the
    unknown true position are reported inconclusive.  A self-coincidence
    (distance 0) counts as a hit, following the strict inequality.
    """
    if not 0 < c < 1:
        raise ValueError("c must lie in (0, 1)")
    radius_lo, radius_hi = band
    if not 0 < radius_lo <= radius_hi:
        raise ValueError("band must satisfy 0 < radius_lo <= radius_hi")
    wrap = system.space.kind == "circle"

    candidates = _band_candidates(x, system, psi, error_radius, radius_lo, radius_hi, max_candidates)

    hits: list[Candidate] = []
    violations: list[Candidate] = []
    inconclusive: list[Candidate] = []
    boundary: list[Candidate] = []
    for cand in candidates:
        enc = _psi_enclosure_refined(psi, cand.radius, cand.distance + error_radius)
        d_hi = cand.distance + error_radius
        d_lo = max(ZERO, cand.distance - error_radius)
        if enc.exact and d_hi == enc.lo and error_radius == 0:
            boundary.append(cand)
            continue
        if d_hi < enc.lo:
            hits.append(cand)
            if d_hi < c * enc.lo:
                violations.append(cand)
            elif d_lo < c * enc.hi:
                inconclusive.append(cand)
            continue
        if d_lo >= enc.hi:
            continue  # certainly not a hit
        inconclusive.append(cand)
    return ExactnessVerdict(
        hits=hits,
        near_violations=violations,
        inconclusive=inconclusive,
        boundary=boundary,
        bands_checked=(radius_lo, radius_hi),
        c_tested=c,
        error_radius=error_radius,
    )


def _psi_enclosure_refined(
    psi: ApproxFunction, r: Fraction, pivot: Fraction
) -> CertifiedValue:
    """Enclosure of psi(r), refined until it no longer straddles pivot or
    the precision cap is reached."""
    bits = psi.precision_bits
    enc = psi.eval(r, bits)
    while enc.lo <= pivot <= enc.hi and not enc.exact and bits < MAX_BITS:
        bits *= 2
        enc = psi.eval(r, min(bits, MAX_BITS))
    return enc


def _band_candidates(
    x: Fraction,
    system: "WdsSystem",
    psi: ApproxFunction,
    error_radius: Fraction,
    radius_lo: Fraction,
    radius_hi: Fraction,
    max_candidates: int,
) -> list[Candidate]:
    """All system points in the radius band within psi(R) + error_radius of x.

    Dyadics: per-level nearest-lattice check.  Rationals: direct denominator
    sweep while the threshold may exceed the convergent criterion, then the
    convergent ladder of x (every remaining candidate satisfies
    |x - p/q| < 1/(2 q^2) and so must be a convergent).
    """
    wrap = system.space.kind == "circle"
    dist = _circle_distance if wrap else (lambda a, b: abs(a - b))
    out: list[Candidate] = []
    seen: set[tuple[Fraction, Fraction]] = set()

    def consider(pt: Fraction, r: Fraction) -> None:
        if wrap:
            pt = pt - (pt.numerator // pt.denominator)
        elif not 0 <= pt <= 1:
            return
        d = dist(x, pt)
        threshold = psi.hi(r) + error_radius
        if d <= threshold and (pt, r) not in seen:
            seen.add((pt, r))
            out.append(Candidate(pt, r, d))

    if system.kind == "dyadics":
        j = 0
        while Fraction(1, 1 << j) > radius_hi:
            j += 1
        while Fraction(1, 1 << j) >= radius_lo:
            den = 1 << j
            r = Fraction(1, den)
            threshold = psi.hi(r) + error_radius
            base = math.floor(x * den)
            span = math.ceil(threshold * den) + 1
            for p in range(base - span, base + span + 2):
                if j == 0 or p % 2 == 1:
                    consider(Fraction(p, den), r)
            j += 1
        out.sort(key=lambda cand: (cand.radius, cand.point))
        return out

    qmin = 1
    while Fraction(1, qmin * qmin) > radius_hi:
        qmin += 1
    qmax = qmin
    while Fraction(1, (qmax + 1) * (qmax + 1)) >= radius_lo:
        qmax += 1
    if Fraction(1, qmax * qmax) < radius_lo:
        qmax -= 1
    if qmax < qmin:
        return []

    # direct sweep while it stays cheap AND while the threshold is too large
    # for the convergent shortcut
    budget = max_candidates
    q = qmin
    while q <= qmax:
        r = Fraction(1, q * q)
        threshold = psi.hi(r) + error_radius
        if threshold < Fraction(1, 2 * q * q) and (q - qmin) > 16:
            break  # Legendre regime from here on
        width = 2 * threshold * q + 2
        budget -= int(width) + 1
        if budget < 0:
            raise ResourceLimit(
                f"direct candidate sweep for band q in [{qmin},{qmax}] "
                f"exceeded {max_candidates} candidates at q={q}"
            )
        lo_p = math.floor((x - threshold) * q)
        hi_p = math.ceil((x + threshold) * q)
        for p in range(lo_p, hi_p + 1):
            if math.gcd(p, q) == 1:
                consider(Fraction(p, q), r)
        q += 1
    if q <= qmax:
        switch_q = q
        # every candidate with q' >= switch_q satisfies
        # |x - p/q'| <= psi(R) + err < 1/(2 q'^2): must be a convergent of x
        for p_c, q_c in _own_convergent_pairs(x):
            if q_c < switch_q:
                continue
            if q_c > qmax:
                break
            r = Fraction(1, q_c * q_c)
            threshold = psi.hi(r) + error_radius
            if threshold >= Fraction(1, 2 * q_c * q_c):
                raise ResourceLimit(
                    "threshold exceeded the convergent criterion mid-scan"
                )
            consider(Fraction(p_c, q_c), r)
    out.sort(key=lambda cand: (cand.radius, cand.point))
    return out
