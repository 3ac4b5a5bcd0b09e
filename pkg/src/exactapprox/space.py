"""Metric measure spaces with exact-arithmetic ball and annulus measures.

Three concrete instances:

* circle    -- R/Z with d(x,y) = min(|x-y|, 1-|x-y|), arc-length measure,
               Ahlfors and annular regular with alpha = beta = 1.
* interval  -- [0,1] with |x-y| and length measure.
* cantor3   -- the middle-thirds set with Euclidean distance and its natural
               log2/log3-dimensional measure.  Deliberately fails annular
               regularity: annuli that land inside removed gaps are empty, a
               reproducible negative fixture for the audit.

All region bookkeeping is done on closed arcs [lo, hi] in [0, 1] with
Fraction endpoints; a wrapping circle arc is split into at most two pieces.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .errors import DegenerateRegion, PrecisionExhausted

Arc = tuple[Fraction, Fraction]

ZERO = Fraction(0)
ONE = Fraction(1)
HALF = Fraction(1, 2)


# ---------------------------------------------------------------------------
# arc algebra


def normalize_arcs(arcs: list[Arc]) -> list[Arc]:
    """Sort and merge overlapping or touching closed arcs."""
    items = sorted((a for a in arcs if a[0] <= a[1]), key=lambda a: a[0])
    out: list[Arc] = []
    for lo, hi in items:
        if out and lo <= out[-1][1]:
            if hi > out[-1][1]:
                out[-1] = (out[-1][0], hi)
        else:
            out.append((lo, hi))
    return out


def arcs_measure(arcs: list[Arc]) -> Fraction:
    return sum((hi - lo for lo, hi in arcs), ZERO)


def point_in_arcs(x: Fraction, arcs: list[Arc]) -> bool:
    return any(lo <= x <= hi for lo, hi in arcs)


def arcs_contained(inner: list[Arc], outer: list[Arc]) -> bool:
    """Every inner arc lies inside some outer arc (both normalized)."""
    for lo, hi in inner:
        if not any(olo <= lo and hi <= ohi for olo, ohi in outer):
            return False
    return True


def arcs_disjoint(a: list[Arc], b: list[Arc]) -> bool:
    for lo, hi in a:
        for olo, ohi in b:
            if lo <= ohi and olo <= hi:
                return False
    return True


def circle_mod(x: Fraction) -> Fraction:
    return x - (x.numerator // x.denominator)


# ---------------------------------------------------------------------------
# middle-thirds Cantor set helpers (exact, rational inputs)

_MAX_DIGIT_STEPS = 1 << 17


def cantor_function(x: Fraction) -> Fraction:
    """The Cantor "devil's staircase" F(x), exact for rational x in [0,1].

    Walks ternary digits with cycle detection; rationals have eventually
    periodic expansions so the walk always terminates.
    """
    if x <= 0:
        return ZERO
    if x >= 1:
        return ONE
    seen: dict[Fraction, int] = {}
    bits: list[int] = []
    cur = x
    while True:
        if cur in seen:
            start = seen[cur]
            length = len(bits) - start
            prefix = sum(Fraction(b, 1 << (i + 1)) for i, b in enumerate(bits[:start]))
            period_val = sum(b << (length - 1 - i) for i, b in enumerate(bits[start:]))
            tail = Fraction(period_val, (1 << length) - 1)
            return prefix + tail / (1 << start)
        seen[cur] = len(bits)
        tripled = 3 * cur
        digit = tripled.numerator // tripled.denominator
        cur = tripled - digit
        if digit == 1:
            return (
                sum(Fraction(b, 1 << (i + 1)) for i, b in enumerate(bits))
                + Fraction(1, 1 << (len(bits) + 1))
            )
        bits.append(digit // 2)
        if len(bits) > _MAX_DIGIT_STEPS:  # pragma: no cover
            raise PrecisionExhausted("ternary digit walk exceeded step cap")


def in_cantor(x: Fraction) -> bool:
    """Membership in the middle-thirds set, decided exactly."""
    if x < 0 or x > 1:
        return False
    seen: set[Fraction] = set()
    cur = x
    while True:
        if cur == 0 or cur == 1:
            return True
        if cur in seen:
            return True
        seen.add(cur)
        tripled = 3 * cur
        digit = tripled.numerator // tripled.denominator
        if digit == 1 and tripled != 1:
            # inside an open middle third unless it is the left endpoint 1/3
            return False
        if tripled == 1:
            return True  # x ends ...1/3 exactly: a gap endpoint, in the set
        cur = tripled - digit
        if len(seen) > _MAX_DIGIT_STEPS:  # pragma: no cover
            raise PrecisionExhausted("ternary digit walk exceeded step cap")


def cantor_min_ge(u: Fraction) -> Optional[Fraction]:
    """Smallest point of the middle-thirds set >= u, or None if u > 1."""
    if u <= 0:
        return ZERO
    if u > 1:
        return None
    digits: list[int] = []
    seen: dict[Fraction, int] = {}
    cur = u
    while True:
        if cur in seen:
            start = seen[cur]
            length = len(digits) - start
            prefix = sum(Fraction(d, 3 ** (i + 1)) for i, d in enumerate(digits[:start]))
            period_val = sum(d * 3 ** (length - 1 - i) for i, d in enumerate(digits[start:]))
            tail = Fraction(period_val, 3**length - 1)
            return prefix + tail / (3**start)
        seen[cur] = len(digits)
        if cur <= Fraction(1, 3):
            digits.append(0)
            cur = 3 * cur
            if cur == 0:
                return sum(Fraction(d, 3 ** (i + 1)) for i, d in enumerate(digits))
        elif cur <= Fraction(2, 3):
            digits.append(2)
            return sum(Fraction(d, 3 ** (i + 1)) for i, d in enumerate(digits))
        else:
            digits.append(2)
            cur = 3 * cur - 2
            if cur == 0:
                return sum(Fraction(d, 3 ** (i + 1)) for i, d in enumerate(digits))
        if len(digits) > _MAX_DIGIT_STEPS:  # pragma: no cover
            raise PrecisionExhausted("ternary digit walk exceeded step cap")


def cantor_interval_empty(lo: Fraction, hi: Fraction) -> bool:
    """True iff [lo, hi] contains no point of the middle-thirds set."""
    if hi < 0 or lo > 1 or lo > hi:
        return True
    m = cantor_min_ge(lo)
    return m is None or m > hi


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Ball:
    center: Fraction
    radius: Fraction

    def __post_init__(self) -> None:
        if self.radius < 0:
            raise ValueError("ball radius must be nonnegative")


@dataclass(frozen=True)
class Annulus:
    """Closed-outer minus open-inner: closure(B(c, outer)) \\ B(c, inner)."""

    center: Fraction
    inner: Fraction
    outer: Fraction

    def __post_init__(self) -> None:
        if not (0 <= self.inner <= self.outer):
            raise ValueError("annulus needs 0 <= inner <= outer")


@dataclass(frozen=True)
class RegularityReport:
    passed: bool
    estimated_C: Optional[Fraction]
    witness: Optional[Annulus]
    samples_tested: int
    degenerate_skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "estimated_C": _fmt_opt(self.estimated_C),
            "witness": None
            if self.witness is None
            else {
                "center": _fmt(self.witness.center),
                "inner": _fmt(self.witness.inner),
                "outer": _fmt(self.witness.outer),
            },
            "samples_tested": self.samples_tested,
            "degenerate_skipped": self.degenerate_skipped,
        }


def _fmt(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _fmt_opt(q: Optional[Fraction]) -> Optional[str]:
    return None if q is None else _fmt(q)


@dataclass(frozen=True)
class MetricMeasureSpace:
    """Ambient space with exact distance and measure.

    alpha/beta are the regularity exponents; they are rational (= 1) for the
    circle and interval and irrational (log2/log3) for the Cantor fixture,
    where they are kept symbolic and only used through certified audits.
    """

    kind: str
    diameter: Fraction = field(init=False)

    def __post_init__(self) -> None:
        if self.kind not in ("circle", "interval", "cantor3"):
            raise ValueError(f"unknown space kind {self.kind!r}")
        object.__setattr__(
            self, "diameter", HALF if self.kind == "circle" else ONE
        )

    @property
    def alpha(self) -> Optional[Fraction]:
        """Ahlfors exponent; None means the irrational log2/log3."""
        return ONE if self.kind in ("circle", "interval") else None

    @property
    def beta(self) -> Optional[Fraction]:
        return self.alpha

    # -- points ------------------------------------------------------------

    def normalize_point(self, x: Fraction) -> Fraction:
        if self.kind == "circle":
            return circle_mod(x)
        if not 0 <= x <= 1:
            raise ValueError(f"{x} outside [0,1]")
        if self.kind == "cantor3" and not in_cantor(x):
            raise ValueError(f"{x} is not in the middle-thirds set")
        return x

    def distance(self, a: Fraction, b: Fraction) -> Fraction:
        if self.kind == "circle":
            d = abs(circle_mod(a) - circle_mod(b))
            return min(d, 1 - d)
        return abs(a - b)

    # -- measures ----------------------------------------------------------

    def ball_measure(self, ball: Ball) -> Fraction:
        c, r = ball.center, ball.radius
        if r == 0:
            return ZERO
        if self.kind == "circle":
            return min(2 * r, ONE)
        lo, hi = max(c - r, ZERO), min(c + r, ONE)
        if self.kind == "interval":
            return hi - lo
        return cantor_function(hi) - cantor_function(lo)

    def annulus_measure(self, annulus: Annulus) -> Fraction:
        outer = self.ball_measure(Ball(annulus.center, annulus.outer))
        inner = self.ball_measure(Ball(annulus.center, annulus.inner))
        return outer - inner

    def annulus_empty(self, annulus: Annulus) -> bool:
        """Exact emptiness of the closed annulus as a point set."""
        c, r, rr = annulus.center, annulus.inner, annulus.outer
        if self.kind == "circle":
            return False  # every valid circle annulus contains points
        if self.kind == "interval":
            left = c - rr <= 1 and c - r >= 0
            right = c + r <= 1 and c + rr >= 0
            return not (left or right)
        left_empty = cantor_interval_empty(c - rr, c - r)
        right_empty = cantor_interval_empty(c + r, c + rr)
        return left_empty and right_empty

    # -- regions as arcs (circle / interval only) ---------------------------

    def ball_arcs(self, ball: Ball) -> list[Arc]:
        c, r = ball.center, ball.radius
        if self.kind == "interval":
            return normalize_arcs([(max(c - r, ZERO), min(c + r, ONE))])
        if self.kind != "circle":
            raise ValueError("arcs are defined for circle and interval spaces")
        if 2 * r >= 1:
            return [(ZERO, ONE)]
        c = circle_mod(c)
        lo, hi = c - r, c + r
        if lo < 0:
            return normalize_arcs([(ZERO, hi), (lo + 1, ONE)])
        if hi > 1:
            return normalize_arcs([(lo, ONE), (ZERO, hi - 1)])
        return [(lo, hi)]

    def annulus_arcs(self, annulus: Annulus) -> list[Arc]:
        c, r, rr = annulus.center, annulus.inner, annulus.outer
        if self.kind == "circle" and rr > HALF:
            raise ValueError("annulus outer radius exceeds circle diameter")
        pieces: list[Arc] = []
        for lo, hi in ((c - rr, c - r), (c + r, c + rr)):
            if lo > hi:
                continue
            if self.kind == "interval":
                lo2, hi2 = max(lo, ZERO), min(hi, ONE)
                if lo2 <= hi2:
                    pieces.append((lo2, hi2))
            else:
                lo_m = circle_mod(lo)
                span = hi - lo
                if lo_m + span > 1:
                    pieces.append((lo_m, ONE))
                    pieces.append((ZERO, lo_m + span - 1))
                else:
                    pieces.append((lo_m, lo_m + span))
        return normalize_arcs(pieces)


def make_space(kind: str) -> MetricMeasureSpace:
    return MetricMeasureSpace(kind)


# ---------------------------------------------------------------------------
# regularity audit


def _frac_above(x) -> Fraction:
    """A Fraction certainly >= the mpmath float x (outward rounding)."""
    import math

    f = float(x)
    return Fraction(math.nextafter(math.nextafter(f, math.inf), math.inf))


def _sample_dyadic(rng: random.Random, depth: int) -> Fraction:
    return Fraction(rng.randrange(0, 1 << depth), 1 << depth)


def _sample_cantor_point(rng: random.Random, depth: int) -> Fraction:
    return sum(
        Fraction(2 * rng.randrange(0, 2), 3 ** (i + 1)) for i in range(depth)
    )


def audit_regularity(
    space: MetricMeasureSpace,
    trials: int,
    rng_seed: int,
    depth: int = 12,
) -> RegularityReport:
    """Sample seeded balls and annuli and estimate the regularity constant.

    Returns the smallest C making both the Ahlfors and annular bounds hold
    over the sample, or a witness annulus when no finite C works (an empty
    annulus whose claimed lower bound is positive).  Degenerate annuli
    (inner == outer) are reported but excluded from estimation since the
    annular bound is vacuous there.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = random.Random(rng_seed)
    need_c: Fraction = ONE
    degenerate = 0
    exact_exponents = space.alpha is not None
    if not exact_exponents:
        import mpmath

        mp_prev = mpmath.mp.prec
        mpmath.mp.prec = 128
        iv = mpmath.iv
        iv.prec = 128
        alpha_iv = iv.log(2) / iv.log(3)
    try:
        for _ in range(trials):
            if space.kind == "cantor3":
                center = _sample_cantor_point(rng, depth)
            else:
                center = _sample_dyadic(rng, depth)
            r_small = Fraction(rng.randrange(1, 1 << depth), 1 << depth) * space.diameter
            r_big = Fraction(rng.randrange(1, 1 << depth), 1 << depth) * space.diameter
            if r_small > r_big:
                r_small, r_big = r_big, r_small
            # Ahlfors bounds on the sampled ball
            ball = Ball(center, r_big)
            mu = space.ball_measure(ball)
            if exact_exponents:
                r_pow = r_big  # alpha == 1
                if mu == 0:
                    return RegularityReport(
                        False, None, Annulus(center, ZERO, r_big), trials, degenerate
                    )
                need_c = max(need_c, mu / r_pow, r_pow / mu)
            else:
                if mu == 0:
                    return RegularityReport(
                        False, None, Annulus(center, ZERO, r_big), trials, degenerate
                    )
                r_iv = iv.mpf(r_big.numerator) / iv.mpf(r_big.denominator)
                mu_iv = iv.mpf(mu.numerator) / iv.mpf(mu.denominator)
                r_pow_iv = iv.exp(alpha_iv * iv.log(r_iv))
                hi1 = mu_iv / r_pow_iv
                hi2 = r_pow_iv / mu_iv
                need_c = max(need_c, _frac_above(hi1.b), _frac_above(hi2.b))
            # annular lower bound on the sampled annulus
            if r_small == r_big:
                degenerate += 1
                continue
            ann = Annulus(center, r_small, r_big)
            mu_a = space.annulus_measure(ann)
            empty = space.annulus_empty(ann)
            if empty or mu_a == 0:
                # claimed lower bound (1/C) r^a ((R-r)/r)^b is positive here,
                # so no finite C can work: this annulus is the witness.
                return RegularityReport(False, None, ann, trials, degenerate)
            if exact_exponents:
                claimed_over_c = r_small * ((r_big - r_small) / r_small)  # alpha=beta=1
                need_c = max(need_c, claimed_over_c / mu_a)
            else:
                r_iv = iv.mpf(r_small.numerator) / iv.mpf(r_small.denominator)
                gap_iv = iv.mpf((r_big - r_small).numerator) / iv.mpf(
                    (r_big - r_small).denominator
                )
                mu_iv = iv.mpf(mu_a.numerator) / iv.mpf(mu_a.denominator)
                val = iv.exp(alpha_iv * (iv.log(r_iv) + iv.log(gap_iv / r_iv))) / mu_iv
                need_c = max(need_c, _frac_above(val.b))
    finally:
        if not exact_exponents:
            mpmath.mp.prec = mp_prev
    return RegularityReport(True, need_c, None, trials, degenerate)
