"""Power-law approximation functions with certified rational enclosures.

The function family is psi(x) = a * x**tau with rational a > 0 and rational
tau > 1 (denominator at most 8).  Power laws keep the lower order at zero
exact (it equals tau), and rational powers of rationals admit certified
enclosures by integer root bracketing, so every strict inequality the
construction needs can be decided conservatively: use the enclosure's hi
when the engine needs "value < bound" and its lo when it needs
"value >= bound".
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING

import gmpy2

from .errors import HypothesisViolated, PrecisionExhausted

if TYPE_CHECKING:  # pragma: no cover
    from .wds import WdsSystem

DEFAULT_BITS = 128
MAX_BITS = 1024

ZERO = Fraction(0)
ONE = Fraction(1)


@dataclass(frozen=True)
class CertifiedValue:
    """A two-sided rational enclosure lo <= true value <= hi."""

    lo: Fraction
    hi: Fraction

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError(f"inverted enclosure [{self.lo}, {self.hi}]")

    @property
    def exact(self) -> bool:
        return self.lo == self.hi

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    def contains(self, value: Fraction) -> bool:
        return self.lo <= value <= self.hi

    def certainly_below(self, bound: Fraction) -> bool:
        """True only if the enclosed value is certainly < bound."""
        return self.hi < bound

    def certainly_at_least(self, bound: Fraction) -> bool:
        """True only if the enclosed value is certainly >= bound."""
        return self.lo >= bound

    def __add__(self, other: "CertifiedValue") -> "CertifiedValue":
        return CertifiedValue(self.lo + other.lo, self.hi + other.hi)

    def scaled(self, c: Fraction) -> "CertifiedValue":
        if c >= 0:
            return CertifiedValue(self.lo * c, self.hi * c)
        return CertifiedValue(self.hi * c, self.lo * c)

    @staticmethod
    def point(value: Fraction) -> "CertifiedValue":
        return CertifiedValue(value, value)


def _iroot(n: int, k: int) -> tuple[int, bool]:
    root, exact = gmpy2.iroot(gmpy2.mpz(n), k)
    return int(root), bool(exact)


def root_enclosure(y: Fraction, k: int, bits: int = DEFAULT_BITS) -> CertifiedValue:
    """Enclosure of y**(1/k) for y > 0, exact when y is a perfect k-th power.

    Inexact endpoints are dyadic with denominator 2**(bits+2), giving
    width <= 2**-(bits+1).
    """
    if y <= 0:
        raise ValueError("root_enclosure requires y > 0")
    if k == 1:
        return CertifiedValue.point(y)
    rn, en = _iroot(y.numerator, k)
    rd, ed = _iroot(y.denominator, k)
    if en and ed:
        return CertifiedValue.point(Fraction(rn, rd))
    m = 1 << (bits + 2)
    scaled = y.numerator * m**k
    lo_int, _ = _iroot(scaled // y.denominator, k)
    hi_base = -((-scaled) // y.denominator)  # ceil division
    hi_int, hi_exact = _iroot(hi_base, k)
    if not hi_exact:
        hi_int += 1
    return CertifiedValue(Fraction(lo_int, m), Fraction(hi_int, m))


def pow_enclosure(x: Fraction, expo: Fraction, bits: int = DEFAULT_BITS) -> CertifiedValue:
    """Enclosure of x**expo for x > 0 and rational expo (negative allowed)."""
    if x <= 0:
        raise ValueError("pow_enclosure requires x > 0")
    if expo < 0:
        inner = pow_enclosure(x, -expo, bits + 2)
        return CertifiedValue(1 / inner.hi, 1 / inner.lo)
    p = expo.numerator
    k = expo.denominator
    return root_enclosure(x**p, k, bits)


@dataclass(frozen=True)
class ApproxFunction:
    """psi(x) = scale * x**exponent, non-decreasing on (0, oo).

    exponent > 1 guarantees psi(x)/x -> 0 as x -> 0, which the construction
    thresholds rely on; exponent denominators are capped so certified
    evaluation stays cheap.
    """

    scale: Fraction
    exponent: Fraction
    precision_bits: int = DEFAULT_BITS

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.exponent <= 1:
            raise ValueError("exponent must exceed 1 so that psi(x)/x -> 0 at 0")
        if self.exponent.denominator > 8:
            raise ValueError("exponent denominator capped at 8")
        if self.precision_bits < 8:
            raise ValueError("precision_bits too small")

    def eval(self, x: Fraction, bits: int | None = None) -> CertifiedValue:
        """Certified enclosure of psi(x); exact whenever x**exponent is rational."""
        if x <= 0:
            raise ValueError("psi is evaluated on positive arguments only")
        b = self.precision_bits if bits is None else bits
        if b > MAX_BITS:
            raise PrecisionExhausted(f"requested {b} bits exceeds cap {MAX_BITS}")
        return pow_enclosure(x, self.exponent, b).scaled(self.scale)

    def hi(self, x: Fraction, bits: int | None = None) -> Fraction:
        return self.eval(x, bits).hi

    def lo(self, x: Fraction, bits: int | None = None) -> Fraction:
        return self.eval(x, bits).lo

    def lower_order_at_zero(self) -> Fraction:
        """liminf of log psi(x)/log x as x -> 0; exactly the exponent here."""
        return self.exponent

    def ratio_certainly_below(self, x: Fraction, bound: Fraction) -> bool:
        """Certify psi(x)/x < bound, escalating precision up to the cap."""
        bits = self.precision_bits
        while True:
            enc = self.eval(x, bits)
            if enc.hi < bound * x:
                return True
            if enc.lo >= bound * x:
                return False
            if bits >= MAX_BITS:
                raise PrecisionExhausted(
                    f"cannot decide psi({x})/{x} < {bound} within {MAX_BITS} bits"
                )
            bits *= 2

    def spec_string(self) -> str:
        return f"pow:a={_fmt(self.scale)},tau={_fmt(self.exponent)}"

    @staticmethod
    def parse(spec: str) -> "ApproxFunction":
        """Parse the mini-grammar "pow:a=<rat>,tau=<rat>"."""
        if not spec.startswith("pow:"):
            raise ValueError(f"unknown psi family in {spec!r}")
        fields = dict(item.split("=", 1) for item in spec[4:].split(","))
        try:
            return ApproxFunction(Fraction(fields["a"]), Fraction(fields["tau"]))
        except KeyError as exc:
            raise ValueError(f"psi spec {spec!r} missing field {exc}") from exc


def _fmt(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def threshold_for_ratio(psi: ApproxFunction, bound: Fraction) -> Fraction:
    """Largest tested dyadic eps with certified psi(e)/e < bound for all e <= eps.

    psi(x)/x = a*x**(tau-1) is strictly increasing, so certifying the bound
    at eps certifies it below eps as well.
    """
    if bound <= 0:
        raise ValueError("bound must be positive")
    eps = Fraction(1, 2)
    while not psi.ratio_certainly_below(eps, bound):
        eps /= 2
        if eps < Fraction(1, 1 << (4 * MAX_BITS)):
            raise PrecisionExhausted("threshold search ran away")
    # refine upward a few dyadic digits toward the true threshold
    step = eps / 2
    for _ in range(8):
        cand = eps + step
        if cand < 1 and psi.ratio_certainly_below(cand, bound):
            eps = cand
        step /= 2
    return eps


def _phi_upper(q: int) -> int:
    """Cheap upper bound for Euler phi; exact value is not needed for tails."""
    return q


def tail_sum_bound(
    system: "WdsSystem",
    psi: ApproxFunction,
    alpha: Fraction,
    radius_threshold: Fraction,
    partial_terms: int = 2048,
) -> CertifiedValue:
    """Certified upper bound on sum of (psi(R(xi))/R(xi))**alpha over
    system points with R(xi) < radius_threshold.

    Exact partial sum over an initial index window plus an integral-test
    tail.  Requires the convergent regime exponent*... > 2 (for both
    concrete systems this is exponent > 2).
    """
    tau = psi.exponent
    if tau <= 2:
        raise HypothesisViolated(
            f"sum of (psi(R)/R)^alpha diverges for tau = {tau} <= 2"
        )
    if radius_threshold <= 0:
        raise ValueError("radius_threshold must be positive")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    a_pow = pow_enclosure(psi.scale, alpha, psi.precision_bits)
    if system.kind == "rationals":
        # R(p/q) = q^-2 < thr  <=>  q > 1/sqrt(thr); per q there are phi(q) <= q
        # points, each contributing (a q^(2-2 tau))^alpha.
        s = 2 * (tau - 1) * alpha  # decay exponent of q^-s per point; sum uses q^(1-s)
        if s <= 2:
            raise HypothesisViolated(f"tail exponent {s} <= 2 diverges for rationals")
        qmin = _least_q_above(radius_threshold)
        qcap = qmin + partial_terms
        phis = _phi_table(qmin, qcap)
        partial_hi = ZERO
        partial_lo = ZERO
        for q, phi in zip(range(qmin, qcap + 1), phis):
            term = pow_enclosure(Fraction(q), -s, 64)
            partial_hi += phi * term.hi
            partial_lo += phi * term.lo
        # integral test on the phi <= q majorant: sum_{q > qcap} q^(1-s)
        #   <= integral_{qcap}^{oo} x^(1-s) dx = qcap^(2-s)/(s-2)
        tail_hi = pow_enclosure(Fraction(qcap), 2 - s, 64).hi / (s - 2)
        return CertifiedValue(
            a_pow.lo * partial_lo, a_pow.hi * (partial_hi + tail_hi)
        )
    if system.kind == "dyadics":
        # R = 2^-j < thr; level j has 2^(j-1) points each contributing
        # (a 2^(-j(tau-1)))^alpha: a geometric series with ratio 2^(1-(tau-1)alpha).
        e = (tau - 1) * alpha - 1  # per-level sum decays like 2^(-j e)
        if e <= 0:
            raise HypothesisViolated(f"dyadic tail exponent {e} <= 0 diverges")
        jmin = _least_j_above(radius_threshold)
        # sum_{j >= jmin} 2^(j-1) * 2^(-j(tau-1)alpha) = (1/2) * sum 2^(-j e)
        first = pow_enclosure(Fraction(2), -e * jmin, 64)
        ratio = pow_enclosure(Fraction(2), -e, 64)
        denom_lo = 1 - ratio.hi
        if denom_lo <= 0:
            raise HypothesisViolated("geometric ratio reached 1 in certified form")
        hi = a_pow.hi * first.hi / (2 * denom_lo)
        lo = a_pow.lo * first.lo / 2
        return CertifiedValue(lo, hi)
    raise ValueError(f"unknown system kind {system.kind!r}")


def least_n_for_tail(
    system: "WdsSystem",
    psi: ApproxFunction,
    alpha: Fraction,
    C: Fraction,
    rhs: Fraction,
) -> int:
    """Least band index N such that tail_sum_bound at threshold C/N is
    certified below rhs.

    Solved from the analytic majorant, then verified (and bumped if the
    verification certificate disagrees) so the returned N is always valid.
    """
    if rhs <= 0:
        raise ValueError("rhs must be positive")
    tau = psi.exponent
    if system.kind == "rationals":
        s = 2 * (tau - 1) * alpha
        if s <= 2:
            raise HypothesisViolated(f"tail exponent {s} <= 2 diverges for rationals")
        # majorant: a^alpha * (qmin - 1)^(2-s) / (s - 2) < rhs
        a_hi = pow_enclosure(psi.scale, alpha, 64).hi
        target = rhs * (s - 2) / a_hi
        # need (qmin-1)^(s-2) > 1/target
        qm = _least_power_exceeding(1 / target, s - 2) + 1
        n = int(C * (qm - 1) * (qm - 1)) + 1
    elif system.kind == "dyadics":
        e = (tau - 1) * alpha - 1
        if e <= 0:
            raise HypothesisViolated(f"dyadic tail exponent {e} <= 0 diverges")
        a_hi = pow_enclosure(psi.scale, alpha, 64).hi
        ratio_hi = pow_enclosure(Fraction(2), -e, 64).hi
        target = rhs * 2 * (1 - ratio_hi) / a_hi
        jmin = 1
        while not pow_enclosure(Fraction(2), -e * jmin, 64).certainly_below(target):
            jmin += 1
            if jmin > 1 << 20:
                raise PrecisionExhausted("tail floor search ran away")
        n = int(C * (1 << jmin)) + 1
    else:
        raise ValueError(f"unknown system kind {system.kind!r}")
    while not tail_sum_bound(system, psi, alpha, C / n).certainly_below(rhs):
        n *= 2
    return n


def _least_q_above(radius_threshold: Fraction) -> int:
    """Smallest q with q**-2 < radius_threshold."""
    q = gmpy2.isqrt(int(1 / radius_threshold)) if radius_threshold <= 1 else 0
    q = int(q)
    while q >= 1 and Fraction(1, q * q) < radius_threshold:
        q -= 1
    q += 1
    while Fraction(1, q * q) >= radius_threshold:
        q += 1
    return q


def _least_j_above(radius_threshold: Fraction) -> int:
    """Smallest j >= 1 with 2**-j < radius_threshold."""
    j = 1
    while Fraction(1, 1 << j) >= radius_threshold:
        j += 1
    return j


def _least_power_exceeding(value: Fraction, expo: Fraction) -> int:
    """Least integer m >= 1 with m**expo certainly > value (expo > 0)."""
    m = 1
    while not pow_enclosure(Fraction(m), expo, 64).certainly_at_least(value + value / 1000):
        m *= 2
        if m > 1 << 4096:
            raise PrecisionExhausted("power search ran away")
    lo, hi = m // 2, m
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if pow_enclosure(Fraction(mid), expo, 64).certainly_at_least(value + value / 1000):
            hi = mid
        else:
            lo = mid
    return hi


def _phi_table(lo: int, hi: int) -> list[int]:
    """Euler phi for every q in [lo, hi] via factorization of each q.

    The window is a few thousand wide at most; trial division by sieved
    primes up to sqrt(hi) is plenty.
    """
    width = hi - lo + 1
    vals = list(range(lo, hi + 1))
    phis = list(range(lo, hi + 1))
    limit = int(gmpy2.isqrt(hi)) + 1
    sieve = bytearray([1]) * (limit + 1)
    for p in range(2, limit + 1):
        if sieve[p]:
            for multiple in range(p * p, limit + 1, p):
                sieve[multiple] = 0
            start = ((lo + p - 1) // p) * p
            for idx in range(start - lo, width, p):
                if vals[idx] % p == 0:
                    phis[idx] = phis[idx] // p * (p - 1)
                    while vals[idx] % p == 0:
                        vals[idx] //= p
    for idx in range(width):
        if vals[idx] > 1:  # leftover prime factor > sqrt(hi)
            p = vals[idx]
            phis[idx] = phis[idx] // p * (p - 1)
    return phis
