"""Error-bounded fixed-point arithmetic on the circle T = R/Z.

An :class:`Angle` is a dyadic number ``mantissa / 2**frac_bits`` reduced mod 1,
together with a guaranteed bound ``err_ulps`` on the distance to the real value
it stands for, measured in units of ``2**-frac_bits``.  Irrational parameters
are only ever handled through such truncated surrogates, so every statement
this package makes is about the surrogate, never about the irrational itself.

Integer multiplication is exact on mantissas, so the only source of error is
the initial truncation, which gets amplified by the integer multipliers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

MAX_DEGREE = 64
# Extra bits demanded on top of the amplification budget of a recipe.
GUARD_BITS = 64


class PrecisionError(ArithmeticError):
    """Raised when an error interval prevents a sound decision.

    ``n`` names the sequence index at which the decision was attempted, when
    there is one.
    """

    def __init__(self, message: str, n: int | None = None, required_bits: int | None = None):
        super().__init__(message)
        self.n = n
        self.required_bits = required_bits


class FloorAmbiguityError(PrecisionError):
    """``[n * alpha]`` cannot be decided from the stored error interval."""


@dataclass(frozen=True, slots=True)
class Angle:
    """A point of [0, 1) stored as ``mantissa / 2**frac_bits`` with an error bound."""

    mantissa: int
    frac_bits: int
    err_ulps: int = 0

    def __post_init__(self):
        if self.frac_bits < 1:
            raise ValueError("frac_bits must be >= 1")
        if not 0 <= self.mantissa < (1 << self.frac_bits):
            raise ValueError("mantissa out of range; use angle_from_dyadic to reduce")
        if self.err_ulps < 0:
            raise ValueError("err_ulps must be nonnegative")

    @property
    def modulus(self) -> int:
        return 1 << self.frac_bits

    @property
    def exact(self) -> bool:
        return self.err_ulps == 0

    def to_fraction(self) -> Fraction:
        return Fraction(self.mantissa, 1 << self.frac_bits)

    def __float__(self) -> float:
        # int / int true division is correctly rounded even for huge operands
        return self.mantissa / (1 << self.frac_bits)

    def error_bound(self) -> Fraction:
        return Fraction(self.err_ulps, 1 << self.frac_bits)

    def with_bits(self, frac_bits: int) -> Angle:
        """Re-express at another precision; widening is exact, narrowing truncates."""
        if frac_bits == self.frac_bits:
            return self
        if frac_bits > self.frac_bits:
            shift = frac_bits - self.frac_bits
            return Angle(self.mantissa << shift, frac_bits, self.err_ulps << shift)
        shift = self.frac_bits - frac_bits
        lost = self.mantissa & ((1 << shift) - 1)
        err = -(-self.err_ulps >> shift)  # ceil division
        if lost:
            err += 1
        return Angle(self.mantissa >> shift, frac_bits, err)

    def scale(self, m: int) -> Angle:
        """``{m * self}`` for an integer ``m``; exact on the mantissa."""
        return Angle((self.mantissa * m) & (self.modulus - 1), self.frac_bits, self.err_ulps * abs(m))

    def halve(self) -> Angle:
        """``self / 2`` taking the stored value in [0, 1) as the representative."""
        return Angle(self.mantissa, self.frac_bits + 1, self.err_ulps)

    def __add__(self, other: Angle) -> Angle:
        a, b = align(self, other)
        return Angle((a.mantissa + b.mantissa) & (a.modulus - 1), a.frac_bits, a.err_ulps + b.err_ulps)

    def __sub__(self, other: Angle) -> Angle:
        a, b = align(self, other)
        return Angle((a.mantissa - b.mantissa) & (a.modulus - 1), a.frac_bits, a.err_ulps + b.err_ulps)

    def __neg__(self) -> Angle:
        return Angle(-self.mantissa & (self.modulus - 1), self.frac_bits, self.err_ulps)

    def near_zero(self, radius: Angle) -> bool | None:
        """Whether ``self`` lies in ``[0, r] U [1 - r, 1)``; ``None`` if undecidable."""
        a, r = align(self, radius)
        M = a.modulus
        e = a.err_ulps + r.err_ulps
        dist = min(a.mantissa, M - a.mantissa)
        if dist + e <= r.mantissa:
            return True
        if dist - e > r.mantissa:
            return False
        return None

    def serialize(self) -> str:
        return f"{self.mantissa:x}:{self.frac_bits}:{self.err_ulps}"

    @classmethod
    def parse(cls, text: str) -> Angle:
        try:
            mant, bits, err = text.strip().split(":")
            return cls(int(mant, 16), int(bits), int(err))
        except ValueError as exc:
            raise ValueError(f"malformed angle {text!r}; expected <hex>:<bits>:<err>") from exc

    def __str__(self) -> str:
        return f"{float(self):.12f}(+-{self.err_ulps}ulp@{self.frac_bits})"


def align(a: Angle, b: Angle) -> tuple[Angle, Angle]:
    """Bring two angles to a common (the larger) precision, exactly."""
    if a.frac_bits == b.frac_bits:
        return a, b
    bits = max(a.frac_bits, b.frac_bits)
    return a.with_bits(bits), b.with_bits(bits)


def angle_from_dyadic(mantissa: int, frac_bits: int) -> Angle:
    if frac_bits < 1:
        raise ValueError("frac_bits must be >= 1")
    return Angle(mantissa % (1 << frac_bits), frac_bits, 0)


def angle_from_fraction(value: Fraction | int | str, frac_bits: int) -> Angle:
    """``{value}`` truncated to ``frac_bits``; err is 0 iff the value is dyadic at that precision."""
    q = Fraction(value)
    scaled = q * (1 << frac_bits)
    mant = math.floor(scaled)
    err = 0 if scaled == mant else 1
    return Angle(mant % (1 << frac_bits), frac_bits, err)


def sqrt_real(d: int, frac_bits: int) -> tuple[int, Angle]:
    """Integer part and truncated fractional part of ``sqrt(d)``."""
    if d <= 0:
        raise ValueError("d must be positive")
    root = math.isqrt(d)
    if root * root == d:
        raise ValueError(f"{d} is a perfect square; sqrt({d}) is rational")
    scaled = math.isqrt(d << (2 * frac_bits))
    # scaled = floor(sqrt(d) * 2^B) and sqrt(d) is irrational, so the truncation is strict
    return root, Angle(scaled - (root << frac_bits), frac_bits, 1)


def angle_from_quadratic_irrational(d: int, frac_bits: int) -> Angle:
    """``{sqrt(d)}`` truncated to ``frac_bits`` bits, err 1 ulp."""
    return sqrt_real(d, frac_bits)[1]


def required_frac_bits(degree: int, horizon: int) -> int:
    """Minimum precision for evaluating a degree-``degree`` sequence on [1, horizon]."""
    return max(degree, 1) * max(1, math.ceil(math.log2(max(horizon, 2)))) + GUARD_BITS


@dataclass(frozen=True)
class IntegerPolynomial:
    """Integer polynomial, ``coeffs[i]`` is the coefficient of ``n**i``."""

    coeffs: tuple[int, ...]

    def __post_init__(self):
        coeffs = tuple(int(c) for c in self.coeffs)
        while coeffs and coeffs[-1] == 0:
            coeffs = coeffs[:-1]
        if len(coeffs) - 1 > MAX_DEGREE:
            raise ValueError(f"degree {len(coeffs) - 1} exceeds {MAX_DEGREE}")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def monomial(cls, k: int, c: int = 1) -> IntegerPolynomial:
        return cls((0,) * k + (c,))

    @classmethod
    def sum_of_powers(cls, exponents: Iterable[int]) -> IntegerPolynomial:
        coeffs: dict[int, int] = {}
        for k in exponents:
            coeffs[k] = coeffs.get(k, 0) + 1
        top = max(coeffs, default=-1)
        return cls(tuple(coeffs.get(i, 0) for i in range(top + 1)))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1 if self.coeffs else 0

    def __call__(self, n: int) -> int:
        acc = 0
        for c in reversed(self.coeffs):
            acc = acc * n + c
        return acc

    def abs_bound(self, n_max: int) -> int:
        """Upper bound for ``|p(n)|`` over ``0 <= n <= n_max``."""
        return sum(abs(c) * n_max**i for i, c in enumerate(self.coeffs))

    def __str__(self) -> str:
        terms = [f"{c}*n^{i}" if i else str(c) for i, c in enumerate(self.coeffs) if c]
        return " + ".join(reversed(terms)) or "0"


def frac_poly_eval(p: IntegerPolynomial, alpha: Angle, n: int) -> Angle:
    """``{p(n) * alpha}`` with exact big-integer ``p(n)``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return alpha.scale(p(n))


@dataclass(frozen=True)
class GQTerm:
    """One bracket term ``[alpha * t] * beta * t``; ``alpha = alpha_int + alpha``."""

    alpha: Angle
    beta: Angle
    alpha_int: int = 0


def _zero(bits: int = 1) -> Angle:
    return Angle(0, bits, 0)


@dataclass(frozen=True)
class GeneralizedQuadratic:
    """``t -> sum_i [alpha_i t] beta_i t + gamma t^2 + delta t + c`` mod 1."""

    terms: tuple[GQTerm, ...] = ()
    gamma: Angle = field(default_factory=_zero)
    delta: Angle = field(default_factory=_zero)
    c: Angle = field(default_factory=_zero)

    @property
    def frac_bits(self) -> int:
        bits = [self.gamma.frac_bits, self.delta.frac_bits, self.c.frac_bits]
        for t in self.terms:
            bits += [t.alpha.frac_bits, t.beta.frac_bits]
        return max(bits)

    @property
    def angles(self) -> list[Angle]:
        out = [self.gamma, self.delta, self.c]
        for t in self.terms:
            out += [t.alpha, t.beta]
        return out


def floor_of_multiple(alpha_int: int, alpha: Angle, n: int) -> int:
    """Exact ``[n * (alpha_int + alpha)]``; raises if the error interval straddles an integer."""
    t = n * alpha.mantissa
    B = alpha.frac_bits
    frac = t & ((1 << B) - 1)
    err = n * alpha.err_ulps
    if err and (frac < err or frac + err >= (1 << B)):
        raise FloorAmbiguityError(f"floor of n*alpha ambiguous at n={n}; raise frac_bits", n=n)
    return n * alpha_int + (t >> B)


class _PreparedGQ:
    """Mantissas of a generalized quadratic aligned to one precision, for tight loops."""

    __slots__ = ("bits", "mask", "terms", "g", "d", "c", "eg", "ed", "ec")

    def __init__(self, q: GeneralizedQuadratic):
        B = q.frac_bits
        self.bits = B
        self.mask = (1 << B) - 1
        self.terms = []
        for t in q.terms:
            a = t.alpha.with_bits(B)
            b = t.beta.with_bits(B)
            self.terms.append((t.alpha_int, a.mantissa, a.err_ulps, b.mantissa, b.err_ulps))
        g, d, c = (x.with_bits(B) for x in (q.gamma, q.delta, q.c))
        self.g, self.d, self.c = g.mantissa, d.mantissa, c.mantissa
        self.eg, self.ed, self.ec = g.err_ulps, d.err_ulps, c.err_ulps

    def evaluate(self, n: int) -> tuple[int, int]:
        B = self.bits
        top = 1 << B
        val = self.g * n * n + self.d * n + self.c
        err = self.eg * n * n + self.ed * n + self.ec
        for a_int, a_m, a_e, b_m, b_e in self.terms:
            t = n * a_m
            frac = t & self.mask
            e = n * a_e
            if e and (frac < e or frac + e >= top):
                raise FloorAmbiguityError(f"floor of n*alpha ambiguous at n={n}; raise frac_bits", n=n)
            k = (n * a_int + (t >> B)) * n
            val += k * b_m
            err += abs(k) * b_e
        return val & self.mask, err


def gq_eval(q: GeneralizedQuadratic, n: int) -> Angle:
    """``{q(n)}`` with propagated error; brackets are resolved exactly or rejected."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    prep = _PreparedGQ(q)
    mant, err = prep.evaluate(n)
    return Angle(mant, prep.bits, err)


def floor_sum_decompose(x: tuple[int, Angle], y: tuple[int, Angle]) -> int:
    """Carry bit of ``[x + y] = [x] + [y] + carry`` for ``x = (int part, frac part)``.

    ``{x} + {y} == 1`` exactly carries, as the true floor does.
    """
    a, b = align(x[1], y[1])
    s = a.mantissa + b.mantissa
    e = a.err_ulps + b.err_ulps
    M = a.modulus
    if s - e >= M:
        return 1
    if s + e < M:
        return 0
    raise PrecisionError(f"carry ambiguous: {a}+{b} is within error of 1")


# ---------------------------------------------------------------------------
# streams


class AngleStream:
    """Single-consumer iterator of Angles ``x_n, x_{n+1}, ...``.

    ``take(count)`` is the bulk path: it returns the raw mantissas (all at
    ``frac_bits``) and one error bound valid for the whole block.
    """

    frac_bits: int
    index: int

    def __iter__(self) -> Iterator[Angle]:
        return self

    def __next__(self) -> Angle:
        n = self.index
        (m,), err = self.take(1)
        return Angle(m, self.frac_bits, self._err_at(n, err))

    def _err_at(self, n: int, block_err: int) -> int:
        return block_err

    def take(self, count: int) -> tuple[list[int], int]:
        raise NotImplementedError

    def fork(self, index: int) -> AngleStream:
        raise NotImplementedError


class PolyStream(AngleStream):
    """``{p(n) alpha}`` for consecutive n via an integer difference table mod ``2**B``.

    Each step costs ``degree`` additions; values are bit-identical to
    :func:`frac_poly_eval` because everything is integer arithmetic mod ``2**B``.
    """

    def __init__(self, p: IntegerPolynomial, alpha: Angle, n_start: int = 0):
        if n_start < 0:
            raise ValueError("n_start must be nonnegative")
        self.p = p
        self.alpha = alpha
        self.frac_bits = alpha.frac_bits
        self.index = n_start
        self._mask = alpha.modulus - 1
        d = p.degree
        vals = [p(n_start + j) * alpha.mantissa for j in range(d + 1)]
        table = []
        for _ in range(d + 1):
            table.append(vals[0] & self._mask)
            vals = [b - a for a, b in zip(vals, vals[1:])]
        self._table = table

    def _err_at(self, n: int, block_err: int) -> int:
        return abs(self.p(n)) * self.alpha.err_ulps

    def take(self, count: int) -> tuple[list[int], int]:
        t = self._table
        mask = self._mask
        d = len(t) - 1
        out = []
        append = out.append
        if d == 0:
            out = [t[0]] * count
        elif d == 1:
            v, d1 = t
            for _ in range(count):
                append(v)
                v = (v + d1) & mask
            t[0] = v
        elif d == 2:
            v, d1, d2 = t
            for _ in range(count):
                append(v)
                v = (v + d1) & mask
                d1 = (d1 + d2) & mask
            t[0], t[1] = v, d1
        else:
            rng = range(d)
            for _ in range(count):
                append(t[0])
                for i in rng:
                    t[i] = (t[i] + t[i + 1]) & mask
        first = self.index
        self.index += count
        err = self.p.abs_bound(max(self.index - 1, first)) * self.alpha.err_ulps
        return out, err

    def fork(self, index: int) -> PolyStream:
        return PolyStream(self.p, self.alpha, index)


class GQStream(AngleStream):
    """``{q(n)}`` for consecutive n, or for an explicit list of evaluation points."""

    def __init__(self, q: GeneralizedQuadratic, n_start: int = 0, points: Sequence[int] | None = None):
        self.q = q
        self._prep = _PreparedGQ(q)
        self.frac_bits = self._prep.bits
        self.points = points
        self.index = n_start if points is None else 0

    def _at(self, i: int) -> int:
        return i if self.points is None else self.points[i]

    def __next__(self) -> Angle:
        if self.points is not None and self.index >= len(self.points):
            raise StopIteration
        n = self._at(self.index)
        self.index += 1
        m, e = self._prep.evaluate(n)
        return Angle(m, self.frac_bits, e)

    def take(self, count: int) -> tuple[list[int], int]:
        ev = self._prep.evaluate
        if self.points is None:
            ns: Iterable[int] = range(self.index, self.index + count)
        else:
            if self.index + count > len(self.points):
                raise ValueError("stream exhausted")
            ns = self.points[self.index : self.index + count]
        out = []
        err = 0
        for n in ns:
            m, e = ev(n)
            out.append(m)
            if e > err:
                err = e
        self.index += count
        return out, err

    def fork(self, index: int) -> GQStream:
        return GQStream(self.q, index, self.points)


class ListStream(AngleStream):
    """A finite, explicitly given sequence of Angles."""

    def __init__(self, angles: Sequence[Angle]):
        bits = max((a.frac_bits for a in angles), default=1)
        self._angles = [a.with_bits(bits) for a in angles]
        self.frac_bits = bits
        self.index = 0

    def __next__(self) -> Angle:
        if self.index >= len(self._angles):
            raise StopIteration
        a = self._angles[self.index]
        self.index += 1
        return a

    def take(self, count: int) -> tuple[list[int], int]:
        if self.index + count > len(self._angles):
            raise ValueError("stream exhausted")
        block = self._angles[self.index : self.index + count]
        self.index += count
        return [a.mantissa for a in block], max((a.err_ulps for a in block), default=0)

    def fork(self, index: int) -> ListStream:
        s = ListStream(self._angles)
        s.index = index
        return s


def poly_stream(p: IntegerPolynomial, alpha: Angle, n_start: int = 0) -> PolyStream:
    return PolyStream(p, alpha, n_start)


def gq_stream(q: GeneralizedQuadratic, n_start: int = 0) -> GQStream:
    return GQStream(q, n_start)
