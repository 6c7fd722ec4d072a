"""Window sets over [1, N]: recipes, bitset materialization, densities.

An :class:`IntegerSet` keeps its members in a Python int used as a bitset
(bit ``n - 1`` set iff ``n`` is a member), which makes shifted intersections
cheap for the progression searches downstream.
"""
from __future__ import annotations

import functools
import io
import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from ._parallel import DEFAULT_CHUNK, chunk_bounds, ordered_map
from .angle import (
    Angle,
    GeneralizedQuadratic,
    GQStream,
    GQTerm,
    IntegerPolynomial,
    PolyStream,
    PrecisionError,
    align,
    angle_from_fraction,
    required_frac_bits,
)

SET_MAGIC = "recurlab-set v1"
QUARTER = Fraction(1, 4)
THREE_QUARTERS = Fraction(3, 4)


@dataclass(frozen=True)
class TorusWindow:
    """Closed arc ``[lo, hi]`` of the circle, wrapping through 0 when ``hi < lo``."""

    lo: Angle
    hi: Angle
    full: bool = False

    @classmethod
    def closed(cls, lo: Fraction | int | str, hi: Fraction | int | str, frac_bits: int = 64) -> TorusWindow:
        lo, hi = Fraction(lo), Fraction(hi)
        if hi - lo >= 1:
            return cls.whole(frac_bits)
        # endpoints are the dyadic surrogates themselves, hence exact
        a = angle_from_fraction(lo, frac_bits)
        b = angle_from_fraction(hi, frac_bits)
        return cls(Angle(a.mantissa, frac_bits), Angle(b.mantissa, frac_bits))

    @classmethod
    def whole(cls, frac_bits: int = 1) -> TorusWindow:
        z = Angle(0, frac_bits)
        return cls(z, z, full=True)

    @property
    def frac_bits(self) -> int:
        return max(self.lo.frac_bits, self.hi.frac_bits)

    def measure(self) -> Fraction:
        if self.full:
            return Fraction(1)
        return (self.hi - self.lo).to_fraction()

    def contains(self, x: Angle) -> bool | None:
        """Closed-window membership; ``None`` when the error interval straddles an end."""
        if self.full:
            return True
        bits = max(x.frac_bits, self.frac_bits)
        pw = PreparedWindow(self, bits)
        return pw.classify(x.with_bits(bits).mantissa, x.with_bits(bits).err_ulps)

    def to_json(self) -> dict:
        if self.full:
            return {"full": True}
        return {"lo": self.lo.serialize(), "hi": self.hi.serialize()}

    @classmethod
    def from_json(cls, obj: dict) -> TorusWindow:
        if obj.get("full"):
            return cls.whole()
        return cls(Angle.parse(obj["lo"]), Angle.parse(obj["hi"]))

    def __str__(self) -> str:
        return "T" if self.full else f"[{float(self.lo):.6g}, {float(self.hi):.6g}]"


class PreparedWindow:
    """Window offsets at a fixed precision, for classifying raw mantissas in bulk."""

    __slots__ = ("full", "lo", "span", "elo", "ehi", "mask", "modulus")

    def __init__(self, window: TorusWindow, frac_bits: int):
        self.full = window.full
        self.modulus = 1 << frac_bits
        self.mask = self.modulus - 1
        lo = window.lo.with_bits(frac_bits)
        hi = window.hi.with_bits(frac_bits)
        self.lo = lo.mantissa
        self.span = (hi.mantissa - lo.mantissa) & self.mask
        self.elo = lo.err_ulps
        self.ehi = hi.err_ulps

    def limits(self, err: int) -> tuple[int, int, int, int]:
        """``(in_lo, in_hi, out_lo, out_hi)``: offset t is surely in iff in_lo<=t<=in_hi,
        surely out iff out_lo<t<out_hi, uncertain otherwise."""
        e = err + self.elo
        return e, self.span - e - self.elo - self.ehi, self.span + e + self.elo + self.ehi, self.modulus - e

    def classify(self, mantissa: int, err: int) -> bool | None:
        if self.full:
            return True
        in_lo, in_hi, out_lo, out_hi = self.limits(err)
        t = (mantissa - self.lo) & self.mask
        if in_lo <= t <= in_hi:
            return True
        if out_lo < t < out_hi:
            return False
        return None

    def classify_block(self, mantissas: Sequence[int], err: int, first_n: int) -> np.ndarray:
        """Membership flags for a block; raises :class:`PrecisionError` on the first uncertain entry."""
        if self.full:
            return np.ones(len(mantissas), dtype=bool)
        in_lo, in_hi, out_lo, out_hi = self.limits(err)
        lo, mask = self.lo, self.mask
        offsets = [(v - lo) & mask for v in mantissas]
        flags = [in_lo <= t <= in_hi for t in offsets]
        if err or self.elo or self.ehi:
            for i, (t, f) in enumerate(zip(offsets, flags)):
                if not f and not out_lo < t < out_hi:
                    n = first_n + i
                    raise PrecisionError(f"window membership uncertain at n={n}", n=n)
        return np.array(flags, dtype=bool)


def quarter_window(frac_bits: int = 2) -> TorusWindow:
    return TorusWindow.closed(QUARTER, THREE_QUARTERS, frac_bits)


# ---------------------------------------------------------------------------
# recipes

POWER = "PowerWindow"
LONG_POWER = "LongPowerWindow"
VECTORS = "IndependentVectors"
GQ_WINDOW = "GeneralizedQuadraticWindow"
EXPLICIT = "Explicit"
VARIANTS = (POWER, LONG_POWER, VECTORS, GQ_WINDOW, EXPLICIT)


@dataclass(frozen=True)
class SetRecipe:
    """Declarative description of a window set; see the ``recipe_*`` constructors."""

    variant: str
    exponents: tuple[int, ...] = ()
    vectors: tuple[tuple[int, ...], ...] = ()
    angles: tuple[Angle, ...] = ()
    windows: tuple[TorusWindow, ...] = ()
    ell: int | None = None
    quadratics: tuple[GeneralizedQuadratic, ...] = ()
    elements: tuple[int, ...] = ()
    assertions: tuple[str, ...] = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown recipe variant {self.variant!r}")
        if self.variant in (POWER, LONG_POWER):
            if len(self.angles) != 1:
                raise ValueError(f"{self.variant} takes exactly one angle")
            if len(self.windows) != len(self.exponents):
                raise ValueError("one window per exponent required")
        elif self.variant == VECTORS:
            if not len(self.vectors) == len(self.angles) == len(self.windows):
                raise ValueError("IndependentVectors needs one angle and one window per vector")
        elif self.variant == GQ_WINDOW:
            if len(self.quadratics) != len(self.windows):
                raise ValueError("one window per generalized quadratic required")

    def conditions(self) -> list[tuple[IntegerPolynomial | GeneralizedQuadratic, Angle | None, TorusWindow]]:
        """``(sequence, angle, window)`` triples; the set is where every value lies in its window."""
        if self.variant == POWER:
            return [(IntegerPolynomial.monomial(k), self.angles[0], w) for k, w in zip(self.exponents, self.windows)]
        if self.variant == LONG_POWER:
            return [
                (IntegerPolynomial.sum_of_powers([self.ell * k, k]), self.angles[0], w)
                for k, w in zip(self.exponents, self.windows)
            ]
        if self.variant == VECTORS:
            return [
                (IntegerPolynomial.sum_of_powers(v), a, w) for v, a, w in zip(self.vectors, self.angles, self.windows)
            ]
        if self.variant == GQ_WINDOW:
            return [(q, None, w) for q, w in zip(self.quadratics, self.windows)]
        return []

    def to_json(self) -> dict:
        obj: dict = {"variant": self.variant}
        if self.exponents:
            obj["exponents"] = list(self.exponents)
        if self.vectors:
            obj["vectors"] = [list(v) for v in self.vectors]
        if self.angles:
            obj["angles"] = [a.serialize() for a in self.angles]
        if self.windows:
            obj["windows"] = [w.to_json() for w in self.windows]
        if self.ell is not None:
            obj["ell"] = self.ell
        if self.quadratics:
            obj["quadratics"] = [_gq_to_json(q) for q in self.quadratics]
        if self.elements:
            obj["elements"] = list(self.elements)
        if self.assertions:
            obj["assertions"] = list(self.assertions)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> SetRecipe:
        return cls(
            variant=obj["variant"],
            exponents=tuple(obj.get("exponents", ())),
            vectors=tuple(tuple(v) for v in obj.get("vectors", ())),
            angles=tuple(Angle.parse(a) for a in obj.get("angles", ())),
            windows=tuple(TorusWindow.from_json(w) for w in obj.get("windows", ())),
            ell=obj.get("ell"),
            quadratics=tuple(_gq_from_json(q) for q in obj.get("quadratics", ())),
            elements=tuple(obj.get("elements", ())),
            assertions=tuple(obj.get("assertions", ())),
        )


def _gq_to_json(q: GeneralizedQuadratic) -> dict:
    return {
        "terms": [
            {"alpha_int": t.alpha_int, "alpha": t.alpha.serialize(), "beta": t.beta.serialize()} for t in q.terms
        ],
        "gamma": q.gamma.serialize(),
        "delta": q.delta.serialize(),
        "c": q.c.serialize(),
    }


def _gq_from_json(obj: dict) -> GeneralizedQuadratic:
    terms = tuple(
        GQTerm(Angle.parse(t["alpha"]), Angle.parse(t["beta"]), int(t["alpha_int"])) for t in obj["terms"]
    )
    return GeneralizedQuadratic(
        terms, Angle.parse(obj["gamma"]), Angle.parse(obj["delta"]), Angle.parse(obj["c"])
    )


SURROGATE_NOTE = "irrational parameters are truncated dyadic surrogates"


def _check_exponents(exponents: Sequence[int]) -> tuple[int, ...]:
    exps = tuple(int(k) for k in exponents)
    if not exps:
        raise ValueError("at least one exponent required")
    if any(k < 1 for k in exps):
        raise ValueError("exponents must be positive")
    if len(set(exps)) != len(exps):
        raise ValueError(f"duplicate exponents in {list(exps)}")
    return exps


def recipe_thm_A(bad_exponents: Sequence[int], beta: Angle) -> SetRecipe:
    """Intersection over b of ``{n : {n^b beta} in [1/4, 3/4]}``."""
    exps = _check_exponents(bad_exponents)
    w = quarter_window()
    return SetRecipe(POWER, exponents=exps, angles=(beta,), windows=(w,) * len(exps), assertions=(SURROGATE_NOTE,))


def recipe_thm_B(ell: int, bad_exponents: Sequence[int], beta: Angle) -> SetRecipe:
    """Intersection over b of ``{n : {(n^(ell b) + n^b) beta} in [1/4, 3/4]}``.

    At ``ell == 1`` the polynomial is literally ``2 n^b``.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    exps = _check_exponents(bad_exponents)
    w = quarter_window()
    return SetRecipe(
        LONG_POWER, exponents=exps, angles=(beta,), windows=(w,) * len(exps), ell=ell, assertions=(SURROGATE_NOTE,)
    )


def recipe_thm_C(bad_vectors: Sequence[Sequence[int]], alphas: Sequence[Angle]) -> SetRecipe:
    """``{n : {p_i(n) alpha_i} in [1/4, 3/4] for all i}`` with ``p_i(n) = sum_j n^(b_ij)``."""
    vecs = tuple(tuple(int(b) for b in v) for v in bad_vectors)
    if len(vecs) != len(alphas):
        raise ValueError("one angle per vector required")
    if not vecs:
        raise ValueError("at least one vector required")
    for v in vecs:
        if not v or v[0] < 1 or any(a >= b for a, b in zip(v, v[1:])):
            raise ValueError(f"vector {v} is not a strictly increasing tuple of positive integers")
    w = quarter_window()
    return SetRecipe(
        VECTORS,
        vectors=vecs,
        angles=tuple(alphas),
        windows=(w,) * len(vecs),
        ell=len(vecs[0]),
        assertions=(SURROGATE_NOTE, "asserted: 1, alpha_1, ..., alpha_s rationally independent"),
    )


def recipe_counterexample(alpha: Angle, beta: Angle, alpha_int: int = 0) -> SetRecipe:
    """``{n : {[n alpha] n beta} in [1/4, 3/4]}`` with ``alpha = alpha_int + alpha``."""
    q = GeneralizedQuadratic((GQTerm(alpha, beta, alpha_int),))
    return SetRecipe(
        GQ_WINDOW,
        quadratics=(q,),
        windows=(quarter_window(),),
        assertions=(SURROGATE_NOTE, "asserted: 1, alpha, beta rationally independent"),
    )


def recipe_windows(
    polys: Sequence[IntegerPolynomial | Sequence[int]], angles: Sequence[Angle], windows: Sequence[TorusWindow]
) -> SetRecipe:
    """General ``{n : {p_i(n) a_i} in W_i for all i}``; each ``p_i`` given by its exponent tuple."""
    vecs = []
    for p in polys:
        if isinstance(p, IntegerPolynomial):
            if any(c not in (0, 1) for c in p.coeffs) or p.coeffs[:1] == (1,):
                raise ValueError("only sums of distinct positive powers are expressible here")
            vecs.append(tuple(i for i, c in enumerate(p.coeffs) if c))
        else:
            vecs.append(tuple(p))
    return SetRecipe(VECTORS, vectors=tuple(vecs), angles=tuple(angles), windows=tuple(windows),
                     assertions=(SURROGATE_NOTE,))


def recipe_bohr(theta: Angle, window: TorusWindow, k: int = 1) -> SetRecipe:
    """``{n : {n^k theta} in window}``."""
    return SetRecipe(POWER, exponents=(k,), angles=(theta,), windows=(window,), assertions=(SURROGATE_NOTE,))


def recipe_gq_windows(quadratics: Sequence[GeneralizedQuadratic], windows: Sequence[TorusWindow]) -> SetRecipe:
    return SetRecipe(GQ_WINDOW, quadratics=tuple(quadratics), windows=tuple(windows), assertions=(SURROGATE_NOTE,))


def recipe_explicit(elements: Iterable[int]) -> SetRecipe:
    return SetRecipe(EXPLICIT, elements=tuple(sorted(set(int(e) for e in elements))))


# ---------------------------------------------------------------------------
# integer sets


def _mask_to_int(mask: np.ndarray) -> int:
    return int.from_bytes(np.packbits(mask.astype(bool), bitorder="little").tobytes(), "little")


def _int_to_mask(bits: int, horizon: int) -> np.ndarray:
    raw = bits.to_bytes((horizon + 7) // 8, "little")
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:horizon].astype(bool)


@dataclass(frozen=True)
class IntegerSet:
    """A subset of ``[1, horizon]``; bit ``n - 1`` of ``bits`` is set iff ``n`` belongs."""

    horizon: int
    bits: int
    provenance: SetRecipe | str = field(default="adhoc", compare=False)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.bits < 0 or self.bits.bit_length() > self.horizon:
            raise ValueError("bitset exceeds horizon")

    @classmethod
    def from_elements(cls, elements: Iterable[int], horizon: int, provenance: SetRecipe | str = "adhoc") -> IntegerSet:
        mask = np.zeros(horizon, dtype=bool)
        idx = np.fromiter((e for e in elements if 1 <= e <= horizon), dtype=np.int64)
        mask[idx - 1] = True
        return cls(horizon, _mask_to_int(mask), provenance)

    @classmethod
    def from_mask(cls, mask: np.ndarray, provenance: SetRecipe | str = "adhoc") -> IntegerSet:
        return cls(len(mask), _mask_to_int(mask), provenance)

    @classmethod
    def interval(cls, horizon: int) -> IntegerSet:
        return cls(horizon, (1 << horizon) - 1, "all")

    def mask(self) -> np.ndarray:
        return _int_to_mask(self.bits, self.horizon)

    def elements(self) -> np.ndarray:
        """Members in ascending order as an int64 array."""
        return np.flatnonzero(self.mask()) + 1

    def __iter__(self) -> Iterator[int]:
        return (int(n) for n in self.elements())

    def __len__(self) -> int:
        return self.bits.bit_count()

    def __contains__(self, n: object) -> bool:
        return isinstance(n, (int, np.integer)) and 1 <= n <= self.horizon and bool(self.bits >> (int(n) - 1) & 1)

    def __and__(self, other: IntegerSet) -> IntegerSet:
        return IntegerSet(min(self.horizon, other.horizon), self.bits & other.bits & ((1 << min(self.horizon, other.horizon)) - 1))

    def __or__(self, other: IntegerSet) -> IntegerSet:
        h = max(self.horizon, other.horizon)
        return IntegerSet(h, self.bits | other.bits)

    def restrict(self, horizon: int) -> IntegerSet:
        """``self ∩ [1, horizon]`` as a set with that horizon."""
        if horizon > self.horizon:
            raise ValueError("cannot extend a set past its horizon; rebuild instead")
        return IntegerSet(horizon, self.bits & ((1 << horizon) - 1), self.provenance)

    def min(self) -> int | None:
        if not self.bits:
            return None
        return (self.bits & -self.bits).bit_length()

    def density(self) -> Fraction:
        return density(self)


def density(s: IntegerSet) -> Fraction:
    """``|S ∩ [1, N]| / N`` exactly."""
    return Fraction(len(s), s.horizon)


@functools.lru_cache(maxsize=32)
def _multiples_bits(d: int, horizon: int) -> int:
    mask = np.zeros(horizon, dtype=bool)
    mask[d - 1 :: d] = True
    return _mask_to_int(mask)


def density_in_residue(s: IntegerSet, d: int) -> Fraction:
    """``|S ∩ dZ ∩ [1, N]| / floor(N / d)``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    count = s.horizon // d
    if count == 0:
        raise ValueError(f"no multiples of {d} below horizon {s.horizon}")
    return Fraction((s.bits & _multiples_bits(d, s.horizon)).bit_count(), count)


def power_image(s: IntegerSet, k: int, cap: int) -> IntegerSet:
    """``{r^k : r in S, r^k <= cap}`` over ``[1, cap]``."""
    if k < 1 or cap < 1:
        raise ValueError("k and cap must be >= 1")
    return IntegerSet.from_elements((r**k for r in power_values(s, k, cap)), cap, f"power_image(k={k})")


def power_values(s: IntegerSet, k: int, cap: int | None = None) -> Iterator[int]:
    """Members ``r`` of S whose k-th power is at most ``cap`` (all members if cap is None)."""
    for r in s:
        if cap is not None and r**k > cap:
            break
        yield r


# ---------------------------------------------------------------------------
# materialization


def check_precision(recipe: SetRecipe, horizon: int) -> None:
    """Reject recipes whose inexact angles are too short for the horizon."""
    for seq, angle, _ in recipe.conditions():
        if isinstance(seq, GeneralizedQuadratic):
            degree, angles = 2, seq.angles
        else:
            degree, angles = seq.degree, [angle]
        need = required_frac_bits(degree, horizon)
        for a in angles:
            if not a.exact and a.frac_bits < need:
                raise PrecisionError(
                    f"frac_bits={a.frac_bits} too small for degree {degree} at N={horizon}; need >= {need}",
                    required_bits=need,
                )


def _condition_block(args) -> bytes:
    seq, angle, window, a, b = args
    if isinstance(seq, GeneralizedQuadratic):
        stream = GQStream(seq, a)
    else:
        bits = max(angle.frac_bits, window.frac_bits)
        stream = PolyStream(seq, angle.with_bits(bits), a)
    mants, err = stream.take(b - a)
    pw = PreparedWindow(window, max(stream.frac_bits, window.frac_bits))
    if pw.modulus != 1 << stream.frac_bits:
        shift = pw.modulus.bit_length() - 1 - stream.frac_bits
        mants = [m << shift for m in mants]
        err <<= shift
    return np.packbits(pw.classify_block(mants, err, a)).tobytes()


def build_set(recipe: SetRecipe, N: int, chunk_size: int = DEFAULT_CHUNK, threads: int = 1) -> IntegerSet:
    """Materialize ``recipe`` over ``[1, N]``.

    Uncertain memberships raise :class:`PrecisionError` naming the offending n.
    The result does not depend on ``chunk_size`` or ``threads``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if recipe.variant == EXPLICIT:
        return IntegerSet.from_elements(recipe.elements, N, recipe)
    check_precision(recipe, N)
    mask = np.ones(N, dtype=bool)
    bounds = chunk_bounds(1, N + 1, chunk_size)
    for seq, angle, window in recipe.conditions():
        if window.full:
            continue
        tasks = [(seq, angle, window, a, b) for a, b in bounds]
        blocks = ordered_map(_condition_block, tasks, threads)
        cond = np.concatenate(
            [np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[: b - a] for raw, (a, b) in zip(blocks, bounds)]
        ).astype(bool)
        mask &= cond
    return IntegerSet.from_mask(mask, recipe)


def condition_value(seq: IntegerPolynomial | GeneralizedQuadratic, angle: Angle | None, n: int) -> Angle:
    """The fractional part tested by one recipe condition at ``n``."""
    from .angle import frac_poly_eval, gq_eval

    if isinstance(seq, GeneralizedQuadratic):
        return gq_eval(seq, n)
    return frac_poly_eval(seq, angle, n)


def rescan(s: IntegerSet) -> list[int]:
    """Members of a recipe-built set that fail their defining windows on re-evaluation."""
    recipe = s.provenance
    if not isinstance(recipe, SetRecipe):
        raise ValueError("set has no recipe provenance")
    bad = []
    conds = recipe.conditions()
    for n in s:
        for seq, angle, window in conds:
            if window.contains(condition_value(seq, angle, n)) is not True:
                bad.append(n)
                break
    return bad


# ---------------------------------------------------------------------------
# set files


def write_set(s: IntegerSet, fp: IO[str]) -> None:
    recipe = s.provenance.to_json() if isinstance(s.provenance, SetRecipe) else s.provenance
    fp.write(f"{SET_MAGIC} N={s.horizon} recipe={json.dumps(recipe, sort_keys=True, separators=(',', ':'))}\n")
    mask = s.mask().astype(np.int8)
    edges = np.diff(np.concatenate(([0], mask, [0])))
    starts = np.flatnonzero(edges == 1) + 1
    stops = np.flatnonzero(edges == -1) + 1
    for a, b in zip(starts, stops):
        fp.write(f"{a}:{b - a}\n")


def read_set(fp: IO[str]) -> IntegerSet:
    header = fp.readline().rstrip("\n")
    if not header.startswith(SET_MAGIC + " N="):
        raise ValueError("not a recurlab-set v1 file")
    rest = header[len(SET_MAGIC) + 3 :]
    n_text, _, recipe_text = rest.partition(" recipe=")
    horizon = int(n_text)
    recipe_obj = json.loads(recipe_text) if recipe_text else "adhoc"
    provenance = SetRecipe.from_json(recipe_obj) if isinstance(recipe_obj, dict) else recipe_obj
    mask = np.zeros(horizon, dtype=bool)
    for lineno, line in enumerate(fp, start=2):
        line = line.strip()
        if not line:
            continue
        try:
            start, length = (int(x) for x in line.split(":"))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: malformed run {line!r}") from exc
        if start < 1 or start + length - 1 > horizon:
            raise ValueError(f"line {lineno}: run outside [1, {horizon}]")
        mask[start - 1 : start - 1 + length] = True
    return IntegerSet.from_mask(mask, provenance)


def save_set(s: IntegerSet, path: str | os.PathLike) -> None:
    with open(path, "w") as fp:
        write_set(s, fp)


def load_set(path: str | os.PathLike) -> IntegerSet:
    with open(path) as fp:
        return read_set(fp)


def dumps_set(s: IntegerSet) -> str:
    buf = io.StringIO()
    write_set(s, buf)
    return buf.getvalue()
