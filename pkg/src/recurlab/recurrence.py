"""Progression witnesses, rotation obstructions and extraction certificates.

The combinatorial side works on bitsets: ``m, m + r, ..., m + ell r`` all lie
in Lambda exactly when bit ``m - 1`` survives in
``L & (L >> r) & ... & (L >> ell r)``.  The dynamical side computes exact
multiple-intersection measures of arcs under a circle rotation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from ._parallel import ordered_map
from .angle import (
    Angle,
    GeneralizedQuadratic,
    GQTerm,
    IntegerPolynomial,
    PrecisionError,
    align,
    floor_of_multiple,
    floor_sum_decompose,
    frac_poly_eval,
    gq_eval,
)
from .setlab import IntegerSet, TorusWindow, build_set, recipe_gq_windows, recipe_windows

FIRST = "first"
COUNT_ALL = "count-all"


@dataclass(frozen=True)
class WitnessQuery:
    lam: IntegerSet
    differences: IntegerSet | Sequence[int]
    ell: int = 1
    mode: str = FIRST

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError("ell must be >= 1")
        if self.mode not in (FIRST, COUNT_ALL):
            raise ValueError(f"mode must be {FIRST!r} or {COUNT_ALL!r}")
        if isinstance(self.differences, IntegerSet) and self.differences.horizon > self.lam.horizon:
            raise ValueError("differences horizon exceeds lambda horizon")

    def candidates(self) -> list[int]:
        if isinstance(self.differences, IntegerSet):
            return [int(r) for r in self.differences.elements()]
        return sorted({int(r) for r in self.differences if r > 0})


@dataclass(frozen=True)
class Witness:
    m: int
    r: int
    terms: tuple[int, ...]

    def to_json(self) -> dict:
        return {"m": self.m, "r": self.r, "terms": list(self.terms)}


def _shift(bits: int, offset: int, horizon: int) -> int:
    """Bitset of ``{x : x + offset in S}`` within ``[1, horizon]``."""
    if offset >= 0:
        return bits >> offset
    return (bits << -offset) & ((1 << horizon) - 1)


def pattern_bits(lam: IntegerSet, offsets: Sequence[int]) -> int:
    """Bitset of ``{m : m + o in Lambda for every offset o}`` (offset 0 implied)."""
    acc = lam.bits
    L, N = lam.bits, lam.horizon
    for o in offsets:
        if acc == 0:
            break
        acc &= _shift(L, o, N)
    return acc


def _lowest(bits: int) -> int:
    return (bits & -bits).bit_length()


def _count_block(args) -> list[tuple[int, int]]:
    bits, horizon, ell, rs = args
    lam = IntegerSet(horizon, bits)
    return [(r, pattern_bits(lam, [j * r for j in range(1, ell + 1)]).bit_count()) for r in rs]


def witness_search(q: WitnessQuery, threads: int = 1) -> Witness | dict[int, int] | None:
    """First witness (least r, then least m) or, in count-all mode, ``{r: c(r)}``.

    ``c(r)`` counts the m with ``m, m + r, ..., m + ell r`` all in Lambda.
    """
    N = q.lam.horizon
    rs = q.candidates()
    if q.mode == COUNT_ALL:
        size = max(1, len(rs) // max(threads, 1) + 1)
        blocks = [rs[i : i + size] for i in range(0, len(rs), size)]
        out: dict[int, int] = {}
        for part in ordered_map(_count_block, [(q.lam.bits, N, q.ell, b) for b in blocks], threads):
            out.update(part)
        return out
    for r in rs:
        if q.ell * r >= N:
            break
        hits = pattern_bits(q.lam, [j * r for j in range(1, q.ell + 1)])
        if hits:
            m = _lowest(hits)
            return Witness(m, r, tuple(m + j * r for j in range(q.ell + 1)))
    return None


def iter_witnesses(lam: IntegerSet, differences: Iterable[int], ell: int) -> Iterable[Witness]:
    """The least-m witness for each difference that has one, in ascending r."""
    for r in sorted({int(r) for r in differences if r > 0}):
        if ell * r >= lam.horizon:
            break
        hits = pattern_bits(lam, [j * r for j in range(1, ell + 1)])
        if hits:
            m = _lowest(hits)
            yield Witness(m, r, tuple(m + j * r for j in range(ell + 1)))


def pattern_search(lam: IntegerSet, candidates: Iterable[int], offsets: Callable[[int], Sequence[int]]) -> Witness | None:
    """Least r (then m) with ``m + o in Lambda`` for ``o in (0,) + offsets(r)``."""
    for r in candidates:
        offs = list(offsets(r))
        if max(offs, default=0) >= lam.horizon:
            continue
        hits = pattern_bits(lam, offs)
        if hits:
            m = _lowest(hits)
            return Witness(m, r, (m,) + tuple(m + o for o in offs))
    return None


# ---------------------------------------------------------------------------
# rotations


@dataclass(frozen=True)
class ArcSystem:
    """Rotation ``x -> x + beta`` on the circle together with a closed arc A."""

    beta: Angle
    arc: TorusWindow

    def __post_init__(self):
        m = self.arc.measure()
        if not 0 < m < 1:
            raise ValueError("arc measure must lie strictly between 0 and 1")


@dataclass(frozen=True)
class MeasureBounds:
    """Interval ``[lower, upper]`` guaranteed to contain the true measure."""

    lower: Fraction
    upper: Fraction

    @property
    def certain(self) -> bool:
        return (self.lower > 0) == (self.upper > 0)

    @property
    def positive(self) -> bool | None:
        if self.lower > 0:
            return True
        if self.upper == 0:
            return False
        return None


def _arc_pieces(start: int, length: int, M: int) -> list[tuple[int, int]]:
    if length <= 0:
        return []
    if length >= M:
        return [(0, M)]
    start %= M
    end = start + length
    if end <= M:
        return [(start, end)]
    return [(start, M), (0, end - M)]


def _intersect(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    for x0, x1 in a:
        for y0, y1 in b:
            lo, hi = max(x0, y0), min(x1, y1)
            if lo < hi:
                out.append((lo, hi))
    return out


def _arcs_measure(arcs: list[tuple[int, int]], M: int) -> int:
    acc = [(0, M)]
    for start, length in arcs:
        acc = _intersect(acc, _arc_pieces(start, length, M))
        if not acc:
            return 0
    return sum(b - a for a, b in acc)


def rotation_multi_measure(sys: ArcSystem, r: int, ell: int) -> MeasureBounds:
    """Measure of ``A ∩ (A - r beta) ∩ ... ∩ (A - ell r beta)`` as a certified interval."""
    if r == 0:
        raise ValueError("r must be nonzero")
    if ell < 1:
        raise ValueError("ell must be >= 1")
    bits = max(sys.beta.frac_bits, sys.arc.frac_bits)
    beta = sys.beta.with_bits(bits)
    lo = sys.arc.lo.with_bits(bits)
    hi = sys.arc.hi.with_bits(bits)
    M = 1 << bits
    length = (hi.mantissa - lo.mantissa) % M
    e_end = lo.err_ulps + hi.err_ulps
    step = (r * beta.mantissa) % M
    step_err = abs(r) * beta.err_ulps
    inner, outer = [], []
    for j in range(ell + 1):
        start = (lo.mantissa - j * step) % M
        e = j * step_err + e_end
        inner.append((start + e, length - 2 * e))
        outer.append((start - e, length + 2 * e))
    scale = Fraction(1, M)
    return MeasureBounds(_arcs_measure(inner, M) * scale, _arcs_measure(outer, M) * scale)


@dataclass
class ObstructionReport:
    any_positive: bool
    certified_none: bool
    best: tuple[int, Fraction] | None
    scanned: int
    uncertain: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "any_positive": self.any_positive,
            "certified_none": self.certified_none,
            "best_r": None if self.best is None else self.best[0],
            "best_measure": None if self.best is None else float(self.best[1]),
            "scanned": self.scanned,
            "uncertain": self.uncertain[:20],
        }


def obstruction_scan(sys: ArcSystem, D: IntegerSet | Iterable[int], ell: int) -> ObstructionReport:
    """Scan every r in D for a positive ``ell``-fold return of the arc.

    ``certified_none`` means every r has measure exactly zero, interval-certified.
    """
    rs = D.elements() if isinstance(D, IntegerSet) else D
    best: tuple[int, Fraction] | None = None
    uncertain = []
    any_pos = False
    scanned = 0
    for r in rs:
        r = int(r)
        scanned += 1
        mb = rotation_multi_measure(sys, r, ell)
        if mb.lower > 0:
            any_pos = True
        elif mb.upper > 0:
            uncertain.append(r)
        if best is None or mb.lower > best[1]:
            best = (r, mb.lower)
    if scanned == 0:
        raise ValueError("D is empty")
    return ObstructionReport(any_pos, not any_pos and not uncertain, best, scanned, uncertain)


# ---------------------------------------------------------------------------
# extraction certificates


@dataclass
class Extraction:
    r: int
    certified: bool
    values: dict[str, Angle]
    reason: str = ""
    carries: tuple[int, int, int] | None = None

    def to_json(self) -> dict:
        obj = {
            "r": self.r,
            "certified": self.certified,
            "reason": self.reason,
            "values": {k: float(v) for k, v in self.values.items()},
        }
        if self.carries is not None:
            obj["carries"] = list(self.carries)
        return obj


def _quarter(eps: Angle) -> Angle:
    return eps.halve().halve()


def _congruent(x: Angle, y: Angle) -> bool:
    """``x == y mod 1`` up to the combined error bounds."""
    a, b = align(x, y)
    d = (a.mantissa - b.mantissa) % a.modulus
    e = a.err_ulps + b.err_ulps
    return min(d, a.modulus - d) <= e


def _near(x: Angle, radius: Angle, n: int | None = None) -> bool:
    v = x.near_zero(radius)
    if v is None:
        raise PrecisionError(f"containment of {x} in the radius-{float(radius):.4g} arc is undecidable", n=n)
    return v


def extraction_lambda(alpha: Angle, eps: Angle, N: int):
    """Recipe for ``{n : {n alpha}, {n^2 alpha/2} in [0, eps/4]}``."""
    w = TorusWindow(Angle(0, eps.frac_bits + 2), _quarter(eps))
    return recipe_windows([(1,), (2,)], [alpha, alpha.halve()], [w, w])


def powers_extraction(alpha: Angle, eps: Angle, witness: Witness, p: IntegerPolynomial) -> Extraction:
    """Recover ``{r alpha}`` and ``{r^2 alpha}`` from a progression in the extraction set.

    With ``alpha' = alpha / 2`` and ``m, m + r, m + 2r`` in
    ``{n : {n alpha}, {n^2 alpha'} in [0, eps/4]}``:
    ``B - A = r alpha`` and ``C + E - 2D = r^2 alpha`` (mod 1), which puts both
    within ``eps/2`` of 0 and ``{p(r) alpha}`` within ``eps`` of 0 for
    ``p = n^2 + n``.  For ``p = n`` only ``m, m + r`` are used.
    """
    linear = p.coeffs == (0, 1)
    if not linear and p.coeffs != (0, 1, 1):
        raise ValueError("supported polynomials are n and n^2 + n")
    m, r = witness.m, witness.r
    need = 2 if linear else 3
    if len(witness.terms) < need:
        raise ValueError(f"witness needs {need} terms")
    q = _quarter(eps)
    half = eps.halve()
    a1 = alpha.halve()
    n1 = IntegerPolynomial.monomial(1)
    n2 = IntegerPolynomial.monomial(2)
    A = frac_poly_eval(n1, alpha, m)
    B = frac_poly_eval(n1, alpha, m + r)
    vals = {"A": A, "B": B}
    inputs = [A, B]
    if not linear:
        C, D, E = (frac_poly_eval(n2, a1, x) for x in (m, m + r, m + 2 * r))
        vals.update(C=C, D=D, E=E)
        inputs += [C, D, E]
    for name, v in vals.items():
        if not _near(v, q, r) or v.mantissa > v.modulus // 2:
            return Extraction(r, False, vals, f"{name} is not in [0, eps/4]: witness not drawn from the extraction set")
    r_alpha = B - A
    vals["r_alpha"] = r_alpha
    if not _congruent(r_alpha, frac_poly_eval(n1, alpha, r)):
        return Extraction(r, False, vals, "B - A differs from r alpha")
    if not _near(r_alpha, half, r):
        return Extraction(r, False, vals, "{r alpha} outside the eps/2 arc")
    if linear:
        vals["p_alpha"] = r_alpha
        return Extraction(r, True, vals)
    r2_alpha = vals["C"] + vals["E"] - vals["D"].scale(2)
    vals["r2_alpha"] = r2_alpha
    if not _congruent(r2_alpha, frac_poly_eval(n2, alpha, r)):
        return Extraction(r, False, vals, "C + E - 2D differs from r^2 alpha")
    if not _near(r2_alpha, half, r):
        return Extraction(r, False, vals, "{r^2 alpha} outside the eps/2 arc")
    p_alpha = r_alpha + r2_alpha
    vals["p_alpha"] = p_alpha
    if not _congruent(p_alpha, frac_poly_eval(p, alpha, r)) or not _near(p_alpha, eps, r):
        return Extraction(r, False, vals, "{(r^2 + r) alpha} outside the eps arc")
    return Extraction(r, True, vals)


def lemma1_lambda(alpha: Angle, beta: Angle, eps: Angle, alpha_int: int = 0):
    """Recipe for ``{n : {[n alpha] n beta'}, {n beta'} in [0, eps/4]}`` with ``beta' = beta / 2``."""
    b1 = beta.halve()
    w = TorusWindow(Angle(0, eps.frac_bits + 2), _quarter(eps))
    qs = [
        GeneralizedQuadratic((GQTerm(alpha, b1, alpha_int),)),
        GeneralizedQuadratic((), delta=b1),
    ]
    return recipe_gq_windows(qs, [w, w])


def lemma1_extraction(alpha: Angle, beta: Angle, eps: Angle, witness: Witness, alpha_int: int = 0) -> Extraction:
    """Certify ``{[r alpha] r beta}`` within eps of 0 from a 3-term progression.

    Uses ``beta' = beta / 2``.  With ``A, B, C`` the values of ``[n alpha] n beta'``
    at ``m, m + r, m + 2r``, the floor identity gives
    ``A + C - 2B = 2 [r alpha] r beta' + (e1 + e2)(m + 2r) beta' - 2 e3 (m + r) beta'``,
    where e1, e2, e3 are the carries of ``[2 r alpha]``, ``[(m + 2r) alpha]``
    and ``[(m + r) alpha]``.
    """
    m, r = witness.m, witness.r
    if len(witness.terms) < 3:
        raise ValueError("witness needs 3 terms")
    b1 = beta.halve()
    q = _quarter(eps)
    bracket = GeneralizedQuadratic((GQTerm(alpha, b1, alpha_int),))
    lin = IntegerPolynomial.monomial(1)
    A, B, C = (gq_eval(bracket, x) for x in (m, m + r, m + 2 * r))
    vals = {"A": A, "B": B, "C": C}
    for x in (m, m + r, m + 2 * r):
        vals[f"beta'*{x}"] = frac_poly_eval(lin, b1, x)
    for name, v in vals.items():
        if not _near(v, q, r) or v.mantissa > v.modulus // 2:
            return Extraction(r, False, vals, f"{name} is not in [0, eps/4]: witness not drawn from the extraction set")

    def split(n: int) -> tuple[int, Angle]:
        fl = floor_of_multiple(alpha_int, alpha, n)
        return fl, Angle((n * alpha.mantissa) % alpha.modulus, alpha.frac_bits, n * alpha.err_ulps)

    fm, xm = split(m)
    fr, xr = split(r)
    f2r, x2r = split(2 * r)
    e1 = floor_sum_decompose((fr, xr), (fr, xr))
    e2 = floor_sum_decompose((fm, xm), (f2r, x2r))
    e3 = floor_sum_decompose((fm, xm), (fr, xr))
    if split(m + r)[0] != fm + fr + e3 or split(m + 2 * r)[0] != fm + 2 * fr + e1 + e2:
        raise AssertionError("floor identity violated")  # exact integers; cannot happen
    lhs = A + C - B.scale(2)
    main = b1.scale(2 * fr * r)
    corr = b1.scale((e1 + e2) * (m + 2 * r) - 2 * e3 * (m + r))
    vals.update(lhs=lhs, main=main, correction=corr)
    carries = (e1, e2, e3)
    if not _congruent(lhs, main + corr):
        return Extraction(r, False, vals, "A + C - 2B does not match the floor expansion", carries)
    if not _near(corr, eps.halve(), r):
        return Extraction(r, False, vals, "carry correction outside the eps/2 arc", carries)
    if not _near(main, eps, r):
        return Extraction(r, False, vals, "{[r alpha] r beta} outside the eps arc", carries)
    return Extraction(r, True, vals, "", carries)


def powers2_check(R: IntegerSet, a_vec: Sequence[int], alpha: Angle, eps: Angle) -> int | None:
    """Least r in R with ``{(r^a_1 + ... + r^a_l) alpha}`` within eps of 0, else None."""
    if len(R) == 0:
        raise ValueError("R is empty")
    p = IntegerPolynomial.sum_of_powers(a_vec)
    for r in R:
        if _near(frac_poly_eval(p, alpha, r), eps, r):
            return r
    return None


# ---------------------------------------------------------------------------
# uniformity profiles


@dataclass
class UniformityProfile:
    rows: list[dict]
    family_min: float
    label: str = "empirical lower-envelope estimate over the supplied family; not the theorem's delta"

    def to_json(self) -> dict:
        return {"rows": self.rows, "family_min": self.family_min, "label": self.label}


def _profile_one(args) -> dict:
    bits, horizon, offsets_by_n = args
    lam = IntegerSet(horizon, bits)
    best, best_n = -1, None
    for n, offs in offsets_by_n:
        c = pattern_bits(lam, offs).bit_count()
        if c > best:
            best, best_n = c, n
    return {"count": best, "n": best_n}


def uniformity_profile(
    family: Sequence[IntegerSet],
    u: Sequence[IntegerPolynomial],
    N0: int,
    min_density: float | Fraction = 0,
    threads: int = 1,
) -> UniformityProfile:
    """For each set, ``max_{n <= N0} |Lambda ∩ (Lambda - u_1(n)) ∩ ...| / N``; plus the family minimum."""
    if not family:
        raise ValueError("empty family")
    horizon = family[0].horizon
    for i, lam in enumerate(family):
        if lam.horizon != horizon:
            raise ValueError("all sets must share one horizon")
        if lam.density() < min_density:
            raise ValueError(f"set {i} has density {float(lam.density()):.4g} below {float(min_density):.4g}")
    offsets_by_n = [(n, [p(n) for p in u]) for n in range(1, N0 + 1)]
    results = ordered_map(_profile_one, [(lam.bits, horizon, offsets_by_n) for lam in family], threads)
    rows = []
    for i, (lam, res) in enumerate(zip(family, results)):
        rows.append(
            {
                "index": i,
                "density": float(lam.density()),
                "argmax_n": res["n"],
                "max_count": res["count"],
                "max_ratio": res["count"] / horizon,
            }
        )
    return UniformityProfile(rows, min(r["max_ratio"] for r in rows))


def random_family(seed: int, count: int, horizon: int, p: float = 0.5) -> list[IntegerSet]:
    """Independent Bernoulli(p) subsets of ``[1, horizon]`` from a Philox stream keyed by ``seed``."""
    gen = np.random.Generator(np.random.Philox(key=seed & ((1 << 64) - 1)))
    return [IntegerSet.from_mask(gen.random(horizon) < p, f"random(seed={seed},i={i},p={p})") for i in range(count)]


def bohr_family(thetas: Sequence[Angle], window: TorusWindow, horizon: int) -> list[IntegerSet]:
    """``{n : {n theta} in window}`` for each theta."""
    return [build_set(recipe_windows([(1,)], [t], [window]), horizon) for t in thetas]
