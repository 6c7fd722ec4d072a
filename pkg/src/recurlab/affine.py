"""Unipotent affine maps ``T x = A x + b`` on the torus T^d.

With ``N = A - I`` nilpotent of step ``ell`` the orbit has the closed form

    T^n x = sum_{k<ell} C(n, k) N^k x + sum_{k<ell} C(n, k+1) N^k b,

valid for every n >= 0 (``C(n, k) = 0`` for ``k > n``).  All arithmetic is on
integer mantissas mod ``2**B``, so iterated steps and the closed form agree
bit for bit; only the error bounds differ.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Sequence

import numpy as np

from .angle import Angle, IntegerPolynomial, PolyStream, PrecisionError
from .setlab import PreparedWindow, TorusWindow

MAX_ELL = 8
MAX_DIM = 16
UNCERTAIN_LIMIT = 0.001
AFFINE_MAGIC = "recurlab-affine v1"

Matrix = tuple[tuple[int, ...], ...]


def _matmul(a: Matrix, b: Matrix) -> Matrix:
    cols = list(zip(*b))
    return tuple(tuple(sum(x * y for x, y in zip(row, col)) for col in cols) for row in a)


def _identity(d: int) -> Matrix:
    return tuple(tuple(int(i == j) for j in range(d)) for i in range(d))


def _is_zero(m: Matrix) -> bool:
    return all(v == 0 for row in m for v in row)


class NotUnipotentError(ValueError):
    def __init__(self, residual: Matrix, ell: int):
        super().__init__(f"(A - I)^{ell} is not zero; residual {residual}")
        self.residual = residual


@dataclass(frozen=True)
class UnipotentAffineMap:
    A: Matrix
    b: tuple[Angle, ...]
    ell: int

    def __post_init__(self):
        A = tuple(tuple(int(v) for v in row) for row in self.A)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", tuple(self.b))
        d = len(A)
        if d < 1 or d > MAX_DIM or any(len(row) != d for row in A):
            raise ValueError(f"A must be square with 1 <= d <= {MAX_DIM}")
        if len(self.b) != d:
            raise ValueError("b must have d coordinates")
        if not 1 <= self.ell <= MAX_ELL:
            raise ValueError(f"ell must lie in [1, {MAX_ELL}]")
        powers = [_identity(d)]
        nil = tuple(tuple(v - (i == j) for j, v in enumerate(row)) for i, row in enumerate(A))
        for _ in range(self.ell):
            powers.append(_matmul(powers[-1], nil))
        if not _is_zero(powers[self.ell]):
            raise NotUnipotentError(powers[self.ell], self.ell)
        if self.ell > 1 and _is_zero(powers[self.ell - 1]):
            warnings.warn(f"(A - I)^{self.ell - 1} already vanishes; ell is overstated", stacklevel=2)
        object.__setattr__(self, "_nil_powers", tuple(powers[: self.ell]))

    @property
    def d(self) -> int:
        return len(self.A)

    @property
    def nil_powers(self) -> tuple[Matrix, ...]:
        """``(A - I)^k`` for ``k = 0 .. ell - 1``."""
        return self._nil_powers  # type: ignore[attr-defined]


@dataclass(frozen=True)
class TorusPoint:
    coords: tuple[Angle, ...]

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))

    @classmethod
    def zero(cls, d: int, frac_bits: int = 64) -> TorusPoint:
        return cls(tuple(Angle(0, frac_bits) for _ in range(d)))

    @property
    def d(self) -> int:
        return len(self.coords)

    def same_values(self, other: TorusPoint) -> bool:
        """Equal mantissas at a common precision (error bounds ignored)."""
        bits = max(a.frac_bits for a in self.coords + other.coords)
        return all(
            a.with_bits(bits).mantissa == b.with_bits(bits).mantissa for a, b in zip(self.coords, other.coords)
        ) and self.d == other.d


@dataclass(frozen=True)
class TorusBox:
    windows: tuple[TorusWindow, ...]

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(self.windows))

    def measure(self) -> Fraction:
        return math.prod((w.measure() for w in self.windows), start=Fraction(1))

    def contains(self, x: TorusPoint) -> bool | None:
        verdicts = [w.contains(c) for w, c in zip(self.windows, x.coords)]
        if any(v is False for v in verdicts):
            return False
        if all(verdicts):
            return True
        return None


def _bits(T: UnipotentAffineMap, x: TorusPoint) -> int:
    return max(a.frac_bits for a in T.b + x.coords)


def _vec(angles: Sequence[Angle], bits: int) -> tuple[list[int], list[int]]:
    ws = [a.with_bits(bits) for a in angles]
    return [a.mantissa for a in ws], [a.err_ulps for a in ws]


def _apply(m: Matrix, v: Sequence[int]) -> list[int]:
    return [sum(a * x for a, x in zip(row, v)) for row in m]


def _apply_abs(m: Matrix, v: Sequence[int]) -> list[int]:
    return [sum(abs(a) * x for a, x in zip(row, v)) for row in m]


def affine_step(T: UnipotentAffineMap, x: TorusPoint) -> TorusPoint:
    """``A x + b`` mod 1."""
    if x.d != T.d:
        raise ValueError("dimension mismatch")
    bits = _bits(T, x)
    mask = (1 << bits) - 1
    xm, xe = _vec(x.coords, bits)
    bm, be = _vec(T.b, bits)
    vals = _apply(T.A, xm)
    errs = _apply_abs(T.A, xe)
    return TorusPoint(tuple(Angle((v + c) & mask, bits, e + f) for v, c, e, f in zip(vals, bm, errs, be)))


def _closed_form_raw(T: UnipotentAffineMap, xm, xe, bm, be, n: int) -> tuple[list[int], list[int]]:
    d = T.d
    val = [0] * d
    err = [0] * d
    for k, P in enumerate(T.nil_powers):
        c0 = math.comb(n, k)
        c1 = math.comb(n, k + 1)
        if c0 == 0 and c1 == 0:
            break
        px, pb = _apply(P, xm), _apply(P, bm)
        ex, eb = _apply_abs(P, xe), _apply_abs(P, be)
        for i in range(d):
            val[i] += c0 * px[i] + c1 * pb[i]
            err[i] += c0 * ex[i] + c1 * eb[i]
    return val, err


def orbit_closed_form(T: UnipotentAffineMap, x: TorusPoint, n: int) -> TorusPoint:
    """``T^n x`` via binomial coefficients; cost is polynomial in ell, d and log n."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if x.d != T.d:
        raise ValueError("dimension mismatch")
    bits = _bits(T, x)
    mask = (1 << bits) - 1
    xm, xe = _vec(x.coords, bits)
    bm, be = _vec(T.b, bits)
    val, err = _closed_form_raw(T, xm, xe, bm, be, n)
    return TorusPoint(tuple(Angle(v & mask, bits, e) for v, e in zip(val, err)))


def iterate(T: UnipotentAffineMap, x: TorusPoint, n: int) -> TorusPoint:
    for _ in range(n):
        x = affine_step(T, x)
    return x


class OrbitStream:
    """Mantissa vectors of ``T^{q(n)} x`` for consecutive n.

    Each coordinate is an integer-valued polynomial in n of degree at most
    ``ell * deg q``, so a difference table seeded from the closed form
    reproduces it exactly.
    """

    def __init__(self, T: UnipotentAffineMap, x: TorusPoint, q: IntegerPolynomial, n_start: int = 1):
        self.T, self.x, self.q = T, x, q
        self.bits = _bits(T, x)
        self.mask = (1 << self.bits) - 1
        self._xm, self._xe = _vec(x.coords, self.bits)
        self._bm, self._be = _vec(T.b, self.bits)
        deg = T.ell * max(q.degree, 1)
        vals = []
        for j in range(deg + 1):
            m = q(n_start + j)
            if m < 0:
                raise ValueError("q must be nonnegative on the range")
            vals.append(_closed_form_raw(T, self._xm, self._xe, self._bm, self._be, m)[0])
        table = []
        for _ in range(deg + 1):
            table.append([v & self.mask for v in vals[0]])
            vals = [[b - a for a, b in zip(u, w)] for u, w in zip(vals, vals[1:])]
        self._table = table
        self.index = n_start

    def take(self, count: int) -> tuple[list[list[int]], list[int]]:
        """``count`` mantissa vectors (one list per coordinate) and per-coordinate error bounds."""
        t, mask, d = self._table, self.mask, self.T.d
        deg = len(t) - 1
        cols: list[list[int]] = [[] for _ in range(d)]
        for _ in range(count):
            for i in range(d):
                cols[i].append(t[0][i])
            for k in range(deg):
                row, nxt = t[k], t[k + 1]
                for i in range(d):
                    row[i] = (row[i] + nxt[i]) & mask
        last = self.index + count - 1
        self.index += count
        m_max = self.q.abs_bound(max(last, 0))
        _, err = _closed_form_raw(self.T, self._xm, self._xe, self._bm, self._be, m_max)
        return cols, err


def _box_flags(box: TorusBox, cols: list[list[int]], errs: list[int], bits: int) -> tuple[np.ndarray, np.ndarray]:
    """``(surely_in, uncertain)`` masks for a block of orbit points."""
    n = len(cols[0])
    surely = np.ones(n, dtype=bool)
    maybe = np.ones(n, dtype=bool)
    for w, col, e in zip(box.windows, cols, errs):
        if w.full:
            continue
        wb = max(bits, w.frac_bits)
        shift = wb - bits
        pw = PreparedWindow(w, wb)
        in_lo, in_hi, out_lo, out_hi = pw.limits(e << shift)
        lo, mk = pw.lo, pw.mask
        offs = [((v << shift) - lo) & mk for v in col]
        surely &= np.array([in_lo <= t <= in_hi for t in offs], dtype=bool)
        maybe &= np.array([not out_lo < t < out_hi for t in offs], dtype=bool)
    return surely, maybe & ~surely


@dataclass
class OrbitAverage:
    N: int
    lower: Fraction
    upper: Fraction
    uncertain: int

    @property
    def value(self) -> float:
        return float(self.lower + self.upper) / 2


def _orbit_flags(T, x, box, q: IntegerPolynomial, N: int) -> tuple[np.ndarray, np.ndarray]:
    stream = OrbitStream(T, x, q, 1)
    cols, errs = stream.take(N)
    return _box_flags(box, cols, errs, stream.bits)


def polynomial_orbit_average(T: UnipotentAffineMap, x: TorusPoint, box: TorusBox, k: int, N: int) -> OrbitAverage:
    """``(1/N) sum_{n<=N} 1_box(T^{n^k} x)`` as an interval; boundary-uncertain points widen it."""
    if N < 1:
        raise ValueError("N must be >= 1")
    surely, unc = _orbit_flags(T, x, box, IntegerPolynomial.monomial(k), N)
    u = int(unc.sum())
    if u > UNCERTAIN_LIMIT * N:
        raise PrecisionError(f"{u} of {N} orbit points straddle the box boundary; raise frac_bits")
    c = int(surely.sum())
    return OrbitAverage(N, Fraction(c, N), Fraction(c + u, N), u)


@dataclass(frozen=True)
class Weight:
    """Window condition ``{p(n) alpha} in W`` multiplying the orbit average."""

    p: IntegerPolynomial
    alpha: Angle
    window: TorusWindow


@dataclass
class FactorizationRow:
    N: int
    lhs: Fraction
    rhs: Fraction
    gap_lo: Fraction
    gap_hi: Fraction
    uncertain: int

    @property
    def gap(self) -> float:
        return float(self.gap_hi)

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "lhs": float(self.lhs),
            "rhs": float(self.rhs),
            "gap": float(self.gap_hi),
            "gap_lo": float(self.gap_lo),
            "uncertain": self.uncertain,
        }


def factorization_check(
    T: UnipotentAffineMap,
    x: TorusPoint,
    box: TorusBox,
    k: int,
    weights: Sequence[Weight],
    ell: int,
    N: int | Sequence[int],
) -> list[FactorizationRow]:
    """Weighted versus factorized multiple orbit averages along ``n^k``, over a ladder of N.

    lhs = (1/N) sum_n prod_j 1_{W_j}({p_j(n) alpha_j}) prod_{i<=ell} 1_box(T^{i n^k} x)
    rhs = prod_j |W_j| * (1/N) sum_n prod_{i<=ell} 1_box(T^{i n^k} x)

    Uncertain box memberships are carried as intervals, so each gap is an interval.
    """
    ladder = sorted([N] if isinstance(N, int) else N)
    n_max = ladder[-1]
    surely = np.ones(n_max, dtype=bool)
    maybe = np.ones(n_max, dtype=bool)
    for i in range(1, ell + 1):
        s, u = _orbit_flags(T, x, box, IntegerPolynomial.monomial(k, i), n_max)
        maybe &= s | u
        surely &= s
    wmask = np.ones(n_max, dtype=bool)
    wmeasure = Fraction(1)
    for w in weights:
        wmeasure *= w.window.measure()
        if w.window.full:
            continue
        bits = max(w.alpha.frac_bits, w.window.frac_bits)
        stream = PolyStream(w.p, w.alpha.with_bits(bits), 1)
        mants, err = stream.take(n_max)
        wmask &= PreparedWindow(w.window, bits).classify_block(mants, err, 1)
    cs_in = np.cumsum(surely)
    cs_maybe = np.cumsum(maybe)
    cw_in = np.cumsum(surely & wmask)
    cw_maybe = np.cumsum(maybe & wmask)
    rows = []
    for n in ladder:
        unc = int(cs_maybe[n - 1] - cs_in[n - 1])
        if unc > UNCERTAIN_LIMIT * n:
            raise PrecisionError(f"{unc} of {n} orbit points straddle the box boundary; raise frac_bits")
        lhs_lo = Fraction(int(cw_in[n - 1]), n)
        lhs_hi = Fraction(int(cw_maybe[n - 1]), n)
        rhs_lo = wmeasure * Fraction(int(cs_in[n - 1]), n)
        rhs_hi = wmeasure * Fraction(int(cs_maybe[n - 1]), n)
        gap_hi = max(abs(lhs_hi - rhs_lo), abs(rhs_hi - lhs_lo))
        gap_lo = max(Fraction(0), lhs_lo - rhs_hi, rhs_lo - lhs_hi)
        rows.append(FactorizationRow(n, (lhs_lo + lhs_hi) / 2, (rhs_lo + rhs_hi) / 2, gap_lo, gap_hi, unc))
    return rows


# ---------------------------------------------------------------------------
# map files and generators


def write_map(T: UnipotentAffineMap, fp: IO[str]) -> None:
    fp.write(f"{AFFINE_MAGIC} d={T.d} ell={T.ell}\n")
    for row in T.A:
        fp.write(" ".join(str(v) for v in row) + "\n")
    for a in T.b:
        fp.write(a.serialize() + "\n")


def read_map(fp: IO[str]) -> UnipotentAffineMap:
    header = fp.readline().split()
    if header[:2] != AFFINE_MAGIC.split() or len(header) != 4:
        raise ValueError("not a recurlab-affine v1 file")
    fields = dict(h.split("=", 1) for h in header[2:])
    d, ell = int(fields["d"]), int(fields["ell"])
    lines = [ln.strip() for ln in fp if ln.strip()]
    if len(lines) != 2 * d:
        raise ValueError(f"expected {d} matrix rows and {d} angles, got {len(lines)} lines")
    A = tuple(tuple(int(v) for v in ln.split()) for ln in lines[:d])
    b = tuple(Angle.parse(ln) for ln in lines[d:])
    return UnipotentAffineMap(A, b, ell)


def random_unipotent(rng: np.random.Generator, d: int, ell: int, frac_bits: int = 64, coeff: int = 3) -> UnipotentAffineMap:
    """A random map with ``(A - I)^ell = 0``, conjugated by a random unimodular matrix."""
    levels = sorted(int(v) for v in rng.integers(0, ell, size=d))
    levels[-1] = ell - 1 if d >= ell else levels[-1]
    nil = [[0] * d for _ in range(d)]
    for i in range(d):
        for j in range(d):
            if levels[i] > levels[j]:
                nil[i][j] = int(rng.integers(-coeff, coeff + 1))
    # unimodular P = unit upper triangular, P^-1 computed exactly
    P = [[int(i == j) if i >= j else int(rng.integers(-1, 2)) for j in range(d)] for i in range(d)]
    Pinv = _unit_upper_inverse(P)
    conj = _matmul(_matmul(tuple(map(tuple, P)), tuple(map(tuple, nil))), Pinv)
    A = tuple(tuple(v + (i == j) for j, v in enumerate(row)) for i, row in enumerate(conj))
    nbytes = (frac_bits + 7) // 8
    b = tuple(Angle(int.from_bytes(rng.bytes(nbytes), "little") % (1 << frac_bits), frac_bits) for _ in range(d))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return UnipotentAffineMap(A, b, ell)


def _unit_upper_inverse(P: list[list[int]]) -> Matrix:
    d = len(P)
    inv = [[int(i == j) for j in range(d)] for i in range(d)]
    for i in range(d - 1, -1, -1):
        for j in range(i + 1, d):
            if P[i][j]:
                for c in range(d):
                    inv[i][c] -= P[i][j] * inv[j][c]
    return tuple(map(tuple, inv))


def rotation(beta: Angle) -> UnipotentAffineMap:
    """The circle rotation ``x -> x + beta`` as a one-step map on T^1."""
    return UnipotentAffineMap(((1,),), (beta,), 1)


def skew_product(beta: Angle) -> UnipotentAffineMap:
    """``(x, y) -> (x + beta, y + x)`` on T^2."""
    return UnipotentAffineMap(((1, 0), (1, 1)), (beta, Angle(0, beta.frac_bits)), 2)
