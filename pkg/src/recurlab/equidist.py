"""Equidistribution diagnostics: Weyl sums, star discrepancy, Cesaro D-lim estimates.

Unit-circle values e(x) = exp(2 pi i x) are taken from the top 64 bits of each
Angle; the phase ``freq * x`` is formed exactly in uint64 arithmetic (wrapping
is reduction mod 1), then rounded to 53 bits for cos/sin.  The per-term error
of e(freq x) is therefore at most ``2**-50`` plus the Angle's own error scaled
by ``2 pi |freq|``, and that total is reported in every :class:`WeylReport`.

Sums are accumulated with :func:`math.fsum`, which is correctly rounded and so
independent of chunking and evaluation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .angle import Angle, AngleStream, GeneralizedQuadratic, GQStream, GQTerm, ListStream
from .setlab import IntegerSet, PreparedWindow, TorusWindow

TERM_ERR = 2.0**-50
MAX_DISCREPANCY_POINTS = 10**8
DEFAULT_LADDER = (10**3, 10**4, 10**5, 10**6)


@dataclass
class WeylReport:
    N: int
    harmonics: list[tuple[int, float]]
    err: float
    extra: dict = field(default_factory=dict)

    def mag(self, freq: int) -> float:
        for f, m in self.harmonics:
            if f == freq:
                return m
        raise KeyError(freq)

    def json_lines(self) -> list[dict]:
        return [{"N": self.N, "freq": f, "mag": m, "err": self.err, **self.extra} for f, m in self.harmonics]


@dataclass
class DiscrepancyReport:
    N: int
    star_discrepancy: Fraction
    window: Fraction  # the t where |#{x_i < t}/N - t| is (nearly) maximal
    err: float

    def __float__(self) -> float:
        return float(self.star_discrepancy)

    def json_line(self) -> dict:
        return {"N": self.N, "star_discrepancy": float(self.star_discrepancy), "t": float(self.window), "err": self.err}


def top64(mantissas: Sequence[int], frac_bits: int) -> np.ndarray:
    """The leading 64 fractional bits of each mantissa, as uint64."""
    if frac_bits >= 64:
        s = frac_bits - 64
        return np.array([m >> s for m in mantissas], dtype=np.uint64)
    s = 64 - frac_bits
    return np.array([m << s for m in mantissas], dtype=np.uint64)


def unit_circle(tops: np.ndarray, freq: int) -> tuple[np.ndarray, np.ndarray]:
    """``cos, sin`` of ``2 pi freq x`` for 64-bit fixed-point x."""
    phase = tops * np.uint64(freq % (1 << 64))
    t = (phase >> np.uint64(11)).astype(np.float64) * 2.0**-53
    ang = 2.0 * math.pi * t
    return np.cos(ang), np.sin(ang)


def _term_err(freq: int, angle_err: int, frac_bits: int) -> float:
    return TERM_ERR + 2 * math.pi * abs(freq) * (angle_err * 2.0**-frac_bits + 2.0**-64)


def _collect(seq: AngleStream | Iterable[Angle], N: int) -> tuple[np.ndarray, int, int]:
    if isinstance(seq, AngleStream):
        mants, err = seq.take(N)
        return top64(mants, seq.frac_bits), err, seq.frac_bits
    angles = [a for _, a in zip(range(N), seq)]
    if len(angles) < N:
        raise ValueError(f"sequence has only {len(angles)} terms, {N} requested")
    ls = ListStream(angles)
    mants, err = ls.take(N)
    return top64(mants, ls.frac_bits), err, ls.frac_bits


def _weyl_from_tops(tops: np.ndarray, freqs: Sequence[int], prefixes: Sequence[int], err: int, bits: int):
    out = []
    cache = {}
    for f in freqs:
        if f == 0:
            raise ValueError("frequency 0 is excluded")
        cache[f] = unit_circle(tops, f)
    for n in prefixes:
        harmonics = []
        for f in freqs:
            c, s = cache[f]
            re = math.fsum(c[:n]) / n
            im = math.fsum(s[:n]) / n
            harmonics.append((f, min(1.0, math.hypot(re, im))))
        e = max(_term_err(f, err, bits) for f in freqs)
        out.append(WeylReport(n, harmonics, e))
    return out


def weyl_sum(seq: AngleStream | Iterable[Angle], N: int, freqs: Sequence[int]) -> WeylReport:
    """Magnitudes of ``(1/N) sum_{n<N terms} e(freq x_n)`` for each frequency."""
    if N < 1:
        raise ValueError("N must be >= 1")
    tops, err, bits = _collect(seq, N)
    return _weyl_from_tops(tops, freqs, [N], err, bits)[0]


def weyl_ladder(seq: AngleStream | Iterable[Angle], ladder: Sequence[int], freqs: Sequence[int]) -> list[WeylReport]:
    """:func:`weyl_sum` over nested prefixes of one sequence."""
    ladder = sorted(ladder)
    tops, err, bits = _collect(seq, ladder[-1])
    return _weyl_from_tops(tops, freqs, ladder, err, bits)


def ladder_holds(values: Sequence[float], slack: float) -> bool:
    """Non-increasing up to relative ``slack``: ``v[i+1] <= (1 + slack) v[i]``."""
    return all(b <= (1 + slack) * a for a, b in zip(values, values[1:]))


def star_discrepancy(seq: AngleStream | Iterable[Angle], N: int) -> DiscrepancyReport:
    """``D*_N = max_i max(i/N - x_(i), x_(i) - (i-1)/N)`` over the sorted points.

    Computed exactly on the 64-bit truncations; ``err`` bounds the effect of
    that truncation and of the Angles' own error.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if N > MAX_DISCREPANCY_POINTS:
        raise MemoryError(f"N={N} exceeds the sorting bound {MAX_DISCREPANCY_POINTS}")
    tops, err, bits = _collect(seq, N)
    xs = np.sort(tops)
    xf = xs.astype(np.float64) * 2.0**-64
    i = np.arange(1, N + 1, dtype=np.float64)
    upper = i / N - xf
    lower = xf - (i - 1) / N
    cand = np.maximum(upper, lower)
    best = cand.max()
    exact_best = Fraction(-1)
    where = Fraction(0)
    scale = 1 << 64
    for j in np.flatnonzero(cand >= best - 1e-9):
        x = Fraction(int(xs[j]), scale)
        k = int(j) + 1
        for v in (Fraction(k, N) - x, x - Fraction(k - 1, N)):
            if v > exact_best:
                exact_best, where = v, x
    e = err * 2.0**-bits + 2.0**-64
    return DiscrepancyReport(N, exact_best, where, e)


@dataclass
class DlimReport:
    N: int
    value: float
    ladder: list[tuple[int, float]]

    @property
    def decreasing(self) -> bool:
        return ladder_holds([v for _, v in self.ladder], 0.0)


def dlim_estimate(a: Callable[[int], complex] | np.ndarray, N: int, ladder: Sequence[int] | None = None) -> DlimReport:
    """Cesaro mean of ``|a_n|`` over ``n = 1..N`` plus the same mean at each ladder rung.

    ``a`` is either an accessor ``n -> a_n`` or an array whose entry ``n - 1`` is ``a_n``.
    Values are assumed bounded by 1 in modulus.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if callable(a):
        vals = np.abs(np.array([a(n) for n in range(1, N + 1)]))
    else:
        vals = np.abs(np.asarray(a)[:N])
        if len(vals) < N:
            raise ValueError("array shorter than N")
    rungs = sorted(set(r for r in (ladder or ()) if r <= N) | {N})
    lad = [(r, math.fsum(vals[:r]) / r) for r in rungs]
    return DlimReport(N, lad[-1][1], lad)


def running_weyl_averages(seq: AngleStream, N: int, freq: int = 1) -> np.ndarray:
    """``S_n = (1/n) sum_{m<=n} e(freq x_m)`` for n = 1..N (complex array)."""
    tops, _, _ = _collect(seq, N)
    c, s = unit_circle(tops, freq)
    n = np.arange(1, N + 1)
    return (np.cumsum(c) + 1j * np.cumsum(s)) / n


def bracket_quadratic(
    alpha: Angle, beta: Angle, p: tuple[Angle, Angle, Angle] | None = None, alpha_int: int = 0
) -> GeneralizedQuadratic:
    """``[n alpha] n beta + a n^2 + b n + c`` with ``p = (a, b, c)``."""
    kwargs = {}
    if p is not None:
        kwargs = dict(gamma=p[0], delta=p[1], c=p[2])
    return GeneralizedQuadratic((GQTerm(alpha, beta, alpha_int),), **kwargs)


def lemma_Lp_check(
    alpha: Angle,
    beta: Angle,
    p: tuple[Angle, Angle, Angle] | None,
    N: int,
    alpha_int: int = 0,
    ladder: Sequence[int] | None = None,
) -> list[WeylReport]:
    """``|(1/N) sum_{n<=N} e([n alpha] n beta + p(n))|``, optionally over a ladder ending at N.

    The averages are meant to vanish when 1, alpha, beta are rationally
    independent; rational inputs are computed all the same.
    """
    q = bracket_quadratic(alpha, beta, p, alpha_int)
    rungs = sorted(set(ladder or ()) | {N})
    return weyl_ladder(GQStream(q, 1), rungs, [1])


def main2_condition_i_check(
    R: IntegerSet,
    gamma: Angle,
    delta: Angle,
    N: int | None = None,
    freqs: Sequence[int] = (1, 2, 3),
    ladder: Sequence[int] | None = None,
) -> list[WeylReport]:
    """Weyl magnitudes of ``r^2 gamma + r delta`` over the members ``r <= N`` of R.

    Each report's ``N`` is the horizon; ``extra["count"]`` is the number of members used.
    """
    N = R.horizon if N is None else N
    elems = R.restrict(N).elements()
    if len(elems) == 0:
        raise ValueError("R is empty below the horizon")
    q = GeneralizedQuadratic((), gamma, delta)
    rungs = sorted(set(ladder or ()) | {N})
    counts = [int(np.searchsorted(elems, h, side="right")) for h in rungs]
    if counts[0] == 0:
        raise ValueError(f"R has no members below {rungs[0]}")
    stream = GQStream(q, points=[int(r) for r in elems])
    reports = weyl_ladder(stream, counts, freqs)
    for rep, h in zip(reports, rungs):
        rep.extra["count"] = rep.N
        rep.N = h
    if gamma.mantissa == 0 and delta.mantissa == 0:
        for rep in reports:
            rep.extra["note"] = "constant sequence; outside the theorem's hypotheses"
    return reports


def weyl_sum_filtered(
    values: AngleStream, selector: AngleStream, window: TorusWindow, N: int, freqs: Sequence[int]
) -> WeylReport:
    """Weyl magnitudes of ``values_n`` over those ``n`` among the next N where ``selector_n`` lies in window.

    This is the window-filtered counterpart of enumerating a recipe set first.
    """
    vm, verr = values.take(N)
    sm, serr = selector.take(N)
    pw = PreparedWindow(window, max(selector.frac_bits, window.frac_bits))
    shift = (pw.modulus.bit_length() - 1) - selector.frac_bits
    flags = pw.classify_block([m << shift for m in sm], serr << shift, selector.index - N)
    picked = [m for m, f in zip(vm, flags) if f]
    if not picked:
        raise ValueError("no selected terms")
    tops = top64(picked, values.frac_bits)
    return _weyl_from_tops(tops, freqs, [len(picked)], verr, values.frac_bits)[0]
