import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recurlab.angle import (
    Angle,
    IntegerPolynomial,
    PrecisionError,
    angle_from_fraction,
    angle_from_quadratic_irrational,
    frac_poly_eval,
    sqrt_real,
)
from recurlab.recurrence import (
    COUNT_ALL,
    ArcSystem,
    Witness,
    WitnessQuery,
    bohr_family,
    extraction_lambda,
    iter_witnesses,
    lemma1_extraction,
    lemma1_lambda,
    obstruction_scan,
    powers2_check,
    powers_extraction,
    random_family,
    rotation_multi_measure,
    uniformity_profile,
    witness_search,
)
from recurlab.setlab import (
    IntegerSet,
    TorusWindow,
    build_set,
    power_image,
    recipe_bohr,
    recipe_counterexample,
    recipe_thm_A,
    recipe_thm_B,
)

SQRT2 = angle_from_quadratic_irrational(2, 256)
SQRT3 = angle_from_quadratic_irrational(3, 256)
EPS = angle_from_fraction(Fraction(1, 5), 64)


def brute_counts(lam: set[int], N: int, diffs, ell: int) -> dict[int, int]:
    out = {}
    for r in sorted(set(diffs)):
        out[r] = sum(all(m + j * r in lam for j in range(ell + 1)) for m in range(1, N + 1))
    return out


def brute_first(lam: set[int], N: int, diffs, ell: int):
    for r in sorted(set(diffs)):
        for m in range(1, N + 1):
            if all(m + j * r in lam for j in range(ell + 1)):
                return m, r
    return None


# -- witness search ----------------------------------------------------------------


def test_witness_full_interval():
    w = witness_search(WitnessQuery(IntegerSet.interval(100), IntegerSet.from_elements([4], 100), 2))
    assert (w.m, w.r, w.terms) == (1, 4, (1, 5, 9))


def test_witness_parity_obstruction():
    evens = IntegerSet.from_elements(range(2, 101, 2), 100)
    odds = IntegerSet.from_elements(range(1, 101, 2), 100)
    assert witness_search(WitnessQuery(evens, odds, 1)) is None


def test_witness_bohr_squares():
    N = 10**4
    lam = build_set(recipe_bohr(SQRT2, TorusWindow.closed(0, Fraction(3, 10))), N)
    squares = IntegerSet.from_elements((r * r for r in range(1, 101)), N)
    w = witness_search(WitnessQuery(lam, squares, 1))
    assert w is not None
    assert (w.m, w.r) == brute_first(set(lam), N, list(squares), 1)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 400), st.integers(1, 3), st.randoms(use_true_random=False))
def test_shift_counts_match_double_loop(N, ell, rnd):
    lam = {n for n in range(1, N + 1) if rnd.random() < rnd.choice([0.2, 0.5, 0.8])}
    diffs = {n for n in range(1, N + 1) if rnd.random() < 0.3}
    L = IntegerSet.from_elements(lam, N)
    D = IntegerSet.from_elements(diffs, N)
    counts = witness_search(WitnessQuery(L, D, ell, COUNT_ALL))
    assert counts == brute_counts(lam, N, diffs, ell)
    first = witness_search(WitnessQuery(L, D, ell))
    oracle = brute_first(lam, N, diffs, ell)
    assert (None if first is None else (first.m, first.r)) == oracle


@settings(max_examples=300, deadline=None)
@given(st.integers(5, 300), st.integers(1, 3), st.randoms(use_true_random=False))
def test_witness_validity(N, ell, rnd):
    lam = IntegerSet.from_elements((n for n in range(1, N + 1) if rnd.random() < 0.6), N)
    diffs = IntegerSet.from_elements((n for n in range(1, N + 1) if rnd.random() < 0.2), N)
    w = witness_search(WitnessQuery(lam, diffs, ell))
    if w is None:
        return
    assert len(w.terms) == ell + 1 and w.r in diffs
    assert all(t in lam and t <= N for t in w.terms)
    assert list(w.terms) == [w.m + j * w.r for j in range(ell + 1)]


def test_count_all_thread_independent():
    rnd = random.Random(7)
    N = 1500
    lam = IntegerSet.from_elements((n for n in range(1, N + 1) if rnd.random() < 0.5), N)
    q = WitnessQuery(lam, IntegerSet.interval(N), 2, COUNT_ALL)
    assert witness_search(q, 1) == witness_search(q, 3)


def test_query_rejects_wide_differences():
    with pytest.raises(ValueError):
        WitnessQuery(IntegerSet.interval(10), IntegerSet.interval(20))


def test_witness_json():
    assert Witness(1, 4, (1, 5, 9)).to_json() == {"m": 1, "r": 4, "terms": [1, 5, 9]}


# -- rotations -------------------------------------------------------------------------


def test_measure_identity_shift():
    sys = ArcSystem(angle_from_fraction(0, 64), TorusWindow.closed(0, Fraction(1, 8), 64))
    mb = rotation_multi_measure(sys, 5, 2)
    assert mb.lower == mb.upper == Fraction(1, 8)


def test_measure_disjoint():
    sys = ArcSystem(angle_from_fraction(Fraction(1, 2), 64), TorusWindow.closed(0, Fraction(1, 8), 64))
    mb = rotation_multi_measure(sys, 1, 1)
    assert mb.lower == mb.upper == 0


def test_measure_matches_grid():
    G = 10**6
    arc = TorusWindow.closed(0, Fraction(1, 4), 256)
    sys = ArcSystem(SQRT2, arc)
    mb = rotation_multi_measure(sys, 169, 2)
    shift = float(frac_poly_eval(IntegerPolynomial.monomial(1), SQRT2, 169))
    x = np.arange(G) / G
    inside = np.ones(G, dtype=bool)
    for j in range(3):
        y = (x + j * shift) % 1.0
        inside &= y <= 0.25
    est = inside.mean()
    assert abs(float(mb.lower) - est) <= 2 / G and abs(float(mb.upper) - est) <= 2 / G


def test_arc_measure_must_be_proper():
    with pytest.raises(ValueError):
        ArcSystem(SQRT2, TorusWindow.whole())


def test_obstruction_thm_A_power_image():
    N = 20_000
    arc = TorusWindow.closed(0, Fraction(1, 8), 256)
    R = build_set(recipe_thm_A([2], SQRT2), N)
    rep = obstruction_scan(ArcSystem(SQRT2, arc), (r * r for r in R), 1)
    assert rep.certified_none and not rep.any_positive and rep.scanned == len(R)


def test_obstruction_big_arc():
    rep = obstruction_scan(ArcSystem(SQRT2, TorusWindow.closed(0, Fraction(3, 5), 256)), IntegerSet.interval(100), 1)
    assert rep.any_positive


def test_obstruction_squares_small_arc():
    D = IntegerSet.from_elements((r * r for r in range(1, 1001)), 10**6)
    arc = TorusWindow.closed(0, Fraction(1, 100), 256)
    rep = obstruction_scan(ArcSystem(SQRT2, arc), D, 1)
    assert rep.any_positive
    # direct scan oracle: some square r^2 has {r^2 sqrt2} within 1/100 of 0
    assert any(
        min(float(x), 1 - float(x)) < 0.01
        for x in (frac_poly_eval(IntegerPolynomial.monomial(2), SQRT2, r) for r in range(1, 1001))
    )


def test_obstruction_empty_rejected():
    with pytest.raises(ValueError):
        obstruction_scan(ArcSystem(SQRT2, TorusWindow.closed(0, Fraction(1, 8), 256)), [], 1)


@pytest.mark.parametrize(
    "recipe,image",
    [(recipe_thm_A([2], SQRT2), lambda r: r * r), (recipe_thm_B(2, [1], SQRT2), lambda r: r * r + r)],
    ids=["A", "B"],
)
def test_obstruction_soundness(recipe, image):
    N = 30_000
    arc = TorusWindow.closed(0, Fraction(1, 8), 256)
    sys = ArcSystem(SQRT2, arc)
    R = build_set(recipe, N)
    D = IntegerSet.from_elements((image(r) for r in R if image(r) <= N), N)
    rep = obstruction_scan(sys, D, 1)
    assert rep.certified_none
    lam = build_set(recipe_bohr(SQRT2, arc), N)
    assert witness_search(WitnessQuery(lam, D, 1)) is None


# -- extraction chain ------------------------------------------------------------------------


def test_powers_extraction_exact_eighth():
    alpha = angle_from_fraction(Fraction(1, 8), 64)
    ext = powers_extraction(alpha, EPS, Witness(8, 8, (8, 16, 24)), IntegerPolynomial((0, 1, 1)))
    assert ext.certified
    assert ext.values["r_alpha"].to_fraction() == 0 and ext.values["r2_alpha"].to_fraction() == 0


def test_powers_extraction_pipeline():
    N = 10**5
    eps = angle_from_fraction(Fraction(1, 10), 64)
    lam = build_set(extraction_lambda(SQRT2, eps, N), N)
    got = 0
    for w in iter_witnesses(lam, range(1, 5000), 2):
        ext = powers_extraction(SQRT2, eps, w, IntegerPolynomial((0, 1, 1)))
        assert ext.certified, ext.reason
        # direct fractional parts at r, independent of the differencing
        for p in (IntegerPolynomial.monomial(1), IntegerPolynomial.monomial(2)):
            v = float(frac_poly_eval(p, SQRT2, w.r))
            assert min(v, 1 - v) <= 0.05
        got += 1
        if got == 10:
            break
    assert got > 0


def test_powers_extraction_identities():
    N = 10**5
    lam = build_set(extraction_lambda(SQRT2, EPS, N), N)
    for w in list(iter_witnesses(lam, range(1, 3000), 2))[:20]:
        ext = powers_extraction(SQRT2, EPS, w, IntegerPolynomial((0, 1, 1)))
        ra = ext.values["r_alpha"]
        r2a = ext.values["r2_alpha"]
        for got, p in ((ra, IntegerPolynomial.monomial(1)), (r2a, IntegerPolynomial.monomial(2))):
            direct = frac_poly_eval(p, SQRT2, w.r).with_bits(got.frac_bits)
            d = (got.mantissa - direct.mantissa) % got.modulus
            assert min(d, got.modulus - d) <= got.err_ulps + direct.err_ulps


def test_powers_extraction_rejects_random_witness():
    ext = powers_extraction(SQRT2, EPS, Witness(12345, 678, (12345, 13023, 13701)), IntegerPolynomial((0, 1, 1)))
    assert not ext.certified and ext.reason


def test_lemma1_rational_witness():
    alpha = angle_from_fraction(Fraction(1, 4), 64)
    beta = angle_from_fraction(Fraction(1, 8), 64)
    # beta' = 1/16; [n/4] n / 16 and n / 16 vanish mod 1 for n = 64, 128, 192
    ext = lemma1_extraction(alpha, beta, EPS, Witness(64, 64, (64, 128, 192)))
    assert ext.certified, ext.reason
    assert ext.values["main"].to_fraction() == 0


def test_lemma1_pipeline_square_free():
    N = 10**6
    a_int, alpha = sqrt_real(2, 256)
    lam = build_set(lemma1_lambda(alpha, SQRT3, EPS, a_int), N)

    def square_free(r):
        return all(r % (p * p) for p in range(2, int(r**0.5) + 1))

    w = next(w for w in iter_witnesses(lam, range(1, N), 2) if square_free(w.r))
    ext = lemma1_extraction(alpha, SQRT3, EPS, w, a_int)
    assert ext.certified, ext.reason
    # direct {[r alpha] r beta} from the exact floor
    fr = (w.r * (a_int * (1 << 256) + alpha.mantissa)) >> 256
    v = (fr * w.r * SQRT3.mantissa % (1 << 256)) / 2**256
    assert min(v, 1 - v) <= 0.2


def test_lemma1_counterexample_set_fails():
    N = 20_000
    a_int, alpha = sqrt_real(2, 256)
    R = build_set(recipe_counterexample(alpha, SQRT3, a_int), N)
    # members of R have {[r alpha] r beta} in [1/4, 3/4], so no certificate can hold for them
    witnesses = list(iter_witnesses(R, range(1, 200), 2))[:20]
    assert witnesses
    for w in witnesses:
        try:
            ext = lemma1_extraction(alpha, SQRT3, EPS, w, a_int)
        except PrecisionError:
            continue
        assert not ext.certified


@settings(max_examples=200, deadline=None)
@given(st.integers(-(2**40), 2**40), st.integers(1, 2**40), st.integers(1, 2**20), st.integers(1, 2**20))
def test_lemma1_identity_exact(am, bm, m, r):
    # exact dyadic alpha, beta: the floor expansion must always match, certified or not
    alpha = Angle(am % (1 << 48), 48, 0)
    beta = Angle(bm % (1 << 48), 48, 0)
    ext = lemma1_extraction(alpha, beta, EPS, Witness(m, r, (m, m + r, m + 2 * r)))
    assert ext.reason != "A + C - 2B does not match the floor expansion"


# -- powers2 -------------------------------------------------------------------------


def test_powers2_zero_alpha():
    R = IntegerSet.from_elements([5, 9, 11], 20)
    assert powers2_check(R, (1, 2), angle_from_fraction(0, 8), EPS) == 5


def test_powers2_finds_r():
    eps = angle_from_fraction(Fraction(1, 100), 64)
    r = powers2_check(IntegerSet.interval(10**5), (1, 2), SQRT2, eps)
    assert r is not None
    v = float(frac_poly_eval(IntegerPolynomial((0, 1, 1)), SQRT2, r))
    assert min(v, 1 - v) <= 0.01
    assert all(
        min(x, 1 - x) > 0.01
        for x in (float(frac_poly_eval(IntegerPolynomial((0, 1, 1)), SQRT2, s)) for s in range(1, r))
    )


def test_powers2_thm_C_set_avoids_window():
    from recurlab.setlab import recipe_thm_C

    R = build_set(recipe_thm_C([(1, 2)], [SQRT2]), 10**5)
    assert powers2_check(R, (1, 2), SQRT2, EPS) is None


# -- uniformity ------------------------------------------------------------------------


def test_uniformity_full_interval():
    N = 1000
    prof = uniformity_profile([IntegerSet.interval(N)], [IntegerPolynomial.monomial(1)], 5)
    assert prof.rows[0]["max_ratio"] == pytest.approx((N - 1) / N)


def test_uniformity_evens():
    N = 1000
    evens = IntegerSet.from_elements(range(2, N + 1, 2), N)
    prof = uniformity_profile([evens], [IntegerPolynomial.monomial(1), IntegerPolynomial.monomial(1, 2)], 10)
    # exhaustive: n = 2 gives |{m even : m + 2, m + 4 <= N}| = 498
    assert prof.rows[0]["argmax_n"] == 2
    assert prof.rows[0]["max_count"] == 498


def test_uniformity_density_precondition():
    with pytest.raises(ValueError):
        uniformity_profile([IntegerSet.from_elements([1], 100)], [IntegerPolynomial.monomial(1)], 3, Fraction(1, 2))


def test_uniformity_random_and_bohr_family():
    N = 10**5
    fam = random_family(2024, 50, N) + bohr_family(
        [angle_from_quadratic_irrational(d, 256) for d in (2, 3, 5, 6, 7, 8, 10, 11, 12, 13)],
        TorusWindow.closed(0, Fraction(1, 2)),
        N,
    )
    prof = uniformity_profile(fam, [IntegerPolynomial.monomial(2)], 100, Fraction(2, 5))
    assert len(prof.rows) == 60 and prof.family_min > 0
    assert "empirical" in prof.label


def test_uniformity_matches_exhaustive_small():
    N = 300
    fam = random_family(5, 4, N)
    u = [IntegerPolynomial.monomial(2)]
    prof = uniformity_profile(fam, u, 10)
    for lam, row in zip(fam, prof.rows):
        members = set(lam)
        best = max(sum(1 for m in members if m + n * n in members) for n in range(1, 11))
        assert row["max_count"] == best


def test_random_family_is_seeded():
    a = random_family(9, 3, 500)
    b = random_family(9, 3, 500)
    assert [s.bits for s in a] == [s.bits for s in b]
    assert random_family(10, 1, 500)[0].bits != a[0].bits
