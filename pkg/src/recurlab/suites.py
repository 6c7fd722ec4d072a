"""Theorem suites: build a construction, then gather positive and negative evidence.

Each suite returns a list of JSON-ready records.  Every verdict is about the
finite horizon and the dyadic surrogates in use:

* ``bad-certificate``: an exact obstruction holds for every difference up to the horizon;
* ``good-evidence``: a progression witness was found;
* ``not-found``: neither, at this horizon.
"""
from __future__ import annotations

from typing import Sequence

from .angle import Angle, IntegerPolynomial
from .equidist import DEFAULT_LADDER, ladder_holds, main2_condition_i_check
from .recurrence import (
    ArcSystem,
    WitnessQuery,
    extraction_lambda,
    iter_witnesses,
    lemma1_extraction,
    lemma1_lambda,
    obstruction_scan,
    pattern_search,
    powers2_check,
    powers_extraction,
    witness_search,
)
from .setlab import (
    IntegerSet,
    TorusWindow,
    build_set,
    density_in_residue,
    power_image,
    power_values,
    recipe_bohr,
    recipe_counterexample,
    recipe_thm_A,
    recipe_thm_B,
    recipe_thm_C,
)

GOOD = "good-evidence"
BAD = "bad-certificate"
NOT_FOUND = "not-found"


def _set_summary(R: IntegerSet) -> dict:
    return {"horizon": R.horizon, "size": len(R), "density": float(R.density())}


def suite_A(
    bad: Sequence[int],
    good: Sequence[int],
    beta: Angle,
    N: int,
    arc: TorusWindow,
    lam_theta: Angle,
    lam_window: TorusWindow,
    chunk_size: int,
    threads: int = 1,
) -> list[dict]:
    """Power-window set for exponents ``bad``: obstruction for b in bad, witnesses for g in good."""
    R = build_set(recipe_thm_A(bad, beta), N, chunk_size, threads)
    records = [{"suite": "A", "part": "construction", **_set_summary(R)}]
    sys = ArcSystem(beta, arc)
    lam_rot = build_set(recipe_bohr(beta, arc), N, chunk_size, threads)
    for b in bad:
        rep = obstruction_scan(sys, (r**b for r in R), ell=1)
        hit = witness_search(WitnessQuery(lam_rot, power_image(R, b, N), 1))
        records.append(
            {
                "suite": "A",
                "exponent": b,
                "direction": BAD if rep.certified_none and hit is None else NOT_FOUND,
                "statistic": {"obstruction": rep.to_json(), "rotation_set_witness": None if hit is None else hit.to_json()},
            }
        )
    lam = build_set(recipe_bohr(lam_theta, lam_window), N, chunk_size, threads)
    for g in good:
        w = witness_search(WitnessQuery(lam, power_image(R, g, N), 1))
        records.append(
            {
                "suite": "A",
                "exponent": g,
                "direction": GOOD if w else NOT_FOUND,
                "statistic": {"witness": None if w is None else w.to_json(), "lambda_size": len(lam)},
            }
        )
    return records


def _extraction_chain(beta: Angle, eps: Angle, N: int, bad_diffs: IntegerSet, R: IntegerSet, b: int,
                      chunk_size: int, threads: int, max_r: int) -> dict:
    lam = build_set(extraction_lambda(beta, eps, N), N, chunk_size, threads)
    direct = witness_search(WitnessQuery(lam, bad_diffs, 2))
    results = [powers_extraction(beta, eps, w, IntegerPolynomial((0, 1, 1))) for w in iter_witnesses(lam, range(1, max_r + 1), 2)]
    powers_of_R = {r**b for r in power_values(R, b, max_r)}
    certified = sum(e.certified for e in results)
    return {
        "lambda_size": len(lam),
        "witness_with_bad_difference": None if direct is None else direct.to_json(),
        "extractions": len(results),
        "certified": certified,
        "extracted_r_in_bad_set": sorted(e.r for e in results if e.r in powers_of_R),
        "ok": direct is None and certified == len(results) and not any(e.r in powers_of_R for e in results),
    }


def suite_B(
    ell: int,
    bad: Sequence[int],
    good: Sequence[int],
    beta: Angle,
    eps: Angle,
    N: int,
    lam_theta: Angle,
    lam_window: TorusWindow,
    chunk_size: int,
    threads: int = 1,
    max_r: int | None = None,
) -> list[dict]:
    """Long-power window set; extraction chain for bad exponents, 3-term witnesses for good ones."""
    if ell != 2:
        raise ValueError("the extraction chain is implemented for ell = 2 (p(n) = n^2 + n)")
    R = build_set(recipe_thm_B(ell, bad, beta), N, chunk_size, threads)
    max_r = max_r or N // 2
    records = [{"suite": "B", "part": "construction", "ell": ell, **_set_summary(R)}]
    for b in bad:
        chain = _extraction_chain(beta, eps, N, power_image(R, b, N), R, b, chunk_size, threads, max_r)
        records.append({"suite": "B", "exponent": b, "direction": BAD if chain["ok"] else NOT_FOUND, "statistic": chain})
    lam = build_set(recipe_bohr(lam_theta, lam_window), N, chunk_size, threads)
    for g in good:
        w = witness_search(WitnessQuery(lam, power_image(R, g, N), ell))
        records.append(
            {
                "suite": "B",
                "exponent": g,
                "direction": GOOD if w else NOT_FOUND,
                "statistic": {"witness": None if w is None else w.to_json(), "lambda_size": len(lam)},
            }
        )
    return records


def suite_C(
    bad_vectors: Sequence[Sequence[int]],
    good_vectors: Sequence[Sequence[int]],
    alphas: Sequence[Angle],
    eps: Angle,
    N: int,
    lam_theta: Angle,
    lam_window: TorusWindow,
    chunk_size: int,
    threads: int = 1,
) -> list[dict]:
    """Independent-vector window set; powers2 obstruction for bad vectors, pattern witnesses for good ones."""
    R = build_set(recipe_thm_C(bad_vectors, alphas), N, chunk_size, threads)
    records = [{"suite": "C", "part": "construction", **_set_summary(R)}]
    for v, a in zip(bad_vectors, alphas):
        r = powers2_check(R, v, a, eps)
        records.append(
            {
                "suite": "C",
                "exponent": list(v),
                "direction": BAD if r is None else NOT_FOUND,
                "statistic": {"least_r_near_zero": r, "eps": float(eps)},
            }
        )
    lam = build_set(recipe_bohr(lam_theta, lam_window), N, chunk_size, threads)
    for g in good_vectors:
        w = pattern_search(lam, R, lambda r, g=tuple(g): [r**a for a in g])
        records.append(
            {
                "suite": "C",
                "exponent": list(g),
                "direction": GOOD if w else NOT_FOUND,
                "statistic": {"witness": None if w is None else w.to_json(), "lambda_size": len(lam)},
            }
        )
    return records


def suite_main2(
    alpha: Angle,
    beta: Angle,
    gamma: Angle,
    delta: Angle,
    eps: Angle,
    N: int,
    alpha_int: int = 0,
    residues: Sequence[int] = (2, 3, 5, 7),
    ladder: Sequence[int] = DEFAULT_LADDER,
    chunk_size: int = 1 << 16,
    threads: int = 1,
    max_r: int | None = None,
) -> list[dict]:
    """The bracket-quadratic counterexample and its three properties at horizon N."""
    R = build_set(recipe_counterexample(alpha, beta, alpha_int), N, chunk_size, threads)
    records = [{"suite": "main2", "part": "construction", **_set_summary(R)}]
    rungs = sorted({n for n in ladder if n <= N} | {N})
    reps = main2_condition_i_check(R, gamma, delta, N, (1, 2, 3), rungs)
    mags = [rep.mag(1) for rep in reps]
    records.append(
        {
            "suite": "main2",
            "part": "i",
            "direction": GOOD if mags[-1] <= 0.05 and ladder_holds(mags, 0.2) else NOT_FOUND,
            "statistic": {"ladder": [{"N": rep.N, "count": rep.extra["count"], "mags": dict(rep.harmonics)} for rep in reps]},
        }
    )
    res = {d: float(density_in_residue(R, d)) for d in residues}
    records.append(
        {
            "suite": "main2",
            "part": "ii",
            "direction": GOOD if all(v > 0 for v in res.values()) else NOT_FOUND,
            "statistic": {"density": float(R.density()), "residue_densities": {str(d): v for d, v in res.items()}},
        }
    )
    lam = build_set(lemma1_lambda(alpha, beta, eps, alpha_int), N, chunk_size, threads)
    direct = witness_search(WitnessQuery(lam, R.restrict(N // 2 or 1) if N > 1 else R, 2))
    max_r = max_r or N // 2
    results = [lemma1_extraction(alpha, beta, eps, w, alpha_int) for w in iter_witnesses(lam, range(1, max_r + 1), 2)]
    certified = sum(e.certified for e in results)
    in_R = sorted(e.r for e in results if e.r in R)
    records.append(
        {
            "suite": "main2",
            "part": "iii",
            "direction": BAD if direct is None and certified == len(results) and not in_R else NOT_FOUND,
            "statistic": {
                "lambda_size": len(lam),
                "witness_with_difference_in_R": None if direct is None else direct.to_json(),
                "extractions": len(results),
                "certified": certified,
                "extracted_r_in_R": in_R,
            },
        }
    )
    return records
