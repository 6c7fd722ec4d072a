"""Command-line experiment driver.

Every subcommand reads one flat ``key = value`` config file and writes JSON
lines, starting with a header that echoes the whole config, its hash, the
precision in force and the standing assertions.  Output bytes depend only on
the config: ``--threads`` changes speed, nothing else.

Exit status: 0 success, 1 config error, 2 precision abort.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import __version__
from ._parallel import DEFAULT_CHUNK
from .affine import TorusBox, TorusPoint, UnipotentAffineMap, Weight, factorization_check, read_map
from .angle import (
    Angle,
    GeneralizedQuadratic,
    GQStream,
    GQTerm,
    IntegerPolynomial,
    PolyStream,
    GUARD_BITS,
    PrecisionError,
    angle_from_fraction,
    sqrt_real,
)
from .equidist import (
    DEFAULT_LADDER,
    dlim_estimate,
    main2_condition_i_check,
    running_weyl_averages,
    star_discrepancy,
    weyl_ladder,
)
from .recurrence import (
    COUNT_ALL,
    FIRST,
    ArcSystem,
    WitnessQuery,
    bohr_family,
    extraction_lambda,
    iter_witnesses,
    lemma1_extraction,
    lemma1_lambda,
    obstruction_scan,
    powers_extraction,
    random_family,
    uniformity_profile,
    witness_search,
)
from .setlab import (
    IntegerSet,
    SetRecipe,
    TorusWindow,
    build_set,
    dumps_set,
    load_set,
    power_image,
    recipe_bohr,
    recipe_counterexample,
    recipe_explicit,
    recipe_thm_A,
    recipe_thm_B,
    recipe_thm_C,
)
from . import suites

SURROGATE_NOTE = (
    "all irrational parameters are truncated dyadic surrogates; results concern those surrogates at finite horizon"
)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"config line {line}: {message}" if line else f"config: {message}")
        self.line = line


@dataclass
class ExperimentConfig:
    """Flat ``key = value`` settings with the line each key came from."""

    values: dict[str, str]
    lines: dict[str, int] = field(default_factory=dict)
    text: str = ""

    @classmethod
    def parse(cls, text: str) -> ExperimentConfig:
        values: dict[str, str] = {}
        lines: dict[str, int] = {}
        for i, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", i)
            key, _, value = (s.strip() for s in line.partition("="))
            if not key or not key.replace("_", "").isalnum():
                raise ConfigError(f"bad key {key!r}", i)
            if key in values:
                raise ConfigError(f"duplicate key {key!r} (first on line {lines[key]})", i)
            values[key] = value
            lines[key] = i
        if "experiment" not in values:
            raise ConfigError("missing required key 'experiment'")
        return cls(values, lines, text)

    @property
    def digest(self) -> str:
        canon = "\n".join(f"{k}={self.values[k]}" for k in sorted(self.values))
        return hashlib.sha256(canon.encode()).hexdigest()

    def _fail(self, key: str, msg: str) -> ConfigError:
        return ConfigError(f"{key}: {msg}", self.lines.get(key))

    def has(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default

    def _convert(self, key: str, default, fn: Callable):
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing required key {key!r}")
            return default
        try:
            return fn(self.values[key])
        except (ValueError, ZeroDivisionError) as exc:
            raise self._fail(key, str(exc)) from None

    def int(self, key: str, default: int | None = None) -> int:
        return self._convert(key, default, int)

    def ints(self, key: str, default: list[int] | None = None) -> list[int]:
        return self._convert(key, default, lambda v: [int(x) for x in v.split(",") if x.strip()])

    def fraction(self, key: str, default: Fraction | None = None) -> Fraction:
        return self._convert(key, default, Fraction)

    def vectors(self, key: str, default=None) -> list[tuple[int, ...]]:
        return self._convert(
            key, default, lambda v: [tuple(int(x) for x in part.split("-")) for part in v.split(";") if part.strip()]
        )

    @property
    def frac_bits(self) -> int:
        bits = self.int("frac_bits", 256)
        if bits < 1:
            raise self._fail("frac_bits", "must be positive")
        return bits

    def real(self, key: str, default: str | None = None) -> tuple[int, Angle]:
        text = self.get(key, default)
        try:
            return parse_real(text, self.frac_bits)
        except ValueError as exc:
            raise self._fail(key, str(exc)) from None

    def angle(self, key: str, default: str | None = None) -> Angle:
        return self.real(key, default)[1]

    def reals(self, key: str, default: str | None = None) -> list[tuple[int, Angle]]:
        text = self.get(key, default)
        try:
            return [parse_real(p, self.frac_bits) for p in text.split(",") if p.strip()]
        except ValueError as exc:
            raise self._fail(key, str(exc)) from None

    def window(self, key: str, default: str | None = None) -> TorusWindow:
        text = self.get(key, default)
        try:
            return parse_window(text, self.frac_bits)
        except ValueError as exc:
            raise self._fail(key, str(exc)) from None

    def ladder(self) -> list[int]:
        if self.has("N_ladder"):
            return sorted(self.ints("N_ladder"))
        return [self.int("N")]


def parse_real(text: str, frac_bits: int) -> tuple[int, Angle]:
    """``sqrt:<d>``, a rational like ``1/3`` or ``0.25``, or a serialized angle ``<hex>:<bits>:<err>``."""
    text = text.strip()
    if text.startswith("sqrt:"):
        return sqrt_real(int(text[5:]), frac_bits)
    if text.count(":") == 2:
        return 0, Angle.parse(text)
    q = Fraction(text)
    whole = q.numerator // q.denominator
    return whole, angle_from_fraction(q - whole, frac_bits)


def parse_window(text: str, frac_bits: int) -> TorusWindow:
    if text.strip() in ("full", "T"):
        return TorusWindow.whole()
    lo, hi = (Fraction(p) for p in text.split(","))
    return TorusWindow.closed(lo, hi, frac_bits)


# ---------------------------------------------------------------------------
# output


class Output:
    def __init__(self, cfg: ExperimentConfig, command: str, assertions: list[str] | None = None):
        self.buf = io.StringIO()
        header = {
            "tool": "recurlab",
            "version": __version__,
            "command": command,
            "experiment": cfg.values["experiment"],
            "config": dict(sorted(cfg.values.items())),
            "config_hash": cfg.digest,
            "frac_bits": cfg.frac_bits,
            "chunk_size": cfg.int("chunk_size", DEFAULT_CHUNK),
            "assertions": [SURROGATE_NOTE] + (assertions or []),
        }
        self.emit({"header": header})

    def emit(self, obj: dict) -> None:
        self.buf.write(json.dumps(obj, sort_keys=True, default=_jsonable) + "\n")

    def text(self) -> str:
        return self.buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, Fraction):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------------------
# config -> objects


def recipe_from_config(cfg: ExperimentConfig) -> SetRecipe:
    kind = cfg.get("recipe")
    if kind == "A":
        return recipe_thm_A(cfg.ints("bad_exponents"), cfg.angle("beta"))
    if kind == "B":
        return recipe_thm_B(cfg.int("ell"), cfg.ints("bad_exponents"), cfg.angle("beta"))
    if kind == "C":
        return recipe_thm_C(cfg.vectors("bad_vectors"), [a for _, a in cfg.reals("alphas")])
    if kind == "main2":
        a_int, alpha = cfg.real("alpha")
        return recipe_counterexample(alpha, cfg.angle("beta"), a_int)
    if kind == "bohr":
        return recipe_bohr(cfg.angle("theta"), cfg.window("window"), cfg.int("exponent", 1))
    if kind == "explicit":
        return recipe_explicit(cfg.ints("elements"))
    raise ConfigError(f"unknown recipe {kind!r}", cfg.lines.get("recipe"))


def _recipe_checked(cfg: ExperimentConfig) -> SetRecipe:
    try:
        return recipe_from_config(cfg)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), cfg.lines.get("recipe")) from None


def _set_from_config(cfg: ExperimentConfig, key: str, N: int, threads: int) -> IntegerSet:
    """``all``, ``file:<path>``, ``bohr`` (keys <key>_theta, <key>_window) or ``recipe``/``recipe_power:<k>``."""
    source = cfg.get(key)
    chunk = cfg.int("chunk_size", DEFAULT_CHUNK)
    if source == "all":
        return IntegerSet.interval(N)
    if source.startswith("file:"):
        try:
            s = load_set(source[5:])
        except (OSError, ValueError) as exc:
            raise cfg._fail(key, str(exc)) from None
        return s.restrict(min(N, s.horizon)) if s.horizon > N else s
    if source == "bohr":
        return build_set(recipe_bohr(cfg.angle(f"{key}_theta"), cfg.window(f"{key}_window")), N, chunk, threads)
    if source == "squares":
        return IntegerSet.from_elements((r * r for r in range(1, int(N**0.5) + 2)), N)
    if source == "recipe":
        return build_set(_recipe_checked(cfg), N, chunk, threads)
    if source.startswith("recipe_power:"):
        k = source.split(":", 1)[1]
        if not k.isdigit() or int(k) < 1:
            raise cfg._fail(key, f"bad power in {source!r}")
        k = int(k)
        return power_image(build_set(_recipe_checked(cfg), N, chunk, threads), k, N)
    raise cfg._fail(key, f"unknown set source {source!r}")


def _sequence_stream(cfg: ExperimentConfig):
    kind = cfg.get("sequence")
    if kind == "poly":
        p = IntegerPolynomial(tuple(cfg.ints("coeffs")))
        return PolyStream(p, cfg.angle("alpha"), cfg.int("n_start", 1))
    if kind == "gq":
        terms = ()
        if cfg.has("alpha"):
            a_int, alpha = cfg.real("alpha")
            terms = (GQTerm(alpha, cfg.angle("beta"), a_int),)
        zero = "0"
        q = GeneralizedQuadratic(terms, cfg.angle("gamma", zero), cfg.angle("delta", zero), cfg.angle("c", zero))
        return GQStream(q, cfg.int("n_start", 1))
    raise cfg._fail("sequence", f"unknown sequence {kind!r}; expected poly or gq")


# ---------------------------------------------------------------------------
# commands


def cmd_build_set(cfg: ExperimentConfig, threads: int, out_path: str | None) -> str:
    recipe = _recipe_checked(cfg)
    N = cfg.int("N")
    s = build_set(recipe, N, cfg.int("chunk_size", DEFAULT_CHUNK), threads)
    if out_path:
        with open(out_path, "w") as fp:
            fp.write(dumps_set(s))
    out = Output(cfg, "build-set", list(recipe.assertions))
    out.emit({"N": N, "size": len(s), "density": s.density(), "density_exact": str(s.density())})
    return out.text()


def cmd_weyl(cfg: ExperimentConfig, threads: int) -> str:
    freqs = cfg.ints("freqs", [1])
    ladder = cfg.ladder()
    out = Output(cfg, "weyl")
    if cfg.get("sequence") == "main2":
        a_int, alpha = cfg.real("alpha")
        R = build_set(recipe_counterexample(alpha, cfg.angle("beta"), a_int), ladder[-1],
                      cfg.int("chunk_size", DEFAULT_CHUNK), threads)
        reports = main2_condition_i_check(R, cfg.angle("gamma"), cfg.angle("delta"), ladder[-1], freqs, ladder)
    else:
        if 0 in freqs:
            raise cfg._fail("freqs", "frequency 0 is excluded")
        reports = weyl_ladder(_sequence_stream(cfg), ladder, freqs)
    for rep in reports:
        for line in rep.json_lines():
            out.emit(line)
    return out.text()


def cmd_discrepancy(cfg: ExperimentConfig, threads: int) -> str:
    out = Output(cfg, "discrepancy")
    for n in cfg.ladder():
        out.emit(star_discrepancy(_sequence_stream(cfg), n).json_line())
    return out.text()


def cmd_dlim(cfg: ExperimentConfig, threads: int) -> str:
    """D-lim of the running Weyl averages ``S_n`` of the configured sequence."""
    ladder = cfg.ladder()
    freq = cfg.int("freq", 1)
    avgs = running_weyl_averages(_sequence_stream(cfg), ladder[-1], freq)
    rep = dlim_estimate(avgs, ladder[-1], ladder)
    out = Output(cfg, "dlim")
    for n, v in rep.ladder:
        out.emit({"N": n, "freq": freq, "dlim": v})
    return out.text()


def cmd_witness(cfg: ExperimentConfig, threads: int) -> str:
    N = cfg.int("N")
    lam = _set_from_config(cfg, "lambda", N, threads)
    diffs = _set_from_config(cfg, "differences", N, threads)
    mode = cfg.get("mode", FIRST)
    if mode not in (FIRST, COUNT_ALL):
        raise cfg._fail("mode", f"expected {FIRST} or {COUNT_ALL}")
    res = witness_search(WitnessQuery(lam, diffs, cfg.int("ell", 1), mode), threads)
    out = Output(cfg, "witness")
    if mode == FIRST:
        out.emit({"witness": None if res is None else res.to_json()})
    else:
        for r, c in res.items():
            out.emit({"r": r, "count": c})
    return out.text()


def cmd_obstruct(cfg: ExperimentConfig, threads: int) -> str:
    N = cfg.int("N")
    sys_ = ArcSystem(cfg.angle("beta"), cfg.window("arc"))
    ell = cfg.int("ell", 1)
    if cfg.has("differences_power"):
        R = build_set(_recipe_checked(cfg), N, cfg.int("chunk_size", DEFAULT_CHUNK), threads)
        k = cfg.int("differences_power")
        D = (r**k for r in R)
    else:
        D = _set_from_config(cfg, "differences", N, threads)
    rep = obstruction_scan(sys_, D, ell)
    out = Output(cfg, "obstruct")
    out.emit(rep.to_json())
    return out.text()


def cmd_extract(cfg: ExperimentConfig, threads: int) -> str:
    N = cfg.int("N")
    eps = cfg.angle("eps", "1/5")
    kind = cfg.get("kind", "powers")
    chunk = cfg.int("chunk_size", DEFAULT_CHUNK)
    max_r = cfg.int("max_r", N // 2)
    out = Output(cfg, "extract")
    if kind == "powers":
        alpha = cfg.angle("alpha")
        lam = build_set(extraction_lambda(alpha, eps, N), N, chunk, threads)
        p = IntegerPolynomial((0, 1, 1))
        for w in iter_witnesses(lam, range(1, max_r + 1), 2):
            out.emit({"witness": w.to_json(), **powers_extraction(alpha, eps, w, p).to_json()})
    elif kind == "lemma1":
        a_int, alpha = cfg.real("alpha")
        beta = cfg.angle("beta")
        lam = build_set(lemma1_lambda(alpha, beta, eps, a_int), N, chunk, threads)
        for w in iter_witnesses(lam, range(1, max_r + 1), 2):
            out.emit({"witness": w.to_json(), **lemma1_extraction(alpha, beta, eps, w, a_int).to_json()})
    else:
        raise cfg._fail("kind", "expected powers or lemma1")
    return out.text()


def cmd_uniformity(cfg: ExperimentConfig, threads: int) -> str:
    N = cfg.int("N")
    seed = cfg.int("seed", 0)
    family = random_family(seed, cfg.int("random_count", 0), N, float(cfg.fraction("random_density", Fraction(1, 2))))
    thetas = [a for _, a in cfg.reals("bohr_thetas", "")] if cfg.has("bohr_thetas") else []
    if thetas:
        family += bohr_family(thetas, cfg.window("bohr_window", "0,1/2"), N)
    if not family:
        raise ConfigError("empty family: set random_count or bohr_thetas")
    us = [IntegerPolynomial(tuple(int(c) for c in part.split(","))) for part in cfg.get("u").split(";")]
    prof = uniformity_profile(family, us, cfg.int("N0"), cfg.fraction("min_density", Fraction(0)), threads)
    out = Output(cfg, "uniformity", ["family chosen by the experimenter; estimate is empirical"])
    for row in prof.rows:
        out.emit(row)
    out.emit({"family_min": prof.family_min, "label": prof.label})
    return out.text()


def _affine_map(cfg: ExperimentConfig) -> UnipotentAffineMap:
    if cfg.has("map_file"):
        try:
            with open(cfg.get("map_file")) as fp:
                return read_map(fp)
        except (OSError, ValueError) as exc:
            raise cfg._fail("map_file", str(exc)) from None
    try:
        A = tuple(tuple(int(v) for v in row.split(",")) for row in cfg.get("matrix").split(";"))
        b = tuple(a for _, a in cfg.reals("b"))
        return UnipotentAffineMap(A, b, cfg.int("map_ell"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise cfg._fail("matrix", str(exc)) from None


def cmd_affine(cfg: ExperimentConfig, threads: int) -> str:
    T = _affine_map(cfg)
    x = TorusPoint(tuple(a for _, a in cfg.reals("x", ",".join(["0"] * T.d))))
    box = TorusBox(tuple(parse_window(w, cfg.frac_bits) for w in cfg.get("box").split(";")))
    if x.d != T.d or len(box.windows) != T.d:
        raise cfg._fail("box", f"need {T.d} coordinates")
    weights = []
    if cfg.has("weight_polys"):
        polys = [IntegerPolynomial(tuple(int(c) for c in p.split(","))) for p in cfg.get("weight_polys").split(";")]
        alphas = [a for _, a in cfg.reals("weight_alphas")]
        wins = [parse_window(w, cfg.frac_bits) for w in cfg.get("weight_windows").split(";")]
        if not len(polys) == len(alphas) == len(wins):
            raise cfg._fail("weight_polys", "weight_polys, weight_alphas, weight_windows must have equal length")
        weights = [Weight(p, a, w) for p, a, w in zip(polys, alphas, wins)]
    rows = factorization_check(T, x, box, cfg.int("k", 1), weights, cfg.int("ell", 1), cfg.ladder())
    out = Output(cfg, "affine", ["caller asserts the weight polynomials satisfy the independence condition"])
    for row in rows:
        out.emit(row.to_json())
    return out.text()


def cmd_suite(cfg: ExperimentConfig, threads: int, name: str | None = None) -> str:
    name = name or cfg.get("suite")
    N = cfg.int("N")
    chunk = cfg.int("chunk_size", DEFAULT_CHUNK)
    eps = cfg.angle("eps", "1/5")
    lam_theta = cfg.angle("lambda_theta", "sqrt:2")
    lam_window = cfg.window("lambda_window", "0,3/10")
    assertions = []
    if name == "A":
        records = suites.suite_A(
            cfg.ints("bad_exponents"), cfg.ints("good_exponents"), cfg.angle("beta"), N,
            cfg.window("arc", "0,1/8"), lam_theta, lam_window, chunk, threads,
        )
    elif name == "B":
        records = suites.suite_B(
            cfg.int("ell", 2), cfg.ints("bad_exponents"), cfg.ints("good_exponents"), cfg.angle("beta"), eps, N,
            cfg.angle("lambda_theta", "sqrt:5"), lam_window, chunk, threads, cfg.int("max_r", N // 2),
        )
    elif name == "C":
        assertions.append("asserted: 1, alpha_1, ..., alpha_s rationally independent")
        records = suites.suite_C(
            cfg.vectors("bad_vectors"), cfg.vectors("good_vectors"), [a for _, a in cfg.reals("alphas")], eps, N,
            cfg.angle("lambda_theta", "sqrt:5"), lam_window, chunk, threads,
        )
    elif name == "main2":
        assertions.append("asserted: 1, alpha, beta rationally independent")
        a_int, alpha = cfg.real("alpha", "sqrt:2")
        records = suites.suite_main2(
            alpha, cfg.angle("beta", "sqrt:3"), cfg.angle("gamma", "sqrt:5"), cfg.angle("delta", "sqrt:7"), eps, N,
            a_int, cfg.ints("residues", [2, 3, 5, 7]),
            cfg.ints("N_ladder", list(DEFAULT_LADDER)), chunk, threads, cfg.int("max_r", N // 2),
        )
    else:
        raise ConfigError(f"unknown suite {name!r}; expected A, B, C or main2", cfg.lines.get("suite"))
    out = Output(cfg, f"suite {name}", assertions)
    for rec in records:
        out.emit(rec)
    return out.text()


COMMANDS = {
    "build-set": cmd_build_set,
    "weyl": cmd_weyl,
    "discrepancy": cmd_discrepancy,
    "dlim": cmd_dlim,
    "witness": cmd_witness,
    "obstruct": cmd_obstruct,
    "extract": cmd_extract,
    "uniformity": cmd_uniformity,
    "affine": cmd_affine,
    "suite": cmd_suite,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="recurlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"recurlab {__version__}")
    _global_flags(ap, None)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "suite":
            p.add_argument("name", nargs="?", choices=["A", "B", "C", "main2"])
        # accepted after the subcommand too; SUPPRESS keeps a flag given before it
        _global_flags(p, argparse.SUPPRESS)
    return ap


def _global_flags(p: argparse.ArgumentParser, default) -> None:
    p.add_argument("--config", default=default, help="experiment config (key = value lines)")
    p.add_argument("--out", default=default, help="output path (default: stdout; build-set writes the set file here)")
    p.add_argument("--threads", type=int, default=1 if default is None else default,
                   help="worker processes; never affects output bytes")


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if not args.config:
        ap.error("--config is required")
    if args.threads < 1:
        ap.error("--threads must be >= 1")
    try:
        with open(args.config) as fp:
            cfg = ExperimentConfig.parse(fp.read())
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "build-set":
            text = cmd_build_set(cfg, args.threads, args.out)
            sys.stdout.write(text)
            return 0
        if args.command == "suite":
            text = cmd_suite(cfg, args.threads, args.name)
        else:
            text = COMMANDS[args.command](cfg, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PrecisionError as exc:
        # without a computed bound, one more guard block is the smallest sound retry
        need = exc.required_bits or cfg.frac_bits + GUARD_BITS
        print(f"precision error: {exc}; minimum frac_bits = {need}", file=sys.stderr)
        return 2
    if args.out:
        with open(args.out, "w") as fp:
            fp.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
