"""Command-line interface.

Every subcommand writes into a fresh output directory (``--force`` to reuse
one) and leaves a ``<name>.meta.json`` sidecar beside each CSV holding the
complete resolved configuration. Exit codes: 0 success, 2 invalid input,
3 failure during computation.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from . import __version__
from .core_io import (
    CrossType,
    DataFormatError,
    interpolate_missing,
    read_dataset,
    write_dataset,
    write_sidecar,
)
from .genoprob import DEFAULT_ERROR_PROB, calc_genoprob, dump_probs
from .modelsel import (
    DEFAULT_MAX_QTL,
    DEFAULT_MIN_SPACING,
    Locus,
    QtlModel,
    fit_effects,
    profile,
    stepwise_search,
    write_effects,
    write_profiles,
)
from .power import PowerConfig, run_power_study
from .scan import (
    HKScanner,
    PermutationResult,
    ScanSummary,
    Stat,
    empirical_threshold,
    permutation_maxima,
    scan_hk,
    write_lod,
    write_perm,
    write_summary,
)
from .sim import CovarianceSpec, CovKind, LogisticQtlSpec, sim_multi_qtl, sim_single_qtl

logger = logging.getLogger("fvqtl")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
DATA_COMMANDS = ("scan", "perm", "stepwise", "profile", "fit")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def toy_paths() -> dict[str, Path]:
    """Paths of the bundled example RIL dataset (60 lines, 2 chromosomes, 12 times)."""
    base = resources.files("fvqtl") / "data" / "toy"
    return {k: Path(str(base / f"{k}.csv")) for k in ("geno", "map", "pheno")}


@dataclass
class RunConfig:
    command: str
    out: str
    force: bool = False
    seed: int = 1
    threads: int = 1
    # data input
    geno: str | None = None
    map: str | None = None
    pheno: str | None = None
    toy: bool = False
    cross: str = "ril"
    step: float = 1.0
    error_prob: float = DEFAULT_ERROR_PROB
    interpolate: bool = False
    dump_probs: bool = False
    # statistics
    stat: str = "slod"
    n_perm: int = 1000
    alpha: list = field(default_factory=lambda: [0.05])
    penalty: str | None = None
    max_qtl: int = DEFAULT_MAX_QTL
    min_spacing: float = DEFAULT_MIN_SPACING
    model: str | None = None
    qtl: list = field(default_factory=list)
    # simulation and power
    design: str = "multi"
    n: int = 162
    cov: str = "ar"
    c: float = 1.0
    noise_sd: float = 0.0
    replicates: int = 100
    n_null: int = 1000
    window: str = "15"
    null_effect: bool = False

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "RunConfig":
        names = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in vars(ns).items() if k in names})

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        if self.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        if Path(self.out).exists() and not self.force:
            raise ConfigError("out", f"{self.out} already exists (use --force to overwrite)")
        if self.command in DATA_COMMANDS:
            self._validate_data()
        if self.command in ("perm", "stepwise", "power"):
            if self.n_perm < 1:
                raise ConfigError("n_perm", "must be >= 1")
            for a in self.alpha:
                if not 0 < a <= 1:
                    raise ConfigError("alpha", f"{a} is outside (0, 1]")
        if self.command in ("stepwise", "profile", "fit") or (self.command == "power" and self.stat != "both"):
            try:
                Stat.parse(self.stat)
            except ValueError as e:
                raise ConfigError("stat", str(e)) from None
        if self.command == "stepwise":
            self.penalty_value()
            if self.max_qtl < 1:
                raise ConfigError("max_qtl", "must be >= 1")
            if self.min_spacing < 0:
                raise ConfigError("min_spacing", "must be >= 0")
        if self.command == "profile" and not self.model:
            raise ConfigError("model", "profile needs --model")
        if self.command in ("profile", "fit"):
            if self.model and not Path(self.model).is_file():
                raise ConfigError("model", f"no such file: {self.model}")
            if self.command == "fit" and not (self.model or self.qtl):
                raise ConfigError("qtl", "fit needs --model or at least one --qtl")
            for q in self.qtl:
                try:
                    Locus.parse(q)
                except ValueError:
                    raise ConfigError("qtl", f"cannot parse locus {q!r} (expected e.g. chr1@60)") from None
        if self.command in ("simulate", "power"):
            self._validate_sim()

    def _validate_data(self) -> None:
        if self.toy:
            if any((self.geno, self.map, self.pheno)):
                raise ConfigError("toy", "--toy cannot be combined with --geno/--map/--pheno")
        else:
            for name in ("geno", "map", "pheno"):
                p = getattr(self, name)
                if not p:
                    raise ConfigError(name, f"--{name} is required (or use --toy)")
                if not Path(p).is_file():
                    raise ConfigError(name, f"no such file: {p}")
        try:
            CrossType.parse(self.cross)
        except ValueError as e:
            raise ConfigError("cross", str(e)) from None
        if not (self.step >= 0 and math.isfinite(self.step)):
            raise ConfigError("step", "must be a finite number >= 0")
        if not 0 <= self.error_prob < 0.5:
            raise ConfigError("error_prob", "must lie in [0, 0.5)")

    def _validate_sim(self) -> None:
        if self.design not in ("single", "multi"):
            raise ConfigError("design", "must be 'single' or 'multi'")
        if self.n < 2:
            raise ConfigError("n", "must be >= 2")
        if self.cov not in {k.value for k in CovKind}:
            raise ConfigError("cov", f"must be one of {sorted(k.value for k in CovKind)}")
        if not self.c >= 0:
            raise ConfigError("c", "must be >= 0")
        if not self.noise_sd >= 0:
            raise ConfigError("noise_sd", "must be >= 0")
        if self.replicates < 1:
            raise ConfigError("replicates", "must be >= 1")
        if self.n_null < 1:
            raise ConfigError("n_null", "must be >= 1")
        self.window_value()
        if self.command == "power" and self.penalty not in (None, "from-perm"):
            self.penalty_map()

    # -- derived values -----------------------------------------------------

    def penalty_value(self) -> float | None:
        """Explicit stepwise penalty, or None for ``from-perm``."""
        if self.penalty in (None, "from-perm"):
            return None
        try:
            v = float(self.penalty)
        except ValueError:
            raise ConfigError("penalty", f"expected a number or 'from-perm', got {self.penalty!r}") from None
        if not v > 0:
            raise ConfigError("penalty", "must be > 0")
        return v

    def penalty_map(self) -> dict | None:
        """Power-study penalties: 'slod=1.9,mlod=3.6' or a single number for both."""
        if self.penalty in (None, "from-perm"):
            return None
        try:
            if "=" not in self.penalty:
                v = float(self.penalty)
                return {Stat.SLOD: v, Stat.MLOD: v}
            pairs = (item.split("=") for item in self.penalty.split(","))
            return {Stat.parse(k): float(v) for k, v in pairs}
        except ValueError:
            raise ConfigError("penalty", f"cannot parse {self.penalty!r}") from None

    def window_value(self) -> float | None:
        if self.window in ("chromosome", "chr"):
            return None
        try:
            w = float(self.window)
        except ValueError:
            raise ConfigError("window", "expected cM distance or 'chromosome'") from None
        if w < 0:
            raise ConfigError("window", "must be >= 0")
        return w

    def covariance(self) -> CovarianceSpec:
        kind = CovKind(self.cov)
        if kind is CovKind.AUTOREGRESSIVE:
            return CovarianceSpec.autoregressive(self.c)
        if kind is CovKind.EQUICORRELATED:
            return CovarianceSpec.equicorrelated(self.c)
        return CovarianceSpec.unstructured(self.c)

    def metadata(self) -> dict:
        return {"fvqtl_version": __version__, "config": asdict(self)}


# ---------------------------------------------------------------------------
# commands


def _load(cfg: RunConfig):
    paths = toy_paths() if cfg.toy else {"geno": cfg.geno, "map": cfg.map, "pheno": cfg.pheno}
    gmap, geno, pheno = read_dataset(paths["geno"], paths["map"], paths["pheno"], CrossType.parse(cfg.cross))
    if cfg.interpolate:
        pheno = interpolate_missing(pheno)
    elif not pheno.is_complete:
        raise ConfigError("pheno", "phenotype file has missing cells; rerun with --interpolate")
    probs = calc_genoprob(geno, gmap, grid=cfg.step, error_prob=cfg.error_prob)
    if cfg.dump_probs:
        d = Path(cfg.out) / "probs"
        d.mkdir(exist_ok=True)
        dump_probs(probs, d)
    return probs, pheno


def _written(cfg: RunConfig, *paths) -> None:
    for p in paths:
        write_sidecar(p, cfg.metadata())
        logger.info("wrote %s", p)


def cmd_scan(cfg: RunConfig) -> None:
    probs, pheno = _load(cfg)
    lods = scan_hk(probs, pheno)
    out = Path(cfg.out)
    write_lod(out / "lod.csv", lods)
    write_summary(out / "summary.csv", ScanSummary.from_lods(lods))
    _written(cfg, out / "lod.csv", out / "summary.csv")


def _perm_results(cfg: RunConfig, probs, pheno, stats) -> list[PermutationResult]:
    maxima = permutation_maxima(probs, pheno, cfg.n_perm, seed=cfg.seed, stats=stats,
                                workers=cfg.threads, scanner=HKScanner(probs))
    return [
        PermutationResult(s, maxima[s], {a: empirical_threshold(maxima[s], a) for a in cfg.alpha}, cfg.seed)
        for s in stats
    ]


def cmd_perm(cfg: RunConfig) -> None:
    probs, pheno = _load(cfg)
    res = _perm_results(cfg, probs, pheno, (Stat.SLOD, Stat.MLOD))
    p = Path(cfg.out) / "perm.csv"
    write_perm(p, res)
    _written(cfg, p)


def cmd_stepwise(cfg: RunConfig) -> None:
    probs, pheno = _load(cfg)
    stat = Stat.parse(cfg.stat)
    penalty = cfg.penalty_value()
    out = Path(cfg.out)
    if penalty is None:
        res = _perm_results(cfg, probs, pheno, (stat,))
        penalty = res[0].thresholds[cfg.alpha[0]]
        write_perm(out / "perm.csv", res)
        _written(cfg, out / "perm.csv")
        logger.info("penalty from permutations: %.4f", penalty)
    model = stepwise_search(probs, pheno, stat, penalty, cfg.max_qtl, cfg.min_spacing)
    model.write_json(out / "model.json")
    logger.info("selected %d QTL: %s", model.size, ", ".join(l.label for l in model.loci) or "none")
    written = []
    if model.size:
        write_profiles(out / "profiles.csv", profile(probs, pheno, model))
        written.append(out / "profiles.csv")
    write_effects(out / "effects.csv", fit_effects(probs, pheno, model))
    _written(cfg, out / "model.json", *written, out / "effects.csv")


def _model_from(cfg: RunConfig, default_stat: Stat) -> QtlModel:
    if cfg.model:
        try:
            return QtlModel.read_json(cfg.model)
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError("model", f"invalid model file {cfg.model}: {e}") from None
    return QtlModel(tuple(Locus.parse(q) for q in cfg.qtl), default_stat, 1.0, math.nan)


def _check_loci(cfg: RunConfig, model: QtlModel, probs) -> None:
    for l in model.loci:
        try:
            probs.chrom(l.chrom).index_of(l.pos)
        except KeyError as e:
            raise ConfigError("model" if cfg.model else "qtl", f"{l.label}: {e.args[0]}") from None


def cmd_profile(cfg: RunConfig) -> None:
    probs, pheno = _load(cfg)
    model = _model_from(cfg, Stat.parse(cfg.stat))
    _check_loci(cfg, model, probs)
    p = Path(cfg.out) / "profiles.csv"
    write_profiles(p, profile(probs, pheno, model, cfg.stat))
    _written(cfg, p)


def cmd_fit(cfg: RunConfig) -> None:
    probs, pheno = _load(cfg)
    model = _model_from(cfg, Stat.parse(cfg.stat))
    _check_loci(cfg, model, probs)
    p = Path(cfg.out) / "effects.csv"
    write_effects(p, fit_effects(probs, pheno, model))
    _written(cfg, p)


def cmd_simulate(cfg: RunConfig) -> None:
    if cfg.design == "single":
        spec = LogisticQtlSpec()
        if cfg.null_effect:
            spec = spec.null()
        sim = sim_single_qtl(spec, cfg.covariance(), cfg.n, cfg.noise_sd, seed=cfg.seed)
    else:
        sim = sim_multi_qtl(cfg.n, seed=cfg.seed)
    paths = write_dataset(cfg.out, sim.gmap, sim.geno, sim.pheno)
    truth = {"cross": sim.geno.cross.value, "qtl": [{"chr": l.chrom, "pos": l.pos} for l in sim.qtl]}
    (Path(cfg.out) / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    _written(cfg, *paths.values())


def cmd_power(cfg: RunConfig) -> None:
    stats = (Stat.SLOD, Stat.MLOD) if cfg.stat == "both" else (Stat.parse(cfg.stat),)
    pc = PowerConfig(
        study=cfg.design, n=cfg.n, replicates=cfg.replicates, seed=cfg.seed, stats=stats,
        workers=cfg.threads, step=cfg.step, error_prob=cfg.error_prob, alpha=cfg.alpha[0],
        cov=cfg.covariance(), noise_sd=cfg.noise_sd, null_effect=cfg.null_effect, n_null=cfg.n_null,
        penalty=cfg.penalty_map(), penalty_perms=cfg.n_perm, window=cfg.window_value(),
        max_qtl=cfg.max_qtl, min_spacing=cfg.min_spacing,
    )
    report = run_power_study(pc)
    report.write(cfg.out)
    _written(cfg, Path(cfg.out) / "power_report.csv")


COMMANDS = {
    "scan": cmd_scan,
    "perm": cmd_perm,
    "stepwise": cmd_stepwise,
    "profile": cmd_profile,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "power": cmd_power,
}


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", required=True, help="output directory (must not exist unless --force)")
    p.add_argument("--force", action="store_true", help="write into an existing output directory")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    p.add_argument("-v", "--verbose", action="store_true")


def _data(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("input")
    g.add_argument("--geno", help="genotype CSV (id,<markers>...)")
    g.add_argument("--map", help="map CSV (marker,chr,pos)")
    g.add_argument("--pheno", help="phenotype CSV (id,<times>...)")
    g.add_argument("--toy", action="store_true", help="use the bundled example dataset")
    g.add_argument("--cross", default="ril", help="ril or f2 (default ril)")
    g.add_argument("--step", type=float, default=1.0, help="pseudomarker grid step in cM; 0 = markers only")
    g.add_argument("--error-prob", type=float, default=DEFAULT_ERROR_PROB)
    g.add_argument("--interpolate", action="store_true", help="fill missing phenotype cells first")
    g.add_argument("--dump-probs", action="store_true", help="also write genotype probabilities")


def _perm_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-perm", type=int, default=1000)
    p.add_argument("--alpha", type=float, action="append", help="significance level; repeatable (default 0.05)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fvqtl", description="QTL mapping for function-valued traits")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="single-QTL genome scan: lod.csv, summary.csv")
    _data(p)
    _common(p)

    p = sub.add_parser("perm", help="permutation thresholds: perm.csv")
    _data(p)
    _perm_args(p)
    _common(p)

    p = sub.add_parser("stepwise", help="penalized stepwise search: model.json, profiles.csv, effects.csv")
    _data(p)
    _perm_args(p)
    p.add_argument("--stat", default="slod", help="slod or mlod")
    p.add_argument("--penalty", default="from-perm", help="number, or 'from-perm' (default)")
    p.add_argument("--max-qtl", type=int, default=DEFAULT_MAX_QTL)
    p.add_argument("--min-spacing", type=float, default=DEFAULT_MIN_SPACING)
    _common(p)

    for name, helptext in (("profile", "profile curves for a model: profiles.csv"),
                           ("fit", "effect curves for a model: effects.csv")):
        p = sub.add_parser(name, help=helptext)
        _data(p)
        p.add_argument("--model", help="model.json from stepwise")
        p.add_argument("--qtl", action="append", default=[], help="locus such as chr1@60; repeatable")
        p.add_argument("--stat", default="slod")
        _common(p)

    p = sub.add_parser("simulate", help="simulate a dataset: map.csv, geno.csv, pheno.csv, truth.json")
    p.add_argument("--design", default="multi", help="single (logistic, F2) or multi (cubic, RIL)")
    p.add_argument("--n", type=int, default=162)
    p.add_argument("--cov", default="ar", help="single design residual covariance: ar, eq or un")
    p.add_argument("--c", type=float, default=1.0, help="covariance scale")
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--null-effect", action="store_true", help="single design with equal genotype curves")
    _common(p)

    p = sub.add_parser("power", help="power study: power_report.csv, power_report.json")
    p.add_argument("--design", "--study", dest="design", default="multi", help="single or multi")
    p.add_argument("--n", type=int, default=162)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--stat", default="both", help="slod, mlod or both")
    p.add_argument("--cov", default="ar")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--null-effect", action="store_true")
    p.add_argument("--n-null", type=int, default=1000, help="null replicates for the shared threshold")
    p.add_argument("--penalty", default="from-perm", help="'from-perm', a number, or slod=X,mlod=Y")
    p.add_argument("--window", default="15", help="detection window in cM, or 'chromosome'")
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--error-prob", type=float, default=DEFAULT_ERROR_PROB)
    p.add_argument("--max-qtl", type=int, default=DEFAULT_MAX_QTL)
    p.add_argument("--min-spacing", type=float, default=DEFAULT_MIN_SPACING)
    _perm_args(p)
    _common(p)
    return ap


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(ns, "alpha", None) is None:
        ns.alpha = [0.05]
    cfg = RunConfig.from_args(ns)
    try:
        cfg.validate()
    except (ConfigError, ValueError) as e:
        print(f"fvqtl {cfg.command}: invalid configuration: {e}", file=sys.stderr)
        return EXIT_INVALID
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    try:
        COMMANDS[cfg.command](cfg)
    except (ConfigError, DataFormatError) as e:
        print(f"fvqtl {cfg.command}: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001 - any failure past validation is a runtime error
        logger.debug("failure", exc_info=True)
        print(f"fvqtl {cfg.command}: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK
