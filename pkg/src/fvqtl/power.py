"""Power, precision and false-positive accounting for the simulation designs.

Every replicate draws from its own generator keyed on (seed, stream, index),
so results do not depend on the worker count or on evaluation order.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core_io import write_csv
from .genoprob import DEFAULT_ERROR_PROB, calc_genoprob
from .modelsel import DEFAULT_MAX_QTL, DEFAULT_MIN_SPACING, Locus, stepwise_search
from .scan import HKScanner, ScanSummary, Stat, empirical_threshold, permutation_maxima, scan_hk
from .sim import CovarianceSpec, CubicQtlSpec, LogisticQtlSpec, sim_multi_qtl, sim_single_qtl

logger = logging.getLogger(__name__)

# generator streams
_ALT, _NULL, _PERM = 0, 1, 2


def replicate_rng(seed: int, stream: int, i: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, i])


def _derived_seed(*key: int) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def _map_replicates(fn: Callable[[int], object], n: int, workers: int) -> list:
    if workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(n)))


@dataclass
class PowerConfig:
    study: str = "multi"  # "single" or "multi"
    n: int = 162
    replicates: int = 100
    seed: int = 1
    stats: tuple = (Stat.SLOD, Stat.MLOD)
    workers: int = 1
    step: float = 1.0
    error_prob: float = DEFAULT_ERROR_PROB
    alpha: float = 0.05
    # single-QTL study
    cov: CovarianceSpec = field(default_factory=CovarianceSpec.autoregressive)
    noise_sd: float = 0.0
    null_effect: bool = False
    n_null: int = 1000
    # multi-QTL study
    penalty: dict | None = None
    penalty_datasets: int = 5
    penalty_perms: int = 1000
    window: float | None = 15.0  # None: anywhere on the true QTL's chromosome
    max_qtl: int = DEFAULT_MAX_QTL
    min_spacing: float = DEFAULT_MIN_SPACING

    def __post_init__(self):
        if self.study not in ("single", "multi"):
            raise ValueError(f"study must be 'single' or 'multi', not {self.study!r}")
        if self.n < 2 or self.replicates < 1:
            raise ValueError("n must be >= 2 and replicates >= 1")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.window is not None and self.window < 0:
            raise ValueError("window must be non-negative")
        self.stats = tuple(Stat.parse(s) for s in self.stats)
        if self.penalty is not None:
            self.penalty = {Stat.parse(k): float(v) for k, v in self.penalty.items()}

    def describe(self) -> dict:
        d = asdict(self)
        d["stats"] = [s.value for s in self.stats]
        d["cov"] = self.cov.describe()
        if self.penalty is not None:
            d["penalty"] = {s.value: v for s, v in self.penalty.items()}
        return d


@dataclass(frozen=True)
class PowerRow:
    stat: str
    true_chr: str
    true_pos: float
    power: float  # percent
    mean_pos: float
    se_pos: float  # spread (SD) of the estimated position over detecting replicates
    rmse: float
    fp_rate: float  # percent of replicates with at least one false locus
    mean_false: float  # false loci per replicate
    cutoff: float  # threshold or penalty used

    def __post_init__(self):
        if not 0 <= self.power <= 100:
            raise ValueError("power out of range")


@dataclass(frozen=True)
class PowerReport:
    study: str
    replicates: int
    seed: int
    rows: tuple[PowerRow, ...]
    config: dict

    def row(self, stat, chrom: str | None = None, pos: float | None = None) -> PowerRow:
        stat = Stat.parse(stat).value
        for r in self.rows:
            if r.stat == stat and (chrom is None or r.true_chr == chrom) and (pos is None or r.true_pos == pos):
                return r
        raise KeyError((stat, chrom, pos))

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        header = ["study", "stat", "true_chr", "true_pos", "power", "mean_pos", "se_pos", "rmse",
                  "fp_rate", "mean_false", "cutoff", "replicates", "seed"]
        rows = [[self.study, r.stat, r.true_chr, r.true_pos, r.power, r.mean_pos, r.se_pos, r.rmse,
                 r.fp_rate, r.mean_false, r.cutoff, self.replicates, self.seed] for r in self.rows]
        write_csv(outdir / "power_report.csv", header, rows)
        doc = {"study": self.study, "replicates": self.replicates, "seed": self.seed,
               "config": self.config, "rows": [asdict(r) for r in self.rows]}
        (outdir / "power_report.json").write_text(json.dumps(doc, indent=2, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _summarize(est: Sequence[float], n_rep: int, true_pos: float):
    est = np.asarray(est, float)
    power = 100.0 * est.size / n_rep
    if est.size == 0:
        return power, math.nan, math.nan, math.nan
    se = float(est.std(ddof=1)) if est.size > 1 else 0.0
    rmse = float(np.sqrt(np.mean((est - true_pos) ** 2)))
    return power, float(est.mean()), se, rmse


# ---------------------------------------------------------------------------
# single-QTL study


def _single_genome_max(cfg: PowerConfig, spec: LogisticQtlSpec, rng):
    sim = sim_single_qtl(spec, cfg.cov, cfg.n, cfg.noise_sd, rng=rng)
    probs = calc_genoprob(sim.geno, sim.gmap, grid=cfg.step, error_prob=cfg.error_prob)
    s = ScanSummary.from_lods(scan_hk(probs, sim.pheno))
    out = {}
    for st in cfg.stats:
        curve = s.curve(st)
        k = int(np.argmax(curve))
        out[st] = (float(curve[k]), float(s.pos[k]))
    return out


def null_thresholds(cfg: PowerConfig, spec: LogisticQtlSpec | None = None) -> dict:
    """Shared 1-alpha thresholds from ``cfg.n_null`` simulated null replicates."""
    spec = (spec or LogisticQtlSpec()).null()
    res = _map_replicates(lambda i: _single_genome_max(cfg, spec, replicate_rng(cfg.seed, _NULL, i)),
                          cfg.n_null, cfg.workers)
    return {st: empirical_threshold([r[st][0] for r in res], cfg.alpha) for st in cfg.stats}


def _single_study(cfg: PowerConfig, spec: LogisticQtlSpec | None, thresholds: dict | None) -> PowerReport:
    spec = spec or LogisticQtlSpec()
    thr = thresholds or null_thresholds(cfg, spec)
    alt = spec.null() if cfg.null_effect else spec
    res = _map_replicates(lambda i: _single_genome_max(cfg, alt, replicate_rng(cfg.seed, _ALT, i)),
                          cfg.replicates, cfg.workers)
    rows = []
    for st in cfg.stats:
        est = [pos for r in res for v, pos in [r[st]] if v >= thr[st]]
        power, mean, se, rmse = _summarize(est, cfg.replicates, spec.qtl_pos)
        rows.append(PowerRow(st.value, "1", spec.qtl_pos, power, mean, se, rmse, math.nan, math.nan, float(thr[st])))
    return PowerReport("single", cfg.replicates, cfg.seed, tuple(rows), cfg.describe())


# ---------------------------------------------------------------------------
# multiple-QTL study


def shared_penalties(cfg: PowerConfig, spec: CubicQtlSpec | None = None) -> dict:
    """Penalties from permutations pooled over the first few simulated datasets.

    Dataset j contributes ``penalty_perms / penalty_datasets`` permutations
    (rounded up); the penalty is the 1-alpha quantile of the pooled maxima.
    """
    spec = spec or CubicQtlSpec()
    per = max(1, math.ceil(cfg.penalty_perms / cfg.penalty_datasets))
    pooled = {st: [] for st in cfg.stats}
    for j in range(cfg.penalty_datasets):
        sim = sim_multi_qtl(cfg.n, spec=spec, rng=replicate_rng(cfg.seed, _ALT, j))
        probs = calc_genoprob(sim.geno, sim.gmap, grid=cfg.step, error_prob=cfg.error_prob)
        mx = permutation_maxima(probs, sim.pheno, per, seed=_derived_seed(cfg.seed, _PERM, j), stats=cfg.stats,
                                workers=cfg.workers, scanner=HKScanner(probs))
        for st in cfg.stats:
            pooled[st].append(mx[st])
    return {st: empirical_threshold(np.concatenate(pooled[st]), cfg.alpha) for st in cfg.stats}


def match_loci(found: Sequence[Locus], truth: Sequence[Locus], window: float | None):
    """Assign to each true locus the nearest found locus on its chromosome (within ``window``).

    Returns (estimated position or None per true locus, number of unmatched found loci).
    """
    free = list(found)
    est = []
    for t in truth:
        cand = [l for l in free if l.chrom == t.chrom and (window is None or abs(l.pos - t.pos) <= window)]
        if not cand:
            est.append(None)
            continue
        best = min(cand, key=lambda l: (abs(l.pos - t.pos), l.pos))
        free.remove(best)
        est.append(best.pos)
    return est, len(free)


def _multi_replicate(cfg: PowerConfig, spec: CubicQtlSpec, penalty: dict, i: int):
    sim = sim_multi_qtl(cfg.n, spec=spec, rng=replicate_rng(cfg.seed, _ALT, i))
    probs = calc_genoprob(sim.geno, sim.gmap, grid=cfg.step, error_prob=cfg.error_prob)
    out = {}
    for st in cfg.stats:
        m = stepwise_search(probs, sim.pheno, st, penalty[st], cfg.max_qtl, cfg.min_spacing)
        out[st] = match_loci(m.loci, spec.loci, cfg.window)
    return out


def _multi_study(cfg: PowerConfig, spec: CubicQtlSpec | None) -> PowerReport:
    spec = spec or CubicQtlSpec()
    penalty = cfg.penalty or shared_penalties(cfg, spec)
    logger.info("penalties: %s", {s.value: round(v, 4) for s, v in penalty.items()})
    res = _map_replicates(lambda i: _multi_replicate(cfg, spec, penalty, i), cfg.replicates, cfg.workers)
    rows = []
    for st in cfg.stats:
        n_false = np.array([r[st][1] for r in res])
        fp = 100.0 * np.mean(n_false > 0)
        for q, t in enumerate(spec.loci):
            est = [r[st][0][q] for r in res if r[st][0][q] is not None]
            power, mean, se, rmse = _summarize(est, cfg.replicates, t.pos)
            rows.append(PowerRow(st.value, t.chrom, t.pos, power, mean, se, rmse, float(fp),
                                 float(n_false.mean()), float(penalty[st])))
    d = cfg.describe()
    d["penalty"] = {s.value: v for s, v in penalty.items()}
    return PowerReport("multi", cfg.replicates, cfg.seed, tuple(rows), d)


def run_power_study(cfg: PowerConfig, spec=None, thresholds: dict | None = None) -> PowerReport:
    """Run the configured study. ``thresholds`` overrides the shared null thresholds (single study)."""
    if cfg.study == "single":
        return _single_study(cfg, spec, thresholds)
    return _multi_study(cfg, spec)
