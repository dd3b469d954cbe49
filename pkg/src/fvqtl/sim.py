"""Simulated crosses and function-valued phenotypes.

Two designs are provided:

* a single QTL on one chromosome of an intercross, with logistic growth
  curves per QTL genotype and correlated residuals (autoregressive,
  equicorrelated, or a fixed unstructured 10 x 10 matrix);
* three QTL on a five-chromosome RIL map, with cubic-polynomial baseline and
  effect curves and individual coefficient vectors drawn around their
  genotype means.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core_io import Chromosome, CrossType, GeneticMap, GenotypeMatrix, PhenotypeMatrix
from .genoprob import initial_probs, transition_matrices
from .modelsel import Locus

# 10 x 10 unstructured residual covariance for the single-QTL study
UNSTRUCTURED_SIGMA = np.array([
    [0.72, 0.39, 0.45, 0.48, 0.50, 0.53, 0.60, 0.64, 0.68, 0.68],
    [0.39, 1.06, 1.61, 1.60, 1.50, 1.48, 1.55, 1.47, 1.35, 1.29],
    [0.45, 1.61, 3.29, 3.29, 3.17, 3.09, 3.19, 3.04, 2.78, 2.53],
    [0.48, 1.60, 3.29, 3.98, 4.07, 4.07, 4.17, 4.18, 4.00, 3.69],
    [0.50, 1.50, 3.17, 4.07, 4.70, 4.68, 4.66, 4.78, 4.70, 4.36],
    [0.53, 1.48, 3.09, 4.07, 4.68, 5.56, 6.23, 6.87, 7.11, 6.92],
    [0.60, 1.55, 3.19, 4.17, 4.66, 6.23, 8.59, 10.16, 10.80, 10.70],
    [0.64, 1.47, 3.04, 4.18, 4.78, 6.87, 10.16, 12.74, 13.80, 13.80],
    [0.68, 1.35, 2.78, 4.00, 4.70, 7.11, 10.80, 13.80, 15.33, 15.35],
    [0.68, 1.29, 2.53, 3.69, 4.36, 6.92, 10.70, 13.80, 15.35, 15.77],
])
UNSTRUCTURED_SIGMA.setflags(write=False)

# cubic coefficients (a, b, c, d) of a + b t + c t^2 + d t^3
CUBIC_BASELINE = (-0.238, -265.248, 229.405, -59.771)
CUBIC_EFFECTS = {
    Locus("1", 61.0): (0.209, 8.729, 1.602, -9.054),
    Locus("3", 76.0): (-1.887, 3.414, -4.220, 2.265),
    Locus("4", 40.0): (2.003, 11.907, -28.647, 15.311),
}
CUBIC_SIGMA = np.array([
    [58.99, -177.77, 185.11, -45.44],
    [-177.77, 3848.70, -7274.83, 3595.37],
    [185.11, -7274.83, 16897.56, -9702.32],
    [-45.44, 3595.37, -9702.32, 6096.71],
])
CUBIC_SIGMA.setflags(write=False)


def sim_genotypes(gmap: GeneticMap, cross, n: int, seed=None, rng: np.random.Generator | None = None,
                  ids: Sequence[str] | None = None) -> GenotypeMatrix:
    """Fully observed genotypes from the Markov chain along each chromosome."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cross = CrossType.parse(cross)
    rng = rng if rng is not None else np.random.default_rng(seed)
    G = cross.n_genotypes
    codes = np.empty((n, gmap.n_markers), np.int8)
    init_cum = np.cumsum(initial_probs(cross))
    for chrom, cols in zip(gmap.chromosomes, gmap.column_slices()):
        g = np.minimum(np.searchsorted(init_cum, rng.random(n), side="right"), G - 1)
        codes[:, cols.start] = g
        for k, tm in enumerate(transition_matrices(np.diff(chrom.positions), cross)):
            cum = np.cumsum(tm[g], axis=1)
            g = np.minimum((rng.random(n)[:, None] >= cum).sum(axis=1), G - 1)
            codes[:, cols.start + k + 1] = g
    ids = ids or [f"ind{i + 1}" for i in range(n)]
    return GenotypeMatrix(ids, gmap.marker_names, codes, cross)


# ---------------------------------------------------------------------------
# covariance


class CovKind(str, Enum):
    AUTOREGRESSIVE = "ar"
    EQUICORRELATED = "eq"
    UNSTRUCTURED = "un"


@dataclass(frozen=True)
class CovarianceSpec:
    kind: CovKind
    sigma2: float = 3.0
    rho: float = 0.6
    c: float = 1.0
    matrix: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CovKind(self.kind))
        if self.c < 0:
            raise ValueError("scale c must be non-negative")

    @classmethod
    def autoregressive(cls, c=1.0, sigma2=3.0, rho=0.6) -> "CovarianceSpec":
        return cls(CovKind.AUTOREGRESSIVE, sigma2, rho, c)

    @classmethod
    def equicorrelated(cls, c=1.0, sigma2=3.0, rho=0.5) -> "CovarianceSpec":
        return cls(CovKind.EQUICORRELATED, sigma2, rho, c)

    @classmethod
    def unstructured(cls, c=1.0, matrix=None) -> "CovarianceSpec":
        return cls(CovKind.UNSTRUCTURED, c=c, matrix=UNSTRUCTURED_SIGMA if matrix is None else np.asarray(matrix))

    def with_c(self, c: float) -> "CovarianceSpec":
        return CovarianceSpec(self.kind, self.sigma2, self.rho, c, self.matrix)

    def sigma(self, T: int) -> np.ndarray:
        """Unscaled T x T matrix."""
        if self.kind is CovKind.AUTOREGRESSIVE:
            i = np.arange(T)
            return self.sigma2 * self.rho ** np.abs(i[:, None] - i[None, :])
        if self.kind is CovKind.EQUICORRELATED:
            return self.sigma2 * (self.rho + (1 - self.rho) * np.eye(T))
        S = np.asarray(self.matrix, float)
        if S.shape != (T, T):
            raise ValueError(f"unstructured matrix is {S.shape}, need {T} x {T}")
        return S

    def cov(self, T: int) -> np.ndarray:
        return self.c * self.sigma(T)

    def describe(self) -> dict:
        d = {"kind": self.kind.value, "c": self.c}
        if self.kind is not CovKind.UNSTRUCTURED:
            d.update(sigma2=self.sigma2, rho=self.rho)
        return d


def mvn_factor(S: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L' = S; the zero matrix maps to zeros."""
    S = np.asarray(S, float)
    if not np.allclose(S, S.T, atol=1e-12):
        raise ValueError("covariance is not symmetric")
    if not S.any():
        return np.zeros_like(S)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ValueError("covariance is not positive definite") from None


def mvn_draws(rng: np.random.Generator, n: int, S: np.ndarray) -> np.ndarray:
    L = mvn_factor(S)
    return rng.standard_normal((n, S.shape[0])) @ L.T


# ---------------------------------------------------------------------------
# single-QTL design


GENOTYPE_NAMES = ("AA", "AB", "BB")


@dataclass(frozen=True)
class LogisticQtlSpec:
    params: dict = field(default_factory=lambda: {
        "AA": (29.0, 7.0, 0.7),
        "AB": (28.5, 6.5, 0.73),
        "BB": (27.5, 5.0, 0.75),
    })
    qtl_pos: float = 32.0
    chrom_length: float = 100.0
    n_markers: int = 6
    times: tuple = tuple(float(t) for t in range(1, 11))
    cross: CrossType = CrossType.F2

    def genetic_map(self) -> GeneticMap:
        pos = np.linspace(0.0, self.chrom_length, self.n_markers)
        return GeneticMap.from_spec({"1": pos})

    def genotypes(self) -> tuple[str, ...]:
        return ("AA", "BB") if CrossType.parse(self.cross) is CrossType.RIL_SELF else GENOTYPE_NAMES

    def mean_curves(self, times=None) -> np.ndarray:
        """(G, T) genotype mean curves in state-index order."""
        t = np.asarray(self.times if times is None else times, float)
        return np.array([logistic_mean(self, g, t) for g in self.genotypes()])

    def null(self) -> "LogisticQtlSpec":
        """Same design with every genotype on the AA curve."""
        aa = self.params["AA"]
        return LogisticQtlSpec({g: aa for g in GENOTYPE_NAMES}, self.qtl_pos, self.chrom_length,
                               self.n_markers, self.times, self.cross)


def logistic_mean(spec: LogisticQtlSpec, g, t):
    """a / (1 + b exp(-r t)) for genotype ``g`` (name or state index)."""
    if not isinstance(g, str):
        g = spec.genotypes()[int(g)]
    a, b, r = spec.params[g]
    return a / (1.0 + b * np.exp(-r * np.asarray(t, float)))


@dataclass(frozen=True)
class SimResult:
    gmap: GeneticMap
    geno: GenotypeMatrix
    pheno: PhenotypeMatrix
    qtl: tuple[Locus, ...]
    qtl_genotypes: np.ndarray  # (n, n_qtl) state indices


def _with_qtl(gmap: GeneticMap, loci: Sequence[Locus]) -> tuple[GeneticMap, list[int]]:
    """Map with hidden QTL loci inserted, and their column indices."""
    chroms = []
    for c in gmap.chromosomes:
        names, pos = list(c.marker_names), list(c.positions)
        for k, l in enumerate(loci):
            if l.chrom == c.name:
                j = int(np.searchsorted(pos, l.pos, side="right"))
                names.insert(j, f"__qtl{k}")
                pos.insert(j, l.pos)
        chroms.append(Chromosome(c.name, names, pos))
    full = GeneticMap(tuple(chroms))
    names = full.marker_names
    return full, [names.index(f"__qtl{k}") for k in range(len(loci))]


def _sim_with_qtl(gmap, cross, loci, n, rng):
    full, qcols = _with_qtl(gmap, loci)
    g = sim_genotypes(full, cross, n, rng=rng)
    keep = [j for j in range(full.n_markers) if j not in set(qcols)]
    geno = GenotypeMatrix(g.ids, gmap.marker_names, g.codes[:, keep], cross)
    return geno, np.asarray(g.codes[:, qcols])


def sim_single_qtl(spec: LogisticQtlSpec, cov: CovarianceSpec, n: int, noise_sd: float = 0.0,
                   seed=None, rng: np.random.Generator | None = None) -> SimResult:
    rng = rng if rng is not None else np.random.default_rng(seed)
    gmap = spec.genetic_map()
    qtl = (Locus("1", float(spec.qtl_pos)),)
    geno, q = _sim_with_qtl(gmap, spec.cross, qtl, n, rng)
    T = len(spec.times)
    means = spec.mean_curves()
    y = means[q[:, 0]] + mvn_draws(rng, n, cov.cov(T))
    if noise_sd > 0:
        y = y + noise_sd * rng.standard_normal((n, T))
    return SimResult(gmap, geno, PhenotypeMatrix(geno.ids, spec.times, y), qtl, q)


def heritability_profile(spec: LogisticQtlSpec, cov: CovarianceSpec, noise_sd: float = 0.0):
    """Per-time fraction of phenotypic variance due to the QTL, and its mean.

    Uses intercross genotype frequencies (1/4, 1/2, 1/4).
    """
    freqs = np.array([0.25, 0.5, 0.25])
    T = len(spec.times)
    m = np.array([logistic_mean(spec, g, spec.times) for g in GENOTYPE_NAMES])
    mbar = freqs @ m
    vq = freqs @ (m - mbar) ** 2
    denom = vq + np.diag(cov.cov(T)) + noise_sd ** 2
    h2 = np.divide(vq, denom, out=np.zeros(T), where=denom > 0)
    return h2, float(h2.mean())


# ---------------------------------------------------------------------------
# multiple-QTL design


def default_ril_map(n_chrom: int = 5, length: float = 100.0, spacing: float = 5.0) -> GeneticMap:
    pos = np.arange(0.0, length + 1e-9, spacing)
    return GeneticMap.from_spec({str(c + 1): pos for c in range(n_chrom)})


@dataclass(frozen=True)
class CubicQtlSpec:
    baseline: tuple = CUBIC_BASELINE
    effects: dict = field(default_factory=lambda: dict(CUBIC_EFFECTS))
    sigma4: np.ndarray = field(default_factory=lambda: CUBIC_SIGMA.copy())
    noise_var: float = 1.0
    n_times: int = 241
    # "additive": AA gets baseline - effect, BB baseline + effect; "reference": AA baseline, BB baseline + effect
    coding: str = "additive"

    def __post_init__(self):
        S = np.asarray(self.sigma4, float)
        if S.shape != (4, 4):
            raise ValueError("coefficient covariance must be 4 x 4")
        if S.any():
            mvn_factor(S)
        if self.coding not in ("additive", "reference"):
            raise ValueError(f"unknown genotype coding {self.coding!r}")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_times)

    @property
    def loci(self) -> tuple[Locus, ...]:
        return tuple(self.effects)

    def powers(self, t=None) -> np.ndarray:
        t = self.times if t is None else np.asarray(t, float)
        return np.vander(t, 4, increasing=True)  # (T, 4): 1, t, t^2, t^3

    def mean_coefficients(self, q: np.ndarray) -> np.ndarray:
        """(n, 4) cubic coefficients for QTL genotype rows q (0 = AA, 1 = BB)."""
        q = np.atleast_2d(q).astype(float)
        if self.coding == "additive":
            q = 2 * q - 1
        return np.asarray(self.baseline)[None, :] + q @ np.array([self.effects[l] for l in self.loci])

    def mean_curve(self, q: np.ndarray, t=None) -> np.ndarray:
        return self.mean_coefficients(q) @ self.powers(t).T


def sim_multi_qtl(n: int, seed=None, spec: CubicQtlSpec | None = None, gmap: GeneticMap | None = None,
                  rng: np.random.Generator | None = None) -> SimResult:
    spec = spec or CubicQtlSpec()
    gmap = gmap or default_ril_map()
    rng = rng if rng is not None else np.random.default_rng(seed)
    geno, q = _sim_with_qtl(gmap, CrossType.RIL_SELF, spec.loci, n, rng)
    coef = spec.mean_coefficients(q) + mvn_draws(rng, n, np.asarray(spec.sigma4, float))
    y = coef @ spec.powers().T
    if spec.noise_var > 0:
        y = y + np.sqrt(spec.noise_var) * rng.standard_normal(y.shape)
    return SimResult(gmap, geno, PhenotypeMatrix(geno.ids, spec.times, y), spec.loci, q)
