"""Haley-Knott genome scan across all time points at once.

At each grid position the centred design is reduced to an orthonormal basis
once; the coefficients and residual sums of squares for every time point
then follow from a single matrix product with the phenotype matrix, so the
cost grows linearly with the number of time points.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from ._linalg import center, lod_from_rss, orthonormalize
from .core_io import PhenotypeMatrix, fmt_pos, write_csv
from .genoprob import GenoProbs

logger = logging.getLogger(__name__)


class Stat(str, Enum):
    SLOD = "slod"
    MLOD = "mlod"

    @classmethod
    def parse(cls, value) -> "Stat":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown statistic {value!r}; expected 'slod' or 'mlod'") from None

    def aggregate(self, lod: np.ndarray, axis: int = -1) -> np.ndarray:
        """Mean (SLOD) or max (MLOD) of |LOD| over time."""
        a = np.abs(lod)
        return a.mean(axis=axis) if self is Stat.SLOD else a.max(axis=axis)


def check_inputs(probs: GenoProbs, pheno: PhenotypeMatrix) -> None:
    if tuple(probs.ids) != tuple(pheno.ids):
        raise ValueError("individuals in genotype probabilities and phenotypes are not aligned")
    if not pheno.is_complete:
        raise ValueError("phenotype matrix has missing cells; run interpolate_missing first")


@dataclass(frozen=True)
class SignedLodMatrix:
    """Positions x time points; |value| is the LOD, sign the BB-vs-AA direction."""

    chrom: np.ndarray
    pos: np.ndarray
    values: np.ndarray
    times: np.ndarray
    n_ind: int

    @property
    def lod(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def labels(self) -> list[str]:
        return [f"{c}:{fmt_pos(p)}" for c, p in zip(self.chrom, self.pos)]

    def rows_for(self, chrom: str) -> np.ndarray:
        return np.flatnonzero(self.chrom == chrom)


def slod(lods: SignedLodMatrix) -> np.ndarray:
    return Stat.SLOD.aggregate(lods.values)


def mlod(lods: SignedLodMatrix) -> np.ndarray:
    return Stat.MLOD.aggregate(lods.values)


@dataclass(frozen=True)
class ScanSummary:
    chrom: np.ndarray
    pos: np.ndarray
    slod: np.ndarray
    mlod: np.ndarray

    @classmethod
    def from_lods(cls, lods: SignedLodMatrix) -> "ScanSummary":
        return cls(lods.chrom, lods.pos, slod(lods), mlod(lods))

    def curve(self, stat) -> np.ndarray:
        return self.slod if Stat.parse(stat) is Stat.SLOD else self.mlod

    def peak(self, stat, chrom: str | None = None) -> tuple[str, float, float]:
        """(chrom, pos, value) of the maximum, genome-wide or on one chromosome."""
        curve = self.curve(stat)
        rows = np.arange(len(curve)) if chrom is None else np.flatnonzero(self.chrom == chrom)
        k = rows[int(np.argmax(curve[rows]))]
        return str(self.chrom[k]), float(self.pos[k]), float(curve[k])


class HKScanner:
    """Orthonormal bases of every grid position's centred design.

    The bases depend only on the genotype probabilities, so one scanner
    serves the observed phenotypes and every permutation.
    """

    def __init__(self, probs: GenoProbs):
        self.probs = probs
        self.n = probs.n_ind
        chrom, pos, bases, rs = [], [], [], []
        for c in probs.chroms:
            X = center(probs.regressors(c), axis=0)  # (n, P, d)
            Q, R = orthonormalize(np.moveaxis(X, 0, 1))  # (P, n, d), (P, d, d)
            bases.append(Q)
            rs.append(R)
            chrom += [c.name] * c.n_positions
            pos.append(c.positions)
        Q = np.concatenate(bases, axis=0)
        self.d = Q.shape[2]
        self.n_positions = Q.shape[0]
        # rows ordered (position, column)
        self.basis = np.ascontiguousarray(np.moveaxis(Q, 2, 1).reshape(-1, self.n))
        R = np.concatenate(rs, axis=0)
        # F2 additive coefficient has the sign of z0 - (r01 / r11) z1
        self.dom_adjust = None
        if self.d == 2:
            r11 = R[:, 1, 1]
            self.dom_adjust = np.where(r11 > 0, R[:, 0, 1] / np.where(r11 > 0, r11, 1.0), 0.0)
        self.chrom = np.array(chrom, dtype=object)
        self.pos = np.concatenate(pos)

    def projections(self, Yc: np.ndarray) -> np.ndarray:
        """Basis coordinates of centred phenotypes, shape (P, d, T)."""
        return (self.basis @ Yc).reshape(self.n_positions, self.d, -1)

    def lod(self, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unsigned LOD (P, T) and additive-effect sign (P, T)."""
        Y = np.asarray(Y, float)
        Yc = center(Y, axis=0)
        rss0 = np.einsum("nt,nt->t", Yc, Yc)
        sumsq = np.einsum("nt,nt->t", Y, Y)
        Z = self.projections(Yc)
        rss1 = rss0[None, :] - np.einsum("pdt,pdt->pt", Z, Z)
        lod = lod_from_rss(rss0, rss1, self.n, sumsq)
        add = Z[:, 0, :]
        if self.d == 2:
            add = add - self.dom_adjust[:, None] * Z[:, 1, :]
        sign = np.where(add < 0, -1.0, 1.0)
        return lod, sign

    def genome_max(self, Yc_batch: np.ndarray, T: int, sumsq: np.ndarray, stats: Sequence[Stat]) -> dict:
        """Genome-wide maxima for a batch of column-stacked phenotype matrices.

        ``Yc_batch`` is (n, B*T): B centred phenotype matrices side by side.
        ``sumsq`` is the per-column uncentred sum of squares, length B*T.
        """
        B = Yc_batch.shape[1] // T
        rss0 = np.einsum("nt,nt->t", Yc_batch, Yc_batch)
        Z = self.basis @ Yc_batch  # (P*d, B*T)
        red = (Z * Z).reshape(self.n_positions, self.d, B * T).sum(axis=1)
        lod = lod_from_rss(rss0, rss0[None, :] - red, self.n, sumsq)
        lod = lod.reshape(self.n_positions, B, T)
        return {s: s.aggregate(lod, axis=2).max(axis=0) for s in stats}


def scan_hk(probs: GenoProbs, pheno: PhenotypeMatrix, scanner: HKScanner | None = None) -> SignedLodMatrix:
    """Signed LOD for every grid position and time point."""
    check_inputs(probs, pheno)
    scanner = scanner or HKScanner(probs)
    lod, sign = scanner.lod(pheno.values)
    values = lod * sign
    values.setflags(write=False)
    return SignedLodMatrix(scanner.chrom, scanner.pos, values, pheno.times, probs.n_ind)


# ---------------------------------------------------------------------------
# permutations


def empirical_threshold(maxima: np.ndarray, alpha: float) -> float:
    """Order statistic at 1-based index ceil((1 - alpha) * N), clamped to [1, N]."""
    x = np.sort(np.asarray(maxima, float))
    N = len(x)
    if N == 0:
        raise ValueError("no maxima")
    k = math.ceil((1.0 - alpha) * N - 1e-9)
    k = min(max(k, 1), N)
    return float(x[k - 1])


@dataclass(frozen=True)
class PermutationResult:
    stat: Stat
    maxima: np.ndarray
    thresholds: dict = field(default_factory=dict)
    seed: int = 1

    @property
    def n_perm(self) -> int:
        return len(self.maxima)


def permutation_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for permutation ``index`` of master ``seed``."""
    return np.random.default_rng([int(seed), int(index)])


def _perm_chunk(scanner: HKScanner, Yc: np.ndarray, sumsq: np.ndarray, seed: int, indices, stats) -> dict:
    perms = [permutation_rng(seed, i).permutation(Yc.shape[0]) for i in indices]
    batch = np.concatenate([Yc[p] for p in perms], axis=1)
    # row permutation leaves each column's sum of squares unchanged
    return scanner.genome_max(batch, Yc.shape[1], np.tile(sumsq, len(indices)), stats)


def permutation_maxima(
    probs: GenoProbs,
    pheno: PhenotypeMatrix,
    n_perm: int,
    seed: int = 1,
    stats: Sequence = (Stat.SLOD, Stat.MLOD),
    workers: int = 1,
    chunk: int = 16,
    scanner: HKScanner | None = None,
) -> dict[Stat, np.ndarray]:
    """Genome-wide maxima of each statistic over ``n_perm`` row permutations.

    Permutation ``i`` always draws from ``permutation_rng(seed, i)``, so the
    result does not depend on ``workers`` or ``chunk``.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    check_inputs(probs, pheno)
    stats = [Stat.parse(s) for s in stats]
    scanner = scanner or HKScanner(probs)
    Y = np.asarray(pheno.values, float)
    Yc = center(Y, axis=0)
    sumsq = np.einsum("nt,nt->t", Y, Y)
    jobs = [range(s, min(s + chunk, n_perm)) for s in range(0, n_perm, chunk)]

    def run(idx):
        return _perm_chunk(scanner, Yc, sumsq, seed, idx, stats)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    return {s: np.concatenate([r[s] for r in results]) for s in stats}


def permutation_threshold(
    probs: GenoProbs,
    pheno: PhenotypeMatrix,
    stat,
    n_perm: int,
    alphas: Sequence[float] = (0.05,),
    seed: int = 1,
    workers: int = 1,
) -> PermutationResult:
    stat = Stat.parse(stat)
    maxima = permutation_maxima(probs, pheno, n_perm, seed, [stat], workers)[stat]
    maxima.setflags(write=False)
    thresholds = {float(a): empirical_threshold(maxima, a) for a in alphas}
    return PermutationResult(stat, maxima, thresholds, seed)


# ---------------------------------------------------------------------------
# output


def write_lod(path, lods: SignedLodMatrix) -> None:
    header = ["position", *[fmt_pos(t) for t in lods.times]]
    write_csv(path, header, ([lab, *map(float, row)] for lab, row in zip(lods.labels, lods.values)))


def write_summary(path, summary: ScanSummary) -> None:
    rows = (
        [f"{c}:{fmt_pos(p)}", c, fmt_pos(p), float(s), float(m)]
        for c, p, s, m in zip(summary.chrom, summary.pos, summary.slod, summary.mlod)
    )
    write_csv(path, ["position", "chr", "pos", "SLOD", "MLOD"], rows)


def write_perm(path, results: Sequence[PermutationResult]) -> None:
    """Long format: one row per (stat, kind, key) - thresholds then maxima."""
    rows = []
    for r in results:
        for a, thr in sorted(r.thresholds.items()):
            rows.append([r.stat.value.upper(), "threshold", f"{a:g}", float(thr)])
        for i, m in enumerate(r.maxima):
            rows.append([r.stat.value.upper(), "max", str(i + 1), float(m)])
    write_csv(path, ["stat", "kind", "key", "value"], rows)
