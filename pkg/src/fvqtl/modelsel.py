"""Multiple-QTL models: penalized criterion, stepwise search, profiles, effects.

A model is an additive set of loci. Its per-time LOD compares the model fit
against the intercept-only fit; the model-level statistic averages (SLOD)
or maximizes (MLOD) that over time, and the penalized criterion subtracts
``penalty`` per locus.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._linalg import center, lod_from_rss, orthonormalize
from .core_io import CrossType, PhenotypeMatrix, fmt_pos, write_csv
from .genoprob import GenoProbs
from .scan import Stat, check_inputs

logger = logging.getLogger(__name__)

DEFAULT_MAX_QTL = 10
DEFAULT_MIN_SPACING = 5.0
TIE_TOL = 1e-9


@dataclass(frozen=True, order=True)
class Locus:
    chrom: str
    pos: float

    @property
    def label(self) -> str:
        return f"chr{self.chrom}@{fmt_pos(self.pos)}"

    @classmethod
    def parse(cls, text: str) -> "Locus":
        """Accepts 'chr1@60', '1@60' or '1:60'."""
        s = text.strip()
        sep = "@" if "@" in s else ":"
        chrom, pos = s.rsplit(sep, 1)
        if chrom.startswith("chr"):
            chrom = chrom[3:]
        return cls(chrom, float(pos))


def plod(model_lod_value: float, k: int, penalty: float) -> float:
    if k < 0 or penalty < 0:
        raise ValueError("k and penalty must be non-negative")
    return float(model_lod_value) - float(penalty) * k


@dataclass(frozen=True)
class QtlModel:
    loci: tuple[Locus, ...]
    stat: Stat
    penalty: float
    model_lod: float

    def __post_init__(self):
        object.__setattr__(self, "loci", tuple(self.loci))
        object.__setattr__(self, "stat", Stat.parse(self.stat))
        if len(set(self.loci)) != len(self.loci):
            raise ValueError("duplicate loci in model")

    @property
    def size(self) -> int:
        return len(self.loci)

    @property
    def plod(self) -> float:
        return plod(self.model_lod, self.size, self.penalty)

    def to_dict(self) -> dict:
        return {
            "loci": [{"chr": l.chrom, "pos": l.pos} for l in self.loci],
            "stat": self.stat.value,
            "penalty": self.penalty,
            "model_lod": self.model_lod,
            "plod": self.plod,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QtlModel":
        loci = [Locus(str(x["chr"]), float(x["pos"])) for x in d["loci"]]
        return cls(tuple(loci), Stat.parse(d["stat"]), float(d["penalty"]), float(d["model_lod"]))

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def read_json(cls, path) -> "QtlModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


class _Fitter:
    """Centred regressors and phenotypes for repeated additive-model fits."""

    def __init__(self, probs: GenoProbs, pheno: PhenotypeMatrix):
        check_inputs(probs, pheno)
        self.probs = probs
        self.n = probs.n_ind
        Y = np.asarray(pheno.values, float)
        self.Yc = center(Y, axis=0)
        self.rss0 = np.einsum("nt,nt->t", self.Yc, self.Yc)
        self.sumsq = np.einsum("nt,nt->t", Y, Y)
        # (P, n, d) centred regressors per chromosome
        self.X = [np.ascontiguousarray(np.moveaxis(center(probs.regressors(c), axis=0), 0, 1)) for c in probs.chroms]
        self.chrom_index = {c.name: k for k, c in enumerate(probs.chroms)}

    def index(self, locus: Locus) -> tuple[int, int]:
        try:
            ci = self.chrom_index[locus.chrom]
        except KeyError:
            raise KeyError(f"no chromosome named {locus.chrom!r}") from None
        return ci, self.probs.chroms[ci].index_of(locus.pos)

    def locus_at(self, ci: int, k: int) -> Locus:
        c = self.probs.chroms[ci]
        return Locus(c.name, float(c.positions[k]))

    def design(self, loci: Sequence[Locus]) -> np.ndarray:
        if not loci:
            return np.zeros((self.n, 0))
        cols = []
        for l in loci:
            ci, k = self.index(l)
            cols.append(self.X[ci][k])
        return np.concatenate(cols, axis=1)

    def basis(self, loci: Sequence[Locus]) -> np.ndarray:
        Q, _ = orthonormalize(self.design(loci))
        return Q[:, np.any(Q != 0, axis=0)]

    def rss(self, Q: np.ndarray) -> np.ndarray:
        Z = Q.T @ self.Yc
        return self.rss0 - np.einsum("kt,kt->t", Z, Z)

    def lod_t(self, loci: Sequence[Locus]) -> np.ndarray:
        return lod_from_rss(self.rss0, self.rss(self.basis(loci)), self.n, self.sumsq)

    def add_one(self, Q: np.ndarray, ci: int):
        """Per-time RSS after adding each position of chromosome ``ci`` to basis Q.

        Returns rss (P, T) and the candidate orthonormal columns (P, n, d).
        """
        X = self.X[ci]
        ref = np.linalg.norm(X, axis=1)
        if Q.shape[1]:
            X = X - np.einsum("nk,pkd->pnd", Q, np.einsum("nk,pnd->pkd", Q, X))
        Qc, _ = orthonormalize(X, ref_norms=ref)
        P, n, d = Qc.shape
        Z = (np.moveaxis(Qc, 2, 1).reshape(P * d, n) @ self.Yc).reshape(P, d, -1)
        rss_base = self.rss(Q)
        return rss_base[None, :] - np.einsum("pdt,pdt->pt", Z, Z), Qc


def model_lod(probs: GenoProbs, pheno: PhenotypeMatrix, loci: Sequence[Locus], stat, _fitter=None) -> float:
    """SLOD or MLOD of the additive model with the given loci."""
    stat = Stat.parse(stat)
    loci = [l if isinstance(l, Locus) else Locus(*l) for l in loci]
    if len(set(loci)) != len(loci):
        raise ValueError("duplicate loci")
    if not loci:
        return 0.0
    f = _fitter or _Fitter(probs, pheno)
    return float(stat.aggregate(f.lod_t(loci)))


@dataclass
class SearchTrace:
    """Every model visited by the stepwise search, in visiting order."""

    models: list = field(default_factory=list)


def _better(cand: QtlModel, best: QtlModel) -> bool:
    diff = cand.plod - best.plod
    if diff > TIE_TOL:
        return True
    return abs(diff) <= TIE_TOL and cand.size < best.size


def stepwise_search(
    probs: GenoProbs,
    pheno: PhenotypeMatrix,
    stat,
    penalty: float,
    max_qtl: int = DEFAULT_MAX_QTL,
    min_spacing: float = DEFAULT_MIN_SPACING,
    trace: SearchTrace | None = None,
) -> QtlModel:
    """Forward selection to ``max_qtl`` loci, then backward elimination to none.

    Returns the visited model with the largest penalized statistic; ties
    (within 1e-9) go to fewer loci, then to the model visited first.
    """
    stat = Stat.parse(stat)
    if not penalty > 0:
        raise ValueError("penalty must be positive")
    f = _Fitter(probs, pheno)
    n = f.n

    def visit(loci, value):
        m = QtlModel(tuple(loci), stat, penalty, float(value))
        if trace is not None:
            trace.models.append(m)
        return m

    best = visit([], 0.0)
    loci: list[Locus] = []
    idx: list[tuple[int, int]] = []
    Q = np.zeros((n, 0))
    while len(loci) < max_qtl:
        choice = None
        for ci, c in enumerate(probs.chroms):
            rss, Qc = f.add_one(Q, ci)
            vals = stat.aggregate(lod_from_rss(f.rss0, rss, n, f.sumsq))
            for cj, kj in idx:
                if cj == ci:
                    vals[np.abs(c.positions - c.positions[kj]) < min_spacing] = -np.inf
            k = int(np.argmax(vals))
            if np.isfinite(vals[k]) and (choice is None or vals[k] > choice[0]):
                choice = (float(vals[k]), ci, k, Qc[k])
        if choice is None:
            break
        value, ci, k, qk = choice
        loci.append(f.locus_at(ci, k))
        idx.append((ci, k))
        qk = qk[:, np.any(qk != 0, axis=0)]
        Q = np.concatenate([Q, qk], axis=1)
        m = visit(loci, value)
        logger.debug("forward %d: %s %s=%.4f", len(loci), loci[-1].label, stat.value, value)
        if _better(m, best):
            best = m

    while loci:
        vals = [model_lod(probs, pheno, loci[:j] + loci[j + 1:], stat, _fitter=f) for j in range(len(loci))]
        j = int(np.argmax(vals))
        loci = loci[:j] + loci[j + 1:]
        m = visit(loci, vals[j])
        if _better(m, best):
            best = m
    return best


# ---------------------------------------------------------------------------
# profiles and effects


@dataclass(frozen=True)
class ProfileCurves:
    stat: Stat
    loci: tuple[Locus, ...]
    positions: tuple[np.ndarray, ...]
    values: tuple[np.ndarray, ...]
    per_time: tuple[np.ndarray, ...]  # (P, T) per-time profile LOD for each locus


def profile(probs: GenoProbs, pheno: PhenotypeMatrix, model: QtlModel, stat=None) -> ProfileCurves:
    """Move each locus along its chromosome with the others held fixed.

    At each position the per-time LOD compares the model with the locus
    there against the model without it; the curve aggregates over time.
    """
    stat = Stat.parse(stat if stat is not None else model.stat)
    if model.size == 0:
        raise ValueError("profile needs a non-empty model")
    f = _Fitter(probs, pheno)
    positions, values, per_time = [], [], []
    for j, l in enumerate(model.loci):
        others = model.loci[:j] + model.loci[j + 1:]
        Q = f.basis(others)
        rss_ref = f.rss(Q)
        ci, _ = f.index(l)
        rss, _ = f.add_one(Q, ci)
        lod = lod_from_rss(rss_ref, rss, f.n, f.sumsq)
        positions.append(probs.chroms[ci].positions)
        per_time.append(lod)
        values.append(stat.aggregate(lod))
    return ProfileCurves(stat, model.loci, tuple(positions), tuple(values), tuple(per_time))


@dataclass(frozen=True)
class EffectCurves:
    times: np.ndarray
    loci: tuple[Locus, ...]
    mu: np.ndarray  # (T,) baseline, the all-AA mean
    beta: np.ndarray  # (k, T) BB minus AA
    lod: np.ndarray  # (T,) full model vs intercept only
    dominance: np.ndarray | None = None  # (k, T) F2 only: AB minus the AA/BB midpoint


def fit_effects(probs: GenoProbs, pheno: PhenotypeMatrix, model: QtlModel | Sequence[Locus]) -> EffectCurves:
    """Per-time least squares of the phenotype on the model's genotype probabilities."""
    loci = tuple(model.loci if isinstance(model, QtlModel) else model)
    f = _Fitter(probs, pheno)
    Y = np.asarray(pheno.values, float)
    n, T = Y.shape
    f2 = probs.cross is CrossType.F2
    cols = []
    for l in loci:
        ci, k = f.index(l)
        p = probs.chroms[ci].probs[:, k, :]
        # AA is the reference class, so coefficients are contrasts with AA
        cols += [p[:, 2], p[:, 1]] if f2 else [p[:, 1]]
    X = np.column_stack([np.ones(n)] + cols) if cols else np.ones((n, 1))
    coef = np.zeros((X.shape[1], T))
    if cols:
        _, R = orthonormalize(center(X[:, 1:], axis=0))
        kept = np.concatenate([[0], 1 + np.flatnonzero(np.diag(R) > 0)])
    else:
        kept = np.array([0])
    coef[kept], *_ = np.linalg.lstsq(X[:, kept], Y, rcond=None)
    mu = coef[0]
    if f2:
        beta = coef[1::2]
        dominance = coef[2::2] - beta / 2
    else:
        beta, dominance = coef[1:], None
    lod = f.lod_t(loci) if loci else np.zeros(T)
    return EffectCurves(pheno.times, loci, mu, beta.reshape(len(loci), T), lod, dominance)


# ---------------------------------------------------------------------------
# output


def write_profiles(path, prof: ProfileCurves) -> None:
    rows = []
    for l, pos, vals in zip(prof.loci, prof.positions, prof.values):
        rows += [[l.label, l.chrom, fmt_pos(p), float(v)] for p, v in zip(pos, vals)]
    write_csv(path, ["qtl", "chr", "pos", prof.stat.value.upper()], rows)


def write_effects(path, eff: EffectCurves) -> None:
    header = ["time", "mu"] + [f"beta_{l.label}" for l in eff.loci]
    cols = [eff.mu] + list(eff.beta)
    if eff.dominance is not None:
        header += [f"dom_{l.label}" for l in eff.loci]
        cols += list(eff.dominance)
    header.append("lod")
    cols.append(eff.lod)
    rows = ([fmt_pos(t)] + [float(c[i]) for c in cols] for i, t in enumerate(eff.times))
    write_csv(path, header, rows)
