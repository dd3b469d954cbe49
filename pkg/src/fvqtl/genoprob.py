"""QTL-genotype probabilities on a pseudomarker grid.

The true genotypes along a chromosome form a Markov chain over the ordered
positions (markers and grid points). Markers emit their observed code with
probability ``1 - error_prob`` and any other code uniformly otherwise;
missing markers and pseudomarkers emit nothing. Posteriors come from a
scaled forward-backward pass run for all individuals at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_io import MISSING, CrossType, GeneticMap, GenotypeMatrix, GridSpec, fmt_pos, write_csv

DEFAULT_ERROR_PROB = 1e-4
DEFAULT_STEP = 1.0


def haldane_r(d):
    """Recombination fraction for a distance of ``d`` cM (Haldane, no interference)."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or np.any(np.isnan(d)):
        raise ValueError("map distance must be non-negative")
    r = -0.5 * np.expm1(-2.0 * d / 100.0)
    return float(r) if r.ndim == 0 else r


def ril_expand(r):
    """Map expansion for RIL by selfing: R = 2r / (1 + 2r)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > 0.5) or np.any(np.isnan(r)):
        raise ValueError("recombination fraction must lie in [0, 0.5]")
    R = 2.0 * r / (1.0 + 2.0 * r)
    return float(R) if R.ndim == 0 else R


def initial_probs(cross: CrossType) -> np.ndarray:
    if cross is CrossType.RIL_SELF:
        return np.array([0.5, 0.5])
    return np.array([0.25, 0.5, 0.25])


def transition_matrices(d, cross: CrossType) -> np.ndarray:
    """Stack of transition matrices for inter-position distances ``d`` (cM).

    Returns an array of shape ``(len(d), G, G)`` with rows indexed by the
    genotype at the left position.
    """
    r = np.atleast_1d(haldane_r(np.asarray(d, float)))
    if cross is CrossType.RIL_SELF:
        R = ril_expand(r)
        R = np.atleast_1d(R)
        out = np.empty((len(r), 2, 2))
        out[:, 0, 0] = out[:, 1, 1] = 1 - R
        out[:, 0, 1] = out[:, 1, 0] = R
        return out
    s = 1 - r
    out = np.empty((len(r), 3, 3))
    out[:, 0, 0] = out[:, 2, 2] = s * s
    out[:, 0, 1] = out[:, 2, 1] = 2 * r * s
    out[:, 0, 2] = out[:, 2, 0] = r * r
    out[:, 1, 0] = out[:, 1, 2] = r * s
    out[:, 1, 1] = s * s + r * r
    return out


def emission_probs(codes: np.ndarray, cross: CrossType, error_prob: float) -> np.ndarray:
    """Pr(observed code | true genotype), shape ``codes.shape + (G,)``."""
    G = cross.n_genotypes
    codes = np.asarray(codes)
    em = np.full(codes.shape + (G,), error_prob / (G - 1))
    obs = codes != MISSING
    hit = np.zeros(codes.shape + (G,), bool)
    hit[obs] = np.eye(G, dtype=bool)[codes[obs]]
    em[hit] = 1.0 - error_prob
    em[~obs] = 1.0
    return em


def forward_backward(emit: np.ndarray, trans: np.ndarray, init: np.ndarray) -> np.ndarray:
    """Posterior state probabilities.

    emit: (n, P, G) emission likelihoods; trans: (P-1, G, G); init: (G,).
    Returns (n, P, G).
    """
    n, P, G = emit.shape
    alpha = np.empty((n, P, G))
    a = init[None, :] * emit[:, 0]
    a /= a.sum(axis=1, keepdims=True)
    alpha[:, 0] = a
    for k in range(1, P):
        a = (a @ trans[k - 1]) * emit[:, k]
        a /= a.sum(axis=1, keepdims=True)
        alpha[:, k] = a
    post = np.empty_like(alpha)
    b = np.ones((n, G))
    post[:, P - 1] = alpha[:, P - 1]
    for k in range(P - 2, -1, -1):
        b = (emit[:, k + 1] * b) @ trans[k].T
        b /= b.sum(axis=1, keepdims=True)
        p = alpha[:, k] * b
        post[:, k] = p / p.sum(axis=1, keepdims=True)
    return post


@dataclass(frozen=True)
class ChromProbs:
    name: str
    positions: np.ndarray
    is_marker: np.ndarray
    probs: np.ndarray  # (n_ind, n_positions, G)

    @property
    def n_positions(self) -> int:
        return len(self.positions)

    def index_of(self, pos: float, tol: float = 1e-6) -> int:
        k = int(np.argmin(np.abs(self.positions - pos)))
        if abs(self.positions[k] - pos) > tol:
            raise KeyError(f"{pos} cM is not a grid position on chromosome {self.name}")
        return k


@dataclass(frozen=True)
class GenoProbs:
    ids: tuple[str, ...]
    cross: CrossType
    chroms: tuple[ChromProbs, ...]
    error_prob: float
    step: float

    @property
    def n_ind(self) -> int:
        return len(self.ids)

    @property
    def n_positions(self) -> int:
        return sum(c.n_positions for c in self.chroms)

    def chrom(self, name: str) -> ChromProbs:
        for c in self.chroms:
            if c.name == name:
                return c
        raise KeyError(f"no chromosome named {name!r}")

    def chrom_index(self, name: str) -> int:
        for k, c in enumerate(self.chroms):
            if c.name == name:
                return k
        raise KeyError(f"no chromosome named {name!r}")

    def regressors(self, chrom: ChromProbs | int | str) -> np.ndarray:
        """Haley-Knott regressors, shape (n, P, d).

        RIL: d = 1, Pr(BB). F2: d = 2, additive Pr(BB) - Pr(AA) then
        dominance Pr(AB).
        """
        if not isinstance(chrom, ChromProbs):
            chrom = self.chroms[chrom] if isinstance(chrom, (int, np.integer)) else self.chrom(chrom)
        p = chrom.probs
        if self.cross is CrossType.RIL_SELF:
            return p[:, :, 1:2]
        return np.stack([p[:, :, 2] - p[:, :, 0], p[:, :, 1]], axis=2)

    def locus_regressors(self, chrom: str, pos: float) -> np.ndarray:
        c = self.chrom(chrom)
        return self.regressors(c)[:, c.index_of(pos), :]

    def subset(self, rows) -> "GenoProbs":
        rows = np.asarray(rows)
        chroms = tuple(
            ChromProbs(c.name, c.positions, c.is_marker, c.probs[rows]) for c in self.chroms
        )
        return GenoProbs(tuple(self.ids[i] for i in rows), self.cross, chroms, self.error_prob, self.step)


def calc_genoprob(
    geno: GenotypeMatrix,
    gmap: GeneticMap,
    cross: CrossType | str | None = None,
    grid: GridSpec | float = GridSpec(DEFAULT_STEP),
    error_prob: float = DEFAULT_ERROR_PROB,
) -> GenoProbs:
    cross = geno.cross if cross is None else CrossType.parse(cross)
    if cross is not geno.cross:
        raise ValueError(f"genotype matrix is for a {geno.cross.value} cross, not {cross.value}")
    if not (0 <= error_prob < 0.5):
        raise ValueError("error_prob must lie in [0, 0.5)")
    if not isinstance(grid, GridSpec):
        grid = GridSpec(float(grid))
    geno.check_map(gmap)
    init = initial_probs(cross)
    G = cross.n_genotypes
    chroms = []
    for chrom, cols in zip(gmap.chromosomes, gmap.column_slices()):
        pos = grid.positions(chrom.positions)
        # co-located markers occupy consecutive slots in map order
        mp = chrom.positions
        dup_rank = np.array([np.sum(mp[:j] == mp[j]) for j in range(len(mp))])
        slot = np.searchsorted(pos, mp, side="left") + dup_rank
        is_marker = np.zeros(len(pos), bool)
        is_marker[slot] = True
        emit = np.ones((geno.n_ind, len(pos), G))
        emit[:, slot, :] = emission_probs(geno.codes[:, cols], cross, error_prob)
        trans = transition_matrices(np.diff(pos), cross)
        with np.errstate(invalid="ignore", divide="ignore"):
            probs = forward_backward(emit, trans, init)
        bad = np.isnan(probs).any(axis=(1, 2))
        if bad.any():
            raise ValueError(
                f"genotypes of individual {geno.ids[int(np.argmax(bad))]!r} on chromosome {chrom.name} "
                f"have zero likelihood; use error_prob > 0"
            )
        probs.setflags(write=False)
        pos.setflags(write=False)
        is_marker.setflags(write=False)
        chroms.append(ChromProbs(chrom.name, pos, is_marker, probs))
    return GenoProbs(geno.ids, cross, tuple(chroms), float(error_prob), float(grid.step))


def dump_probs(probs: GenoProbs, outdir) -> list:
    """Debug dump: one CSV per chromosome, rows = individual x position."""
    from pathlib import Path

    outdir = Path(outdir)
    paths = []
    for c in probs.chroms:
        path = outdir / f"probs_{c.name}.csv"
        rows = []
        for i, ind in enumerate(probs.ids):
            for k, p in enumerate(c.positions):
                rows.append([ind, fmt_pos(p), *[float(v) for v in c.probs[i, k]]])
        write_csv(path, ["id", "pos", *probs.cross.genotype_names], rows)
        paths.append(path)
    return paths
