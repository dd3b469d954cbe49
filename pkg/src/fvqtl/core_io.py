"""Domain types and file formats shared across the package.

Genotypes are stored as small integer state indices so that they can be
used directly by the genotype-probability HMM:

    RIL_SELF: 0 = AA, 1 = BB
    F2:       0 = AA, 1 = AB, 2 = BB

Missing genotypes are stored as ``MISSING`` (-1).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MISSING = -1
FLOAT_FMT = "{:.6f}"


class DataFormatError(ValueError):
    """Malformed or inconsistent input file.

    Carries the file, 1-based row and column of the offending cell when they
    are known, so that the message can point straight at the problem.
    """

    def __init__(self, message: str, path=None, row: int | None = None, column: str | None = None):
        self.path = str(path) if path is not None else None
        self.row = row
        self.column = column
        where = []
        if self.path:
            where.append(self.path)
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class CrossType(str, Enum):
    RIL_SELF = "ril"
    F2 = "f2"

    @property
    def n_genotypes(self) -> int:
        return 2 if self is CrossType.RIL_SELF else 3

    @property
    def genotype_names(self) -> tuple[str, ...]:
        return ("AA", "BB") if self is CrossType.RIL_SELF else ("AA", "AB", "BB")

    @property
    def codes(self) -> dict[str, int]:
        """File code -> state index."""
        if self is CrossType.RIL_SELF:
            return {"A": 0, "B": 1}
        return {"A": 0, "H": 1, "B": 2}

    @property
    def bb_index(self) -> int:
        return self.n_genotypes - 1

    @classmethod
    def parse(cls, value) -> "CrossType":
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower()
        aliases = {"ril": cls.RIL_SELF, "ril_self": cls.RIL_SELF, "riself": cls.RIL_SELF, "f2": cls.F2}
        if v not in aliases:
            raise ValueError(f"unknown cross type {value!r}; expected 'ril' or 'f2'")
        return aliases[v]


def _frozen(a, dtype=None) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Chromosome:
    name: str
    marker_names: tuple[str, ...]
    positions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "marker_names", tuple(self.marker_names))
        object.__setattr__(self, "positions", _frozen(self.positions, float))
        if len(self.marker_names) == 0:
            raise ValueError(f"chromosome {self.name!r} has no markers")
        if len(self.marker_names) != len(self.positions):
            raise ValueError(f"chromosome {self.name!r}: names/positions length mismatch")
        if np.any(~np.isfinite(self.positions)) or np.any(self.positions < 0):
            raise ValueError(f"chromosome {self.name!r}: positions must be finite and non-negative")
        if np.any(np.diff(self.positions) < 0):
            raise ValueError(f"chromosome {self.name!r}: marker positions decrease")

    @property
    def n_markers(self) -> int:
        return len(self.marker_names)

    @property
    def length(self) -> float:
        return float(self.positions[-1] - self.positions[0])


@dataclass(frozen=True)
class GeneticMap:
    chromosomes: tuple[Chromosome, ...]

    def __post_init__(self):
        object.__setattr__(self, "chromosomes", tuple(self.chromosomes))
        names = [c.name for c in self.chromosomes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate chromosome names")
        markers = [m for c in self.chromosomes for m in c.marker_names]
        if len(set(markers)) != len(markers):
            dup = sorted({m for m in markers if markers.count(m) > 1})
            raise ValueError(f"duplicate marker names: {dup[:5]}")

    @classmethod
    def from_spec(cls, spec: dict[str, Sequence[float]], prefix: str = "m") -> "GeneticMap":
        """Build a map from ``{chrom: positions}`` with generated marker names."""
        chroms = []
        for name, pos in spec.items():
            chroms.append(Chromosome(str(name), [f"{prefix}{name}_{i + 1}" for i in range(len(pos))], pos))
        return cls(tuple(chroms))

    @property
    def marker_names(self) -> list[str]:
        return [m for c in self.chromosomes for m in c.marker_names]

    @property
    def n_markers(self) -> int:
        return sum(c.n_markers for c in self.chromosomes)

    @property
    def chrom_names(self) -> list[str]:
        return [c.name for c in self.chromosomes]

    def chromosome(self, name: str) -> Chromosome:
        for c in self.chromosomes:
            if c.name == name:
                return c
        raise KeyError(f"no chromosome named {name!r}")

    def column_slices(self) -> list[slice]:
        """Genotype-matrix column range for each chromosome."""
        out, start = [], 0
        for c in self.chromosomes:
            out.append(slice(start, start + c.n_markers))
            start += c.n_markers
        return out


@dataclass(frozen=True)
class GenotypeMatrix:
    ids: tuple[str, ...]
    marker_names: tuple[str, ...]
    codes: np.ndarray
    cross: CrossType

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "marker_names", tuple(self.marker_names))
        object.__setattr__(self, "codes", _frozen(self.codes, np.int8))
        object.__setattr__(self, "cross", CrossType.parse(self.cross))
        if self.codes.shape != (len(self.ids), len(self.marker_names)):
            raise ValueError(
                f"genotype codes have shape {self.codes.shape}, expected "
                f"({len(self.ids)}, {len(self.marker_names)})"
            )
        bad = (self.codes != MISSING) & ((self.codes < 0) | (self.codes >= self.cross.n_genotypes))
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ValueError(f"illegal genotype code {self.codes[i, j]} for {self.cross.value} cross")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate individual IDs in genotype matrix")

    @property
    def n_ind(self) -> int:
        return len(self.ids)

    def check_map(self, gmap: GeneticMap) -> None:
        if tuple(gmap.marker_names) != self.marker_names:
            raise ValueError("genotype marker columns do not match the genetic map order")

    def subset(self, rows) -> "GenotypeMatrix":
        rows = np.asarray(rows)
        return GenotypeMatrix([self.ids[i] for i in rows], self.marker_names, self.codes[rows], self.cross)


@dataclass(frozen=True)
class PhenotypeMatrix:
    ids: tuple[str, ...]
    times: np.ndarray
    values: np.ndarray  # NaN marks a missing cell

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "times", _frozen(self.times, float))
        object.__setattr__(self, "values", _frozen(self.values, float))
        if self.values.ndim != 2 or self.values.shape != (len(self.ids), len(self.times)):
            raise ValueError(
                f"phenotype values have shape {self.values.shape}, expected "
                f"({len(self.ids)}, {len(self.times)})"
            )
        if len(self.times) == 0:
            raise ValueError("phenotype matrix has no time points")
        if np.any(np.diff(self.times) <= 0) or not np.all(np.isfinite(self.times)):
            raise ValueError("time labels must be finite and strictly increasing")
        if np.any(np.isinf(self.values)):
            raise ValueError("phenotype values must be finite or missing")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate individual IDs in phenotype matrix")

    @property
    def n_ind(self) -> int:
        return len(self.ids)

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def is_complete(self) -> bool:
        return not np.isnan(self.values).any()

    def with_values(self, values) -> "PhenotypeMatrix":
        return PhenotypeMatrix(self.ids, self.times, values)

    def subset(self, rows) -> "PhenotypeMatrix":
        rows = np.asarray(rows)
        return PhenotypeMatrix([self.ids[i] for i in rows], self.times, self.values[rows])


@dataclass(frozen=True)
class GridSpec:
    """Pseudomarker grid: every marker plus points every ``step`` cM.

    Grid points start at the first marker and are dropped when they fall
    within ``1e-6`` cM of a marker. ``step == 0`` means markers only.
    """

    step: float = 1.0

    def __post_init__(self):
        if not (self.step >= 0 and math.isfinite(self.step)):
            raise ValueError(f"grid step must be finite and >= 0, got {self.step}")

    def positions(self, marker_pos: np.ndarray) -> np.ndarray:
        marker_pos = np.asarray(marker_pos, float)
        if self.step == 0 or len(marker_pos) == 1:
            return marker_pos.copy()
        start, end = marker_pos[0], marker_pos[-1]
        n = int(math.floor((end - start) / self.step + 1e-9))
        grid = start + self.step * np.arange(n + 1)
        near = np.abs(grid[:, None] - marker_pos[None, :]).min(axis=1) < 1e-6
        return np.sort(np.concatenate([marker_pos, grid[~near]]), kind="stable")


# ---------------------------------------------------------------------------
# reading


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise DataFormatError("file does not exist", path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataFormatError("file is empty", path)
    header = [h.strip() for h in rows[0]]
    body = [[c.strip() for c in r] for r in rows[1:]]
    for k, r in enumerate(body):
        if len(r) != len(header):
            raise DataFormatError(f"expected {len(header)} fields, found {len(r)}", path, row=k + 2)
    return header, body


def _parse_float(text: str, path, row: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataFormatError(f"not a number: {text!r}", path, row, column) from None
    if not math.isfinite(v):
        raise DataFormatError(f"non-finite value {text!r}", path, row, column)
    return v


def read_map(path) -> GeneticMap:
    header, body = _read_rows(path)
    if header[:3] != ["marker", "chr", "pos"]:
        raise DataFormatError("header must be 'marker,chr,pos'", path, row=1)
    order: list[str] = []
    per_chr: dict[str, list[tuple[str, float]]] = {}
    seen: dict[str, int] = {}
    for k, (marker, chrom, pos) in enumerate((r[0], r[1], r[2]) for r in body):
        row = k + 2
        if marker in seen:
            raise DataFormatError(f"duplicate marker {marker!r} (first at row {seen[marker]})", path, row, "marker")
        seen[marker] = row
        p = _parse_float(pos, path, row, "pos")
        if p < 0:
            raise DataFormatError(f"negative position {p}", path, row, "pos")
        if chrom not in per_chr:
            per_chr[chrom] = []
            order.append(chrom)
        elif p < per_chr[chrom][-1][1]:
            raise DataFormatError(
                f"marker {marker!r} at {p} cM precedes previous marker on chromosome {chrom}", path, row, "pos"
            )
        per_chr[chrom].append((marker, p))
    chroms = [Chromosome(c, [m for m, _ in per_chr[c]], [p for _, p in per_chr[c]]) for c in order]
    return GeneticMap(tuple(chroms))


def read_genotypes(path, gmap: GeneticMap, cross: CrossType) -> GenotypeMatrix:
    cross = CrossType.parse(cross)
    header, body = _read_rows(path)
    if header[0] != "id":
        raise DataFormatError("first column must be 'id'", path, row=1)
    cols = header[1:]
    if len(set(cols)) != len(cols):
        raise DataFormatError("duplicate marker column", path, row=1)
    known = set(gmap.marker_names)
    unknown = [c for c in cols if c not in known]
    if unknown:
        raise DataFormatError(f"marker {unknown[0]!r} not in genetic map", path, row=1, column=unknown[0])
    missing_cols = [m for m in gmap.marker_names if m not in set(cols)]
    if missing_cols:
        raise DataFormatError(
            f"dimension mismatch: {len(missing_cols)} map marker(s) absent, e.g. {missing_cols[0]!r}", path, row=1
        )
    index = {c: j for j, c in enumerate(cols)}
    take = [index[m] for m in gmap.marker_names]
    lookup = dict(cross.codes)
    lookup["-"] = MISSING
    ids, codes, seen = [], np.empty((len(body), len(cols)), np.int8), {}
    for k, r in enumerate(body):
        row = k + 2
        if r[0] in seen:
            raise DataFormatError(f"duplicate individual {r[0]!r} (first at row {seen[r[0]]})", path, row, "id")
        seen[r[0]] = row
        ids.append(r[0])
        for j, cell in enumerate(r[1:]):
            if cell not in lookup:
                raise DataFormatError(
                    f"unknown genotype code {cell!r} for {cross.value} cross", path, row, cols[j]
                )
            codes[k, j] = lookup[cell]
    return GenotypeMatrix(ids, gmap.marker_names, codes[:, take], cross)


def read_phenotypes(path) -> PhenotypeMatrix:
    header, body = _read_rows(path)
    if header[0] != "id":
        raise DataFormatError("first column must be 'id'", path, row=1)
    times = [_parse_float(h, path, 1, h) for h in header[1:]]
    if len(times) == 0:
        raise DataFormatError("no time-point columns", path, row=1)
    for j in range(1, len(times)):
        if times[j] <= times[j - 1]:
            raise DataFormatError("time labels must be strictly increasing", path, row=1, column=header[j + 1])
    ids, values, seen = [], np.empty((len(body), len(times))), {}
    for k, r in enumerate(body):
        row = k + 2
        if r[0] in seen:
            raise DataFormatError(f"duplicate individual {r[0]!r} (first at row {seen[r[0]]})", path, row, "id")
        seen[r[0]] = row
        ids.append(r[0])
        for j, cell in enumerate(r[1:]):
            values[k, j] = np.nan if cell in ("-", "", "NA") else _parse_float(cell, path, row, header[j + 1])
    return PhenotypeMatrix(ids, times, values)


def read_dataset(geno_path, map_path, pheno_path, cross) -> tuple[GeneticMap, GenotypeMatrix, PhenotypeMatrix]:
    """Read map, genotypes and phenotypes, aligning individuals by ID.

    Individuals keep the genotype file's row order. Every phenotype ID must
    have genotypes; genotyped individuals without phenotypes are dropped.
    """
    gmap = read_map(map_path)
    geno = read_genotypes(geno_path, gmap, cross)
    pheno = read_phenotypes(pheno_path)
    gindex = {g: i for i, g in enumerate(geno.ids)}
    for k, pid in enumerate(pheno.ids):
        if pid not in gindex:
            raise DataFormatError(f"individual {pid!r} has no genotypes", pheno_path, row=k + 2, column="id")
    pindex = {p: i for i, p in enumerate(pheno.ids)}
    rows = [i for i, g in enumerate(geno.ids) if g in pindex]
    geno = geno.subset(rows) if len(rows) != geno.n_ind else geno
    pheno = pheno.subset([pindex[g] for g in geno.ids])
    return gmap, geno, pheno


def interpolate_missing(pheno: PhenotypeMatrix) -> PhenotypeMatrix:
    """Fill missing cells by linear interpolation against the time labels.

    Leading and trailing gaps take the nearest observed value.
    """
    vals = np.array(pheno.values)
    t = pheno.times
    for i in range(vals.shape[0]):
        obs = ~np.isnan(vals[i])
        if obs.sum() < 2:
            raise ValueError(f"individual {pheno.ids[i]!r} has fewer than 2 observed time points")
        if not obs.all():
            vals[i, ~obs] = np.interp(t[~obs], t[obs], vals[i, obs])
    return pheno.with_values(vals)


# ---------------------------------------------------------------------------
# writing


def fmt(x: float) -> str:
    if np.isnan(x):
        return "-"
    s = FLOAT_FMT.format(x)
    return "0.000000" if s == "-0.000000" else s


def fmt_pos(x: float) -> str:
    """Compact cM label, e.g. 60 -> '60', 76.1 -> '76.1'."""
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    return "0" if s in ("", "-0") else s


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def write_sidecar(csv_path, metadata: dict) -> Path:
    """One-line JSON metadata next to ``csv_path`` (``x.csv`` -> ``x.meta.json``)."""
    p = Path(csv_path)
    side = p.with_name(p.stem + ".meta.json")
    side.write_text(json.dumps(metadata, sort_keys=True, default=str) + "\n")
    return side


def write_map(path, gmap: GeneticMap) -> None:
    rows = []
    for c in gmap.chromosomes:
        rows += [(m, c.name, fmt(p)) for m, p in zip(c.marker_names, c.positions)]
    write_csv(path, ["marker", "chr", "pos"], rows)


def write_genotypes(path, geno: GenotypeMatrix) -> None:
    inv = {v: k for k, v in geno.cross.codes.items()}
    inv[MISSING] = "-"
    rows = ([i] + [inv[int(c)] for c in row] for i, row in zip(geno.ids, geno.codes))
    write_csv(path, ["id", *geno.marker_names], rows)


def write_phenotypes(path, pheno: PhenotypeMatrix) -> None:
    header = ["id", *[fmt_pos(t) for t in pheno.times]]
    write_csv(path, header, ([i] + [fmt(v) for v in row] for i, row in zip(pheno.ids, pheno.values)))


def write_dataset(outdir, gmap: GeneticMap, geno: GenotypeMatrix, pheno: PhenotypeMatrix) -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"map": outdir / "map.csv", "geno": outdir / "geno.csv", "pheno": outdir / "pheno.csv"}
    write_map(paths["map"], gmap)
    write_genotypes(paths["geno"], geno)
    write_phenotypes(paths["pheno"], pheno)
    return paths
