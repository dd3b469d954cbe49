import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fvqtl._linalg import lod_from_rss
from fvqtl.core_io import GeneticMap, PhenotypeMatrix
from fvqtl.genoprob import calc_genoprob
from fvqtl.modelsel import (
    Locus,
    QtlModel,
    _Fitter,
    SearchTrace,
    fit_effects,
    model_lod,
    plod,
    profile,
    stepwise_search,
    write_effects,
    write_profiles,
)
from fvqtl.scan import ScanSummary, Stat, scan_hk
from fvqtl.sim import sim_genotypes

from oracles import ols_lod


def make_data(seed, n=120, T=4, cross="ril", chroms=("1", "2", "3"), effects=(), noise=1.0, step=5.0):
    """Seeded cross with additive marker effects: effects = [(chrom, marker_index, size)]."""
    rng = np.random.default_rng(seed)
    gmap = GeneticMap.from_spec({c: np.arange(0.0, 101.0, 10.0) for c in chroms})
    geno = sim_genotypes(gmap, cross, n, rng=rng)
    y = noise * rng.normal(size=(n, T))
    for c, m, size in effects:
        j = gmap.marker_names.index(f"m{c}_{m + 1}")
        y += size * (geno.codes[:, j] == geno.cross.bb_index)[:, None] * np.linspace(1, 2, T)
    pheno = PhenotypeMatrix(geno.ids, np.arange(T, dtype=float), y)
    return calc_genoprob(geno, gmap, grid=step), pheno


def test_plod_arithmetic():
    assert plod(5.0, 2, 1.85) == pytest.approx(1.30)
    assert plod(0.0, 0, 3.0) == 0.0
    with pytest.raises(ValueError):
        plod(1.0, -1, 1.0)


def test_locus_parse_and_label():
    assert Locus.parse("chr1@60") == Locus("1", 60.0)
    assert Locus.parse("X:12.5") == Locus("X", 12.5)
    assert Locus("3", 76.0).label == "chr3@76"


def test_empty_model_is_zero():
    probs, pheno = make_data(1)
    assert model_lod(probs, pheno, [], "slod") == 0.0


@pytest.mark.parametrize("cross", ["ril", "f2"])
def test_single_locus_model_equals_scan(cross):
    probs, pheno = make_data(2, cross=cross, effects=[("1", 4, 1.0)])
    s = ScanSummary.from_lods(scan_hk(probs, pheno))
    for row in (0, 7, 33, 50):
        l = Locus(str(s.chrom[row]), float(s.pos[row]))
        assert model_lod(probs, pheno, [l], Stat.SLOD) == pytest.approx(s.slod[row], abs=1e-10)
        assert model_lod(probs, pheno, [l], Stat.MLOD) == pytest.approx(s.mlod[row], abs=1e-10)


def test_two_locus_model_matches_ols():
    probs, pheno = make_data(3, T=2, effects=[("1", 3, 1.0), ("2", 7, 1.0)])
    loci = [Locus("1", 30.0), Locus("2", 70.0)]
    X = np.column_stack([probs.locus_regressors(l.chrom, l.pos)[:, 0] for l in loci])
    ref = [ols_lod(X, pheno.values[:, t])[0] for t in range(2)]
    assert model_lod(probs, pheno, loci, "slod") == pytest.approx(np.mean(ref), abs=1e-8)
    assert model_lod(probs, pheno, loci, "mlod") == pytest.approx(np.max(ref), abs=1e-8)


def test_adding_a_locus_never_lowers_model_lod():
    probs, pheno = make_data(4, effects=[("1", 3, 0.8), ("3", 8, 0.8)])
    one = model_lod(probs, pheno, [Locus("1", 30.0)], "slod")
    two = model_lod(probs, pheno, [Locus("1", 30.0), Locus("3", 80.0)], "slod")
    assert two > one
    assert two > model_lod(probs, pheno, [Locus("3", 80.0)], "slod")


def test_duplicate_loci_rejected():
    probs, pheno = make_data(1)
    with pytest.raises(ValueError):
        model_lod(probs, pheno, [Locus("1", 10.0), Locus("1", 10.0)], "slod")


def test_model_json_round_trip(tmp_path):
    m = QtlModel((Locus("1", 60.0), Locus("4", 42.5)), "mlod", 2.1, 7.25)
    m.write_json(tmp_path / "m.json")
    back = QtlModel.read_json(tmp_path / "m.json")
    assert back == m
    assert back.plod == pytest.approx(7.25 - 4.2)


def test_noise_only_selects_null_model():
    hits = 0
    for seed in range(20):
        probs, pheno = make_data(100 + seed, n=100, T=3, chroms=("1", "2"), step=10.0)
        hits += stepwise_search(probs, pheno, "slod", penalty=2.5, max_qtl=3).size == 0
    assert hits >= 18


def test_single_strong_qtl_is_found():
    probs, pheno = make_data(7, n=150, effects=[("2", 5, 1.2)])
    m = stepwise_search(probs, pheno, "slod", penalty=2.0, max_qtl=4)
    assert m.size >= 1
    assert any(l.chrom == "2" and abs(l.pos - 50) <= 10 for l in m.loci)


def test_two_qtl_are_found_with_mlod():
    probs, pheno = make_data(8, n=200, effects=[("1", 2, 1.0), ("3", 8, -1.0)])
    m = stepwise_search(probs, pheno, "mlod", penalty=3.0, max_qtl=5)
    found = {(l.chrom, round(l.pos / 10)) for l in m.loci}
    assert {l.chrom for l in m.loci} >= {"1", "3"}
    assert any(c == "1" and abs(p - 2) <= 1 for c, p in found)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["slod", "mlod"]), st.floats(0.5, 4.0))
def test_search_returns_best_visited_model(seed, stat, penalty):
    probs, pheno = make_data(seed, n=60, T=3, chroms=("1", "2"), effects=[("1", 5, 0.7)], step=10.0)
    trace = SearchTrace()
    best = stepwise_search(probs, pheno, stat, penalty=penalty, max_qtl=4, trace=trace)
    assert best in trace.models
    assert all(m.plod <= best.plod + 1e-9 for m in trace.models)
    # every reported model LOD is reproducible from scratch
    for m in trace.models:
        assert m.model_lod == pytest.approx(model_lod(probs, pheno, m.loci, stat), abs=1e-8)
    # loci respect the spacing rule
    for a in best.loci:
        for b in best.loci:
            if a != b and a.chrom == b.chrom:
                assert abs(a.pos - b.pos) >= 5.0


def test_search_is_deterministic():
    probs, pheno = make_data(9, effects=[("1", 5, 0.8)])
    a = stepwise_search(probs, pheno, "slod", penalty=1.0, max_qtl=4)
    b = stepwise_search(probs, pheno, "slod", penalty=1.0, max_qtl=4)
    assert a == b


def test_penalty_must_be_positive():
    probs, pheno = make_data(1)
    with pytest.raises(ValueError):
        stepwise_search(probs, pheno, "slod", penalty=0.0)


def test_one_locus_profile_is_the_scan():
    probs, pheno = make_data(10, effects=[("2", 4, 1.0)])
    s = ScanSummary.from_lods(scan_hk(probs, pheno))
    prof = profile(probs, pheno, QtlModel((Locus("2", 40.0),), "slod", 1.0, 0.0))
    np.testing.assert_allclose(prof.values[0], s.curve(Stat.SLOD)[s.chrom == "2"], atol=1e-10)


def test_profile_at_fitted_position_is_drop_one_lod():
    probs, pheno = make_data(11, effects=[("1", 3, 1.0), ("1", 8, 1.0), ("3", 5, 1.0)])
    loci = (Locus("1", 30.0), Locus("1", 80.0), Locus("3", 50.0))
    full = model_lod(probs, pheno, loci, "mlod")
    prof = profile(probs, pheno, QtlModel(loci, "mlod", 1.0, full))
    for j, l in enumerate(loci):
        others = loci[:j] + loci[j + 1:]
        f = _Fitter(probs, pheno)
        drop = lod_from_rss(f.rss(f.basis(others)), f.rss(f.basis(loci)), f.n, f.sumsq)
        k = probs.chroms[probs.chrom_index(l.chrom)].index_of(l.pos)
        np.testing.assert_allclose(prof.per_time[j][k], drop, atol=1e-8)
        assert prof.values[j][k] == pytest.approx(np.max(np.abs(drop)), abs=1e-8)


def test_profile_rejects_empty_model():
    probs, pheno = make_data(1)
    with pytest.raises(ValueError):
        profile(probs, pheno, QtlModel((), "slod", 1.0, 0.0))


def test_effects_of_empty_model_are_means():
    probs, pheno = make_data(12)
    eff = fit_effects(probs, pheno, [])
    np.testing.assert_allclose(eff.mu, pheno.values.mean(axis=0), atol=1e-12)
    assert eff.beta.shape == (0, pheno.values.shape[1])
    assert np.all(eff.lod == 0)


def test_effects_recover_noise_free_line():
    probs, pheno = make_data(13, noise=0.0)
    q = probs.locus_regressors("2", 60.0)[:, 0]
    y = np.tile((3 + 2 * q)[:, None], (1, 4))
    eff = fit_effects(probs, pheno.with_values(y), [Locus("2", 60.0)])
    np.testing.assert_allclose(eff.mu, 3.0, atol=1e-9)
    np.testing.assert_allclose(eff.beta[0], 2.0, atol=1e-9)


def test_f2_effects_recover_additive_and_dominance():
    probs, pheno = make_data(14, cross="f2", noise=0.0, n=150)
    p = probs.chroms[0].probs[:, probs.chroms[0].index_of(50.0), :]
    means = np.array([1.0, 2.5, 5.0])  # AA, AB, BB
    y = (p @ means)[:, None] * np.ones(4)
    eff = fit_effects(probs, pheno.with_values(y), [Locus("1", 50.0)])
    np.testing.assert_allclose(eff.mu, 1.0, atol=1e-9)
    np.testing.assert_allclose(eff.beta[0], 4.0, atol=1e-9)
    np.testing.assert_allclose(eff.dominance[0], 2.5 - 3.0, atol=1e-9)


def test_effect_fitted_values_give_model_lod():
    probs, pheno = make_data(15, T=3, effects=[("1", 2, 1.0), ("3", 6, 1.0)])
    loci = [Locus("1", 20.0), Locus("3", 60.0)]
    eff = fit_effects(probs, pheno, loci)
    X = np.column_stack([probs.locus_regressors(l.chrom, l.pos)[:, 0] for l in loci])
    fitted = eff.mu[None, :] + X @ eff.beta
    Y = pheno.values
    rss1 = ((Y - fitted) ** 2).sum(axis=0)
    rss0 = ((Y - Y.mean(axis=0)) ** 2).sum(axis=0)
    np.testing.assert_allclose(eff.lod, Y.shape[0] / 2 * np.log10(rss0 / rss1), atol=1e-8)


def test_writers(tmp_path):
    probs, pheno = make_data(16, cross="f2")
    m = QtlModel((Locus("1", 60.0),), "slod", 1.0, 0.0)
    write_profiles(tmp_path / "p.csv", profile(probs, pheno, m))
    write_effects(tmp_path / "e.csv", fit_effects(probs, pheno, m))
    p = (tmp_path / "p.csv").read_text().splitlines()
    e = (tmp_path / "e.csv").read_text().splitlines()
    assert p[0] == "qtl,chr,pos,SLOD"
    assert p[1].startswith("chr1@60,1,0,")
    assert e[0] == "time,mu,beta_chr1@60,dom_chr1@60,lod"
    assert len(e) == 1 + pheno.values.shape[1]
