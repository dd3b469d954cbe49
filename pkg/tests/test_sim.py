import math

import numpy as np
import pytest

from fvqtl.core_io import GeneticMap
from fvqtl.sim import (
    CUBIC_SIGMA,
    UNSTRUCTURED_SIGMA,
    CovarianceSpec,
    CubicQtlSpec,
    LogisticQtlSpec,
    default_ril_map,
    heritability_profile,
    logistic_mean,
    mvn_draws,
    mvn_factor,
    sim_genotypes,
    sim_multi_qtl,
    sim_single_qtl,
)


def test_colocated_markers_identical():
    gmap = GeneticMap.from_spec({"1": [0, 10, 10, 40]})
    for cross in ("ril", "f2"):
        g = sim_genotypes(gmap, cross, 500, seed=1)
        np.testing.assert_array_equal(g.codes[:, 1], g.codes[:, 2])


def test_stationary_frequencies():
    gmap = GeneticMap.from_spec({"1": [0.0]})
    ril = sim_genotypes(gmap, "ril", 50000, seed=2).codes[:, 0]
    assert abs(ril.mean() - 0.5) < 0.01
    f2 = sim_genotypes(gmap, "f2", 50000, seed=3).codes[:, 0]
    freqs = np.bincount(f2, minlength=3) / f2.size
    np.testing.assert_allclose(freqs, [0.25, 0.5, 0.25], atol=0.01)


def test_recombination_rate_matches_map():
    # RIL by selfing: P(differ) between markers d cM apart is R = 2r/(1+2r)
    gmap = GeneticMap.from_spec({"1": [0.0, 20.0]})
    g = sim_genotypes(gmap, "ril", 40000, seed=4).codes
    r = 0.5 * (1 - math.exp(-0.4))
    assert abs(np.mean(g[:, 0] != g[:, 1]) - 2 * r / (1 + 2 * r)) < 0.01


def test_genotypes_reproducible_by_seed():
    gmap = default_ril_map()
    a = sim_genotypes(gmap, "ril", 30, seed=7)
    b = sim_genotypes(gmap, "ril", 30, seed=7)
    assert a.codes.tobytes() == b.codes.tobytes()
    with pytest.raises(ValueError):
        sim_genotypes(gmap, "ril", 0, seed=7)


def test_logistic_mean_values():
    spec = LogisticQtlSpec()
    assert logistic_mean(spec, "AA", 1.0) == pytest.approx(29 / (1 + 7 * math.exp(-0.7)), rel=1e-12)
    assert logistic_mean(spec, "AA", 1.0) == pytest.approx(6.47886, abs=1e-5)
    assert logistic_mean(spec, "BB", 1e4) == pytest.approx(27.5)
    flat = LogisticQtlSpec(params={"AA": (3.0, 0.0, 1.0), "AB": (3.0, 0.0, 1.0), "BB": (3.0, 0.0, 1.0)})
    np.testing.assert_allclose(logistic_mean(flat, 0, np.arange(10)), 3.0)


def test_noiseless_phenotypes_on_genotype_curves():
    spec = LogisticQtlSpec()
    sim = sim_single_qtl(spec, CovarianceSpec.autoregressive(c=0.0), 200, noise_sd=0.0, seed=5)
    curves = spec.mean_curves()
    np.testing.assert_allclose(sim.pheno.values, curves[sim.qtl_genotypes[:, 0]], atol=1e-12)
    assert sim.geno.codes.shape == (200, 6)
    np.testing.assert_allclose(sim.gmap.chromosomes[0].positions, [0, 20, 40, 60, 80, 100])
    assert sim.qtl[0].pos == 32.0


@pytest.mark.parametrize(
    "cov",
    [CovarianceSpec.autoregressive(2.0), CovarianceSpec.equicorrelated(1.0), CovarianceSpec.unstructured(0.5)],
)
def test_residual_covariance_converges(cov):
    spec = LogisticQtlSpec()
    sim = sim_single_qtl(spec, cov, 100000, noise_sd=0.0, seed=6)
    resid = sim.pheno.values - spec.mean_curves()[sim.qtl_genotypes[:, 0]]
    target = cov.cov(10)
    assert np.max(np.abs(np.cov(resid.T) - target)) < 0.03 * np.max(np.abs(target))
    assert np.max(np.abs(resid.mean(axis=0))) < 0.03 * math.sqrt(np.max(np.diag(target)))


def test_covariance_entries():
    ar = CovarianceSpec.autoregressive().sigma(10)
    assert ar[2, 5] == pytest.approx(3 * 0.6 ** 3)
    eq = CovarianceSpec.equicorrelated().sigma(10)
    assert eq[0, 0] == pytest.approx(3.0) and eq[1, 7] == pytest.approx(1.5)
    un = CovarianceSpec.unstructured(2.0).cov(10)
    np.testing.assert_allclose(un, 2 * UNSTRUCTURED_SIGMA)
    np.testing.assert_array_equal(UNSTRUCTURED_SIGMA, UNSTRUCTURED_SIGMA.T)
    assert np.linalg.eigvalsh(UNSTRUCTURED_SIGMA).min() > 0
    assert np.linalg.eigvalsh(CUBIC_SIGMA).min() > 0


def test_non_pd_covariance_rejected():
    with pytest.raises(ValueError, match="positive definite"):
        mvn_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError, match="symmetric"):
        mvn_factor(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        sim_single_qtl(LogisticQtlSpec(), CovarianceSpec.unstructured(matrix=-np.eye(10)), 10, seed=1)
    with pytest.raises(ValueError):
        CubicQtlSpec(sigma4=np.diag([1.0, -1.0, 1.0, 1.0]))


def test_mvn_sample_moments():
    S = np.array([[2.0, 0.8, 0.1], [0.8, 1.0, -0.3], [0.1, -0.3, 0.5]])
    x = mvn_draws(np.random.default_rng(8), 100000, S)
    assert np.max(np.abs(np.cov(x.T) - S)) < 0.03 * 2.0
    assert np.max(np.abs(x.mean(axis=0))) < 0.03


def test_heritability():
    spec = LogisticQtlSpec()
    h0, m0 = heritability_profile(spec.null(), CovarianceSpec.autoregressive())
    assert m0 == 0 and np.all(h0 == 0)
    means = [heritability_profile(spec, CovarianceSpec.autoregressive(c))[1] for c in (0.5, 1, 2, 3, 6, 100)]
    assert all(a > b for a, b in zip(means, means[1:]))
    # independent evaluation of the formula
    h, m = heritability_profile(spec, CovarianceSpec.autoregressive(1.0), noise_sd=1.0)
    for j, t in enumerate(spec.times):
        g = [p[0] / (1 + p[1] * math.exp(-p[2] * t)) for p in spec.params.values()]
        mbar = 0.25 * g[0] + 0.5 * g[1] + 0.25 * g[2]
        vq = 0.25 * (g[0] - mbar) ** 2 + 0.5 * (g[1] - mbar) ** 2 + 0.25 * (g[2] - mbar) ** 2
        assert h[j] == pytest.approx(vq / (vq + 3.0 + 1.0), rel=1e-12)
    assert m == pytest.approx(np.mean(h))


def test_multi_design_layout():
    sim = sim_multi_qtl(20, seed=1)
    assert sim.geno.codes.shape == (20, 5 * 21)
    assert sim.pheno.values.shape == (20, 241)
    np.testing.assert_allclose(sim.pheno.times[[0, -1]], [0, 1])
    assert [l.label for l in sim.qtl] == ["chr1@61", "chr3@76", "chr4@40"]
    # hidden QTL at a marker position copies that marker's genotype
    j = sim.gmap.marker_names.index("m4_9")
    np.testing.assert_array_equal(sim.geno.codes[:, j], sim.qtl_genotypes[:, 2])


def test_reference_coding_all_aa_is_baseline():
    spec = CubicQtlSpec(sigma4=np.zeros((4, 4)), noise_var=0.0, coding="reference")
    sim = sim_multi_qtl(300, seed=2, spec=spec)
    aa = np.all(sim.qtl_genotypes == 0, axis=1)
    assert aa.any()
    t = spec.times
    a, b, c, d = spec.baseline
    np.testing.assert_allclose(sim.pheno.values[aa], np.broadcast_to(a + b * t + c * t**2 + d * t**3, (aa.sum(), t.size)),
                               atol=1e-9)


def test_additive_coding_is_symmetric_about_baseline():
    spec = CubicQtlSpec(sigma4=np.zeros((4, 4)), noise_var=0.0)
    lo = spec.mean_curve(np.zeros(3))[0]
    hi = spec.mean_curve(np.ones(3))[0]
    np.testing.assert_allclose((lo + hi) / 2, spec.mean_curve(np.full(3, 0.5))[0], atol=1e-9)
    base = spec.powers() @ np.asarray(spec.baseline)
    np.testing.assert_allclose((lo + hi) / 2, base, atol=1e-9)
    effects = np.array(list(spec.effects.values())).sum(axis=0)
    np.testing.assert_allclose(hi - lo, 2 * spec.powers() @ effects, atol=1e-9)


def test_multi_mean_curve_at_half():
    spec = CubicQtlSpec()
    sim = sim_multi_qtl(50000, seed=3, spec=spec)
    k = 120  # t = 0.5
    assert sim.pheno.times[k] == pytest.approx(0.5)
    y = sim.pheno.values[:, k]
    # BB frequency 1/2 at each QTL: expectation is the baseline under additive coding
    expected = spec.mean_curve(np.full(3, 0.5))[0, k]
    se = y.std(ddof=1) / math.sqrt(y.size)
    assert abs(y.mean() - expected) < 3 * se


def test_multi_reproducible():
    a = sim_multi_qtl(15, seed=11)
    b = sim_multi_qtl(15, seed=11)
    assert a.pheno.values.tobytes() == b.pheno.values.tobytes()
    assert a.geno.codes.tobytes() == b.geno.codes.tobytes()
