"""Slow, independent reference computations used only by the tests."""
import itertools
import math

import numpy as np


def _recomb(d_cm, cross):
    r = 0.5 * (1 - math.exp(-2 * d_cm / 100))
    if cross == "ril":
        return 2 * r / (1 + 2 * r)
    return r


def _trans(g_from, g_to, d_cm, cross):
    r = _recomb(d_cm, cross)
    if cross == "ril":
        return 1 - r if g_from == g_to else r
    # F2 genotypes 0=AA, 1=AB, 2=BB, via the two gametes' recombination events
    hap = {0: [(0, 0)], 1: [(0, 1), (1, 0)], 2: [(1, 1)]}
    total = 0.0
    for a, b in hap[g_from]:
        w = 1.0 / len(hap[g_from])
        for a2 in (0, 1):
            pa = 1 - r if a2 == a else r
            for b2 in (0, 1):
                pb = 1 - r if b2 == b else r
                if a2 + b2 == g_to:
                    total += w * pa * pb
    return total


def _prior(g, cross):
    return 0.5 if cross == "ril" else (0.25, 0.5, 0.25)[g]


def _emit(code, g, cross, eps):
    if code < 0:
        return 1.0
    G = 2 if cross == "ril" else 3
    return 1 - eps if code == g else eps / (G - 1)


def enumerate_posteriors(positions, codes, cross, eps):
    """Posteriors at every site of the chain by summing over all latent paths.

    ``positions`` are all chain sites in order (markers and pseudomarkers);
    ``codes`` holds the observed code per site, -1 for missing or pseudomarker.
    Returns an array (n_sites, G).
    """
    G = 2 if cross == "ril" else 3
    P = len(positions)
    paths = np.array(list(itertools.product(range(G), repeat=P)))
    w = np.array([_prior(g, cross) for g in range(G)])[paths[:, 0]]
    emit = np.array([[_emit(c, g, cross, eps) for g in range(G)] for c in codes])  # (P, G)
    w = w * emit[0, paths[:, 0]]
    for k in range(1, P):
        d = positions[k] - positions[k - 1]
        tm = np.array([[_trans(a, b, d, cross) for b in range(G)] for a in range(G)])
        w = w * tm[paths[:, k - 1], paths[:, k]] * emit[k, paths[:, k]]
    out = np.zeros((P, G))
    for k in range(P):
        out[k] = np.bincount(paths[:, k], weights=w, minlength=G)
    return out / w.sum()


def ols_lod(Xcols, y):
    """LOD and additive coefficient from a direct least-squares fit of one time point."""
    n = len(y)
    X = np.column_stack([np.ones(n), Xcols])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    rss1 = float(np.sum((y - X @ beta) ** 2))
    rss0 = float(np.sum((y - y.mean()) ** 2))
    return n / 2 * math.log10(rss0 / rss1), beta[1]
