"""Shared test utilities: small statistical oracles and stubs."""

import numpy as np
from scipy import stats as sps


def two_sample_chisquare(a_counts, b_counts, min_expected=5):
    """Two-sample chi-square homogeneity test on aligned count vectors.

    Bins with pooled expectation below ``min_expected`` are merged into a
    tail bin.  Returns the p-value.
    """
    a = np.asarray(a_counts, dtype=np.float64)
    b = np.asarray(b_counts, dtype=np.float64)
    n_a, n_b = a.sum(), b.sum()
    pooled = (a + b) / (n_a + n_b)
    keep = pooled * min(n_a, n_b) >= min_expected
    if not np.all(keep):
        a = np.concatenate((a[keep], [a[~keep].sum()]))
        b = np.concatenate((b[keep], [b[~keep].sum()]))
        pooled = (a + b) / (n_a + n_b)
    stat = 0.0
    for counts, total in ((a, n_a), (b, n_b)):
        expected = pooled * total
        ok = expected > 0
        stat += (np.square(counts[ok] - expected[ok]) / expected[ok]).sum()
    dof = max(1, (pooled > 0).sum() - 1)
    return float(sps.chi2.sf(stat, dof))


def categorical_cell_midpoint(cum_row, target):
    """A uniform draw that inverse-CDF maps onto ``target``; None if empty."""
    lo = float(cum_row[target - 1]) if target > 0 else 0.0
    hi = float(cum_row[target])
    if hi <= lo:
        return None
    return 0.5 * (lo + hi)
