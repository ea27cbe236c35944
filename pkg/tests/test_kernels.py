"""Backend kernels: semantics and numpy/numba equivalence."""

import numpy as np
import pytest

from ctbn_mcmc.kernels import _numpy

try:
    from ctbn_mcmc.kernels import _numba
    BACKENDS = [_numpy, _numba]
except ImportError:
    _numba = None
    BACKENDS = [_numpy]


@pytest.fixture(params=BACKENDS, ids=lambda m: m.__name__.rsplit("_", 1)[-1])
def backend(request):
    return request.param


def _toy_tables(rng, n_cfg=3, n_states=3):
    rates = rng.uniform(0.1, 5.0, (n_cfg, n_states, n_states))
    for c in range(n_cfg):
        np.fill_diagonal(rates[c], 0.0)
    with np.errstate(divide="ignore"):
        lr = np.log(rates)
    return lr, rates.sum(axis=2)


def test_rho_scan_constant_path(backend):
    # one state held for the whole unit interval: contribution is -exit * 1
    lr, ex = _toy_tables(np.random.default_rng(0))
    val = backend.rho_scan(0.0, 1.0, np.empty(0), np.asarray([1]),
                           np.empty(0), np.asarray([2], dtype=np.int64), lr, ex)
    assert val == pytest.approx(-ex[2, 1], abs=1e-14)


def test_rho_scan_single_jump(backend):
    lr, ex = _toy_tables(np.random.default_rng(1))
    val = backend.rho_scan(
        0.0, 1.0, np.asarray([0.25]), np.asarray([0, 2]),
        np.empty(0), np.asarray([1], dtype=np.int64), lr, ex)
    expect = lr[1, 0, 2] - 0.25 * ex[1, 0] - 0.75 * ex[1, 2]
    assert val == pytest.approx(expect, rel=1e-12)


def test_rho_scan_window_excludes_outside_events(backend):
    lr, ex = _toy_tables(np.random.default_rng(2))
    jt = np.asarray([0.2, 0.5, 0.8])
    js = np.asarray([0, 1, 2, 0])
    full = backend.rho_scan(0.0, 1.0, jt, js, np.empty(0),
                            np.asarray([0], dtype=np.int64), lr, ex)
    left = backend.rho_scan(0.0, 0.5, jt, js, np.empty(0),
                            np.asarray([0], dtype=np.int64), lr, ex)
    right = backend.rho_scan(0.5, 1.0, jt, js, np.empty(0),
                             np.asarray([0], dtype=np.int64), lr, ex)
    assert left + right == pytest.approx(full, rel=1e-12)


def test_rho_scan_zero_rate_jump_is_minus_inf(backend):
    rates = np.zeros((1, 2, 2))
    with np.errstate(divide="ignore"):
        lr = np.log(rates)
    ex = rates.sum(axis=2)
    val = backend.rho_scan(0.0, 1.0, np.asarray([0.5]), np.asarray([0, 1]),
                           np.empty(0), np.asarray([0], dtype=np.int64), lr, ex)
    assert val == -np.inf


def test_stats_scan_counts_and_durations(backend):
    c, d = backend.stats_scan(
        0.0, 1.0, np.asarray([0.5]), np.asarray([0, 1]),
        np.asarray([0.25]), np.asarray([0, 1], dtype=np.int64), 2, 2)
    assert c[1, 0, 1] == 1 and c.sum() == 1
    assert d[0, 0] == pytest.approx(0.25)
    assert d[1, 0] == pytest.approx(0.25)
    assert d[1, 1] == pytest.approx(0.5)
    assert d.sum() == pytest.approx(1.0, abs=1e-15)


def test_combine_timeline_merges_and_weights(backend):
    ta = np.asarray([0.3, 0.7])
    sa = np.asarray([0, 1, 0], dtype=np.int64)
    tb = np.asarray([0.5])
    sb = np.asarray([2, 3], dtype=np.int64)
    times, seq = backend.combine_timeline(ta, sa, tb, sb, 10)
    assert np.array_equal(times, [0.3, 0.5, 0.7])
    assert np.array_equal(seq, [20, 21, 31, 30])


def test_combine_timeline_collapses_ties(backend):
    ta = np.asarray([0.5])
    sa = np.asarray([0, 1], dtype=np.int64)
    times, seq = backend.combine_timeline(ta, sa, ta.copy(),
                                          np.asarray([0, 1], dtype=np.int64), 2)
    assert np.array_equal(times, [0.5])
    assert np.array_equal(seq, [0, 3])


@pytest.mark.skipif(_numba is None, reason="numba backend unavailable")
def test_backends_agree_on_random_inputs():
    rng = np.random.default_rng(42)
    for trial in range(200):
        k = int(rng.integers(0, 30))
        b = int(rng.integers(0, 20))
        jt = np.sort(rng.uniform(0, 1, k))
        js = rng.integers(0, 3, k + 1)
        bt = np.sort(rng.uniform(0, 1, b))
        bs = rng.integers(0, 4, b + 1)
        lr, ex = _toy_tables(rng, 4, 3)
        lo, hi = (0.0, 1.0) if trial % 2 else sorted(rng.uniform(0, 1, 2))
        if lo >= hi:
            continue
        a = _numpy.rho_scan(lo, hi, jt, js, bt, bs, lr, ex)
        c = _numba.rho_scan(lo, hi, jt, js, bt, bs, lr, ex)
        assert a == pytest.approx(c, rel=1e-12, abs=1e-12)
        c1, d1 = _numpy.stats_scan(lo, hi, jt, js, bt, bs, 4, 3)
        c2, d2 = _numba.stats_scan(lo, hi, jt, js, bt, bs, 4, 3)
        assert np.array_equal(c1, c2)
        assert np.allclose(d1, d2, atol=1e-14)
        t1, s1 = _numpy.combine_timeline(jt, js, bt, bs, 3)
        t2, s2 = _numba.combine_timeline(jt, js, bt, bs, 3)
        assert np.array_equal(t1, t2) and np.array_equal(s1, s2)
