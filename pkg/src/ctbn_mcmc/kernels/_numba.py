"""Numba @njit twins of the timeline kernels.

Same contracts as kernels._numpy; see the docstrings there. These are
single-pass merge loops, which beat the vectorized fallback once paths
carry more than a handful of points.
"""

import numpy as np
from numba import njit

__all__ = ["rho_scan", "stats_scan", "combine_timeline"]

_INF = np.inf


@njit(cache=True, nogil=True)
def rho_scan(t_lo, t_hi, jump_times, state_seq, cfg_times, cfg_seq,
             log_rates, exit_rates):
    nj = jump_times.shape[0]
    nc = cfg_times.shape[0]
    j = np.searchsorted(jump_times, t_lo, side="left")
    c = np.searchsorted(cfg_times, t_lo, side="right")
    state = state_seq[j]
    cfg = cfg_seq[c]
    total = 0.0
    t = t_lo
    while True:
        tj = jump_times[j] if j < nj else _INF
        tc = cfg_times[c] if c < nc else _INF
        te = min(min(tj, tc), t_hi)
        total -= exit_rates[cfg, state] * (te - t)
        if te >= t_hi:
            break
        if tc <= tj:
            cfg = cfg_seq[c + 1]
            c += 1
        else:
            total += log_rates[cfg, state, state_seq[j + 1]]
            state = state_seq[j + 1]
            j += 1
        t = te
    return total


@njit(cache=True, nogil=True)
def stats_scan(t_lo, t_hi, jump_times, state_seq, cfg_times, cfg_seq,
               n_cfg, n_states):
    counts = np.zeros((n_cfg, n_states, n_states), dtype=np.int64)
    durations = np.zeros((n_cfg, n_states), dtype=np.float64)
    nj = jump_times.shape[0]
    nc = cfg_times.shape[0]
    j = np.searchsorted(jump_times, t_lo, side="left")
    c = np.searchsorted(cfg_times, t_lo, side="right")
    state = state_seq[j]
    cfg = cfg_seq[c]
    t = t_lo
    while True:
        tj = jump_times[j] if j < nj else _INF
        tc = cfg_times[c] if c < nc else _INF
        te = min(min(tj, tc), t_hi)
        durations[cfg, state] += te - t
        if te >= t_hi:
            break
        if tc <= tj:
            cfg = cfg_seq[c + 1]
            c += 1
        else:
            counts[cfg, state, state_seq[j + 1]] += 1
            state = state_seq[j + 1]
            j += 1
        t = te
    return counts, durations


@njit(cache=True, nogil=True)
def combine_timeline(times_a, seq_a, times_b, seq_b, weight):
    na = times_a.shape[0]
    nb = times_b.shape[0]
    out_t = np.empty(na + nb, dtype=np.float64)
    out_v = np.empty(na + nb + 1, dtype=np.int64)
    out_v[0] = seq_a[0] + weight * seq_b[0]
    i = 0
    j = 0
    k = 0
    while i < na or j < nb:
        ta = times_a[i] if i < na else _INF
        tb = times_b[j] if j < nb else _INF
        if ta < tb:
            t = ta
            i += 1
        elif tb < ta:
            t = tb
            j += 1
        else:
            t = ta
            i += 1
            j += 1
        out_t[k] = t
        out_v[k + 1] = seq_a[i] + weight * seq_b[j]
        k += 1
    return out_t[:k].copy(), out_v[:k + 1].copy()
