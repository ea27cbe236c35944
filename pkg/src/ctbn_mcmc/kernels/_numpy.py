"""Pure-numpy implementations of the hot piecewise-timeline kernels.

All three kernels share the same timeline convention: a piecewise-constant
function on an interval is a pair (times, seq) where `times` holds the
strictly increasing interior change points and `seq` has one more entry
than `times`, seq[i] being the value in force on [times[i-1], times[i]).
Lookups are right-continuous: the value *at* a change point is the new one.
"""

import numpy as np

__all__ = ["rho_scan", "stats_scan", "combine_timeline"]


def rho_scan(t_lo, t_hi, jump_times, state_seq, cfg_times, cfg_seq,
             log_rates, exit_rates):
    """Log path-density factor of one node restricted to [t_lo, t_hi).

    Sums log_rates[cfg, a, a'] over real jumps a -> a' falling in the
    window and subtracts exit_rates[cfg, a] * duration over the merged
    segments. `log_rates` is (C, S, S) with -inf where the rate is zero;
    `exit_rates` is (C, S). Returns -inf for impossible jumps.
    """
    j_lo = np.searchsorted(jump_times, t_lo, side="left")
    j_hi = np.searchsorted(jump_times, t_hi, side="left")
    total = 0.0
    if j_hi > j_lo:
        jt = jump_times[j_lo:j_hi]
        cfg_at = cfg_seq[np.searchsorted(cfg_times, jt, side="right")]
        total += log_rates[cfg_at, state_seq[j_lo:j_hi],
                           state_seq[j_lo + 1:j_hi + 1]].sum()
    c_lo = np.searchsorted(cfg_times, t_lo, side="right")
    c_hi = np.searchsorted(cfg_times, t_hi, side="left")
    edges = np.concatenate((np.asarray([t_lo]), jump_times[j_lo:j_hi],
                            cfg_times[c_lo:c_hi], np.asarray([t_hi])))
    edges.sort()
    starts = edges[:-1]
    durs = np.diff(edges)
    st = state_seq[np.searchsorted(jump_times, starts, side="right")]
    cf = cfg_seq[np.searchsorted(cfg_times, starts, side="right")]
    total -= float((exit_rates[cf, st] * durs).sum())
    return float(total)


def stats_scan(t_lo, t_hi, jump_times, state_seq, cfg_times, cfg_seq,
               n_cfg, n_states):
    """Jump counts and holding durations keyed by (config, state).

    Returns (counts, durations) with shapes (C, S, S) int64 and (C, S)
    float64, restricted to the window [t_lo, t_hi).
    """
    counts = np.zeros((n_cfg, n_states, n_states), dtype=np.int64)
    durations = np.zeros((n_cfg, n_states), dtype=np.float64)
    j_lo = np.searchsorted(jump_times, t_lo, side="left")
    j_hi = np.searchsorted(jump_times, t_hi, side="left")
    if j_hi > j_lo:
        jt = jump_times[j_lo:j_hi]
        cfg_at = cfg_seq[np.searchsorted(cfg_times, jt, side="right")]
        np.add.at(counts, (cfg_at, state_seq[j_lo:j_hi],
                           state_seq[j_lo + 1:j_hi + 1]), 1)
    c_lo = np.searchsorted(cfg_times, t_lo, side="right")
    c_hi = np.searchsorted(cfg_times, t_hi, side="left")
    edges = np.concatenate((np.asarray([t_lo]), jump_times[j_lo:j_hi],
                            cfg_times[c_lo:c_hi], np.asarray([t_hi])))
    edges.sort()
    starts = edges[:-1]
    durs = np.diff(edges)
    st = state_seq[np.searchsorted(jump_times, starts, side="right")]
    cf = cfg_seq[np.searchsorted(cfg_times, starts, side="right")]
    np.add.at(durations, (cf, st), durs)
    return counts, durations


def combine_timeline(times_a, seq_a, times_b, seq_b, weight):
    """Merge two integer-valued timelines into seq_a + weight * seq_b.

    Exactly coincident change points collapse to one. Returns (times, seq)
    in the shared timeline convention, seq as int64.
    """
    if times_a.size == 0 and times_b.size == 0:
        merged = np.empty(0, dtype=np.float64)
        seq = np.asarray([seq_a[0] + weight * seq_b[0]], dtype=np.int64)
        return merged, seq
    merged = np.union1d(times_a, times_b)
    va = seq_a[np.searchsorted(times_a, merged, side="right")]
    vb = seq_b[np.searchsorted(times_b, merged, side="right")]
    seq = np.empty(merged.size + 1, dtype=np.int64)
    seq[0] = seq_a[0] + weight * seq_b[0]
    seq[1:] = va + weight * vb
    return merged, seq
