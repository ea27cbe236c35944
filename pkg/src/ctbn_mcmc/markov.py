"""Finite-state Markov jump processes and their marked-Poisson representation.

A process with bounded jump intensities can be simulated by drawing
potential jump times from a Poisson process at rate lam >= max exit rate
and marking them with a skeleton chain whose transition matrix is
P = I + Q/lam.  The resulting (times, states) pair is a redundant
representation: marks that repeat the previous state ("virtual" points)
leave the actual sample path unchanged.  This module provides the value
types for both representations, samplers, densities and path statistics,
for homogeneous and piecewise-homogeneous processes.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "IntensityMatrix", "SkeletonMatrix", "MarkedPath", "SamplePath",
    "RegimePartition", "uniformize", "sample_poisson_times",
    "sample_marked_path", "log_density_marked", "log_density_marked_piecewise",
    "collapse", "lift", "sample_piecewise", "path_statistics",
]


def _dedupe_sorted_times(times, t_min, t_max, rng):
    """Resolve exact float collisions among sorted times by resampling.

    Collisions are probability-zero events but float grids make them
    possible; strictly increasing times are a type invariant.
    """
    while times.size > 1 and np.any(np.diff(times) == 0.0):
        dup = np.concatenate(([False], np.diff(times) == 0.0))
        times[dup] = rng.uniform(t_min, t_max, size=int(dup.sum()))
        times.sort()
    return times


@dataclass(frozen=True, eq=False)
class IntensityMatrix:
    """Off-diagonal jump rates of a homogeneous Markov jump process.

    The diagonal is never stored; the exit rate of a state is the sum of
    its off-diagonal row and the generator diagonal is its negative.
    """

    rates: np.ndarray

    def __post_init__(self):
        r = np.array(self.rates, dtype=np.float64)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("rates must be a square matrix")
        np.fill_diagonal(r, 0.0)
        if not np.all(np.isfinite(r)):
            raise ValueError("rates must be finite")
        if np.any(r < 0.0):
            raise ValueError("off-diagonal rates must be nonnegative")
        r.setflags(write=False)
        object.__setattr__(self, "rates", r)

    @property
    def size(self):
        return self.rates.shape[0]

    @cached_property
    def exit_rates(self):
        out = self.rates.sum(axis=1)
        out.setflags(write=False)
        return out

    @property
    def max_rate(self):
        return float(self.exit_rates.max())

    def generator(self):
        """Full generator matrix with -exit_rates on the diagonal."""
        q = self.rates.copy()
        q[np.diag_indices_from(q)] = -self.exit_rates
        return q

    @classmethod
    def from_generator(cls, q):
        """Build from a full generator, discarding the diagonal."""
        return cls(np.asarray(q, dtype=np.float64))

    @classmethod
    def zero(cls, size):
        return cls(np.zeros((size, size)))


@dataclass(frozen=True, eq=False)
class SkeletonMatrix:
    """Uniformization rate paired with the skeleton transition matrix."""

    lam: float
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if self.lam < 0.0:
            raise ValueError("rate must be nonnegative")
        if np.any(p < 0.0):
            raise ValueError("skeleton probabilities must be nonnegative")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("skeleton rows must sum to 1 within 1e-12")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def size(self):
        return self.probs.shape[0]

    @cached_property
    def log_probs(self):
        with np.errstate(divide="ignore"):
            lp = np.log(self.probs)
        lp.setflags(write=False)
        return lp

    @cached_property
    def cum_probs(self):
        cp = np.cumsum(self.probs, axis=1)
        cp.setflags(write=False)
        return cp


def uniformize(q, lam):
    """Skeleton chain of the uniformized process: P = I + Q/lam.

    Requires lam >= max exit rate so the diagonal stays nonnegative.
    lam == 0 is legal only for the zero generator and yields the identity.
    """
    if lam < q.max_rate:
        raise ValueError(
            f"uniformization rate {lam} is below the max exit rate {q.max_rate}")
    if lam == 0.0:
        return SkeletonMatrix(0.0, np.eye(q.size))
    p = q.rates / lam
    p[np.diag_indices_from(p)] = 1.0 - q.exit_rates / lam
    # guard tiny negative round-off on the diagonal when lam == max rate
    np.clip(p, 0.0, None, out=p)
    return SkeletonMatrix(float(lam), p)


@dataclass(frozen=True, eq=False)
class MarkedPath:
    """Redundant representation: potential jump times plus skeleton states.

    ``times`` are the n strictly increasing potential jump times inside
    (t_min, t_max); ``states`` has n+1 entries, states[0] being the value
    on [t_min, times[0]).  Consecutive equal states are virtual points.
    """

    t_min: float
    t_max: float
    times: np.ndarray
    states: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        s = np.asarray(self.states, dtype=np.int64)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)
        if self.validate:
            if not self.t_min < self.t_max:
                raise ValueError("t_min must be below t_max")
            if s.shape[0] != t.shape[0] + 1:
                raise ValueError("states must have exactly one more entry than times")
            if t.size and (t[0] <= self.t_min or t[-1] >= self.t_max):
                raise ValueError("times must lie strictly inside (t_min, t_max)")
            if np.any(np.diff(t) <= 0.0):
                raise ValueError("times must be strictly increasing")

    @property
    def n(self):
        return self.times.shape[0]

    def equals(self, other):
        return (self.t_min == other.t_min and self.t_max == other.t_max
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.states, other.states))

    def virtual_mask(self):
        """Boolean mask over indices 1..n marking virtual points."""
        return self.states[1:] == self.states[:-1]

    def state_at(self, t):
        """Right-continuous state lookup."""
        return int(self.states[np.searchsorted(self.times, t, side="right")])


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Actual sample path: piecewise-constant with no virtual jumps."""

    t_min: float
    t_max: float
    times: np.ndarray
    states: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        s = np.asarray(self.states, dtype=np.int64)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)
        if self.validate:
            if not self.t_min < self.t_max:
                raise ValueError("t_min must be below t_max")
            if s.shape[0] != t.shape[0] + 1:
                raise ValueError("states must have exactly one more entry than times")
            if t.size and (t[0] <= self.t_min or t[-1] >= self.t_max):
                raise ValueError("jump times must lie strictly inside (t_min, t_max)")
            if np.any(np.diff(t) <= 0.0):
                raise ValueError("jump times must be strictly increasing")
            if np.any(s[1:] == s[:-1]):
                raise ValueError("consecutive states must differ on a sample path")

    @property
    def n_jumps(self):
        return self.times.shape[0]

    def equals(self, other):
        return (self.t_min == other.t_min and self.t_max == other.t_max
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.states, other.states))

    @property
    def jump_times(self):
        return self.times

    @property
    def jump_states(self):
        return self.states[1:]

    @property
    def initial_state(self):
        return int(self.states[0])

    def state_at(self, t):
        return int(self.states[np.searchsorted(self.times, t, side="right")])

    def states_at(self, ts):
        """Vectorized right-continuous lookup."""
        return self.states[np.searchsorted(self.times, ts, side="right")]

    @classmethod
    def constant(cls, state, t_min, t_max):
        return cls(t_min, t_max, np.empty(0), np.asarray([state]))


@dataclass(frozen=True, eq=False)
class RegimePartition:
    """Piecewise-homogeneous description of one process over an interval.

    ``breakpoints`` split [t_min, t_max] into k+1 regimes; regime j runs
    on [r_{j-1}, r_j) with intensity matrix regimes[j] and uniformization
    rate lambdas[j].  Lookup is right-continuous.
    """

    t_min: float
    t_max: float
    breakpoints: np.ndarray
    regimes: tuple
    lambdas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=np.float64)
        lam = np.asarray(self.lambdas, dtype=np.float64)
        regs = tuple(self.regimes)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "regimes", regs)
        if not self.t_min < self.t_max:
            raise ValueError("t_min must be below t_max")
        if b.size and (b[0] <= self.t_min or b[-1] >= self.t_max):
            raise ValueError("breakpoints must lie strictly inside the interval")
        if np.any(np.diff(b) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(regs) != b.size + 1 or lam.size != b.size + 1:
            raise ValueError("need one regime and one rate per sub-interval")
        sizes = {q.size for q in regs}
        if len(sizes) != 1:
            raise ValueError("all regimes must share the state space")
        for q, l in zip(regs, lam):
            if l < q.max_rate:
                raise ValueError(
                    f"uniformization rate {l} below max exit rate {q.max_rate}")

    @property
    def size(self):
        return self.regimes[0].size

    @property
    def n_regimes(self):
        return len(self.regimes)

    @cached_property
    def skeletons(self):
        return tuple(uniformize(q, l) for q, l in zip(self.regimes, self.lambdas))

    @cached_property
    def uniform_lambda(self):
        """True when every regime shares one uniformization rate."""
        return bool(np.all(self.lambdas == self.lambdas[0]))

    def regime_index(self, t):
        return int(np.searchsorted(self.breakpoints, t, side="right"))

    def regime_indices(self, ts):
        return np.searchsorted(self.breakpoints, ts, side="right")

    def regime_bounds(self, j):
        """[lo, hi) endpoints of regime j."""
        lo = self.t_min if j == 0 else float(self.breakpoints[j - 1])
        hi = self.t_max if j == self.n_regimes - 1 else float(self.breakpoints[j])
        return lo, hi

    @classmethod
    def homogeneous(cls, q, lam, t_min, t_max):
        return cls(t_min, t_max, np.empty(0), (q,), np.asarray([lam], dtype=np.float64))


def _check_initial_dist(nu, size):
    nu = np.asarray(nu, dtype=np.float64)
    if nu.shape != (size,):
        raise ValueError(f"initial distribution must have length {size}")
    if np.any(nu < 0.0) or abs(nu.sum() - 1.0) > 1e-9:
        raise ValueError("initial distribution must be a probability vector")
    return nu


def draw_categorical(rng, weights, total=None):
    """Index draw proportional to ``weights`` via one inverse-CDF lookup.

    Much cheaper than Generator.choice in per-event loops.
    """
    cum = np.cumsum(weights)
    t = cum[-1] if total is None else total
    idx = int(np.searchsorted(cum, rng.random() * t, side="right"))
    return min(idx, len(cum) - 1)


def sample_poisson_times(lam, t_min, t_max, rng):
    """Ordered points of a homogeneous Poisson process on (t_min, t_max)."""
    if lam < 0.0:
        raise ValueError("rate must be nonnegative")
    if not t_min < t_max:
        raise ValueError("t_min must be below t_max")
    n = rng.poisson(lam * (t_max - t_min))
    times = np.sort(rng.uniform(t_min, t_max, size=n))
    return _dedupe_sorted_times(times, t_min, t_max, rng)


def sample_marked_path(q, lam, initial_dist, t_min, t_max, rng):
    """Draw a marked path of the uniformized homogeneous process."""
    nu = _check_initial_dist(initial_dist, q.size)
    skel = uniformize(q, lam)
    times = sample_poisson_times(lam, t_min, t_max, rng)
    cum = np.cumsum(skel.probs, axis=1)
    states = np.empty(times.size + 1, dtype=np.int64)
    states[0] = draw_categorical(rng, nu, total=1.0)
    draws = rng.random(times.size)
    for i in range(times.size):
        states[i + 1] = min(int(np.searchsorted(cum[states[i]], draws[i],
                                                side="right")), q.size - 1)
    return MarkedPath(t_min, t_max, times, states)


def sample_piecewise(partition, initial_dist, rng):
    """Draw a marked path of a piecewise-homogeneous process.

    Potential times come from a piecewise Poisson process at the per-regime
    rates; marks use the skeleton matrix of the regime each time falls in.
    """
    nu = _check_initial_dist(initial_dist, partition.size)
    chunks = []
    for j in range(partition.n_regimes):
        lo, hi = partition.regime_bounds(j)
        chunks.append(sample_poisson_times(partition.lambdas[j], lo, hi, rng))
    times = np.concatenate(chunks) if chunks else np.empty(0)
    times.sort()
    times = _dedupe_sorted_times(times, partition.t_min, partition.t_max, rng)
    regs = partition.regime_indices(times)
    states = np.empty(times.size + 1, dtype=np.int64)
    states[0] = draw_categorical(rng, nu, total=1.0)
    skels = partition.skeletons
    draws = rng.random(times.size)
    size = partition.size
    for i in range(times.size):
        row = skels[regs[i]].probs[states[i]]
        states[i + 1] = min(int(np.searchsorted(np.cumsum(row), draws[i],
                                                side="right")), size - 1)
    return MarkedPath(partition.t_min, partition.t_max, times, states)


def log_density_marked(path, skeleton, initial_dist):
    """Log density of a marked path under the homogeneous skeleton law.

    n*log(lam) + log nu(x0) + sum log P(x_{i-1}, x_i), dropping the
    reference-measure constant; -inf whenever any factor vanishes.
    """
    nu = _check_initial_dist(initial_dist, skeleton.size)
    with np.errstate(divide="ignore"):
        total = float(np.log(nu[path.states[0]]))
    if path.n == 0:
        return total
    if skeleton.lam == 0.0:
        return -np.inf
    total += path.n * float(np.log(skeleton.lam))
    total += float(skeleton.log_probs[path.states[:-1], path.states[1:]].sum())
    return total


def log_density_marked_piecewise(path, partition, initial_dist):
    """Log density of a marked path under a piecewise skeleton law."""
    nu = np.asarray(initial_dist, dtype=np.float64)
    with np.errstate(divide="ignore"):
        total = float(np.log(nu[path.states[0]]))
    if path.n == 0:
        return total
    regs = partition.regime_indices(path.times)
    lams = partition.lambdas[regs]
    if np.any(lams == 0.0):
        return -np.inf
    total += float(np.log(lams).sum())
    skels = partition.skeletons
    if partition.n_regimes == 1:
        total += float(skels[0].log_probs[path.states[:-1], path.states[1:]].sum())
    else:
        frm, to = path.states[:-1], path.states[1:]
        for j in np.unique(regs):
            sel = regs == j
            total += float(skels[j].log_probs[frm[sel], to[sel]].sum())
    return total


def collapse(path):
    """Project a marked path to its actual sample path."""
    keep = path.states[1:] != path.states[:-1]
    times = path.times[keep]
    states = np.concatenate((path.states[:1], path.states[1:][keep]))
    return SamplePath(path.t_min, path.t_max, times, states, validate=False)


def lift(sample_path, partition, rng):
    """Draw a marked path representing ``sample_path`` under ``partition``.

    Conditional on the actual path, the virtual points form an
    inhomogeneous Poisson process at rate lam_j - Q_j(x(t)); sampling them
    per (regime x holding segment) piece is exact.
    """
    edges = np.concatenate((np.asarray([sample_path.t_min]), np.sort(
        np.concatenate((sample_path.times, partition.breakpoints))),
        np.asarray([sample_path.t_max])))
    starts = edges[:-1]
    ends = edges[1:]
    segs = ends > starts
    starts, ends = starts[segs], ends[segs]
    regs = partition.regime_indices(starts)
    states = sample_path.states_at(starts)
    exits = np.stack([q.exit_rates for q in partition.regimes])
    mu = partition.lambdas[regs] - exits[regs, states]
    counts = rng.poisson(mu * (ends - starts))
    if counts.sum() == 0:
        virt = np.empty(0)
    else:
        virt = np.concatenate([
            rng.uniform(starts[i], ends[i], size=counts[i])
            for i in np.nonzero(counts)[0]])
    all_times = np.concatenate((sample_path.times, virt))
    order = np.argsort(all_times, kind="stable")
    all_times = all_times[order]
    all_times = _dedupe_sorted_times(all_times, sample_path.t_min,
                                     sample_path.t_max, rng)
    states = np.empty(all_times.size + 1, dtype=np.int64)
    states[0] = sample_path.states[0]
    states[1:] = sample_path.states_at(all_times)
    return MarkedPath(sample_path.t_min, sample_path.t_max, all_times, states)


def path_statistics(path, regimes):
    """Per-regime jump counts and holding times of a sample path.

    ``regimes`` may be a RegimePartition or a single IntensityMatrix
    (treated as one regime spanning the path).  Returns (counts, durations)
    with shapes (k+1, S, S) and (k+1, S).
    """
    from . import kernels

    if isinstance(regimes, IntensityMatrix):
        regimes = RegimePartition.homogeneous(
            regimes, regimes.max_rate, path.t_min, path.t_max)
    if not (regimes.t_min == path.t_min and regimes.t_max == path.t_max):
        raise ValueError("path and partition must cover the same interval")
    cfg_seq = np.arange(regimes.n_regimes, dtype=np.int64)
    counts, durations = kernels.stats_scan(
        path.t_min, path.t_max, path.times, path.states,
        regimes.breakpoints, cfg_seq, regimes.n_regimes, regimes.size)
    return counts, durations
