"""CTBN specification, trajectory densities, statistics and local dynamics.

A continuous time Bayesian network couples one jump process per node
through a (possibly cyclic) digraph: the intensity matrix of node v is a
table Q_v(c; a, a') keyed by the current parent configuration c.  Parent
configurations are encoded as mixed-radix integers over the parents taken
in node-declaration order, first parent least significant; the same
little-endian convention encodes joint states for amalgamation.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .markov import (IntensityMatrix, RegimePartition, SamplePath,
                     draw_categorical)

__all__ = [
    "CtbnSpec", "BayesNetInitial", "FullConditionalInitial", "CtbnTrajectory",
    "SufficientStats", "amalgamate", "sufficient_stats", "log_rho",
    "log_density", "log_cbi", "local_regimes", "node_conditional_logdensity",
    "parent_config_timeline",
]


def _mixed_radix_strides(sizes):
    strides = np.ones(len(sizes), dtype=np.int64)
    for i in range(1, len(sizes)):
        strides[i] = strides[i - 1] * sizes[i - 1]
    return strides


def _toposort(nodes, edges):
    """Kahn topological order; raises on cycles."""
    children = {v: [] for v in nodes}
    indeg = {v: 0 for v in nodes}
    for a, b in edges:
        children[a].append(b)
        indeg[b] += 1
    order = [v for v in nodes if indeg[v] == 0]
    i = 0
    while i < len(order):
        for w in children[order[i]]:
            indeg[w] -= 1
            if indeg[w] == 0:
                order.append(w)
        i += 1
    if len(order) != len(nodes):
        raise ValueError("initial-distribution graph must be acyclic")
    return order


@dataclass(frozen=True, eq=False)
class BayesNetInitial:
    """Initial distribution factorized along a DAG over the nodes.

    ``tables[v]`` has shape (n_configs0(v), S_v): one conditional row per
    configuration of v's DAG parents, encoded with the same mixed-radix
    convention as the CIM tables.
    """

    nodes: tuple
    alphabets: tuple
    edges: tuple
    tables: dict

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "alphabets", tuple(int(a) for a in self.alphabets))
        object.__setattr__(self, "edges", tuple((a, b) for a, b in self.edges))
        known = set(self.nodes)
        for a, b in self.edges:
            if a not in known or b not in known:
                raise ValueError(f"initial edge ({a}, {b}) names an unknown node")
        _toposort(self.nodes, self.edges)
        tables = {}
        for v in self.nodes:
            if v not in self.tables:
                raise ValueError(f"initial table missing for node {v}")
            t = np.array(self.tables[v], dtype=np.float64)
            if t.ndim == 1:
                t = t[None, :]
            want = (self.n_parent_configs(v), self.size(v))
            if t.shape != want:
                raise ValueError(
                    f"initial table for {v} has shape {t.shape}, expected {want}")
            if np.any(t < 0.0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-12):
                raise ValueError(
                    f"initial table rows for {v} must sum to 1 within 1e-12")
            t.setflags(write=False)
            tables[v] = t
        object.__setattr__(self, "tables", tables)

    def size(self, v):
        return self.alphabets[self.nodes.index(v)]

    @cached_property
    def _index(self):
        return {v: i for i, v in enumerate(self.nodes)}

    @cached_property
    def parents(self):
        out = {v: tuple(a for a, b in self.edges if b == v) for v in self.nodes}
        # declaration order keeps config encoding deterministic
        return {v: tuple(sorted(ps, key=self._index.get)) for v, ps in out.items()}

    def n_parent_configs(self, v):
        n = 1
        for p in self.parents[v]:
            n *= self.size(p)
        return n

    @cached_property
    def _topo(self):
        return _toposort(self.nodes, self.edges)

    def _config(self, v, x0):
        cfg = 0
        stride = 1
        for p in self.parents[v]:
            pi = self._index[p]
            cfg += int(x0[pi]) * stride
            stride *= self.alphabets[pi]
        return cfg

    def log_full(self, x0):
        """log nu(x(0)) for a complete configuration vector."""
        total = 0.0
        with np.errstate(divide="ignore"):
            for v in self.nodes:
                p = self.tables[v][self._config(v, x0), int(x0[self._index[v]])]
                total += float(np.log(p))
        return total

    def cbi_vector(self, v, x0):
        """Condition-by-intervention conditional nu(x_v(0) || x_-v(0))."""
        return self.tables[v][self._config(v, x0)]

    def log_complement(self, v, x0):
        """log nu(x_-v(0) || x_v(0)): all factors except node v's own."""
        total = 0.0
        with np.errstate(divide="ignore"):
            for w in self.nodes:
                if w == v:
                    continue
                p = self.tables[w][self._config(w, x0), int(x0[self._index[w]])]
                total += float(np.log(p))
        return total

    def sample_joint(self, rng):
        x0 = np.zeros(len(self.nodes), dtype=np.int64)
        for v in self._topo:
            x0[self._index[v]] = draw_categorical(rng, self.cbi_vector(v, x0),
                                                  total=1.0)
        return x0

    def sample_cbi(self, free, x0, rng):
        """Fill the ``free`` coordinates of x0 from the intervention law."""
        x0 = np.array(x0, dtype=np.int64)
        free = set(free)
        for v in self._topo:
            if v in free:
                x0[self._index[v]] = draw_categorical(
                    rng, self.cbi_vector(v, x0), total=1.0)
        return x0

    def equals(self, other):
        return (isinstance(other, BayesNetInitial)
                and self.nodes == other.nodes
                and self.alphabets == other.alphabets
                and self.edges == other.edges
                and all(np.array_equal(self.tables[v], other.tables[v])
                        for v in self.nodes))


@dataclass(frozen=True, eq=False)
class FullConditionalInitial:
    """Initial distribution given through its full conditionals.

    ``conditional(v, x0) -> (S_v,)`` evaluates nu(x_v(0) | x_-v(0)) and
    must be normalized within 1e-9; ``sampler(rng) -> x0`` draws a joint
    configuration.  The joint density is unavailable, so quantities that
    need it are defined only up to a constant.
    """

    nodes: tuple
    alphabets: tuple
    conditional: object
    sampler: object

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "alphabets", tuple(int(a) for a in self.alphabets))

    @cached_property
    def _index(self):
        return {v: i for i, v in enumerate(self.nodes)}

    def cbi_vector(self, v, x0):
        vec = np.asarray(self.conditional(v, x0), dtype=np.float64)
        if vec.shape != (self.alphabets[self._index[v]],):
            raise ValueError(f"conditional for {v} has wrong length")
        if np.any(vec < 0.0) or abs(vec.sum() - 1.0) > 1e-9:
            raise ValueError(f"conditional for {v} is not normalized within 1e-9")
        return vec

    def log_full(self, x0):
        raise NotImplementedError(
            "full-conditional initial distributions define densities only up "
            "to a constant; use the BN form where the joint is required")

    def log_complement(self, v, x0):
        # constant in x_v(0); dropping it leaves every ratio unchanged
        return 0.0

    def sample_joint(self, rng):
        x0 = np.asarray(self.sampler(rng), dtype=np.int64)
        if x0.shape != (len(self.nodes),):
            raise ValueError("sampler must return one state per node")
        return x0

    def sample_cbi(self, free, x0, rng):
        x0 = np.array(x0, dtype=np.int64)
        draw = self.sample_joint(rng)
        for v in free:
            vi = self._index[v]
            x0[vi] = draw[vi]
        return x0


@dataclass(frozen=True, eq=False)
class CtbnSpec:
    """Graph, alphabets, conditional intensity tables and initial law.

    ``cims[v]`` has shape (n_parent_configs(v), S_v, S_v) holding
    off-diagonal rates; diagonals are ignored on input and stored as zero.
    """

    nodes: tuple
    alphabets: tuple
    edges: tuple
    cims: dict
    initial: object

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "alphabets", tuple(int(a) for a in self.alphabets))
        object.__setattr__(self, "edges", tuple((a, b) for a, b in self.edges))
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("node names must be unique")
        if any(a < 1 for a in self.alphabets):
            raise ValueError("alphabets must have at least one state")
        known = set(self.nodes)
        seen = set()
        for a, b in self.edges:
            if a not in known or b not in known:
                raise ValueError(f"edge ({a}, {b}) names an unknown node")
            if a == b:
                raise ValueError(f"self-edge on {a} is not allowed")
            if (a, b) in seen:
                raise ValueError(f"duplicate edge ({a}, {b})")
            seen.add((a, b))
        cims = {}
        for v in self.nodes:
            if v not in self.cims:
                raise ValueError(f"CIM table missing for node {v}")
            t = np.array(self.cims[v], dtype=np.float64)
            sv = self.alphabets[self.nodes.index(v)]
            if t.ndim == 2:
                t = t[None, :, :]
            want = (self.n_parent_configs(v), sv, sv)
            if t.shape != want:
                raise ValueError(
                    f"CIM table for {v} has shape {t.shape}, expected {want} "
                    f"(one row block per parent configuration)")
            for c in range(t.shape[0]):
                np.fill_diagonal(t[c], 0.0)
            if not np.all(np.isfinite(t)):
                raise ValueError(f"CIM rates for {v} must be finite")
            if np.any(t < 0.0):
                raise ValueError(f"CIM rates for {v} must be nonnegative")
            t.setflags(write=False)
            cims[v] = t
        object.__setattr__(self, "cims", cims)
        if tuple(self.initial.nodes) != self.nodes or \
                tuple(self.initial.alphabets) != self.alphabets:
            raise ValueError("initial distribution disagrees with the node layout")

    # -- derived structure ------------------------------------------------

    def equals(self, other):
        return (isinstance(other, CtbnSpec)
                and self.nodes == other.nodes
                and self.alphabets == other.alphabets
                and self.edges == other.edges
                and all(np.array_equal(self.cims[v], other.cims[v])
                        for v in self.nodes)
                and self.initial.equals(other.initial))

    @cached_property
    def _index(self):
        return {v: i for i, v in enumerate(self.nodes)}

    def node_index(self, v):
        return self._index[v]

    def size(self, v):
        return self.alphabets[self._index[v]]

    @cached_property
    def parents(self):
        out = {v: [a for a, b in self.edges if b == v] for v in self.nodes}
        return {v: tuple(sorted(ps, key=self._index.get)) for v, ps in out.items()}

    @cached_property
    def children(self):
        out = {v: [b for a, b in self.edges if a == v] for v in self.nodes}
        return {v: tuple(sorted(cs, key=self._index.get)) for v, cs in out.items()}

    def n_parent_configs(self, v):
        n = 1
        for p in self.parents[v]:
            n *= self.size(p)
        return n

    def parent_strides(self, v):
        """Mixed-radix stride of each parent of v, declaration order."""
        return _mixed_radix_strides([self.size(p) for p in self.parents[v]])

    def parent_config(self, v, x):
        """Config index of v's parents inside a full state vector."""
        cfg = 0
        strides = self.parent_strides(v)
        for p, s in zip(self.parents[v], strides):
            cfg += int(x[self._index[p]]) * int(s)
        return cfg

    @cached_property
    def log_cims(self):
        out = {}
        with np.errstate(divide="ignore"):
            for v in self.nodes:
                lc = np.log(self.cims[v])
                for c in range(lc.shape[0]):
                    np.fill_diagonal(lc[c], -np.inf)
                lc.setflags(write=False)
                out[v] = lc
        return out

    @cached_property
    def exit_cims(self):
        out = {}
        for v in self.nodes:
            e = self.cims[v].sum(axis=2)
            e.setflags(write=False)
            out[v] = e
        return out

    @cached_property
    def _cim_matrix_cache(self):
        return {}

    def cim_matrix(self, v, cfg, support=None):
        """IntensityMatrix of node v under parent config cfg (cached).

        ``support`` restricts to the leading sub-alphabet [0, support];
        only valid when that set is closed (see closed_support_cap).
        """
        key = (v, int(cfg), support)
        cache = self._cim_matrix_cache
        if key not in cache:
            block = self.cims[v][cfg]
            if support is not None:
                block = block[:support + 1, :support + 1]
            cache[key] = IntensityMatrix(block)
        return cache[key]

    @cached_property
    def _skeleton_cache(self):
        return {}

    def cached_skeleton(self, v, cfg, lam, support=None):
        from .markov import uniformize

        key = (v, int(cfg), float(lam), support)
        cache = self._skeleton_cache
        if key not in cache:
            cache[key] = uniformize(self.cim_matrix(v, cfg, support), lam)
        return cache[key]

    @cached_property
    def _support_cache(self):
        return {}

    def closed_support_cap(self, v):
        """Largest state index node v can ever reach, or None.

        Returns k when states above k carry no initial mass and no rate
        from [0, k] leads above k under any parent configuration, so the
        process provably stays in [0, k]; None when no such k < S-1
        exists (or the initial law cannot certify its support).
        """
        cache = self._support_cache
        if v in cache:
            return cache[v]
        sv = self.size(v)
        init = self.initial
        if not hasattr(init, "tables"):
            cache[v] = None
            return None
        table = init.tables[v]
        positive = np.nonzero(table.max(axis=0) > 0.0)[0]
        k = int(positive.max())
        rates = self.cims[v]
        while k < sv - 1:
            outflow = rates[:, :k + 1, k + 1:]
            if outflow.max() == 0.0:
                break
            reach = np.nonzero(outflow.sum(axis=(0, 1)) > 0.0)[0]
            k = k + 1 + int(reach.max())
        cap = k if k < sv - 1 else None
        cache[v] = cap
        return cap


@dataclass(frozen=True, eq=False)
class CtbnTrajectory:
    """One sample path per node over a common interval."""

    nodes: tuple
    paths: dict
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "paths", dict(self.paths))
        if self.validate:
            if set(self.paths) != set(self.nodes):
                raise ValueError("trajectory must hold exactly one path per node")
            spans = {(p.t_min, p.t_max) for p in self.paths.values()}
            if len(spans) != 1:
                raise ValueError("all node paths must share the interval")
            merged = np.concatenate([p.times for p in self.paths.values()])
            if merged.size != np.unique(merged).size:
                raise ValueError("distinct nodes must never jump at the same instant")

    @property
    def t_min(self):
        return self.paths[self.nodes[0]].t_min

    @property
    def t_max(self):
        return self.paths[self.nodes[0]].t_max

    def initial_config(self):
        return np.asarray([self.paths[v].states[0] for v in self.nodes],
                          dtype=np.int64)

    def config_at(self, t):
        return np.asarray([self.paths[v].state_at(t) for v in self.nodes],
                          dtype=np.int64)

    def with_path(self, v, path, validate=True):
        paths = dict(self.paths)
        paths[v] = path
        return CtbnTrajectory(self.nodes, paths, validate=validate)

    def equals(self, other):
        return (self.nodes == other.nodes
                and all(self.paths[v].equals(other.paths[v])
                        for v in self.nodes))


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Per-node jump counts n_v(c; a, a') and holding times t_v(c; a)."""

    counts: dict
    durations: dict

    def total_duration(self, v):
        return float(self.durations[v].sum())


def parent_config_timeline(spec, v, traj, exclude=None):
    """Timeline of v's parent configuration along a trajectory.

    Returns (times, cfg_seq); ``exclude`` drops one parent from
    the encoding (its stride contribution is left at zero).
    """
    times = np.empty(0, dtype=np.float64)
    seq = np.zeros(1, dtype=np.int64)
    strides = spec.parent_strides(v)
    for p, stride in zip(spec.parents[v], strides):
        if p == exclude:
            continue
        path = traj.paths[p]
        times, seq = kernels.combine_timeline(
            times, seq, path.times, path.states, int(stride))
    return times, seq


def sufficient_stats(spec, traj):
    """Jump counts and holding durations keyed by parent configuration."""
    counts = {}
    durations = {}
    for v in spec.nodes:
        path = traj.paths[v]
        cfg_times, cfg_seq = parent_config_timeline(spec, v, traj)
        c, d = kernels.stats_scan(
            path.t_min, path.t_max, path.times, path.states, cfg_times,
            cfg_seq, spec.n_parent_configs(v), spec.size(v))
        counts[v] = c
        durations[v] = d
    return SufficientStats(counts, durations)


def log_rho(spec, v, traj):
    """Log density factor of node v given its parents' trajectories."""
    path = traj.paths[v]
    cfg_times, cfg_seq = parent_config_timeline(spec, v, traj)
    return kernels.rho_scan(
        path.t_min, path.t_max, path.times, path.states, cfg_times, cfg_seq,
        spec.log_cims[v], spec.exit_cims[v])


def log_density(spec, traj):
    """Log density of a complete trajectory: log nu(x(0)) + sum of factors."""
    total = spec.initial.log_full(traj.initial_config())
    for v in spec.nodes:
        total += log_rho(spec, v, traj)
    return total


def log_cbi(spec, hidden_set, traj):
    """Condition-by-intervention factor: sum of log rho over hidden nodes."""
    hidden = set(hidden_set)
    unknown = hidden - set(spec.nodes)
    if unknown:
        raise ValueError(f"unknown nodes in hidden set: {sorted(unknown)}")
    return sum(log_rho(spec, v, traj) for v in spec.nodes if v in hidden)


def local_regimes(spec, v, traj, lambda_mult=2.5, support=None):
    """Piecewise-homogeneous law of node v given its parents' paths.

    Breakpoints are the parents' jump times; regime j carries the CIM for
    the parent configuration then in force, with uniformization rate
    lambda_mult times its max exit rate.  ``support`` restricts the node
    to a closed leading sub-alphabet (exact when closed_support_cap
    certifies it), which keeps uniformization rates proportionate to the
    rates actually reachable.
    """
    path = traj.paths[v]
    cfg_times, cfg_seq = parent_config_timeline(spec, v, traj)
    regimes = tuple(spec.cim_matrix(v, c, support) for c in cfg_seq)
    lambdas = np.asarray([lambda_mult * q.max_rate for q in regimes])
    part = RegimePartition(path.t_min, path.t_max, cfg_times, regimes, lambdas)
    # pre-populate the skeleton cache so repeated sweeps share the arrays
    part.__dict__["skeletons"] = tuple(
        spec.cached_skeleton(v, c, l, support)
        for c, l in zip(cfg_seq, lambdas))
    return part


def node_conditional_logdensity(spec, v, traj):
    """Split the trajectory density into node v's prior and likelihood.

    Returns (log prior of xi_v, log likelihood of the rest given xi_v);
    their sum equals log_density up to a term constant in xi_v.
    """
    x0 = traj.initial_config()
    with np.errstate(divide="ignore"):
        prior = float(np.log(
            spec.initial.cbi_vector(v, x0)[int(x0[spec.node_index(v)])]))
    prior += log_rho(spec, v, traj)
    lik = spec.initial.log_complement(v, x0)
    for w in spec.children[v]:
        lik += log_rho(spec, w, traj)
    return prior, lik


def amalgamate(spec, cap=10_000):
    """Intensity matrix of the joint process on the product state space.

    Joint states use the little-endian mixed-radix encoding over the node
    declaration order.  Only usable for desk-scale specs (oracles, tests).
    """
    sizes = list(spec.alphabets)
    n = int(np.prod(sizes))
    if n > cap:
        raise ValueError(f"product state space {n} exceeds the cap {cap}")
    strides = _mixed_radix_strides(sizes)
    joint = np.arange(n, dtype=np.int64)
    digits = np.stack([(joint // strides[i]) % sizes[i]
                       for i in range(len(sizes))], axis=1)
    q = np.zeros((n, n))
    for vi, v in enumerate(spec.nodes):
        cfgs = np.zeros(n, dtype=np.int64)
        for p, ps in zip(spec.parents[v], spec.parent_strides(v)):
            cfgs += digits[:, spec.node_index(p)] * int(ps)
        xv = digits[:, vi]
        for a_next in range(sizes[vi]):
            mask = xv != a_next
            src = joint[mask]
            dst = src + (a_next - xv[mask]) * strides[vi]
            q[src, dst] = spec.cims[v][cfgs[mask], xv[mask], a_next]
    return IntensityMatrix(q)
