"""Metropolis-within-Gibbs sweep over hidden CTBN nodes.

Each sweep visits every hidden node: the node's piecewise-homogeneous
prior (given the current parents) is rebuilt, its sample path is lifted
to a marked path by resampling the virtual points from their exact
conditional law, the configured Metropolis moves run against the node's
conditional target, and the path is collapsed back.  Observed nodes are
never touched.  The posterior estimator is the empirical frequency of
states on a fixed time grid over post-burn-in, thinned sweeps.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .ctbn import (CtbnTrajectory, local_regimes, log_density, log_rho,
                   parent_config_timeline)
from .markov import (SamplePath, collapse, draw_categorical, lift,
                     log_density_marked_piecewise)
from .moves import KernelState, MoveDiagnostics, MoveSchedule, mh_step

__all__ = [
    "Evidence", "GibbsConfig", "PosteriorEstimate", "InitializationError",
    "NodeConditionalLikelihood", "init_trajectory", "gibbs_sweep", "run",
]


class InitializationError(RuntimeError):
    """Raised when no finite-density starting trajectory could be drawn."""


@dataclass(frozen=True, eq=False)
class Evidence:
    """Completely observed node paths over the inference interval."""

    paths: dict
    t_min: float = None
    t_max: float = None

    def __post_init__(self):
        object.__setattr__(self, "paths", dict(self.paths))
        spans = {(p.t_min, p.t_max) for p in self.paths.values()}
        if len(spans) > 1:
            raise ValueError("observed paths must share the interval")
        if spans:
            lo, hi = spans.pop()
            if self.t_min is None:
                object.__setattr__(self, "t_min", lo)
            if self.t_max is None:
                object.__setattr__(self, "t_max", hi)
            if (self.t_min, self.t_max) != (lo, hi):
                raise ValueError("explicit interval disagrees with the paths")
        elif self.t_min is None or self.t_max is None:
            raise ValueError("empty evidence needs an explicit interval")

    @property
    def nodes(self):
        return set(self.paths)


@dataclass(frozen=True)
class GibbsConfig:
    """Sampler configuration; ``burn_in`` defaults to a tenth of the run."""

    iterations: int
    burn_in: int = None
    thinning: int = 1
    seed: int = 0
    scan: str = "systematic"
    schedule: MoveSchedule = field(default_factory=MoveSchedule)
    lambda_mult: float = 2.5
    grid_points: int = 101
    chains: int = 1
    incremental: bool = False
    debug_checks: bool = False

    def __post_init__(self):
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.iterations // 10)
        if not self.iterations > self.burn_in >= 0:
            raise ValueError("need iterations > burn_in >= 0")
        if self.thinning < 1:
            raise ValueError("thinning must be at least 1")
        if self.scan not in ("systematic", "random"):
            raise ValueError("scan must be systematic or random")
        if self.grid_points < 2:
            raise ValueError("grid needs at least the two endpoints")
        if self.chains < 1:
            raise ValueError("need at least one chain")
        if self.lambda_mult < 1.0:
            raise ValueError("lambda multiplier below 1 breaks uniformization")


@dataclass
class PosteriorEstimate:
    """Grid marginals per hidden node plus run diagnostics."""

    grid: np.ndarray
    marginals: dict
    diagnostics: dict


def _observed_event_table(evidence):
    """All observed jumps merged: arrays (times, node_key, new_state)."""
    times, nodes, states = [], [], []
    for v, path in evidence.paths.items():
        times.append(path.times)
        nodes.extend([v] * path.times.size)
        states.append(path.states[1:])
    if not times:
        return np.empty(0), [], np.empty(0, dtype=np.int64)
    t = np.concatenate(times)
    order = np.argsort(t)
    s = np.concatenate(states)[order]
    n = [nodes[i] for i in order]
    return t[order], n, s


def _forward_cbi_sample(spec, evidence, rng):
    """Forward-sample hidden nodes under condition-by-intervention dynamics."""
    t_min, t_max = evidence.t_min, evidence.t_max
    hidden = [v for v in spec.nodes if v not in evidence.nodes]
    x0 = np.zeros(len(spec.nodes), dtype=np.int64)
    for v in evidence.nodes:
        x0[spec.node_index(v)] = evidence.paths[v].initial_state
    x0 = spec.initial.sample_cbi(hidden, x0, rng)
    obs_t, obs_v, obs_s = _observed_event_table(evidence)
    x = x0.copy()
    rec_times = {v: [] for v in hidden}
    rec_states = {v: [int(x0[spec.node_index(v)])] for v in hidden}
    t = t_min
    ptr = 0
    while True:
        exits = np.asarray([
            spec.exit_cims[v][spec.parent_config(v, x), x[spec.node_index(v)]]
            for v in hidden])
        total = float(exits.sum())
        t_obs = float(obs_t[ptr]) if ptr < obs_t.size else t_max
        t_jump = t + rng.exponential(1.0 / total) if total > 0.0 else np.inf
        if t_jump < t_obs:
            v = hidden[draw_categorical(rng, exits, total=total)]
            vi = spec.node_index(v)
            row = spec.cims[v][spec.parent_config(v, x), x[vi]]
            target = draw_categorical(rng, row)
            x[vi] = target
            rec_times[v].append(t_jump)
            rec_states[v].append(target)
            t = t_jump
        else:
            if t_obs >= t_max:
                break
            x[spec.node_index(obs_v[ptr])] = obs_s[ptr]
            t = t_obs
            ptr += 1
    paths = dict(evidence.paths)
    for v in hidden:
        paths[v] = SamplePath(t_min, t_max, np.asarray(rec_times[v]),
                              np.asarray(rec_states[v], dtype=np.int64))
    return CtbnTrajectory(spec.nodes, paths)


def _density_is_finite(spec, traj):
    for v in spec.nodes:
        if not np.isfinite(log_rho(spec, v, traj)):
            return False
    try:
        return np.isfinite(spec.initial.log_full(traj.initial_config()))
    except NotImplementedError:
        return True


def init_trajectory(spec, evidence, rng, max_retries=100):
    """Starting trajectory: evidence plus forward-sampled hidden paths.

    Retries until the trajectory has finite density under the spec, which
    can fail when observed jumps are impossible given sampled parents.
    """
    for _ in range(max_retries):
        traj = _forward_cbi_sample(spec, evidence, rng)
        if _density_is_finite(spec, traj):
            return traj
    raise InitializationError(
        f"no finite-density initialization found in {max_retries} attempts")


class NodeConditionalLikelihood:
    """log L(xi_-v | xi_v) for one node against a frozen rest-trajectory.

    Depends on the marked path only through its collapse.  ``full``
    recomputes everything; ``delta`` updates a cached value from the time
    window a move touched, and must agree with ``full`` to 1e-9.
    """

    def __init__(self, spec, v, traj):
        self.spec = spec
        self.v = v
        self.vi = spec.node_index(v)
        self.x0_rest = traj.initial_config()
        self.children = []
        for w in spec.children[v]:
            path_w = traj.paths[w]
            other_t, other_s = parent_config_timeline(spec, w, traj, exclude=v)
            parents = spec.parents[w]
            stride = int(spec.parent_strides(w)[parents.index(v)])
            self.children.append((path_w.times, path_w.states, other_t,
                                  other_s, stride, spec.log_cims[w],
                                  spec.exit_cims[w]))

    def _initial_term(self, xv0):
        x0 = self.x0_rest.copy()
        x0[self.vi] = xv0
        return self.spec.initial.log_complement(self.v, x0)

    @staticmethod
    def _collapse_arrays(path):
        keep = path.states[1:] != path.states[:-1]
        times = path.times[keep]
        states = np.concatenate((path.states[:1], path.states[1:][keep]))
        return times, states

    @staticmethod
    def _window_values(path, lo, hi):
        """Collapsed value timeline of ``path`` restricted to [lo, hi)."""
        i0 = int(np.searchsorted(path.times, lo, side="right"))
        i1 = int(np.searchsorted(path.times, hi, side="left"))
        times = path.times[i0:i1]
        states = path.states[i0:i1 + 1]
        keep = states[1:] != states[:-1]
        return times[keep], np.concatenate((states[:1], states[1:][keep]))

    def full(self, path):
        v_times, v_states = self._collapse_arrays(path)
        total = self._initial_term(int(v_states[0]))
        for (w_t, w_s, o_t, o_s, stride, lr, ex) in self.children:
            cfg_t, cfg_s = kernels.combine_timeline(o_t, o_s, v_times,
                                                    v_states, stride)
            total += kernels.rho_scan(path.t_min, path.t_max, w_t, w_s,
                                      cfg_t, cfg_s, lr, ex)
        return float(total)

    def _window_term(self, lo, hi, v_times, v_states):
        total = 0.0
        for (w_t, w_s, o_t, o_s, stride, lr, ex) in self.children:
            j0 = int(np.searchsorted(o_t, lo, side="right"))
            j1 = int(np.searchsorted(o_t, hi, side="left"))
            cfg_t, cfg_s = kernels.combine_timeline(
                o_t[j0:j1], o_s[j0:j1 + 1], v_times, v_states, stride)
            total += kernels.rho_scan(lo, hi, w_t, w_s, cfg_t, cfg_s, lr, ex)
        return total

    def delta(self, old_path, prop, old_ll):
        new_ll = old_ll
        if prop.x0_changed:
            new_ll += (self._initial_term(int(prop.path.states[0]))
                       - self._initial_term(int(old_path.states[0])))
        if prop.window is not None:
            lo, hi = prop.window
            if hi > lo:
                new_vt, new_vs = self._window_values(prop.path, lo, hi)
                old_vt, old_vs = self._window_values(old_path, lo, hi)
                new_ll += (self._window_term(lo, hi, new_vt, new_vs)
                           - self._window_term(lo, hi, old_vt, old_vs))
        return float(new_ll)


def _update_node(spec, v, traj, config, rng, diag):
    support = spec.closed_support_cap(v)
    regimes = local_regimes(spec, v, traj, config.lambda_mult, support=support)
    x0 = traj.initial_config()
    nu_vec = np.asarray(spec.initial.cbi_vector(v, x0), dtype=np.float64)
    if support is not None:
        nu_vec = nu_vec[:support + 1]
    marked = lift(traj.paths[v], regimes, rng)
    evaluator = NodeConditionalLikelihood(spec, v, traj)
    state = KernelState(marked, evaluator.full(marked),
                        log_density_marked_piecewise(marked, regimes, nu_vec))
    for kern in config.schedule.build_kernels(regimes, nu_vec):
        state = mh_step(state, kern, evaluator, rng, diagnostics=diag,
                        incremental=config.incremental)
    if config.debug_checks:
        assert abs(state.loglik - evaluator.full(state.path)) < 1e-9
        fresh = log_density_marked_piecewise(state.path, regimes, nu_vec)
        assert abs(state.logprior - fresh) < 1e-9
    finite = np.isfinite(state.loglik) and np.isfinite(state.logprior)
    return traj.with_path(v, collapse(state.path), validate=False), finite


def gibbs_sweep(spec, traj, evidence, config, rng, diagnostics=None,
                counters=None):
    """One Metropolis-within-Gibbs sweep; observed nodes stay untouched."""
    hidden = [v for v in spec.nodes if v not in evidence.nodes]
    if config.scan == "random" and hidden:
        hidden = [hidden[i] for i in rng.permutation(len(hidden))]
    for v in hidden:
        traj, finite = _update_node(spec, v, traj, config, rng, diagnostics)
        if counters is not None and not finite:
            counters["nonfinite_events"] += 1
    return traj


def _grid_state_indices(path, grid):
    return np.searchsorted(path.times, grid, side="right")


def _run_chain(spec, evidence, config, seed_seq):
    rng = np.random.default_rng(seed_seq)
    hidden = [v for v in spec.nodes if v not in evidence.nodes]
    grid = np.linspace(evidence.t_min, evidence.t_max, config.grid_points)
    counts = {v: np.zeros((config.grid_points, spec.size(v)), dtype=np.int64)
              for v in hidden}
    diag = MoveDiagnostics()
    counters = {"nonfinite_events": 0}
    traj = init_trajectory(spec, evidence, rng)
    kept = 0
    t0 = time.perf_counter()
    for sweep in range(config.iterations):
        traj = gibbs_sweep(spec, traj, evidence, config, rng,
                           diagnostics=diag, counters=counters)
        if sweep >= config.burn_in and \
                (sweep - config.burn_in) % config.thinning == 0:
            kept += 1
            for v in hidden:
                states = traj.paths[v].states[
                    _grid_state_indices(traj.paths[v], grid)]
                counts[v][np.arange(config.grid_points), states] += 1
    elapsed = time.perf_counter() - t0
    return counts, kept, diag, counters, elapsed


def run(spec, evidence, config):
    """Full posterior run; returns the grid estimator and diagnostics.

    With several chains, estimates pool by averaging the per-chain
    frequencies; per-chain diagnostics are retained.
    """
    grid = np.linspace(evidence.t_min, evidence.t_max, config.grid_points)
    hidden = [v for v in spec.nodes if v not in evidence.nodes]
    seqs = np.random.SeedSequence(config.seed).spawn(config.chains)
    if config.chains == 1:
        results = [_run_chain(spec, evidence, config, seqs[0])]
    else:
        with ThreadPoolExecutor(max_workers=min(config.chains, 8)) as pool:
            futures = [pool.submit(_run_chain, spec, evidence, config, s)
                       for s in seqs]
            results = [f.result() for f in futures]
    total_counts = {v: np.zeros((config.grid_points, spec.size(v)))
                    for v in hidden}
    total_kept = 0
    merged = MoveDiagnostics()
    nonfinite = 0
    per_chain = []
    for counts, kept, diag, counters, elapsed in results:
        for v in hidden:
            total_counts[v] += counts[v]
        total_kept += kept
        merged.merge(diag)
        nonfinite += counters["nonfinite_events"]
        per_chain.append({"kept": kept, "seconds": elapsed,
                          "acceptance_rate": diag.acceptance_rate()})
    marginals = {v: total_counts[v] / total_kept for v in hidden}
    diagnostics = {
        "acceptance": merged.as_dict(),
        "acceptance_rate": merged.acceptance_rate(),
        "kept": total_kept,
        "nonfinite_events": nonfinite,
        "seconds": sum(c["seconds"] for c in per_chain),
        "per_chain": per_chain,
    }
    return PosteriorEstimate(grid, marginals, diagnostics)
