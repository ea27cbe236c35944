"""Metropolis-Hastings step and proposal moves on marked paths.

Every move returns a Proposal carrying, besides the candidate path, the
two non-likelihood pieces of the acceptance ratio in log space:

* ``log_prior_delta`` -- log pi(xx') - log pi(xx) under the marked-path
  prior of the regime partition, and
* ``log_q_ratio``     -- log q(xx' -> xx) - log q(xx -> xx').

The MH acceptance is then min(1, exp(log_prior_delta + log_q_ratio +
logL' - logL)).  Time-symmetric moves contribute zeros; the
dimension-changing pairs implement the reversible-jump ratios, with the
interval length generalizing the unit-interval formulas (the n/lambda
factor becomes n / (lambda * (t_max - t_min))).  ``balance_check``
verifies the bookkeeping numerically against directly evaluated densities.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .markov import MarkedPath, draw_categorical, log_density_marked_piecewise

__all__ = [
    "Proposal", "KernelState", "MoveSchedule", "MoveDiagnostics",
    "FlatLikelihood", "mh_step", "change_time", "change_state",
    "propose_dimension", "add_random_point", "erase_random_point",
    "add_virtual_point", "erase_virtual_point", "balance_check",
]


@dataclass
class Proposal:
    path: MarkedPath
    log_prior_delta: float
    log_q_ratio: float
    kind: str
    changed: bool = True
    window: tuple = None
    x0_changed: bool = False
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class KernelState:
    """Current marked path with cached log likelihood and log prior."""

    path: MarkedPath
    loglik: float
    logprior: float

    @classmethod
    def fresh(cls, path, evaluator, regimes, initial_dist):
        return cls(path, _full_loglik(evaluator, path),
                   log_density_marked_piecewise(path, regimes, initial_dist))


class FlatLikelihood:
    """Evidence-free likelihood: log L is identically zero."""

    def full(self, path):
        return 0.0


class MoveDiagnostics:
    """Per-move-kind accept/reject/no-op counters."""

    def __init__(self):
        self.counts = {}

    def record(self, kind, outcome):
        slot = self.counts.setdefault(
            kind, {"proposed": 0, "accepted": 0, "noop": 0, "flagged": 0})
        if outcome in ("accepted", "rejected"):
            slot["proposed"] += 1
            if outcome == "accepted":
                slot["accepted"] += 1
        else:
            slot[outcome] += 1

    def acceptance_rate(self, kinds=None):
        kinds = kinds if kinds is not None else list(self.counts)
        prop = sum(self.counts[k]["proposed"] for k in kinds if k in self.counts)
        acc = sum(self.counts[k]["accepted"] for k in kinds if k in self.counts)
        return acc / prop if prop else float("nan")

    def merge(self, other):
        for kind, slot in other.counts.items():
            mine = self.counts.setdefault(
                kind, {"proposed": 0, "accepted": 0, "noop": 0, "flagged": 0})
            for key, val in slot.items():
                mine[key] += val

    def as_dict(self):
        return {k: dict(v) for k, v in self.counts.items()}


def _full_loglik(evaluator, path):
    if hasattr(evaluator, "full"):
        return float(evaluator.full(path))
    return float(evaluator(path))


def _identity(path, kind, **meta):
    return Proposal(path, 0.0, 0.0, kind, changed=False, meta=meta)


def _draw_interior_time(rng, lo, hi, path, regimes):
    """Uniform draw on (lo, hi) avoiding exact ties with existing times."""
    while True:
        t = rng.uniform(lo, hi)
        if t <= lo or t >= hi:
            continue
        i = np.searchsorted(path.times, t)
        if i < path.times.size and path.times[i] == t:
            continue
        j = np.searchsorted(regimes.breakpoints, t)
        if j < regimes.breakpoints.size and regimes.breakpoints[j] == t:
            continue
        return t


def _insert_at(arr, idx, value):
    """np.insert without its indexing overhead (hot path)."""
    out = np.empty(arr.size + 1, dtype=arr.dtype)
    out[:idx] = arr[:idx]
    out[idx] = value
    out[idx + 1:] = arr[idx:]
    return out


def _delete_at(arr, idx):
    out = np.empty(arr.size - 1, dtype=arr.dtype)
    out[:idx] = arr[:idx]
    out[idx:] = arr[idx + 1:]
    return out


def _sorted_interior_uniform(rng, lo, hi, n):
    """n sorted uniforms strictly inside (lo, hi), strictly increasing."""
    times = np.sort(rng.uniform(lo, hi, size=n))
    while (times.size and (times[0] <= lo or times[-1] >= hi)) or \
            np.any(np.diff(times) <= 0.0):
        bad = np.zeros(n, dtype=bool)
        bad[:1] = times[:1] <= lo
        bad[-1:] |= times[-1:] >= hi
        bad[1:] |= np.diff(times) <= 0.0
        times[bad] = rng.uniform(lo, hi, size=int(bad.sum()))
        times.sort()
    return times


# -- time moves ------------------------------------------------------------

def change_time(path, rng, regimes, variant="single", mode="per_regime"):
    """Resample potential jump times, keeping the skeleton states.

    ``variant`` picks one point or all of them; ``mode`` decides whether
    a point stays inside its regime or may cross breakpoints ("global",
    allowed only under a uniform uniformization rate).  The proposal is
    symmetric; the prior delta is nonzero only when points change regime.
    """
    if mode not in ("per_regime", "global"):
        raise ValueError(f"unknown change_time mode {mode!r}")
    if mode == "global" and not regimes.uniform_lambda:
        raise ValueError("global change_time requires a uniform uniformization rate")
    n = path.n
    if n == 0:
        return _identity(path, "change_time")
    if variant == "single":
        idx = int(rng.integers(n))
        t_old = float(path.times[idx])
        lo = path.t_min if idx == 0 else float(path.times[idx - 1])
        hi = path.t_max if idx == n - 1 else float(path.times[idx + 1])
        if mode == "per_regime":
            j = regimes.regime_index(t_old)
            r_lo, r_hi = regimes.regime_bounds(j)
            lo, hi = max(lo, r_lo), min(hi, r_hi)
        t_new = _draw_interior_time(rng, lo, hi, path, regimes)
        times = path.times.copy()
        times[idx] = t_new
        prior_delta = 0.0
        if mode == "global":
            j_old = regimes.regime_index(t_old)
            j_new = regimes.regime_index(t_new)
            if j_new != j_old:
                a, b = int(path.states[idx]), int(path.states[idx + 1])
                prior_delta = (regimes.skeletons[j_new].log_probs[a, b]
                               - regimes.skeletons[j_old].log_probs[a, b])
        new_path = MarkedPath(path.t_min, path.t_max, times, path.states,
                              validate=False)
        if path.states[idx + 1] == path.states[idx]:
            window = None
        else:
            window = (min(t_old, t_new), max(t_old, t_new))
        return Proposal(new_path, prior_delta, 0.0, "change_time",
                        window=window,
                        meta={"variant": "single", "idx": idx,
                              "support": (lo, hi)})
    if variant == "block":
        # resample every time inside one uniformly chosen regime: the
        # anchor pair (i_1, i_2) brackets that regime's points, so the
        # move is symmetric and regime assignments are untouched
        j = int(rng.integers(regimes.n_regimes))
        r_lo, r_hi = regimes.regime_bounds(j)
        lo_i = int(np.searchsorted(path.times, r_lo, side="left"))
        hi_i = int(np.searchsorted(path.times, r_hi, side="left"))
        if hi_i == lo_i:
            return _identity(path, "change_time")
        times = path.times.copy()
        times[lo_i:hi_i] = _sorted_interior_uniform(rng, r_lo, r_hi,
                                                    hi_i - lo_i)
        new_path = MarkedPath(path.t_min, path.t_max, times, path.states,
                              validate=False)
        segment_states = path.states[lo_i:hi_i + 1]
        if bool(np.all(segment_states[1:] == segment_states[:-1])):
            window = None
        else:
            window = (max(path.t_min, r_lo), min(path.t_max, r_hi))
        return Proposal(new_path, 0.0, 0.0, "change_time", window=window,
                        meta={"variant": "block", "regime": j,
                              "count": hi_i - lo_i})
    if variant != "all":
        raise ValueError(f"unknown change_time variant {variant!r}")
    if mode == "per_regime":
        regs = regimes.regime_indices(path.times)
        times = path.times.copy()
        for j in np.unique(regs):
            sel = regs == j
            r_lo, r_hi = regimes.regime_bounds(int(j))
            times[sel] = _sorted_interior_uniform(rng, r_lo, r_hi,
                                                  int(sel.sum()))
        prior_delta = 0.0
    else:
        times = _sorted_interior_uniform(rng, path.t_min, path.t_max, n)
        regs_old = regimes.regime_indices(path.times)
        regs_new = regimes.regime_indices(times)
        lp = np.stack([s.log_probs for s in regimes.skeletons])
        a, b = path.states[:-1], path.states[1:]
        prior_delta = float(lp[regs_new, a, b].sum() - lp[regs_old, a, b].sum())
    new_path = MarkedPath(path.t_min, path.t_max, times, path.states,
                          validate=False)
    window = None if bool(np.all(path.virtual_mask())) else \
        (path.t_min, path.t_max)
    return Proposal(new_path, prior_delta, 0.0, "change_time", window=window,
                    meta={"variant": "all", "mode": mode})


# -- skeleton moves ---------------------------------------------------------

def _bridge_weights(path, i, regimes, initial_dist):
    """Unnormalized Gibbs weights for resampling skeleton state i."""
    n = path.n
    if i == 0:
        w = np.asarray(initial_dist, dtype=np.float64).copy()
        if n >= 1:
            j = regimes.regime_index(float(path.times[0]))
            w = w * regimes.skeletons[j].probs[:, path.states[1]]
    elif i == n:
        j = regimes.regime_index(float(path.times[n - 1]))
        w = regimes.skeletons[j].probs[path.states[n - 1], :].copy()
    else:
        j_i = regimes.regime_index(float(path.times[i - 1]))
        j_next = regimes.regime_index(float(path.times[i]))
        w = (regimes.skeletons[j_i].probs[path.states[i - 1], :]
             * regimes.skeletons[j_next].probs[:, path.states[i + 1]])
    return w


def change_state(path, rng, regimes, initial_dist):
    """Gibbs update of one skeleton state from its Markov bridge.

    The proposal is reversible for the marked-path prior by construction,
    so acceptance only weighs the likelihood.
    """
    n = path.n
    i = int(rng.integers(n + 1))
    w = _bridge_weights(path, i, regimes, initial_dist)
    z = float(w.sum())
    if z == 0.0:
        return _identity(path, "change_state", degenerate=True)
    x_old = int(path.states[i])
    x_new = draw_categorical(rng, w, total=z)
    with np.errstate(divide="ignore"):
        delta = float(np.log(w[x_new]) - np.log(w[x_old]))
    states = path.states.copy()
    states[i] = x_new
    new_path = MarkedPath(path.t_min, path.t_max, path.times, states,
                          validate=False)
    if x_new == x_old:
        window = None
    else:
        lo = path.t_min if i == 0 else float(path.times[i - 1])
        hi = path.t_max if i == n else float(path.times[i])
        window = (lo, hi)
    return Proposal(new_path, delta, -delta, "change_state", window=window,
                    x0_changed=(i == 0 and x_new != x_old),
                    meta={"i": i})


# -- dimension moves --------------------------------------------------------

def _add_selection_logprob(prev_state, succ_state, skel_star, skel_next, x_star,
                           bridge):
    """Log probability of picking ``x_star`` in an add move."""
    if bridge and succ_state is not None:
        w = skel_star.probs[prev_state, :] * skel_next.probs[:, succ_state]
        z = w.sum()
        if z == 0.0 or w[x_star] == 0.0:
            return -np.inf
        return float(np.log(w[x_star] / z))
    p = skel_star.probs[prev_state, x_star]
    return float(np.log(p)) if p > 0.0 else -np.inf


def add_random_point(path, rng, regimes, bridge=False):
    """Insert a potential jump at a uniform time with a sampled mark.

    The mark comes from the predecessor's skeleton row (or the normalized
    Markov bridge when ``bridge`` is set); the acceptance ratio follows the
    reversible-jump bookkeeping against erase_random_point.
    """
    t_star = _draw_interior_time(rng, path.t_min, path.t_max, path, regimes)
    idx = int(np.searchsorted(path.times, t_star))
    prev_state = int(path.states[idx])
    succ_state = int(path.states[idx + 1]) if idx < path.n else None
    j_star = regimes.regime_index(t_star)
    skel_star = regimes.skeletons[j_star]
    skel_next = None
    if succ_state is not None:
        j_next = regimes.regime_index(float(path.times[idx]))
        skel_next = regimes.skeletons[j_next]
    if bridge and succ_state is not None:
        w = skel_star.probs[prev_state, :] * skel_next.probs[:, succ_state]
        z = float(w.sum())
        if z == 0.0:
            return _identity(path, "add_random_point", degenerate=True)
        x_star = draw_categorical(rng, w, total=z)
    else:
        row = skel_star.cum_probs[prev_state]
        x_star = min(int(np.searchsorted(row, rng.random(), side="right")),
                     skel_star.size - 1)
    lam = float(regimes.lambdas[j_star])
    prior_delta = math.log(lam) if lam > 0.0 else -np.inf
    prior_delta += float(skel_star.log_probs[prev_state, x_star])
    if succ_state is not None:
        prior_delta += float(skel_next.log_probs[x_star, succ_state]
                             - skel_next.log_probs[prev_state, succ_state])
    length = path.t_max - path.t_min
    sel = _add_selection_logprob(prev_state, succ_state, skel_star, skel_next,
                                 x_star, bridge)
    log_q_ratio = -math.log(path.n + 1) - (-math.log(length) + sel)
    times = _insert_at(path.times, idx, t_star)
    states = _insert_at(path.states, idx + 1, x_star)
    new_path = MarkedPath(path.t_min, path.t_max, times, states, validate=False)
    if x_star == prev_state:
        window = None
    else:
        hi = float(path.times[idx]) if idx < path.n else path.t_max
        window = (t_star, hi)
    return Proposal(new_path, prior_delta, log_q_ratio, "add_random_point",
                    window=window,
                    meta={"idx": idx, "t_star": t_star, "bridge": bridge})


def erase_random_point(path, rng, regimes, bridge=False):
    """Remove a uniformly chosen potential jump (inverse of the add move)."""
    n = path.n
    if n == 0:
        return _identity(path, "erase_random_point")
    idx = int(rng.integers(n))
    t_i = float(path.times[idx])
    x_i = int(path.states[idx + 1])
    prev_state = int(path.states[idx])
    succ_state = int(path.states[idx + 2]) if idx < n - 1 else None
    j_i = regimes.regime_index(t_i)
    skel_i = regimes.skeletons[j_i]
    skel_next = None
    if succ_state is not None:
        j_next = regimes.regime_index(float(path.times[idx + 1]))
        skel_next = regimes.skeletons[j_next]
    lam = float(regimes.lambdas[j_i])
    prior_delta = -(math.log(lam) if lam > 0.0 else -np.inf)
    prior_delta -= float(skel_i.log_probs[prev_state, x_i])
    if succ_state is not None:
        prior_delta -= float(skel_next.log_probs[x_i, succ_state]
                             - skel_next.log_probs[prev_state, succ_state])
    length = path.t_max - path.t_min
    sel = _add_selection_logprob(prev_state, succ_state, skel_i, skel_next,
                                 x_i, bridge)
    log_q_ratio = (-math.log(length) + sel) - (-math.log(n))
    times = _delete_at(path.times, idx)
    states = _delete_at(path.states, idx + 1)
    new_path = MarkedPath(path.t_min, path.t_max, times, states, validate=False)
    if x_i == prev_state:
        window = None
    else:
        hi = float(path.times[idx + 1]) if idx < n - 1 else path.t_max
        window = (t_i, hi)
    return Proposal(new_path, prior_delta, log_q_ratio, "erase_random_point",
                    window=window,
                    meta={"idx": idx, "t_star": t_i, "bridge": bridge})


def add_virtual_point(path, rng, regimes):
    """Insert a virtual point: a mark copying its predecessor's state."""
    t_star = _draw_interior_time(rng, path.t_min, path.t_max, path, regimes)
    idx = int(np.searchsorted(path.times, t_star))
    x_star = int(path.states[idx])
    j_star = regimes.regime_index(t_star)
    skel_star = regimes.skeletons[j_star]
    lam = float(regimes.lambdas[j_star])
    prior_delta = (math.log(lam) if lam > 0.0 else -np.inf) \
        + float(skel_star.log_probs[x_star, x_star])
    n_virtual_new = int(path.virtual_mask().sum()) + 1
    log_q_ratio = -math.log(n_virtual_new) + math.log(path.t_max - path.t_min)
    times = _insert_at(path.times, idx, t_star)
    states = _insert_at(path.states, idx + 1, x_star)
    new_path = MarkedPath(path.t_min, path.t_max, times, states, validate=False)
    return Proposal(new_path, prior_delta, log_q_ratio, "add_virtual_point",
                    window=None, meta={"idx": idx, "t_star": t_star})


def erase_virtual_point(path, rng, regimes):
    """Remove a uniformly chosen virtual point; identity if none exist."""
    virtual = np.nonzero(path.virtual_mask())[0]
    if virtual.size == 0:
        return _identity(path, "erase_virtual_point", no_virtual=True)
    idx = int(rng.choice(virtual))
    t_i = float(path.times[idx])
    x_i = int(path.states[idx + 1])
    j_i = regimes.regime_index(t_i)
    lam = float(regimes.lambdas[j_i])
    prior_delta = -((math.log(lam) if lam > 0.0 else -np.inf)
                    + float(regimes.skeletons[j_i].log_probs[x_i, x_i]))
    log_q_ratio = math.log(virtual.size) - math.log(path.t_max - path.t_min)
    times = _delete_at(path.times, idx)
    states = _delete_at(path.states, idx + 1)
    new_path = MarkedPath(path.t_min, path.t_max, times, states, validate=False)
    return Proposal(new_path, prior_delta, log_q_ratio, "erase_virtual_point",
                    window=None, meta={"idx": idx})


def propose_dimension(path, rng, regimes, variant="random", bridge=False):
    """Dimension dispatcher: d = +-1 uniformly, then add or erase.

    With d = -1 and nothing to erase the proposal is "do nothing".  The
    1/2 choice probability cancels between the paired moves.
    """
    d = 1 if rng.random() < 0.5 else -1
    if variant == "random":
        if d == 1:
            return add_random_point(path, rng, regimes, bridge=bridge)
        if path.n > 0:
            return erase_random_point(path, rng, regimes, bridge=bridge)
        return _identity(path, "erase_random_point")
    if variant == "virtual":
        if d == 1:
            return add_virtual_point(path, rng, regimes)
        if int(path.virtual_mask().sum()) > 0:
            return erase_virtual_point(path, rng, regimes)
        return _identity(path, "erase_virtual_point")
    raise ValueError(f"unknown dimension variant {variant!r}")


# -- the MH step ------------------------------------------------------------

def mh_step(state, proposal_kernel, evaluator, rng, diagnostics=None,
            incremental=False):
    """One Metropolis-Hastings transition from ``state``.

    Non-finite acceptance components reject with a diagnostic flag rather
    than raising; a rejected proposal returns ``state`` unchanged.
    """
    prop = proposal_kernel(state.path, rng)
    if not prop.changed:
        if diagnostics is not None:
            outcome = "flagged" if prop.meta.get("degenerate") else "noop"
            diagnostics.record(prop.kind, outcome)
        return state
    if prop.window is None and not prop.x0_changed:
        new_ll = state.loglik
    elif incremental and hasattr(evaluator, "delta"):
        new_ll = evaluator.delta(state.path, prop, state.loglik)
    else:
        new_ll = _full_loglik(evaluator, prop.path)
    log_a = prop.log_prior_delta + prop.log_q_ratio + (new_ll - state.loglik)
    if math.isnan(log_a):
        if diagnostics is not None:
            diagnostics.record(prop.kind, "flagged")
        return state
    if log_a >= 0.0 or math.log(rng.random()) < log_a:
        if diagnostics is not None:
            diagnostics.record(prop.kind, "accepted")
        return KernelState(prop.path, new_ll,
                           state.logprior + prop.log_prior_delta)
    if diagnostics is not None:
        diagnostics.record(prop.kind, "rejected")
    return state


@dataclass(frozen=True)
class MoveSchedule:
    """Ordered move kinds with repetition counts and variant flags."""

    entries: tuple = (("change_time", 1), ("change_state", 1), ("dimension", 1))
    change_time_variant: str = "single"
    change_time_mode: str = "per_regime"
    dimension_variant: str = "random"
    bridge_add: bool = False

    def __post_init__(self):
        entries = tuple((str(k), int(r)) for k, r in self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ValueError("schedule must contain at least one move")
        kinds = {"change_time", "time_block", "change_state", "dimension"}
        for k, r in entries:
            if k not in kinds:
                raise ValueError(f"unknown move kind {k!r}")
            if r < 0:
                raise ValueError("repetition counts must be nonnegative")
        if not any(k == "dimension" and r > 0 for k, r in entries):
            raise ValueError(
                "schedule needs a dimension-changing move for irreducibility")

    def build_kernels(self, regimes, initial_dist):
        """Proposal closures bound to one node's regimes and initial law."""
        out = []
        for kind, reps in self.entries:
            if kind == "change_time":
                def kern(path, rng, _r=regimes):
                    return change_time(path, rng, _r,
                                       variant=self.change_time_variant,
                                       mode=self.change_time_mode)
            elif kind == "time_block":
                def kern(path, rng, _r=regimes):
                    return change_time(path, rng, _r, variant="block")
            elif kind == "change_state":
                def kern(path, rng, _r=regimes, _nu=initial_dist):
                    return change_state(path, rng, _r, _nu)
            else:
                def kern(path, rng, _r=regimes):
                    return propose_dimension(path, rng, _r,
                                             variant=self.dimension_variant,
                                             bridge=self.bridge_add)
            out.extend([kern] * reps)
        return out


# -- numerical detailed-balance audit ----------------------------------------

def _direct_log_q(path, prop, regimes, initial_dist, forward):
    """Independent evaluation of the proposal density for balance checks."""
    kind = prop.kind
    meta = prop.meta
    length = path.t_max - path.t_min
    if kind == "change_time":
        if meta.get("variant") == "single":
            lo, hi = meta["support"]
            return -math.log(path.n) - math.log(hi - lo)
        if meta.get("variant") == "block":
            j = meta["regime"]
            r_lo, r_hi = regimes.regime_bounds(j)
            count = meta["count"]
            return (-math.log(regimes.n_regimes) + math.lgamma(count + 1)
                    - count * math.log(r_hi - r_lo))
        if meta.get("mode") == "global":
            n = path.n
            return math.lgamma(n + 1) - n * math.log(length)
        total = 0.0
        regs = regimes.regime_indices(path.times)
        for j in np.unique(regs):
            nj = int((regs == j).sum())
            r_lo, r_hi = regimes.regime_bounds(int(j))
            total += math.lgamma(nj + 1) - nj * math.log(r_hi - r_lo)
        return total
    if kind == "change_state":
        i = meta["i"]
        w = _bridge_weights(path, i, regimes, initial_dist)
        z = w.sum()
        target = int(prop.path.states[i]) if forward else int(path.states[i])
        with np.errstate(divide="ignore"):
            return -math.log(path.n + 1) + float(np.log(w[target] / z))
    if kind in ("add_random_point", "erase_random_point"):
        adding = (kind == "add_random_point") == forward
        small = path if kind == "add_random_point" else prop.path
        big = prop.path if kind == "add_random_point" else path
        idx = meta["idx"]
        if adding:
            prev_state = int(small.states[idx])
            succ_state = int(small.states[idx + 1]) if idx < small.n else None
            t_star = meta["t_star"]
            skel_star = regimes.skeletons[regimes.regime_index(t_star)]
            skel_next = None
            if succ_state is not None:
                t_next = float(small.times[idx])
                skel_next = regimes.skeletons[regimes.regime_index(t_next)]
            x_star = int(big.states[idx + 1])
            sel = _add_selection_logprob(prev_state, succ_state, skel_star,
                                         skel_next, x_star, meta["bridge"])
            return -math.log(length) + sel
        return -math.log(big.n)
    if kind in ("add_virtual_point", "erase_virtual_point"):
        adding = (kind == "add_virtual_point") == forward
        big = prop.path if kind == "add_virtual_point" else path
        if adding:
            return -math.log(length)
        return -math.log(int(big.virtual_mask().sum()))
    raise ValueError(f"no direct proposal density for kind {kind!r}")


def balance_check(path, prop, regimes, initial_dist, evaluator=None):
    """Detailed-balance residual |log(pi L q a) - log(pi' L' q' a')|.

    ``prop`` must be a Proposal generated from ``path``.  Densities are
    evaluated directly (not from the move's cached deltas), so a nonzero
    residual exposes a bookkeeping error in the move.  Returns inf for an
    unreachable pair, 0.0 when both flows vanish.
    """
    if evaluator is None:
        evaluator = FlatLikelihood()
    if not prop.changed:
        return float("inf")
    lp_x = log_density_marked_piecewise(path, regimes, initial_dist)
    lp_y = log_density_marked_piecewise(prop.path, regimes, initial_dist)
    ll_x = _full_loglik(evaluator, path)
    ll_y = _full_loglik(evaluator, prop.path)
    lq_f = _direct_log_q(path, prop, regimes, initial_dist, forward=True)
    lq_r = _direct_log_q(path, prop, regimes, initial_dist, forward=False)
    move_delta = prop.log_prior_delta + prop.log_q_ratio
    la_f = min(0.0, move_delta + (ll_y - ll_x))
    la_r = min(0.0, -move_delta + (ll_x - ll_y))
    fwd = lp_x + ll_x + lq_f + la_f
    rev = lp_y + ll_y + lq_r + la_r
    if fwd == -np.inf and rev == -np.inf:
        return 0.0
    if not (np.isfinite(fwd) and np.isfinite(rev)):
        return float("inf")
    return abs(fwd - rev)
