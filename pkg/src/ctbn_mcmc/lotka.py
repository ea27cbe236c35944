"""Bounded stochastic predator-prey model as a two-node network.

Intensities for predator count x and prey count y:

* prey birth   y -> y+1 at rate max(y * (alpha - beta*y), 0)
* prey death   y -> y-1 at rate min(gamma * y * x, M)
* predator birth x -> x+1 at rate min(delta * x * y, M)
* predator death x -> x-1 at rate min(eta * x, M)

M is the truncation bound that keeps intensities finite so uniformization
applies; it clamps three of the four intensities (prey births are already
bounded by alpha^2 / (4 beta) and carry no clamp).  State spaces are
truncated at the caps with outward rates zero.  The predator is observed
and the prey hidden.  The default parameter values and the uniform
initial ranges are packaged choices tuned for oscillatory paths, not
literature values.
"""

import numpy as np

from .ctbn import BayesNetInitial, CtbnSpec

__all__ = ["build_lotka_volterra"]


def build_lotka_volterra(alpha=30.0, beta=1.0, gamma=1.0, delta=0.2, eta=2.0,
                         truncation=1e4, predator_cap=200, prey_cap=200,
                         initial_low=1, initial_high=50):
    """CTBN over nodes ("predator", "prey") with the rates above.

    ``initial_low``/``initial_high`` bound the independent uniform initial
    distributions (clipped to the caps).
    """
    for name, val in (("alpha", alpha), ("beta", beta), ("gamma", gamma),
                      ("delta", delta), ("eta", eta)):
        if val < 0.0:
            raise ValueError(f"{name} must be nonnegative")
    if truncation <= 0.0:
        raise ValueError("truncation bound must be positive")
    if predator_cap < 1 or prey_cap < 1:
        raise ValueError("state caps must be at least 1")
    sx = predator_cap + 1
    sy = prey_cap + 1
    y = np.arange(sy, dtype=np.float64)
    x = np.arange(sx, dtype=np.float64)

    prey_birth = np.maximum(y * (alpha - beta * y), 0.0)
    prey = np.zeros((sx, sy, sy))
    for xi in range(sx):
        prey_death = np.minimum(gamma * y * xi, truncation)
        prey[xi, np.arange(sy - 1), np.arange(1, sy)] = prey_birth[:-1]
        prey[xi, np.arange(1, sy), np.arange(sy - 1)] = prey_death[1:]

    pred = np.zeros((sy, sx, sx))
    pred_death = np.minimum(eta * x, truncation)
    for yi in range(sy):
        pred_birth = np.minimum(delta * x * yi, truncation)
        pred[yi, np.arange(sx - 1), np.arange(1, sx)] = pred_birth[:-1]
        pred[yi, np.arange(1, sx), np.arange(sx - 1)] = pred_death[1:]

    def _uniform_range(size):
        lo = int(np.clip(initial_low, 0, size - 1))
        hi = int(np.clip(initial_high, lo, size - 1))
        probs = np.zeros(size)
        probs[lo:hi + 1] = 1.0 / (hi - lo + 1)
        return probs

    initial = BayesNetInitial(
        nodes=("predator", "prey"),
        alphabets=(sx, sy),
        edges=(),
        tables={"predator": _uniform_range(sx), "prey": _uniform_range(sy)},
    )
    return CtbnSpec(
        nodes=("predator", "prey"),
        alphabets=(sx, sy),
        edges=(("predator", "prey"), ("prey", "predator")),
        cims={"predator": pred, "prey": prey},
        initial=initial,
    )
