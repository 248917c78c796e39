"""Shared instance builders and independent oracles for the test suite."""

import itertools

import numpy as np

from nomajspa.model import Instance, SystemConfig, carrier_view, generate_instance
from nomajspa.single_carrier import expand_active, sc_value, scpc


def single_carrier_instance(eta_tilde, weights, w_hz=1.0, p_max=10.0, delta=0.5,
                            max_mux=None):
    """One-subcarrier instance with prescribed per-position normalized noise.

    Gains are 1 so eta_tilde equals the noise column; pass it non-increasing
    to make the decoding order the identity.
    """
    eta = np.asarray(eta_tilde, dtype=float)[:, None]
    w = np.asarray(weights, dtype=float)
    return Instance(weights=w, bandwidths=[w_hz], gains=np.ones_like(eta), noise=eta,
                    p_max=p_max, p_max_carrier=[p_max], delta=delta,
                    max_mux=max_mux if max_mux is not None else w.size)


def small_instance(seed, users, carriers, max_mux, levels=20):
    cfg = SystemConfig(users=users, subcarriers=carriers, max_mux=max_mux,
                       delta_w=DEFAULT_PMAX / levels)
    return generate_instance(cfg, seed)


DEFAULT_PMAX = SystemConfig().p_max_w


def random_feasible_p(instance, rng, respect_mux=True):
    """Random power matrix satisfying budgets, caps and the multiplex limit."""
    K, N = instance.n_users, instance.n_carriers
    p = np.zeros((K, N))
    for n in range(N):
        limit = instance.max_mux if respect_mux else K
        count = int(rng.integers(0, limit + 1))
        if count:
            users = rng.choice(K, size=count, replace=False)
            p[users, n] = rng.random(count)
        total = p[:, n].sum()
        cap = instance.p_max_carrier[n]
        if total > cap:
            p[:, n] *= cap / total * rng.uniform(0.5, 1.0)
    total = p.sum()
    if total > instance.p_max:
        p *= instance.p_max / total * rng.uniform(0.5, 1.0)
    if p.sum() == 0.0:  # keep the draw non-trivial; all-zero is tested on its own
        p[int(rng.integers(K)), int(rng.integers(N))] = min(
            instance.p_max_carrier.min(), instance.p_max) * rng.uniform(0.1, 0.9)
    return p


def block_funs(instance, order, n, active):
    """Vectorized per-active-block utilities for a fixed selection."""
    w_n, wp, ep = carrier_view(instance, order, n)
    funs = []
    lo = 0
    for pos in active:
        def make(lo, hi):
            def f(x):
                x = np.asarray(x, dtype=float)
                val = w_n * wp[hi] * np.log2(x + ep[hi])
                if lo > 0:
                    val = val - w_n * wp[lo - 1] * np.log2(x + ep[lo - 1])
                return val
            return f
        funs.append(make(lo, pos))
        lo = pos + 1
    return funs


def scpc_objective(instance, order, n, active, x_active):
    """Objective of a power-control point, without the constant offset."""
    return float(sum(f(x) for f, x in zip(block_funs(instance, order, n, active),
                                          np.atleast_1d(x_active))))


def ordered_grid_max(funs, p_bar, steps):
    """Exact maximum of sum_l funs[l](x_l) over the ordered grid simplex.

    Feasible set: p_bar >= x_0 >= x_1 >= ... >= 0, every x_l on the uniform
    grid with `steps` intervals. Separability makes suffix maxima exact:
    after handling block l, run[t] is the best value of blocks 0..l given
    all of them sit at grid levels >= t.
    """
    grid = np.linspace(0.0, p_bar, steps + 1)
    run = np.zeros(steps + 1)
    for f in funs:
        run = np.maximum.accumulate((f(grid) + run)[::-1])[::-1]
    return float(run[0])


def ordered_grid_max_bruteforce(funs, p_bar, steps):
    """Literal enumeration of the ordered grid simplex (tiny grids only)."""
    grid = np.linspace(0.0, p_bar, steps + 1)
    best = -np.inf
    for combo in itertools.product(range(steps + 1), repeat=len(funs)):
        if any(a < b for a, b in zip(combo, combo[1:])):
            continue
        best = max(best, sum(float(f(grid[c])) for f, c in zip(funs, combo)))
    return best


def scus_subset_oracle(instance, order, n, max_active, p_bar):
    """Best value over every active set of size <= max_active, via scpc."""
    K = instance.n_users
    best = 0.0
    for r in range(1, max_active + 1):
        for subset in itertools.combinations(range(K), r):
            x_act = scpc(instance, order, n, subset, p_bar)
            full = expand_active(subset, x_act, K)
            best = max(best, sc_value(instance, order, n, full))
    return best


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1.0)
