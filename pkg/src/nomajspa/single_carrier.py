"""Optimal single-carrier power control and user selection.

Everything here works on one subcarrier in cumulative-power coordinates.
`scpc` solves power control for a fixed set of active decoding positions;
`scus` additionally selects which (at most M) positions are active, via a
dynamic program over table cells (m, j, i). Both have precomputed variants
(`iscpc_precompute`/`iscus_precompute`) that solve once at the full power
budget and answer any smaller budget by componentwise truncation, which is
what makes the multi-carrier solvers cheap.

`fn_value` is the resulting budget-value function F_n (optimal weighted
rate on subcarrier n as a function of its power budget); it is
non-decreasing and sublinear, and `fn_left_derivative` evaluates its left
derivative in closed form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import LN2, DecodingOrder, Instance, a_const, argmax_f, carrier_view
from .ops import tally

# per-step tally constants, see ops module docstring
_C_ARGMAX = 6
_C_BLOCK = 6
_C_SWEEP = 6
_C_CELL = 8
_C_LOOKUP = 6
_C_DERIV = 4


def _argmax_blocks(wp: np.ndarray, ep: np.ndarray, i: int, p_bar: float) -> np.ndarray:
    """Maximizers of f_{j,i} on [0, p_bar] for every block start j = 0..i."""
    out = np.full(i + 1, float(p_bar))
    if i >= 1:
        wa, ea = wp[i], ep[i]
        wb, eb = wp[:i], ep[:i]
        interior = wa < wb
        denom = np.where(interior, wa - wb, 1.0)
        c1 = (wb * ea - wa * eb) / denom
        out[1:] = np.where(interior, np.clip(c1, 0.0, p_bar), p_bar)
    tally((i + 1) * _C_ARGMAX)
    return out


def _f_blocks(wp: np.ndarray, ep: np.ndarray, w_n: float, i: int, x: np.ndarray) -> np.ndarray:
    """f_{j,i}(x[j]) for every block start j = 0..i; x has length i + 1."""
    out = w_n * wp[i] * np.log2(x + ep[i])
    if i >= 1:
        out[1:] -= w_n * wp[:i] * np.log2(x[1:] + ep[:i])
    tally((i + 1) * _C_BLOCK)
    return out


def sc_value(instance: Instance, order: DecodingOrder, n: int, x_col: np.ndarray) -> float:
    """Weighted rate achieved on subcarrier n by a cumulative-power column."""
    w_n, wp, ep = carrier_view(instance, order, n)
    t1 = float(np.sum(wp * np.log2(x_col + ep)))
    t2 = float(np.sum(wp[:-1] * np.log2(x_col[1:] + ep[:-1])))
    return w_n * (t1 - t2) + a_const(instance, order, n)


def expand_active(active: tuple, x_active: np.ndarray, n_users: int) -> np.ndarray:
    """Spread active-position values onto the full cumulative-power column.

    Positions up to and including each active position share its value;
    positions after the last active one are zero.
    """
    x = np.zeros(n_users)
    lo = 0
    for idx, pos in enumerate(active):
        x[lo:pos + 1] = x_active[idx]
        lo = pos + 1
    return x


# ---------------------------------------------------------------------------
# Power control for a fixed active set.


def scpc(instance: Instance, order: DecodingOrder, n: int, active: tuple,
         p_bar: float) -> np.ndarray:
    """Optimal cumulative powers for the given active decoding positions.

    Returns one value per active position, non-increasing and within
    [0, p_bar]. Positions between consecutive active ones are implied equal
    (use expand_active for the full column). The sweep assigns each block
    its closed-form maximizer and, whenever that would break monotonicity,
    backtracks and merges with preceding blocks; the comparison is exact
    floating comparison because both sides come from the same closed forms.
    """
    if any(a >= b for a, b in zip(active, active[1:])) or not active:
        raise ValueError("active positions must be non-empty and strictly increasing")
    K = instance.n_users
    if active[-1] >= K:
        raise ValueError("active position out of range")

    def block_argmax(j: int, i: int) -> float:
        # merged block spans underlying positions (prev active + 1) .. active[i]
        lo = 0 if j == 0 else active[j - 1] + 1
        tally(_C_ARGMAX)
        return argmax_f(instance, order, n, lo, active[i], p_bar)

    count = len(active)
    x = np.zeros(count)
    for i in range(count):
        x_star = block_argmax(i, i)
        j = i - 1
        while j >= 0 and x[j] < x_star:
            x_star = block_argmax(j, i)
            j -= 1
            tally(_C_SWEEP)
        x[j + 1:i + 1] = x_star
        tally(_C_SWEEP)
    return x


@dataclass(frozen=True)
class IscpcTable:
    """Full-budget power control solution reused for any smaller budget."""

    n: int
    active: tuple
    p_max: float
    x_max: np.ndarray


def iscpc_precompute(instance: Instance, order: DecodingOrder, n: int,
                     active: tuple) -> IscpcTable:
    """Solve power control once at the full budget and keep the solution."""
    x_max = scpc(instance, order, n, active, instance.p_max)
    x_max.flags.writeable = False
    return IscpcTable(n=n, active=active, p_max=instance.p_max, x_max=x_max)


def iscpc_eval(table: IscpcTable, p_bar: float) -> np.ndarray:
    """Optimal active-position powers for any budget <= the precompute budget.

    Truncating the full-budget solution at p_bar is optimal because every
    block maximizer is itself a clamp of a budget-free stationary point.
    """
    if p_bar > table.p_max * (1 + 1e-12):
        raise ValueError("budget exceeds the precomputed budget")
    tally(len(table.x_max) * _C_SWEEP)
    return np.minimum(table.x_max, p_bar)


# ---------------------------------------------------------------------------
# Joint user selection and power control (dynamic program).


@dataclass(frozen=True)
class ScusTables:
    """User-selection DP tables plus the candidate solutions they induce.

    value[m, j, i] is the best utility of positions j..K-1 with at most m
    active, positions j..i forced equal; xopt[m, j, i] is that shared value
    and (par_m, par_j) point to the predecessor cell (the predecessor's i is
    always i + 1; cells with m = 0 or i = K-1 are roots). entry_x[e] is the
    full-budget solution forced to share x over positions 0..e, one
    candidate per prefix length; every smaller budget is served by the best
    truncated candidate.
    """

    n: int
    max_active: int
    p_max: float
    w_n: float
    wp: np.ndarray
    ep: np.ndarray
    offset: float  # additive constant turning utilities into weighted rates
    value: np.ndarray
    xopt: np.ndarray
    par_m: np.ndarray
    par_j: np.ndarray
    entry_x: np.ndarray

    @property
    def n_users(self) -> int:
        return self.wp.size


def _scus_dp(instance: Instance, order: DecodingOrder, n: int, max_active: int,
             p_bar: float):
    """Fill the (m, j, i) tables bottom-up in i."""
    K = instance.n_users
    M = max_active
    w_n, wp, ep = carrier_view(instance, order, n)
    value = np.zeros((M + 1, K, K))
    xopt = np.zeros((M + 1, K, K))
    par_m = np.full((M + 1, K, K), -1, dtype=np.int64)
    par_j = np.full((M + 1, K, K), -1, dtype=np.int64)

    # m = 0: nothing may be active, every position stays at zero power.
    zero_tail = _f_blocks(wp, ep, w_n, K - 1, np.zeros(K))
    for i in range(K):
        value[0, :i + 1, i] = zero_tail[:i + 1]
    tally(K * K // 2 * _C_CELL)

    # i = K-1: the shared value covers the whole tail, costing one active slot.
    x_last = _argmax_blocks(wp, ep, K - 1, p_bar)
    v_last = _f_blocks(wp, ep, w_n, K - 1, x_last)
    value[1:, :, K - 1] = v_last
    xopt[1:, :, K - 1] = x_last
    tally(M * K * _C_CELL)

    for i in range(K - 2, -1, -1):
        x_star = _argmax_blocks(wp, ep, i, p_bar)
        gain = _f_blocks(wp, ep, w_n, i, x_star)
        js = np.arange(i + 1)
        for m in range(1, M + 1):
            v_act = gain + value[m - 1, i + 1, i + 1]
            v_inact = value[m, :i + 1, i + 1]
            # activating position i must strictly beat leaving it merged and
            # keep the cumulative powers strictly decreasing across i, i+1
            take = (v_act > v_inact) & (x_star > xopt[m - 1, i + 1, i + 1])
            value[m, :i + 1, i] = np.where(take, v_act, v_inact)
            xopt[m, :i + 1, i] = np.where(take, x_star, xopt[m, :i + 1, i + 1])
            par_m[m, :i + 1, i] = np.where(take, m - 1, m)
            par_j[m, :i + 1, i] = np.where(take, i + 1, js)
            tally((i + 1) * _C_CELL)
    return value, xopt, par_m, par_j


def _backtrack(xopt, par_m, par_j, m: int, j: int, i: int, n_users: int) -> np.ndarray:
    """Recover the full solution column from a starting cell."""
    x = np.zeros(n_users)
    while True:
        x[j:i + 1] = xopt[m, j, i]
        if i == n_users - 1 or m == 0:
            return x
        m, j, i = par_m[m, j, i], par_j[m, j, i], i + 1


def scus(instance: Instance, order: DecodingOrder, n: int, max_active: int,
         p_bar: float) -> np.ndarray:
    """Optimal cumulative-power column with at most max_active positions on.

    The value it achieves is sc_value of the returned column; feasibility
    means non-increasing entries within [0, p_bar] and at most max_active
    strict drops.
    """
    if max_active < 1:
        raise ValueError("max_active must be >= 1")
    value, xopt, par_m, par_j = _scus_dp(instance, order, n, max_active, p_bar)
    return _backtrack(xopt, par_m, par_j, max_active, 0, 0, instance.n_users)


def iscus_precompute(instance: Instance, order: DecodingOrder, n: int,
                     max_active: int) -> ScusTables:
    """Run the selection DP once at the full budget and collect candidates.

    Candidate e is the optimal solution forced to share one value over
    positions 0..e; by the structure of the increasing first block that
    shared value is always the full budget, so truncating candidates covers
    every smaller budget exactly.
    """
    if max_active < 1:
        raise ValueError("max_active must be >= 1")
    K = instance.n_users
    value, xopt, par_m, par_j = _scus_dp(instance, order, n, max_active, instance.p_max)
    entry_x = np.empty((K, K))
    for e in range(K):
        entry_x[e] = _backtrack(xopt, par_m, par_j, max_active, 0, e, K)
    w_n, wp, ep = carrier_view(instance, order, n)
    for arr in (value, xopt, par_m, par_j, entry_x):
        arr.flags.writeable = False
    return ScusTables(
        n=n, max_active=max_active, p_max=instance.p_max,
        w_n=w_n, wp=wp, ep=ep, offset=a_const(instance, order, n),
        value=value, xopt=xopt, par_m=par_m, par_j=par_j, entry_x=entry_x,
    )


def _entry_values(tables: ScusTables, budgets: np.ndarray) -> np.ndarray:
    """Weighted rate of every truncated candidate at every budget, (E, L)."""
    wp, ep = tables.wp, tables.ep
    clipped = np.minimum(tables.entry_x[:, None, :], budgets[None, :, None])
    t1 = np.sum(wp * np.log2(clipped + ep), axis=2)
    t2 = np.sum(wp[:-1] * np.log2(clipped[..., 1:] + ep[:-1]), axis=2)
    vals = tables.w_n * (t1 - t2) + tables.offset
    vals[:, budgets <= 0.0] = 0.0  # no power, no rate: avoid cancellation residue
    tally(tables.entry_x.size * budgets.size * _C_LOOKUP)
    return vals


def iscus_eval(tables: ScusTables, p_bar: float):
    """Best truncated candidate at the given budget: (column x, value).

    Matches scus at the same budget in value; ties between candidates go to
    the shorter shared prefix.
    """
    if p_bar > tables.p_max * (1 + 1e-12):
        raise ValueError("budget exceeds the precomputed budget")
    vals = _entry_values(tables, np.array([float(p_bar)]))[:, 0]
    e = int(np.argmax(vals))
    return np.minimum(tables.entry_x[e], p_bar), float(vals[e])


def fn_value(tables: ScusTables, p_bar: float) -> float:
    """Budget-value function F_n: optimal weighted rate at budget p_bar."""
    vals = _entry_values(tables, np.array([float(p_bar)]))
    return float(vals.max())


def fn_value_many(tables: ScusTables, budgets: np.ndarray) -> np.ndarray:
    """F_n on a whole vector of budgets in one pass."""
    vals = _entry_values(tables, np.asarray(budgets, dtype=float))
    return vals.max(axis=0)


def fn_left_derivative(tables: ScusTables, p_bar: float) -> float:
    """Left derivative of F_n at p_bar.

    In the selected candidate, let l be the last position still pinned at
    the budget; only that leading merged block moves with the budget, so the
    slope is the first-block marginal rate at position l. At p_bar = 0 the
    selection is resolved in the limit from above, i.e. by the candidate
    with the steepest such slope.
    """
    if p_bar < 0 or p_bar > tables.p_max * (1 + 1e-12):
        raise ValueError("budget out of range")
    p_bar = min(p_bar, tables.p_max)
    wp, ep = tables.wp, tables.ep
    tally(_C_DERIV)
    if p_bar == 0.0:
        best = -math.inf
        for e in range(tables.n_users):
            pos = np.nonzero(tables.entry_x[e] > 0.0)[0]
            l = int(pos[-1]) if pos.size else 0
            best = max(best, tables.w_n * wp[l] / (ep[l] * LN2))
        return best
    vals = _entry_values(tables, np.array([float(p_bar)]))[:, 0]
    e = int(np.argmax(vals))
    l = int(np.nonzero(tables.entry_x[e] >= p_bar)[0][-1])
    return tables.w_n * wp[l] / ((p_bar + ep[l]) * LN2)


def dump_tables_csv(tables: ScusTables, path) -> None:
    """Write the DP tables as CSV for inspection (one row per cell)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "j", "i", "value", "x", "parent_m", "parent_j"])
        M, K = tables.max_active, tables.n_users
        for m in range(M + 1):
            for i in range(K):
                for j in range(i + 1):
                    writer.writerow([
                        m, j, i,
                        repr(float(tables.value[m, j, i])),
                        repr(float(tables.xopt[m, j, i])),
                        int(tables.par_m[m, j, i]),
                        int(tables.par_j[m, j, i]),
                    ])
