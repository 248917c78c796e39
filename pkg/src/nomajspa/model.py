"""Problem instances, channel generation, SIC decoding order and rate model.

The downlink system serves K users over N orthogonal subcarriers. On each
subcarrier up to M users are superposed and separated by successive
interference cancellation, decoding from the highest to the lowest
normalized noise power eta/g.

Two equivalent coordinate systems are used throughout:

* per-user transmit powers ``p[k, n]`` (watts), and
* cumulative powers ``x[i, n] = sum_{j >= i} p[pi_n(j), n]`` indexed by
  decoding position ``i``, which make the weighted sum-rate separable into
  per-position utilities ``f_i`` plus a constant offset.

All position indices in this package are 0-based: the first decoded
position is 0 and "block [j, i]" means positions j..i inclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LN2 = math.log(2.0)

# Default system parameters (hexagonal macro cell, 5 MHz downlink).
DEFAULTS = {
    "users": 10,
    "subcarriers": 20,
    "max_mux": 3,
    "bandwidth_hz": 5e6,
    "p_max_w": 10.0,
    "p_max_carrier_w": 0.0,  # 0 means "no per-subcarrier cap", i.e. equal to p_max_w
    "delta_w": 0.01,
    "cell_radius_m": 1000.0,
    "min_distance_m": 35.0,
    "carrier_freq_hz": 2e9,
    "shadowing_std_db": 10.0,
    "noise_psd_dbm_hz": -174.0,
    "min_weight": 1e-6,
}


@dataclass(frozen=True)
class SystemConfig:
    """Physical and sizing parameters used to draw random instances."""

    users: int = DEFAULTS["users"]
    subcarriers: int = DEFAULTS["subcarriers"]
    max_mux: int = DEFAULTS["max_mux"]
    bandwidth_hz: float = DEFAULTS["bandwidth_hz"]
    p_max_w: float = DEFAULTS["p_max_w"]
    p_max_carrier_w: float = DEFAULTS["p_max_carrier_w"]
    delta_w: float = DEFAULTS["delta_w"]
    cell_radius_m: float = DEFAULTS["cell_radius_m"]
    min_distance_m: float = DEFAULTS["min_distance_m"]
    carrier_freq_hz: float = DEFAULTS["carrier_freq_hz"]
    shadowing_std_db: float = DEFAULTS["shadowing_std_db"]
    noise_psd_dbm_hz: float = DEFAULTS["noise_psd_dbm_hz"]
    min_weight: float = DEFAULTS["min_weight"]

    def __post_init__(self):
        if self.users < 1 or self.subcarriers < 1:
            raise ValueError("users and subcarriers must be >= 1")
        if not 1 <= self.max_mux <= self.users:
            raise ValueError("max_mux must be in [1, users]")
        if self.bandwidth_hz <= 0 or self.p_max_w <= 0:
            raise ValueError("bandwidth_hz and p_max_w must be positive")
        if not 0 < self.delta_w <= self.p_max_w:
            raise ValueError("delta_w must be in (0, p_max_w]")
        if self.p_max_carrier_w < 0 or self.p_max_carrier_w > self.p_max_w:
            raise ValueError("p_max_carrier_w must be 0 (unset) or in (0, p_max_w]")
        if self.min_distance_m <= 0 or self.min_distance_m >= self.cell_radius_m:
            raise ValueError("min_distance_m must be in (0, cell_radius_m)")
        if self.min_weight <= 0:
            raise ValueError("min_weight must be positive")

    @classmethod
    def from_mapping(cls, raw: dict) -> "SystemConfig":
        kwargs = {}
        for name in DEFAULTS:
            if name in raw:
                cast = int if name in ("users", "subcarriers", "max_mux") else float
                kwargs[name] = cast(raw[name])
        return cls(**kwargs)


def read_kv_file(path) -> dict:
    """Parse a flat `key = value` text file. '#' starts a comment, blanks ignored."""
    raw = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


@dataclass(frozen=True)
class Instance:
    """One allocation problem: users, subcarriers, channels and budgets.

    Shapes: weights (K,), bandwidths (N,), gains and noise (K, N),
    p_max_carrier (N,). All arrays are read-only after construction; the
    type is safe to share across parallel workers.
    """

    weights: np.ndarray
    bandwidths: np.ndarray
    gains: np.ndarray
    noise: np.ndarray
    p_max: float
    p_max_carrier: np.ndarray
    delta: float
    max_mux: int
    eta_tilde: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        bw = np.array(self.bandwidths, dtype=float)
        g = np.array(self.gains, dtype=float)
        eta = np.array(self.noise, dtype=float)
        caps = np.array(self.p_max_carrier, dtype=float)
        if w.ndim != 1 or bw.ndim != 1 or g.shape != (w.size, bw.size) or eta.shape != g.shape:
            raise ValueError("inconsistent array shapes")
        if caps.shape != bw.shape:
            raise ValueError("p_max_carrier must have one entry per subcarrier")
        if not (np.all(w > 0) and np.all(g > 0) and np.all(eta > 0) and np.all(bw > 0)):
            raise ValueError("weights, gains, noise and bandwidths must be strictly positive")
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")
        if not 0 < self.delta <= self.p_max:
            raise ValueError("delta must be in (0, p_max]")
        if not 1 <= self.max_mux <= w.size:
            raise ValueError("max_mux must be in [1, K]")
        if np.any(caps <= 0) or np.any(caps > self.p_max):
            raise ValueError("per-subcarrier caps must lie in (0, p_max]")
        for name, arr in (("weights", w), ("bandwidths", bw), ("gains", g),
                          ("noise", eta), ("p_max_carrier", caps)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        tilde = eta / g
        tilde.flags.writeable = False
        object.__setattr__(self, "eta_tilde", tilde)

    @property
    def n_users(self) -> int:
        return self.weights.size

    @property
    def n_carriers(self) -> int:
        return self.bandwidths.size

    @property
    def n_power_levels(self) -> int:
        """Number of non-zero points the budget spans on the delta grid."""
        return int(math.floor(self.p_max / self.delta + 1e-9))


@dataclass(frozen=True)
class DecodingOrder:
    """Per-subcarrier SIC permutation and its inverse.

    pi[n, i] is the user decoded at position i on subcarrier n; positions run
    from the highest to the lowest normalized noise. inv[n, k] is user k's
    position. Both arrays are (N, K).
    """

    pi: np.ndarray
    inv: np.ndarray

    def __post_init__(self):
        for name in ("pi", "inv"):
            arr = np.array(getattr(self, name), dtype=np.int64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def build_decoding_order(instance: Instance) -> DecodingOrder:
    """Sort users on each subcarrier by descending normalized noise.

    Ties are broken by ascending user index (stable sort), so identical
    channels yield the identity permutation.
    """
    K, N = instance.n_users, instance.n_carriers
    pi = np.empty((N, K), dtype=np.int64)
    inv = np.empty((N, K), dtype=np.int64)
    for n in range(N):
        pi[n] = np.argsort(-instance.eta_tilde[:, n], kind="stable")
        inv[n, pi[n]] = np.arange(K)
    return DecodingOrder(pi=pi, inv=inv)


def carrier_view(instance: Instance, order: DecodingOrder, n: int):
    """(W_n, weights, normalized noises) permuted into decoding order on n."""
    perm = order.pi[n]
    return instance.bandwidths[n], instance.weights[perm], instance.eta_tilde[perm, n]


def a_const(instance: Instance, order: DecodingOrder, n: int) -> float:
    """Constant offset making the separable objective equal the WSR on n."""
    w_n, wp, ep = carrier_view(instance, order, n)
    return -w_n * wp[-1] * math.log2(ep[-1])


# ---------------------------------------------------------------------------
# Change of variables between per-user powers and cumulative powers.


def x_from_p(p: np.ndarray, order: DecodingOrder) -> np.ndarray:
    """Cumulative powers x[i, n] = sum of p over decoding positions >= i."""
    p = np.asarray(p, dtype=float)
    K, N = p.shape
    x = np.empty_like(p)
    for n in range(N):
        x[:, n] = np.cumsum(p[order.pi[n], n][::-1])[::-1]
    return x


def p_from_x(x: np.ndarray, order: DecodingOrder) -> np.ndarray:
    """Invert x_from_p. Rejects x columns that are not non-increasing >= 0."""
    x = np.asarray(x, dtype=float)
    K, N = x.shape
    p = np.empty_like(x)
    for n in range(N):
        col = x[:, n]
        diffs = col - np.concatenate([col[1:], [0.0]])
        if np.any(diffs < 0.0):
            raise ValueError(f"cumulative powers on subcarrier {n} are not non-increasing")
        p[order.pi[n], n] = diffs
    return p


def active_positions(x_col: np.ndarray) -> tuple:
    """Decoding positions carrying strictly positive own power in a column x."""
    tail = np.concatenate([x_col[1:], [0.0]])
    return tuple(int(i) for i in np.nonzero(x_col > tail)[0])


# ---------------------------------------------------------------------------
# Rates and the two weighted sum-rate evaluation paths.


def rate(instance: Instance, order: DecodingOrder, p: np.ndarray, k: int, n: int) -> float:
    """Shannon rate of user k on subcarrier n under SIC, in bits/s."""
    pos = order.inv[n, k]
    perm = order.pi[n]
    interference = float(np.sum(p[perm[pos + 1:], n]))
    sinr = p[k, n] / (interference + instance.eta_tilde[k, n])
    return instance.bandwidths[n] * math.log2(1.0 + sinr)


def wsr_from_rates(instance: Instance, order: DecodingOrder, p: np.ndarray) -> float:
    """Weighted sum-rate evaluated directly from per-user SIC rates."""
    total = 0.0
    for n in range(instance.n_carriers):
        w_n, wp, ep = carrier_view(instance, order, n)
        pp = p[order.pi[n], n]
        interference = np.concatenate([np.cumsum(pp[::-1])[::-1][1:], [0.0]])
        total += w_n * float(np.sum(wp * np.log2(1.0 + pp / (interference + ep))))
    return total


def wsr_from_x(instance: Instance, order: DecodingOrder, x: np.ndarray) -> float:
    """Weighted sum-rate evaluated through the separable utilities.

    Equals wsr_from_rates(p_from_x(x)) up to rounding; this is the form the
    solvers optimize.
    """
    total = 0.0
    for n in range(instance.n_carriers):
        w_n, wp, ep = carrier_view(instance, order, n)
        col = x[:, n]
        t1 = float(np.sum(wp * np.log2(col + ep)))
        t2 = float(np.sum(wp[:-1] * np.log2(col[1:] + ep[:-1])))
        total += w_n * (t1 - t2) + a_const(instance, order, n)
    return total


# ---------------------------------------------------------------------------
# Merged-block utilities f_{j,i} and their closed-form maximizer.


def f_eval(instance: Instance, order: DecodingOrder, n: int, j: int, i: int, x: float) -> float:
    """Utility of decoding positions j..i sharing the cumulative power x.

    For j = 0 there is no predecessor term and the function is increasing
    in x; summing f_eval over singleton blocks [i, i] telescopes to the
    weighted sum-rate minus the subcarrier offset.
    """
    if not 0 <= j <= i < instance.n_users:
        raise ValueError("need 0 <= j <= i < K")
    w_n, wp, ep = carrier_view(instance, order, n)
    val = w_n * wp[i] * math.log2(x + ep[i])
    if j > 0:
        val -= w_n * wp[j - 1] * math.log2(x + ep[j - 1])
    return val


def argmax_f(instance: Instance, order: DecodingOrder, n: int, j: int, i: int,
             p_bar: float) -> float:
    """Maximizer of f_{j,i} on [0, p_bar].

    The block utility is increasing when j = 0 or when position i's weight
    dominates the predecessor's, so the budget is returned; otherwise it is
    unimodal with an interior stationary point that is clamped to the range.
    """
    w_n, wp, ep = carrier_view(instance, order, n)
    if j == 0 or wp[i] >= wp[j - 1]:
        return float(p_bar)
    wa, wb = wp[i], wp[j - 1]
    ea, eb = ep[i], ep[j - 1]
    c1 = (wb * ea - wa * eb) / (wa - wb)
    return float(min(max(c1, 0.0), p_bar))


# ---------------------------------------------------------------------------
# Random instance generation.


def path_loss_db(distance_m: float) -> float:
    """Macro-cell path loss at 2 GHz for a BS-user distance in meters."""
    return 128.1 + 37.6 * math.log10(distance_m / 1000.0)


def _sample_cell_positions(rng: np.random.Generator, count: int, radius: float,
                           min_dist: float) -> np.ndarray:
    """Uniform points in a flat-top hexagonal cell, at least min_dist from the BS."""
    half_height = math.sqrt(3.0) / 2.0 * radius
    pts = np.empty((count, 2))
    got = 0
    while got < count:
        px = rng.uniform(-radius, radius)
        py = rng.uniform(-half_height, half_height)
        inside = abs(py) <= half_height and math.sqrt(3.0) * abs(px) + abs(py) <= math.sqrt(3.0) * radius
        if inside and math.hypot(px, py) >= min_dist:
            pts[got] = (px, py)
            got += 1
    return pts


def generate_instance(config: SystemConfig, seed: int) -> Instance:
    """Draw a random instance: placement, path loss, shadowing, fading, weights.

    Deterministic given (config, seed). Users are placed uniformly in the
    hexagonal cell, channel gains combine distance-based path loss,
    log-normal shadowing and unit-mean Rayleigh fading per subcarrier, and
    the noise floor follows the configured PSD over each subcarrier's
    bandwidth. Weights are uniform on [0, 1] clamped away from zero, since
    the objective requires strictly positive weights.
    """
    rng = np.random.default_rng(seed)
    K, N = config.users, config.subcarriers
    positions = _sample_cell_positions(rng, K, config.cell_radius_m, config.min_distance_m)
    distances = np.hypot(positions[:, 0], positions[:, 1])
    loss_db = np.array([path_loss_db(d) for d in distances])
    loss_db += rng.normal(0.0, config.shadowing_std_db, K)
    fading = rng.exponential(1.0, (K, N))  # |h|^2 for Rayleigh fading of variance 1
    gains = 10.0 ** (-loss_db[:, None] / 10.0) * fading
    weights = np.maximum(rng.uniform(0.0, 1.0, K), config.min_weight)

    bw = np.full(N, config.bandwidth_hz / N)
    noise_w_per_hz = 10.0 ** ((config.noise_psd_dbm_hz - 30.0) / 10.0)
    noise = np.broadcast_to(noise_w_per_hz * bw, (K, N)).copy()
    cap = config.p_max_carrier_w if config.p_max_carrier_w > 0 else config.p_max_w
    return Instance(
        weights=weights,
        bandwidths=bw,
        gains=gains,
        noise=noise,
        p_max=config.p_max_w,
        p_max_carrier=np.full(N, cap),
        delta=config.delta_w,
        max_mux=config.max_mux,
    )
