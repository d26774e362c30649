"""Random Energy Model on the hypercube {-1, +1}^N.

Configurations are stored as integers: bit i-1 carries site i and a set bit
means spin -1 (see :mod:`mixbound.paths`).  Energies H(sigma) are i.i.d.
N(0, N).  Everything involving a partition function is done in the log
domain, because e^{-beta H} leaves double range long before N = 30.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp
from scipy.stats import norm

from .chain import ReversibleChain, build_chain, spectral_gap
from .errors import CapExceeded, EmptyLowSetWarning
from .poincare import WeightAssignment

BETA_C = math.sqrt(2.0 * math.log(2.0))
DEFAULT_CAP = 14


@dataclass(frozen=True, eq=False)
class RemInstance:
    N: int
    beta: float
    seed: int
    energies: np.ndarray

    @property
    def beta_c(self) -> float:
        return BETA_C

    @property
    def n_states(self) -> int:
        return 1 << self.N

    def with_beta(self, beta: float) -> "RemInstance":
        return replace(self, beta=float(beta))


def disorder_rng(seed: int, N: int, stream: int = 0) -> np.random.Generator:
    """RNG for (seed, N, stream); independent of how work is split."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(N), int(stream))))


def sample_instance(N: int, beta: float, seed: int) -> RemInstance:
    if N < 1:
        raise ValueError("N must be at least 1")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    H = math.sqrt(N) * disorder_rng(seed, N).standard_normal(1 << N)
    H.setflags(write=False)
    return RemInstance(int(N), float(beta), int(seed), H)


def instance_from_energies(energies, beta: float, seed: int = -1) -> RemInstance:
    """Wrap a hand-made energy table (length 2^N)."""
    H = np.array(energies, dtype=float)
    N = int(round(math.log2(H.size)))
    if H.ndim != 1 or (1 << N) != H.size:
        raise ValueError("energy table length must be a power of two")
    H.setflags(write=False)
    return RemInstance(N, float(beta), int(seed), H)


# ---------------------------------------------------------------------------
# Partition functions


@dataclass(frozen=True)
class LogPartition:
    """log of a positive sum, or an explicitly empty sum."""

    log_value: float
    empty: bool = False

    @classmethod
    def of(cls, log_terms: np.ndarray) -> "LogPartition":
        log_terms = np.asarray(log_terms, dtype=float)
        if log_terms.size == 0 or not np.any(np.isfinite(log_terms)):
            return cls(-math.inf, True)
        return cls(float(logsumexp(log_terms[np.isfinite(log_terms)])), False)


@dataclass(frozen=True)
class EnergyCut:
    """Restriction to {H <= -dN} (side "le") or {H >= -dN} (side "ge")."""

    side: str
    d: float

    def __post_init__(self):
        if self.side not in ("le", "ge"):
            raise ValueError("side must be 'le' or 'ge'")

    def mask(self, H: np.ndarray, N: int) -> np.ndarray:
        level = -self.d * N
        return H <= level if self.side == "le" else H >= level


def _log_weights(instance: RemInstance, cut: EnergyCut | None = None) -> np.ndarray:
    logw = -instance.beta * np.asarray(instance.energies, dtype=float)
    if cut is not None:
        logw = np.where(cut.mask(instance.energies, instance.N), logw, -np.inf)
    return logw


def log_partition(instance: RemInstance, cut: EnergyCut | None = None) -> LogPartition:
    return LogPartition.of(_log_weights(instance, cut))


def free_energy(instance: RemInstance) -> float:
    """F_N(beta) = (1/N) log Z_N(beta)."""
    return log_partition(instance).log_value / instance.N


def gibbs_measure(instance: RemInstance) -> np.ndarray:
    logw = _log_weights(instance)
    pi = np.exp(logw - logsumexp(logw))
    return pi / pi.sum()


def _site_mask(fixed_spins: Mapping[int, int], N: int) -> tuple[int, int]:
    mask = value = 0
    for site, spin in fixed_spins.items():
        if not 1 <= site <= N:
            raise ValueError(f"site {site} outside 1..{N}")
        if spin not in (1, -1):
            raise ValueError("spins must be +1 or -1")
        mask |= 1 << (site - 1)
        if spin == -1:
            value |= 1 << (site - 1)
    return mask, value


def subcube_partition(instance: RemInstance, fixed_spins: Mapping[int, int],
                      cut: EnergyCut | None = None) -> LogPartition:
    """Sum of e^{-beta H} over the configurations agreeing with ``fixed_spins``.

    ``fixed_spins`` maps sites (1-based) to +1 / -1; the other sites are summed.
    """
    mask, value = _site_mask(fixed_spins, instance.N)
    idx = np.arange(instance.n_states)
    keep = (idx & mask) == value
    return LogPartition.of(_log_weights(instance, cut)[keep])


# ---------------------------------------------------------------------------
# Dynamics


def _neighbours(N: int) -> np.ndarray:
    idx = np.arange(1 << N, dtype=np.int64)
    return idx[:, None] ^ (np.int64(1) << np.arange(N, dtype=np.int64))[None, :]


def metropolis_rates(instance: RemInstance) -> sp.csr_matrix:
    """(1/N) exp(-beta (H(y) - H(x))^+) between single-flip neighbours."""
    N, H, beta = instance.N, np.asarray(instance.energies), instance.beta
    nb = _neighbours(N)
    rates = np.exp(-beta * np.maximum(H[nb] - H[:, None], 0.0)) / N
    rows = np.repeat(np.arange(1 << N), N)
    n = 1 << N
    return sp.csr_matrix((rates.ravel(), (rows, nb.ravel())), shape=(n, n))


def metropolis_chain(instance: RemInstance, cap: int = DEFAULT_CAP) -> ReversibleChain:
    if instance.N > cap:
        raise CapExceeded(f"N = {instance.N} exceeds the exact-chain cap {cap}")
    return build_chain(instance.n_states, metropolis_rates(instance), gibbs_measure(instance))


def closed_form_conductance(instance: RemInstance, edges: np.ndarray) -> np.ndarray:
    """Q(x, y) = exp(-beta max(H(x), H(y))) / (N Z_N) for each row of ``edges``."""
    H = np.asarray(instance.energies)
    top = np.maximum(H[edges[:, 0]], H[edges[:, 1]])
    return np.exp(-instance.beta * top - log_partition(instance).log_value) / instance.N


@dataclass
class Trajectory:
    times: np.ndarray  # jump times, times[0] = 0
    states: np.ndarray  # state entered at each time
    t_max: float

    def state_at(self, t: float) -> int:
        return int(self.states[np.searchsorted(self.times, t, side="right") - 1])

    def occupation(self, n_states: int, t_from: float = 0.0) -> np.ndarray:
        """Fraction of [t_from, t_max] spent in each state."""
        ends = np.append(self.times[1:], self.t_max)
        starts = np.maximum(self.times, t_from)
        dwell = np.clip(ends - starts, 0.0, None)
        occ = np.bincount(self.states, weights=dwell, minlength=n_states)
        return occ / occ.sum()


def _exit_rates(instance: RemInstance, states: np.ndarray) -> np.ndarray:
    H = np.asarray(instance.energies)
    nb = states[:, None] ^ (np.int64(1) << np.arange(instance.N, dtype=np.int64))[None, :]
    return nb, np.exp(-instance.beta * np.maximum(H[nb] - H[states][:, None], 0.0)) / instance.N


def simulate_trajectory(instance: RemInstance, start: int, t_max: float,
                        rng: np.random.Generator, max_jumps: int | None = None) -> Trajectory:
    """Continuous-time Metropolis path with exact exponential holding times.

    Stops at ``t_max`` or after ``max_jumps`` jumps, whichever comes first;
    in the latter case ``t_max`` of the result is the last jump time.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    t, x = 0.0, int(start)
    times, states = [0.0], [x]
    while True:
        nb, r = _exit_rates(instance, np.array([x], dtype=np.int64))
        total = r.sum()
        t += rng.exponential(1.0 / total)
        if t >= t_max:
            break
        k = int(np.searchsorted(np.cumsum(r[0]), rng.random() * total, side="right"))
        x = int(nb[0, min(k, instance.N - 1)])
        times.append(t)
        states.append(x)
        if max_jumps is not None and len(times) > max_jumps:
            t_max = t
            break
    return Trajectory(np.array(times), np.array(states, dtype=np.int64), float(t_max))


def simulate_ensemble(instance: RemInstance, starts, t: float, rng: np.random.Generator) -> np.ndarray:
    """Positions at time ``t`` of independent runs from ``starts`` (vectorized)."""
    x = np.array(starts, dtype=np.int64).copy()
    clock = np.zeros(x.size)
    active = np.arange(x.size)
    while active.size:
        nb, r = _exit_rates(instance, x[active])
        total = r.sum(axis=1)
        clock[active] += rng.exponential(size=active.size) / total
        jumping = clock[active] < t
        if not jumping.any():
            break
        rows = np.nonzero(jumping)[0]
        u = rng.random(rows.size) * total[rows]
        k = (np.cumsum(r[rows], axis=1) <= u[:, None]).sum(axis=1)
        x[active[rows]] = nb[rows, np.minimum(k, instance.N - 1)]
        active = active[rows]
    return x


# ---------------------------------------------------------------------------
# Weights for the path bounds


@dataclass
class LambdaWeights:
    weights: WeightAssignment
    log_lambda: float
    deep: np.ndarray  # H <= -dN
    empty_low_set: bool
    d: float
    rho: float
    zeta: float | None


def lambda_weights(instance: RemInstance, d: float, rho: float) -> LambdaWeights:
    """lambda(x) = 1 if H(x) >= -dN, else Z_N(beta, <= -d)^rho; mu = 1."""
    if d <= 0:
        raise ValueError("d must be positive")
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    cut = EnergyCut("le", d)
    deep = cut.mask(instance.energies, instance.N)
    low = log_partition(instance, cut)
    n = instance.n_states
    if low.empty:
        warnings.warn("no configuration below -dN; all weights are 1", EmptyLowSetWarning)
        return LambdaWeights(WeightAssignment.unit(n), 0.0, deep, True, d, rho, _zeta(instance, d))
    log_lam = rho * low.log_value
    lam = np.where(deep, math.exp(log_lam), 1.0)
    # The threshold is inclusive on both branches; deep states take lambda.
    return LambdaWeights(WeightAssignment(lam, np.ones(n)), log_lam, deep, False, d, rho,
                         _zeta(instance, d))


def _zeta(instance: RemInstance, d: float) -> float | None:
    return d / instance.beta - 1.0 if instance.beta > 0 else None


# ---------------------------------------------------------------------------
# Occupation numbers


def grid_parameter(N: int, c: float, c1: float = 1.0) -> tuple[float, float]:
    """(M, c_u) with c_u = (2 log 2 + c) / c1 and M = sqrt(N / log2(N c_u))."""
    if c <= 0 or c1 <= 0:
        raise ValueError("c and c1 must be positive")
    c_u = (2.0 * math.log(2.0) + c) / c1
    if N * c_u <= 1:
        raise ValueError("grid undefined: need N c_u > 1")
    return math.sqrt(N / math.log2(N * c_u)), c_u


@dataclass
class OccupationProfile:
    M: float
    c_u: float
    alpha: float
    A: float  # sqrt(alpha M^2 - 1), nan when alpha M^2 < 1
    D: float  # d M / beta_c - 1
    lower: np.ndarray  # interval k is (lower[k], upper[k]] on the -H axis
    upper: np.ndarray
    counts: np.ndarray
    above: int  # configurations with -H > dN
    total: int
    p: np.ndarray  # P[-H in interval], intervals as clipped at dN
    p_full: np.ndarray  # same for the unclipped intervals
    bracket_low: np.ndarray
    bracket_high: np.ndarray
    rho: np.ndarray
    lam: np.ndarray

    @property
    def bracket_ok(self) -> np.ndarray:
        return (self.bracket_low < self.p_full) & (self.p_full < self.bracket_high)

    @property
    def expected(self) -> np.ndarray:
        return self.total * self.p

    @property
    def exceeds(self) -> np.ndarray:
        """N_k > rho_k E(N_k), the event whose probability is controlled."""
        return self.counts > self.rho * self.expected


def _gaussian_interval(N: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    s = math.sqrt(N)
    lo, hi = a / s, b / s
    # use whichever tail is more accurate
    right = norm.sf(lo) - norm.sf(hi)
    left = norm.cdf(hi) - norm.cdf(lo)
    return np.where(lo > 0, right, left)


def _deviation_rate(rho: np.ndarray, p: np.ndarray) -> np.ndarray:
    lam = np.full(rho.shape, np.inf)
    small = rho * p < 1
    r, q = rho[small], p[small]
    lam[small] = (r * q * np.log(r * (1 - q) / (1 - r * q))
                  - np.log(1 - q + r * q * (1 - q) / (1 - r * q)))
    return lam


def occupation_profile(instance: RemInstance, d: float, c: float, c1: float = 1.0,
                       fixed_spins: Mapping[int, int] | None = None) -> OccupationProfile:
    """Occupation numbers of the energy grid on (-inf, dN] for the -H values.

    Interval 0 is (-inf, beta_c N / M], interval k >= 1 is
    (beta_c k N / M, beta_c (k+1) N / M], for k up to the first interval
    reaching dN; that last one is clipped at dN so the grid covers
    (-inf, dN] exactly.  With ``fixed_spins`` the counts run over the
    sub-cube of the free sites and alpha is their fraction.
    """
    N = instance.N
    M, c_u = grid_parameter(N, c, c1)
    fixed_spins = dict(fixed_spins or {})
    mask, value = _site_mask(fixed_spins, N)
    idx = np.arange(instance.n_states)
    minus_h = -np.asarray(instance.energies)[(idx & mask) == value]
    total = minus_h.size
    alpha = (N - len(fixed_spins)) / N

    step = BETA_C * N / M
    top = d * N
    K = max(int(math.ceil(top / step)) - 1, 0)
    k = np.arange(K + 1)
    lower = np.where(k == 0, -np.inf, step * k)
    upper_full = step * (k + 1)
    upper = np.minimum(upper_full, top)
    counts = np.array([np.count_nonzero((minus_h > lo) & (minus_h <= hi))
                       for lo, hi in zip(lower, upper)])
    above = int(np.count_nonzero(minus_h > top))

    width = BETA_C * math.sqrt(N) / M
    bracket_low = width * 2.0 ** (-((k + 1) ** 2) * N / M**2)
    bracket_high = width * 2.0 ** (-(k**2) * N / M**2)
    rho = 2.0 ** (N * np.maximum((k + 1) ** 2 / M**2 - alpha, 0.0) + 2)
    p = _gaussian_interval(N, lower, upper)
    p_full = _gaussian_interval(N, lower, upper_full)
    A = math.sqrt(alpha * M**2 - 1) if alpha * M**2 >= 1 else math.nan
    return OccupationProfile(M, c_u, alpha, A, d * M / BETA_C - 1, lower, upper, counts, above,
                             total, p, p_full, bracket_low, bracket_high, rho,
                             _deviation_rate(rho, p))


# ---------------------------------------------------------------------------
# Static bounds


def _sqrt_term(N: int, c: float, c1: float) -> float:
    return math.sqrt(c1 * (1 + c) * N * math.log(N)) if N > 1 else 0.0


def subcube_regime(beta: float, d: float, alpha: float, M: float) -> int:
    """Which branch of the sub-cube estimate applies (1, 2 or 3)."""
    if alpha * M**2 < 1:
        return 1
    A = math.sqrt(alpha * M**2 - 1)
    if A < beta / BETA_C * M:
        return 1
    if A < d / BETA_C * M:
        return 2
    return 3


def log_subcube_envelope(N: int, beta: float, d: float, alpha: float, M: float) -> float:
    """log of the three-branch envelope e^{beta d N} / e^{N(beta^2/2 + alpha beta_c^2/2)}."""
    flat = beta * d * N
    curved = N * (beta**2 / 2 + alpha * BETA_C**2 / 2)
    regime = subcube_regime(beta, d, alpha, M)
    if regime == 1:
        return flat
    if regime == 2:
        return float(np.logaddexp(flat, curved))
    return curved


def prefix_partitions(instance: RemInstance, j: int, cut: EnergyCut | None = None) -> np.ndarray:
    """log sum over sites 1..j-1 with sites j..N clamped, indexed by z >> (j-1)."""
    logw = _log_weights(instance, cut).reshape(-1, 1 << (j - 1))
    with np.errstate(divide="ignore"):
        return logsumexp(logw, axis=1)


def suffix_partitions(instance: RemInstance, j: int, cut: EnergyCut | None = None) -> np.ndarray:
    """log sum over sites j+1..N with sites 1..j clamped, indexed by z & (2^j - 1)."""
    logw = _log_weights(instance, cut).reshape(-1, 1 << j)
    with np.errstate(divide="ignore"):
        return logsumexp(logw, axis=0)


@dataclass
class StaticBoundsReport:
    N: int
    beta: float
    seed: int
    d: float
    c: float
    c1: float
    M: float
    c_u: float
    log_Z: float
    log_Z_low: float
    low_empty: bool
    rhs_low: float  # log of the upper bound on Z_N(beta, <= -d)
    rhs_Z: float  # log of the lower bound on Z_N(beta)
    subcube_lhs: np.ndarray  # per j: max_z log Z_{j-1}(beta, >= -d)[z_j, z_{>j}]
    subcube_rhs: np.ndarray
    subcube_regime: np.ndarray
    edge_lhs: float  # max over j, z of log(Z_{j-1} Z_{N-j} / Z_N)
    edge_rhs: float
    uniform_lhs: float  # max over j, z of log(Z_{j-1} 2^{-j})
    uniform_rhs: float
    tol: float = 1e-9
    checks: dict = field(default_factory=dict)

    def __post_init__(self):
        def le(a, b):
            return bool(a <= b + self.tol * max(1.0, abs(b)))

        self.checks = {
            "low_partition_upper": le(self.log_Z_low, self.rhs_low),
            "partition_lower": le(self.rhs_Z, self.log_Z),
            "subcube": all(le(a, b) for a, b in zip(self.subcube_lhs, self.subcube_rhs)),
            "edge_sum": le(self.edge_lhs, self.edge_rhs),
            "uniform_edge_sum": le(self.uniform_lhs, self.uniform_rhs),
        }

    @property
    def all_ok(self) -> bool:
        return all(self.checks.values())

    def to_json(self) -> dict:
        return {
            "N": self.N, "beta": self.beta, "seed": self.seed, "d": self.d, "c": self.c,
            "c1": self.c1, "M": self.M, "c_u": self.c_u, "log_Z": self.log_Z,
            "log_Z_low": None if self.low_empty else self.log_Z_low,
            "rhs_low": self.rhs_low, "rhs_Z": self.rhs_Z,
            "subcube_lhs": [None if not np.isfinite(v) else float(v) for v in self.subcube_lhs],
            "subcube_rhs": [float(v) for v in self.subcube_rhs],
            "subcube_regime": [int(v) for v in self.subcube_regime],
            "edge_lhs": self.edge_lhs, "edge_rhs": self.edge_rhs,
            "uniform_lhs": self.uniform_lhs, "uniform_rhs": self.uniform_rhs,
            "checks": dict(self.checks),
        }


def static_bounds_check(instance: RemInstance, d: float, c: float, c1: float = 1.0) -> StaticBoundsReport:
    """Evaluate both sides of the partition-function estimates on one instance."""
    N, beta = instance.N, instance.beta
    M, c_u = grid_parameter(N, c, c1)
    root = _sqrt_term(N, c, c1)
    log_Z = log_partition(instance).log_value
    low = log_partition(instance, EnergyCut("le", d))
    rhs_low = beta * BETA_C * root + N * (beta * d - d**2 / 2 + BETA_C**2 / 2)
    rhs_Z = -beta * BETA_C * root + N * (beta**2 / 2 + BETA_C**2 / 2)

    cut = EnergyCut("ge", d)
    grid_root = beta * BETA_C * math.sqrt(N * math.log2(c_u * N))
    z = np.arange(instance.n_states)
    sub_lhs, sub_rhs, regimes = [], [], []
    edge_lhs = uniform_lhs = -math.inf
    for j in range(1, N + 1):
        alpha = (j - 1) / N
        pre = prefix_partitions(instance, j, cut)
        suf = suffix_partitions(instance, j, cut)
        sub_lhs.append(float(pre.max()))
        sub_rhs.append(0.5 * math.log(N) + grid_root
                       + float(np.logaddexp(j * math.log(2), log_subcube_envelope(N, beta, d, alpha, M))))
        regimes.append(subcube_regime(beta, d, alpha, M))
        a = pre[z >> (j - 1)]
        b = suf[(z ^ (1 << (j - 1))) & ((1 << j) - 1)]
        with np.errstate(invalid="ignore"):
            edge_lhs = max(edge_lhs, float(np.max(a + b)))
        uniform_lhs = max(uniform_lhs, float(pre.max()) - j * math.log(2))
    edge_lhs -= log_Z
    edge_rhs = 0.5 * math.log(N) + grid_root + beta * d * N
    uniform_rhs = grid_root + beta * d * N
    return StaticBoundsReport(N, beta, instance.seed, d, c, c1, M, c_u, log_Z, low.log_value,
                              low.empty, rhs_low, rhs_Z, np.array(sub_lhs), np.array(sub_rhs),
                              np.array(regimes), edge_lhs, edge_rhs, uniform_lhs, uniform_rhs)


# ---------------------------------------------------------------------------
# Spectral gap sweep


@dataclass
class GapRecord:
    N: int
    seed: int
    beta: float
    gap: float

    @property
    def rate(self) -> float:
        """-(1/N) log gap."""
        return -math.log(self.gap) / self.N


@dataclass
class GapSweepReport:
    beta: float
    records: list
    medians: dict  # N -> median rate
    target: float  # beta * beta_c
    band_constant: float  # smallest c putting every median inside the band
    moves_away: bool  # median deviation at the largest N exceeds the one at the smallest

    def band(self, N: int, constant: float | None = None) -> tuple[float, float]:
        c = self.band_constant if constant is None else constant
        w = c * self.beta * math.sqrt(math.log(N) / N)
        return self.target - w, self.target + w

    def to_json(self) -> dict:
        return {
            "beta": self.beta, "target": self.target, "band_constant": self.band_constant,
            "moves_away": self.moves_away,
            "medians": {str(k): v for k, v in sorted(self.medians.items())},
            "records": [{"N": r.N, "seed": r.seed, "gap": r.gap, "rate": r.rate} for r in self.records],
        }


def rem_gap_sweep(N_list: Sequence[int], beta: float, seeds: Sequence[int],
                  cap: int = DEFAULT_CAP) -> GapSweepReport:
    if any(N > cap for N in N_list):
        raise CapExceeded(f"sizes {list(N_list)} exceed the exact-chain cap {cap}")
    records = []
    for N in sorted(N_list):
        for seed in seeds:
            inst = sample_instance(N, beta, seed)
            records.append(GapRecord(N, int(seed), float(beta), spectral_gap(metropolis_chain(inst, cap))))
    target = beta * BETA_C
    medians = {N: float(np.median([r.rate for r in records if r.N == N])) for N in sorted(set(N_list))}
    if beta > 0:
        const = max((abs(m - target) / (beta * math.sqrt(math.log(N) / N))
                     for N, m in medians.items() if N > 1), default=0.0)
    else:
        const = 0.0
    Ns = sorted(medians)
    moves_away = abs(medians[Ns[-1]] - target) > abs(medians[Ns[0]] - target)
    return GapSweepReport(float(beta), records, medians, target, float(const), bool(moves_away))
