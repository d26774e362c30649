"""The environment seen from the particle.

The configuration space S_N = {-1, +1}^N is a group under coordinatewise
product; on integer codes this is XOR and the identity is 0.  S_N acts on
energy tables by (sigma.h)(sigma') = h(sigma.sigma').  The environment at
time t is omega_t = X_t.H, whose law lives on the orbit {sigma.H}.

Laws on the orbit are stored as (acting element, weight) pairs against a
digest of the base table, never as 2^N translated tables.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .chain import EnvelopeEvaluator, SpectralDecomposition
from .errors import CapExceeded, InsufficientSeeds, InsufficientSeedsWarning
from .rem import BETA_C, RemInstance, gibbs_measure, instance_from_energies, metropolis_chain, sample_instance

ENV_CAP = 10

Functional = Callable[[np.ndarray], float]


def act(sigma: int, H) -> np.ndarray:
    """(sigma.H)(sigma') = H(sigma.sigma')."""
    H = np.asarray(H)
    n = H.shape[0]
    if n & (n - 1) or not 0 <= int(sigma) < n:
        raise ValueError(f"element {sigma} does not act on a table of length {n}")
    return H[np.arange(n) ^ int(sigma)]


def flip(i: int, N: int) -> int:
    """The element with a single -1 at site i (1-based)."""
    if not 1 <= i <= N:
        raise ValueError("site out of range")
    return 1 << (i - 1)


def digest(H) -> str:
    return hashlib.sha256(np.ascontiguousarray(H, dtype=float).tobytes()).hexdigest()[:16]


def pullback(phi: Functional, H) -> np.ndarray:
    """phi^H(sigma) = phi(sigma.H) for every sigma."""
    H = np.asarray(H)
    return np.array([phi(act(s, H)) for s in range(H.shape[0])], dtype=float)


def evaluation(sigma0: int) -> Functional:
    """h -> h(sigma0)."""
    return lambda h: float(h[sigma0])


@dataclass
class EnvironmentLaw:
    base_digest: str
    N: int
    elements: np.ndarray  # one acting sigma per distinct translate
    weights: np.ndarray
    multiplicity: np.ndarray

    def expectation(self, phi: Functional, H) -> float:
        if digest(H) != self.base_digest:
            raise ValueError("law was built on a different base table")
        return float(sum(w * phi(act(s, H)) for s, w in zip(self.elements, self.weights)))


def nu_measure(instance: RemInstance) -> EnvironmentLaw:
    """Push-forward of the Gibbs measure under sigma -> sigma.H.

    Translates that coincide bit for bit are merged.
    """
    H = np.asarray(instance.energies)
    pi = gibbs_measure(instance)
    first: dict[bytes, int] = {}
    elements, weights, mult = [], [], []
    for s in range(H.shape[0]):
        key = act(s, H).tobytes()
        if key in first:
            k = first[key]
            weights[k] += pi[s]
            mult[k] += 1
        else:
            first[key] = len(elements)
            elements.append(s)
            weights.append(pi[s])
            mult.append(1)
    return EnvironmentLaw(digest(H), instance.N, np.array(elements), np.array(weights), np.array(mult))


def _check_cap(instance: RemInstance, cap: int) -> None:
    if instance.N > cap:
        raise CapExceeded(f"N = {instance.N} exceeds the exact cap {cap}")


def _transition(instance: RemInstance, t: float) -> np.ndarray:
    return SpectralDecomposition.of(metropolis_chain(instance)).transition_matrix(t)


def _translate(instance: RemInstance, sigma: int) -> RemInstance:
    return instance_from_energies(act(sigma, instance.energies), instance.beta, instance.seed)


def default_functionals(N: int) -> list[Functional]:
    return [evaluation(s) for s in range(1 << N)]


@dataclass
class ShiftReport:
    sigma: int
    t: float
    single: float  # max |e^H_sigma phi(omega_t) - e^{sigma.H}_1 phi(omega_t)|
    two_time: float
    markov: float | None  # two-time value against the Markov factorization
    tol: float

    @property
    def ok(self) -> bool:
        vals = [self.single, self.two_time] + ([self.markov] if self.markov is not None else [])
        return max(vals) <= self.tol


def shift_lemma_check(instance: RemInstance, sigma: int, t: float, t2: float | None = None,
                      functionals: Sequence[Functional] | None = None, tol: float = 1e-10,
                      cap: int = ENV_CAP, markov_cap: int = 4) -> ShiftReport:
    """Compare the environment law started at sigma with the one for sigma.H started at 1.

    Both sides are evaluated from separate exact semigroups, one for H and
    one for the translated table.  The two-time check uses times (t, t2)
    with t2 = 3t by default, and for N <= ``markov_cap`` also compares the
    joint expectation with the factorization through the environment law at
    the intermediate time.
    """
    _check_cap(instance, cap)
    t2 = 3.0 * t if t2 is None else t2
    if t2 < t:
        raise ValueError("need t2 >= t")
    H = np.asarray(instance.energies)
    shifted = _translate(instance, sigma)
    fs = list(functionals) if functionals is not None else default_functionals(instance.N)
    phis_H = [pullback(f, H) for f in fs]
    phis_S = [pullback(f, shifted.energies) for f in fs]

    P1, P2 = _transition(instance, t), _transition(instance, t2 - t)
    Q1, Q2 = _transition(shifted, t), _transition(shifted, t2 - t)
    single = max(abs((P1 @ a)[sigma] - (Q1 @ b)[0]) for a, b in zip(phis_H, phis_S))

    two = 0.0
    pairs = [(i, (i + 1) % len(fs)) for i in range(len(fs))]
    for i, j in pairs:
        lhs = (P1 @ (phis_H[i] * (P2 @ phis_H[j])))[sigma]
        rhs = (Q1 @ (phis_S[i] * (Q2 @ phis_S[j])))[0]
        two = max(two, abs(lhs - rhs))

    markov = None
    if instance.N <= markov_cap:
        # inner expectation e_1^{omega}[phi_j(omega_{t2-t})] from the chain of omega itself
        n = instance.n_states
        inner_chains = [_transition(_translate(shifted, x), t2 - t) for x in range(n)]
        markov = 0.0
        for i, j in pairs:
            inner = np.array([(inner_chains[x] @ pullback(fs[j], act(x, shifted.energies)))[0]
                              for x in range(n)])
            lhs = (Q1 @ (phis_S[i] * (Q2 @ phis_S[j])))[0]
            rhs = (Q1 @ (phis_S[i] * inner))[0]
            markov = max(markov, abs(lhs - rhs))
    return ShiftReport(int(sigma), float(t), float(single), float(two), markov, tol)


@dataclass
class InvarianceReport:
    t: float
    invariance: float  # max |sum_H' nu(H') e_1^{H'} phi(omega_t) - nu(phi)|
    reversibility: float  # max asymmetry of the bilinear form
    tol: float

    @property
    def ok(self) -> bool:
        return max(self.invariance, self.reversibility) <= self.tol


def invariance_reversibility_check(instance: RemInstance, t: float,
                                   functionals: Sequence[Functional] | None = None,
                                   tol: float = 1e-10, cap: int = 6) -> InvarianceReport:
    """nu is invariant and reversible for omega_t, checked on a set of functionals.

    Invariance runs the environment chain from every point of the orbit,
    each with its own exact semigroup.
    """
    _check_cap(instance, cap)
    H = np.asarray(instance.energies)
    fs = list(functionals) if functionals is not None else default_functionals(instance.N)
    law = nu_measure(instance)
    starts = [_transition(_translate(instance, int(s)), t)[0] for s in law.elements]
    inv = 0.0
    for f in fs:
        moved = sum(w * (row @ pullback(f, act(int(s), H)))
                    for s, w, row in zip(law.elements, law.weights, starts))
        inv = max(inv, abs(moved - law.expectation(f, H)))

    P = _transition(instance, t)
    pi = gibbs_measure(instance)
    pulled = [pullback(f, H) for f in fs]
    rev = 0.0
    for a in range(len(fs)):
        for b in range(a + 1, len(fs)):
            x, y = pulled[a], pulled[b]
            rev = max(rev, abs((x * pi) @ (P @ y) - (y * pi) @ (P @ x)))
    return InvarianceReport(float(t), float(inv), float(rev), tol)


@dataclass
class AveragedLawReport:
    t: float
    means: np.ndarray  # disorder average of e^H_sigma phi(omega_t) per sigma
    half_widths: np.ndarray  # 95% normal half widths
    seeds: int

    @property
    def overlapping(self) -> bool:
        lo, hi = self.means - self.half_widths, self.means + self.half_widths
        return bool(lo.max() <= hi.min())


def averaged_start_independence(N: int, beta: float, phi: Functional, t: float,
                                seeds: Sequence[int], cap: int = 4) -> AveragedLawReport:
    """Disorder average of e^H_sigma[phi(omega_t)] for every starting sigma."""
    if N > cap:
        raise CapExceeded(f"N = {N} exceeds {cap}")
    rows = []
    for seed in seeds:
        inst = sample_instance(N, beta, seed)
        rows.append(_transition(inst, t) @ pullback(phi, inst.energies))
    vals = np.array(rows)
    se = vals.std(axis=0, ddof=1) / math.sqrt(len(seeds))
    return AveragedLawReport(float(t), vals.mean(axis=0), 1.96 * se, len(seeds))


# ------------------------------------------------------------- T_av --


def finite_size_slack(N: int, beta: float, c: float = 1.0, c1: float = 1.0) -> float:
    """2 beta beta_c sqrt(c1 (1+c) log N / N) + 4 log N / N."""
    return 2 * beta * BETA_C * math.sqrt(c1 * (1 + c) * math.log(N) / N) + 4 * math.log(N) / N


@dataclass
class TavReport:
    N: int
    beta: float
    epsilon: float
    seeds: list
    time_grid: np.ndarray
    mean_upper: np.ndarray  # disorder average of the uniform-start upper envelope
    half_width: np.ndarray
    t_av: float  # first grid time with mean_upper <= epsilon
    t_av_low: float  # same for mean - half width
    t_av_high: float  # same for mean + half width
    c: float
    c1: float

    @property
    def rate(self) -> float:
        return math.log(self.t_av) / self.N if self.t_av > 0 else -math.inf

    @property
    def slack(self) -> float:
        return finite_size_slack(self.N, self.beta, self.c, self.c1)

    @property
    def within_trend(self) -> bool:
        return self.rate <= self.beta**2 + self.slack

    def to_json(self) -> dict:
        return {
            "N": self.N, "beta": self.beta, "epsilon": self.epsilon, "seeds": list(self.seeds),
            "time_grid": self.time_grid.tolist(), "mean_upper": self.mean_upper.tolist(),
            "half_width": self.half_width.tolist(), "t_av": self.t_av, "t_av_low": self.t_av_low,
            "t_av_high": self.t_av_high, "rate": self.rate, "beta_sq": self.beta**2,
            "slack": self.slack, "within_trend": self.within_trend,
        }


def _first_below(grid: np.ndarray, values: np.ndarray, eps: float) -> float:
    # values are non-increasing, so the first grid point below eps is where it stays
    hit = np.nonzero(values <= eps)[0]
    return float(grid[hit[0]]) if hit.size else math.inf


def t_av_estimate(N: int, beta: float, epsilon: float, seeds: Sequence[int], time_grid=None,
                  cap: int = ENV_CAP, c: float = 1.0, c1: float = 1.0, min_seeds: int = 30) -> TavReport:
    """Disorder-averaged uniform-start distance and the time it drops below epsilon.

    On a finite orbit the sup over environment functionals is the sup over
    functions of the particle position, so the averaged quantity is the
    disorder mean of sum_y eta(y) ||P_t(y, .) - pi||_1 with eta uniform.
    """
    if N > cap:
        raise CapExceeded(f"N = {N} exceeds the exact cap {cap}")
    seeds = list(seeds)
    if not seeds:
        raise InsufficientSeeds("no seeds")
    if len(seeds) < min_seeds:
        warnings.warn(f"{len(seeds)} seeds < {min_seeds}; averages are unstable", InsufficientSeedsWarning)
    grid = np.geomspace(1e-2, 1e8, 161) if time_grid is None else np.asarray(time_grid, dtype=float)
    if epsilon >= 2:
        z = np.zeros(grid.size)
        return TavReport(N, beta, epsilon, seeds, grid, z, z, 0.0, 0.0, 0.0, c, c1)
    n = 1 << N
    eta = np.full(n, 1.0 / n)
    curves = []
    for seed in seeds:
        ev = EnvelopeEvaluator(metropolis_chain(sample_instance(N, beta, seed)), eta)
        curves.append([ev.upper(s) for s in grid])
    curves = np.array(curves)
    mean = curves.mean(axis=0)
    hw = 1.96 * curves.std(axis=0, ddof=1) / math.sqrt(len(seeds)) if len(seeds) > 1 else np.zeros(grid.size)
    return TavReport(N, beta, epsilon, seeds, grid, mean, hw, _first_below(grid, mean, epsilon),
                     _first_below(grid, mean - hw, epsilon), _first_below(grid, mean + hw, epsilon), c, c1)
