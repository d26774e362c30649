"""Generalized Poincare constants, their geometric bounds and the decay bound.

Test functions give upper bounds on the constants (each ratio is an upper
bound on the infimum).  Path sums give lower bounds, reported here as
upper bounds on the reciprocal 1/L.  Theorem checks always consume the
side that keeps the asserted inequality sound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .chain import ReversibleChain, dirichlet_form, first_eigenpair
from .errors import (
    NonPositiveInput,
    NotCentered,
    PartitionInvalid,
    ZeroConductanceEdge,
    ZeroDenominator,
)
from .paths import PathFamily

FAMILIES = ("L", "L_eta", "K", "Lambda", "K2")


@dataclass(frozen=True)
class WeightAssignment:
    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.lam) <= 0) or np.any(np.asarray(self.mu) <= 0):
            raise NonPositiveInput("weights must be strictly positive")

    @classmethod
    def unit(cls, n: int) -> "WeightAssignment":
        return cls(np.ones(n), np.ones(n))


@dataclass
class BoundReport:
    name: str
    value: float
    parameters: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"name": self.name, "value": self.value,
                "parameters": self.parameters, "provenance": self.provenance}


@dataclass
class FunctionalConstantEstimate:
    family: str
    p: float
    upper_bound: float
    witness: np.ndarray
    eta: np.ndarray | None = None
    lower_bound: float | None = None


# ------------------------------------------------------------------ ratios --

def constant_ratio(chain: ReversibleChain, family: str, p: float, f, eta=None,
                   center_tol: float = 1e-10) -> float:
    """Defining ratio of the constant ``family`` at the test function f.

    L      E ||f||^{(2-2p)/p} / pi(|f|)^{2/p}
    L_eta  E ||f||^{(2-2p)/p} / eta(|f|)^{2/p}
    K      E ||f||^{(4-2p)/p} / pi(f^2)^{2/p}
    Lambda E / pi(|f|^p)^{2/p}
    K2     E pi(f^2)^{(1-p)/(2p)} / pi(|f|)^{(p+1)/p}

    Each ratio is homogeneous of degree 0, so f is rescaled to
    ||f||_inf = 1 before evaluation.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    upper_p = 2.0 if family == "Lambda" else 1.0
    if not 0 < p <= upper_p:
        raise ValueError(f"p={p} outside (0, {upper_p}]")
    f = np.asarray(f, dtype=float)
    if f.shape != (chain.n,):
        raise ValueError("function dimension does not match the chain")
    scale = float(np.max(np.abs(f)))
    if scale == 0:
        raise ZeroDenominator("f vanishes identically")
    g = f / scale
    pi = chain.pi
    if abs(pi @ g) > center_tol:
        raise NotCentered(f"pi(f) = {pi @ f:.3e} is not zero")
    energy = dirichlet_form(chain, g)
    a = np.abs(g)
    if family == "L":
        den = pi @ a
        if den <= 0:
            raise ZeroDenominator("pi(|f|) = 0")
        return energy / den ** (2 / p)
    if family == "L_eta":
        if eta is None:
            raise ValueError("L_eta needs eta")
        den = np.asarray(eta, dtype=float) @ a
        if den <= 0:
            raise ZeroDenominator("f vanishes on the support of eta")
        return energy / den ** (2 / p)
    if family == "K":
        den = pi @ a**2
        if den <= 0:
            raise ZeroDenominator("pi(f^2) = 0")
        return energy / den ** (2 / p)
    if family == "Lambda":
        den = pi @ a**p
        if den <= 0:
            raise ZeroDenominator("pi(|f|^p) = 0")
        return energy / den ** (2 / p)
    den = pi @ a
    if den <= 0:
        raise ZeroDenominator("pi(|f|) = 0")
    return energy * (pi @ a**2) ** ((1 - p) / (2 * p)) / den ** ((p + 1) / p)


def _safe_ratio(chain, family, p, f, eta) -> float:
    try:
        return constant_ratio(chain, family, p, f, eta, center_tol=np.inf)
    except ZeroDenominator:
        return np.inf


def _normalized(chain: ReversibleChain, g: np.ndarray) -> np.ndarray:
    f = g - chain.pi @ g
    m = np.max(np.abs(f))
    return f / m if m > 0 else f


def minimize_constant(chain: ReversibleChain, family: str, p: float, eta=None,
                      starts: int = 8, sweeps: int = 30, seed: int = 0,
                      extra_starts=()) -> FunctionalConstantEstimate:
    """Multistart coordinate descent on the ratio over centered f.

    Starting points: the first eigenfunction, centered point masses at
    the states of smallest pi (and largest eta for L_eta), caller-supplied
    vectors, and seeded Gaussian vectors.  Each coordinate is optimized by
    a bounded scalar search; f is recentered and renormalized to
    ||f||_inf = 1 after every step.
    """
    rng = np.random.default_rng(seed)
    n = chain.n
    pool = []
    if n > 1:
        pool.append(first_eigenpair(chain)[1])
    order = np.argsort(chain.pi)
    picks = list(order[:3])
    if eta is not None:
        picks += list(np.argsort(-np.asarray(eta))[:3])
    for x in dict.fromkeys(int(v) for v in picks):
        d = np.zeros(n)
        d[x] = 1.0
        pool.append(d)
    pool.extend(np.asarray(v, dtype=float) for v in extra_starts)
    while len(pool) < starts + 1:
        pool.append(rng.standard_normal(n))

    best_val, best_f = np.inf, None
    for g0 in pool:
        f = _normalized(chain, g0)
        val = _safe_ratio(chain, family, p, f, eta)
        for _ in range(sweeps):
            prev = val
            for z in rng.permutation(n):
                def objective(v, z=z, f=f):
                    h = f.copy()
                    h[z] = v
                    return _safe_ratio(chain, family, p, _normalized(chain, h), eta)

                res = minimize_scalar(objective, bounds=(-2.0, 2.0), method="bounded",
                                      options={"xatol": 1e-9})
                if res.fun < val:
                    h = f.copy()
                    h[z] = res.x
                    f = _normalized(chain, h)
                    val = _safe_ratio(chain, family, p, f, eta)
            if val >= prev * (1 - 1e-10):
                break
        if val < best_val:
            best_val, best_f = val, f
    return FunctionalConstantEstimate(family, p, float(best_val), best_f,
                                      None if eta is None else np.asarray(eta, dtype=float))


# ------------------------------------------------------------ path bounds --

def _edge_conductances(chain: ReversibleChain, tails, heads) -> np.ndarray:
    K = chain.rates.tocsr()
    q = chain.pi[tails] * np.asarray(K[tails, heads]).ravel()
    if np.any(q <= 0):
        k = int(np.argmin(q))
        raise ZeroConductanceEdge(f"path uses edge ({tails[k]}, {heads[k]}) with Q = 0")
    return q


def path_bound_L_eta(chain: ReversibleChain, paths: PathFamily, weights: WeightAssignment | None,
                     p: float, eta) -> BoundReport:
    """Upper bound on 1/L_eta(p) from paths and weights.

    For p < 1:
      2^{2/p-1} (sum pi lam^{q} * sum eta mu^{q})^{(2-2p)/p}
        * sum_e (1/Q(e)) (sum_{pairs through e} pi(x) eta(y) / (lam(x) mu(y)))^2
    with q = p/(1-p) and e running over oriented edges.  At p = 1 the
    prefactor is its p -> 1 limit, (max lam * max mu)^2, which is 1 for
    unit weights and gives 2 sum_e (1/Q) (sum pi(x) eta(y))^2.
    """
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    paths.check_complete()
    eta = np.asarray(eta, dtype=float)
    w = weights if weights is not None else WeightAssignment.unit(chain.n)
    lam, mu = np.asarray(w.lam, dtype=float), np.asarray(w.mu, dtype=float)
    x, y = paths.sources, paths.targets
    pair_w = chain.pi[x] * eta[y] / (lam[x] * mu[y])
    tails, heads, loads = paths.edge_loads(pair_w)
    q = _edge_conductances(chain, tails, heads)
    path_sum = float(np.sum(loads**2 / q))
    if p == 1:
        log_pref = 2 * (math.log(lam.max()) + math.log(mu.max()))
        value = 2.0 * math.exp(log_pref) * path_sum
    else:
        e = p / (1 - p)
        pos = eta > 0
        log_a = logsumexp(np.log(chain.pi) + e * np.log(lam))
        log_b = logsumexp(np.log(eta[pos]) + e * np.log(mu[pos]))
        log_value = ((2 / p - 1) * math.log(2) + (2 - 2 * p) / p * (log_a + log_b)
                     + math.log(path_sum))
        value = math.exp(log_value)
    return BoundReport("inverse_L_eta_path_bound", value,
                       {"p": p, "weights": "unit" if weights is None else "custom"},
                       {"paths": paths.meta.get("rule", "custom")})


def path_bound_gap(chain: ReversibleChain, paths: PathFamily) -> BoundReport:
    """Upper bound on 1/lambda: max over edges of (1/Q) sum |gamma| pi(x) pi(y).

    Loads are accumulated per unordered edge, which can only enlarge the
    maximum relative to oriented loads.
    """
    paths.check_complete()
    x, y = paths.sources, paths.targets
    pair_w = paths.lengths * chain.pi[x] * chain.pi[y]
    tails, heads, loads = paths.edge_loads(pair_w, oriented=False)
    q = _edge_conductances(chain, tails, heads)
    return BoundReport("inverse_gap_path_bound", float(np.max(loads / q)), {},
                       {"paths": paths.meta.get("rule", "custom")})


def _as_mask(n: int, s) -> np.ndarray:
    s = np.asarray(s)
    if s.dtype == bool:
        if s.shape != (n,):
            raise PartitionInvalid("mask has the wrong length")
        return s.copy()
    m = np.zeros(n, dtype=bool)
    m[s.astype(int)] = True
    return m


def _partition(n: int, B, G) -> tuple[np.ndarray, np.ndarray]:
    b = _as_mask(n, B)
    g = ~b if G is None else _as_mask(n, G)
    if np.any(b & g) or not np.all(b | g):
        raise PartitionInvalid("B and G must partition the state space")
    return b, g


def good_bad_weights(chain: ReversibleChain, p: float, eta, B, B_eta=None) -> WeightAssignment:
    """lam = pi(B)^{1-1/p} on B, mu = eta(B_eta)^{1-1/p} on B_eta, 1 elsewhere."""
    eta = np.asarray(eta, dtype=float)
    b = _as_mask(chain.n, B)
    be = b if B_eta is None else _as_mask(chain.n, B_eta)
    lam = np.ones(chain.n)
    mu = np.ones(chain.n)
    if b.any():
        lam[b] = chain.pi[b].sum() ** (1 - 1 / p)
    mass = eta[be].sum()
    if be.any() and mass > 0:
        mu[be] = mass ** (1 - 1 / p)
    return WeightAssignment(lam, mu)


def good_bad_bound(chain: ReversibleChain, paths: PathFamily, p: float, eta, B, G=None,
                   B_eta=None, G_eta=None) -> BoundReport:
    """Upper bound on 1/L_eta(p) from a good/bad split of the states.

    2^{6/p-3} { gamma* sup_e (1/Q) sum_{x in G, y in G_eta, e in gamma(x,y)} pi(x) eta(y)
                + 2 (sum_{e in bad edges} 1/Q) (pi(B)^{2/p} + eta(B_eta)^{2/p}) }
    where bad edges lie on some path with x in B or y in B_eta.  Without
    B_eta the same split is used for both measures.
    """
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    paths.check_complete()
    eta = np.asarray(eta, dtype=float)
    b, g = _partition(chain.n, B, G)
    if B_eta is None and G_eta is None:
        be, ge = b, g
    else:
        be, ge = _partition(chain.n, B_eta if B_eta is not None else ~_as_mask(chain.n, G_eta), G_eta)
    x, y = paths.sources, paths.targets
    gamma_star = int(paths.lengths.max())

    good_w = np.where(g[x] & ge[y], chain.pi[x] * eta[y], 0.0)
    tails, heads, loads = paths.edge_loads(good_w)
    q = _edge_conductances(chain, tails, heads)
    sup_term = float(np.max(loads / q)) if loads.size else 0.0

    flagged = (b[x] | be[y]).astype(float)
    bt, bh, hits = paths.edge_loads(flagged)
    bad = hits > 0
    bad_sum = float(np.sum(1.0 / _edge_conductances(chain, bt[bad], bh[bad]))) if bad.any() else 0.0
    mass = chain.pi[b].sum() ** (2 / p) + eta[be].sum() ** (2 / p)
    value = 2.0 ** (6 / p - 3) * (gamma_star * sup_term + 2.0 * bad_sum * mass)
    return BoundReport("inverse_L_eta_good_bad_bound", value,
                       {"p": p, "gamma_star": gamma_star, "bad_edges": int(bad.sum()),
                        "pi_B": float(chain.pi[b].sum()), "eta_B": float(eta[be].sum()),
                        "distinct_eta_split": B_eta is not None or G_eta is not None},
                       {"paths": paths.meta.get("rule", "custom")})


# ----------------------------------------------------------- decay bounds --

def _check_positive(**kw):
    for name, v in kw.items():
        if not (v > 0 and np.isfinite(v)):
            raise NonPositiveInput(f"{name} must be positive and finite, got {v}")


def _check_exponents(p, p_prime):
    if not (0 < p <= 1 and 0 < p_prime <= 1):
        raise NonPositiveInput("p and p' must lie in (0, 1]")


def decay_constant(p: float, p_prime: float) -> float:
    """C_{p,p'} = e^{-p'/2} (p/(2-p))^{pp'/(4-2p)}."""
    return math.exp(-p_prime / 2) * (p / (2 - p)) ** (p * p_prime / (4 - 2 * p))


def mixing_constant(p: float) -> float:
    """e^{-(2-p)/2} (p/(2-p))^{p/2}."""
    return math.exp(-(2 - p) / 2) * (p / (2 - p)) ** (p / 2)


def decay_bound(L_eta_lower: float, L_lower: float, p: float, p_prime: float, t: float) -> float:
    """C_{p,p'} L_eta(p')^{-p'/2} L(p)^{-pp'/(4-2p)} t^{-p'/(2-p)}.

    Decreasing in both constants, so lower bounds give a valid bound.
    """
    _check_exponents(p, p_prime)
    _check_positive(L_eta_lower=L_eta_lower, L_lower=L_lower, t=t)
    log_val = (math.log(decay_constant(p, p_prime)) - p_prime / 2 * math.log(L_eta_lower)
               - p * p_prime / (4 - 2 * p) * math.log(L_lower) - p_prime / (2 - p) * math.log(t))
    return math.exp(log_val)


def log_mixing_time_bound(log_inv_L_eta: float, log_inv_L: float, p: float, p_prime: float,
                          epsilon: float) -> float:
    """log of :func:`mixing_time_bound`, taking log 1/L_eta(p') and log 1/L(p)."""
    _check_exponents(p, p_prime)
    _check_positive(epsilon=epsilon)
    return (math.log(mixing_constant(p)) + (2 - p) / 2 * log_inv_L_eta
            + p / 2 * log_inv_L - (2 - p) / p_prime * math.log(epsilon))


def mixing_time_bound(L_eta_lower: float, L_lower: float, p: float, p_prime: float,
                      epsilon: float) -> float:
    """Ct_p L_eta(p')^{-(2-p)/2} L(p)^{-p/2} eps^{-(2-p)/p'}."""
    _check_positive(L_eta_lower=L_eta_lower, L_lower=L_lower)
    return math.exp(log_mixing_time_bound(-math.log(L_eta_lower), -math.log(L_lower),
                                          p, p_prime, epsilon))


def l2_decay_bound(K_lower: float, p: float, t: float, f_sup: float = 1.0) -> float:
    """((4-2p)/p)^{-p/(2-p)} (K t)^{-p/(2-p)} ||f||^2, bound on pi[(P_t f)^2]."""
    _check_positive(K_lower=K_lower, t=t)
    e = p / (2 - p)
    return ((4 - 2 * p) / p) ** (-e) * (K_lower * t) ** (-e) * f_sup**2


# ----------------------------------------------------- eigenvector check --

@dataclass
class ConcentrationReport:
    eigenvalue: float
    pi_abs_phi: float
    k2_ratio: float
    k2_ratio_bound: float
    chain_holds: bool
    p: float
    p_prime: float
    l_over_L: dict


def eigenvector_concentration(chain: ReversibleChain, p: float, p_prime: float,
                              L_estimates: dict | None = None) -> ConcentrationReport:
    """First eigenpair diagnostics.

    With pi(phi^2) = 1 and E(phi, phi) = l, the K2 ratio at phi equals
    l / pi(|phi|)^{(p+1)/p}; the check asserts the ratio does not exceed
    that value.  ``L_estimates`` maps labels (for example "upper" and
    "lower") to values of L(p) and is echoed as l / L together with
    (l / L)^{p'/(1+p')}.
    """
    if not p_prime < p:
        raise ValueError("need p' < p")
    lam, phi = first_eigenpair(chain)
    a = float(chain.pi @ np.abs(phi))
    ratio = constant_ratio(chain, "K2", p, phi, center_tol=1e-8)
    bound = lam / a ** ((p + 1) / p)
    diag = {}
    for k, v in (L_estimates or {}).items():
        r = lam / v
        diag[k] = {"l_over_L": r, "power": r ** (p_prime / (1 + p_prime))}
    return ConcentrationReport(lam, a, ratio, bound, bool(ratio <= bound * (1 + 1e-9)),
                               p, p_prime, diag)
