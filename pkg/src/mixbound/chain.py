"""Finite reversible Markov chains in continuous time.

A chain is given by off-diagonal jump rates K(x, y) and a stationary law pi
with pi(x) K(x, y) = pi(y) K(y, x).  The symmetric kernel is
k(x, y) = K(x, y) / pi(y) and the edge conductance is
Q(x, y) = k(x, y) pi(x) pi(y) = pi(x) K(x, y).

Everything spectral is done on the symmetrized generator
S = D^{1/2} (-L) D^{-1/2}, D = diag(pi), which is symmetric positive
semidefinite with null vector sqrt(pi).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components
from scipy.stats import poisson

from .errors import (
    DetailedBalanceViolation,
    EigensolverFailure,
    EmptyGrid,
    NonPositivePi,
    NotIrreducible,
    NotReachedWithinHorizon,
)

# Above this many states the gap is computed by sparse shift-invert Lanczos.
DENSE_GAP_LIMIT = 2048
# Poisson tail mass dropped by uniformization.
UNIFORMIZATION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ReversibleChain:
    """Validated reversible chain.  Build with :func:`build_chain`."""

    rates: sp.csr_matrix
    pi: np.ndarray
    states: tuple
    out_rates: np.ndarray
    edges: np.ndarray  # (m, 2) with edges[:, 0] < edges[:, 1]
    conductance: np.ndarray  # Q per unordered edge, aligned with ``edges``

    @property
    def n(self) -> int:
        return self.pi.shape[0]

    @property
    def max_rate(self) -> float:
        return float(self.out_rates.max()) if self.n else 0.0

    def generator(self) -> sp.csr_matrix:
        return (self.rates - sp.diags(self.out_rates)).tocsr()

    def kernel(self, x: int, y: int) -> float:
        """k(x, y) = K(x, y) / pi(y)."""
        return float(self.rates[x, y]) / float(self.pi[y])

    def edge_conductance(self, x: int, y: int) -> float:
        return float(self.pi[x] * self.rates[x, y])

    def conductance_matrix(self) -> sp.csr_matrix:
        """Symmetric sparse matrix of Q(x, y)."""
        return (sp.diags(self.pi) @ self.rates).tocsr()

    def symmetrized(self) -> sp.csr_matrix:
        """S = D^{1/2}(-L)D^{-1/2} as a sparse symmetric matrix."""
        s = np.sqrt(self.pi)
        off = sp.diags(s) @ self.rates @ sp.diags(1.0 / s)
        off = 0.5 * (off + off.T)
        return (sp.diags(self.out_rates) - off).tocsr()

    def state_index(self, label) -> int:
        return self.states.index(label)


def _as_sparse_rates(rates, n: int | None, states: Sequence | None) -> sp.csr_matrix:
    if isinstance(rates, Mapping):
        if states is None:
            raise ValueError("a rate mapping needs explicit state labels")
        index = {s: i for i, s in enumerate(states)}
        rows, cols, vals = [], [], []
        for (x, y), r in rates.items():
            rows.append(index[x])
            cols.append(index[y])
            vals.append(float(r))
        m = len(states)
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))
    if sp.issparse(rates):
        return sp.csr_matrix(rates, dtype=float)
    arr = np.asarray(rates, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError("rates must be a square matrix")
    return sp.csr_matrix(arr)


def build_chain(states, rates, pi, tol: float = 1e-10) -> ReversibleChain:
    """Validate rates and pi and return an immutable chain.

    ``states`` is either the number of states or a sequence of labels.
    ``rates`` may be a dense array, a scipy sparse matrix or a mapping
    ``{(x, y): K(x, y)}`` keyed by labels.  Diagonal entries are ignored.
    """
    if isinstance(states, (int, np.integer)):
        labels = tuple(range(int(states)))
    else:
        labels = tuple(states)
    K = _as_sparse_rates(rates, len(labels), labels)
    n = len(labels)
    if K.shape != (n, n):
        raise ValueError(f"rates shape {K.shape} does not match {n} states")
    pi = np.asarray(pi, dtype=float).ravel()
    if pi.shape != (n,):
        raise ValueError("pi has the wrong length")
    if not np.all(np.isfinite(pi)) or np.any(pi <= 0):
        raise NonPositivePi("pi must be strictly positive on every state")
    total = pi.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"pi sums to {total}, not 1")
    pi = pi / total

    K = K.tolil()
    K.setdiag(0.0)
    K = K.tocsr()
    K.eliminate_zeros()
    if K.nnz and (K.data.min() < 0 or not np.all(np.isfinite(K.data))):
        raise ValueError("rates must be finite and nonnegative")

    flow = (sp.diags(pi) @ K).tocsr()
    asym = abs(flow - flow.T)
    scale = max(abs(flow).max() if flow.nnz else 0.0, np.finfo(float).tiny)
    worst = asym.max() if asym.nnz else 0.0
    if worst > tol * scale:
        raise DetailedBalanceViolation(
            f"max |pi(x)K(x,y) - pi(y)K(y,x)| = {worst:.3e} exceeds {tol:.1e} * {scale:.3e}"
        )
    if n > 1:
        ncomp, _ = connected_components(K, directed=False)
        if ncomp != 1:
            raise NotIrreducible(f"rate graph has {ncomp} connected components")

    upper = sp.triu(flow + flow.T, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    edges = np.stack([upper.row[order], upper.col[order]], axis=1).astype(np.int64)
    # The symmetrized flow counts each edge twice.
    conductance = 0.5 * upper.data[order]
    out_rates = np.asarray(K.sum(axis=1)).ravel()
    return ReversibleChain(K, pi, labels, out_rates, edges, conductance)


def random_reversible_chain(n: int, rng: np.random.Generator, density: float = 0.5,
                            pi_spread: float = 2.0) -> ReversibleChain:
    """Random connected reversible chain for testing.

    pi is log-uniform over a range of ``pi_spread`` e-folds; conductances
    are exponential on a random spanning tree plus extra random edges.
    """
    pi = np.exp(pi_spread * rng.random(n))
    pi /= pi.sum()
    Q = np.zeros((n, n))
    perm = rng.permutation(n)
    for i in range(1, n):
        a, b = perm[i], perm[rng.integers(i)]
        Q[a, b] = Q[b, a] = rng.exponential()
    extra = np.triu(rng.random((n, n)) < density, k=1)
    w = np.triu(rng.exponential(size=(n, n)), k=1) * extra
    Q = np.maximum(Q, w + w.T)
    K = Q / pi[:, None]
    return build_chain(n, K, pi)


def dirichlet_form(chain: ReversibleChain, f, g=None) -> float:
    """E(f, g) = 1/2 sum_{x,y} (f(x)-f(y))(g(x)-g(y)) Q(x, y)."""
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    if f.shape != (chain.n,) or g.shape != (chain.n,):
        raise ValueError("function dimension does not match the chain")
    if chain.edges.size == 0:
        return 0.0
    u, v = chain.edges[:, 0], chain.edges[:, 1]
    # Each unordered edge appears twice in the ordered double sum.
    return float(np.sum(chain.conductance * (f[u] - f[v]) * (g[u] - g[v])))


# ---------------------------------------------------------------- spectral --

def _center(chain: ReversibleChain, f: np.ndarray) -> np.ndarray:
    return f - chain.pi @ f


def rayleigh_gap(chain: ReversibleChain, phi: np.ndarray) -> float:
    """E(phi, phi) / Var_pi(phi).

    All terms of the Dirichlet form are nonnegative, so this keeps full
    relative precision even when the gap is far below machine epsilon
    times the largest rate.
    """
    phi = _center(chain, np.asarray(phi, dtype=float))
    var = float(chain.pi @ phi**2)
    if var <= 0:
        raise EigensolverFailure("eigenvector is constant")
    return dirichlet_form(chain, phi) / var


def _normalize_eigenfunction(chain: ReversibleChain, v: np.ndarray) -> np.ndarray:
    s = np.sqrt(chain.pi)
    u = s / np.linalg.norm(s)
    v = v - u * (u @ v)
    phi = _center(chain, v / s)
    phi /= np.sqrt(chain.pi @ phi**2)
    k = int(np.argmax(np.abs(phi)))
    return phi if phi[k] > 0 else -phi


def _dense_first_vector(chain: ReversibleChain) -> np.ndarray:
    S = chain.symmetrized().toarray()
    try:
        w, v = sla.eigh(S, subset_by_index=[0, 1], driver="evr")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigensolverFailure(str(exc)) from exc
    # Near-degenerate pairs can mix with the constant mode; pick the column
    # with the smaller overlap and let normalization project it out.
    s = np.sqrt(chain.pi)
    u = s / np.linalg.norm(s)
    overlaps = np.abs(u @ v)
    col = int(np.argmin(overlaps))
    return v[:, col]


def _sparse_first_vector(chain: ReversibleChain) -> np.ndarray:
    n = chain.n
    A = chain.symmetrized().tocsc()
    s = np.sqrt(chain.pi)
    u = s / np.linalg.norm(s)
    shift = 1e-12 * max(chain.max_rate, 1.0)
    try:
        lu = spla.splu(A + shift * sp.identity(n, format="csc"), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise EigensolverFailure(str(exc)) from exc

    def matvec(x):
        x = np.ravel(x)
        x = x - u * (u @ x)
        y = lu.solve(x)
        return y - u * (u @ y)

    op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    v0 = np.random.default_rng(0).standard_normal(n)
    try:
        _, vec = spla.eigsh(op, k=1, which="LA", v0=v0, tol=1e-12, maxiter=20 * n)
    except spla.ArpackNoConvergence as exc:
        raise EigensolverFailure("Lanczos did not converge") from exc
    return vec[:, 0]


def first_eigenpair(chain: ReversibleChain, method: str = "auto") -> tuple[float, np.ndarray]:
    """Smallest nonzero eigenvalue of -L and its eigenfunction phi.

    phi is centered, normalized to pi(phi^2) = 1 and signed so that its
    largest-magnitude entry is positive.  The eigenvalue is the Rayleigh
    quotient of phi.
    """
    if chain.n < 2:
        raise EigensolverFailure("a single-state chain has no gap")
    if method == "auto":
        method = "dense" if chain.n <= DENSE_GAP_LIMIT else "sparse"
    if method == "dense":
        v = _dense_first_vector(chain)
    elif method == "sparse":
        v = _sparse_first_vector(chain)
    else:
        raise ValueError(f"unknown method {method!r}")
    phi = _normalize_eigenfunction(chain, v)
    lam = rayleigh_gap(chain, phi)
    if not np.isfinite(lam) or lam <= 0:
        raise EigensolverFailure(f"bad gap estimate {lam}")
    return lam, phi


def spectral_gap(chain: ReversibleChain, method: str = "auto") -> float:
    return first_eigenpair(chain, method)[0]


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Full eigendecomposition of S, used to evaluate P_s exactly.

    P_s(x, y) = pi(y) + sqrt(pi(y)/pi(x)) sum_{k>=1} e^{-s l_k} v_k(x) v_k(y).
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    sqrt_pi: np.ndarray
    pi: np.ndarray = field(repr=False)

    @classmethod
    def of(cls, chain: ReversibleChain) -> "SpectralDecomposition":
        S = chain.symmetrized().toarray()
        try:
            w, v = sla.eigh(S, driver="evd", overwrite_a=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EigensolverFailure(str(exc)) from exc
        s = np.sqrt(chain.pi)
        u = s / np.linalg.norm(s)
        # Drop the column carrying the constant mode, keep the rest.
        k0 = int(np.argmax(np.abs(u @ v)))
        keep = np.ones(len(w), dtype=bool)
        keep[k0] = False
        w, v = np.maximum(w[keep], 0.0), v[:, keep]
        return cls(w, np.ascontiguousarray(v), s, chain.pi)

    def _active(self, s: float, floor: float = 1e-300) -> np.ndarray:
        # Modes whose factor e^{-s l} underflows contribute nothing.
        return np.nonzero(np.exp(-s * self.eigenvalues) > floor)[0]

    def transition_matrix(self, s: float) -> np.ndarray:
        idx = self._active(s)
        W = self.vectors[:, idx] * np.exp(-0.5 * s * self.eigenvalues[idx])
        G = W @ W.T
        P = G * (self.sqrt_pi[None, :] / self.sqrt_pi[:, None])
        P += self.pi[None, :]
        return P

    def apply(self, f, s: float) -> np.ndarray:
        """P_s f."""
        f = np.asarray(f, dtype=float)
        idx = self._active(s)
        V = self.vectors[:, idx]
        coef = V.T @ (self.sqrt_pi * f) * np.exp(-s * self.eigenvalues[idx])
        return self.pi @ f + (V @ coef) / self.sqrt_pi

    def evolve(self, eta, s: float) -> np.ndarray:
        """eta P_s minus pi, as a signed measure."""
        eta = np.asarray(eta, dtype=float)
        idx = self._active(s)
        V = self.vectors[:, idx]
        coef = V.T @ (eta / self.sqrt_pi) * np.exp(-s * self.eigenvalues[idx])
        return self.sqrt_pi * (V @ coef)

    def row_distances(self, s: float, rows=None, block: int = 1024) -> np.ndarray:
        """||P_s(x, .) - pi||_1 for the requested rows."""
        n = self.pi.shape[0]
        rows = np.arange(n) if rows is None else np.asarray(rows)
        idx = self._active(s)
        W = self.vectors[:, idx] * np.exp(-0.5 * s * self.eigenvalues[idx])
        out = np.empty(rows.shape[0])
        for start in range(0, rows.shape[0], block):
            r = rows[start:start + block]
            G = W[r] @ W.T
            np.abs(G, out=G)
            out[start:start + block] = (G @ self.sqrt_pi) / self.sqrt_pi[r]
        return out


# ------------------------------------------------------------ semigroup --

def _poisson_window(mu: float, tol: float) -> tuple[int, np.ndarray]:
    if mu == 0:
        return 0, np.array([1.0])
    left = int(poisson.ppf(tol / 4, mu))
    right = int(poisson.isf(tol / 4, mu)) + 1
    ks = np.arange(left, right + 1)
    return left, poisson.pmf(ks, mu)


def _uniformized(chain: ReversibleChain) -> tuple[float, sp.csr_matrix]:
    rate = chain.max_rate
    if rate == 0:
        return 0.0, sp.identity(chain.n, format="csr")
    U = sp.identity(chain.n, format="csr") + chain.generator() / rate
    return rate, U.tocsr()


def semigroup_apply(chain: ReversibleChain, f, t: float, tol: float = UNIFORMIZATION_TOL) -> np.ndarray:
    """P_t f by uniformization.

    P_t = sum_k Poisson(rate t)(k) U^k with U = I + L / rate; the dropped
    Poisson mass is below ``tol``, so the sup-norm error is at most
    tol * ||f||_inf.  ``f`` may also be an (n, k) block of functions.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim not in (1, 2) or f.shape[0] != chain.n:
        raise ValueError("function dimension does not match the chain")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return f.copy()
    rate, U = _uniformized(chain)
    left, weights = _poisson_window(rate * t, tol)
    v = f.copy()
    for _ in range(left):
        v = U @ v
    acc = weights[0] * v
    for w in weights[1:]:
        v = U @ v
        acc += w * v
    return acc


def evolve_distribution(chain: ReversibleChain, mu, t: float, tol: float = UNIFORMIZATION_TOL) -> np.ndarray:
    """mu P_t by uniformization."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (chain.n,):
        raise ValueError("measure dimension does not match the chain")
    if t == 0:
        return mu.copy()
    rate, U = _uniformized(chain)
    UT = U.T.tocsr()
    left, weights = _poisson_window(rate * t, tol)
    v = mu.copy()
    for _ in range(left):
        v = UT @ v
    acc = weights[0] * v
    for w in weights[1:]:
        v = UT @ v
        acc += w * v
    return acc


def tv_distance(mu, nu) -> float:
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if mu.shape != nu.shape:
        raise ValueError("measures live on different state spaces")
    return 0.5 * float(np.abs(mu - nu).sum())


def as_probability(eta, n: int, tol: float = 1e-12) -> np.ndarray:
    eta = np.asarray(eta, dtype=float).ravel()
    if eta.shape != (n,):
        raise ValueError("probability vector has the wrong length")
    if np.any(eta < 0) or abs(eta.sum() - 1.0) > tol:
        raise ValueError("not a probability vector")
    return eta


# ------------------------------------------------------------- envelope --

@dataclass(frozen=True)
class DecayEnvelope:
    """Certified bracket on sup_{||f||<=1} eta(|P_s f - pi(f)|) on a grid."""

    time_grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    running_sup_upper: np.ndarray


class EnvelopeEvaluator:
    """Evaluates lower(s) and upper(s) for a fixed chain and initial law.

    lower(s) = ||eta P_s - pi||_1 (the optimal sign test function for the
    mixture) and upper(s) = sum_y eta(y) ||P_s(y, .) - pi||_1.
    """

    def __init__(self, chain: ReversibleChain, eta, spectral: SpectralDecomposition | None = None):
        self.chain = chain
        self.eta = as_probability(eta, chain.n, tol=1e-10)
        self.spectral = spectral if spectral is not None else SpectralDecomposition.of(chain)
        self.support = np.nonzero(self.eta > 0)[0]

    def lower(self, s: float) -> float:
        return float(np.abs(self.spectral.evolve(self.eta, s)).sum())

    def upper(self, s: float) -> float:
        d = self.spectral.row_distances(s, self.support)
        return float(self.eta[self.support] @ d)

    def refine_lower(self, s: float, sweeps: int = 3) -> float:
        """Coordinate sign-flip ascent on eta(|P_s f - pi(f)|), f in {-1, 1}^n."""
        P = self.spectral.transition_matrix(s)
        pi = self.chain.pi
        f = np.sign(self.spectral.evolve(self.eta, s))
        f[f == 0] = 1.0
        A = P - pi[None, :]

        def value(g):
            return float(self.eta @ np.abs(A @ g))

        best = value(f)
        for _ in range(sweeps):
            improved = False
            for z in range(self.chain.n):
                f[z] = -f[z]
                val = value(f)
                if val > best + 1e-15:
                    best, improved = val, True
                else:
                    f[z] = -f[z]
            if not improved:
                break
        return best

    def certified_lower(self, s: float, refine: bool = False) -> float:
        lo = self.lower(s)
        return max(lo, self.refine_lower(s)) if refine else lo

    def evaluate(self, s: float, refine: bool = False) -> tuple[float, float]:
        lo, up = self.certified_lower(s, refine), self.upper(s)
        # Both sides are exact up to rounding; never report lower above upper.
        return min(lo, up), up


def _make_envelope(times, lows, ups) -> DecayEnvelope:
    t, first = np.unique(np.asarray(times, dtype=float), return_index=True)
    lo = np.asarray(lows, dtype=float)[first]
    up = np.asarray(ups, dtype=float)[first]
    running = np.maximum.accumulate(up[::-1])[::-1]
    return DecayEnvelope(t, lo, up, running)


def d_eta_envelope(chain: ReversibleChain, eta, time_grid, refine: bool = False,
                   spectral: SpectralDecomposition | None = None) -> DecayEnvelope:
    grid = np.asarray(time_grid, dtype=float).ravel()
    if grid.size == 0:
        raise EmptyGrid("time grid is empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be positive and increasing")
    ev = EnvelopeEvaluator(chain, eta, spectral)
    pairs = [ev.evaluate(s, refine) for s in grid]
    return _make_envelope(grid, [p[0] for p in pairs], [p[1] for p in pairs])


@dataclass(frozen=True)
class MixingTimeBracket:
    lower: float  # certified: T_eta(eps) >= lower
    upper: float  # certified: T_eta(eps) <= upper
    epsilon: float
    envelope: DecayEnvelope  # probes where both sides were evaluated
    iterations: int


def certified_horizon(chain: ReversibleChain, eta, epsilon: float, gap: float) -> float:
    """A time by which upper(t) <= epsilon is guaranteed.

    ||P_t(y, .) - pi||_1 <= sqrt((1 - pi(y)) / pi(y)) e^{-gap t}.
    """
    eta = np.asarray(eta, dtype=float)
    c = float(eta @ np.sqrt((1 - chain.pi) / chain.pi))
    return max(np.log(max(c, epsilon) / epsilon), 0.0) / gap


def t_eta(chain: ReversibleChain, eta, epsilon: float, t_min: float | None = None,
          t_max: float | None = None, rtol: float = 1e-2, max_iter: int = 60,
          points_per_decade: int = 16, refine: bool = False,
          spectral: SpectralDecomposition | None = None) -> MixingTimeBracket:
    """Bracket T_eta(epsilon) = inf{t : d_eta(t) <= epsilon}.

    lower(s) need not be monotone, so it is scanned on a geometric grid
    downward from the horizon; the first exceedance met is the last one,
    and it is refined by bisection.  Any s with lower(s) > epsilon gives
    T_eta >= s and also upper(s) > epsilon.  upper(s) is non-increasing
    in s (each row distance contracts under P_u), so its crossing is
    bracketed from there by safeguarded false position in log t, and the
    bracket end where upper <= epsilon bounds T_eta from above.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    ev = EnvelopeEvaluator(chain, eta, spectral)
    if epsilon >= 2.0:
        env = _make_envelope([], [], [])
        return MixingTimeBracket(0.0, 0.0, epsilon, env, 0)
    gap = float(ev.spectral.eigenvalues.min())
    if t_min is None:
        t_min = 1e-3 / max(chain.max_rate, 1e-300)
    if t_max is None:
        t_max = 2.0 * max(certified_horizon(chain, ev.eta, epsilon, gap), t_min)
    if t_max <= t_min:
        raise ValueError("t_max must exceed t_min")

    times, lows, ups = [], [], []

    def probe(s):
        lo, up = ev.evaluate(s, refine)
        times.append(s)
        lows.append(lo)
        ups.append(up)
        return lo, up

    def log_excess(v):
        return float(np.log(max(v, 1e-300) / epsilon))

    # Lower side.  The scan needs only lower(s), which costs O(n^2) per
    # point against O(n^3) for upper(s); these points stay off the envelope.
    iterations = 0
    decades = np.log10(t_max / t_min)
    grid = np.geomspace(t_min, t_max, max(int(np.ceil(decades * points_per_decade)) + 1, 2))
    t_lo, lo_at = 0.0, 0.0
    for i in range(len(grid) - 1, -1, -1):
        lo = ev.certified_lower(grid[i], refine)
        if lo > epsilon:
            t_lo, lo_at = float(grid[i]), lo
            if i + 1 < len(grid):
                a, b = grid[i], grid[i + 1]
                while b / a > 1 + rtol and iterations < max_iter:
                    mid = np.sqrt(a * b)
                    lo = ev.certified_lower(mid, refine)
                    iterations += 1
                    if lo > epsilon:
                        a, lo_at = mid, lo
                    else:
                        b = mid
                t_lo = float(a)
            break

    # Upper side: a point with upper > epsilon, then the horizon.
    if t_lo > 0:
        a, g_a = t_lo, log_excess(lo_at)  # heuristic value, only its sign is certified
    else:
        _, up = probe(t_min)
        if up <= epsilon:
            return MixingTimeBracket(0.0, float(t_min), epsilon, _make_envelope(times, lows, ups), iterations)
        a, g_a = t_min, log_excess(up)
    _, up_max = probe(t_max)
    if up_max > epsilon:
        raise NotReachedWithinHorizon(
            f"upper envelope {up_max:.3g} > {epsilon} at t_max = {t_max:.3g}")
    ua, ub, g_b = np.log(a), np.log(t_max), log_excess(up_max)
    tol = np.log1p(rtol)
    kept, bisect = 0, False
    while ub - ua > tol and iterations < max_iter:
        width = ub - ua
        if bisect or not np.isfinite(g_a - g_b) or g_a <= g_b:
            u = 0.5 * (ua + ub)
        else:
            u = ub - g_b * (ub - ua) / (g_b - g_a)
        u = min(max(u, ua + tol / 2), ub - tol / 2)
        _, up = probe(float(np.exp(u)))
        iterations += 1
        g = log_excess(up)
        if up <= epsilon:
            ub, g_b = u, g
            if kept == -1:
                g_a /= 2  # Illinois step: the same end moved twice
            kept = -1
        else:
            ua, g_a = u, g
            if kept == 1:
                g_b /= 2
            kept = 1
        bisect = (ub - ua) > 0.5 * width
    t_hi = float(np.exp(ub)) if ub < np.log(t_max) else float(t_max)
    t_lo = min(t_lo, t_hi)
    env = _make_envelope(times, lows, ups)
    return MixingTimeBracket(t_lo, float(t_hi), epsilon, env, iterations)
