"""Path families: one path per ordered pair of states.

Hypercube conventions: configuration sigma in {-1, +1}^N is encoded as the
integer whose bit (i - 1) is set when sigma_i = -1.  Sites are numbered
1..N as in the text; the group product of configurations is XOR.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .chain import ReversibleChain
from .errors import PathMissing


@dataclass(frozen=True, eq=False)
class PathFamily:
    """Paths stored CSR-style: vertices[indptr[k]:indptr[k+1]] is path k.

    ``fallback`` marks pairs where a selection rule gave up and used its
    default path.  ``meta`` holds free-form provenance.
    """

    n: int
    sources: np.ndarray
    targets: np.ndarray
    indptr: np.ndarray
    vertices: np.ndarray
    fallback: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.sources.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.indptr) - 1

    def path(self, k: int) -> np.ndarray:
        return self.vertices[self.indptr[k]:self.indptr[k + 1]]

    def lookup(self) -> dict:
        return {(int(x), int(y)): k for k, (x, y) in enumerate(zip(self.sources, self.targets))}

    def path_between(self, x: int, y: int) -> np.ndarray:
        hits = np.nonzero((self.sources == x) & (self.targets == y))[0]
        if hits.size == 0:
            raise PathMissing(f"no path from {x} to {y}")
        return self.path(int(hits[0]))

    def edge_occurrences(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(pair index, tail, head) for every edge of every path."""
        lengths = self.lengths
        pair = np.repeat(np.arange(len(self)), lengths)
        # Edge j of path k starts at vertices[indptr[k] + j].
        starts = np.ones(self.vertices.shape[0], dtype=bool)
        starts[self.indptr[1:] - 1] = False
        tails = self.vertices[starts]
        heads = self.vertices[np.nonzero(starts)[0] + 1]
        return pair, tails, heads

    def edge_loads(self, pair_weights, oriented: bool = True):
        """Sum of pair weights over the paths through each edge.

        Returns (tails, heads, loads) over the distinct edges used.  With
        ``oriented=False`` an edge and its reversal share one load and the
        returned tail is the smaller endpoint.
        """
        w = np.asarray(pair_weights, dtype=float)
        pair, tails, heads = self.edge_occurrences()
        if not oriented:
            tails, heads = np.minimum(tails, heads), np.maximum(tails, heads)
        keys = tails.astype(np.int64) * self.n + heads
        uniq, inv = np.unique(keys, return_inverse=True)
        loads = np.bincount(inv, weights=w[pair], minlength=uniq.shape[0])
        return uniq // self.n, uniq % self.n, loads

    def check_complete(self) -> None:
        """Raise PathMissing unless every ordered pair x != y has one valid path."""
        n = self.n
        keys = self.sources.astype(np.int64) * n + self.targets
        if np.any(self.sources == self.targets):
            raise PathMissing("a path joins a state to itself")
        if np.unique(keys).shape[0] != keys.shape[0]:
            raise PathMissing("duplicate paths for one pair")
        if keys.shape[0] != n * (n - 1):
            raise PathMissing(f"{n * (n - 1) - keys.shape[0]} ordered pairs have no path")
        first = self.vertices[self.indptr[:-1]]
        last = self.vertices[self.indptr[1:] - 1]
        if np.any(first != self.sources) or np.any(last != self.targets):
            raise PathMissing("path endpoints do not match their pair")

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "paths": [[int(v) for v in self.path(k)] for k in range(len(self))],
            "fallback": [bool(b) for b in self.fallback],
            "meta": self.meta,
        }

    @classmethod
    def from_paths(cls, n: int, paths, fallback=None, meta=None) -> "PathFamily":
        paths = [np.asarray(p, dtype=np.int64) for p in paths]
        sources = np.array([p[0] for p in paths], dtype=np.int64)
        targets = np.array([p[-1] for p in paths], dtype=np.int64)
        indptr = np.zeros(len(paths) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(p) for p in paths])
        vertices = np.concatenate(paths) if paths else np.zeros(0, dtype=np.int64)
        fb = np.zeros(len(paths), dtype=bool) if fallback is None else np.asarray(fallback, dtype=bool)
        return cls(n, sources, targets, indptr, vertices, fb, dict(meta or {}))

    @classmethod
    def from_json(cls, data: dict) -> "PathFamily":
        return cls.from_paths(int(data["n"]), data["paths"], data.get("fallback"), data.get("meta"))


def shortest_paths(chain: ReversibleChain, rng: np.random.Generator | None = None) -> PathFamily:
    """BFS shortest paths in the rate graph for every ordered pair.

    Neighbors are explored in index order, or in a random order when
    ``rng`` is given (random tie-breaking).
    """
    n = chain.n
    K = chain.rates.tocsr()
    neighbors = [K.indices[K.indptr[x]:K.indptr[x + 1]].copy() for x in range(n)]
    if rng is None:
        for nb in neighbors:
            nb.sort()
    paths = []
    for x in range(n):
        parent = np.full(n, -1)
        parent[x] = x
        queue = deque([x])
        while queue:
            u = queue.popleft()
            nb = neighbors[u] if rng is None else rng.permutation(neighbors[u])
            for v in nb:
                if parent[v] < 0:
                    parent[v] = u
                    queue.append(v)
        for y in range(n):
            if y == x:
                continue
            p = [y]
            while p[-1] != x:
                p.append(parent[p[-1]])
            paths.append(p[::-1])
    return PathFamily.from_paths(n, paths, meta={"rule": "bfs"})


# ---------------------------------------------------------------- hypercube --

def spins_to_index(spins) -> int:
    """{-1, +1}^N -> integer, site i on bit i - 1, -1 meaning bit set."""
    out = 0
    for i, s in enumerate(spins):
        if s not in (-1, 1):
            raise ValueError("spins must be +1 or -1")
        if s == -1:
            out |= 1 << i
    return out


def index_to_spins(index: int, N: int) -> np.ndarray:
    bits = (int(index) >> np.arange(N)) & 1
    return 1 - 2 * bits


def popcount(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint64)
    count = np.zeros(a.shape, dtype=np.int64)
    while np.any(a):
        count += (a & np.uint64(1)).astype(np.int64)
        a = a >> np.uint64(1)
    return count


def hamming(x, y) -> np.ndarray:
    return popcount(np.bitwise_xor(x, y))


def cyclic_order(N: int, i: int) -> list[int]:
    """Sites i, i+1, ..., N, 1, ..., i-1 as 0-based bit positions."""
    return [(i - 1 + k) % N for k in range(N)]


def cyclic_flip_path(x: int, y: int, i: int, N: int) -> np.ndarray:
    """Flip the sites where x and y disagree, cyclically from site i."""
    if not 1 <= i <= N:
        raise ValueError("site index out of range")
    diff = x ^ y
    path = [x]
    cur = x
    for b in cyclic_order(N, i):
        if diff >> b & 1:
            cur ^= 1 << b
            path.append(cur)
    return np.array(path, dtype=np.int64)


def disagreement_sites(x: int, y: int, N: int) -> list[int]:
    """1-based sites where x and y differ, increasing."""
    d = x ^ y
    return [b + 1 for b in range(N) if d >> b & 1]


def interior_disjointness_check(x: int, y: int, N: int) -> bool:
    """Do the cyclic paths started at each disagreement site have disjoint interiors?"""
    seen: set[int] = set()
    for i in disagreement_sites(x, y, N):
        interior = cyclic_flip_path(x, y, i, N)[1:-1]
        for v in interior.tolist():
            if v in seen:
                return False
            seen.add(v)
    return True


@dataclass(frozen=True)
class GoodBadClassification:
    threshold: float
    good: np.ndarray  # boolean per configuration
    variant: str
    c_e: float

    @property
    def bad(self) -> np.ndarray:
        return ~self.good


def good_threshold(N: int, c_e: float, variant: str = "proposition") -> float:
    if variant == "proposition":
        return math.sqrt((1 + c_e) * N * math.log(N))
    if variant == "text":
        return math.sqrt((1 + c_e) * 2 * N * math.log(N))
    raise ValueError(f"unknown threshold variant {variant!r}")


def classify(H, N: int, c_e: float, variant: str = "proposition") -> GoodBadClassification:
    """Good points have H(z) <= threshold."""
    if c_e <= 0:
        raise ValueError("c_e must be positive")
    H = np.asarray(H, dtype=float)
    thr = good_threshold(N, c_e, variant)
    return GoodBadClassification(thr, H <= thr, variant, float(c_e))


def _cyclic_walk(x: np.ndarray, y: np.ndarray, start: int, N: int) -> np.ndarray:
    """Vertices of gamma^start(x, y) for arrays of pairs, padded with -1.

    Row r holds x, then each vertex after a flip; shape (P, N + 1).
    """
    P = x.shape[0]
    out = np.full((P, N + 1), -1, dtype=np.int64)
    out[:, 0] = x
    diff = x ^ y
    cur = x.copy()
    pos = np.ones(P, dtype=np.int64)
    rows = np.arange(P)
    for b in cyclic_order(N, start):
        hit = (diff >> b) & 1 == 1
        cur = np.where(hit, cur ^ (1 << b), cur)
        out[rows[hit], pos[hit]] = cur[hit]
        pos += hit
    return out


def _good_start_masks(good: np.ndarray, N: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bit (i - 1) set when gamma^i(x, y) is good and i is a disagreement site."""
    diff = x ^ y
    mask = np.zeros(x.shape[0], dtype=np.int64)
    for i in range(1, N + 1):
        ok = (diff >> (i - 1)) & 1 == 1
        cur = x.copy()
        for b in cyclic_order(N, i):
            hit = (diff >> b) & 1 == 1
            cur = np.where(hit, cur ^ (1 << b), cur)
            interior = hit & (cur != y)
            ok &= ~interior | good[cur]
        mask |= ok.astype(np.int64) << (i - 1)
    return mask


def _first_bit(mask: np.ndarray) -> np.ndarray:
    """1-based position of the lowest set bit, 0 if none."""
    low = mask & -mask
    out = np.zeros(mask.shape, dtype=np.int64)
    nz = low > 0
    out[nz] = np.log2(low[nz]).round().astype(np.int64) + 1
    return out


def _flip_sequence(x: int, y: int, i: int, N: int) -> list[int]:
    d = x ^ y
    return [b for b in cyclic_order(N, i) if d >> b & 1]


def composite_self_avoiding(x: int, z: int, y: int, i: int, j: int, N: int) -> bool:
    """Is gamma^i(x, z) followed by gamma^j(z, y) free of repeated vertices?

    Both legs flip distinct sites, so a vertex repeats exactly when the
    last k flips of the first leg and the first k flips of the second
    leg are the same set of sites, for some k >= 1.
    """
    s1 = _flip_sequence(x, z, i, N)
    s2 = _flip_sequence(z, y, j, N)
    tail = 0
    head = 0
    for k in range(1, min(len(s1), len(s2)) + 1):
        tail |= 1 << s1[-k]
        head |= 1 << s2[k - 1]
        if tail == head:
            return False
    return True


def _set_bits(mask: int) -> list[int]:
    return [b + 1 for b in range(mask.bit_length()) if mask >> b & 1]


def select_paths(H, N: int, c_e: float, variant: str = "proposition") -> PathFamily:
    """Good/bad path selection on the hypercube.

    Long pairs (distance >= N / log N): the first good gamma^i by site
    index, else gamma^1.  Short pairs: the first z in increasing index
    order that is good, lies at distance >= N / log N from both ends,
    keeps the total length <= N, and admits good legs gamma^i(x, z),
    gamma^j(z, y) whose union is self-avoiding (legs taken in index order);
    else gamma^1, flagged as a fallback.
    """
    H = np.asarray(H, dtype=float)
    n = 1 << N
    if H.shape != (n,):
        raise ValueError("H must have 2^N entries")
    if N < 2:
        raise ValueError("N must be at least 2")
    cls = classify(H, N, c_e, variant)
    good = cls.good
    cut = N / math.log(N)

    X, Y = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    X, Y = X.ravel(), Y.ravel()
    off = X != Y
    X, Y = X[off], Y[off]
    dist = hamming(X, Y)
    gmask_flat = _good_start_masks(good, N, X, Y)
    gmask = np.zeros((n, n), dtype=np.int64)
    gmask[X, Y] = gmask_flat
    dmat = np.zeros((n, n), dtype=np.int64)
    dmat[X, Y] = dist

    P = X.shape[0]
    start = np.ones(P, dtype=np.int64)  # gamma^1 unless chosen otherwise
    mid = np.full(P, -1, dtype=np.int64)
    start2 = np.zeros(P, dtype=np.int64)
    fallback = np.zeros(P, dtype=bool)

    long = dist >= cut
    first = _first_bit(gmask_flat)
    has_good = first > 0
    start[long & has_good] = first[long & has_good]
    fallback[long & ~has_good] = True

    short_idx = np.nonzero(~long)[0]
    length_rejections = 0
    zs = np.arange(n)
    far = dmat >= cut  # far[a, b]: distance at least the cut
    for x in np.unique(X[short_idx]):
        rows = short_idx[X[short_idx] == x]
        base = good & far[x] & (gmask[x] != 0)
        for k in rows:
            y = int(Y[k])
            cand = base & far[:, y] & (gmask[:, y] != 0)
            within = cand & (dmat[x] + dmat[:, y] <= N)
            length_rejections += int(cand.sum() - within.sum())
            chosen = False
            for z in zs[within]:
                z = int(z)
                for i in _set_bits(int(gmask[x, z])):
                    for j in _set_bits(int(gmask[z, y])):
                        if composite_self_avoiding(int(x), z, y, i, j, N):
                            mid[k], start[k], start2[k] = z, i, j
                            chosen = True
                            break
                    if chosen:
                        break
                if chosen:
                    break
            if not chosen:
                fallback[k] = True

    padded = np.full((P, 2 * N + 1), -1, dtype=np.int64)
    simple = mid < 0
    for i in range(1, N + 1):
        sel = np.nonzero(simple & (start == i))[0]
        if sel.size:
            padded[sel, :N + 1] = _cyclic_walk(X[sel], Y[sel], i, N)
    for k in np.nonzero(~simple)[0]:
        a = cyclic_flip_path(int(X[k]), int(mid[k]), int(start[k]), N)
        b = cyclic_flip_path(int(mid[k]), int(Y[k]), int(start2[k]), N)
        seq = np.concatenate([a, b[1:]])
        padded[k, :seq.shape[0]] = seq
    family = _from_padded(n, X, Y, padded, fallback)
    meta = {
        "rule": "good-bad hypercube",
        "N": N,
        "c_e": float(c_e),
        "variant": variant,
        "threshold": cls.threshold,
        "distance_cut": cut,
        "long_fallbacks": int((fallback & long).sum()),
        "short_fallbacks": int((fallback & ~long).sum()),
        "composite_paths": int((mid >= 0).sum()),
        "length_rejections": length_rejections,
    }
    family.meta.update(meta)
    return family


def _from_padded(n, X, Y, padded, fallback) -> PathFamily:
    keep = padded >= 0
    lengths = keep.sum(axis=1)
    indptr = np.zeros(X.shape[0] + 1, dtype=np.int64)
    indptr[1:] = np.cumsum(lengths)
    return PathFamily(n, X.astype(np.int64), Y.astype(np.int64), indptr,
                      padded[keep], np.asarray(fallback, dtype=bool), {})


def cyclic_family(N: int, start: int = 1) -> PathFamily:
    """gamma^start for every ordered pair (canonicalized to the next disagreement site)."""
    n = 1 << N
    X, Y = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    X, Y = X.ravel(), Y.ravel()
    off = X != Y
    X, Y = X[off], Y[off]
    family = _from_padded(n, X, Y, _cyclic_walk(X, Y, start, N), np.zeros(X.shape[0], bool))
    family.meta.update({"rule": "cyclic", "start": start})
    return family


@dataclass(frozen=True)
class PathCertificate:
    good_fraction: float
    all_good: bool
    max_length: int
    max_length_ok: bool
    pairs: int
    pairs_with_interior: int
    good_fraction_with_interior: float


def good_path_certificate(family: PathFamily, classification: GoodBadClassification) -> PathCertificate:
    """Fraction of pairs whose path has only good interior points."""
    good = classification.good
    interior = np.ones(family.vertices.shape[0], dtype=bool)
    interior[family.indptr[:-1]] = False
    interior[family.indptr[1:] - 1] = False
    bad_hit = interior & ~good[family.vertices]
    owner = np.repeat(np.arange(len(family)), np.diff(family.indptr))
    bad_pairs = np.bincount(owner[bad_hit], minlength=len(family)) > 0
    has_interior = family.lengths >= 2
    P = len(family)
    good_frac = 1.0 - bad_pairs.mean() if P else 1.0
    m = int(has_interior.sum())
    good_int = 1.0 - bad_pairs[has_interior].mean() if m else 1.0
    N = int(round(math.log2(family.n))) if family.n > 1 else 0
    max_len = int(family.lengths.max()) if P else 0
    return PathCertificate(float(good_frac), bool(not bad_pairs.any()), max_len,
                           max_len <= N, P, m, float(good_int))
