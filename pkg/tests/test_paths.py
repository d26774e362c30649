import itertools
import math

import numpy as np
import pytest
from scipy.stats import norm

from mixbound.chain import random_reversible_chain
from mixbound.errors import PathMissing
from mixbound.paths import (
    PathFamily,
    classify,
    composite_self_avoiding,
    cyclic_family,
    cyclic_flip_path,
    good_path_certificate,
    good_threshold,
    hamming,
    index_to_spins,
    interior_disjointness_check,
    select_paths,
    shortest_paths,
    spins_to_index,
)


def spins(*s):
    return spins_to_index(s)


def as_spins(path, N):
    return [tuple(index_to_spins(v, N)) for v in path]


def test_encoding_round_trip():
    for v in range(16):
        assert spins_to_index(index_to_spins(v, 4)) == v
    assert spins(+1, +1, +1) == 0


def test_cyclic_path_same_point():
    assert cyclic_flip_path(5, 5, 2, 3).tolist() == [5]


def test_cyclic_path_single_flip():
    x, y = spins(1, 1, 1), spins(1, -1, 1)
    for i in (1, 2, 3):
        p = cyclic_flip_path(x, y, i, 3)
        assert as_spins(p, 3) == [(1, 1, 1), (1, -1, 1)]


def test_cyclic_path_start_at_site_two():
    p = cyclic_flip_path(spins(-1, -1), spins(1, 1), 2, 2)
    assert as_spins(p, 2) == [(-1, -1), (-1, 1), (1, 1)]


def test_cyclic_paths_are_valid_walks():
    rng = np.random.default_rng(0)
    for _ in range(200):
        N = int(rng.integers(2, 12))
        x, y = (int(v) for v in rng.integers(0, 1 << N, 2))
        i = int(rng.integers(1, N + 1))
        p = cyclic_flip_path(x, y, i, N)
        assert p[0] == x and p[-1] == y
        assert len(p) - 1 == hamming(x, y)
        assert np.all(hamming(p[:-1], p[1:]) == 1)


def test_interior_disjointness_examples():
    assert interior_disjointness_check(0, 1, 3)
    x, y = spins(1, 1, 1), spins(-1, -1, -1)
    assert interior_disjointness_check(x, y, 3)
    interiors = [set(cyclic_flip_path(x, y, i, 3)[1:-1].tolist()) for i in (1, 2, 3)]
    for a, b in itertools.combinations(interiors, 2):
        assert not a & b


def test_interior_disjointness_exhaustive_small():
    for N in range(2, 7):
        for x in range(1 << N):
            for y in range(1 << N):
                if x != y:
                    assert interior_disjointness_check(x, y, N)


def test_interior_disjointness_sampled():
    rng = np.random.default_rng(1)
    for _ in range(300):
        N = int(rng.integers(7, 13))
        x, y = (int(v) for v in rng.integers(0, 1 << N, 2))
        if x != y:
            assert interior_disjointness_check(x, y, N)


def test_thresholds():
    assert good_threshold(8, 1.0) == pytest.approx(math.sqrt(2 * 8 * math.log(8)))
    assert good_threshold(8, 1.0, "text") == pytest.approx(math.sqrt(4 * 8 * math.log(8)))


def test_classify_zero_energy_all_good():
    assert classify(np.zeros(16), 4, 0.5).good.all()


def test_classify_single_bad_point():
    N = 4
    thr = good_threshold(N, 1.0)
    H = np.zeros(16)
    H[7] = thr + 1
    c = classify(H, N, 1.0)
    assert c.bad.sum() == 1 and c.bad[7]
    H[7] = thr
    assert classify(H, N, 1.0).good.all()


def test_bad_fraction_matches_gaussian_tail():
    N, c_e = 8, 1.0
    thr = good_threshold(N, c_e)
    tail = norm.sf(thr / math.sqrt(N))
    fractions = []
    for seed in range(400):
        H = np.random.default_rng(seed).standard_normal(1 << N) * math.sqrt(N)
        fractions.append(classify(H, N, c_e).bad.mean())
    total = 400 * (1 << N)
    se = math.sqrt(tail * (1 - tail) / total)
    assert abs(np.mean(fractions) - tail) < 4 * se


def check_family(fam, N):
    fam.check_complete()
    for k in range(len(fam)):
        p = fam.path(k)
        assert np.all(hamming(p[:-1], p[1:]) == 1)
        assert len(set(p.tolist())) == len(p)  # self-avoiding
        assert len(p) - 1 <= N


def test_all_good_selects_first_cyclic_path():
    N = 5
    fam = select_paths(np.zeros(1 << N), N, 1.0)
    check_family(fam, N)
    cut = N / math.log(N)
    ref = cyclic_family(N)
    lookup = ref.lookup()
    for k in range(len(fam)):
        x, y = int(fam.sources[k]), int(fam.targets[k])
        if hamming(x, y) >= cut:
            assert fam.path(k).tolist() == ref.path(lookup[(x, y)]).tolist()


def test_bad_point_blocks_first_path():
    N = 4
    x, y = 0, 0b0111  # distance 3, above N / log N
    H = np.zeros(16)
    H[0b0001] = 100.0  # interior point of gamma^1(x, y)
    fam = select_paths(H, N, 1.0)
    assert fam.path_between(x, y).tolist() == cyclic_flip_path(x, y, 2, N).tolist()


def test_short_pairs_without_midpoint_fall_back():
    N = 4  # legs of length >= 3 cannot fit within length 4
    fam = select_paths(np.zeros(16), N, 1.0)
    short = hamming(fam.sources, fam.targets) < N / math.log(N)
    assert np.all(fam.fallback[short])
    assert fam.meta["composite_paths"] == 0
    k = int(np.nonzero(short)[0][0])
    x, y = int(fam.sources[k]), int(fam.targets[k])
    assert fam.path(k).tolist() == cyclic_flip_path(x, y, 1, N).tolist()


def test_composite_paths_at_n8():
    N = 8
    H = np.random.default_rng(3).standard_normal(1 << N) * math.sqrt(N)
    fam = select_paths(H, N, 1.0)
    check_family(fam, N)
    assert fam.meta["composite_paths"] > 0
    good = classify(H, N, 1.0).good
    lookup = fam.lookup()
    for x, y in [(0, 3), (5, 6), (17, 20)]:
        k = lookup[(x, y)]
        p = fam.path(k)
        if not fam.fallback[k]:
            assert good[p[1:-1]].all()


def test_select_paths_deterministic():
    N = 6
    H = np.random.default_rng(4).standard_normal(1 << N) * math.sqrt(N)
    a, b = select_paths(H, N, 1.0), select_paths(H, N, 1.0)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.indptr, b.indptr)
    assert a.meta == b.meta


def test_composite_self_avoiding_against_vertex_sets():
    rng = np.random.default_rng(5)
    N = 7
    for _ in range(400):
        x, z, y = (int(v) for v in rng.integers(0, 1 << N, 3))
        if x == z or z == y:
            continue
        i, j = int(rng.integers(1, N + 1)), int(rng.integers(1, N + 1))
        a = cyclic_flip_path(x, z, i, N)
        b = cyclic_flip_path(z, y, j, N)
        seq = np.concatenate([a, b[1:]]).tolist()
        assert composite_self_avoiding(x, z, y, i, j, N) == (len(set(seq)) == len(seq))


def test_certificate_extremes():
    N = 4
    fam = cyclic_family(N)
    good = classify(np.zeros(16), N, 1.0)
    cert = good_path_certificate(fam, good)
    assert cert.good_fraction == 1.0 and cert.all_good and cert.max_length_ok
    bad = classify(np.full(16, 1e6), N, 1.0)
    cert = good_path_certificate(fam, bad)
    assert cert.good_fraction_with_interior == 0.0


def test_edge_loads_brute_force():
    rng = np.random.default_rng(6)
    chain = random_reversible_chain(7, rng, density=0.3)
    fam = shortest_paths(chain, rng)
    fam.check_complete()
    w = rng.random(len(fam))
    tails, heads, loads = fam.edge_loads(w)
    table = dict(zip(zip(tails.tolist(), heads.tolist()), loads))
    brute: dict = {}
    for k in range(len(fam)):
        p = fam.path(k).tolist()
        for e in zip(p[:-1], p[1:]):
            brute[e] = brute.get(e, 0.0) + w[k]
    assert set(brute) == set(table)
    for e, v in brute.items():
        assert table[e] == pytest.approx(v)
    _, _, und = fam.edge_loads(w, oriented=False)
    assert und.sum() == pytest.approx(loads.sum())


def test_missing_pair_detected():
    fam = PathFamily.from_paths(3, [[0, 1], [1, 0], [0, 1, 2]])
    with pytest.raises(PathMissing):
        fam.check_complete()


def test_json_round_trip():
    fam = cyclic_family(3)
    again = PathFamily.from_json(fam.to_json())
    assert np.array_equal(again.vertices, fam.vertices)
