import math

import numpy as np
import pytest
from scipy.special import comb

from mixbound.chain import SpectralDecomposition
from mixbound.environment import (
    act,
    averaged_start_independence,
    evaluation,
    flip,
    invariance_reversibility_check,
    nu_measure,
    pullback,
    shift_lemma_check,
    t_av_estimate,
)
from mixbound.errors import CapExceeded, InsufficientSeedsWarning
from mixbound.rem import BETA_C, gibbs_measure, instance_from_energies, metropolis_chain, sample_instance


def test_identity_and_involution():
    H = sample_instance(5, 1.0, 0).energies
    assert np.array_equal(act(0, H), H)
    for s in (1, 7, 31):
        assert np.array_equal(act(s, act(s, H)), H)


def test_composition_law():
    H = sample_instance(6, 1.0, 1).energies
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = (int(v) for v in rng.integers(0, 64, 2))
        assert np.array_equal(act(a, act(b, H)), act(a ^ b, H))
        assert sorted(act(a, H).tolist()) == sorted(H.tolist())


def test_two_site_table():
    # index: bit 0 = site 1, bit 1 = site 2, set bit = spin -1
    H = np.array([10.0, 20.0, 30.0, 40.0])  # (+,+), (-,+), (+,-), (-,-)
    sigma = flip(1, 2)  # (-, +)
    # (sigma.H)(s') = H(sigma.s'): flipping site 1 swaps 0<->1 and 2<->3
    assert act(sigma, H).tolist() == [20.0, 10.0, 40.0, 30.0]
    assert act(flip(2, 2), H).tolist() == [30.0, 40.0, 10.0, 20.0]
    assert act(3, H).tolist() == [40.0, 30.0, 20.0, 10.0]


def test_act_dimension_mismatch():
    with pytest.raises(ValueError):
        act(8, np.zeros(8))
    with pytest.raises(ValueError):
        act(1, np.zeros(6))


def test_nu_measure_beta_zero_uniform():
    law = nu_measure(sample_instance(4, 0.0, 2))
    assert np.allclose(law.weights, 1 / 16)
    assert law.weights.sum() == pytest.approx(1.0)


def test_nu_measure_mean_energy():
    inst = sample_instance(5, 1.2, 3)
    law = nu_measure(inst)
    pi = gibbs_measure(inst)
    got = law.expectation(evaluation(0), inst.energies)
    assert got == pytest.approx(pi @ inst.energies, rel=1e-12)
    assert law.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_nu_measure_merges_coinciding_translates():
    H = np.array([1.0, 1.0, 2.0, 2.0])  # invariant under flipping site 1
    law = nu_measure(instance_from_energies(H, beta=0.5))
    assert len(law.elements) == 2
    assert law.multiplicity.tolist() == [2, 2]
    assert law.weights.sum() == pytest.approx(1.0)


def test_shift_lemma_identity_element():
    rep = shift_lemma_check(sample_instance(3, 1.0, 0), 0, 1.0)
    assert rep.ok and rep.single < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_shift_lemma_n4(seed):
    inst = sample_instance(4, 1.1, seed)
    sigma = int(np.random.default_rng(seed).integers(1, 16))
    rep = shift_lemma_check(inst, sigma, 1.0)
    assert rep.single < 1e-10 and rep.two_time < 1e-10 and rep.markov < 1e-10


def test_shift_lemma_two_time_n3():
    inst = sample_instance(3, 0.8, 9)
    rep = shift_lemma_check(inst, 6, 0.5, t2=1.5)
    assert rep.ok


def test_shift_lemma_nonlinear_functionals():
    inst = sample_instance(4, 1.3, 4)
    fs = [lambda h: math.tanh(h[0]), lambda h: float(h[3] < h[5]), lambda h: h[1] * h[2]]
    assert shift_lemma_check(inst, 9, 0.7, functionals=fs).ok


def test_shift_lemma_cap():
    with pytest.raises(CapExceeded):
        shift_lemma_check(sample_instance(5, 1.0, 0), 1, 1.0, cap=4)


def test_invariance_at_time_zero_and_one():
    inst = sample_instance(3, 1.0, 5)
    assert invariance_reversibility_check(inst, 0.0).ok
    rng = np.random.default_rng(1)
    weights = rng.standard_normal((20, 8))
    fs = [(lambda w: (lambda h: float(np.tanh(w @ h))))(w) for w in weights]
    rep = invariance_reversibility_check(inst, 1.0, functionals=fs)
    assert rep.invariance < 1e-10 and rep.reversibility < 1e-10


def test_beta_zero_doubly_stochastic():
    inst = sample_instance(3, 0.0, 6)
    P = SpectralDecomposition.of(metropolis_chain(inst)).transition_matrix(0.8)
    assert np.allclose(P.sum(axis=0), 1.0) and np.allclose(P.sum(axis=1), 1.0)
    assert invariance_reversibility_check(inst, 0.8).ok


def test_pullback_matches_shifted_table():
    H = sample_instance(3, 1.0, 7).energies
    phi = evaluation(5)
    assert pullback(phi, H).tolist() == [H[s ^ 5] for s in range(8)]


def test_start_independence_after_averaging():
    rep = averaged_start_independence(3, 0.9, lambda h: math.tanh(h[0] / 2), 1.0, range(500))
    assert rep.overlapping


def hypercube_distance(N, t):
    """sum_y |P_t(x, y) - 2^-N| for the walk flipping each site at rate 1/N."""
    e = math.exp(-2 * t / N)
    a, b = (1 + e) / 2, (1 - e) / 2
    return sum(comb(N, k) * abs(a ** (N - k) * b**k - 2.0**-N) for k in range(N + 1))


def test_t_av_beta_zero_matches_hypercube():
    N = 6
    grid = np.geomspace(0.1, 100, 40)
    with pytest.warns(InsufficientSeedsWarning):
        rep = t_av_estimate(N, 0.0, 0.5, [0, 1], grid)
    exact = np.array([hypercube_distance(N, t) for t in grid])
    assert np.max(np.abs(rep.mean_upper - exact)) < 1e-9
    first = grid[np.nonzero(exact <= 0.5)[0][0]]
    assert rep.t_av == first
    # order N log N at rates 1/N
    assert 0.1 * N * math.log(N) < rep.t_av < 10 * N * math.log(N)


def test_t_av_epsilon_two():
    rep = t_av_estimate(4, 1.0, 2.0, range(30))
    assert rep.t_av == 0.0


def test_t_av_trend_small_n():
    beta = 0.5 * BETA_C
    rep = t_av_estimate(6, beta, 0.5, range(30))
    assert np.all(np.diff(rep.mean_upper) <= 1e-12)
    assert rep.t_av_low <= rep.t_av <= rep.t_av_high
    assert rep.within_trend
    assert set(rep.to_json()) >= {"t_av", "rate", "slack"}
