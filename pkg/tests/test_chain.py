import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from mixbound.chain import (
    SpectralDecomposition,
    build_chain,
    d_eta_envelope,
    dirichlet_form,
    evolve_distribution,
    first_eigenpair,
    random_reversible_chain,
    semigroup_apply,
    spectral_gap,
    t_eta,
    tv_distance,
)
from mixbound.errors import (
    DetailedBalanceViolation,
    EmptyGrid,
    NonPositivePi,
    NotIrreducible,
    NotReachedWithinHorizon,
)


def two_state(a=1.0, b=1.0):
    # K(0,1)=a, K(1,0)=b, pi=(b, a)/(a+b)
    return build_chain(2, [[0, a], [b, 0]], [b / (a + b), a / (a + b)])


def dense_semigroup(chain, t):
    return sla.expm(chain.generator().toarray() * t)


# build_chain

def test_two_state_conductance():
    c = two_state()
    assert c.conductance.tolist() == [0.5]
    assert c.edge_conductance(0, 1) == 0.5
    # Q = k pi pi with k = K / pi(y)
    assert c.kernel(0, 1) * c.pi[0] * c.pi[1] == pytest.approx(0.5)


def test_nonpositive_pi():
    with pytest.raises(NonPositivePi):
        build_chain(3, np.ones((3, 3)), [1.0, 0.0, 0.0])


def test_detailed_balance_violation():
    with pytest.raises(DetailedBalanceViolation):
        build_chain(2, [[0, 1], [0, 0]], [0.5, 0.5])


def test_not_irreducible():
    K = np.zeros((4, 4))
    K[0, 1] = K[1, 0] = 1
    K[2, 3] = K[3, 2] = 1
    with pytest.raises(NotIrreducible):
        build_chain(4, K, np.full(4, 0.25))


def test_mapping_rates_with_labels():
    c = build_chain(["a", "b"], {("a", "b"): 2.0, ("b", "a"): 2.0}, [0.5, 0.5])
    assert c.state_index("b") == 1
    assert spectral_gap(c) == pytest.approx(4.0)


def test_random_chains_satisfy_detailed_balance():
    rng = np.random.default_rng(1)
    for _ in range(20):
        c = random_reversible_chain(int(rng.integers(2, 20)), rng)
        F = np.diag(c.pi) @ c.rates.toarray()
        assert np.max(np.abs(F - F.T)) <= 1e-12 * F.max()


# dirichlet_form

def test_dirichlet_constant_is_zero():
    c = random_reversible_chain(6, np.random.default_rng(2))
    assert dirichlet_form(c, np.full(6, 3.7)) == 0.0


def test_dirichlet_two_state_hand_value():
    # k = 2 with pi uniform means K = 1.
    c = two_state()
    assert c.kernel(0, 1) == 2.0
    assert dirichlet_form(c, [1.0, -1.0]) == pytest.approx(2.0)


def test_dirichlet_symmetric_and_matches_generator():
    rng = np.random.default_rng(3)
    c = random_reversible_chain(9, rng)
    f, g = rng.standard_normal(9), rng.standard_normal(9)
    assert dirichlet_form(c, f, g) == pytest.approx(dirichlet_form(c, g, f), rel=1e-13)
    L = c.generator().toarray()
    assert dirichlet_form(c, f, g) == pytest.approx(-(c.pi * f) @ (L @ g), rel=1e-10)


def test_dirichlet_dimension_mismatch():
    with pytest.raises(ValueError):
        dirichlet_form(two_state(), [1.0, 2.0, 3.0])


# spectral_gap

def test_two_state_gap():
    assert spectral_gap(two_state()) == pytest.approx(2.0, rel=1e-12)
    assert spectral_gap(two_state(0.3, 1.7)) == pytest.approx(2.0, rel=1e-12)


@pytest.mark.parametrize("n", [2, 3, 5, 10])
def test_complete_graph_gap(n):
    K = np.full((n, n), 1.0 / (n - 1))
    c = build_chain(n, K, np.full(n, 1.0 / n))
    assert spectral_gap(c) == pytest.approx(n / (n - 1), rel=1e-12)


def test_gap_invariant_under_relabeling():
    rng = np.random.default_rng(4)
    c = random_reversible_chain(12, rng)
    perm = rng.permutation(12)
    K = c.rates.toarray()[np.ix_(perm, perm)]
    c2 = build_chain(12, K, c.pi[perm])
    assert spectral_gap(c2) == pytest.approx(spectral_gap(c), rel=1e-10)


def test_eigenfunction_certificate():
    rng = np.random.default_rng(5)
    c = random_reversible_chain(15, rng)
    lam, phi = first_eigenpair(c)
    assert abs(c.pi @ phi) < 1e-12
    assert c.pi @ phi**2 == pytest.approx(1.0)
    L = c.generator().toarray()
    assert np.max(np.abs(-L @ phi - lam * phi)) < 1e-9
    w = np.sort(np.linalg.eigvals(-L).real)
    assert lam == pytest.approx(w[1], rel=1e-9)


def test_sparse_and_dense_gap_agree():
    rng = np.random.default_rng(6)
    for _ in range(5):
        c = random_reversible_chain(40, rng, density=0.1, pi_spread=8.0)
        assert spectral_gap(c, "sparse") == pytest.approx(spectral_gap(c, "dense"), rel=1e-9)


# semigroup

def test_semigroup_time_zero_is_identity():
    c = random_reversible_chain(5, np.random.default_rng(7))
    f = np.arange(5.0)
    assert np.array_equal(semigroup_apply(c, f, 0.0), f)


def test_semigroup_large_time_is_mean():
    c = random_reversible_chain(6, np.random.default_rng(8))
    f = np.arange(6.0)
    lam = spectral_gap(c)
    out = semigroup_apply(c, f, 40.0 / lam)
    assert np.max(np.abs(out - c.pi @ f)) < 1e-10


@pytest.mark.parametrize("t", [0.01, 0.5, 3.0])
def test_semigroup_two_state_closed_form(t):
    a, b = 0.7, 1.9
    c = two_state(a, b)
    f = np.array([2.0, -1.0])
    m = c.pi @ f
    expected = m + np.exp(-(a + b) * t) * (f - m)
    assert np.max(np.abs(semigroup_apply(c, f, t) - expected)) < 1e-10


def test_semigroup_matches_expm():
    rng = np.random.default_rng(9)
    for _ in range(10):
        c = random_reversible_chain(int(rng.integers(2, 33)), rng)
        f = rng.standard_normal(c.n)
        for t in (0.1, 1.0, 10.0):
            err = np.max(np.abs(semigroup_apply(c, f, t) - dense_semigroup(c, t) @ f))
            assert err <= 1e-9


def test_semigroup_block_of_functions():
    c = random_reversible_chain(7, np.random.default_rng(3))
    F = np.random.default_rng(4).standard_normal((7, 3))
    block = semigroup_apply(c, F, 0.7)
    cols = np.column_stack([semigroup_apply(c, F[:, j], 0.7) for j in range(3)])
    assert np.allclose(block, cols, atol=1e-14, rtol=0)
    with pytest.raises(ValueError):
        semigroup_apply(c, np.zeros((6, 2)), 0.7)


def test_evolve_distribution_matches_expm():
    rng = np.random.default_rng(10)
    c = random_reversible_chain(10, rng)
    mu = rng.dirichlet(np.ones(10))
    out = evolve_distribution(c, mu, 2.0)
    assert np.max(np.abs(out - mu @ dense_semigroup(c, 2.0))) < 1e-11


def test_spectral_decomposition_matches_expm():
    rng = np.random.default_rng(11)
    c = random_reversible_chain(20, rng, pi_spread=6.0)
    sd = SpectralDecomposition.of(c)
    f = rng.standard_normal(20)
    eta = rng.dirichlet(np.ones(20))
    for t in (0.05, 1.0, 25.0):
        P = dense_semigroup(c, t)
        assert np.max(np.abs(sd.transition_matrix(t) - P)) < 1e-10
        assert np.max(np.abs(sd.apply(f, t) - P @ f)) < 1e-10
        assert np.max(np.abs(sd.evolve(eta, t) - (eta @ P - c.pi))) < 1e-11
        rows = np.abs(P - c.pi).sum(axis=1)
        assert np.max(np.abs(sd.row_distances(t) - rows)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), t=st.floats(0.0, 20.0))
def test_semigroup_contracts_and_preserves_mean(seed, t):
    rng = np.random.default_rng(seed)
    c = random_reversible_chain(int(rng.integers(2, 10)), rng)
    f = rng.uniform(-1, 1, c.n)
    out = semigroup_apply(c, f, t)
    assert np.max(np.abs(out)) <= np.max(np.abs(f)) + 1e-12
    assert abs(c.pi @ out - c.pi @ f) < 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), t=st.floats(0.01, 10.0))
def test_l2_decay(seed, t):
    rng = np.random.default_rng(seed)
    c = random_reversible_chain(int(rng.integers(2, 12)), rng)
    f = rng.standard_normal(c.n)
    f -= c.pi @ f
    lam = spectral_gap(c)
    lhs = c.pi @ semigroup_apply(c, f, t) ** 2
    assert lhs <= np.exp(-2 * lam * t) * (c.pi @ f**2) + 1e-9


# tv_distance

def test_tv_cases():
    u = np.full(4, 0.25)
    assert tv_distance(u, u) == 0.0
    assert tv_distance([1, 0, 0, 0], [0, 0.5, 0.5, 0]) == 1.0
    assert tv_distance([1, 0, 0, 0], u) == pytest.approx(1 - 1 / 4)
    with pytest.raises(ValueError):
        tv_distance([1, 0], u)


# envelope and mixing time

def test_envelope_stationary_start():
    c = random_reversible_chain(7, np.random.default_rng(12))
    env = d_eta_envelope(c, c.pi, [0.1, 1.0, 5.0])
    assert np.all(env.lower < 1e-12)
    assert np.all(env.upper >= 0)


def test_envelope_point_mass_brackets_coincide():
    rng = np.random.default_rng(13)
    c = random_reversible_chain(9, rng)
    eta = np.zeros(9)
    eta[4] = 1.0
    grid = np.geomspace(0.01, 10, 12)
    env = d_eta_envelope(c, eta, grid)
    assert np.max(np.abs(env.lower - env.upper)) <= 1e-12
    for s, lo in zip(grid, env.lower):
        exact = 2 * tv_distance(dense_semigroup(c, s)[4], c.pi)
        assert lo == pytest.approx(exact, abs=1e-10)


def test_envelope_bracket_and_running_sup():
    rng = np.random.default_rng(14)
    c = random_reversible_chain(10, rng)
    eta = rng.dirichlet(np.ones(10))
    grid = np.geomspace(0.01, 200, 25)
    env = d_eta_envelope(c, eta, grid, refine=True)
    assert np.all(env.lower <= env.upper)
    assert np.all(np.diff(env.running_sup_upper) <= 0)
    assert env.running_sup_upper[-1] < 1e-6
    # The optimal sign vector of the mixture already gives 2 d_TV.
    for s, lo in zip(grid, env.lower):
        assert lo >= 2 * tv_distance(eta @ dense_semigroup(c, s), c.pi) - 1e-10


def test_refined_lower_never_exceeds_upper_and_dominates_tv():
    rng = np.random.default_rng(15)
    for _ in range(5):
        c = random_reversible_chain(8, rng)
        eta = rng.dirichlet(np.ones(8))
        plain = d_eta_envelope(c, eta, [0.3, 1.0])
        refined = d_eta_envelope(c, eta, [0.3, 1.0], refine=True)
        assert np.all(refined.lower >= plain.lower - 1e-15)
        assert np.all(refined.lower <= refined.upper)


def test_empty_grid():
    with pytest.raises(EmptyGrid):
        d_eta_envelope(two_state(), [1.0, 0.0], [])


def test_t_eta_two_state_closed_form():
    a, b = 1.0, 1.0
    c = two_state(a, b)
    eps = 0.3
    br = t_eta(c, [1.0, 0.0], eps, rtol=1e-4)
    exact = np.log(1.0 / eps) / (a + b)  # ||P_t(0,.) - pi||_1 = e^{-2t}
    assert br.lower <= exact <= br.upper
    assert br.upper / exact < 1 + 1e-3


def test_t_eta_already_mixed():
    c = two_state()
    br = t_eta(c, [0.5, 0.5], 1.5, t_min=1e-3)
    assert br.upper == 1e-3
    assert t_eta(c, [1.0, 0.0], 2.0).upper == 0.0


def test_t_eta_monotone_in_epsilon():
    rng = np.random.default_rng(16)
    c = random_reversible_chain(10, rng)
    eta = rng.dirichlet(np.ones(10))
    prev = 0.0
    for eps in (1.0, 0.5, 0.1, 0.01):
        br = t_eta(c, eta, eps)
        assert br.lower <= br.upper
        assert br.upper >= prev
        prev = br.upper


def test_t_eta_horizon():
    c = two_state()
    with pytest.raises(NotReachedWithinHorizon):
        t_eta(c, [1.0, 0.0], 1e-3, t_min=1e-3, t_max=0.5)
