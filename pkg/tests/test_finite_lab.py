import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gibbsdiag import finite_lab as fl
from conftest import random_positive_joint, random_row_stochastic

# The worked 2x3 example: F Q and F Q_tilde give the same chain.
F_EX = np.array([[0.1, 0.4, 0.5], [0.3, 0.2, 0.5]])
Q_EX = np.array([[0.2, 0.8], [0.4, 0.6], [0.5, 0.5]])
Q_TILDE_EX = np.array([[0.1, 0.9], [0.3, 0.7], [0.6, 0.4]])
P_EX = np.array([[0.43, 0.57], [0.39, 0.61]])
# closed-form 2-state balance: pi_0 = p10 / (p01 + p10) = .39/.96
PI_EX = np.array([0.40625, 0.59375])


def test_model_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        fl.FiniteModel(F=np.array([[0.5, 0.6], [0.5, 0.5]]), Q=np.eye(2))
    with pytest.raises(ValueError, match="negative"):
        fl.FiniteModel(F=np.array([[-0.1, 1.1], [0.5, 0.5]]), Q=np.eye(2))
    with pytest.raises(ValueError, match="inconsistent"):
        fl.FiniteModel(F=F_EX, Q=np.eye(2))


def test_transition_matrix_worked_example():
    model = fl.FiniteModel(F=F_EX, Q=Q_EX)
    assert np.allclose(fl.transition_matrix(model), P_EX, rtol=0, atol=1e-15)


def test_transition_matrix_permutation_likelihood(rng):
    # deterministic likelihood given by a permutation: P permutes the rows of Q
    perm = np.array([2, 0, 1])
    F = np.eye(3)[perm]
    Q = random_row_stochastic(rng, 3, 3)
    model = fl.FiniteModel(F=F, Q=Q)
    assert np.allclose(fl.transition_matrix(model), Q[perm], atol=1e-15)


def test_transition_equals_two_step_kernel_of_joint(rng):
    # brute-force oracle: with Q the exact posterior of a joint, P is the
    # two-step kernel sum_y P(y|theta) P(theta'|y)
    joint = random_positive_joint(rng, 4, 5)
    model = fl.model_from_joint(joint)
    kernel = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            for y in range(5):
                p_y_given_i = joint[i, y] / joint[i].sum()
                p_j_given_y = joint[j, y] / joint[:, y].sum()
                kernel[i, j] += p_y_given_i * p_j_given_y
    assert np.allclose(fl.transition_matrix(model), kernel, atol=1e-12)


def test_stationary_worked_example():
    pi = fl.stationary_distribution(P_EX)
    assert np.abs(pi - PI_EX).max() <= 1e-10


def test_stationary_identity_is_non_unique():
    with pytest.raises(RuntimeError, match="non-unique"):
        fl.stationary_distribution(np.eye(3))


def test_stationary_matches_eigensolve_oracle(rng):
    P = random_row_stochastic(rng, 6, 6)
    pi = fl.stationary_distribution(P)
    evals, evecs = np.linalg.eig(P.T)
    lead = np.argmin(np.abs(evals - 1.0))
    oracle = np.real(evecs[:, lead])
    oracle = oracle / oracle.sum()
    assert np.abs(pi - oracle).max() <= 1e-10


def test_stationary_periodic_chain_cesaro():
    # a 2-cycle never converges pointwise from a skewed start; the averaged
    # iterates do
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    pi = fl.stationary_distribution(P, start=np.array([0.9, 0.1]))
    assert np.allclose(pi, [0.5, 0.5], atol=1e-10)


def test_stationary_positive_chain_start_independent(rng):
    P = random_row_stochastic(rng, 5, 5)
    pis = [
        fl.stationary_distribution(P, start=s)
        for s in (None, np.eye(5)[0], np.eye(5)[4], np.full(5, 0.2))
    ]
    for pi in pis[1:]:
        assert np.abs(pi - pis[0]).max() <= 1e-10


def test_pointwise_prior_recovers_marginal_for_joint(rng):
    joint = random_positive_joint(rng, 5, 4)
    model = fl.model_from_joint(joint)
    marginal = joint.sum(axis=1)
    for y in range(model.m):
        p_y = fl.pointwise_prior_exact(model, y)
        assert p_y is not None
        assert np.abs(p_y - marginal).max() <= 1e-12


def test_pointwise_prior_varies_when_incompatible(rng):
    model = fl.FiniteModel(
        F=random_row_stochastic(rng, 4, 3), Q=random_row_stochastic(rng, 3, 4)
    )
    priors = [fl.pointwise_prior_exact(model, y) for y in range(model.m)]
    tv = max(
        0.5 * np.abs(a - b).sum() for a in priors for b in priors if a is not b
    )
    assert tv > 1e-6


def test_pointwise_prior_improper_on_zero_likelihood():
    F = np.array([[0.0, 1.0], [0.5, 0.5]])
    Q = np.array([[0.5, 0.5], [0.5, 0.5]])
    model = fl.FiniteModel(F=F, Q=Q)
    assert fl.pointwise_prior_exact(model, 0) is None


def test_mixture_identities_positive_model(rng):
    model = fl.FiniteModel(
        F=random_row_stochastic(rng, 5, 4), Q=random_row_stochastic(rng, 4, 5)
    )
    gap3, gap4 = fl.verify_mixture_identities(model)
    assert gap3 <= 1e-10
    assert gap4 is not None and gap4 <= 1e-10


def test_mixture_identity_compatible_model(rng):
    model = fl.model_from_joint(random_positive_joint(rng, 4, 4))
    gap3, gap4 = fl.verify_mixture_identities(model)
    assert gap3 <= 1e-10
    assert gap4 <= 1e-10


def test_mixture_identity_not_applicable_when_improper():
    F = np.array([[0.0, 1.0], [0.5, 0.5]])
    Q = np.array([[0.5, 0.5], [0.5, 0.5]])
    gap3, gap4 = fl.verify_mixture_identities(fl.FiniteModel(F=F, Q=Q))
    assert gap3 <= 1e-10
    assert gap4 is None


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8), m=st.integers(2, 8))
def test_stationarity_gap_property(seed, n, m):
    # the first mixture identity restates stationarity: holds for any model
    rng = np.random.default_rng(seed)
    model = fl.FiniteModel(
        F=random_row_stochastic(rng, n, m), Q=random_row_stochastic(rng, m, n)
    )
    gap3, _ = fl.verify_mixture_identities(model)
    assert gap3 <= 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8), m=st.integers(2, 8))
def test_compatibility_recovery_property(seed, n, m):
    # conditionals of a positive joint: the chain's stationary latent
    # distribution is the joint's latent marginal
    rng = np.random.default_rng(seed)
    joint = random_positive_joint(rng, n, m)
    model = fl.model_from_joint(joint)
    pi = fl.stationary_distribution(fl.transition_matrix(model))
    assert np.abs(pi - joint.sum(axis=1)).max() <= 1e-10


def test_perturbation_worked_example():
    model = fl.FiniteModel(F=F_EX, Q=Q_EX)
    perturbed = fl.perturb_approximation(model, rng_seed=7)
    assert np.max(np.abs(perturbed.Q - Q_EX)) > 1e-8
    assert np.max(np.abs(F_EX @ Q_EX - F_EX @ perturbed.Q)) <= 1e-12
    # the printed alternative matrix satisfies the same contract
    printed = fl.FiniteModel(F=F_EX, Q=Q_TILDE_EX)
    assert np.max(np.abs(fl.transition_matrix(printed) - P_EX)) <= 1e-15


def test_perturbation_requires_nontrivial_kernel(rng):
    F = random_row_stochastic(rng, 3, 3)
    while abs(np.linalg.det(F)) < 1e-3:
        F = random_row_stochastic(rng, 3, 3)
    model = fl.FiniteModel(F=F, Q=random_row_stochastic(rng, 3, 3))
    with pytest.raises(ValueError, match="trivial"):
        fl.perturb_approximation(model, rng_seed=0)


def test_perturbation_preserves_stationary(rng):
    model = fl.FiniteModel(
        F=random_row_stochastic(rng, 3, 5), Q=random_row_stochastic(rng, 5, 3)
    )
    perturbed = fl.perturb_approximation(model, rng_seed=11)
    pi_a = fl.stationary_distribution(fl.transition_matrix(model))
    pi_b = fl.stationary_distribution(fl.transition_matrix(perturbed))
    assert np.abs(pi_a - pi_b).max() <= 1e-10


def test_weak_compatibility_of_exact_posterior(rng):
    model = fl.model_from_joint(random_positive_joint(rng, 4, 6))
    assert fl.weak_compatibility_gap(model) <= 1e-10


def test_weak_compatibility_strictly_weaker(rng):
    # perturbing a compatible approximation keeps the chain, hence weak
    # compatibility, although the perturbed matrix is no longer the posterior
    model = fl.model_from_joint(random_positive_joint(rng, 3, 5))
    perturbed = fl.perturb_approximation(model, rng_seed=3)
    assert np.max(np.abs(perturbed.Q - model.Q)) > 1e-8
    assert fl.weak_compatibility_gap(perturbed) <= 1e-10


def test_weak_compatibility_gap_positive_on_incompatible_fixture():
    model = fl.load_fixture("arnold_b_example")
    assert fl.weak_compatibility_gap(model) > 1e-6


def test_concentration_iff_compatible(rng):
    joint_model = fl.model_from_joint(random_positive_joint(rng, 4, 4))
    priors = [fl.pointwise_prior_exact(joint_model, y) for y in range(4)]
    tv = max(0.5 * np.abs(a - b).sum() for a in priors for b in priors)
    assert tv <= 1e-12
    assert fl.weak_compatibility_gap(joint_model) <= 1e-10


def test_fixture_loader_name_and_path(tmp_path):
    by_name = fl.load_fixture("arnold_b_example")
    path = tmp_path / "model.json"
    path.write_text('{"F": [[0.5, 0.5], [0.2, 0.8]], "Q": [[1.0, 0.0], [0.25, 0.75]]}')
    by_path = fl.load_fixture(path)
    assert np.allclose(by_name.F, F_EX)
    assert by_path.n == 2 and by_path.m == 2


def test_weak_compatibility_zero_observation_mass_errors():
    # second observation is unreachable under the likelihood
    F = np.array([[1.0, 0.0], [1.0, 0.0]])
    Q = np.array([[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(ValueError, match="zero stationary mass"):
        fl.weak_compatibility_gap(fl.FiniteModel(F=F, Q=Q))


def test_pointwise_prior_index_range():
    model = fl.load_fixture("arnold_b_example")
    with pytest.raises(ValueError, match="out of range"):
        fl.pointwise_prior_exact(model, 3)
