import numpy as np
import pytest

from rdecomp import estimators
from rdecomp.decomposer import IntervalSet, RewardDecomposition
from rdecomp.policies import CategoricalPolicy
from rdecomp.trajectory import Trajectory


def decomposition(values, episodic_return):
    return RewardDecomposition.from_values(np.asarray(values, dtype=float), episodic_return)


def random_setup(seed, t_len=None, n_states=3, n_actions=2):
    rng = np.random.default_rng(seed)
    t_len = t_len or int(rng.integers(1, 9))
    states = rng.normal(size=(t_len, n_states))
    actions = rng.integers(0, n_actions, size=t_len)
    ret = float(rng.normal())
    traj = Trajectory(states=states, actions=actions, episodic_return=ret)
    policy = CategoricalPolicy(rng, n_states, n_actions, hidden=(8,))
    dec = decomposition(rng.normal(size=t_len), ret)
    return traj, policy, dec


# ---------------------------------------------------------------------------
# generalized Q and its complement


def test_generalized_q_is_return_to_go():
    dec = decomposition([1.0, 2.0, 3.0], 6.0)
    np.testing.assert_array_equal(estimators.generalized_q(dec, 3), [6.0, 5.0, 3.0])


def test_generalized_q_prefixes_same_rule():
    # prefix i ends at step i, so the Q rule is identical for both kinds
    a, b, c = 0.3, -1.2, 2.5
    dec = decomposition([a, b, c], 0.0)
    q = estimators.generalized_q(dec, 3)
    np.testing.assert_allclose(q, [a + b + c, b + c, c], rtol=1e-15)


def test_generalized_q_matches_brute_force_membership():
    rng = np.random.default_rng(0)
    for kind in ("singletons", "prefixes"):
        iset = IntervalSet(kind)
        values = rng.normal(size=4)
        dec = decomposition(values, 1.0)
        q = estimators.generalized_q(dec, 4)
        # brute force over (interval, t) membership in the ends-at->=t set
        for t in range(4):
            total = 0.0
            for i in range(4):
                if iset.max_index(i) >= t:
                    total += values[i]
            assert q[t] == pytest.approx(total, rel=1e-13)


def test_generalized_q_length_mismatch_rejected():
    with pytest.raises(ValueError, match="entries"):
        estimators.generalized_q(decomposition([1.0], 1.0), 3)


def test_complement_trivial_cases():
    dec = decomposition([1.0, 2.0, 3.0], 6.0)
    np.testing.assert_array_equal(estimators.r_not_t(dec, 3), [0.0, 1.0, 3.0])


def test_complement_at_step_zero_is_always_zero():
    for seed in range(10):
        values = np.random.default_rng(seed).normal(size=6)
        dec = decomposition(values, 0.5)
        assert estimators.r_not_t(dec, 6)[0] == 0.0


def test_partition_identity():
    for seed in range(50):
        values = np.random.default_rng(seed).normal(size=8) * 10
        dec = decomposition(values, 2.0)
        q = estimators.generalized_q(dec, 8)
        rnot = estimators.r_not_t(dec, 8)
        np.testing.assert_allclose(rnot + q, dec.composite, rtol=1e-12, atol=1e-12)
        # and the complement agrees with its direct definition
        direct = np.array([values[:t].sum() for t in range(8)])
        np.testing.assert_allclose(rnot, direct, rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------------------
# degenerate estimator cases


def test_zero_surrogate_rewards_give_zero_composite_gradient():
    traj, policy, _ = random_setup(1)
    dec = decomposition(np.zeros(traj.length), traj.episodic_return)
    est = estimators.grad_composite([traj], policy, [dec])
    np.testing.assert_array_equal(est.grad, np.zeros_like(est.grad))


def test_single_step_composite_reduces_to_reinforce_with_surrogate():
    traj, policy, _ = random_setup(2, t_len=1)
    dec = decomposition([0.7], traj.episodic_return)
    est = estimators.grad_composite([traj], policy, [dec])
    scores = policy.score_matrix(traj)
    np.testing.assert_allclose(est.grad, 0.7 * scores[0], rtol=1e-12)


def test_exact_decomposition_makes_corrected_equal_composite():
    traj, policy, _ = random_setup(3, t_len=5)
    values = np.random.default_rng(33).normal(size=5)
    dec = decomposition(values, 0.0)
    dec = RewardDecomposition(dec.per_interval, dec.composite, 0.0)  # r_0 == 0
    a = estimators.grad_bias_corrected([traj], policy, [dec])
    b = estimators.grad_composite([traj], policy, [dec])
    np.testing.assert_array_equal(a.grad, b.grad)


def test_zero_decomposition_makes_corrected_equal_reinforce():
    traj, policy, _ = random_setup(4, t_len=6)
    dec = decomposition(np.zeros(6), traj.episodic_return)
    a = estimators.grad_bias_corrected([traj], policy, [dec])
    b = estimators.grad_reinforce([traj], policy)
    np.testing.assert_array_equal(a.grad, b.grad)


def test_zero_decomposition_makes_control_variate_equal_reinforce():
    traj, policy, _ = random_setup(5, t_len=4)
    dec = decomposition(np.zeros(4), traj.episodic_return)
    a = estimators.grad_control_variate([traj], policy, [dec])
    b = estimators.grad_reinforce([traj], policy)
    np.testing.assert_array_equal(a.grad, b.grad)


def test_single_step_control_variate_coefficient_is_return():
    traj, policy, dec = random_setup(6, t_len=1)
    a = estimators.grad_control_variate([traj], policy, [dec])
    b = estimators.grad_reinforce([traj], policy)
    np.testing.assert_allclose(a.grad, b.grad, rtol=1e-12)


def test_reinforce_zero_return_zero_gradient():
    rng = np.random.default_rng(7)
    policy = CategoricalPolicy(rng, 3, 2, hidden=(8,))
    batch = []
    for seed in range(4):
        r = np.random.default_rng(seed)
        batch.append(
            Trajectory(
                states=r.normal(size=(3, 3)),
                actions=r.integers(0, 2, size=3),
                episodic_return=0.0,
            )
        )
    est = estimators.grad_reinforce(batch, policy)
    np.testing.assert_array_equal(est.grad, np.zeros_like(est.grad))


# ---------------------------------------------------------------------------
# rearrangement identities (per sample)


def rel_gap(a, b):
    return np.abs(a - b).max() / (np.abs(a).max() + np.abs(b).max() + 1e-300)


@pytest.mark.parametrize("kind", ["singletons", "prefixes"])
def test_composite_forms_agree_per_sample(kind):
    for seed in range(30):
        traj, policy, dec = random_setup(100 + seed)
        a = estimators.grad_composite([traj], policy, [dec])
        b = estimators.grad_composite_by_interval([traj], policy, [dec])
        assert rel_gap(a.grad, b.grad) <= 1e-12


def test_corrected_and_control_variate_agree_per_sample():
    for seed in range(30):
        traj, policy, dec = random_setup(200 + seed)
        a = estimators.grad_bias_corrected([traj], policy, [dec])
        b = estimators.grad_control_variate([traj], policy, [dec])
        assert rel_gap(a.grad, b.grad) <= 1e-12


def test_long_horizon_identities():
    for seed in range(5):
        traj, policy, dec = random_setup(300 + seed, t_len=32)
        a = estimators.grad_bias_corrected([traj], policy, [dec])
        b = estimators.grad_control_variate([traj], policy, [dec])
        assert rel_gap(a.grad, b.grad) <= 1e-12


# ---------------------------------------------------------------------------
# diagnostics


def test_variance_zero_for_identical_samples():
    traj, policy, dec = random_setup(8, t_len=3)
    est = estimators.grad_bias_corrected([traj, traj], policy, [dec, dec])
    assert est.variance == 0.0
    assert est.residual_abs_mean == abs(dec.residual)


def test_batch_mean_and_variance_definition():
    trajs, decs = [], []
    policy = None
    for seed in range(5):
        traj, pol, dec = random_setup(400 + seed, t_len=4)
        policy = policy or pol
        trajs.append(traj)
        decs.append(dec)
    est = estimators.grad_reinforce(trajs, policy)
    singles = np.stack([estimators.grad_reinforce([t], policy).grad for t in trajs])
    np.testing.assert_allclose(est.grad, singles.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(est.variance, singles.var(axis=0).mean(), rtol=1e-10)
