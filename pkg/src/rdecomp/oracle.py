"""Exact-enumeration ground truth on small tabular MDPs.

Every trajectory of a small MDP is enumerated together with its exact
probability under the current policy, which turns the expectation operators
of the estimator module into finite sums. That is the engine used to check,
digit for digit, that

  (a) a surrogate reward on an interval is orthogonal to the scores of
      later steps,
  (b) the interval-major and step-major composite gradients agree,
  (c) the residual-corrected estimator equals the true policy gradient for
      any reward predictor whatsoever, and
  (d) the complement term rnot_t is a zero-mean control variate.

Horizons are capped (default 6) and so is the trajectory count, because
the identities are dimension-independent: if they hold on a 3-state chain
they hold everywhere the algebra applies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rdecomp import estimators
from rdecomp.trajectory import Trajectory

MAX_TRAJECTORIES = 10**6


@dataclass
class TabularMdp:
    """Finite MDP with enumerable trajectory space.

    `transition[s, a]` is the distribution over next states. Rewards come
    either from `step_rewards(s, a, s_next)` summed over the episode or
    from an `episodic_fn(states, actions)` that may be any function of the
    whole trajectory. `terminal` marks absorbing states that end episodes
    early.
    """

    n_states: int
    n_actions: int
    horizon: int
    transition: np.ndarray
    initial_dist: np.ndarray
    step_rewards: object = None
    episodic_fn: object = None
    terminal: frozenset = field(default_factory=frozenset)
    name: str = ""

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.initial_dist = np.asarray(self.initial_dist, dtype=np.float64)
        if self.transition.shape != (self.n_states, self.n_actions, self.n_states):
            raise ValueError(f"transition tensor shape {self.transition.shape}")
        rowsums = self.transition.sum(axis=2)
        if np.abs(rowsums - 1.0).max() > 1e-12:
            raise ValueError("transition rows must sum to 1 within 1e-12")
        if abs(self.initial_dist.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must sum to 1 within 1e-12")
        if self.horizon < 1 or self.horizon > 6:
            raise ValueError("oracle MDPs are capped at horizon 6")
        if self.step_rewards is None and self.episodic_fn is None:
            raise ValueError("need step_rewards or episodic_fn")

    @property
    def state_dim(self):
        return self.n_states

    def state_vector(self, s):
        v = np.zeros(self.n_states)
        v[s] = 1.0
        return v

    def episodic_return(self, states, actions):
        if self.episodic_fn is not None:
            return float(self.episodic_fn(states, actions))
        total = 0.0
        for t in range(len(actions)):
            total += self.step_rewards(states[t], actions[t], states[t + 1])
        return total


def enumerate_trajectories(mdp, policy, max_count=MAX_TRAJECTORIES):
    """All realizable trajectories with their exact probabilities.

    Returns a list of (Trajectory, probability); probabilities sum to 1.
    Zero-probability branches (transitions or actions) are pruned: they
    contribute nothing to any expectation, and a zero-probability action
    has no finite score vector to evaluate.
    """
    results = []
    log_probs_cache = {}

    def action_probs(s):
        got = log_probs_cache.get(s)
        if got is None:
            got = np.exp(policy.log_prob_matrix_np(mdp.state_vector(s)[None, :])[0])
            log_probs_cache[s] = got
        return got

    def walk(s, t, states, actions, prob):
        if len(results) > max_count:
            raise RuntimeError(
                f"trajectory space exceeds cap ({max_count}); shrink the MDP"
            )
        if t == mdp.horizon or s in mdp.terminal:
            ret = mdp.episodic_return(states, actions)
            traj = Trajectory(
                states=np.array([mdp.state_vector(si) for si in states[:-1]]),
                actions=np.array(actions, dtype=np.int64),
                episodic_return=ret,
            )
            results.append((traj, prob, tuple(states), tuple(actions)))
            return
        pi = action_probs(s)
        for a in range(mdp.n_actions):
            if pi[a] == 0.0:
                continue
            for s_next in range(mdp.n_states):
                p_step = mdp.transition[s, a, s_next]
                if p_step == 0.0:
                    continue
                walk(
                    s_next,
                    t + 1,
                    states + [s_next],
                    actions + [a],
                    prob * pi[a] * p_step,
                )

    for s0 in range(mdp.n_states):
        if mdp.initial_dist[s0] > 0.0:
            walk(s0, 0, [s0], [], float(mdp.initial_dist[s0]))
    return [(traj, p) for traj, p, _, _ in results]


def sample_trajectory(mdp, policy, rng):
    s = int(rng.choice(mdp.n_states, p=mdp.initial_dist))
    states, actions = [s], []
    for _ in range(mdp.horizon):
        if s in mdp.terminal:
            break
        a = policy.act(mdp.state_vector(s), rng)
        s_next = int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))
        actions.append(a)
        states.append(s_next)
        s = s_next
    return Trajectory(
        states=np.array([mdp.state_vector(si) for si in states[:-1]]),
        actions=np.array(actions, dtype=np.int64),
        episodic_return=mdp.episodic_return(states, actions),
    )


def exact_j(mdp, policy):
    """Exact expected episodic return under the policy."""
    return sum(p * traj.episodic_return for traj, p in enumerate_trajectories(mdp, policy))


def exact_grad_j(mdp, policy):
    """Exact policy gradient: sum over trajectories of p * R * summed scores."""
    total = None
    for traj, p in enumerate_trajectories(mdp, policy):
        g = policy.weighted_score_gradient(
            traj, np.full(traj.length, traj.episodic_return)
        )
        total = p * g if total is None else total + p * g
    return total


class OracleContext:
    """Enumeration plus per-trajectory score matrices, computed once."""

    def __init__(self, mdp, policy):
        self.mdp = mdp
        self.policy = policy
        pairs = enumerate_trajectories(mdp, policy)
        self.trajectories = [traj for traj, _ in pairs]
        self.probabilities = np.array([p for _, p in pairs])
        prob_sum = self.probabilities.sum()
        if abs(prob_sum - 1.0) > 1e-10:
            raise RuntimeError(f"enumerated probabilities sum to {prob_sum}")
        self.scores = [policy.score_matrix(traj) for traj in self.trajectories]
        self.n_params = self.scores[0].shape[1]
        self.max_len = max(traj.length for traj in self.trajectories)

    def expectation(self, per_traj_fn):
        """Exact expectation of a vector function of (index, trajectory, scores)."""
        total = None
        for i, traj in enumerate(self.trajectories):
            v = per_traj_fn(i, traj, self.scores[i])
            contrib = self.probabilities[i] * v
            total = contrib if total is None else total + contrib
        return total


def verify_identities(ctx, predictor_fn, tol=1e-8):
    """Run the four gradient identities against exact enumeration.

    predictor_fn maps a Trajectory to a RewardDecomposition; it can be an
    actual reward model or any fixed function, including adversarial ones.
    Returns a report dict; report["pass"] is the conjunction of all checks.
    """
    decomps = [predictor_fn(traj) for traj in ctx.trajectories]
    exact = exact_grad_j(ctx.mdp, ctx.policy)

    # (a) interval rewards are orthogonal to strictly later scores
    worst_a, arg_a = 0.0, None
    for t in range(1, ctx.max_len):
        for i in range(t):

            def accum(k, traj, scores, i=i, t=t):
                if traj.length <= t:
                    return np.zeros(ctx.n_params)
                return decomps[k].per_interval[i] * scores[t]

            err = float(np.abs(ctx.expectation(accum)).max())
            if err > worst_a:
                worst_a, arg_a = err, (i, t)

    # (b) interval-major and step-major composite gradients agree
    def composite_steps(k, traj, scores):
        q = estimators.generalized_q(decomps[k], traj.length)
        return q @ scores

    def composite_intervals(k, traj, scores):
        g = np.zeros(ctx.n_params)
        for i, value in enumerate(decomps[k].per_interval):
            g += value * scores[: i + 1].sum(axis=0)
        return g

    err_b = float(
        np.abs(ctx.expectation(composite_steps) - ctx.expectation(composite_intervals)).max()
    )

    # (c) residual-corrected estimator is exactly the true gradient
    def corrected(k, traj, scores):
        coeffs = decomps[k].residual + estimators.generalized_q(decomps[k], traj.length)
        return coeffs @ scores

    err_c = float(np.abs(ctx.expectation(corrected) - exact).max())

    # (d) the complement term is a zero-mean control variate at every step
    worst_d, arg_d = 0.0, None
    for t in range(ctx.max_len):

        def accum_d(k, traj, scores, t=t):
            if traj.length <= t:
                return np.zeros(ctx.n_params)
            rnot = estimators.r_not_t(decomps[k], traj.length)
            return rnot[t] * scores[t]

        err = float(np.abs(ctx.expectation(accum_d)).max())
        if err > worst_d:
            worst_d, arg_d = err, t

    checks = {
        "interval_score_orthogonality": {
            "max_abs_error": worst_a,
            "worst_pair": arg_a,
            "pass": worst_a <= tol,
        },
        "composite_forms_match": {"max_abs_error": err_b, "pass": err_b <= tol},
        "corrected_matches_true_gradient": {"max_abs_error": err_c, "pass": err_c <= tol},
        "complement_zero_mean": {
            "max_abs_error": worst_d,
            "worst_step": arg_d,
            "pass": worst_d <= tol,
        },
    }
    return {
        "mdp": ctx.mdp.name,
        "tolerance": tol,
        "checks": checks,
        "pass": all(c["pass"] for c in checks.values()),
    }


# ---------------------------------------------------------------------------
# builtin MDPs for the verify command


def chain3_mdp():
    """Deterministic 3-state walk; +1 on reaching the right end (terminal)."""
    n = 3
    transition = np.zeros((n, 2, n))
    for s in range(n):
        transition[s, 0, max(s - 1, 0)] = 1.0
        transition[s, 1, min(s + 1, n - 1)] = 1.0
    initial = np.zeros(n)
    initial[0] = 1.0
    return TabularMdp(
        n_states=n,
        n_actions=2,
        horizon=4,
        transition=transition,
        initial_dist=initial,
        step_rewards=lambda s, a, s2: 1.0 if (s2 == n - 1 and s != n - 1) else 0.0,
        terminal=frozenset({n - 1}),
        name="chain3",
    )


def windy2_mdp():
    """Two states, noisy transitions, dense per-step rewards."""
    transition = np.array(
        [
            [[0.8, 0.2], [0.3, 0.7]],
            [[0.6, 0.4], [0.1, 0.9]],
        ]
    )
    rewards = np.array([[0.25, -0.5], [1.0, 0.75]])
    return TabularMdp(
        n_states=2,
        n_actions=2,
        horizon=3,
        transition=transition,
        initial_dist=np.array([0.5, 0.5]),
        step_rewards=lambda s, a, s2: float(rewards[s, a]),
        name="windy2",
    )


def bandit4_mdp():
    """Single state, purely episodic reward: a nonlinear function of the
    whole action sequence, so no per-step decomposition exists."""
    transition = np.ones((1, 2, 1))
    return TabularMdp(
        n_states=1,
        n_actions=2,
        horizon=4,
        transition=transition,
        initial_dist=np.array([1.0]),
        episodic_fn=lambda states, actions: (
            2.0 if sum(actions) == 3 else 0.25 * sum(actions)
        ),
        name="bandit4",
    )


BUILTIN_MDPS = {
    "chain3": chain3_mdp,
    "windy2": windy2_mdp,
    "bandit4": bandit4_mdp,
}
