import itertools

import numpy as np
import pytest

from lfis.model import PairwiseModel, build_ising_dense, conditional, energy, random_state
from lfis.nfw import (
    NfwTrajectory,
    eda_run,
    expand_trajectory,
    expanded_marginals,
    flip_distribution,
    gibbs_random_site_step,
    linear_schedule,
    nfw_run,
    sample_geometric,
    state_at,
)
from lfis.oracle import exact_marginals


def kernel_change_masses(model, beta, x):
    """Random-site Gibbs kernel expanded over every (i, value) outcome."""
    M, q = model.num_variables, model.q
    out = np.zeros((M, q))
    for i in range(M):
        p = conditional(model, beta, x, i)
        for a in range(q):
            if model.domain_values[a] != x[i]:
                out[i, a] = p[a] / M
    return out


# ---------- flip distributions ----------

def test_flip_distribution_single_variable():
    model = PairwiseModel(1, np.empty((0, 3)))
    dist = flip_distribution(model, 2.0, np.array([1]))
    assert dist.p_flip == pytest.approx(0.5)
    np.testing.assert_allclose(dist.nu, [[1.0, 0.0]])


def test_flip_distribution_without_couplings(free_spins, rng):
    dist = flip_distribution(free_spins, 3.0, random_state(free_spins, rng))
    M, q = 5, 2
    np.testing.assert_allclose(dist.alpha, (q - 1) / (q * M))
    assert dist.p_flip == pytest.approx((q - 1) / q)
    changing = dist.nu[dist.nu > 0]
    np.testing.assert_allclose(changing, 1 / ((q - 1) * M))


def test_flip_distribution_matches_kernel_expansion(rng):
    model = build_ising_dense(5, seed=21)
    for _ in range(10):
        x = random_state(model, rng)
        dist = flip_distribution(model, 3.0, x)
        masses = kernel_change_masses(model, 3.0, x)
        np.testing.assert_allclose(dist.nu, masses / masses.sum(), atol=1e-10)
        assert dist.p_flip == pytest.approx(masses.sum(), abs=1e-10)


def test_flip_distribution_invariants(rng):
    model = build_ising_dense(10, seed=2)
    for _ in range(1000):
        x = random_state(model, rng)
        dist = flip_distribution(model, float(rng.uniform(0, 10)), x)
        assert dist.zeta.sum() == pytest.approx(1.0, abs=1e-10)
        assert dist.alpha.sum() == pytest.approx(dist.p_flip, abs=1e-10)
        assert dist.p_flip + dist.p_stay == pytest.approx(1.0, abs=1e-10)
        assert 0.0 <= dist.p_flip <= 1.0
        assert dist.nu.sum() == pytest.approx(1.0, abs=1e-10)
        assert np.all(dist.nu[np.arange(10), model.index_of(x)] == 0.0)


def test_flip_distribution_potts(potts3, rng):
    x = random_state(potts3, rng)
    dist = flip_distribution(potts3, 1.0, x)
    masses = kernel_change_masses(potts3, 1.0, x)
    np.testing.assert_allclose(dist.nu, masses / masses.sum(), atol=1e-12)


# ---------- random-site Gibbs ----------

def test_gibbs_step_changes_at_most_one_site(dense8, rng):
    x = random_state(dense8, rng)
    for _ in range(50):
        y = gibbs_random_site_step(dense8, 0.0, x, rng)
        assert np.sum(y != x) <= 1
        x = y


def test_gibbs_step_follows_strong_field(rng):
    model = PairwiseModel(2, [[0, 1, 50.0]])
    x = np.array([-1, 1])
    hits = 0
    for _ in range(200):
        y = gibbs_random_site_step(model, 10.0, x, rng)
        hits += bool(np.all(y == y[0]))
    # the only change candidates align the spins
    assert hits >= 95


@pytest.mark.slow
def test_gibbs_marginals_match_oracle():
    model = build_ising_dense(3, seed=8)
    rng = np.random.default_rng(1)
    x = random_state(model, rng)
    counts = np.zeros(3)
    steps = 1_000_000
    for _ in range(steps):
        x = gibbs_random_site_step(model, 1.0, x, rng)
        counts += x == 1
    np.testing.assert_allclose(counts / steps, exact_marginals(model, 1.0)[:, 1], atol=0.005)


# ---------- geometric waiting times ----------

def test_geometric_certain(rng):
    assert all(sample_geometric(1.0, rng) == 1 for _ in range(100))


def test_geometric_mean_and_tail(rng):
    draws = np.array([sample_geometric(0.5, rng) for _ in range(200_000)])
    assert draws.min() >= 1
    assert draws.mean() == pytest.approx(2.0, abs=0.02)
    tail = np.array([sample_geometric(0.01, rng) for _ in range(200_000)])
    assert np.mean(tail > 100) == pytest.approx(0.99**100, abs=0.01)


def test_geometric_tiny_probability_stays_integral(rng):
    tau = sample_geometric(1e-250, rng)
    assert isinstance(tau, int)
    assert tau > 10**200


@pytest.mark.parametrize("p", [0.0, -0.5, 1.5])
def test_geometric_rejects_invalid(p, rng):
    with pytest.raises(ValueError):
        sample_geometric(p, rng)


# ---------- NFW ----------

def test_nfw_zero_flips(dense8, rng):
    x0 = random_state(dense8, rng)
    traj = nfw_run(dense8, 1.0, x0, 0, rng)
    assert traj.num_flips == 0
    assert traj.times == [0]
    np.testing.assert_array_equal(traj.final_state, x0)


def test_nfw_trajectory_invariants(dense8, rng):
    traj = nfw_run(dense8, 2.0, random_state(dense8, rng), 300, rng)
    assert traj.status == "complete"
    times = np.array(traj.times)
    assert times[0] == 0 and np.all(np.diff(times) >= 1)
    states = list(traj.states())
    for a, b in zip(states, states[1:]):
        assert np.sum(a != b) == 1
    for s, e in zip(states[1:], traj.energies):
        assert energy(dense8, s) == pytest.approx(e, abs=1e-10)


def test_nfw_absorbing_state_truncates(rng):
    model = PairwiseModel(2, [[0, 1, 1.0]])
    traj = nfw_run(model, 1e4, np.array([1, 1]), 10, rng)
    assert traj.status == "absorbed"
    assert traj.num_flips == 0


def test_expand_trajectory_replicates_states(two_spin):
    x0 = np.array([1, 1])
    traj = NfwTrajectory(model=two_spin, x0=x0, energy0=energy(two_spin, x0),
                         sites=[0], values=[-1], taus=[3], energies=[0.7])
    out = list(expand_trajectory(traj, include_final=True))
    assert len(out) == 4
    for s in out[:3]:
        np.testing.assert_array_equal(s, [1, 1])
    np.testing.assert_array_equal(out[3], [-1, 1])
    assert len(list(expand_trajectory(traj, max_steps=2))) == 2


def test_expand_trajectory_length_is_effective_length(dense8, rng):
    traj = nfw_run(dense8, 1.0, random_state(dense8, rng), 50, rng)
    assert sum(1 for _ in expand_trajectory(traj)) == traj.effective_length


def test_expand_with_unit_waits_equals_flip_sequence(two_spin):
    x0 = np.array([1, 1])
    traj = NfwTrajectory(model=two_spin, x0=x0, energy0=0.0,
                         sites=[0, 1, 0], values=[-1, -1, 1], taus=[1, 1, 1], energies=[0, 0, 0])
    expanded = list(expand_trajectory(traj, include_final=True))
    for a, b in zip(expanded, traj.states()):
        np.testing.assert_array_equal(a, b)


def test_state_at(dense8, rng):
    traj = nfw_run(dense8, 1.0, random_state(dense8, rng), 20, rng)
    expanded = list(expand_trajectory(traj))
    for t in (0, len(expanded) // 2, len(expanded) - 1):
        np.testing.assert_array_equal(state_at(traj, t), expanded[t])



def test_state_at_keeps_integer_times(two_spin):
    x0 = np.array([1, 1])
    big = 2**60
    traj = NfwTrajectory(model=two_spin, x0=x0, energy0=0.0,
                         sites=[0], values=[-1], taus=[big], energies=[0.0])
    np.testing.assert_array_equal(state_at(traj, big - 1), [1, 1])
    np.testing.assert_array_equal(state_at(traj, big), [-1, 1])


@pytest.mark.slow
def test_nfw_expanded_marginals_match_oracle():
    model = build_ising_dense(4, seed=13)
    exact = exact_marginals(model, 1.0)
    seeds = np.random.SeedSequence(2024).spawn(20)
    marginals = []
    for s in seeds:
        rng = np.random.default_rng(s)
        traj = nfw_run(model, 1.0, random_state(model, rng), 100_000, rng)
        assert traj.effective_length >= 10**5
        marginals.append(expanded_marginals(traj))
    np.testing.assert_allclose(np.mean(marginals, axis=0), exact, atol=0.01)


# ---------- event-driven annealing ----------

def test_linear_schedule():
    s = list(linear_schedule(0.001, 20.0, 5))
    assert s[0] == pytest.approx(0.001) and s[-1] == pytest.approx(20.0)
    assert np.all(np.diff(s) > 0)
    assert list(linear_schedule(0.0, 3.0, 1)) == [3.0]


def test_eda_constant_schedule_matches_nfw_flip(dense8):
    # both draw the flip first; nfw then spends a draw on the waiting time
    x0 = random_state(dense8, np.random.default_rng(0))
    for seed in range(20):
        traj = nfw_run(dense8, 2.0, x0, 1, np.random.default_rng(seed))
        final = eda_run(dense8, itertools.repeat(2.0), x0, 1, np.random.default_rng(seed))
        np.testing.assert_array_equal(final, traj.final_state)


def test_eda_trace_and_errors(dense8, rng):
    x0 = random_state(dense8, rng)
    final, trace = eda_run(dense8, linear_schedule(0.001, 5.0, 40), x0, 40, rng, return_trace=True)
    assert trace.shape == (40,)
    assert trace[-1] == pytest.approx(energy(dense8, final), abs=1e-10)
    with pytest.raises(ValueError):
        eda_run(dense8, [1.0, 1.0], x0, 3, rng)


def test_eda_at_zero_temperature_is_uniform():
    model = build_ising_dense(6, seed=1)
    rng = np.random.default_rng(9)
    finals = np.array([eda_run(model, itertools.repeat(0.0), random_state(model, rng), 5, rng)
                       for _ in range(4000)])
    np.testing.assert_allclose((finals == 1).mean(axis=0), 0.5, atol=0.04)


# ---------- equivalence with random-site Gibbs ----------

def gibbs_transition_matrix(model, beta):
    """Exact random-site Gibbs kernel over the enumerated state space."""
    states = [np.array(s) for s in itertools.product(model.domain, repeat=model.num_variables)]
    index = {tuple(s): k for k, s in enumerate(states)}
    M = model.num_variables
    P = np.zeros((len(states), len(states)))
    for k, x in enumerate(states):
        for i in range(M):
            p = conditional(model, beta, x, i)
            for a, v in enumerate(model.domain):
                y = x.copy()
                y[i] = v
                P[k, index[tuple(y)]] += p[a] / M
    return P, index


@pytest.mark.slow
def test_nfw_state_law_at_fixed_time_matches_gibbs():
    model = build_ising_dense(3, seed=8)
    beta, t, runs = 1.0, 12, 100_000
    x0 = np.array([1, -1, 1])
    P, index = gibbs_transition_matrix(model, beta)
    start = np.zeros(len(index))
    start[index[tuple(x0)]] = 1.0
    expected = start @ np.linalg.matrix_power(P, t)

    rng = np.random.default_rng(77)
    counts = np.zeros(len(index))
    for _ in range(runs):
        traj = nfw_run(model, beta, x0, 20, rng)
        assert traj.effective_length > t
        counts[index[tuple(state_at(traj, t))]] += 1

    se = np.sqrt(expected * (1 - expected) / runs)
    assert np.all(np.abs(counts / runs - expected) <= 3 * se)
