import itertools

import numpy as np
import pytest

from lfis.model import PairwiseModel, build_ising_dense, energy
from lfis.oracle import (
    EnumerationBudgetError,
    check_budget,
    exact_energy_distribution,
    exact_energy_range,
    exact_expectation,
    exact_log_partition,
    exact_marginals,
    gray_code_changes,
    oracle_record,
    total_variation,
)
from scipy.special import logsumexp


def brute_force_energies(model):
    states = itertools.product(model.domain, repeat=model.num_variables)
    return np.array([energy(model, np.array(s)) for s in states])


# ---------- log Z ----------

@pytest.mark.parametrize("M", [5, 15, 20])
@pytest.mark.parametrize("beta", [0.0, 1.0, 20.0])
def test_log_partition_without_couplings(M, beta):
    model = PairwiseModel(M, np.empty((0, 3)))
    assert exact_log_partition(model, beta) == pytest.approx(M * np.log(2), abs=1e-9)


def test_log_partition_at_zero_beta(dense8):
    assert exact_log_partition(dense8, 0.0) == pytest.approx(8 * np.log(2), abs=1e-9)


def test_log_partition_two_spin(two_spin):
    s = 1 / np.sqrt(2)
    expected = np.log(2 * np.exp(s) + 2 * np.exp(-s))
    assert exact_log_partition(two_spin, 1.0) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("block_bits", [1, 3, 16])
def test_log_partition_matches_brute_force(dense8, block_bits):
    from lfis.oracle import energy_blocks

    E = np.concatenate(list(energy_blocks(dense8, block_bits=block_bits)))
    np.testing.assert_allclose(np.sort(E), np.sort(brute_force_energies(dense8)), atol=1e-12)
    expected = logsumexp(-2.0 * brute_force_energies(dense8))
    assert exact_log_partition(dense8, 2.0) == pytest.approx(expected, abs=1e-10)


def test_log_partition_potts(potts3):
    expected = logsumexp(-1.3 * brute_force_energies(potts3))
    assert exact_log_partition(potts3, 1.3) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("beta", [0.5, 2.0, 10.0])
def test_log_partition_bounds(dense8, beta):
    e_min, _ = exact_energy_range(dense8)
    log_z = exact_log_partition(dense8, beta)
    assert -beta * e_min <= log_z + 1e-12
    assert log_z <= 8 * np.log(2) - beta * e_min + 1e-12


def test_budget_refusal(dense8):
    with pytest.raises(EnumerationBudgetError):
        exact_log_partition(dense8, 1.0, budget=100)
    with pytest.raises(ValueError):
        check_budget(build_ising_dense(30, seed=1))


# ---------- expectations ----------

def test_expectation_of_constant(dense8):
    assert exact_expectation(dense8, 3.0, lambda X: np.ones(len(X))) == pytest.approx(1.0, abs=1e-12)
    assert exact_expectation(dense8, 3.0, lambda X: 2.5) == pytest.approx(2.5, abs=1e-12)


def test_expectation_symmetric_spin(free_spins):
    assert exact_expectation(free_spins, 4.0, lambda X: X[:, 0]) == pytest.approx(0.0, abs=1e-12)


def test_mean_energy_is_log_partition_derivative():
    model = build_ising_dense(12, seed=4)

    def energies(X):
        return model.energies(model.index_of_batch(X))

    mean_e = exact_expectation(model, 2.0, energies)
    step = 1e-4
    derivative = (exact_log_partition(model, 2.0 + step) - exact_log_partition(model, 2.0 - step)) / (2 * step)
    assert mean_e == pytest.approx(-derivative, abs=1e-5)


def test_marginals(free_spins, two_spin):
    np.testing.assert_allclose(exact_marginals(free_spins, 3.0), 0.5, atol=1e-12)
    m = exact_marginals(two_spin, 1.0)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(m, 0.5, atol=1e-12)


# ---------- energy distribution ----------

def test_energy_distribution_single_variable():
    hist = exact_energy_distribution(PairwiseModel(1, np.empty((0, 3))), 2.0)
    np.testing.assert_allclose(hist.levels, [0.0])
    np.testing.assert_allclose(hist.level_masses, [1.0])
    assert hist.bin_masses.sum() == pytest.approx(1.0)


def test_energy_distribution_two_spin(two_spin):
    hist = exact_energy_distribution(two_spin, 0.0)
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(hist.levels, [-s, s], atol=1e-9)
    np.testing.assert_allclose(hist.level_masses, [0.5, 0.5], atol=1e-12)
    np.testing.assert_array_equal(hist.level_counts, [2, 2])


def test_energy_distribution_normalized(dense8):
    hist = exact_energy_distribution(dense8, 5.0)
    assert hist.level_masses.sum() == pytest.approx(1.0, abs=1e-12)
    assert hist.bin_masses.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(hist.level_masses >= 0)
    assert len(hist.bin_edges) == 101


def test_energy_distribution_degeneracies_at_zero_beta(dense8):
    hist = exact_energy_distribution(dense8, 0.0)
    np.testing.assert_allclose(hist.level_masses, hist.level_counts / 2**8, atol=1e-12)
    assert hist.level_counts.sum() == 2**8


def test_rebin_and_total_variation(dense8):
    hist = exact_energy_distribution(dense8, 1.0)
    np.testing.assert_allclose(hist.rebin(hist.bin_edges), hist.bin_masses, atol=1e-12)
    assert total_variation(hist.bin_masses, hist.bin_masses) == 0.0
    assert total_variation([1.0, 0.0], [0.0, 1.0]) == 1.0


# ---------- helpers ----------

@pytest.mark.parametrize("n, q", [(3, 2), (3, 3), (2, 4)])
def test_gray_code_visits_every_configuration_once(n, q):
    digits = [0] * n
    seen = {tuple(digits)}
    for k, v in gray_code_changes(n, q):
        assert abs(v - digits[k]) == 1
        digits[k] = v
        seen.add(tuple(digits))
    assert len(seen) == q**n


def test_oracle_record_fields(two_spin):
    rec = oracle_record(two_spin, 1.0, bins=10, exact_levels=True)
    assert rec["method"] == "exact"
    assert set(rec) >= {"beta", "log_Z", "model_digest", "bins", "levels"}
    assert len(rec["bins"]["masses"]) == 10
