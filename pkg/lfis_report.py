# lfis_report.py

import numpy as np

from lfis.baselines import smc_run
from lfis.importance import lfis_pipeline, selected_energy_histogram
from lfis.model import build_ising_dense
from lfis.oracle import exact_energy_distribution, exact_log_partition, total_variation


def main():
    model = build_ising_dense(25, seed=7)
    betas = [1.0, 5.0, 10.0, 20.0]
    N, T, reps = 1000, 1000, 5

    print("\n=== Partition function: LFIS vs SMC (M = 25, dense Gaussian couplings) ===\n")

    for k, beta in enumerate(betas):
        log_z = exact_log_partition(model, beta)
        streams = np.random.SeedSequence(42, spawn_key=(k,)).spawn(2 * reps)

        lfis_err, smc_err, selected = [], [], []
        for r in range(reps):
            res = lfis_pipeline(model, beta, N, T, rng=np.random.default_rng(streams[r]))
            lfis_err.append(abs(res.estimate.log_Z_hat - log_z))
            selected.extend(res.selected_energies)
            _, smc_log_z = smc_run(model, beta, N, 5 * T, rng=np.random.default_rng(streams[reps + r]))
            smc_err.append(abs(smc_log_z - log_z))

        exact = exact_energy_distribution(model, beta)
        tv = total_variation(selected_energy_histogram(selected, exact.bin_edges), exact.bin_masses)

        print(f"beta = {beta:g}")
        print(f"  exact log Z        : {log_z:.4f}")
        print(f"  LFIS  |error|      : mean {np.mean(lfis_err):.2e}   var {np.var(lfis_err, ddof=1):.2e}")
        print(f"  SMC   |error|      : mean {np.mean(smc_err):.2e}   var {np.var(smc_err, ddof=1):.2e}")
        print(f"  TV(selected, exact): {tv:.4f}")
        print("-" * 60)


if __name__ == "__main__":
    main()
