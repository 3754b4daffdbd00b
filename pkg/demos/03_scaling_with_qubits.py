"""How cost and accuracy move as qubits are added.

Linear inversion never builds the 4**n x 4**n count-to-coefficient matrix,
so its working storage tracks 4**n.  Maximum likelihood iterates over every
projector on each step, and it is the only estimator whose runtime matters.

    python demos/03_scaling_with_qubits.py [max_qubits]
"""
import sys
import time

from qstomo import (
    fidelity,
    forced_purity,
    ghz_state,
    linear_reconstruct,
    make_physical,
    mle_estimate,
    quick_and_dirty,
    rng_stream,
    simulate_counts,
)
from qstomo.reconstruction import peak_auxiliary_bytes

max_n = int(sys.argv[1]) if len(sys.argv) > 1 else 4
print(f"{'n':>2} {'lin bytes':>10} {'16^n x 8':>12} {'QD ms':>7} {'MLE ms':>9} {'iters':>6} {'F_QD':>7} {'F_FP':>7} {'F_MLE':>7}")
for n in range(2, max_n + 1):
    rng = rng_stream(3, n)
    truth = make_physical(ghz_state(n), 0.05, rng)
    record = simulate_counts(truth, 1e6, rng)

    linear_reconstruct(record)
    peak, lin = peak_auxiliary_bytes(linear_reconstruct, record)

    tic = time.perf_counter()
    qd = quick_and_dirty(linear_reconstruct(record))
    qd_ms = 1e3 * (time.perf_counter() - tic)
    fp = forced_purity(lin)

    tic = time.perf_counter()
    mle, report = mle_estimate(record)
    mle_ms = 1e3 * (time.perf_counter() - tic)

    print(f"{n:2d} {peak:10d} {8 * 16**n:12d} {qd_ms:7.2f} {mle_ms:9.1f} {report.iterations:6d} "
          f"{fidelity(qd, truth):7.4f} {fidelity(fp, truth):7.4f} {fidelity(mle, truth):7.4f}")
