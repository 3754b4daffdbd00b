"""Compare the cheap repairs with maximum likelihood across purity.

Walks the two-qubit Werner line from the maximally mixed state to the Bell
state.  Eigenvalue clipping keeps up with maximum likelihood on nearly pure
states.  Projecting onto the top eigenvector is only sensible when the state
really is pure.

    python demos/02_where_cheap_estimators_fail.py [trials]
"""
import sys

import numpy as np

from qstomo import (
    fidelity,
    forced_purity,
    linear_entropy,
    linear_reconstruct,
    make_physical,
    mle_estimate,
    quick_and_dirty,
    rng_stream,
    simulate_counts,
    werner_state,
)

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 5
print(f"{'eps':>5} {'S_lin':>6} {'QD':>7} {'FP':>7} {'MLE':>7}")
stream = 0
for eps in np.linspace(0, 1, 6):
    scores = {"qd": [], "fp": [], "mle": []}
    for _ in range(trials):
        rng = rng_stream(7, stream)
        stream += 1
        truth = make_physical(werner_state(2, eps), 0.05, rng)
        record = simulate_counts(truth, 1e4, rng)
        lin = linear_reconstruct(record)
        scores["qd"].append(fidelity(quick_and_dirty(lin), truth))
        scores["fp"].append(fidelity(forced_purity(lin), truth))
        scores["mle"].append(fidelity(mle_estimate(record)[0], truth))
    s_lin = linear_entropy(werner_state(2, eps))
    print(f"{eps:5.2f} {s_lin:6.3f} " + " ".join(f"{np.mean(v):7.4f}" for v in scores.values()))
