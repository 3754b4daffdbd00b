"""Write a counts file, then reconstruct it through the command-line driver.

This is the path for laboratory data: any file in the counts format can be
passed to ``qstomo --command tomo --counts <file>``.

    python demos/04_counts_file_round_trip.py [output_dir]
"""
import json
import sys
from pathlib import Path

from qstomo import ghz_state, make_physical, rng_stream, simulate_counts
from qstomo.cli import main
from qstomo.reconstruction import save_counts
from qstomo.states import save_density

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(parents=True, exist_ok=True)

rng = rng_stream(11, 0)
truth = make_physical(ghz_state(3), 0.05, rng)
save_counts(out / "lab_counts.txt", simulate_counts(truth, 1e4, rng))
save_density(out / "lab_truth.txt", truth)
print((out / "lab_counts.txt").read_text().splitlines()[:4], "...")

code = main(["--command", "tomo", "--counts", str(out / "lab_counts.txt"),
             "--truth", str(out / "lab_truth.txt"), "--out", str(out / "tomo")])
print("exit code", code)
report = json.loads((out / "tomo" / "report.json").read_text())
for name, entry in report["estimators"].items():
    # The raw linear estimate usually has negative eigenvalues; fidelity is
    # undefined for it and the report says so through its status.
    score = "n/a" if entry["fidelity"] is None else f"{entry['fidelity']:.4f}"
    print(f"{name:>7}: fidelity {score} ({entry['status']}), {entry['time_ms']:.1f} ms")
